"""Dense float64 tensors with reverse-mode differentiation and Adam.

Every op returns a new :class:`Tensor`. When any input requires a gradient
the result keeps references to its inputs plus a closure that maps the
output gradient to input gradients; :func:`backward` walks that record in
reverse topological order and then discards it.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import MissingGrad, NonFiniteValue, NotScalarLoss, ShapeMismatch

CHECKPOINT_MAGIC = "graphalign-params/1"


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"tensor {name or ''} holds NaN or Inf".replace("  ", " "))
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __float__(self):
        if self.data.size != 1:
            raise ShapeMismatch(f"cannot convert tensor of shape {self.shape} to float")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents, backward):
    """Wrap an op result, recording ``backward`` only if a parent needs grads."""
    out = Tensor.__new__(Tensor)
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue("operation produced NaN or Inf")
    out.data = value
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    return _result(
        a.data / b.data, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape),
                   _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
    )


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def pairwise_dot(a, b):
    """``out[i, j] = <a[i], b[j]>``; exactly equals ``pairwise_dot(b, a).T``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"pairwise_dot: {a.shape} vs {b.shape}")
    value = (a.data[:, None, :] * b.data[None, :, :]).sum(axis=-1)
    return _result(value, (a, b), lambda g: (g @ b.data, g.T @ a.data))


def transpose(a):
    a = as_tensor(a)
    return _result(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape {a.shape} -> {shape}") from None
    return _result(value, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat along {axis}: {[t.shape for t in ts]}") from None
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(value, tuple(ts), lambda g: tuple(np.split(g, cuts, axis=axis)))


def concat_rows(a, b):
    """Join two ``n x a`` and ``n x b`` blocks row by row into ``n x (a+b)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"concat_rows: {a.shape} and {b.shape}")
    return concat([a, b], axis=1)


def take_rows(a, index):
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(a.data[index], (a,), back)


def pad_cols(a, width):
    """Zero-pad a 2-D tensor on the right to ``width`` columns."""
    a = as_tensor(a)
    extra = width - a.shape[-1]
    if extra < 0:
        raise ShapeMismatch(f"cannot pad {a.shape[-1]} columns down to {width}")
    if extra == 0:
        return a
    value = np.concatenate([a.data, np.zeros(a.shape[:-1] + (extra,))], axis=-1)
    return _result(value, (a,), lambda g: (g[..., : a.shape[-1]],))


def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_tensor(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def row_mean(a):
    """Average of the rows of a matrix (a vector with one entry per column)."""
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ShapeMismatch(f"row_mean needs a non-empty matrix, got {a.shape}")
    return mean(a, axis=0)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        value = np.exp(a.data)
    return _result(value, (a,), lambda g: (g * value,))


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(a.data)
    return _result(value, (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        value = np.sqrt(a.data)
    return _result(value, (a,), lambda g: (g * 0.5 / value,))


def clamp_min(a, floor):
    a = as_tensor(a)
    mask = a.data >= floor
    return _result(np.maximum(a.data, floor), (a,), lambda g: (g * mask,))


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    value = shifted - lse
    probs = np.exp(value)
    return _result(value, (a,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis=-1):
    """Softmax with max-subtraction; outputs are strictly positive."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)
    return _result(value, (a,),
                   lambda g: (value * (g - (g * value).sum(axis=axis, keepdims=True)),))


def l2_normalize(a, axis=-1, eps=1e-12):
    """Rows scaled to unit length; ``eps`` keeps zero rows finite."""
    a = as_tensor(a)
    norm = sqrt(add(sum(mul(a, a), axis=axis, keepdims=True), eps))
    return div(a, norm)


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor needing it."""
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    for node in order:
        node._parents = ()
        node._backward = None


def xavier_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ParamStore:
    """Named trainable tensors with Adam moment buffers."""

    def __init__(self):
        self.params = {}
        self.m = {}
        self.v = {}
        self.t = 0

    def add(self, name, value):
        if name in self.params:
            raise ValueError(f"parameter {name!r} already exists")
        self.params[name] = Tensor(value, requires_grad=True, name=name)
        return self.params[name]

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def snapshot(self):
        return {k: p.data.copy() for k, p in self.params.items()}


def adam_step(store: ParamStore, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over every parameter in ``store``."""
    missing = [k for k, p in store.params.items() if p.grad is None]
    if missing:
        raise MissingGrad(f"parameter {missing[0]!r} has no gradient")
    store.t += 1
    c1 = 1.0 - beta1 ** store.t
    c2 = 1.0 - beta2 ** store.t
    for name, p in store.params.items():
        g = p.grad
        m = store.m.get(name)
        v = store.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        store.m[name], store.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


def save_params(path, store: ParamStore, meta=None):
    """JSON header line, then each parameter as little-endian float64."""
    names = list(store.params)
    header = {
        "format": CHECKPOINT_MAGIC,
        "names": names,
        "shapes": [list(store.params[n].shape) for n in names],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(store.params[n].data, dtype="<f8").tobytes())


def load_params(path):
    raw = Path(path).read_bytes()
    line, _, payload = raw.partition(b"\n")
    header = json.loads(line)
    if header.get("format") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a parameter checkpoint")
    store = ParamStore()
    offset = 0
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        chunk = payload[offset: offset + 8 * count]
        if len(chunk) != 8 * count:
            raise ShapeMismatch(f"checkpoint truncated at parameter {name!r}")
        store.add(name, np.frombuffer(chunk, dtype="<f8").reshape(shape))
        offset += 8 * count
    if offset != len(payload):
        raise ShapeMismatch("checkpoint has trailing bytes")
    return store, header["meta"]
