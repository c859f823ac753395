"""Exception hierarchy shared by every stage of the pipeline."""


class GraphAlignError(Exception):
    """Base class; ``code`` is the machine-readable name used by the CLI."""

    @property
    def code(self):
        return type(self).__name__


# graph store
class MalformedRow(GraphAlignError, ValueError):
    pass


class DanglingEdge(GraphAlignError, ValueError):
    pass


class DuplicateNodeId(GraphAlignError, ValueError):
    pass


class UnknownNode(GraphAlignError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# embeddings
class DimensionMismatch(GraphAlignError, ValueError):
    pass


class MissingVector(GraphAlignError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NonFiniteValue(GraphAlignError, FloatingPointError):
    pass


class ProviderUnavailable(GraphAlignError, ConnectionError):
    pass


class FixtureMiss(GraphAlignError, LookupError):
    pass


class RateLimited(GraphAlignError):
    pass


# retrieval
class EmptyItemSet(GraphAlignError, ValueError):
    pass


class RankOverflow(GraphAlignError, ValueError):
    pass


class GraphTooLargeForExact(GraphAlignError, ValueError):
    pass


class EmptyGraph(GraphAlignError, ValueError):
    pass


# gateway
class MissingSlot(GraphAlignError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownTemplate(GraphAlignError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ParseFailure(GraphAlignError, ValueError):
    pass


class NoGroundedAnchors(GraphAlignError, ValueError):
    pass


class JudgeUnparseable(GraphAlignError, ValueError):
    pass


# numeric core
class ShapeMismatch(GraphAlignError, ValueError):
    pass


class NotScalarLoss(GraphAlignError, ValueError):
    pass


class MissingGrad(GraphAlignError, RuntimeError):
    pass


# aligner / refine
class LengthMismatch(GraphAlignError, ValueError):
    pass


class BatchMismatch(GraphAlignError, ValueError):
    pass


class NonPositiveTemperature(GraphAlignError, ValueError):
    pass


class EmptyDataset(GraphAlignError, ValueError):
    pass


class ScoreLengthMismatch(GraphAlignError, ValueError):
    pass


# evaluation / cli
class EmptyGold(GraphAlignError, ValueError):
    pass


class CheckpointMismatch(GraphAlignError, ValueError):
    pass


class ConfigInvalid(GraphAlignError, ValueError):
    pass


class MissingArtifact(GraphAlignError, FileNotFoundError):
    pass

DimMismatch = DimensionMismatch


class OutputLocked(GraphAlignError, RuntimeError):
    pass
