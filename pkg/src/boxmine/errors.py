"""Exception hierarchy shared by every boxmine module."""


class BoxMineError(Exception):
    """Base class for all boxmine errors."""


class InvalidInputError(BoxMineError, ValueError):
    """Input violates a documented precondition (shape, finiteness, range)."""


class ConfigurationError(BoxMineError, ValueError):
    """A configuration value is out of its admissible range."""


class UndefinedIoUError(BoxMineError, ValueError):
    """IoU requested for two empty sets or a zero-volume union."""


class DegenerateSubsetError(BoxMineError, ValueError):
    """A point subset cannot support the requested computation."""


class DegenerateGraphError(BoxMineError, ValueError):
    """An affinity graph has no nonzero weights."""


class DivergenceError(BoxMineError, RuntimeError):
    """Energy blew up during minimization; the partial report is attached."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class GenerationError(BoxMineError, ValueError):
    """A synthetic scene recipe cannot be realized."""


class EvaluationError(BoxMineError, ValueError):
    """Evaluation is impossible with the given ground truth."""


class SceneParseError(BoxMineError, ValueError):
    """Base class for scene/annotation file parse failures."""


class BadMagicError(SceneParseError):
    """File does not start with the expected magic/version record."""


class TruncatedPayloadError(SceneParseError):
    """Binary payload is shorter (or longer) than the header promises."""


class IndexRangeError(SceneParseError):
    """An annotation references a point index outside [0, N)."""
