"""Exception hierarchy shared by every subpackage."""


class GazeRefineError(Exception):
    """Base class for all library errors."""


class DegenerateInputError(GazeRefineError, ValueError):
    """Input lies on a singularity of the operation (e.g. undefined yaw)."""


class DomainError(GazeRefineError, ValueError):
    """Input outside the mathematical domain (e.g. zero-norm vector)."""


class EmptyBatchError(GazeRefineError, ValueError):
    """A masked reduction had no valid entries."""


class NoIntersectionError(GazeRefineError):
    """Gaze ray is parallel to the screen plane."""


class BehindScreenError(GazeRefineError):
    """Gaze ray meets the screen plane behind its origin."""


class ShapeError(GazeRefineError, ValueError):
    """Operands have incompatible shapes."""

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class ContractViolation(GazeRefineError, ValueError):
    """Precondition of an operation was not met."""


class TrainingDivergenceError(GazeRefineError, RuntimeError):
    """Loss or gradient became non-finite during optimisation."""


class FormatError(GazeRefineError, ValueError):
    """A binary or text file does not follow its documented layout."""


class ConfigError(GazeRefineError, ValueError):
    """Configuration is malformed or contains unknown keys."""
