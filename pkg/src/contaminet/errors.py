"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class ValidationError(ValueError):
    """Input violates a value-level contract (e.g. non-binary targets)."""


class GraphError(RuntimeError):
    """Autodiff graph misuse (e.g. backward on a non-scalar)."""


class ContractError(ValueError):
    """An argument is outside an operation's stated domain (e.g. step index)."""


class OracleError(RuntimeError):
    """A numeric check could not be evaluated (e.g. non-finite loss)."""


class ManifestError(ValueError):
    """Malformed manifest or rater file; message carries the line number."""


class EmptyVocabularyError(ValueError):
    """Label thresholding removed every label."""


class ImageDecodeError(RuntimeError):
    """An image file could not be read or decoded."""


class ConfigError(ValueError):
    """Invalid run/model/schedule configuration."""


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, corrupt, or from an incompatible version."""


class OptimError(RuntimeError):
    """Optimizer step rejected (e.g. non-finite gradient)."""


class TrainAbort(RuntimeError):
    """Training stopped early (e.g. NaN loss with the guard enabled)."""


class UndefinedAUCError(ValueError):
    """AUC is undefined because the truth vector contains a single class."""


class ProtocolError(RuntimeError):
    """Evaluation protocol cannot proceed (e.g. bootstrap too degenerate)."""


class AlignmentError(ValueError):
    """Score/rater/manifest rows do not line up on image paths."""
