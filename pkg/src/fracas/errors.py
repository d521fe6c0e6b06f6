"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class NumericError(ValueError):
    """Invalid numeric input (NaN logits, near-zero quaternion norm, ...)."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class CheckpointFormatError(ValueError):
    """Checkpoint file is malformed or has an unsupported version."""


class DatasetFormatError(ValueError):
    """Dataset manifest or part file is malformed; names file and field."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; carries the step and loss breakdown."""
