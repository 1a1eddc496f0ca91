"""
Exception hierarchy shared by every VGCE module.

Library code raises these; the CLI turns them into a one-line diagnostic.
"""

from typing import Optional


class VGCEError(Exception):
    """Base class for all VGCE errors"""
    pass


# Dataset errors

class DatasetError(VGCEError):
    """Problem with a dataset directory or an in-memory dataset"""
    pass


class MissingFileError(DatasetError):
    pass


class FormatError(DatasetError):
    """Bad magic bytes, unsupported version or undecodable JSON"""
    pass


class ShapeMismatchError(DatasetError):
    """A stored matrix does not have the shape its context requires"""

    def __init__(self, filename: str, message: str):
        self.filename = filename
        super().__init__(f"{filename}: {message}")


class SplitViolationError(DatasetError):
    pass


class DanglingReferenceError(DatasetError):
    pass


class VocabularyError(DatasetError):
    pass


class SyntheticSpecError(VGCEError):
    """Synthetic generator parameters that cannot be satisfied"""
    pass


# Numerics errors

class ShapeError(VGCEError):
    """Operand shapes incompatible for a differentiable op"""
    pass


class NonFiniteError(VGCEError):
    """An op produced NaN or Inf"""

    def __init__(self, op: str, detail: Optional[str] = None):
        self.op = op
        message = f"non-finite output from op '{op}'"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class NotScalarError(VGCEError):
    pass


# Training / model errors

class NonFiniteLossError(VGCEError):
    """Training aborted because a loss component stopped being finite"""

    def __init__(self, component: str, epoch: int, batch: int):
        self.component = component
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"loss component '{component}' is non-finite at epoch {epoch}, batch {batch}")


class CheckpointError(VGCEError):
    pass


class ConfigError(VGCEError):
    pass


class EvaluationError(VGCEError):
    pass
