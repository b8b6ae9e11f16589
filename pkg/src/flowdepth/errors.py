"""Exception types raised across the package."""


class FlowDepthError(ValueError):
    """Base class for all recoverable input/contract errors."""


class NonProjectableError(FlowDepthError):
    """A point with z <= 0 was handed to the pinhole projection."""


class InvalidDepthError(FlowDepthError):
    """Unprojection was requested with a non-positive depth."""


class EmptyInputError(FlowDepthError):
    """An operation received no usable samples (e.g. an all-invalid depth map)."""


class IsolatedPixelError(FlowDepthError):
    """Every offset of a matching window was excluded."""


class EmptyMaskError(FlowDepthError):
    """A loss reduction had no contributing pixels."""


class EmptyOverlapError(FlowDepthError):
    """Prediction and ground truth share no jointly valid pixel."""


class SizeError(FlowDepthError):
    """A raster is too small for the requested operation."""


class InvalidModelError(FlowDepthError):
    """A residual refiner carries non-finite parameters."""


class InvalidTermError(FlowDepthError):
    """A loss term handed to the total loss is not finite."""

    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term!r} is not finite: {value!r}")
        self.term = term
        self.value = value


class DivergenceError(FlowDepthError):
    """Refiner fitting produced a non-finite loss."""

    def __init__(self, step: int, value: float):
        super().__init__(f"fit diverged at step {step} (loss={value!r})")
        self.step = step
        self.value = value


class DegenerateSceneError(FlowDepthError):
    """A synthetic scene configuration cannot produce a usable scene."""


class ShapeMismatchError(FlowDepthError):
    """Rasters that must share H x W do not."""


class FormatError(FlowDepthError):
    """A file could not be parsed or written in its declared format."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(FlowDepthError):
    """A parsed value violates a type invariant; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
