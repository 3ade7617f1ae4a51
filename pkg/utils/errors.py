# File: utils/errors.py

"""Exception hierarchy shared by the library and the CLI.

Every error raised on purpose by this package derives from ``FmbrdfError`` so
callers can catch one type. The CLI maps subclasses onto exit codes (see
``app.EXIT_CODES``).
"""

from typing import Optional


class FmbrdfError(ValueError):
    """Base class for all deliberate failures in this package."""


class GeometryError(FmbrdfError):
    """Degenerate or below-horizon direction configurations."""


class FresnelDomainError(FmbrdfError):
    """Incidence angle outside [0, pi/2] beyond the snapping tolerance."""


class PolarizationError(FmbrdfError):
    """Unrealizable or zero-radiance Stokes vectors."""


class MicrofacetError(FmbrdfError):
    """Invalid microgeometry parameters or grazing Smith masking."""


class QuadratureError(FmbrdfError):
    """Non-finite integrand values or invalid rule resolutions."""


class ParameterError(FmbrdfError):
    """Model parameters that violate their documented ranges."""


class EvaluationError(FmbrdfError):
    """A model evaluation produced no usable value."""

    def __init__(self, message: str, pixel: Optional[int] = None):
        if pixel is not None:
            message = f"{message} (pixel {pixel})"
        super().__init__(message)
        self.pixel = pixel


class SurrogateDomainError(FmbrdfError):
    """Surrogate inputs fall outside the trained domain box."""


class SurrogateFormatError(FmbrdfError):
    """Corrupted, truncated or unknown surrogate model files."""


class TrainingDivergedError(FmbrdfError):
    """Surrogate training produced a non-finite loss."""


class ConfigError(FmbrdfError):
    """Invalid run configuration or mismatched input files."""


class PfmFormatError(FmbrdfError):
    """Malformed portable float map files."""
