"""
Exception types raised by the reconstruction pipeline.

Every error derives from ValueError so callers that only care about
"bad input" can keep catching that.
"""

from typing import Optional


class MPFError(ValueError):
    """Base class for all pipeline errors."""


class PointCloudParseError(MPFError):
    """A record in a point file could not be parsed."""

    def __init__(self, path: str, line: int, detail: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}: parse error at line {line}: {detail}")


class EmptyInputError(MPFError):
    """An input file or point set holds no usable records."""


class UnsupportedFormatError(MPFError):
    """A file extension or format name is not one of the supported ones."""


class MeshReadError(MPFError):
    """A mesh file could not be read."""


class DegenerateExtentError(MPFError):
    """All points coincide, so no scale can be derived."""


class DegenerateNeighborhoodError(MPFError):
    """A PCA neighborhood is collinear or coincident."""


class SamplerStarvationError(MPFError):
    """A rejection sampler accepted too few proposals."""

    def __init__(self, sampler: str, accepted: int, proposed: int):
        self.sampler = sampler
        self.accepted = accepted
        self.proposed = proposed
        rate = accepted / max(proposed, 1)
        super().__init__(
            f"{sampler} sampler starved: {accepted}/{proposed} proposals "
            f"accepted ({rate:.3%})"
        )


class NonFiniteLossError(MPFError):
    """A loss term evaluated to NaN or Inf."""

    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        super().__init__(f"loss term '{term}' is not finite ({value})")


class NonFiniteGradientError(MPFError):
    """A parameter gradient contains NaN or Inf."""

    def __init__(self, term: str, parameter: Optional[str] = None):
        self.term = term
        self.parameter = parameter
        where = f" in parameter '{parameter}'" if parameter else ""
        super().__init__(
            f"non-finite gradient from loss term '{term}'{where}"
        )


class MissingNormalsError(MPFError):
    """The normal-alignment loss is active but no normals were supplied."""


class ShapeMismatchError(MPFError):
    """Two parameter collections do not line up."""


class CheckpointError(MPFError):
    """A checkpoint file is unreadable, truncated or incompatible."""


class ConfigError(MPFError):
    """A configuration file or override is invalid."""


class TrainingAbortedError(MPFError):
    """Training stopped on a non-finite loss or gradient."""

    def __init__(self, iteration: int, cause: MPFError,
                 last_checkpoint: Optional[str] = None):
        self.iteration = iteration
        self.cause = cause
        self.last_checkpoint = last_checkpoint
        kept = last_checkpoint or "none written"
        super().__init__(
            f"training aborted at iteration {iteration}: {cause} "
            f"(last checkpoint: {kept})"
        )
