"""Exception types shared across the package."""


class SgdetectError(Exception):
    """Base class for all package errors."""


class InvalidLevelError(SgdetectError):
    """Refinement level outside the admissible range (h >= 1)."""


class EmptyGridError(SgdetectError):
    """Multi-index rule admits no multi-index at the requested level."""


class DegenerateGraphError(SgdetectError):
    """Grid graph has no edges or an isolated/unreachable node."""


class DetectorError(SgdetectError):
    """Detector misuse: wrong grid size, unsupported cut family, bad parameter."""


class DimensionMismatchError(SgdetectError):
    """Objects built for different space dimensions were combined."""


class DegenerateDatasetError(SgdetectError):
    """Dataset balancing or splitting cannot proceed (e.g. no labeled samples)."""


class TrainingDivergedError(SgdetectError):
    """Training loss became non-finite; carries a diagnostic state dump."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EngineError(SgdetectError):
    """Detection-engine configuration or state error."""


class ConfigError(SgdetectError):
    """Bad run configuration (CLI / config file)."""
