from typing import Optional


class PalletProjError(Exception):
    """
    Base error of the pipeline.

    Every error carries a stable ``code``, the process ``exit_code`` the CLI
    maps it to, a human readable ``detail`` and, once a localization stage has
    seen it, the ``stage`` it came from.
    """

    code = "error"
    exit_code = 1

    def __init__(self, detail: str, stage: Optional[str] = None):
        super().__init__(detail)
        self.detail = detail
        self.stage = stage

    def with_stage(self, stage: str) -> "PalletProjError":
        if self.stage is None:
            self.stage = stage
        return self

    def __str__(self) -> str:
        if self.stage:
            return f"[{self.stage}] {self.detail}"
        return self.detail


class InvalidArgumentError(PalletProjError, ValueError):
    code = "invalid_argument"
    exit_code = 4


class ConfigParseError(PalletProjError):
    code = "parse_error"
    exit_code = 4


class DegenerateGeometryError(PalletProjError):
    code = "degenerate_geometry"
    exit_code = 2


class SameHeightError(DegenerateGeometryError):
    """Pallet and camera at approximately the same height; no usable horizontal plane."""

    code = "same_height"


class BoundaryError(PalletProjError):
    code = "no_boundary"
    exit_code = 3


class NoLineError(BoundaryError):
    code = "no_line"


class LowContrastError(BoundaryError):
    code = "low_contrast"


class NoPalletEvidenceError(PalletProjError):
    code = "no_pallet_evidence"
    exit_code = 5


class NoPalletAtDepthError(NoPalletEvidenceError):
    code = "no_pallet_at_depth"
