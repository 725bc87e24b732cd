from typing import Optional, Sequence


class DidError(ValueError):
    """
    Base class for every failure raised by the estimation stack.
    `code` is stable and ends up in status files and CLI messages.
    """
    code: str = "did_error"

    def __init__(self, message: str, *, code: Optional[str] = None):
        super().__init__(message)
        if code:
            self.code = code


class PanelValidationError(DidError):
    code = "panel_invalid"

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(DidError):
    code = "config_invalid"


class DesignError(DidError):
    code = "design_invalid"


class CollinearityError(DesignError):
    code = "collinear_design"

    def __init__(self, columns: Sequence[str], message: Optional[str] = None):
        self.columns = list(columns)
        super().__init__(message or f"rank-deficient design; collinear columns: {', '.join(self.columns)}")


class NoResidualVariationError(DidError):
    code = "no_residual_variation"


class EstimationError(DidError):
    code = "estimation_failed"


class SeparationError(EstimationError):
    code = "separation"


class OverlapError(EstimationError):
    code = "overlap_violation"


class EmptyStratumError(EstimationError):
    code = "empty_stratum"


class DegenerateCovariateError(DidError):
    code = "degenerate_covariate"


class BootstrapError(DidError):
    code = "bootstrap_unstable"


class ReportError(DidError):
    code = "report_invalid"


class DgpError(DidError):
    code = "dgp_invalid"


class DecompositionError(DidError):
    code = "decomposition_mismatch"
