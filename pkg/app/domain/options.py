from enum import Enum


class CovariateMode(str, Enum):
    """Which functionals of the covariate history enter a nuisance model."""
    NONE = "none"                        # intercept only
    DELTA_ONLY = "delta_only"            # X_t - X_base
    BASE_LEVEL = "base_level"            # X_base
    DELTA_PLUS_BASE = "delta_plus_base"  # both of the above
    AVERAGE = "average"                  # mean over all periods
    FULL_HISTORY = "full_history"        # X at every period


class Comparison(str, Enum):
    NEVER_TREATED = "never_treated"
    NOT_YET_TREATED = "not_yet_treated"


class Method(str, Enum):
    TWFE = "twfe"
    RA = "ra"
    IPW = "ipw"
    AIPW = "aipw"
