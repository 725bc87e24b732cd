from enum import Enum


class RunState(str, Enum):
    """
    Canonical lifecycle of an estimation or balance run.
    """
    PENDING = "PENDING"           # Created, request persisted
    VALIDATING = "VALIDATING"     # Loading and validating the panel
    ESTIMATING = "ESTIMATING"     # Fitting estimators / implicit weights
    DIAGNOSING = "DIAGNOSING"     # Balance reports and plots
    READY = "READY"               # All artifacts written
    FAILED = "FAILED"             # Terminal failure


TERMINAL_STATES: set[RunState] = {RunState.READY, RunState.FAILED}

_ALLOWED: dict[RunState, set[RunState]] = {
    RunState.PENDING: {RunState.VALIDATING, RunState.FAILED},
    RunState.VALIDATING: {RunState.ESTIMATING, RunState.FAILED},
    RunState.ESTIMATING: {RunState.DIAGNOSING, RunState.FAILED},
    RunState.DIAGNOSING: {RunState.READY, RunState.FAILED},
    RunState.READY: set(),
    RunState.FAILED: set(),
}


def is_terminal(state: RunState) -> bool:
    """True if the state is a terminal state."""
    return state in TERMINAL_STATES


def can_transition(src: RunState, dst: RunState) -> bool:
    """Validate if a state transition is allowed."""
    return dst in _ALLOWED.get(src, set())
