"""Lifecycle states shared by NS instances and slice instances."""
import logging
from enum import Enum

from slicekit.errors import InvalidState

logger = logging.getLogger(__name__)


class LifecycleState(str, Enum):
    ONBOARDED = "Onboarded"
    INSTANTIATING = "Instantiating"
    DAY0_DONE = "Day0Done"
    DAY1_CONFIGURED = "Day1Configured"
    RUNNING = "Running"
    TERMINATING = "Terminating"
    TERMINATED = "Terminated"
    FAILED = "Failed"


HAPPY_PATH = (
    LifecycleState.ONBOARDED,
    LifecycleState.INSTANTIATING,
    LifecycleState.DAY0_DONE,
    LifecycleState.DAY1_CONFIGURED,
    LifecycleState.RUNNING,
    LifecycleState.TERMINATING,
    LifecycleState.TERMINATED,
)

TERMINAL_STATES = frozenset({LifecycleState.TERMINATED, LifecycleState.FAILED})

# Slices may be torn down before reaching Running.
EARLY_TERMINATION = frozenset({LifecycleState.DAY0_DONE, LifecycleState.DAY1_CONFIGURED})


def _build_transitions() -> dict[LifecycleState, frozenset[LifecycleState]]:
    transitions = {}
    for current, following in zip(HAPPY_PATH, HAPPY_PATH[1:]):
        transitions[current] = frozenset({following, LifecycleState.FAILED})
    for state in EARLY_TERMINATION:
        transitions[state] = transitions[state] | {LifecycleState.TERMINATING}
    for state in TERMINAL_STATES:
        transitions[state] = frozenset()
    return transitions


VALID_TRANSITIONS: dict[LifecycleState, frozenset[LifecycleState]] = _build_transitions()


def is_valid_transition(current: LifecycleState, target: LifecycleState) -> bool:
    return target in VALID_TRANSITIONS.get(current, frozenset())


def check_transition(current: LifecycleState, target: LifecycleState, what: str = "") -> None:
    if not is_valid_transition(current, target):
        raise InvalidState(f"{what + ': ' if what else ''}{current.value} -> {target.value} not allowed")
