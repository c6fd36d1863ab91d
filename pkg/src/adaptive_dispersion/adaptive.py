"""Online choice of which graph in a family to plan with.

The adaptive index counts from the finest graph: index 0 is the lowest
dispersion and ``family_size - 1`` the highest, so "index + 1" means coarser.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .graph_gen import GraphFamily
from .search import GoalSpec, Outcome, PlanResult, plan


@dataclass(frozen=True)
class AdaptiveConfig:
    budget: float = 0.15  # seconds of wall time per plan
    margin_fraction: float = 0.5
    consecutive_successes: int = 3
    window: int = 4
    max_expansions: int | None = None  # virtual-time budget; overrides ``budget`` when set

    def __post_init__(self):
        if not 0 < self.margin_fraction < 1:
            raise ValueError("margin_fraction must be in (0, 1)")
        if self.consecutive_successes < 1:
            raise ValueError("consecutive_successes must be >= 1")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if not self.budget >= 0:
            raise ValueError("budget must be >= 0")
        if self.max_expansions is not None and self.max_expansions < 0:
            raise ValueError("max_expansions must be >= 0")


@dataclass
class AdaptiveState:
    index: int
    history: deque = field(default_factory=deque)  # (Outcome, budget fraction used)
    success_count: int = 0

    @classmethod
    def initial(cls, family_size: int, config: AdaptiveConfig) -> "AdaptiveState":
        """Start at the coarsest graph."""
        if family_size < 1:
            raise ValueError("family must be nonempty")
        return cls(family_size - 1, deque(maxlen=config.window))

    def copy(self) -> "AdaptiveState":
        return AdaptiveState(self.index, deque(self.history, maxlen=self.history.maxlen), self.success_count)

    def outcomes(self) -> list:
        return [o for o, _ in self.history]


def graph_for_index(family: GraphFamily, index: int):
    """Family graphs are stored coarse to fine."""
    return family.graphs[len(family.graphs) - 1 - index]


def _qualifies(result: PlanResult, config: AdaptiveConfig) -> bool:
    """Success with a large margin left in the budget."""
    return result.success and result.budget_used < config.margin_fraction


def next_index(state: AdaptiveState, outcome: PlanResult, family_size: int, config: AdaptiveConfig) -> AdaptiveState:
    """Apply one replan outcome; returns a new state (the input is untouched)."""
    new = state.copy()
    if new.history.maxlen != config.window:
        new.history = deque(new.history, maxlen=config.window)
    new.history.append((outcome.outcome, outcome.budget_used))
    top = family_size - 1
    if outcome.outcome is Outcome.TIMEOUT:
        new.index = min(state.index + 1, top)
        new.success_count = 0
    elif outcome.outcome is Outcome.EXHAUSTED:
        new.index = max(state.index - 1, 0)
        new.success_count = 0
    elif _qualifies(outcome, config):
        new.success_count = state.success_count + 1
        if new.success_count >= config.consecutive_successes:
            new.index = max(state.index - 1, 0)
            new.success_count = 0
    else:
        new.success_count = 0
    new.index = min(max(new.index, 0), top)
    return new


def detect_infeasible(history, window: int) -> bool:
    """Timeouts and exhaustions both present in the recent window with no success."""
    recent = [h[0] if isinstance(h, tuple) else h for h in list(history)[-window:]]
    recent = [Outcome(o) for o in recent]
    return (
        Outcome.TIMEOUT in recent
        and Outcome.EXHAUSTED in recent
        and Outcome.SUCCESS not in recent
    )


def adaptive_plan(family: GraphFamily, grid, start, goal: GoalSpec, config: AdaptiveConfig,
                  state: AdaptiveState, **plan_kw):
    """One planning attempt with the current graph; returns (result, new state, infeasible flag)."""
    if len(family.graphs) == 0:
        raise ValueError("family must be nonempty")
    graph = graph_for_index(family, state.index)
    budget = math.inf if config.max_expansions is not None else config.budget
    result = plan(graph, grid, start, goal, budget, max_expansions=config.max_expansions, **plan_kw)
    new = next_index(state, result, len(family.graphs), config)
    return result, new, detect_infeasible(new.history, config.window)
