"""Tree-structured distillation-train environment.

Each episode starts from the feed. The stream at the front of a deque of
unconnected streams is either separated by a new column (whose impure
products join the back of the deque) or declined (it leaves the process).
The episode ends when the deque empties or ``max_columns`` columns exist.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .column import ColumnSpec, solve_column
from .economics import (
    EconomicParams,
    ProductPricing,
    SizingError,
    UtilityError,
    column_tac,
    is_product,
    stream_revenue,
    step_reward,
)
from .flowsheet import COLUMN, NEGLIGIBLE, OPEN, OUTLET, PRODUCT, Flowsheet, Node
from .thermo import ATM, AntoineTable, Component, Stream, ThermoError

ACTION_SIZE = 4
NEGLIGIBLE_FRACTION = 1e-6


class UsageError(RuntimeError):
    """Environment driven outside its protocol (e.g. stepping a finished episode)."""


class Terminal(enum.Enum):
    PRODUCT = PRODUCT
    OUTLET = OUTLET
    NEGLIGIBLE = NEGLIGIBLE


@dataclass(frozen=True)
class ActionBounds:
    pressure_min: float = 0.3 * ATM
    pressure_max: float = 40.0 * ATM
    stages_min: int = 5
    stages_max: int = 60
    ratio_min: float = 0.1
    ratio_max: float = 20.0

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.pressure_min < self.pressure_max:
            out.append("action_bounds.pressure_min/pressure_max")
        if not 3 <= self.stages_min < self.stages_max:
            out.append("action_bounds.stages_min/stages_max")
        if not 0 < self.ratio_min < self.ratio_max:
            out.append("action_bounds.ratio_min/ratio_max")
        return out


@dataclass(frozen=True)
class ProblemSpec:
    components: tuple
    feed: Stream
    pricing: ProductPricing
    economics: EconomicParams = field(default_factory=EconomicParams)
    action_bounds: ActionBounds = field(default_factory=ActionBounds)
    max_columns: int = 12
    fail_penalty: float = 0.1
    reward_scale: float = 1e7
    name: str = "problem"

    def __post_init__(self):
        bad = []
        n = len(self.components)
        if n < 2 or not all(isinstance(c, Component) for c in self.components):
            bad.append("components")
        if len(self.feed.flows) != n:
            bad.append("feed.flows")
        elif not self.feed.total > 0:
            bad.append("feed.flows")
        if len(self.pricing.prices) != n:
            bad.append("pricing.prices")
        bad += self.action_bounds.problems()
        if int(self.max_columns) != self.max_columns or self.max_columns < 1:
            bad.append("env.max_columns")
        if not self.fail_penalty >= 0:
            bad.append("env.fail_penalty")
        if not self.reward_scale > 0:
            bad.append("env.reward_scale")
        if bad:
            raise ValueError(f"invalid problem: {', '.join(bad)}")

    @property
    def component_names(self) -> tuple:
        return tuple(c.name for c in self.components)

    @property
    def observation_size(self) -> int:
        return len(self.components) + 2


@dataclass
class StepOutcome:
    reward: float
    tops: np.ndarray | Terminal
    bottoms: np.ndarray | Terminal
    episode_done: bool
    failure: bool = False
    info: dict = field(default_factory=dict)


def encode_state(stream: Stream, problem: ProblemSpec) -> np.ndarray:
    feed = problem.feed
    return np.concatenate(
        [
            stream.flows / feed.total,
            [(stream.temperature - feed.temperature) / 100.0, math.log(stream.pressure / feed.pressure)],
        ]
    )


def decode_action(action, bounds: ActionBounds | None = None) -> ColumnSpec:
    """Map a point of [-1, 1]^4 to a column specification (log scale for pressure and ratios)."""
    b = bounds or ActionBounds()
    a = np.clip(np.asarray(action, dtype=float).reshape(-1), -1.0, 1.0)
    if a.size != ACTION_SIZE:
        raise ValueError(f"action must have {ACTION_SIZE} entries")
    frac = (a + 1.0) / 2.0

    def log_map(lo, hi, f):
        if f >= 1.0:
            return float(hi)
        if f <= 0.0:
            return float(lo)
        return float(lo * (hi / lo) ** f)

    stages = int(math.floor(b.stages_min + frac[1] * (b.stages_max - b.stages_min) + 0.5))
    return ColumnSpec(
        pressure=log_map(b.pressure_min, b.pressure_max, frac[0]),
        n_stages=stages,
        reflux_ratio=log_map(b.ratio_min, b.ratio_max, frac[2]),
        boilup_ratio=log_map(b.ratio_min, b.ratio_max, frac[3]),
    )


class DistillationEnv:
    """One problem instance; ``reset`` starts a new episode."""

    action_size = ACTION_SIZE

    def __init__(self, problem: ProblemSpec):
        self.problem = problem
        self.table = AntoineTable(problem.components)
        self._molar_masses = self.table.molar_mass
        self.flowsheet: Flowsheet | None = None
        self._open: deque[Node] = deque()
        self._next_id = 0
        self.columns_placed = 0
        self.failures = 0
        self.done = True
        self.seed = None

    @property
    def observation_size(self) -> int:
        return self.problem.observation_size

    @property
    def value_weights(self) -> np.ndarray:
        """Per observation flow entry, the largest scaled revenue it could ever earn.

        Every mole ends up sold at most at the highest product price, so the
        return reachable from a stream is bounded by ``obs[:C] @ value_weights``.
        """
        p = self.problem
        per_mol = self._molar_masses * 3600.0 * p.economics.annual_hours / 1000.0 * max(p.pricing.prices)
        return p.feed.total * per_mol / p.reward_scale

    def reset(self, seed=None) -> np.ndarray:
        # the transition is deterministic; the seed is only recorded
        self.seed = seed
        self._next_id = 0
        root = self._new_node(self.problem.feed)
        self.flowsheet = Flowsheet(self.problem.component_names, root, self.problem.pricing.purity_spec)
        self._open = deque([root])
        self.columns_placed = 0
        self.failures = 0
        self.done = False
        return self.observation()

    def _new_node(self, stream: Stream, label: str = OPEN) -> Node:
        node = Node(self._next_id, stream, label)
        self._next_id += 1
        return node

    def observation(self) -> np.ndarray:
        if self.done or not self._open:
            raise UsageError("no open stream: episode is finished")
        return encode_state(self._open[0].stream, self.problem)

    @property
    def open_streams(self) -> list[Stream]:
        return [n.stream for n in self._open]

    def _check_active(self):
        if self.flowsheet is None:
            raise UsageError("call reset() before stepping")
        if self.done:
            raise UsageError("episode is finished; call reset()")

    def _finish_if_done(self) -> bool:
        if self.columns_placed >= self.problem.max_columns:
            while self._open:
                self._open.popleft().label = OUTLET
        if not self._open:
            self.done = True
            self.flowsheet.finished = True
        return self.done

    def step_decline(self) -> StepOutcome:
        self._check_active()
        node = self._open.popleft()
        node.label = OUTLET
        done = self._finish_if_done()
        return StepOutcome(0.0, Terminal.OUTLET, Terminal.OUTLET, done, info={"decision": "decline"})

    def _fail(self, node: Node, message: str, spec: ColumnSpec) -> StepOutcome:
        node.label = OUTLET
        node.failure = message
        node.reward = -self.problem.fail_penalty
        self.failures += 1
        done = self._finish_if_done()
        info = {"decision": "separate", "spec": spec, "message": message}
        return StepOutcome(node.reward, Terminal.OUTLET, Terminal.OUTLET, done, failure=True, info=info)

    def step_separate(self, action) -> StepOutcome:
        self._check_active()
        node = self._open.popleft()
        spec = decode_action(action, self.problem.action_bounds)
        problem = self.problem
        result = solve_column(self.table, node.stream, spec)
        if not result.converged:
            return self._fail(node, result.message, spec)
        try:
            tac = column_tac(self.table, result, spec, problem.economics)
        except (SizingError, UtilityError, ThermoError) as exc:
            return self._fail(node, str(exc), spec)
        if not math.isfinite(tac):
            return self._fail(node, "non-finite cost", spec)

        self.columns_placed += 1
        node.label = COLUMN
        node.spec = spec
        threshold = NEGLIGIBLE_FRACTION * problem.feed.total
        branches = []
        revenues = []
        children = []
        for stream in (result.distillate, result.bottoms):
            child = self._new_node(stream)
            children.append(child)
            if stream.total < threshold:
                child.label = NEGLIGIBLE
                revenues.append(0.0)
                branches.append(Terminal.NEGLIGIBLE)
            elif is_product(stream, problem.pricing):
                child.label = PRODUCT
                child.revenue = stream_revenue(stream, problem.pricing, problem.economics, self._molar_masses)
                revenues.append(child.revenue)
                branches.append(Terminal.PRODUCT)
            else:
                revenues.append(0.0)
                self._open.append(child)
                branches.append(encode_state(stream, problem))
        node.tops, node.bottoms = children
        node.reward = step_reward(tac, revenues[0], revenues[1], problem.reward_scale)
        node.summary = {
            "column_index": self.columns_placed,
            "tac": tac,
            "revenue": revenues[0] + revenues[1],
            "condenser_duty": result.condenser_duty,
            "reboiler_duty": result.reboiler_duty,
            "t_condenser": result.condenser_temperature,
            "t_reboiler": result.reboiler_temperature,
            "iterations": result.iterations,
        }
        done = self._finish_if_done()
        if self.columns_placed >= problem.max_columns:
            # streams left open at the column limit were turned into outlets
            branches = [b if isinstance(b, Terminal) else Terminal.OUTLET for b in branches]
        info = {"decision": "separate", "spec": spec, "tac": tac, "revenue": revenues[0] + revenues[1]}
        return StepOutcome(node.reward, branches[0], branches[1], done, info=info)
