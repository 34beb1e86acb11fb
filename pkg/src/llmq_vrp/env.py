"""Routing MDP: masked action space, deterministic transitions, shaped reward.

The environment is a set of pure functions over immutable :class:`EnvState`
values, so any number of episodes can run side by side.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import IllegalAction, IncompleteEpisode
from .instance import Instance
from .milp import CostWeights, RoutePlan

DEPOT = 0


@dataclass(frozen=True)
class RewardParams:
    distance: float = 4.5      # per unit travelled
    dispatch: float = 65.0     # per departure from the depot
    penalty: float = 500.0     # per window miss / broken edge / failed episode
    visit_bonus: float = 2.0
    progress_bonus: float = 1.0
    utilization_bonus: float = 3.0
    shaping: bool = True
    mask_breaks: bool = True

    @property
    def weights(self) -> CostWeights:
        return CostWeights(self.distance, self.dispatch)


DEFAULT_PARAMS = RewardParams()


@dataclass(frozen=True)
class EnvState:
    position: int
    remaining: float
    pending: tuple[bool, ...]  # pending[i - 1] for customer i
    clock: float = 0.0
    routes_used: int = 1

    def is_pending(self, customer: int) -> bool:
        return customer > 0 and self.pending[customer - 1]

    @property
    def pending_ids(self) -> list[int]:
        return [i + 1 for i, p in enumerate(self.pending) if p]

    @property
    def n_pending(self) -> int:
        return sum(self.pending)


@dataclass(frozen=True)
class StepInfo:
    distance: float
    dispatched: bool
    window_violation: bool = False
    broken_edge: bool = False
    terminal_failure: bool = False
    shaping: dict = field(default_factory=dict)

    @property
    def psi(self) -> int:
        return int(self.window_violation) + int(self.broken_edge) + int(self.terminal_failure)

    @property
    def shaping_total(self) -> float:
        return sum(self.shaping.values())

    @property
    def violated(self) -> bool:
        return self.psi > 0


@dataclass(frozen=True)
class StepOutcome:
    state: EnvState
    action: int
    next: EnvState
    reward: float
    done: bool
    info: StepInfo

    def to_record(self) -> dict:
        return {
            "from": self.state.position, "action": self.action, "reward": self.reward,
            "done": self.done, "clock": self.next.clock, "remaining": self.next.remaining,
            "routes_used": self.next.routes_used,
            "info": asdict(self.info) | {"psi": self.info.psi},
        }


def reset(inst: Instance) -> EnvState:
    return EnvState(position=DEPOT, remaining=float(inst.capacity),
                    pending=(True,) * inst.n_customers, clock=0.0, routes_used=1)


def action_space(s: EnvState, inst: Instance, mask_breaks: bool = True) -> list[int]:
    """Feasible next nodes, in increasing id order.

    Away from the depot: pending customers whose demand fits, plus the depot.
    At the depot: every pending customer. With ``mask_breaks``, nodes whose
    connecting edge is already broken at the earliest arrival are dropped.
    """
    p = s.position
    if p == DEPOT:
        acts = s.pending_ids
    else:
        acts = [i for i in s.pending_ids if inst.demands[i] <= s.remaining] + [DEPOT]
    if mask_breaks:
        row_d, row_b = inst.dist[p], inst.break_times[p]
        acts = [a for a in acts if s.clock + row_d[a] < row_b[a]]
    return sorted(acts)


def step(s: EnvState, a: int, inst: Instance, params: RewardParams = DEFAULT_PARAMS) -> StepOutcome:
    if a not in action_space(s, inst, params.mask_breaks):
        raise IllegalAction(f"action {a} not permitted from node {s.position}")
    p = s.position
    d = float(inst.dist[p, a])
    arr = s.clock + d
    brk = inst.break_times[p, a]
    broken = bool(arr >= brk)
    dispatched = p == DEPOT
    shaping: dict[str, float] = {}
    pending = s.pending
    window_violation = False

    if a == DEPOT:
        used = inst.capacity - s.remaining
        shaping["utilization"] = params.utilization_bonus * used / inst.capacity
        nxt = EnvState(DEPOT, float(inst.capacity), pending, arr, s.routes_used + 1)
    else:
        window_violation = bool(arr > inst.window_close[a])
        pending = pending[:a - 1] + (False,) + pending[a:]
        shaping["first_visit"] = params.visit_bonus
        shaping["progress"] = params.progress_bonus * inst.demands[a] / inst.total_demand
        nxt = EnvState(a, s.remaining - float(inst.demands[a]), pending,
                       max(arr, float(inst.window_open[a])), s.routes_used)

    done = False
    failure = False
    if not any(pending) and nxt.position == DEPOT:
        done = True
    elif nxt.routes_used > inst.max_routes:
        done = failure = True
    elif not action_space(nxt, inst, params.mask_breaks):
        done = failure = True  # deadlock

    if not params.shaping:
        shaping = {}
    info = StepInfo(d, dispatched, window_violation, broken, failure, shaping)
    reward = (-params.distance * d - params.dispatch * dispatched
              - params.penalty * info.psi + info.shaping_total)
    return StepOutcome(s, a, nxt, reward, done, info)


def run_actions(inst: Instance, actions, params: RewardParams = DEFAULT_PARAMS) -> list[StepOutcome]:
    """Step through ``actions`` from a fresh reset; stops early when done."""
    s = reset(inst)
    trace = []
    for a in actions:
        out = step(s, a, inst, params)
        trace.append(out)
        s = out.next
        if out.done:
            break
    return trace


def rollout_cost(trace: list[StepOutcome], params: RewardParams = DEFAULT_PARAMS) -> float:
    """Generalized cost of a finished episode (distance and dispatch terms)."""
    if not trace:
        return 0.0
    if not trace[-1].done:
        raise IncompleteEpisode("episode has not terminated")
    dist = sum(o.info.distance for o in trace)
    dispatches = sum(o.info.dispatched for o in trace)
    return params.distance * dist + params.dispatch * dispatches


def trace_to_plan(trace: list[StepOutcome]) -> RoutePlan:
    return RoutePlan.from_sequence(o.action for o in trace)


def trace_to_text(trace: list[StepOutcome]) -> str:
    """One JSON record per step."""
    return "".join(json.dumps(o.to_record(), sort_keys=True) + "\n" for o in trace)


def visited_sequence(trace: list[StepOutcome]) -> list[int]:
    return [o.action for o in trace]
