"""Route-plan evaluation against the routing MILP, plus an exhaustive oracle.

The big-M / epsilon linearisation of the break constraints is not
materialised: an edge ``(i, j)`` is unusable for an arrival at ``j`` at or
after its break time, which is the limit semantics of the linear model.
Arriving early at a customer means waiting for its window to open.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .errors import Infeasible, NonPositiveOptimal, TooLarge, UnknownNode
from .instance import Instance

GLOBAL = "global"
PER_ROUTE = "per_route"
CLOCK_MODES = (GLOBAL, PER_ROUTE)

UNSERVED = "UnservedCustomer"
DUPLICATE = "DuplicateVisit"
CAPACITY = "CapacityExceeded"
WINDOW = "WindowMissed"
BROKEN = "BrokenEdgeUsed"
IMPASSABLE = "ImpassableEdgeUsed"
ROUTE_LIMIT = "RouteLimitExceeded"


@dataclass(frozen=True)
class CostWeights:
    """Objective weights: ``distance * total_length + dispatch * n_routes``."""
    distance: float = 1.0
    dispatch: float = 0.0


DISTANCE_ONLY = CostWeights()
GENERALIZED = CostWeights(distance=4.5, dispatch=65.0)


@dataclass(frozen=True)
class RoutePlan:
    routes: tuple[tuple[int, ...], ...] = ()

    @classmethod
    def of(cls, routes: Iterable[Sequence[int]]) -> "RoutePlan":
        return cls(tuple(tuple(int(c) for c in r) for r in routes))

    @classmethod
    def from_sequence(cls, seq: Iterable[int]) -> "RoutePlan":
        """Split a node sequence on depot visits, e.g. ``[1, 2, 0, 3]``."""
        routes, cur = [], []
        for v in seq:
            if v == 0:
                if cur:
                    routes.append(cur)
                cur = []
            else:
                cur.append(v)
        if cur:
            routes.append(cur)
        return cls.of(routes)

    @property
    def nonempty(self) -> tuple[tuple[int, ...], ...]:
        return tuple(r for r in self.routes if r)

    def encoding(self) -> tuple[tuple[int, ...], ...]:
        return self.nonempty

    def to_list(self) -> list[list[int]]:
        return [list(r) for r in self.routes]


@dataclass(frozen=True)
class Violation:
    kind: str
    route: int | None
    where: int | tuple[int, int] | None
    value: float | None = None
    bound: float | None = None


@dataclass
class Verdict:
    feasible: bool
    cost: float
    distance: float
    n_routes: int
    violations: list[Violation] = field(default_factory=list)
    arrivals: list[list[float]] = field(default_factory=list)

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def to_dict(self) -> dict:
        d = asdict(self)
        for v in d["violations"]:
            if isinstance(v["where"], tuple):
                v["where"] = list(v["where"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def evaluate(inst: Instance, plan: RoutePlan, clock_mode: str = GLOBAL,
             weights: CostWeights = DISTANCE_ONLY) -> Verdict:
    """Judge ``plan`` against every constraint of the model.

    Infeasibility is reported through ``Verdict.violations``; the only
    error raised is :class:`UnknownNode`.
    """
    if clock_mode not in CLOCK_MODES:
        raise ValueError(f"clock_mode must be one of {CLOCK_MODES}")
    n = inst.n_nodes
    for r in plan.routes:
        for c in r:
            if not 1 <= c < n:
                raise UnknownNode(f"node {c} is not a customer of {inst.name}")

    dist, brk = inst.dist, inst.break_times
    lo, hi, dem = inst.window_open, inst.window_close, inst.demands
    violations: list[Violation] = []
    arrivals: list[list[float]] = []
    seen: set[int] = set()
    total = 0.0
    n_routes = 0
    clock = 0.0

    for k, route in enumerate(plan.routes):
        if not route:
            arrivals.append([])
            continue
        n_routes += 1
        if clock_mode == PER_ROUTE:
            clock = 0.0
        load = 0.0
        prev = 0
        times = []
        for node in (*route, 0):
            arr = clock + dist[prev, node]
            total += dist[prev, node]
            if brk[prev, node] == 0.0:
                violations.append(Violation(IMPASSABLE, k, (prev, node), arr, 0.0))
            elif arr >= brk[prev, node]:
                violations.append(Violation(BROKEN, k, (prev, node), arr, float(brk[prev, node])))
            if node == 0:
                clock = arr
                continue
            if node in seen:
                violations.append(Violation(DUPLICATE, k, node))
            seen.add(node)
            load += dem[node]
            if arr > hi[node]:
                violations.append(Violation(WINDOW, k, node, arr, float(hi[node])))
            clock = max(arr, lo[node])
            times.append(clock)
            prev = node
        if load > inst.capacity:
            violations.append(Violation(CAPACITY, k, None, load, float(inst.capacity)))
        arrivals.append(times)

    if n_routes > inst.max_routes:
        violations.append(Violation(ROUTE_LIMIT, None, None, n_routes, inst.max_routes))
    for c in inst.customers:
        if c not in seen:
            violations.append(Violation(UNSERVED, None, c))

    cost = weights.distance * total + weights.dispatch * n_routes
    return Verdict(not violations, cost, total, n_routes, violations, arrivals)


@dataclass(frozen=True)
class Solution:
    best_plan: RoutePlan
    best_cost: float


def _key(cost: float, plan: tuple) -> tuple:
    return (round(cost, 9), plan)


def exact_solve(inst: Instance, limit: int = 8, clock_mode: str = GLOBAL,
                weights: CostWeights = DISTANCE_ONLY) -> Solution:
    """Minimum-cost feasible plan by exhaustive enumeration.

    Every ordered partition of the customers into at most ``max_routes``
    routes is generated depth-first. A partial plan is abandoned as soon as it
    has a violation, since violations never disappear as the plan grows; each
    complete plan is confirmed with :func:`evaluate`. Ties go to the
    lexicographically smallest route encoding.
    """
    n_cust = inst.n_customers
    if n_cust > limit:
        raise TooLarge(n_cust, limit)
    dist, brk = inst.dist, inst.break_times
    lo, hi, dem = inst.window_open, inst.window_close, inst.demands
    cap, kmax = inst.capacity, inst.max_routes
    per_route = clock_mode == PER_ROUTE

    best: list = [None, None]  # (key, routes)

    def close(routes, clock, length):
        # return leg of the last route
        last = routes[-1][-1]
        arr = clock + dist[last, 0]
        if arr >= brk[last, 0]:
            return None
        return arr, length + dist[last, 0]

    def consider(routes, length):
        cost = weights.distance * length + weights.dispatch * len(routes)
        enc = tuple(tuple(r) for r in routes)
        key = _key(cost, enc)
        if best[0] is None or key < best[0]:
            best[0], best[1] = key, enc

    def extend(routes, pending, clock, load, length):
        pos = routes[-1][-1] if routes[-1] else 0
        if not pending:
            closed = close(routes, clock, length)
            if closed is not None:
                consider(routes, closed[1])
            return
        for c in sorted(pending):
            if load + dem[c] > cap:
                continue
            arr = clock + dist[pos, c]
            if arr >= brk[pos, c] or arr > hi[c]:
                continue
            routes[-1].append(c)
            pending.remove(c)
            extend(routes, pending, max(arr, lo[c]), load + dem[c], length + dist[pos, c])
            pending.add(c)
            routes[-1].pop()
        # end this route and open another
        if routes[-1] and len(routes) < kmax:
            closed = close(routes, clock, length)
            if closed is None:
                return
            arr, new_len = closed
            routes.append([])
            extend(routes, pending, 0.0 if per_route else arr, 0.0, new_len)
            routes.pop()

    if n_cust == 0:
        return Solution(RoutePlan(), 0.0)
    extend([[]], set(inst.customers), 0.0, 0.0, 0.0)
    if best[1] is None:
        raise Infeasible(f"no feasible plan for {inst.name}")
    plan = RoutePlan(best[1])
    verdict = evaluate(inst, plan, clock_mode, weights)
    if not verdict.feasible:  # pragma: no cover - guards pruning logic
        raise AssertionError(f"oracle produced infeasible plan: {verdict.violations}")
    return Solution(plan, verdict.cost)


def gap(plan_cost: float, optimal_cost: float) -> float:
    """Relative excess over the optimum, in percent."""
    if not optimal_cost > 0:
        raise NonPositiveOptimal(f"optimal cost must be positive, got {optimal_cost}")
    return 100.0 * (plan_cost - optimal_cost) / optimal_cost


def plan_cost(inst: Instance, plan: RoutePlan, weights: CostWeights = GENERALIZED) -> float:
    return evaluate(inst, plan, GLOBAL, weights).cost
