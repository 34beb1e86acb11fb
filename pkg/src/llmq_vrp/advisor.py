"""Candidate trajectories from a language-model backend, with three-layer
self-correction (syntax, semantics, physical feasibility) and a memory pool of
good past trajectories.

A trajectory is the list of nodes to visit next, starting after the current
position; ``0`` is a depot return.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace

from . import env as E
from .env import EnvState, RewardParams
from .errors import BackendUnavailable
from .instance import Instance

log = logging.getLogger(__name__)

N_CANDIDATES = 3
POOL_TOP_K = 3

SYNTAX = "syntax"
SEMANTIC = "semantic"
PHYSICAL = "physical"


class FilterError(Exception):
    layer = ""

    def __init__(self, message: str, kind: str = "", leg: int | None = None):
        super().__init__(message)
        self.kind = kind
        self.leg = leg


class TrajectorySyntaxError(FilterError):
    layer = SYNTAX


class SemanticError(FilterError):
    layer = SEMANTIC


class PhysicalError(FilterError):
    layer = PHYSICAL


# ---------------------------------------------------------------------------
# memory pool
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoolEntry:
    trajectory: tuple[int, ...]
    ret: float
    errors: tuple[str, ...] = ()
    order: int = 0


class MemoryPool:
    """Best ``capacity`` episode trajectories by return (ties: earlier first)."""

    def __init__(self, capacity: int = 10):
        self.capacity = capacity
        self.entries: list[PoolEntry] = []
        self._counter = 0

    def __len__(self):
        return len(self.entries)

    def update(self, trajectory, ret: float, errors=()) -> "MemoryPool":
        traj = tuple(int(v) for v in trajectory)
        if not traj:
            return self
        for k, e in enumerate(self.entries):
            if e.trajectory == traj:
                if ret > e.ret:
                    self.entries[k] = PoolEntry(traj, float(ret), tuple(errors), e.order)
                    self._sort()
                return self
        self.entries.append(PoolEntry(traj, float(ret), tuple(errors), self._counter))
        self._counter += 1
        self._sort()
        del self.entries[self.capacity:]
        return self

    def _sort(self):
        self.entries.sort(key=lambda e: (-e.ret, e.order))

    def top(self, k: int = POOL_TOP_K) -> list[PoolEntry]:
        return self.entries[:k]

    @property
    def returns(self) -> list[float]:
        return [e.ret for e in self.entries]


def pool_update(pool: MemoryPool, trajectory, ret: float, errors=()) -> MemoryPool:
    return pool.update(trajectory, ret, errors)


# ---------------------------------------------------------------------------
# prompt
# ---------------------------------------------------------------------------

def _num(v: float) -> str:
    v = float(v)
    if v == float("inf"):
        return "open"
    return repr(int(v)) if v.is_integer() else repr(v)


def relevant_breaks(s: EnvState, inst: Instance) -> list[tuple[int, int, float]]:
    live = set(s.pending_ids) | {s.position, 0}
    return [(i, j, t) for i, j, t in inst.breaks if i in live and j in live]


def build_prompt(s: EnvState, inst: Instance, pool: MemoryPool | None = None,
                 last_errors=(), params: RewardParams = E.DEFAULT_PARAMS,
                 n_candidates: int = N_CANDIDATES) -> str:
    lines = [
        "You are an expert solver for the capacitated vehicle routing problem with "
        "time windows and breakable roads.",
        f"Goal: minimise generalized cost = {_num(params.distance)} * distance + "
        f"{_num(params.dispatch)} * (number of departures from the depot), while serving "
        "every pending customer inside its time window, never exceeding the vehicle "
        "capacity, and never driving on a broken road.",
        "Travel time equals Euclidean distance. Arriving before a window opens means "
        "waiting; arriving after it closes is a violation.",
        "",
        "## Instance",
        f"capacity: {_num(inst.capacity)}",
        f"max_routes: {inst.max_routes}",
        "nodes (id x y demand window_open window_close):",
    ]
    for n in inst.nodes:
        lines.append(f"{n.id} {_num(n.x)} {_num(n.y)} {n.demand} "
                     f"{_num(n.window[0])} {_num(n.window[1])}")
    lines += [
        "",
        "## Current state",
        f"position: {s.position}",
        f"remaining_capacity: {_num(s.remaining)}",
        f"clock: {_num(s.clock)}",
        f"routes_used: {s.routes_used}",
        "pending: " + " ".join(str(i) for i in s.pending_ids),
    ]
    brk = relevant_breaks(s, inst)
    if brk:
        lines += ["", "## Broken roads (i j unusable_from_time)"]
        lines += [f"{i} {j} {_num(t)}" for i, j, t in brk]
    if pool is not None and len(pool):
        lines += ["", "## Memory pool (best previous trajectories from the depot)"]
        for e in pool.top():
            lines.append(f"return {_num(round(e.ret, 3))}: {list(e.trajectory)}")
    if last_errors:
        lines += ["", "## Errors in your previous answers (fix them)"]
        lines += [f"- {msg}" for msg in last_errors]
    lines += [
        "",
        "## Output format",
        "Think step by step about capacity, time windows and broken roads, then "
        f"output exactly {n_candidates} candidate trajectories in list format: a "
        "bracketed list of node-id lists such as [[3,1,0,2],[1,3,0,2],[2,0,1,3]]. "
        "Each trajectory lists the nodes to visit next, starting after the current "
        "position; use 0 to return to the depot.",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------

_LIST_OF_LISTS = re.compile(r"\[\s*\[[^\[\]]*\](?:\s*,\s*\[[^\[\]]*\])*\s*\]")
_INT = re.compile(r"-?\d+")


def parse_reply(raw: str) -> list[list[int]]:
    """Extract the first bracketed list of integer lists from ``raw``."""
    m = _LIST_OF_LISTS.search(raw or "")
    if m is None:
        raise TrajectorySyntaxError(
            "Syntax error: no bracketed list of node-id lists found; answer with "
            "a list such as [[1,2,0,3],[2,1,0,3],[3,0,1,2]].", "NoList")
    out = []
    for inner in re.findall(r"\[([^\[\]]*)\]", m.group(0)[1:-1]):
        body = inner.strip()
        traj = []
        if body:
            for tok in body.split(","):
                tok = tok.strip()
                if not _INT.fullmatch(tok):
                    raise TrajectorySyntaxError(
                        f"Syntax error: token {tok!r} is not an integer node id.", "BadToken")
                traj.append(int(tok))
        out.append(traj)
    return out


def semantic_check(traj, s: EnvState, inst: Instance) -> None:
    """Reject hallucinations: unknown ids, repeats, served customers, empties."""
    if not traj:
        raise SemanticError("Semantic error: empty trajectory.", "Empty")
    seen = set()
    for k, v in enumerate(traj):
        if not 0 <= v < inst.n_nodes:
            raise SemanticError(f"Semantic error: node {v} does not exist "
                                f"(valid ids are 0..{inst.n_nodes - 1}).", "UnknownNode", k)
        if v == 0:
            continue
        if not s.is_pending(v):
            raise SemanticError(f"Semantic error: customer {v} is already served.",
                                "AlreadyServed", k)
        if v in seen:
            raise SemanticError(f"Semantic error: customer {v} is visited twice.",
                                "DuplicateVisit", k)
        seen.add(v)


def physical_check(traj, s: EnvState, inst: Instance,
                   params: RewardParams = E.DEFAULT_PARAMS) -> None:
    """Simulate ``traj`` from ``s`` with the environment's own rules and
    report the first leg that breaks capacity, a window, a road or the
    route limit."""
    sim = replace(params, mask_breaks=False)
    cur = s
    for k, v in enumerate(traj):
        leg = f"leg {k + 1} ({cur.position}->{v})"
        legal = E.action_space(cur, inst, mask_breaks=False)
        if v not in legal:
            if v != 0 and cur.is_pending(v) and inst.demands[v] > cur.remaining:
                raise PhysicalError(
                    f"Physical error: CapacityExceeded at {leg}: demand "
                    f"{_num(inst.demands[v])} exceeds remaining capacity "
                    f"{_num(cur.remaining)}; return to depot 0 first.", "CapacityExceeded", k)
            raise PhysicalError(f"Physical error: InvalidLeg at {leg}: the vehicle "
                                "cannot make this move.", "InvalidLeg", k)
        out = E.step(cur, v, inst, sim)
        info = out.info
        if info.broken_edge:
            kind = "ImpassableEdgeUsed" if inst.break_times[cur.position, v] == 0 else "BrokenEdgeUsed"
            raise PhysicalError(
                f"Physical error: {kind} at {leg}: road {cur.position}-{v} is unusable from "
                f"t={_num(inst.break_times[cur.position, v])} but arrival is "
                f"t={_num(cur.clock + inst.dist[cur.position, v])} (path reachability).", kind, k)
        if info.window_violation:
            raise PhysicalError(
                f"Physical error: WindowMissed at {leg}: arrival "
                f"t={_num(cur.clock + inst.dist[cur.position, v])} is after customer {v}'s "
                f"window closes at {_num(inst.window_close[v])}.", "WindowMissed", k)
        if info.terminal_failure:
            kind = "RouteLimitExceeded" if out.next.routes_used > inst.max_routes else "Deadlock"
            raise PhysicalError(f"Physical error: {kind} at {leg}: customers would be "
                                "left unserved.", kind, k)
        cur = out.next
        if out.done and k + 1 < len(traj):
            raise PhysicalError(f"Physical error: InvalidLeg at leg {k + 2}: every customer is "
                                "served and the vehicle is home; nothing may follow.", "InvalidLeg", k + 1)


# ---------------------------------------------------------------------------
# advise
# ---------------------------------------------------------------------------

@dataclass
class CandidateVerdict:
    trajectory: list[int] | None
    layer: str | None          # failing layer, None if accepted
    message: str = ""
    round: int = 0
    layers_run: tuple[str, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.layer is None


@dataclass
class CandidateSet:
    raw_replies: list[str] = field(default_factory=list)
    verdicts: list[CandidateVerdict] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    prompts: list[str] = field(default_factory=list)
    rounds: int = 0

    @property
    def parsed(self) -> list[list[int]]:
        return [v.trajectory for v in self.verdicts if v.trajectory is not None]

    @property
    def accepted(self) -> list[list[int]]:
        return [v.trajectory for v in self.verdicts if v.accepted]

    @property
    def action_set(self) -> set[int]:
        return {t[0] for t in self.accepted}

    @property
    def accept_rate(self) -> float:
        n = len(self.verdicts)
        return len(self.accepted) / n if n else 0.0


def filter_candidates(raw: str, s: EnvState, inst: Instance, params=E.DEFAULT_PARAMS,
                      round_no: int = 0) -> list[CandidateVerdict]:
    try:
        trajs = parse_reply(raw)
    except TrajectorySyntaxError as exc:
        return [CandidateVerdict(None, SYNTAX, str(exc), round_no, (SYNTAX,))]
    verdicts = []
    for traj in trajs[:N_CANDIDATES]:
        run = [SYNTAX, SEMANTIC]
        try:
            semantic_check(traj, s, inst)
            run.append(PHYSICAL)
            physical_check(traj, s, inst, params)
        except FilterError as exc:
            verdicts.append(CandidateVerdict(traj, exc.layer, str(exc), round_no, tuple(run)))
            continue
        verdicts.append(CandidateVerdict(traj, None, "", round_no, tuple(run)))
    return verdicts


def advise(s: EnvState, inst: Instance, backend, pool: MemoryPool | None = None,
           max_rounds: int = 3, params: RewardParams = E.DEFAULT_PARAMS,
           last_errors=()) -> CandidateSet:
    """Query ``backend`` until some candidate survives all filters or
    ``max_rounds`` is spent. Each round's prompt carries every error so far.

    Raises :class:`BackendUnavailable` if the backend cannot be reached.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    cs = CandidateSet(errors=list(last_errors))
    for r in range(max_rounds):
        prompt = build_prompt(s, inst, pool, cs.errors, params)
        cs.prompts.append(prompt)
        raw = backend.complete(prompt)
        cs.raw_replies.append(raw)
        cs.rounds = r + 1
        verdicts = filter_candidates(raw, s, inst, params, r)
        cs.verdicts.extend(verdicts)
        if any(v.accepted for v in verdicts):
            break
        for v in verdicts:
            prefix = f"{v.trajectory}: " if v.trajectory is not None else ""
            msg = prefix + v.message
            if msg not in cs.errors:
                cs.errors.append(msg)
    return cs


def safe_advise(*args, **kwargs) -> CandidateSet | None:
    """:func:`advise`, but a backend outage is logged and returns ``None``."""
    try:
        return advise(*args, **kwargs)
    except BackendUnavailable as exc:
        log.warning("advisor unavailable, continuing without guidance: %s", exc)
        return None
