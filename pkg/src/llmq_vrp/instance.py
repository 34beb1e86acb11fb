"""Problem instances: TSPLIB/Augerat parsing, time-window and path-break
augmentation, and a canonical text serialization.

Node 0 is always the depot. Travel time equals travel cost equals the
Euclidean distance between node coordinates.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import (
    DepotDemandNonzero,
    DuplicateNodeId,
    InfeasibleAugmentation,
    MalformedLine,
    MissingSection,
    ParseError,
    SchemaVersionMismatch,
)

# Upper bound of an open time window. Serialized as the token "open".
WINDOW_OPEN = math.inf
OPEN_TOKEN = "open"

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float
    demand: int = 0
    window: tuple[float, float] = (0.0, WINDOW_OPEN)


@dataclass(frozen=True)
class EdgeSpec:
    source: int
    target: int
    cost: float
    travel_time: float
    break_time: float | None = None  # None: never breaks

    @property
    def passable(self) -> bool:
        return self.break_time != 0.0


@dataclass(frozen=True)
class AugmentConfig:
    window_tightness: float = 0.3
    break_fraction: float = 0.2
    seed: int = 0
    max_retries: int = 20


@dataclass(frozen=True)
class Instance:
    """Routing instance. ``breaks`` holds ``(i, j, T)`` with ``i < j``; the
    undirected edge becomes unusable for arrivals at or after time ``T``
    (``T == 0`` marks a permanently impassable edge)."""

    name: str
    nodes: tuple[Node, ...]
    capacity: int
    max_routes: int
    rng_seed: int | None = None
    breaks: tuple[tuple[int, int, float], ...] = field(default=())

    def __post_init__(self):
        if not self.nodes or self.nodes[0].id != 0:
            raise ValueError("node 0 (depot) must exist and come first")
        for k, node in enumerate(self.nodes):
            if node.id != k:
                raise ValueError(f"node ids must be contiguous, got {node.id} at {k}")
        # canonical break order keeps equality and serialization stable
        canon = tuple(sorted((min(i, j), max(i, j), float(t)) for i, j, t in self.breaks))
        object.__setattr__(self, "breaks", canon)

    # -- sizes -----------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_customers(self) -> int:
        return len(self.nodes) - 1

    @property
    def customers(self) -> range:
        return range(1, len(self.nodes))

    # -- cached arrays ---------------------------------------------------
    @cached_property
    def coords(self) -> np.ndarray:
        return np.array([(n.x, n.y) for n in self.nodes], dtype=float)

    @cached_property
    def dist(self) -> np.ndarray:
        n = self.n_nodes
        d = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i != j:
                    d[i, j] = math.hypot(self.nodes[i].x - self.nodes[j].x,
                                         self.nodes[i].y - self.nodes[j].y)
        d.setflags(write=False)
        return d

    @cached_property
    def break_times(self) -> np.ndarray:
        """Dense symmetric matrix of break times; ``inf`` where never broken."""
        b = np.full((self.n_nodes, self.n_nodes), math.inf)
        for i, j, t in self.breaks:
            b[i, j] = b[j, i] = t
        b.setflags(write=False)
        return b

    @cached_property
    def demands(self) -> np.ndarray:
        return np.array([n.demand for n in self.nodes], dtype=float)

    @cached_property
    def window_open(self) -> np.ndarray:
        return np.array([n.window[0] for n in self.nodes], dtype=float)

    @cached_property
    def window_close(self) -> np.ndarray:
        return np.array([n.window[1] for n in self.nodes], dtype=float)

    @cached_property
    def horizon(self) -> float:
        """Planning horizon: twice the nearest-neighbour giant tour length."""
        return 2.0 * nearest_neighbor_tour_length(self.dist)

    @property
    def total_demand(self) -> float:
        return float(sum(n.demand for n in self.nodes))

    @property
    def demand_feasible(self) -> bool:
        return self.total_demand <= self.max_routes * self.capacity

    def edge(self, i: int, j: int) -> EdgeSpec:
        d = float(self.dist[i, j])
        t = float(self.break_times[i, j])
        return EdgeSpec(i, j, d, d, None if math.isinf(t) else t)

    @property
    def edges(self) -> dict[tuple[int, int], EdgeSpec]:
        n = self.n_nodes
        return {(i, j): self.edge(i, j) for i in range(n) for j in range(n) if i != j}


def nearest_neighbor_tour_length(dist: np.ndarray) -> float:
    n = dist.shape[0]
    if n <= 1:
        return 0.0
    unvisited = set(range(1, n))
    pos, total = 0, 0.0
    while unvisited:
        nxt = min(unvisited, key=lambda j: (dist[pos, j], j))
        total += dist[pos, nxt]
        unvisited.remove(nxt)
        pos = nxt
    return total + dist[pos, 0]


# ---------------------------------------------------------------------------
# TSPLIB / Augerat parsing
# ---------------------------------------------------------------------------

_SECTIONS = ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION")


def parse_vrp(text: str) -> Instance:
    """Parse an Augerat-style ``.vrp`` file into an un-augmented instance.

    The declared depot becomes node 0; remaining nodes keep their file order.
    """
    header: dict[str, str] = {}
    coords: dict[int, tuple[float, float]] = {}
    demands: dict[int, int] = {}
    depots: list[int] = []
    seen_sections: set[str] = set()
    section = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        key = line.split(":")[0].strip().upper()
        if key in _SECTIONS:
            section = key
            seen_sections.add(key)
            continue
        if key == "EOF":
            section = None
            continue
        if section is None or ":" in line:
            if ":" not in line:
                raise MalformedLine(f"unexpected content {line!r}", lineno)
            k, _, v = line.partition(":")
            header[k.strip().upper()] = v.strip()
            section = None
            continue

        parts = line.split()
        if section == "DEPOT_SECTION":
            try:
                val = int(parts[0])
            except ValueError:
                raise MalformedLine(f"bad depot id {parts[0]!r}", lineno) from None
            if val == -1:
                section = None
            else:
                depots.append(val)
            continue
        try:
            if section == "NODE_COORD_SECTION":
                if len(parts) != 3:
                    raise ValueError
                nid, x, y = int(parts[0]), float(parts[1]), float(parts[2])
                if nid in coords:
                    raise DuplicateNodeId(f"node {nid} listed twice in coordinates", lineno)
                coords[nid] = (x, y)
            else:
                if len(parts) != 2:
                    raise ValueError
                nid, dem = int(parts[0]), int(parts[1])
                if nid in demands:
                    raise DuplicateNodeId(f"node {nid} listed twice in demands", lineno)
                demands[nid] = dem
        except ValueError:
            raise MalformedLine(f"cannot parse {section} entry {line!r}", lineno) from None

    for key in ("DIMENSION", "CAPACITY"):
        if key not in header:
            raise MissingSection(f"missing {key}")
    for sec in _SECTIONS:
        if sec not in seen_sections:
            raise MissingSection(f"missing {sec}")
    try:
        dim = int(header["DIMENSION"])
        capacity = int(float(header["CAPACITY"]))
    except ValueError:
        raise MalformedLine("DIMENSION/CAPACITY must be numeric") from None
    if len(coords) != dim or len(demands) != dim:
        raise MalformedLine(
            f"DIMENSION is {dim} but found {len(coords)} coordinates and {len(demands)} demands")
    if set(coords) != set(demands):
        raise MalformedLine("coordinate and demand sections list different node ids")
    if not depots:
        raise MissingSection("DEPOT_SECTION lists no depot")
    depot = depots[0]
    if depot not in coords:
        raise MalformedLine(f"depot {depot} has no coordinates")
    if demands[depot] != 0:
        raise DepotDemandNonzero(f"depot {depot} has demand {demands[depot]}")

    order = [depot] + [nid for nid in coords if nid != depot]
    nodes = tuple(Node(k, *coords[nid], demand=demands[nid]) for k, nid in enumerate(order))
    for node in nodes:
        if node.demand > capacity:
            raise MalformedLine(f"node {order[node.id]} demand exceeds capacity")

    name = header.get("NAME", "unnamed")
    total = sum(demands.values())
    return Instance(name=name, nodes=nodes, capacity=capacity,
                    max_routes=_route_count(name, header.get("COMMENT", ""), total, capacity))


def _route_count(name: str, comment: str, total: float, capacity: int) -> int:
    m = re.search(r"-k(\d+)", name)
    if m:
        return int(m.group(1))
    m = re.search(r"trucks:\s*(\d+)", comment, re.IGNORECASE)
    if m:
        return int(m.group(1))
    return max(1, math.ceil(total / capacity))


def read_vrp(path) -> Instance:
    with open(path) as fh:
        return parse_vrp(fh.read())


# ---------------------------------------------------------------------------
# Synthetic instances
# ---------------------------------------------------------------------------

def synthetic_instance(n_customers: int, seed: int, *, grid: int = 100,
                       demand_range: tuple[int, int] = (1, 10),
                       capacity: int | None = None, spare_routes: int = 1) -> Instance:
    """Uniform random Euclidean instance with integer coordinates and demands.

    Capacity defaults to roughly 40% of total demand, so a plan needs two or
    three routes; ``max_routes`` leaves ``spare_routes`` of slack.
    """
    rng = np.random.default_rng(seed)
    xy = rng.integers(0, grid + 1, size=(n_customers + 1, 2))
    dem = rng.integers(demand_range[0], demand_range[1] + 1, size=n_customers)
    if capacity is None:
        capacity = max(int(dem.max()), int(math.ceil(0.4 * dem.sum())))
    nodes = [Node(0, float(xy[0, 0]), float(xy[0, 1]), 0)]
    nodes += [Node(i, float(xy[i, 0]), float(xy[i, 1]), int(dem[i - 1]))
              for i in range(1, n_customers + 1)]
    k = math.ceil(dem.sum() / capacity) + spare_routes
    return Instance(name=f"syn-n{n_customers + 1}-s{seed}", nodes=tuple(nodes),
                    capacity=int(capacity), max_routes=int(k))


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def augment(inst: Instance, cfg: AugmentConfig = AugmentConfig()) -> Instance:
    """Attach customer time windows and edge break times.

    Windows are centred on a random visit time no earlier than the direct
    travel time from the depot, so each customer is reachable on its own
    route. Depot-incident edges never break.
    """
    if not 0.0 <= cfg.break_fraction < 1.0:
        raise ValueError("break_fraction must lie in [0, 1)")
    if cfg.window_tightness <= 0.0:
        raise ValueError("window_tightness must be positive")

    n = inst.n_nodes
    horizon = inst.horizon
    width = cfg.window_tightness * horizon
    pairs = [(i, j) for i in range(1, n) for j in range(i + 1, n)]
    n_undirected = n * (n - 1) // 2
    n_breaks = math.ceil(round(cfg.break_fraction * n_undirected, 9))
    if n_breaks > len(pairs):
        raise InfeasibleAugmentation(
            f"{n_breaks} breaks requested but only {len(pairs)} non-depot edges exist")

    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.max_retries):
        nodes = [replace(inst.nodes[0], window=(0.0, WINDOW_OPEN))]
        for node in inst.nodes[1:]:
            direct = float(inst.dist[0, node.id])
            u = float(rng.uniform(direct, max(direct, horizon)))
            nodes.append(replace(node, window=(max(0.0, u - width / 2), u + width / 2)))
        breaks = []
        if n_breaks:
            chosen = rng.choice(len(pairs), size=n_breaks, replace=False)
            for k in sorted(int(c) for c in chosen):
                i, j = pairs[k]
                breaks.append((i, j, float(rng.uniform(0.3 * horizon, 0.9 * horizon))))
        out = Instance(name=inst.name, nodes=tuple(nodes), capacity=inst.capacity,
                       max_routes=inst.max_routes, rng_seed=cfg.seed, breaks=tuple(breaks))
        if passes_screen(out):
            return out
    raise InfeasibleAugmentation(
        f"no solvable augmentation of {inst.name} after {cfg.max_retries} attempts")


def earliest_arrivals(inst: Instance, source: int = 0) -> np.ndarray:
    """Earliest arrival time at every node starting from ``source`` at t=0,
    travelling only over edges that are still intact on arrival."""
    n = inst.n_nodes
    best = np.full(n, math.inf)
    best[source] = 0.0
    done = np.zeros(n, dtype=bool)
    for _ in range(n):
        cand = np.where(done, math.inf, best)
        u = int(np.argmin(cand))
        if math.isinf(cand[u]):
            break
        done[u] = True
        for v in range(n):
            if done[v] or v == u:
                continue
            arr = best[u] + inst.dist[u, v]
            if arr < inst.break_times[u, v] and arr < best[v]:
                best[v] = arr
    return best


def passes_screen(inst: Instance) -> bool:
    """Single-customer feasibility plus time-dependent reachability."""
    reach = earliest_arrivals(inst)
    for i in inst.customers:
        direct = inst.dist[0, i]
        if direct >= inst.break_times[0, i] or direct > inst.window_close[i]:
            return False
        if reach[i] > inst.window_close[i]:
            return False
    return True


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

_TOP_KEYS = {"format_version", "name", "capacity", "max_routes", "rng_seed", "nodes", "breaks"}
_NODE_KEYS = {"id", "x", "y", "demand", "window"}


def _bound_out(v: float):
    return OPEN_TOKEN if math.isinf(v) else v


def _bound_in(v, where):
    if v == OPEN_TOKEN:
        return WINDOW_OPEN
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"window bound must be a number or {OPEN_TOKEN!r}", where)
    return float(v)


def serialize(inst: Instance) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "name": inst.name,
        "capacity": inst.capacity,
        "max_routes": inst.max_routes,
        "rng_seed": inst.rng_seed,
        "nodes": [
            {"id": n.id, "x": float(n.x), "y": float(n.y), "demand": int(n.demand),
             "window": [_bound_out(float(n.window[0])), _bound_out(float(n.window[1]))]}
            for n in inst.nodes
        ],
        "breaks": [[i, j, t] for i, j, t in inst.breaks],
    }
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def deserialize(text: str) -> Instance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno} col {exc.colno}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", "$")
    if "format_version" not in doc:
        raise ParseError("missing format_version", "$")
    if doc["format_version"] != FORMAT_VERSION:
        raise SchemaVersionMismatch(
            f"format_version {doc['format_version']!r}, expected {FORMAT_VERSION}")
    _check_keys(doc, _TOP_KEYS, "$")
    nodes = []
    for k, nd in enumerate(doc["nodes"]):
        where = f"$.nodes[{k}]"
        if not isinstance(nd, dict):
            raise ParseError("node must be an object", where)
        _check_keys(nd, _NODE_KEYS, where)
        w = nd["window"]
        if not isinstance(w, list) or len(w) != 2:
            raise ParseError("window must be a pair", where + ".window")
        try:
            nodes.append(Node(int(nd["id"]), float(nd["x"]), float(nd["y"]), int(nd["demand"]),
                              (_bound_in(w[0], where), _bound_in(w[1], where))))
        except (TypeError, ValueError):
            raise ParseError("bad node field", where) from None
    breaks = []
    for k, b in enumerate(doc["breaks"]):
        if not (isinstance(b, list) and len(b) == 3):
            raise ParseError("break must be [i, j, time]", f"$.breaks[{k}]")
        breaks.append((int(b[0]), int(b[1]), float(b[2])))
    try:
        return Instance(name=str(doc["name"]), nodes=tuple(nodes), capacity=int(doc["capacity"]),
                        max_routes=int(doc["max_routes"]), rng_seed=doc["rng_seed"],
                        breaks=tuple(breaks))
    except ValueError as exc:
        raise ParseError(str(exc), "$") from None


def _check_keys(obj: dict, expected: set, where: str):
    missing = expected - obj.keys()
    extra = obj.keys() - expected
    if missing:
        raise ParseError(f"missing field(s) {sorted(missing)}", where)
    if extra:
        raise ParseError(f"unknown field(s) {sorted(extra)}", where)


def load(path) -> Instance:
    with open(path) as fh:
        return deserialize(fh.read())


def save(inst: Instance, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(serialize(inst))


def with_breaks(inst: Instance, breaks: Iterable[tuple[int, int, float]]) -> Instance:
    return replace(inst, breaks=tuple(breaks))


def with_windows(inst: Instance, windows: dict[int, tuple[float, float]]) -> Instance:
    nodes = tuple(replace(n, window=windows.get(n.id, n.window)) for n in inst.nodes)
    return replace(inst, nodes=nodes)
