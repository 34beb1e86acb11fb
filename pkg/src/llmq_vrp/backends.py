"""Advisor backends: an OpenAI-compatible chat-completions client and a
deterministic heuristic stand-in that reads the prompt like a model would."""
from __future__ import annotations

import hashlib
import json
import math
import os
import re
import time
from dataclasses import dataclass
from typing import Protocol

import httpx
import numpy as np

from .errors import BackendUnavailable

ENV_BASE_URL = "LLMQ_API_BASE"
ENV_API_KEY = "LLMQ_API_KEY"
DEFAULT_BASE_URL = "https://api.openai.com/v1"

FAULT_MODES = (None, "syntax", "hallucinate", "infeasible")


class AdvisorBackend(Protocol):
    def complete(self, prompt: str) -> str: ...


def _append_log(path, record: dict) -> None:
    if path is None:
        return
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


class ChatCompletionsBackend:
    """POSTs prompts to ``{base_url}/chat/completions``.

    Base URL and token default to the ``LLMQ_API_BASE`` / ``LLMQ_API_KEY``
    environment variables. Transport errors, timeouts, 429 and 5xx responses
    are retried; once retries run out :class:`BackendUnavailable` is raised.
    """

    def __init__(self, model: str, base_url: str | None = None, api_key: str | None = None,
                 temperature: float = 0.7, max_tokens: int = 512, timeout: float = 60.0,
                 retries: int = 2, backoff: float = 1.0, log_path=None,
                 client: httpx.Client | None = None, sleep=time.sleep):
        self.model = model
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL) or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.retries = retries
        self.backoff = backoff
        self.log_path = log_path
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict:
        h = {"Content-Type": "application/json"}
        if self.api_key:
            h["Authorization"] = f"Bearer {self.api_key}"
        return h

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        url = f"{self.base_url}/chat/completions"
        last_err = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(url, headers=self._headers(), json=payload)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_err = f"HTTP {resp.status_code}"
                else:
                    resp.raise_for_status()
                    reply = resp.json()["choices"][0]["message"]["content"]
                    _append_log(self.log_path, {"model": self.model, "prompt": prompt,
                                                "reply": reply, "attempt": attempt})
                    return reply
            except httpx.HTTPStatusError as exc:
                last_err = f"HTTP {exc.response.status_code}"
                break  # 4xx other than 429 will not improve on retry
            except (httpx.TransportError, KeyError, IndexError, ValueError) as exc:
                last_err = f"{type(exc).__name__}: {exc}"
            if attempt < self.retries:
                self._sleep(self.backoff * 2 ** attempt)
        _append_log(self.log_path, {"model": self.model, "prompt": prompt, "error": last_err})
        raise BackendUnavailable(f"chat completion failed: {last_err}")

    def close(self):
        self._client.close()


# ---------------------------------------------------------------------------
# deterministic mock
# ---------------------------------------------------------------------------

@dataclass
class PromptView:
    """The parts of an advisor prompt the mock needs."""
    capacity: float
    max_routes: int
    coords: np.ndarray
    demand: np.ndarray
    open: np.ndarray
    close: np.ndarray
    position: int
    remaining: float
    clock: float
    routes_used: int
    pending: list[int]
    breaks: dict
    pool: list[list[int]]

    def dist(self, i, j) -> float:
        return math.hypot(self.coords[i, 0] - self.coords[j, 0],
                          self.coords[i, 1] - self.coords[j, 1])

    def brk(self, i, j) -> float:
        return self.breaks.get((min(i, j), max(i, j)), math.inf)


def _val(tok: str) -> float:
    return math.inf if tok == "open" else float(tok)


def read_prompt(prompt: str) -> PromptView:
    def field_(name):
        m = re.search(rf"^{name}: (.*)$", prompt, re.MULTILINE)
        if m is None:
            raise ValueError(f"prompt lacks {name}")
        return m.group(1).strip()

    rows = []
    block = prompt.split("nodes (id x y demand window_open window_close):\n", 1)[1]
    for line in block.splitlines():
        if not line.strip():
            break
        rows.append(line.split())
    coords = np.array([[float(r[1]), float(r[2])] for r in rows])
    demand = np.array([float(r[3]) for r in rows])
    opening = np.array([_val(r[4]) for r in rows])
    close = np.array([_val(r[5]) for r in rows])

    breaks = {}
    if "## Broken roads" in prompt:
        sec = prompt.split("## Broken roads", 1)[1].split("\n", 1)[1]
        for line in sec.splitlines():
            if not line.strip():
                break
            i, j, t = line.split()
            breaks[(min(int(i), int(j)), max(int(i), int(j)))] = float(t)
    pool = []
    if "## Memory pool" in prompt:
        sec = prompt.split("## Memory pool", 1)[1].split("\n", 1)[1]
        for line in sec.splitlines():
            if not line.strip():
                break
            pool.append(json.loads(line.split(": ", 1)[1]))
    pend = field_("pending")
    return PromptView(
        capacity=float(field_("capacity")), max_routes=int(field_("max_routes")),
        coords=coords, demand=demand, open=opening, close=close,
        position=int(field_("position")), remaining=float(field_("remaining_capacity")),
        clock=float(field_("clock")), routes_used=int(field_("routes_used")),
        pending=[int(t) for t in pend.split()] if pend else [], breaks=breaks, pool=pool)


class MockBackend:
    """Seeded construction-heuristic advisor.

    Alternates time-window nearest-neighbour constructions with
    deadline-ordered cheapest-insertion ones (both under random jitter), adds the unfinished remainder of a matching
    memory-pool entry, and replies with the best three (fewest customers left
    unserved first, then by generalized cost). The reply depends only on ``(prompt, seed)``.

    ``fault`` injects errors aimed at one filter layer: ``"syntax"`` returns
    unparseable prose, ``"hallucinate"`` adds a non-existent node, and
    ``"infeasible"`` returns well-formed trajectories that break capacity or
    make an impossible move.
    """

    weights = (0.4, 0.4, 0.2)   # distance, time gap, urgency
    cost_weights = (4.5, 65.0)

    def __init__(self, seed: int = 0, fault: str | None = None, log_path=None,
                 constructions: int = 8, noise: float = 1.0):
        if fault not in FAULT_MODES:
            raise ValueError(f"fault must be one of {FAULT_MODES}")
        self.seed = seed
        self.fault = fault
        self.log_path = log_path
        self.constructions = constructions
        self.noise = noise
        self.calls = 0

    def _rng(self, prompt: str) -> np.random.Generator:
        digest = hashlib.sha256(prompt.encode()).digest()
        return np.random.default_rng([self.seed, int.from_bytes(digest[:8], "little")])

    def complete(self, prompt: str) -> str:
        self.calls += 1
        view = read_prompt(prompt)
        rng = self._rng(prompt)
        if self.fault == "syntax":
            reply = ("Reasoning: the nearest customer first, then the rest.\n"
                     "route: " + " -> ".join(str(v) for v in view.pending[:3] or [0]))
        elif self.fault == "infeasible":
            reply = _format(self._infeasible(view))
        else:
            cands = self._candidates(view, rng)
            if self.fault == "hallucinate":
                bogus = len(view.coords) + 3
                cands = [[bogus] + c for c in cands] or [[bogus]]
            reply = ("Step 1: check remaining capacity. Step 2: prefer the nearest "
                     "reachable customer whose window is still open. Step 3: return to "
                     "the depot when nothing else fits.\n" + _format(cands))
        _append_log(self.log_path, {"model": "mock", "prompt": prompt, "reply": reply})
        return reply

    # -- construction ------------------------------------------------------
    def _candidates(self, v: PromptView, rng) -> list[list[int]]:
        scored: list[tuple] = []
        pooled = self._from_pool(v)
        if pooled:
            scored.append((0, -1.0, pooled))
        for k in range(self.constructions):
            noise = 0.0 if k == 0 else self.noise
            build = self._greedy if k % 2 == 0 else self._insertion
            traj, left, cost = build(v, noise, rng)
            if traj and all(traj != t for *_, t in scored):
                scored.append((left, cost, traj))
        scored.sort(key=lambda e: (e[0], e[1]))
        return [t for *_, t in scored[:3]]

    def _from_pool(self, v: PromptView) -> list[int] | None:
        pending = set(v.pending)
        served = set(range(1, len(v.coords))) - pending
        for traj in v.pool:
            before: set[int] = set()
            for k in range(len(traj) + 1):
                prev = traj[k - 1] if k else 0
                if before == served and prev == v.position:
                    rest = traj[k:]
                    if rest and {c for c in rest if c} == pending:
                        return list(rest)
                if k < len(traj) and traj[k]:
                    before.add(traj[k])
        return None

    def _reach_by(self, v: PromptView, pos: int, clock: float, c: int) -> float:
        direct = clock + v.dist(pos, c)
        if direct < v.brk(pos, c):
            return direct
        back = clock + v.dist(pos, 0)
        return back + v.dist(0, c) if back < v.brk(pos, 0) else math.inf

    def _simulate(self, v: PromptView, seq: list[int]) -> float | None:
        """Generalized cost of following ``seq`` from the prompt state, or
        None when it breaks capacity, a window, a road or the route limit."""
        pos, rem, clock, routes = v.position, v.remaining, v.clock, v.routes_used
        length, dispatches = 0.0, 0
        for k, c in enumerate(seq):
            arr = clock + v.dist(pos, c)
            if arr >= v.brk(pos, c):
                return None
            length += v.dist(pos, c)
            if pos == 0:
                dispatches += 1
            if c == 0:
                if k < len(seq) - 1:
                    routes += 1
                    if routes > v.max_routes:
                        return None
                pos, rem, clock = 0, v.capacity, arr
                continue
            if v.demand[c] > rem or arr > v.close[c]:
                return None
            pos, rem, clock = c, rem - v.demand[c], max(arr, v.open[c])
        return self.cost_weights[0] * length + self.cost_weights[1] * dispatches

    def _insertion(self, v: PromptView, noise: float, rng):
        """Deadline-ordered insertion: customers go in by (jittered) window
        close time, each at its cheapest feasible point, possibly as a new
        route. Every candidate sequence is simulated in full."""
        seq = [] if v.position == 0 else [0]
        base = self._simulate(v, seq) if seq else 0.0
        if base is None:
            return [], len(v.pending), math.inf
        jitter = {c: 1.0 + noise * rng.random() for c in v.pending}
        todo = sorted(v.pending, key=lambda c: (v.close[c] * jitter[c], c))
        while todo:
            for c in todo:
                options = []
                for i in range(len(seq) + 1):
                    for ins in ([c], [c, 0]) if i == len(seq) or seq[i - 1:i] == [0] else ([c],):
                        trial = seq[:i] + ins + seq[i:]
                        if trial[-1] != 0:
                            trial = trial + [0]
                        cost = self._simulate(v, trial)
                        if cost is not None:
                            options.append((cost, trial))
                if options:
                    base, seq = min(options, key=lambda o: o[0])
                    todo.remove(c)
                    break
            else:
                break  # nobody left can be placed
        # drop a redundant depot hop at the start when already there
        while seq[:1] == [0] and v.position == 0:
            seq = seq[1:]
        return seq, len(todo), base

    def _depot_safe(self, v: PromptView, pos: int, clock: float, routes: int, pending) -> bool:
        if pos == 0 or routes + 1 > v.max_routes:
            return False
        back = clock + v.dist(pos, 0)
        if back >= v.brk(pos, 0):
            return False
        return all(self._reach_by(v, 0, back, j) <= v.close[j] for j in pending)

    def _greedy(self, v: PromptView, noise: float, rng):
        """Time-window nearest neighbour: score = distance + time gap
        (including waiting) + urgency, avoiding moves that strand another
        customer. Returns ``(trajectory, customers left unserved, cost)``."""
        pos, rem, clock, routes = v.position, v.remaining, v.clock, v.routes_used
        pending = list(v.pending)
        traj: list[int] = []
        length = 0.0
        w = np.array(self.weights) * (1.0 + noise * rng.random(3))
        jitter = {c: 1.0 + noise * rng.random() for c in sorted(pending)}
        while pending:
            options = []
            for c in pending:
                arr = clock + v.dist(pos, c)
                if v.demand[c] > rem or arr >= v.brk(pos, c) or arr > v.close[c]:
                    continue
                start = max(arr, v.open[c])
                strands = any(self._reach_by(v, c, start, j) > v.close[j]
                              for j in pending if j != c)
                score = jitter[c] * (w[0] * v.dist(pos, c) + w[1] * (start - clock)
                                     + w[2] * (v.close[c] - arr))
                options.append((strands, score, c, start))
            if options and min(options)[0] and self._depot_safe(v, pos, clock, routes, pending):
                options = []  # every move strands someone; start a fresh route instead
            if options:
                _, _, c, start = min(options)
                length += v.dist(pos, c)
                clock = start
                rem -= v.demand[c]
                pending.remove(c)
                traj.append(c)
                pos = c
                continue
            if pos == 0 or routes + 1 > v.max_routes:
                break
            if clock + v.dist(pos, 0) >= v.brk(pos, 0):
                break
            clock += v.dist(pos, 0)
            length += v.dist(pos, 0)
            traj.append(0)
            pos, rem, routes = 0, v.capacity, routes + 1
        if not pending and pos != 0:
            length += v.dist(pos, 0)
            traj.append(0)
        dispatches = sum(1 for k, c in enumerate(traj) if c and (traj[k - 1] == 0 if k else v.position == 0))
        return traj, len(pending), self.cost_weights[0] * length + self.cost_weights[1] * dispatches

    def _infeasible(self, v: PromptView) -> list[list[int]]:
        heavy = sorted(v.pending, key=lambda c: (-v.demand[c], c))
        if v.position != 0 and sum(v.demand[c] for c in heavy) > v.remaining:
            return [heavy, heavy[::-1], heavy[1:] + heavy[:1]]
        if v.position == 0:
            return [[0] + heavy, [0] + heavy[::-1], [0]]
        return [[0, 0] + heavy, [0, 0] + heavy[::-1], [0, 0]]


def _format(cands: list[list[int]]) -> str:
    return "[" + ", ".join("[" + ", ".join(str(c) for c in t) + "]" for t in cands) + "]"
