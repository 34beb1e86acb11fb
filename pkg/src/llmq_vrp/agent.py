"""Two-phase training loop: advisor-constrained double/dueling DQN exploration,
then autonomous prioritized refinement."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import env as E
from . import qnet
from .advisor import MemoryPool, safe_advise
from .errors import CheckpointCorrupt
from .instance import Instance
from .milp import GLOBAL, RoutePlan, evaluate
from .replay import PrioritizedReplay, Transition

log = logging.getLogger(__name__)

PHASE_POLICIES = ("fraction", "stagnation", "either")


@dataclass(frozen=True)
class Switches:
    double: bool = True
    dueling: bool = True
    per: bool = True
    llm_memory: bool = True
    llm_per_boost: bool = True
    reward_shaping: bool = True

    @classmethod
    def all_off(cls) -> "Switches":
        return cls(False, False, False, False, False, False)


ABLATIONS = {
    "all": {},
    "no-llm-memory": {"llm_memory": False},
    "no-llm-per": {"llm_per_boost": False},
    "no-double": {"double": False},
    "no-dueling": {"dueling": False},
    "no-reward-reshape": {"reward_shaping": False},
}


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    eps_start: float = 0.8
    eps_min: float = 0.01
    eps_decay: float = 0.995
    lr: float = 2e-4
    eps_llm: float = 1.5
    episodes: int = 1500
    horizon: int | None = None          # default 4 * N
    batch_size: int = 64
    tau: float = 0.005
    update_period: int = 4
    warmup: int = 1000
    buffer_capacity: int = 100_000
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    eps_floor: float = 1e-3
    boost_on_refresh: bool = True
    loss: str = "huber"
    reward_scale: float = 0.01
    hidden: tuple[int, ...] = (128, 128)
    head_hidden: int = 64
    phase_policy: str = "either"
    phase1_fraction: float = 0.2
    stagnation_window: int = 50
    stagnation_tol: float = 0.01
    advisor_rounds: int = 3
    cache_steps: int = 5
    pool_capacity: int = 10
    checkpoint_every: int = 0
    switches: Switches = field(default_factory=Switches)
    reward: E.RewardParams = field(default_factory=E.RewardParams)

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0 < self.eps_decay <= 1 or not 0 <= self.eps_min <= self.eps_start <= 1:
            raise ValueError("bad epsilon schedule")
        if self.phase_policy not in PHASE_POLICIES:
            raise ValueError(f"phase_policy must be one of {PHASE_POLICIES}")
        if self.episodes < 0 or self.batch_size <= 0 or self.update_period <= 0:
            raise ValueError("episodes, batch_size and update_period must be positive")

    @property
    def reward_params(self) -> E.RewardParams:
        return replace(self.reward, shaping=self.reward.shaping and self.switches.reward_shaping)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        if "switches" in d:
            d["switches"] = Switches(**d["switches"])
        if "reward" in d:
            d["reward"] = E.RewardParams(**d["reward"])
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def epsilon_at(k: int, cfg: TrainConfig) -> float:
    return max(cfg.eps_min, cfg.eps_start * cfg.eps_decay ** k)


# ---------------------------------------------------------------------------
# learning primitives
# ---------------------------------------------------------------------------

def td_target(rewards, next_states, next_masks, dones, online, target, gamma: float,
              double: bool = True) -> np.ndarray:
    """Bootstrapped targets; with ``double`` the online net picks the next
    action and the target net values it."""
    rewards = np.asarray(rewards, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    y = rewards.copy()
    live = ~dones
    if not live.any() or gamma == 0.0:
        return y
    nx = np.atleast_2d(np.asarray(next_states, dtype=float))[live]
    nm = np.atleast_2d(np.asarray(next_masks, dtype=bool))[live]
    has_action = nm.any(axis=1)
    q_t = qnet.forward(target, nx, nm)
    if double:
        a_star = np.argmax(qnet.forward(online, nx, nm), axis=1)
        boot = q_t[np.arange(len(nx)), a_star]
    else:
        boot = q_t.max(axis=1)
    boot = np.where(has_action, boot, 0.0)
    y[live] += gamma * boot
    return y


def effective_actions(legal, guide=None) -> tuple[list[int], bool]:
    """``legal ∩ guide`` when that is non-empty, else ``legal``; the flag
    tells whether the advisor restricted the choice."""
    if guide:
        inter = sorted(set(legal) & set(guide))
        if inter:
            return inter, True
    return sorted(legal), False


def select_action(q_values, legal, eps: float, rng: np.random.Generator, guide=None) -> int:
    """Epsilon-greedy over the effective action set (see :func:`effective_actions`)."""
    acts, _ = effective_actions(legal, guide)
    if not acts:
        raise ValueError("no legal action")
    if rng.random() < eps:
        return int(acts[rng.integers(len(acts))])
    q = np.asarray(q_values, dtype=float)
    return int(max(acts, key=lambda a: (q[a], -a)))


class DQNLearner:
    """Online/target networks, optimizer and replay buffer."""

    def __init__(self, n_features: int, n_actions: int, cfg: TrainConfig,
                 rng: np.random.Generator, replay_rng: np.random.Generator | None = None):
        self.cfg = cfg
        sw = cfg.switches
        net_cfg = qnet.NetConfig(cfg.hidden, cfg.head_hidden, sw.dueling)
        self.online = qnet.init_params(n_features, n_actions, net_cfg, rng)
        self.target = qnet.copy_params(self.online)
        self.opt = qnet.Adam(cfg.lr)
        self.buffer = PrioritizedReplay(
            cfg.buffer_capacity, alpha=cfg.alpha if sw.per else 0.0,
            eps_llm=cfg.eps_llm if sw.llm_per_boost else 0.0, eps_floor=cfg.eps_floor,
            boost_on_refresh=cfg.boost_on_refresh, rng=replay_rng)
        self.updates = 0
        self.last_loss = float("nan")

    def q_values(self, x, mask=None) -> np.ndarray:
        return qnet.forward(self.online, x, mask)

    def td_error(self, t: Transition) -> float:
        y = td_target([t.reward], [t.next_state], [t.next_mask], [t.done], self.online,
                      self.target, self.cfg.gamma, self.cfg.switches.double)[0]
        q = qnet.forward(self.online, t.state, t.mask)[t.action]
        return float(q - y)

    def store(self, t: Transition) -> float:
        return self.buffer.push(t, self.td_error(t))

    def ready(self) -> bool:
        return len(self.buffer) >= max(self.cfg.warmup, self.cfg.batch_size)

    def learn(self, beta: float) -> float:
        cfg = self.cfg
        b = self.buffer.sample(cfg.batch_size, beta if cfg.switches.per else 0.0)
        y = td_target(b.rewards, b.next_states, b.next_masks, b.dones, self.online, self.target,
                      cfg.gamma, cfg.switches.double)
        grads, loss, err = qnet.backward(self.online, b.states, b.actions, y, b.weights, b.masks,
                                         loss=cfg.loss)
        self.opt.step(self.online, grads)
        self.buffer.update_priorities(b.indices, err, b.generations)
        self.target = qnet.polyak_update(self.target, self.online, cfg.tau)
        self.updates += 1
        self.last_loss = loss
        return loss


# ---------------------------------------------------------------------------
# advisor guidance within an episode
# ---------------------------------------------------------------------------

class Guide:
    """Caches accepted candidates and follows their spines for up to
    ``cache_steps`` steps. Re-queries on leaving the depot or when no cached
    candidate agrees with the moves taken since the last query."""

    def __init__(self, backend, pool: MemoryPool | None, cfg: TrainConfig):
        self.backend = backend
        self.pool = pool
        self.cfg = cfg
        self.calls = 0
        self.accepted = 0
        self.proposed = 0
        self._cands: list[list[int]] = []
        self._taken: list[int] = []

    def reset(self):
        self._cands, self._taken = [], []

    def _cached(self) -> set[int]:
        k = len(self._taken)
        if k >= self.cfg.cache_steps:
            return set()
        return {t[k] for t in self._cands if len(t) > k and t[:k] == self._taken}

    def actions(self, s: E.EnvState, inst: Instance) -> set[int]:
        cached = set() if s.position == E.DEPOT else self._cached()
        if cached:
            return cached
        cs = safe_advise(s, inst, self.backend, self.pool, self.cfg.advisor_rounds,
                         self.cfg.reward_params)
        self.calls += 1
        self._taken = []
        if cs is None:
            self._cands = []
            return set()
        self.proposed += len(cs.verdicts)
        self.accepted += len(cs.accepted)
        self._cands = cs.accepted
        return cs.action_set

    def record(self, action: int):
        self._taken.append(action)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class EpisodeReport:
    episode: int
    ret: float
    cost: float
    feasible: bool
    steps: int
    phase: int
    llm_calls: int
    llm_accept_rate: float
    epsilon: float
    best_cost: float | None

    def to_record(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    best_plan: RoutePlan | None
    best_cost: float | None
    best_episode: int | None
    reports: list[EpisodeReport]
    params: qnet.Params
    learner: DQNLearner
    pool: MemoryPool | None
    checkpoints: list[str] = field(default_factory=list)
    phase_switch: int | None = None


def _stagnated(returns: list[float], window: int, tol: float) -> bool:
    if len(returns) < 2 * window:
        return False
    now = float(np.mean(returns[-window:]))
    prev = float(np.mean(returns[-2 * window:-window]))
    return abs(now - prev) <= tol * abs(prev)


def train(inst: Instance, cfg: TrainConfig = TrainConfig(), backend=None, seed: int = 0,
          out_dir=None, on_episode: Callable[[EpisodeReport], None] | None = None) -> TrainResult:
    """Run the two-phase loop for ``cfg.episodes`` episodes.

    Random streams, spawned from ``seed`` in this order: network init,
    exploration, replay sampling.
    """
    init_ss, explore_ss, replay_ss = np.random.SeedSequence(seed).spawn(3)
    rng = np.random.default_rng(explore_ss)
    enc = qnet.FeatureEncoder(inst)
    n_act = inst.n_nodes
    learner = DQNLearner(enc.size, n_act, cfg, np.random.default_rng(init_ss),
                         np.random.default_rng(replay_ss))
    params = cfg.reward_params
    sw = cfg.switches
    horizon = cfg.horizon or 4 * inst.n_customers
    use_advisor = backend is not None
    pool = MemoryPool(cfg.pool_capacity) if use_advisor and sw.llm_memory else None
    guide = Guide(backend, pool, cfg) if use_advisor else None
    phase1_end = math.ceil(cfg.phase1_fraction * cfg.episodes)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    reports: list[EpisodeReport] = []
    returns: list[float] = []
    best: tuple | None = None
    checkpoints: list[str] = []
    phase = 1 if use_advisor else 2
    phase_switch = None
    total_steps = 0

    for ep in range(cfg.episodes):
        if phase == 1:
            by_fraction = ep >= phase1_end
            by_stag = _stagnated(returns, cfg.stagnation_window, cfg.stagnation_tol)
            if (cfg.phase_policy == "fraction" and by_fraction) or \
               (cfg.phase_policy == "stagnation" and by_stag) or \
               (cfg.phase_policy == "either" and (by_fraction or by_stag)):
                phase, phase_switch = 2, ep
        eps = epsilon_at(ep, cfg)
        beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * min(1.0, ep / max(1, cfg.episodes))
        calls_before = guide.calls if guide else 0
        acc_before = (guide.accepted, guide.proposed) if guide else (0, 0)
        if guide:
            guide.reset()

        s = E.reset(inst)
        x = enc(s)
        legal = E.action_space(s, inst, params.mask_breaks)
        trace: list[E.StepOutcome] = []
        ret = 0.0
        for _ in range(horizon):
            ag = guide.actions(s, inst) if (guide and phase == 1) else None
            acts, guided = effective_actions(legal, ag)
            mask = qnet.action_mask(legal, n_act)
            q = learner.q_values(x, mask)
            a = select_action(q, acts, eps, rng)
            outc = E.step(s, a, inst, params)
            if guide and phase == 1:
                guide.record(a)
            trace.append(outc)
            ret += outc.reward
            s2 = outc.next
            x2 = enc(s2)
            legal2 = E.action_space(s2, inst, params.mask_breaks)
            t = Transition(x, a, outc.reward * cfg.reward_scale, x2, outc.done,
                           llm_flag=guided and phase == 1, mask=mask,
                           next_mask=qnet.action_mask(legal2, n_act))
            learner.store(t)
            total_steps += 1
            if learner.ready() and total_steps % cfg.update_period == 0:
                learner.learn(beta)
            s, x, legal = s2, x2, legal2
            if outc.done:
                break

        returns.append(ret)
        plan = E.trace_to_plan(trace)
        done = bool(trace) and trace[-1].done
        verdict = evaluate(inst, plan, GLOBAL, params.weights)
        feasible = done and verdict.feasible
        cost = E.rollout_cost(trace, params) if done else verdict.cost
        if feasible and (best is None or cost < best[0]):
            best = (cost, ep, plan)
        if pool is not None:
            pool.update(E.visited_sequence(trace), ret,
                        [v.kind for v in verdict.violations])

        if guide:
            calls = guide.calls - calls_before
            acc = guide.accepted - acc_before[0]
            prop = guide.proposed - acc_before[1]
        else:
            calls, acc, prop = 0, 0, 0
        rep = EpisodeReport(ep, float(ret), float(cost), feasible, len(trace), phase, calls,
                            acc / prop if prop else 0.0, eps, best[0] if best else None)
        reports.append(rep)
        if on_episode:
            on_episode(rep)
        if out is not None and cfg.checkpoint_every and (ep + 1) % cfg.checkpoint_every == 0:
            path = out / f"checkpoint_{ep + 1:06d}.npz"
            qnet.save_checkpoint(path, learner.online, {"episode": ep + 1, "seed": seed})
            checkpoints.append(str(path))

    if out is not None:
        path = out / "checkpoint_final.npz"
        qnet.save_checkpoint(path, learner.online, {"episode": cfg.episodes, "seed": seed})
        checkpoints.append(str(path))

    return TrainResult(
        best_plan=best[2] if best else None, best_cost=best[0] if best else None,
        best_episode=best[1] if best else None, reports=reports, params=learner.online,
        learner=learner, pool=pool, checkpoints=checkpoints, phase_switch=phase_switch)


# ---------------------------------------------------------------------------
# policy evaluation
# ---------------------------------------------------------------------------

@dataclass
class PolicyEvaluation:
    mean_cost: float
    satisfaction_rate: float
    costs: list[float]
    feasible: list[bool]
    plans: list[RoutePlan]


def plan_policy(plan: RoutePlan) -> Callable:
    """Scripted policy replaying ``plan`` (depot returns between routes)."""
    seq = [c for r in plan.nonempty for c in (*r, 0)]

    def policy(s: E.EnvState, legal, step_no: int) -> int:
        return seq[step_no]
    return policy


def greedy_policy(params: qnet.Params, inst: Instance) -> Callable:
    enc = qnet.FeatureEncoder(inst)
    n_act = inst.n_nodes

    def policy(s: E.EnvState, legal, step_no: int) -> int:
        q = qnet.forward(params, enc(s), qnet.action_mask(legal, n_act))
        return int(max(legal, key=lambda a: (q[a], -a)))
    return policy


def evaluate_policy(inst: Instance, checkpoint, episodes: int = 1,
                    params: E.RewardParams = E.DEFAULT_PARAMS) -> PolicyEvaluation:
    """Greedy rollouts; satisfaction rate is the share of episodes whose plan
    passes :func:`milp.evaluate` with no violation.

    ``checkpoint`` may be a checkpoint path, a parameter dict, or a callable
    ``policy(state, legal_actions, step_no) -> action``.
    """
    if callable(checkpoint):
        policy = checkpoint
    else:
        if isinstance(checkpoint, (str, os.PathLike)):
            net, _ = qnet.load_checkpoint(checkpoint)
        else:
            net = checkpoint
        if qnet.n_outputs(net) != inst.n_nodes or qnet.n_inputs(net) != inst.n_customers + 5:
            raise CheckpointCorrupt("checkpoint does not match the instance dimensions")
        policy = greedy_policy(net, inst)
    costs, feas, plans = [], [], []
    horizon = 4 * max(1, inst.n_customers)
    for _ in range(episodes):
        s = E.reset(inst)
        trace = []
        for k in range(horizon):
            legal = E.action_space(s, inst, params.mask_breaks)
            if not legal:
                break
            outc = E.step(s, policy(s, legal, k), inst, params)
            trace.append(outc)
            s = outc.next
            if outc.done:
                break
        plan = E.trace_to_plan(trace)
        verdict = evaluate(inst, plan, GLOBAL, params.weights)
        done = bool(trace) and trace[-1].done
        ok = done and verdict.feasible and not any(o.info.violated for o in trace)
        costs.append(E.rollout_cost(trace, params) if done else verdict.cost)
        feas.append(ok)
        plans.append(plan)
    return PolicyEvaluation(float(np.mean(costs)), float(np.mean(feas)), costs, feas, plans)


def report_lines(reports: list[EpisodeReport]) -> str:
    return "".join(json.dumps(r.to_record(), sort_keys=True) + "\n" for r in reports)
