"""Dense dueling Q-network with hand-written backprop, Adam and Polyak updates.

Parameters live in a plain ``dict[str, np.ndarray]`` (float64). A network is
dueling when it carries value/advantage head weights (``Wv*``/``Wa*``) and
plain when it carries a single Q head (``Wq*``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .env import EnvState
from .errors import CheckpointCorrupt, NonFiniteInput, ShapeMismatch
from .instance import Instance

Params = dict[str, np.ndarray]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    hidden: tuple[int, ...] = (128, 128)
    head_hidden: int = 64
    dueling: bool = True


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

class FeatureEncoder:
    """Maps an :class:`EnvState` to a vector in [0, 1]^(N + 5):
    normalised position coordinates, remaining capacity share, pending
    bits, clock / horizon (clipped) and routes used / K (clipped)."""

    def __init__(self, inst: Instance):
        xy = inst.coords
        lo = xy.min(axis=0)
        span = np.maximum(xy.max(axis=0) - lo, 1e-12)
        self._xy = (xy - lo) / span
        self._cap = float(inst.capacity)
        self._horizon = max(inst.horizon, 1e-12)
        self._k = float(inst.max_routes)
        self.size = inst.n_customers + 5

    def __call__(self, s: EnvState) -> np.ndarray:
        f = np.empty(self.size)
        f[0:2] = self._xy[s.position]
        f[2] = s.remaining / self._cap
        f[3:-2] = s.pending
        f[-2] = min(s.clock / self._horizon, 1.0)
        f[-1] = min(s.routes_used / self._k, 1.0)
        return f


def action_mask(actions, n_actions: int) -> np.ndarray:
    m = np.zeros(n_actions, dtype=bool)
    m[list(actions)] = True
    return m


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _dense(rng, n_in, n_out):
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_in, n_out)), rng.uniform(-bound, bound, size=n_out)


def init_params(n_in: int, n_actions: int, cfg: NetConfig = NetConfig(),
                rng: np.random.Generator | None = None) -> Params:
    """Uniform fan-in initialisation."""
    rng = np.random.default_rng(0) if rng is None else rng
    p: Params = {}
    width = n_in
    for k, h in enumerate(cfg.hidden):
        p[f"W{k}"], p[f"b{k}"] = _dense(rng, width, h)
        width = h
    heads = (("v", 1), ("a", n_actions)) if cfg.dueling else (("q", n_actions),)
    for name, out in heads:
        p[f"W{name}1"], p[f"b{name}1"] = _dense(rng, width, cfg.head_hidden)
        p[f"W{name}2"], p[f"b{name}2"] = _dense(rng, cfg.head_hidden, out)
    return p


def is_dueling(params: Params) -> bool:
    return "Wv2" in params


def n_trunk(params: Params) -> int:
    k = 0
    while f"W{k}" in params:
        k += 1
    return k


def n_inputs(params: Params) -> int:
    return params["W0"].shape[0]


def n_outputs(params: Params) -> int:
    return params["Wa2" if is_dueling(params) else "Wq2"].shape[1]


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def dueling_aggregate(value, adv, mask=None):
    """``V + A - mean(A)`` with the mean over unmasked actions only; masked
    entries come out as ``-inf``."""
    value = np.asarray(value, dtype=float)
    adv = np.asarray(adv, dtype=float)
    squeeze = adv.ndim == 1
    adv2 = np.atleast_2d(adv)
    val2 = value.reshape(-1, 1)
    if mask is None:
        m = np.ones_like(adv2, dtype=bool)
    else:
        m = np.atleast_2d(np.asarray(mask, dtype=bool))
    count = np.maximum(m.sum(axis=1, keepdims=True), 1)
    mean = np.where(m, adv2, 0.0).sum(axis=1, keepdims=True) / count
    q = np.where(m, val2 + adv2 - mean, -np.inf)
    return q[0] if squeeze else q


def _relu(x):
    return np.maximum(x, 0.0)


def _forward(params: Params, x: np.ndarray, mask):
    if x.shape[-1] != n_inputs(params):
        raise ShapeMismatch(f"feature length {x.shape[-1]} != input width {n_inputs(params)}")
    acts = [x]
    h = x
    for k in range(n_trunk(params)):
        h = _relu(h @ params[f"W{k}"] + params[f"b{k}"])
        acts.append(h)
    cache = {"trunk": acts}
    if is_dueling(params):
        hv = _relu(h @ params["Wv1"] + params["bv1"])
        ha = _relu(h @ params["Wa1"] + params["ba1"])
        v = hv @ params["Wv2"] + params["bv2"]
        a = ha @ params["Wa2"] + params["ba2"]
        cache.update(hv=hv, ha=ha)
        q = dueling_aggregate(v[:, 0], a, mask)
    else:
        hq = _relu(h @ params["Wq1"] + params["bq1"])
        q = hq @ params["Wq2"] + params["bq2"]
        cache.update(hq=hq)
        if mask is not None:
            q = np.where(mask, q, -np.inf)
    return q, cache


def forward(params: Params, features, mask=None) -> np.ndarray:
    """Q-values for one feature vector or a batch; masked entries are -inf."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    m = None if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    q, _ = _forward(params, x2, m)
    return q[0] if single else q


def huber(err, delta: float = 1.0):
    a = np.abs(err)
    return np.where(a <= delta, 0.5 * err * err, delta * (a - 0.5 * delta))


def backward(params: Params, features, actions, targets, weights=None, mask=None,
             loss: str = "huber", delta: float = 1.0):
    """Gradient of ``mean_i w_i * L(Q(s_i, a_i) - y_i)``.

    Returns ``(grads, loss_value, td_errors)``; ``td_errors`` is
    ``Q(s_i, a_i) - y_i``.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    actions = np.asarray(actions, dtype=int)
    y = np.asarray(targets, dtype=float)
    bsz = x.shape[0]
    if bsz == 0:
        raise ValueError("empty batch")
    w = np.ones(bsz) if weights is None else np.asarray(weights, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise NonFiniteInput("features, targets and weights must be finite")
    m = None if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    if m is not None and not m[np.arange(bsz), actions].all():
        raise ValueError("taken action is masked")

    q, cache = _forward(params, x, m)
    rows = np.arange(bsz)
    err = q[rows, actions] - y
    if loss == "huber":
        lval = huber(err, delta)
        dl = np.clip(err, -delta, delta)
    elif loss == "mse":
        lval = 0.5 * err * err
        dl = err
    else:
        raise ValueError(f"unknown loss {loss!r}")
    total = float(np.mean(w * lval))
    dq = w * dl / bsz  # dL/dQ(s_i, a_i)

    g: Params = {}
    acts = cache["trunk"]
    h = acts[-1]
    if is_dueling(params):
        n_act = params["Wa2"].shape[1]
        mm = np.ones((bsz, n_act), dtype=bool) if m is None else m
        count = mm.sum(axis=1, keepdims=True)
        onehot = np.zeros((bsz, n_act))
        onehot[rows, actions] = 1.0
        d_adv = dq[:, None] * (onehot - mm / count)
        d_val = dq[:, None]
        dh = np.zeros_like(h)
        for name, dout, hid in (("v", d_val, cache["hv"]), ("a", d_adv, cache["ha"])):
            g[f"W{name}2"] = hid.T @ dout
            g[f"b{name}2"] = dout.sum(axis=0)
            dhid = (dout @ params[f"W{name}2"].T) * (hid > 0)
            g[f"W{name}1"] = h.T @ dhid
            g[f"b{name}1"] = dhid.sum(axis=0)
            dh += dhid @ params[f"W{name}1"].T
    else:
        n_act = params["Wq2"].shape[1]
        dout = np.zeros((bsz, n_act))
        dout[rows, actions] = dq
        hid = cache["hq"]
        g["Wq2"] = hid.T @ dout
        g["bq2"] = dout.sum(axis=0)
        dhid = (dout @ params["Wq2"].T) * (hid > 0)
        g["Wq1"] = h.T @ dhid
        g["bq1"] = dhid.sum(axis=0)
        dh = dhid @ params["Wq1"].T

    for k in reversed(range(n_trunk(params))):
        dpre = dh * (acts[k + 1] > 0)
        g[f"W{k}"] = acts[k].T @ dpre
        g[f"b{k}"] = dpre.sum(axis=0)
        dh = dpre @ params[f"W{k}"].T
    return g, total, err


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected Adam; updates the parameter dict in place."""

    def __init__(self, lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params, lr: float | None = None) -> Params:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
        return params


def adam_step(params: Params, grads: Params, lr: float, opt: Adam | None = None) -> Params:
    opt = Adam(lr) if opt is None else opt
    return opt.step(params, grads, lr)


def polyak_update(target: Params, online: Params, tau: float) -> Params:
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    if target.keys() != online.keys():
        raise ShapeMismatch("parameter sets differ")
    out = {}
    for k, t in target.items():
        o = online[k]
        if t.shape != o.shape:
            raise ShapeMismatch(f"{k}: {t.shape} vs {o.shape}")
        out[k] = tau * o + (1.0 - tau) * t
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: Params, meta: dict | None = None) -> None:
    """``.npz`` holding every array plus a JSON header (version, shapes, meta)."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "shapes": {k: list(v.shape) for k, v in sorted(params.items())},
        "meta": meta or {},
    }
    arrays = {f"p_{k}": v for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header, sort_keys=True).encode(),
                                               dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[Params, dict]:
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(bytes(z["__header__"]).decode())
            params = {k[2:]: z[k].copy() for k in z.files if k.startswith("p_")}
    except Exception as exc:
        raise CheckpointCorrupt(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointCorrupt(f"unsupported checkpoint version {header.get('format_version')}")
    shapes = header.get("shapes", {})
    if set(shapes) != set(params) or any(list(params[k].shape) != s for k, s in shapes.items()):
        raise CheckpointCorrupt("checkpoint shapes do not match header")
    return params, header.get("meta", {})
