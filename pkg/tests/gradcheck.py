"""Central finite-difference reference for ``qnet.backward``."""
import numpy as np

from llmq_vrp import qnet


def random_problem(seed):
    rng = np.random.default_rng(seed)
    n_in = int(rng.integers(2, 7))
    n_act = int(rng.integers(2, 6))
    cfg = qnet.NetConfig(hidden=tuple(int(h) for h in rng.integers(3, 9, size=rng.integers(1, 3))),
                         head_hidden=int(rng.integers(3, 8)), dueling=bool(rng.integers(2)))
    params = qnet.init_params(n_in, n_act, cfg, rng)
    bsz = int(rng.integers(1, 6))
    x = rng.normal(size=(bsz, n_in))
    mask = rng.random((bsz, n_act)) < 0.7
    actions = np.empty(bsz, dtype=int)
    for i in range(bsz):
        mask[i, rng.integers(n_act)] = True
        actions[i] = rng.choice(np.flatnonzero(mask[i]))
    y = rng.normal(size=bsz)
    w = rng.uniform(0.2, 1.0, size=bsz)
    loss = "huber" if rng.integers(2) else "mse"
    return params, x, actions, y, w, mask, loss


def max_rel_error(seed, h=1e-6, floor=1e-7):
    """Largest ``|analytic - numeric| / max(|analytic|, |numeric|, floor / 1e-5)``
    over every parameter entry, i.e. relative error with an absolute floor."""
    params, x, actions, y, w, mask, loss = random_problem(seed)
    grads, _, _ = qnet.backward(params, x, actions, y, w, mask, loss=loss)
    worst = 0.0
    for k, p in params.items():
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = qnet.backward(params, x, actions, y, w, mask, loss=loss)[1]
            p[idx] = old - h
            down = qnet.backward(params, x, actions, y, w, mask, loss=loss)[1]
            p[idx] = old
            num = (up - down) / (2 * h)
            ana = grads[k][idx]
            scale = max(abs(ana), abs(num), floor / 1e-5)
            worst = max(worst, abs(ana - num) / scale)
    return worst
