"""Prioritized experience replay with a boost for advisor-generated transitions.

Stored priority::

    p = |td_error| * (1 + eps_llm * llm_flag) + eps_floor

Sampling probability is ``p**alpha / sum(p**alpha)`` with stratified draws
over equal-mass segments; importance weights are ``(B * P(i))**-beta``
normalised by the batch maximum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StaleIndex, Underfilled


def priority(td_error: float, llm_flag: bool, eps_llm: float, eps_floor: float) -> float:
    return abs(float(td_error)) * (1.0 + eps_llm * float(bool(llm_flag))) + eps_floor


class SumTree:
    """Binary sum tree over ``capacity`` leaves; ``tree[1]`` is the root."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self._leaves = size
        self.tree = np.zeros(2 * size)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def __getitem__(self, idx: int) -> float:
        return float(self.tree[self._leaves + idx])

    def leaves(self) -> np.ndarray:
        return self.tree[self._leaves:self._leaves + self.capacity]

    def update(self, idx: int, value: float) -> None:
        pos = self._leaves + idx
        self.tree[pos] = value
        pos //= 2
        while pos >= 1:
            # recompute rather than add a delta, so sums never drift
            self.tree[pos] = self.tree[2 * pos] + self.tree[2 * pos + 1]
            pos //= 2

    def rebuild(self) -> None:
        for pos in range(self._leaves - 1, 0, -1):
            self.tree[pos] = self.tree[2 * pos] + self.tree[2 * pos + 1]

    def find(self, values: np.ndarray) -> np.ndarray:
        """Leaf index holding each cumulative mass in ``values``."""
        v = np.array(values, dtype=float)
        pos = np.ones(v.shape, dtype=np.int64)
        while pos[0] < self._leaves:
            left = 2 * pos
            lv = self.tree[left]
            go_right = v >= lv
            # never step into an empty right subtree because of rounding
            go_right &= self.tree[left + 1] > 0
            v = np.where(go_right, v - lv, v)
            pos = np.where(go_right, left + 1, left)
        return pos - self._leaves


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    llm_flag: bool = False
    mask: np.ndarray | None = None        # legal actions in ``state``
    next_mask: np.ndarray | None = None   # legal actions in ``next_state``
    priority: float = 0.0


@dataclass
class SampledBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    llm_flags: np.ndarray
    masks: np.ndarray
    next_masks: np.ndarray
    indices: np.ndarray
    generations: np.ndarray
    probs: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.indices)


class PrioritizedReplay:
    def __init__(self, capacity: int = 100_000, alpha: float = 0.6, eps_llm: float = 1.5,
                 eps_floor: float = 1e-3, boost_on_refresh: bool = True,
                 rng: np.random.Generator | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if eps_llm < 0:
            raise ValueError("eps_llm must be non-negative")
        self.capacity = capacity
        self.alpha = alpha
        self.eps_llm = eps_llm
        self.eps_floor = eps_floor
        self.boost_on_refresh = boost_on_refresh
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.tree = SumTree(capacity)
        self.priorities = np.zeros(capacity)
        self.generation = np.zeros(capacity, dtype=np.int64)
        self._store: dict[str, np.ndarray] | None = None
        self._next = 0
        self.size = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.size

    def _allocate(self, t: Transition):
        n_feat = len(t.state)
        n_act = len(t.mask) if t.mask is not None else int(t.action) + 1
        c = self.capacity
        self._store = {
            "states": np.zeros((c, n_feat)),
            "next_states": np.zeros((c, n_feat)),
            "actions": np.zeros(c, dtype=np.int64),
            "rewards": np.zeros(c),
            "dones": np.zeros(c, dtype=bool),
            "llm_flags": np.zeros(c, dtype=bool),
            "masks": np.ones((c, n_act), dtype=bool),
            "next_masks": np.ones((c, n_act), dtype=bool),
        }

    def push(self, t: Transition, td_error: float | None = None) -> float:
        """Store ``t`` (evicting the oldest when full); returns its priority.

        Without a TD error the transition gets the largest priority seen so far.
        """
        if self._store is None:
            self._allocate(t)
        st = self._store
        i = self._next
        if td_error is None:
            p = self.max_priority
        else:
            p = priority(td_error, t.llm_flag, self.eps_llm, self.eps_floor)
        st["states"][i] = t.state
        st["next_states"][i] = t.next_state
        st["actions"][i] = t.action
        st["rewards"][i] = t.reward
        st["dones"][i] = t.done
        st["llm_flags"][i] = t.llm_flag
        if t.mask is not None:
            st["masks"][i] = t.mask
        if t.next_mask is not None:
            st["next_masks"][i] = t.next_mask
        self.generation[i] += 1
        self._set(i, p)
        t.priority = p
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return p

    def _set(self, i: int, p: float) -> None:
        self.priorities[i] = p
        self.max_priority = max(self.max_priority, p)
        self.tree.update(i, p ** self.alpha)

    def set_alpha(self, alpha: float) -> None:
        if alpha == self.alpha:
            return
        self.alpha = alpha
        leaves = self.tree.leaves()
        leaves[:self.size] = self.priorities[:self.size] ** alpha
        self.tree.rebuild()

    def probabilities(self) -> np.ndarray:
        mass = self.priorities[:self.size] ** self.alpha
        return mass / mass.sum()

    def sample(self, batch_size: int, beta: float = 0.4, alpha: float | None = None) -> SampledBatch:
        if self.size < batch_size or batch_size <= 0:
            raise Underfilled(f"buffer holds {self.size}, need {batch_size}")
        if alpha is not None:
            self.set_alpha(alpha)
        total = self.tree.total
        seg = total / batch_size
        u = (np.arange(batch_size) + self.rng.random(batch_size)) * seg
        idx = np.minimum(self.tree.find(u), self.size - 1)
        mass = self.tree.leaves()[idx]
        probs = mass / total
        w = (self.size * probs) ** (-beta)
        w = w / w.max()
        st = self._store
        return SampledBatch(
            states=st["states"][idx], actions=st["actions"][idx], rewards=st["rewards"][idx],
            next_states=st["next_states"][idx], dones=st["dones"][idx],
            llm_flags=st["llm_flags"][idx], masks=st["masks"][idx],
            next_masks=st["next_masks"][idx], indices=idx,
            generations=self.generation[idx].copy(), probs=probs, weights=w)

    def update_priorities(self, indices, td_errors, generations=None) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        td_errors = np.asarray(td_errors, dtype=float)
        for k, i in enumerate(indices):
            if not 0 <= i < self.size:
                raise StaleIndex(f"index {i} outside filled range {self.size}")
            if generations is not None and self.generation[i] != generations[k]:
                raise StaleIndex(f"slot {i} was overwritten since it was sampled")
        for i, d in zip(indices, td_errors):
            flag = bool(self._store["llm_flags"][i]) and self.boost_on_refresh
            self._set(int(i), priority(d, flag, self.eps_llm, self.eps_floor))

    def llm_flag(self, i: int) -> bool:
        return bool(self._store["llm_flags"][i])

    def dump(self, path) -> None:
        """Debug snapshot; not a stable format."""
        st = self._store or {}
        np.savez(path, priorities=self.priorities[:self.size],
                 **{k: v[:self.size] for k, v in st.items()})
