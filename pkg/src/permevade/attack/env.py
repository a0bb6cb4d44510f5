"""Markov decision process over permission vectors.

A state is a binary vector of ``k`` bits, also addressed by its integer
index (bit ``i`` of the index is feature ``i``). Action ``0`` stops; action
``j >= 1`` modifies feature ``j - 1``. The reward after each step is

    r = w1 * P_b - w2 * N_m + w3 * S_g

with ``P_b`` the detector's benign probability of the new state, ``N_m`` the
modifications made so far in the episode and ``S_g`` = 1 once
``P_b > benign_threshold``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..core import LabeledDataset
from ..errors import EmptyPool, InvalidAction

ADD_ONLY = "add-only"
FLIP = "flip"


@dataclass(frozen=True)
class EnvConfig:
    w1: float = 1.0
    w2: float = 0.05
    w3: float = 10.0
    gamma: float = 0.9
    max_steps: int | None = None       # None -> k
    action_mode: str = ADD_ONLY
    benign_threshold: float = 0.5

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("reward weights must be non-negative")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.action_mode not in (ADD_ONLY, FLIP):
            raise ValueError(f"action_mode must be {ADD_ONLY!r} or {FLIP!r}")
        if not 0 < self.benign_threshold < 1:
            raise ValueError("benign_threshold must lie in (0, 1)")

    def steps_for(self, k):
        return k if self.max_steps is None else self.max_steps

    def to_dict(self):
        return {"w1": self.w1, "w2": self.w2, "w3": self.w3, "gamma": self.gamma,
                "max_steps": self.max_steps, "action_mode": self.action_mode,
                "benign_threshold": self.benign_threshold}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def state_index(bits) -> int:
    bits = np.asarray(bits, dtype=np.int64)
    return int(np.sum(bits << np.arange(len(bits), dtype=np.int64)))


def state_bits(index: int, k: int) -> np.ndarray:
    return ((int(index) >> np.arange(k)) & 1).astype(np.uint8)


def state_indices(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.int64)
    return X @ (np.int64(1) << np.arange(X.shape[1], dtype=np.int64))


def all_states(k: int) -> np.ndarray:
    """Every k-bit vector, row ``i`` being the vector whose index is ``i``."""
    return ((np.arange(1 << k)[:, None] >> np.arange(k)) & 1).astype(np.uint8)


def apply_action(index: int, action: int, action_mode: str = ADD_ONLY) -> int:
    if action == 0:
        return index
    bit = 1 << (action - 1)
    return index | bit if action_mode == ADD_ONLY else index ^ bit


class FunctionDetector:
    """Wraps ``fn(X) -> P_b`` as a detector; handy for stubs and what-if probes."""

    def __init__(self, fn, k, model_id="stub"):
        self.fn = fn
        self.n_features = k
        self.model_id = model_id

    def benign_proba(self, X):
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None, :]
        return np.asarray(self.fn(X), dtype=float).reshape(X.shape[0])


class BenignOracle:
    """Memoized ``state index -> P_b`` for one detector.

    For ``k <= precompute_limit`` the whole table of 2^k probabilities is
    computed in a single batched prediction.
    """

    def __init__(self, model, k, precompute_limit=16):
        self.model = model
        self.k = k
        self.table = None
        self._memo = {}
        if k <= precompute_limit:
            self.table = np.ascontiguousarray(model.benign_proba(all_states(k)), dtype=float)

    def __call__(self, index):
        if self.table is not None:
            return float(self.table[index])
        p = self._memo.get(index)
        if p is None:
            p = float(self.model.benign_proba(state_bits(index, self.k)[None, :])[0])
            self._memo[index] = p
        return p


def env_reset(malware_pool: LabeledDataset, rng) -> np.ndarray:
    """Uniformly draw a starting malware vector. ``rng`` is a seed or a Generator."""
    if len(malware_pool) == 0:
        raise EmptyPool("malware pool is empty")
    if np.any(malware_pool.y != 1):
        raise EmptyPool("malware pool contains benign-labeled samples")
    rng = np.random.default_rng(rng)
    return malware_pool.X[int(rng.integers(len(malware_pool)))].copy()


class StepResult(NamedTuple):
    next_state: np.ndarray
    reward: float
    done: bool
    p_benign: float


def step_reward(config: EnvConfig, p_benign: float, n_modified: int):
    goal = p_benign > config.benign_threshold
    return config.w1 * p_benign - config.w2 * n_modified + config.w3 * goal, goal


def env_step(config: EnvConfig, model, state, action: int, steps_so_far: int) -> StepResult:
    """One environment transition.

    In add-only mode an action whose bit is already set leaves the state
    unchanged but still counts as a modification.
    """
    state = np.asarray(state, dtype=np.uint8)
    k = state.shape[0]
    if not 0 <= action <= k:
        raise InvalidAction(f"action {action} outside [0, {k}]")
    nxt = state.copy()
    if action:
        j = action - 1
        nxt[j] = 1 if config.action_mode == ADD_ONLY else 1 - nxt[j]
    # action 0 ends the episode, so every earlier step was a modification
    n_modified = steps_so_far + (1 if action else 0)
    p = float(model.benign_proba(nxt[None, :])[0])
    reward, goal = step_reward(config, p, n_modified)
    done = goal or action == 0 or steps_so_far + 1 >= config.steps_for(k)
    return StepResult(nxt, float(reward), bool(done), p)
