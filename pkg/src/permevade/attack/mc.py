"""Every-visit Monte Carlo control over a dense Q-table.

The training loop lives in :func:`_mc_control`, plain Python that is also
compiled with numba. Both builds consume the same pre-drawn random streams,
so the interpreted path serves as an executable reference for the compiled
one.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from ..core import LabeledDataset
from ..errors import BufferFull, DimensionMismatch, EmptyPool
from .env import (ADD_ONLY, BenignOracle, EnvConfig, env_reset, env_step, state_bits,
                  state_index, state_indices)

QTABLE_FORMAT = "permevade.qtable/1"


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass(frozen=True, eq=False)
class Episode:
    """One rollout, stored as state indices. ``transitions`` expands it to bit vectors."""

    k: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    origin_sample: int = -1

    def __len__(self):
        return len(self.actions)

    @property
    def transitions(self):
        return [Transition(state_bits(s, self.k), int(a), float(r), state_bits(ns, self.k), bool(d))
                for s, a, r, ns, d in zip(self.states, self.actions, self.rewards,
                                          self.next_states, self.dones)]

    @classmethod
    def from_transitions(cls, transitions, origin_sample=-1):
        k = len(transitions[0].state)
        return cls(k,
                   np.array([state_index(t.state) for t in transitions], dtype=np.int64),
                   np.array([t.action for t in transitions], dtype=np.int64),
                   np.array([t.reward for t in transitions], dtype=float),
                   np.array([state_index(t.next_state) for t in transitions], dtype=np.int64),
                   np.array([t.done for t in transitions], dtype=bool),
                   origin_sample)


class ReplayBuffer:
    """Append-only episode store backed by fixed (capacity x max_len) arrays."""

    def __init__(self, capacity, k, max_len):
        if capacity < 1 or max_len < 1:
            raise ValueError("capacity and max_len must be positive")
        self.capacity = capacity
        self.k = k
        self.max_len = max_len
        self.states = np.zeros((capacity, max_len), dtype=np.int64)
        self.actions = np.zeros((capacity, max_len), dtype=np.int64)
        self.rewards = np.zeros((capacity, max_len), dtype=float)
        self.next_states = np.zeros((capacity, max_len), dtype=np.int64)
        self.dones = np.zeros((capacity, max_len), dtype=np.bool_)
        self.lengths = np.zeros(capacity, dtype=np.int64)
        self.origins = np.full(capacity, -1, dtype=np.int64)
        self.size = 0

    def __len__(self):
        return self.size

    def append(self, episode: Episode):
        if self.size >= self.capacity:
            raise BufferFull(f"replay buffer holds at most {self.capacity} episodes")
        n = len(episode)
        if not 1 <= n <= self.max_len:
            raise ValueError(f"episode length {n} outside [1, {self.max_len}]")
        i = self.size
        self.states[i, :n] = episode.states
        self.actions[i, :n] = episode.actions
        self.rewards[i, :n] = episode.rewards
        self.next_states[i, :n] = episode.next_states
        self.dones[i, :n] = episode.dones
        self.lengths[i] = n
        self.origins[i] = episode.origin_sample
        self.size += 1

    def __getitem__(self, i) -> Episode:
        if not -self.size <= i < self.size:
            raise IndexError(i)
        i %= self.size
        n = self.lengths[i]
        return Episode(self.k, self.states[i, :n], self.actions[i, :n], self.rewards[i, :n],
                       self.next_states[i, :n], self.dones[i, :n], int(self.origins[i]))

    def __iter__(self):
        return (self[i] for i in range(self.size))

    @property
    def episodes(self):
        return list(self)

    def total_transitions(self):
        return int(self.lengths[: self.size].sum())

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.states, self.actions, self.rewards, self.next_states, self.dones):
            h.update(np.ascontiguousarray(arr[: self.size]).tobytes())
        h.update(self.lengths[: self.size].tobytes())
        h.update(self.origins[: self.size].tobytes())
        return h.hexdigest()


@dataclass(eq=False)
class QTable:
    k: int
    values: np.ndarray
    visits: np.ndarray
    source_model_id: str | None = None

    @classmethod
    def zeros(cls, k, source_model_id=None):
        shape = (1 << k, k + 1)
        return cls(k, np.zeros(shape), np.zeros(shape, dtype=np.int64), source_model_id)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_entries(self):
        return self.values.size

    def row(self, bits):
        return self.values[state_index(bits)]

    def to_dict(self):
        return {"format": QTABLE_FORMAT, "k": self.k, "source_model_id": self.source_model_id,
                "values": self.values.ravel().tolist(), "visits": self.visits.ravel().tolist()}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != QTABLE_FORMAT:
            raise ValueError(f"unsupported Q-table format {d.get('format')!r}")
        k = int(d["k"])
        shape = (1 << k, k + 1)
        return cls(k, np.array(d["values"], dtype=float).reshape(shape),
                   np.array(d["visits"], dtype=np.int64).reshape(shape), d.get("source_model_id"))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def mc_every_visit_update(qtable: QTable, episode: Episode, gamma: float) -> QTable:
    """Fold the discounted return of every (s, a) occurrence into a running mean, in place."""
    if episode.k != qtable.k:
        raise DimensionMismatch(f"episode has k={episode.k}, table has k={qtable.k}")
    if len(episode) == 0:
        raise ValueError("episode is empty")
    G = 0.0
    for i in range(len(episode) - 1, -1, -1):
        G = episode.rewards[i] + gamma * G
        s, a = episode.states[i], episode.actions[i]
        qtable.visits[s, a] += 1
        qtable.values[s, a] += (G - qtable.values[s, a]) / qtable.visits[s, a]
    return qtable


def greedy_action(row) -> int:
    """Argmax with ties to the lowest action index."""
    return int(np.argmax(row))


class EpsilonGreedy:
    """Behavior policy: uniform random action with probability ``epsilon``, else greedy."""

    def __init__(self, qtable: QTable, epsilon: float):
        self.qtable = qtable
        self.epsilon = epsilon

    def __call__(self, state, t, rng):
        if rng.random() < self.epsilon:
            return int(rng.integers(0, self.qtable.k + 1))
        return greedy_action(self.qtable.values[state])


def run_episode(config: EnvConfig, model, pool: LabeledDataset, behavior, rng) -> Episode:
    """Roll out one episode from a random malware start; ``behavior(state_index, t, rng) -> action``."""
    rng = np.random.default_rng(rng)
    state = env_reset(pool, rng)
    k = len(state)
    transitions = []
    for t in range(config.steps_for(k)):
        action = behavior(state_index(state), t, rng)
        step = env_step(config, model, state, action, t)
        transitions.append(Transition(state, action, step.reward, step.next_state, step.done))
        state = step.next_state
        if step.done:
            break
    return Episode.from_transitions(transitions)


def _mc_control(pool_states, starts, explore_u, rand_actions, eps, p_table, k, T, add_only,
                w1, w2, w3, gamma, thr, Q, N, b_s, b_a, b_r, b_ns, b_d, b_len):
    for e in range(starts.shape[0]):
        s = pool_states[starts[e]]
        length = 0
        for t in range(T):
            if explore_u[e, t] < eps[e]:
                a = rand_actions[e, t]
            else:
                a = 0
                best = Q[s, 0]
                for j in range(1, k + 1):
                    if Q[s, j] > best:
                        best = Q[s, j]
                        a = j
            if a == 0:
                ns = s
                n_mod = t
            else:
                bit = np.int64(1) << (a - 1)
                ns = (s | bit) if add_only else (s ^ bit)
                n_mod = t + 1
            p = p_table[ns]
            goal = p > thr
            r = w1 * p - w2 * n_mod + (w3 if goal else 0.0)
            done = goal or a == 0 or t + 1 >= T
            b_s[e, t] = s
            b_a[e, t] = a
            b_r[e, t] = r
            b_ns[e, t] = ns
            b_d[e, t] = done
            length = t + 1
            s = ns
            if done:
                break
        b_len[e] = length
        G = 0.0
        for i in range(length - 1, -1, -1):
            G = b_r[e, i] + gamma * G
            si = b_s[e, i]
            ai = b_a[e, i]
            N[si, ai] += 1
            Q[si, ai] += (G - Q[si, ai]) / N[si, ai]


_mc_control_jit = numba.njit(cache=True, nogil=True)(_mc_control)


class TrainingResult(NamedTuple):
    qtable: QTable
    buffer: ReplayBuffer


def epsilon_schedule(episodes, start=1.0, end=0.05):
    if episodes == 1:
        return np.array([start])
    return start + (end - start) * np.arange(episodes) / (episodes - 1)


def draw_streams(seed, episodes, T, n_pool, k):
    """All randomness one training run consumes, drawn up front."""
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, n_pool, episodes)
    explore_u = rng.random((episodes, T))
    rand_actions = rng.integers(0, k + 1, (episodes, T))
    return starts, explore_u, rand_actions


def train_qtable(config: EnvConfig, model, pool: LabeledDataset, episodes: int = 100_000,
                 epsilon=(1.0, 0.05), seed: int = 0, engine: str = "numba",
                 source_model_id=None, oracle: BenignOracle | None = None) -> TrainingResult:
    """Monte Carlo control with a linearly decaying epsilon-greedy behavior policy.

    Starting states are drawn uniformly from ``pool`` (label-1 rows only).
    ``engine="python"`` runs the same loop without compilation; results are
    identical to the compiled engine.
    """
    if len(pool) == 0 or np.any(pool.y != 1):
        raise EmptyPool("training pool must be a non-empty set of malware samples")
    if episodes < 1:
        raise ValueError("episodes must be positive")
    k = pool.n_features
    T = config.steps_for(k)
    if oracle is None:
        oracle = BenignOracle(model, k, precompute_limit=22)
    if oracle.table is None:
        raise DimensionMismatch(f"k={k} is too large for a dense Q-table")
    starts, explore_u, rand_actions = draw_streams(seed, episodes, T, len(pool), k)
    eps = epsilon_schedule(episodes, *epsilon)
    if source_model_id is None:
        source_model_id = getattr(model, "model_id", None)
    q = QTable.zeros(k, source_model_id)
    buf = ReplayBuffer(episodes, k, T)
    kernel = _mc_control_jit if engine == "numba" else _mc_control
    kernel(state_indices(pool.X), starts, explore_u, rand_actions, eps, oracle.table, k, T,
           config.action_mode == ADD_ONLY, float(config.w1), float(config.w2), float(config.w3),
           float(config.gamma), float(config.benign_threshold), q.values, q.visits,
           buf.states, buf.actions, buf.rewards, buf.next_states, buf.dones, buf.lengths)
    buf.origins[:] = starts
    buf.size = episodes
    return TrainingResult(q, buf)


def merge_qtables(tables) -> QTable:
    """Visit-weighted average of independently trained tables."""
    tables = list(tables)
    k = tables[0].k
    if any(t.k != k for t in tables):
        raise DimensionMismatch("all tables must share k")
    visits = np.sum([t.visits for t in tables], axis=0)
    weighted = np.sum([t.values * t.visits for t in tables], axis=0)
    values = np.divide(weighted, visits, out=np.zeros_like(weighted), where=visits > 0)
    return QTable(k, values, visits, tables[0].source_model_id)


def train_qtable_parallel(config: EnvConfig, model, pool: LabeledDataset, episodes: int = 100_000,
                          epsilon=(1.0, 0.05), seed: int = 0, workers: int = 4) -> QTable:
    """Split the episode budget over workers with their own seed streams, then merge.

    Deterministic for fixed ``workers`` but not bit-identical to :func:`train_qtable`.
    """
    k = pool.n_features
    oracle = BenignOracle(model, k, precompute_limit=22)
    seeds = np.random.SeedSequence(seed).spawn(workers)
    share = [episodes // workers + (i < episodes % workers) for i in range(workers)]

    def job(i):
        return train_qtable(config, model, pool, share[i], epsilon,
                            int(seeds[i].generate_state(1)[0]), oracle=oracle).qtable

    with ThreadPoolExecutor(workers) as ex:
        tables = list(ex.map(job, [i for i in range(workers) if share[i] > 0]))
    return merge_qtables(tables)
