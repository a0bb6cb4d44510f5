"""Greedy attack policies and the single/multiple policy attack executors."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass

import numpy as np

from ..core import LabeledDataset
from ..errors import EmptyPolicySet, EmptySet, VocabularyMismatch
from .env import ADD_ONLY, BenignOracle, state_bits, state_indices
from .mc import QTable

POLICY_FORMAT = "permevade.policy/1"
SPA, MPA = "SPA", "MPA"


@dataclass(frozen=True, eq=False)
class AttackPolicy:
    """Dense lookup ``state index -> action`` learned against one detector."""

    k: int
    action_of: np.ndarray
    source_model_id: str | None = None
    policy_id: str | None = None
    action_mode: str = ADD_ONLY

    def __post_init__(self):
        a = np.asarray(self.action_of, dtype=np.int64)
        if a.shape != (1 << self.k,):
            raise ValueError(f"action table must have 2^{self.k} entries, got {a.shape}")
        if a.min() < 0 or a.max() > self.k:
            raise ValueError(f"actions must lie in [0, {self.k}]")
        a.setflags(write=False)
        object.__setattr__(self, "action_of", a)
        if self.policy_id is None:
            object.__setattr__(self, "policy_id", f"pi-{self.source_model_id or 'anon'}-{self.digest()[:8]}")

    def __eq__(self, other):
        return (isinstance(other, AttackPolicy) and self.k == other.k
                and self.source_model_id == other.source_model_id
                and self.action_mode == other.action_mode
                and np.array_equal(self.action_of, other.action_of))

    __hash__ = None

    def action(self, bits) -> int:
        return int(self.action_of[int(state_indices(np.atleast_2d(bits))[0])])

    def digest(self):
        return hashlib.sha256(self.action_of.astype("<i8").tobytes()).hexdigest()

    def to_dict(self):
        return {"format": POLICY_FORMAT, "k": self.k, "source_model_id": self.source_model_id,
                "policy_id": self.policy_id, "action_mode": self.action_mode,
                "action_of": self.action_of.tolist()}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != POLICY_FORMAT:
            raise ValueError(f"unsupported policy format {d.get('format')!r}")
        return cls(int(d["k"]), np.array(d["action_of"]), d.get("source_model_id"),
                   d.get("policy_id"), d.get("action_mode", ADD_ONLY))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def extract_policy(qtable: QTable, action_mode: str = ADD_ONLY, policy_id=None) -> AttackPolicy:
    """Greedy policy; ``np.argmax`` already breaks ties toward the lowest action."""
    if not np.all(np.isfinite(qtable.values)):
        raise ValueError("Q-table contains non-finite values")
    return AttackPolicy(qtable.k, np.argmax(qtable.values, axis=1), qtable.source_model_id,
                        policy_id, action_mode)


def fooling_rate(successes: int, total: int) -> float:
    if total <= 0:
        raise EmptySet("fooling rate of an empty sample set is undefined")
    if not 0 <= successes <= total:
        raise ValueError(f"successes={successes} outside [0, {total}]")
    return 100.0 * successes / total


# ----------------------------------------------------------------- reports

@dataclass(frozen=True, eq=False)
class AttackOutcome:
    original: np.ndarray
    final: np.ndarray | None
    n_modified: int
    succeeded: bool
    model_id: str | None
    policy_id: str | None = None

    def __eq__(self, other):
        if not isinstance(other, AttackOutcome):
            return NotImplemented
        same_final = (self.final is None and other.final is None) or (
            self.final is not None and other.final is not None and np.array_equal(self.final, other.final))
        return (np.array_equal(self.original, other.original) and same_final
                and (self.n_modified, self.succeeded, self.model_id, self.policy_id)
                == (other.n_modified, other.succeeded, other.model_id, other.policy_id))

    __hash__ = None

    def to_dict(self):
        return {"original": self.original.tolist(),
                "final": None if self.final is None else self.final.tolist(),
                "n_modified": self.n_modified, "succeeded": self.succeeded,
                "model_id": self.model_id, "policy_id": self.policy_id}

    @classmethod
    def from_dict(cls, d):
        final = None if d["final"] is None else np.array(d["final"], dtype=np.uint8)
        return cls(np.array(d["original"], dtype=np.uint8), final, int(d["n_modified"]),
                   bool(d["succeeded"]), d["model_id"], d.get("policy_id"))


@dataclass(frozen=True)
class AttackReport:
    mode: str
    model_id: str | None
    budget: int
    outcomes: tuple
    fooling_rate: float

    @property
    def n_success(self):
        return sum(o.succeeded for o in self.outcomes)

    def adversarial(self):
        """Successful final vectors, in sample order."""
        return [o.final for o in self.outcomes if o.succeeded]

    def to_dict(self):
        return {"mode": self.mode, "model_id": self.model_id, "budget": self.budget,
                "fooling_rate": self.fooling_rate, "n_samples": len(self.outcomes),
                "n_success": self.n_success, "outcomes": [o.to_dict() for o in self.outcomes]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], d["model_id"], int(d["budget"]),
                   tuple(AttackOutcome.from_dict(o) for o in d["outcomes"]), float(d["fooling_rate"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_id", "mode", "budget", "fooling_rate"])
    for r in reports:
        w.writerow([r.model_id, r.mode, r.budget, repr(float(r.fooling_rate))])
    return buf.getvalue()


# --------------------------------------------------------------- executors

def _benign_lookup(target, k):
    oracle = BenignOracle(target, k)
    if oracle.table is not None:
        return oracle.table.__getitem__
    return lambda idx: target.benign_proba(np.stack([state_bits(i, k) for i in idx]))


@dataclass
class _Rollout:
    succ_at: np.ndarray   # modifications at first success, -1 if never
    stop_at: np.ndarray   # modifications made when the rollout ended
    path: np.ndarray      # (max_budget + 1, n) state indices


def _rollout(policy: AttackPolicy, p_of, starts, max_budget, threshold) -> _Rollout:
    """Vectorized greedy rollouts of one policy from every start state.

    P_b is checked before the first action, so samples the target already
    misses count as successes with zero modifications. A stop action, or in
    add-only mode an action whose bit is already set, ends the rollout.
    """
    add_only = policy.action_mode == ADD_ONLY
    n = len(starts)
    s = starts.astype(np.int64).copy()
    path = np.empty((max_budget + 1, n), dtype=np.int64)
    path[0] = s
    succ_at = np.where(np.asarray(p_of(s)) > threshold, 0, -1)
    stop_at = np.full(n, max_budget, dtype=np.int64)
    stop_at[succ_at == 0] = 0
    active = succ_at < 0
    for step in range(1, max_budget + 1):
        idx = np.flatnonzero(active)
        if len(idx):
            a = policy.action_of[s[idx]]
            bit = np.where(a > 0, np.int64(1) << np.maximum(a - 1, 0), 0)
            ns = (s[idx] | bit) if add_only else (s[idx] ^ bit)
            halted = (a == 0) | (ns == s[idx])
            stop_at[idx[halted]] = step - 1
            active[idx[halted]] = False
            go = idx[~halted]
            s[go] = ns[~halted]
            if len(go):
                won = np.asarray(p_of(s[go])) > threshold
                succ_at[go[won]] = step
                stop_at[go[won]] = step
                active[go[won]] = False
        path[step] = s
    return _Rollout(succ_at, stop_at, path)


def _check_binding(policies, target, malware):
    k = policies[0].k
    if any(p.k != k for p in policies):
        raise VocabularyMismatch("all policies must share the same feature count")
    if malware.n_features != k:
        raise VocabularyMismatch(f"policies act on {k} features, samples have {malware.n_features}")
    n_target = getattr(target, "n_features", k)
    if n_target != k:
        raise VocabularyMismatch(f"policies act on {k} features, target expects {n_target}")
    return k


def attack_curve(policies, target, malware: LabeledDataset, budgets, mode=None,
                 benign_threshold: float = 0.5) -> list:
    """One report per budget, all derived from a single rollout at the largest budget.

    Greedy rollouts are prefix-consistent: the first ``b`` steps of a rollout
    with budget ``B >= b`` are exactly the rollout with budget ``b``.
    """
    policies = list(policies)
    if not policies:
        raise EmptyPolicySet("at least one policy is required")
    budgets = [int(b) for b in budgets]
    if not budgets or min(budgets) < 1:
        raise ValueError("budgets must be at least 1")
    if len(malware) == 0:
        raise EmptySet("no samples to attack")
    mode = mode or (SPA if len(policies) == 1 else MPA)
    _check_binding(policies, target, malware)
    k = policies[0].k
    starts = state_indices(malware.X)
    p_of = _benign_lookup(target, k)
    rolls = [_rollout(p, p_of, starts, max(budgets), benign_threshold) for p in policies]
    succ = np.stack([r.succ_at for r in rolls])          # (n_policies, n)
    model_id = getattr(target, "model_id", None)
    reports = []
    for b in budgets:
        ok = (succ >= 0) & (succ <= b)
        cost = np.where(ok, succ, np.iinfo(np.int64).max)
        winner = np.argmin(cost, axis=0)                 # lowest index among ties
        outcomes = []
        for i in range(len(malware)):
            original = malware.X[i].copy()
            w = int(winner[i])
            if ok[w, i]:
                n_mod = int(succ[w, i])
                final = state_bits(rolls[w].path[n_mod, i], k)
                outcomes.append(AttackOutcome(original, final, n_mod, True, model_id, policies[w].policy_id))
            else:
                n_mod = int(min(rolls[0].stop_at[i], b))
                outcomes.append(AttackOutcome(original, None, n_mod, False, model_id, None))
        n_ok = int(ok.any(axis=0).sum())
        reports.append(AttackReport(mode, model_id, b, tuple(outcomes), fooling_rate(n_ok, len(malware))))
    return reports


def spa_attack(policy: AttackPolicy, target, malware: LabeledDataset, budget: int,
               benign_threshold: float = 0.5) -> AttackReport:
    """Single policy attack: follow one greedy policy for at most ``budget`` modifications."""
    return attack_curve([policy], target, malware, [budget], SPA, benign_threshold)[0]


def mpa_attack(policies, target, malware: LabeledDataset, budget: int,
               benign_threshold: float = 0.5) -> AttackReport:
    """Multiple policy attack: every policy tries each sample; the cheapest success wins."""
    return attack_curve(policies, target, malware, [budget], MPA, benign_threshold)[0]
