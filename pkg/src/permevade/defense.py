"""Adversarial retraining: fold successful evasions back into training as malware."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .attack.policy import MPA, SPA, AttackReport, attack_curve, mpa_attack, spa_attack
from .core import LabeledDataset, LabeledSample, random_oversample
from .detectors import DetectorSpec, evaluate, train_model


@dataclass(frozen=True)
class Provenance:
    model_id: str | None
    mode: str
    n_modified: int

    def to_dict(self):
        return {"model_id": self.model_id, "mode": self.mode, "n_modified": self.n_modified}


@dataclass
class AdversarialPool:
    """Distinct adversarial vectors, each labeled malware, with every way it was found."""

    k: int
    vectors: list = field(default_factory=list)
    provenance: list = field(default_factory=list)   # one list of Provenance per vector

    def __post_init__(self):
        self._index = {v.tobytes(): i for i, v in enumerate(self.vectors)}

    def __len__(self):
        return len(self.vectors)

    @property
    def samples(self):
        return [LabeledSample(v.copy(), 1) for v in self.vectors]

    def multiplicity(self):
        return np.array([len(p) for p in self.provenance], dtype=np.int64)

    def add(self, vector, prov: Provenance):
        v = np.asarray(vector, dtype=np.uint8)
        key = v.tobytes()
        i = self._index.get(key)
        if i is None:
            self._index[key] = len(self.vectors)
            self.vectors.append(v.copy())
            self.provenance.append([prov])
        else:
            self.provenance[i].append(prov)

    def merge(self, other: "AdversarialPool") -> "AdversarialPool":
        out = AdversarialPool(self.k)
        for pool in (self, other):
            for v, provs in zip(pool.vectors, pool.provenance):
                for p in provs:
                    out.add(v, p)
        return out

    def to_dataset(self, vocabulary, expand=True) -> LabeledDataset:
        """Rows labeled 1; with ``expand`` each vector repeats once per provenance entry."""
        reps = self.multiplicity() if expand else np.ones(len(self), dtype=np.int64)
        if len(self) == 0:
            X = np.zeros((0, self.k), dtype=np.uint8)
        else:
            X = np.repeat(np.stack(self.vectors), reps, axis=0)
        return LabeledDataset(X, np.ones(len(X), dtype=np.uint8), vocabulary)

    def to_dict(self):
        return {"k": self.k,
                "samples": [{"vector": v.tolist(), "label": 1,
                             "provenance": [p.to_dict() for p in provs]}
                            for v, provs in zip(self.vectors, self.provenance)]}


def collect_adversarial(report: AttackReport, pool: AdversarialPool | None = None) -> AdversarialPool:
    """Harvest succeeded outcomes that actually changed the sample.

    Zero-modification successes are already in the training data under
    their true label, so they carry nothing new and are skipped.
    """
    k = len(report.outcomes[0].original) if report.outcomes else (pool.k if pool else 0)
    pool = AdversarialPool(k) if pool is None else pool
    for o in report.outcomes:
        if o.succeeded and o.n_modified > 0 and not np.array_equal(o.final, o.original):
            pool.add(o.final, Provenance(o.model_id, report.mode, o.n_modified))
    return pool


def retrain_with_adversarial(spec: DetectorSpec, base_train: LabeledDataset, pool: AdversarialPool,
                             seed: int = 0, expand: bool = False, model_id=None):
    """Retrain from scratch on ``base_train`` plus the pool, class-balanced by oversampling."""
    augmented = base_train.concat(pool.to_dataset(base_train.vocabulary, expand))
    return train_model(spec, random_oversample(augmented, seed), model_id=model_id)


# ------------------------------------------------------------------ report

@dataclass(frozen=True)
class DefenseRecord:
    model: str
    mode: str
    budget: int
    fr_before: float
    fr_after: float
    acc_before: float
    acc_after: float

    @property
    def relative_reduction(self):
        if self.fr_before == 0:
            return 0.0
        return (self.fr_before - self.fr_after) / self.fr_before


@dataclass(frozen=True)
class DefenseReport:
    records: tuple
    policy_hashes: tuple = ()

    CSV_COLUMNS = ("model", "mode", "budget", "fr_before", "fr_after", "acc_before", "acc_after")

    def select(self, mode=None, budget=None, model=None):
        return [r for r in self.records
                if (mode is None or r.mode == mode) and (budget is None or r.budget == budget)
                and (model is None or r.model == model)]

    def mean_relative_reduction(self, mode=SPA, budget=None):
        rows = self.select(mode, budget)
        return float(np.mean([r.relative_reduction for r in rows])) if rows else 0.0

    def to_dict(self):
        return {"policy_hashes": list(self.policy_hashes),
                "records": [{c: getattr(r, c) for c in self.CSV_COLUMNS} for r in self.records]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(DefenseRecord(**r) for r in d["records"]), tuple(d.get("policy_hashes", ())))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.records:
            w.writerow([r.model, r.mode, r.budget, repr(r.fr_before), repr(r.fr_after),
                        repr(r.acc_before), repr(r.acc_after)])
        return buf.getvalue()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def defense_evaluate(models_before, models_after, policies, malware_test: LabeledDataset, budgets,
                     test_set: LabeledDataset | None = None, modes=(SPA, MPA)) -> DefenseReport:
    """Attack both model generations with the same frozen policies.

    ``policies[i]`` is the SPA policy for ``models_before[i]``; MPA uses all of
    them. ``models_after`` is one list for every mode or a ``{mode: list}``
    mapping when each mode had its own retraining round. Accuracy is measured
    on ``test_set`` (default: ``malware_test``). Records are keyed by the
    *before* model's id so rows pair up.
    """
    models_before, policies = list(models_before), list(policies)
    if not isinstance(models_after, dict):
        models_after = {mode: models_after for mode in modes}
    after_by_mode = {mode: list(models_after[mode]) for mode in modes}
    if any(len(a) != len(models_before) for a in after_by_mode.values()) or len(policies) != len(models_before):
        raise ValueError("models_before, models_after and policies must be aligned")
    budgets = sorted(int(b) for b in budgets)
    hashes = tuple(p.digest() for p in policies)
    acc_set = malware_test if test_set is None else test_set
    records = []
    for i, (before, pol) in enumerate(zip(models_before, policies)):
        acc_b = evaluate(before, acc_set).accuracy
        for mode in modes:
            after = after_by_mode[mode][i]
            acc_a = evaluate(after, acc_set).accuracy
            pols = [pol] if mode == SPA else policies
            rb = attack_curve(pols, before, malware_test, budgets, mode)
            ra = attack_curve(pols, after, malware_test, budgets, mode)
            for b, x, y in zip(budgets, rb, ra):
                records.append(DefenseRecord(before.model_id, mode, b, x.fooling_rate, y.fooling_rate,
                                             acc_b, acc_a))
    if tuple(p.digest() for p in policies) != hashes:
        raise RuntimeError("attack policies changed during defense evaluation")
    return DefenseReport(tuple(records), hashes)


def harvest(models, policies, malware: LabeledDataset, budget: int, mode=SPA) -> list:
    """One pool per model from attacking ``malware`` at ``budget``.

    Rollouts are prefix-consistent, so the largest budget already holds every
    success found at smaller budgets.
    """
    pools = []
    for model, pol in zip(models, policies):
        report = spa_attack(pol, model, malware, budget) if mode == SPA else mpa_attack(policies, model, malware, budget)
        pools.append(collect_adversarial(report, AdversarialPool(malware.n_features)))
    return pools


def adversarial_round(specs, train: LabeledDataset, models, policies, budget: int, mode=SPA,
                      seed: int = 0) -> tuple:
    """Harvest from the training malware, then retrain every detector once.

    Returns ``(retrained_models, pools)``; policies are left untouched.
    """
    pools = harvest(models, policies, train.malware(), budget, mode)
    after = [retrain_with_adversarial(spec, train, pool, seed) for spec, pool in zip(specs, pools)]
    return after, pools
