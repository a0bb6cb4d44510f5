import io
import json

import numpy as np
import pytest

from permevade.attack import (MPA, SPA, AttackOutcome, AttackPolicy, AttackReport, EnvConfig, all_states,
                              extract_policy, spa_attack, train_qtable)
from permevade.core import (SynthSpec, dataset_to_csv_bytes, random_oversample, synth_dataset,
                            synth_vocabulary)
from permevade.defense import (AdversarialPool, DefenseReport, Provenance, adversarial_round,
                               collect_adversarial, defense_evaluate, harvest, retrain_with_adversarial)
from permevade.detectors import DetectorSpec, evaluate, train_model

from helpers import make_dataset


def outcome(orig, final, n, ok, model="m"):
    return AttackOutcome(np.array(orig, np.uint8), None if final is None else np.array(final, np.uint8),
                         n, ok, model, "pi" if ok else None)


def report(outcomes, mode=SPA):
    n_ok = sum(o.succeeded for o in outcomes)
    return AttackReport(mode, "m", 3, tuple(outcomes), 100 * n_ok / len(outcomes))


# ---------------------------------------------------------------- harvest


def test_collect_three_successes_two_failures():
    outs = [outcome([0, 0, 0], [1, 0, 0], 1, True), outcome([0, 0, 0], [0, 1, 0], 1, True),
            outcome([0, 1, 0], [1, 1, 1], 2, True), outcome([0, 0, 1], None, 3, False),
            outcome([1, 0, 0], None, 3, False)]
    pool = collect_adversarial(report(outs))
    assert len(pool) <= 3
    assert len(pool) == 3
    assert all(s.label == 1 for s in pool.samples)


def test_collect_no_successes():
    pool = collect_adversarial(report([outcome([0, 0], None, 2, False)]))
    assert len(pool) == 0
    assert pool.to_dataset(synth_vocabulary(2)).X.shape == (0, 2)


def test_collect_dedups_with_merged_provenance():
    outs = [outcome([0, 0, 0], [1, 1, 0], 2, True, "a"), outcome([0, 1, 0], [1, 1, 0], 1, True, "a")]
    pool = collect_adversarial(report(outs))
    assert len(pool) == 1
    assert [p.n_modified for p in pool.provenance[0]] == [2, 1]
    assert pool.multiplicity().tolist() == [2]


def test_collect_skips_unmodified_successes():
    pool = collect_adversarial(report([outcome([1, 0], [1, 0], 0, True)]))
    assert len(pool) == 0


def test_pool_merge_and_dataset_expansion():
    a = AdversarialPool(2)
    a.add([1, 0], Provenance("x", SPA, 1))
    b = AdversarialPool(2)
    b.add([1, 0], Provenance("y", MPA, 1))
    b.add([1, 1], Provenance("y", MPA, 2))
    m = a.merge(b)
    assert len(m) == 2
    assert len(m.to_dataset(synth_vocabulary(2), expand=True)) == 3
    flat = m.to_dataset(synth_vocabulary(2), expand=False)
    assert len(flat) == 2 and np.all(flat.y == 1)
    assert m.to_dict()["samples"][0]["provenance"][1]["model_id"] == "y"


# ---------------------------------------------------------------- toy world
#
# Benign apps request feature 0 and never feature 1; malware requests feature 1
# and never feature 0. A stump on feature 0 is fooled by adding feature 0, but
# the adversarial vectors (both bits set) are separable from benign ones.

@pytest.fixture()
def toy():
    rng = np.random.default_rng(0)
    tail = rng.integers(0, 2, (40, 1))
    benign = np.column_stack([np.ones(20), np.zeros(20), tail[:20]])
    malware = np.column_stack([np.zeros(20), np.ones(20), tail[20:]])
    train = make_dataset(np.vstack([benign, malware]), [0] * 20 + [1] * 20)
    spec = DetectorSpec("DT", {"max_depth": 1})
    model = train_model(spec, train, model_id="stump")
    assert model.estimator.tree_.feature[0] == 0
    policy = AttackPolicy(3, np.array([0 if s[0] else 1 for s in all_states(3)]), "stump", "pi-stump")
    return spec, train, model, policy


def test_retrained_detector_catches_adversarial_vectors(toy):
    spec, train, model, policy = toy
    rep = spa_attack(policy, model, train.malware(), 1)
    assert rep.fooling_rate == 100.0
    pool = collect_adversarial(rep)
    assert len(pool) == 2     # [1,1,0] and [1,1,1]
    after = retrain_with_adversarial(spec, train, pool, seed=0)
    assert np.all(after.benign_proba(np.stack(pool.vectors)) <= 0.5)


def test_defense_lowers_fooling_rate_on_toy(toy):
    spec, train, model, policy = toy
    after, pools = adversarial_round([spec], train, [model], [policy], 1, SPA, seed=0)
    rep = defense_evaluate([model], after, [policy], train.malware(), [1], train, modes=(SPA,))
    r = rep.records[0]
    assert r.fr_after < r.fr_before
    assert (r.fr_before, r.fr_after) == (100.0, 0.0)
    assert r.relative_reduction == 1.0


def test_retrain_balances_classes(toy):
    spec, train, model, policy = toy
    pool = collect_adversarial(spa_attack(policy, model, train.malware(), 1))
    after = retrain_with_adversarial(spec, train, pool, seed=3)
    c0, c1 = after.training_log["class_counts"]
    assert c0 == c1 == 22


def test_retrain_with_empty_pool_matches_plain_training(small_synth):
    spec = DetectorSpec("RF", {"n_estimators": 10}, seed=2)
    a = retrain_with_adversarial(spec, small_synth, AdversarialPool(small_synth.n_features), seed=1)
    b = train_model(spec, random_oversample(small_synth, 1))
    probe = all_states(small_synth.n_features)
    assert np.array_equal(a.benign_proba(probe), b.benign_proba(probe))


# ------------------------------------------------------------- evaluation


@pytest.fixture(scope="module")
def trained(small_synth_module):
    ds = small_synth_module
    models, policies = [], []
    for alg in ("DT", "LR"):
        m = train_model(DetectorSpec(alg, seed=1), ds, model_id=alg)
        q = train_qtable(EnvConfig(), m, ds.malware(), 3000, seed=4).qtable
        models.append(m)
        policies.append(extract_policy(q, policy_id=f"pi-{alg}"))
    return ds, models, policies


@pytest.fixture(scope="module")
def small_synth_module():
    return synth_dataset(SynthSpec(80, 80, 6, 4, 0.05, seed=21))


def test_identical_models_give_zero_delta(trained):
    ds, models, policies = trained
    rep = defense_evaluate(models, models, policies, ds.malware(), [1, 2, 3], ds)
    assert len(rep.records) == len(models) * 2 * 3
    for r in rep.records:
        assert r.fr_before == r.fr_after
        assert r.acc_before == r.acc_after
        assert 0 <= r.fr_before <= 100 and 0 <= r.acc_before <= 1


def test_empty_pool_leaves_rates_unchanged(trained):
    ds, models, policies = trained
    specs = [m.spec for m in models]
    balanced = random_oversample(ds, 0)
    after = [retrain_with_adversarial(s, balanced, AdversarialPool(ds.n_features), seed=0) for s in specs]
    rep = defense_evaluate(models, after, policies, ds.malware(), [1, 2])
    assert all(r.fr_before == r.fr_after for r in rep.records)


def test_policies_frozen_and_test_split_untouched(trained):
    ds, models, policies = trained
    before_hashes = [p.digest() for p in policies]
    test_bytes = dataset_to_csv_bytes(ds)
    after, pools = adversarial_round([m.spec for m in models], ds, models, policies, 5, MPA, seed=0)
    rep = defense_evaluate(models, {MPA: after}, policies, ds.malware(), [5], ds, modes=(MPA,))
    assert list(rep.policy_hashes) == before_hashes == [p.digest() for p in policies]
    assert dataset_to_csv_bytes(ds) == test_bytes
    for pool in pools:
        for v, provs in zip(pool.vectors, pool.provenance):
            assert all(p.mode == MPA and p.n_modified >= 1 for p in provs)


def test_harvest_modes(trained):
    ds, models, policies = trained
    spa = harvest(models, policies, ds.malware(), 5, SPA)
    mpa = harvest(models, policies, ds.malware(), 5, MPA)
    assert len(spa) == len(mpa) == 2
    for pools, mode in ((spa, SPA), (mpa, MPA)):
        for model, pool in zip(models, pools):
            assert all(p.mode == mode and p.model_id == model.model_id for provs in pool.provenance for p in provs)
            # every harvested vector fools the model it was harvested from
            if len(pool):
                assert np.all(model.benign_proba(np.stack(pool.vectors)) > 0.5)


def test_misaligned_inputs(trained):
    ds, models, policies = trained
    with pytest.raises(ValueError):
        defense_evaluate(models, models[:1], policies, ds.malware(), [1])


def test_defense_report_serialization(tmp_path, trained):
    ds, models, policies = trained
    rep = defense_evaluate(models, models, policies, ds.malware(), [1, 2], ds)
    rep.save(tmp_path / "d.json")
    back = DefenseReport.from_dict(json.loads((tmp_path / "d.json").read_text()))
    assert back == rep
    rows = list(io.StringIO(rep.to_csv()))
    assert rows[0].strip() == "model,mode,budget,fr_before,fr_after,acc_before,acc_after"
    assert len(rows) == 1 + 2 * 2 * 2
    assert rep.select(SPA, 2, "DT")[0].model == "DT"
    assert rep.mean_relative_reduction(SPA) == 0.0


def test_accuracy_measured_on_test_split(trained):
    ds, models, policies = trained
    rep = defense_evaluate(models, models, policies, ds.malware(), [1], ds, modes=(SPA,))
    assert rep.records[0].acc_before == evaluate(models[0], ds).accuracy
