"""Walk through one attack/defense cycle on the synthetic corpus.

    python3 demos/attack_and_defend.py [--episodes 20000] [--seed 0]

Trains a decision tree and a gradient-boosting detector, learns an evasion
policy against each, attacks with SPA and MPA over budgets 1-5, then runs
one adversarial-retraining round and re-attacks with the frozen policies.
"""
import argparse

from permevade.attack import EnvConfig, attack_curve, extract_policy, train_qtable
from permevade.core import DEFAULT_SYNTH, split_kfold, synth_dataset
from permevade.defense import adversarial_round, defense_evaluate
from permevade.detectors import DetectorSpec, evaluate, train_model

ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
ap.add_argument("--episodes", type=int, default=20_000)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

ds = synth_dataset(DEFAULT_SYNTH)
folds = split_kfold(ds, 5, seed=args.seed)
train, test = ds.take(folds.train_indices(0)), ds.take(folds.test_indices(0))
print(f"corpus: {ds.class_counts()} over {ds.n_features} permissions; train {len(train)}, test {len(test)}")

specs = [DetectorSpec("DT", seed=args.seed), DetectorSpec("GB", seed=args.seed)]
models = [train_model(s, train, model_id=s.algorithm) for s in specs]
for m in models:
    print(f"  {m.model_id}: test accuracy {evaluate(m, test).accuracy:.3f}")

# one agent per detector, trained on the training malware only
policies = []
for m in models:
    q = train_qtable(EnvConfig(), m, train.malware(), args.episodes, seed=args.seed).qtable
    policies.append(extract_policy(q, policy_id=f"pi-{m.model_id}"))

budgets = [1, 2, 3, 4, 5]
print("\nfooling rate (%) on test malware, budgets", budgets)
for i, m in enumerate(models):
    spa = [r.fooling_rate for r in attack_curve([policies[i]], m, test.malware(), budgets)]
    mpa = [r.fooling_rate for r in attack_curve(policies, m, test.malware(), budgets)]
    print(f"  {m.model_id} SPA " + " ".join(f"{v:5.1f}" for v in spa))
    print(f"  {m.model_id} MPA " + " ".join(f"{v:5.1f}" for v in mpa))

after, pools = adversarial_round(specs, train, models, policies, max(budgets), "SPA", seed=args.seed)
print("\nadversarial pool sizes:", {m.model_id: len(p) for m, p in zip(models, pools)})
rep = defense_evaluate(models, {"SPA": after}, policies, test.malware(), [5], test, modes=("SPA",))
print("after one retraining round (SPA, budget 5):")
for r in rep.records:
    print(f"  {r.model}: FR {r.fr_before:5.1f} -> {r.fr_after:5.1f}   accuracy {r.acc_before:.3f} -> {r.acc_after:.3f}")
