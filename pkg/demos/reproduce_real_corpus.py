"""Optional check against a real permission corpus (not run in CI).

    python3 demos/reproduce_real_corpus.py matrix.csv [--folds 10] [--seed 0]

``matrix.csv`` is a 197-permission binary matrix in the dataset CSV format
(one column per name in permevade/data/android_permissions.txt plus
``label``; 1 = malware). The script ranks permissions with a random forest,
keeps the top 10 and cross-validates a random forest on them.
Expected on the published corpus: accuracy 80.95 +/- 3 points and
READ_PHONE_STATE as the most important permission. Exit status 0 iff both hold.
"""
import argparse
import sys

from permevade.core import load_dataset_csv, load_master_vocabulary
from permevade.detectors import DetectorSpec, cross_validate
from permevade.harness import rank_features, ranking_table

TARGET_ACC, TOL = 80.95, 3.0
TARGET_TOP = "android.permission.READ_PHONE_STATE"

ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
ap.add_argument("matrix")
ap.add_argument("--folds", type=int, default=10)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

vocab = load_master_vocabulary()
ds = load_dataset_csv(args.matrix, vocab)      # raises on any missing or extra column
print(f"loaded {len(ds)} apps, classes {ds.class_counts()}, {ds.n_features} permissions")

ranking, reduced, keep = rank_features(ds, 10, "RF", seed=args.seed)
print(ranking_table(ranking, vocab, 10))
acc = 100 * cross_validate(DetectorSpec("RF", seed=args.seed), reduced, args.folds, args.seed).mean_accuracy
top = vocab.names[ranking.order[0]]

acc_ok = abs(acc - TARGET_ACC) <= TOL
top_ok = top == TARGET_TOP
print(f"[{'PASS' if acc_ok else 'FAIL'}] top-10 RF {args.folds}-fold accuracy {acc:.2f}% "
      f"(expect {TARGET_ACC} +/- {TOL})")
print(f"[{'PASS' if top_ok else 'FAIL'}] rank-1 permission {top} (expect {TARGET_TOP})")
sys.exit(0 if acc_ok and top_ok else 1)
