"""Small builders shared by the test modules."""
import numpy as np

from permevade.attack import FunctionDetector, all_states
from permevade.core import LabeledDataset, make_vocabulary, synth_vocabulary


def make_dataset(X, y, names=None):
    X = np.asarray(X, dtype=np.uint8)
    vocab = make_vocabulary(names) if names else synth_vocabulary(X.shape[1])
    return LabeledDataset(X, np.asarray(y, dtype=np.uint8), vocab)


def malware_pool(X):
    X = np.asarray(X, dtype=np.uint8)
    return make_dataset(X, np.ones(len(X)))


def table_detector(p_table, model_id="table"):
    """Stub detector whose P_b is looked up by state index."""
    p_table = np.asarray(p_table, dtype=float)
    k = int(np.log2(len(p_table)))

    def fn(X):
        return p_table[np.asarray(X, dtype=np.int64) @ (1 << np.arange(X.shape[1]))]

    return FunctionDetector(fn, k, model_id)


def benign_iff(predicate, k, model_id="stub"):
    states = all_states(k)
    return table_detector([1.0 if predicate(s) else 0.0 for s in states], model_id)



# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def record_acceptance(tag, passed, detail):
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    line = f"[{status}] {tag}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed
