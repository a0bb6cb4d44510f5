"""Permission vocabularies, binary feature matrices and labeled datasets.

Rows are apps, columns are permissions, cells are 0/1. Label 1 is malware,
label 0 is benign. Everything here is immutable once built: arrays are
marked read-only and operations return new objects.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    DuplicatePermission,
    EmptyVocabulary,
    IndexOutOfRange,
    InsufficientData,
    MalformedCell,
    SingleClassDataset,
    VocabularyMismatch,
)

MALWARE = 1
BENIGN = 0


def _frozen(a, dtype=np.uint8):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Vocabulary:
    names: tuple
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(self.names)
        if not names:
            raise EmptyVocabulary("vocabulary needs at least one permission name")
        index = {}
        for i, name in enumerate(names):
            if not isinstance(name, str) or not name:
                raise ValueError(f"permission name at position {i} is empty or not a string")
            if name in index:
                raise DuplicatePermission(name)
            index[name] = i
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "_index", index)

    @property
    def size(self):
        return len(self.names)

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name):
        return name in self._index

    def index(self, name):
        return self._index[name]

    def subset(self, indices):
        return Vocabulary(tuple(self.names[i] for i in indices))


def make_vocabulary(names: Iterable[str]) -> Vocabulary:
    return Vocabulary(tuple(names))


def load_master_vocabulary(path=None) -> Vocabulary:
    """Read a one-name-per-line permission list. Defaults to the bundled Android list."""
    if path is None:
        text = resources.files("permevade.data").joinpath("android_permissions.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return make_vocabulary(line.strip() for line in text.splitlines() if line.strip())


def save_vocabulary(vocabulary: Vocabulary, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(name + "\n" for name in vocabulary.names)


class LabeledSample(NamedTuple):
    vector: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Binary permission matrix ``X`` (n x k), labels ``y`` and the shared vocabulary."""

    X: np.ndarray
    y: np.ndarray
    vocabulary: Vocabulary

    def __post_init__(self):
        X = np.asarray(self.X)
        y = np.asarray(self.y)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, self.vocabulary.size)
        if X.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if X.shape[1] != self.vocabulary.size:
            raise VocabularyMismatch(
                f"matrix has {X.shape[1]} columns, vocabulary has {self.vocabulary.size}")
        if y.shape != (X.shape[0],):
            raise ValueError("label vector length must equal number of rows")
        if X.size and not np.isin(X, (0, 1)).all():
            raise ValueError("feature cells must be 0 or 1")
        if y.size and not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))

    def __len__(self):
        return self.X.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.vocabulary.names == other.vocabulary.names
                and np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y))

    @property
    def n_features(self):
        return self.vocabulary.size

    @property
    def samples(self) -> list:
        return [LabeledSample(self.X[i], int(self.y[i])) for i in range(len(self))]

    def __iter__(self) -> Iterator[LabeledSample]:
        return iter(self.samples)

    def class_counts(self):
        n_mal = int(self.y.sum())
        return {BENIGN: len(self) - n_mal, MALWARE: n_mal}

    def malware(self) -> "LabeledDataset":
        """The malware subset M."""
        return self.take(np.flatnonzero(self.y == MALWARE))

    def benign(self) -> "LabeledDataset":
        return self.take(np.flatnonzero(self.y == BENIGN))

    def take(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.intp)
        return LabeledDataset(self.X[rows], self.y[rows], self.vocabulary)

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        if other.vocabulary.names != self.vocabulary.names:
            raise VocabularyMismatch("cannot concatenate datasets over different vocabularies")
        return LabeledDataset(np.vstack([self.X, other.X]),
                              np.concatenate([self.y, other.y]), self.vocabulary)


def _check_both_classes(dataset):
    counts = dataset.class_counts()
    if counts[BENIGN] == 0 or counts[MALWARE] == 0:
        raise SingleClassDataset(f"need both classes, got {counts}")
    return counts


# ---------------------------------------------------------------- CSV I/O

def save_dataset_csv(dataset: LabeledDataset, dest):
    """Write ``label,<perm...>`` CSV with LF line endings. ``dest`` is a path or text stream."""
    lines = [",".join(("label",) + dataset.vocabulary.names)]
    for row, label in zip(dataset.X, dataset.y):
        lines.append(",".join([str(int(label))] + [str(int(v)) for v in row]))
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        dest.write(text)


def dataset_to_csv_bytes(dataset: LabeledDataset) -> bytes:
    buf = io.StringIO()
    save_dataset_csv(dataset, buf)
    return buf.getvalue().encode("utf-8")


def _parse_bit(value, row, col):
    if value == "0":
        return 0
    if value == "1":
        return 1
    raise MalformedCell(row, col, value)


def load_dataset_csv(source, vocabulary: Vocabulary | None = None) -> LabeledDataset:
    """Load a dataset CSV from a path, a byte stream or a text stream.

    When ``vocabulary`` is given, columns are reordered to match it; any
    missing or extra permission column raises VocabularyMismatch.
    Row numbers in MalformedCell are 1-based data rows (header excluded).
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    else:
        raw = source.read()
    text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise VocabularyMismatch("empty CSV: missing header") from None
    if not header or header[0] != "label":
        raise VocabularyMismatch("first header column must be 'label'")
    columns = header[1:]
    file_vocab = make_vocabulary(columns)
    if vocabulary is None:
        vocabulary = file_vocab
        order = np.arange(len(columns))
    else:
        if set(columns) != set(vocabulary.names):
            missing = sorted(set(vocabulary.names) - set(columns))[:5]
            extra = sorted(set(columns) - set(vocabulary.names))[:5]
            raise VocabularyMismatch(f"header/vocabulary mismatch: missing {missing}, extra {extra}")
        order = np.array([file_vocab.index(name) for name in vocabulary.names], dtype=np.intp)

    rows, labels = [], []
    for r, record in enumerate(reader, start=1):
        if not record:
            continue
        if len(record) != len(header):
            raise VocabularyMismatch(f"row {r} has {len(record)} cells, header has {len(header)}")
        labels.append(_parse_bit(record[0].strip(), r, 0))
        rows.append([_parse_bit(v.strip(), r, c) for c, v in enumerate(record[1:], start=1)])
    X = np.array(rows, dtype=np.uint8).reshape(len(rows), len(columns))
    return LabeledDataset(X[:, order], np.array(labels, dtype=np.uint8), vocabulary)


# ------------------------------------------------------------ splitting

@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray
    k: int

    def __post_init__(self):
        object.__setattr__(self, "fold_of", _frozen(self.fold_of, dtype=np.intp))

    def __eq__(self, other):
        return (isinstance(other, FoldAssignment) and self.k == other.k
                and np.array_equal(self.fold_of, other.fold_of))

    def test_indices(self, fold):
        return np.flatnonzero(self.fold_of == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.fold_of != fold)

    def sizes(self):
        return np.bincount(self.fold_of, minlength=self.k)


def split_kfold(dataset: LabeledDataset, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Stratified k-fold assignment.

    Each class is shuffled, the shuffled classes are concatenated and folds
    are dealt round-robin along that sequence, so fold sizes differ by at
    most one and every fold gets floor/ceil of each class's share.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    counts = dataset.class_counts()
    if min(counts.values()) < k:
        raise InsufficientData(f"need at least {k} samples per class, got {counts}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(dataset.y == c)) for c in (MALWARE, BENIGN)])
    fold_of = np.empty(len(dataset), dtype=np.intp)
    fold_of[order] = np.arange(len(order)) % k
    return FoldAssignment(fold_of, k)


def train_test_split(dataset: LabeledDataset, test_fraction: float = 0.2, seed: int = 0):
    """Stratified holdout split; returns ``(train, test)``."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    _check_both_classes(dataset)
    rng = np.random.default_rng(seed)
    test_rows = []
    for c in (MALWARE, BENIGN):
        idx = rng.permutation(np.flatnonzero(dataset.y == c))
        n_test = max(1, int(round(test_fraction * len(idx))))
        if n_test >= len(idx):
            raise InsufficientData(f"class {c} too small for a {test_fraction:.0%} test split")
        test_rows.append(idx[:n_test])
    test_rows = np.sort(np.concatenate(test_rows))
    mask = np.zeros(len(dataset), dtype=bool)
    mask[test_rows] = True
    return dataset.take(np.flatnonzero(~mask)), dataset.take(test_rows)


def random_oversample(dataset: LabeledDataset, seed: int = 0) -> LabeledDataset:
    """Duplicate minority-class rows (with replacement) until both classes are equal.

    Original rows keep their order; duplicates are appended at the end.
    """
    counts = _check_both_classes(dataset)
    if counts[BENIGN] == counts[MALWARE]:
        return dataset
    minority = MALWARE if counts[MALWARE] < counts[BENIGN] else BENIGN
    deficit = abs(counts[BENIGN] - counts[MALWARE])
    rng = np.random.default_rng(seed)
    extra = rng.choice(np.flatnonzero(dataset.y == minority), size=deficit, replace=True)
    rows = np.concatenate([np.arange(len(dataset)), extra])
    return dataset.take(rows)


def reduce_to_features(dataset: LabeledDataset, indices: Sequence[int]) -> LabeledDataset:
    indices = [int(i) for i in indices]
    if not indices:
        raise IndexOutOfRange("need at least one feature index")
    if len(set(indices)) != len(indices):
        raise IndexOutOfRange(f"duplicate feature indices in {indices}")
    bad = [i for i in indices if not 0 <= i < dataset.n_features]
    if bad:
        raise IndexOutOfRange(f"feature indices {bad} outside [0, {dataset.n_features})")
    return LabeledDataset(dataset.X[:, indices], dataset.y, dataset.vocabulary.subset(indices))


# ------------------------------------------------------------ synthetic data

@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic permission corpus.

    The first ``informative`` features carry label signal: even-indexed ones
    are requested more often by malware, odd-indexed ones more often by benign
    apps. For such a feature with strength ``s`` (drawn from ``strength``) and
    base rate ``b`` the indicated class sets the bit with probability
    b + s(1-b) and the other class with b(1-s); ``b = 0.5`` gives the
    symmetric (1+s)/2 vs (1-s)/2. A low base rate mimics real permission
    data, where most apps request few permissions and class-indicative ones
    are rare outside their class. Remaining features are fair coins. Every
    bit is then flipped with probability ``noise``. ``strength=(1, 1)`` with
    ``noise=0`` makes each informative bit a deterministic copy of the label
    (or its complement).
    """

    n_benign: int
    n_malware: int
    k: int
    informative: int
    noise: float = 0.05
    seed: int = 0
    strength: tuple = (0.3, 0.6)
    base_rate: float = 0.5

    def __post_init__(self):
        if self.n_benign <= 0 or self.n_malware <= 0 or self.k <= 0:
            raise ValueError("sample and feature counts must be positive")
        if not 0 <= self.informative <= self.k:
            raise ValueError("informative must lie in [0, k]")
        if not 0 <= self.noise < 1:
            raise ValueError("noise must lie in [0, 1)")
        lo, hi = self.strength
        if not 0 < lo <= hi <= 1:
            raise ValueError("strength must satisfy 0 < lo <= hi <= 1")
        if not 0 < self.base_rate < 1:
            raise ValueError("base_rate must lie in (0, 1)")


def synth_vocabulary(k: int) -> Vocabulary:
    return make_vocabulary(f"perm_{i:03d}" for i in range(k))


def synth_dataset(spec: SynthSpec) -> LabeledDataset:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_benign + spec.n_malware
    y = np.zeros(n, dtype=np.uint8)
    y[rng.permutation(n)[: spec.n_malware]] = MALWARE

    p_mal = np.full(spec.k, 0.5)
    p_ben = np.full(spec.k, 0.5)
    s = rng.uniform(*spec.strength, size=spec.informative)
    for j in range(spec.informative):
        b = spec.base_rate
        hi, lo = b + s[j] * (1 - b), b * (1 - s[j])
        if j % 2 == 0:
            p_mal[j], p_ben[j] = hi, lo
        else:
            p_mal[j], p_ben[j] = lo, hi
    p = np.where(y[:, None] == MALWARE, p_mal, p_ben)
    X = (rng.random((n, spec.k)) < p).astype(np.uint8)
    if spec.noise > 0:
        X ^= (rng.random((n, spec.k)) < spec.noise).astype(np.uint8)
    return LabeledDataset(X, y, synth_vocabulary(spec.k))


# Sparse, Drebin-like default: informative permissions are rare outside the
# class they indicate and four columns carry no signal.
DEFAULT_SYNTH = SynthSpec(n_benign=200, n_malware=200, k=10, informative=6, noise=0.05, seed=20200,
                          strength=(0.4, 0.8), base_rate=0.2)
