"""End-to-end pipeline: data -> feature selection -> detectors -> agents -> attacks -> defense.

Every stage writes into one run directory and a closing ``manifest.json``
lists each artifact with its sha256, so two runs can be compared by manifest.

Seeding: one master seed fans out to per-stage seeds with

    sub_seed(master, stage, key) = first 8 bytes of sha256(f"{master}:{stage}:{key}") >> 1

(big-endian, 63 bits). Stages never share a stream, so changing what one
stage draws cannot perturb another stage's artifacts.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import defense as dfn
from .attack import (MPA, SPA, EnvConfig, attack_curve, extract_policy, reports_to_csv,
                     train_qtable)
from .core import (DEFAULT_SYNTH, LabeledDataset, load_dataset_csv, load_master_vocabulary,
                   reduce_to_features, save_dataset_csv, synth_dataset, train_test_split)
from .detectors import (ALGORITHMS, DetectorSpec, ImportanceRanking, evaluate, feature_importance,
                        save_model, select_top_k, train_model)
from .errors import ConfigError, PermEvadeError, StageError
from .manifest import ingest_corpus
from .report import emit_defense_report, emit_report

log = logging.getLogger(__name__)

OUTPUT_ENV = "PERMEVADE_OUTPUT"
MODES = (SPA, MPA)


def sub_seed(master: int, stage: str, key="") -> int:
    digest = hashlib.sha256(f"{master}:{stage}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "."))


def resolve_output(path) -> Path:
    """Relative output paths live under ``$PERMEVADE_OUTPUT`` (default: cwd)."""
    p = Path(path)
    return p if p.is_absolute() else output_root() / p


@dataclass
class RunConfig:
    """Pipeline configuration; serialized as JSON.

    ``dataset`` is one of
      ``{"type": "synth", <SynthSpec fields>}``,
      ``{"type": "csv", "path": ...}`` or
      ``{"type": "manifests", "malware_dir": ..., "benign_dir": ..., "vocabulary": optional}``.
    """

    dataset: dict = field(default_factory=lambda: {"type": "synth"})
    feature_k: int = 10
    rank_algorithm: str = "RF"
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    hyperparameters: dict = field(default_factory=dict)
    env: EnvConfig = field(default_factory=EnvConfig)
    episodes: int = 100_000
    epsilon: tuple = (1.0, 0.05)
    budgets: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    modes: list = field(default_factory=lambda: list(MODES))
    defense: bool = True
    test_fraction: float = 0.2
    seed: int = 0
    output_dir: str = "run"

    def __post_init__(self):
        self.validate()

    def validate(self):
        b = list(self.budgets)
        if not b:
            raise ConfigError("budgets must not be empty")
        if any(x < 1 for x in b) or any(y <= x for x, y in zip(b, b[1:])):
            raise ConfigError(f"budgets must be strictly increasing positive integers, got {b}")
        if self.feature_k < 1:
            raise ConfigError("feature_k must be at least 1")
        if not self.algorithms or any(a not in ALGORITHMS for a in self.algorithms):
            raise ConfigError(f"algorithms must be a non-empty subset of {ALGORITHMS}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("algorithms must not repeat")
        if not self.modes or any(m not in MODES for m in self.modes):
            raise ConfigError(f"modes must be a non-empty subset of {MODES}")
        if self.rank_algorithm not in ("RF", "DT", "ET", "AB", "GB"):
            raise ConfigError("rank_algorithm must be a tree-based detector")
        if self.episodes < 1:
            raise ConfigError("episodes must be positive")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.dataset.get("type") not in ("synth", "csv", "manifests"):
            raise ConfigError(f"unknown dataset type {self.dataset.get('type')!r}")

    def to_dict(self, include_output=True):
        d = {"dataset": dict(self.dataset), "feature_k": self.feature_k,
                "rank_algorithm": self.rank_algorithm, "algorithms": list(self.algorithms),
                "hyperparameters": self.hyperparameters, "env": self.env.to_dict(),
                "episodes": self.episodes, "epsilon": list(self.epsilon), "budgets": list(self.budgets),
                "modes": list(self.modes), "defense": self.defense, "test_fraction": self.test_fraction,
                "seed": self.seed}
        if include_output:
            d["output_dir"] = self.output_dir
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "env" in d:
            try:
                d["env"] = EnvConfig.from_dict(d["env"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad env section: {exc}") from exc
        if "epsilon" in d:
            d["epsilon"] = tuple(d["epsilon"])
        if "modes" in d:
            d["modes"] = [m.upper() for m in d["modes"]]
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# ------------------------------------------------------------------ helpers

def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _at(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir: Path, config: RunConfig, status="complete", failed_stage=None) -> Path:
    files = sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    artifacts = [{"path": p.relative_to(run_dir).as_posix(), "sha256": file_sha256(p),
                  "bytes": p.stat().st_size} for p in files]
    manifest = {"format": "permevade.manifest/1", "status": status, "failed_stage": failed_stage,
                "config": config.to_dict(include_output=False), "artifacts": artifacts}
    path = run_dir / "manifest.json"
    _write_json(path, manifest)
    return path


def load_source_dataset(source: dict) -> LabeledDataset:
    """Materialize the ``dataset`` section of a :class:`RunConfig`; synth fields override the default corpus."""
    kind = source.get("type")
    if kind == "synth":
        fields = {k: v for k, v in source.items() if k != "type"}
        if "strength" in fields:
            fields["strength"] = tuple(fields["strength"])
        try:
            spec = replace(DEFAULT_SYNTH, **fields)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synth dataset section: {exc}") from exc
        return synth_dataset(spec)
    if kind == "csv":
        return load_dataset_csv(source["path"])
    if kind == "manifests":
        vocab = load_master_vocabulary(source.get("vocabulary"))
        mal = ingest_corpus(source["malware_dir"], vocab, label=1)
        ben = ingest_corpus(source["benign_dir"], vocab, label=0)
        return ben.dataset.concat(mal.dataset)
    raise ConfigError(f"unknown dataset type {kind!r}")


def rank_features(dataset: LabeledDataset, k: int, algorithm="RF", seed=0):
    """Rank by tree importance; keep the top ``k`` columns in their original order.

    With ``k`` equal to the feature count the dataset is returned unchanged.
    """
    model = train_model(DetectorSpec(algorithm, seed=seed), dataset)
    ranking = feature_importance(model)
    if k == dataset.n_features:
        return ranking, dataset, list(range(k))
    keep = sorted(select_top_k(ranking, k))
    return ranking, reduce_to_features(dataset, keep), keep


def ranking_table(ranking: ImportanceRanking, vocabulary, k=None) -> str:
    """Human-readable ranked list: rank, permission, importance."""
    rows = ranking.order if k is None else ranking.order[:k]
    width = max(len(vocabulary.names[i]) for i in rows)
    lines = [f"{'Rank':<5} {'Permission':<{width}}  Importance"]
    for r, i in enumerate(rows, 1):
        lines.append(f"{r:<5} {vocabulary.names[i]:<{width}}  {ranking.scores[i]:.6f}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- pipeline

class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


def run_pipeline(config: RunConfig, run_dir=None) -> Path:
    """Run every stage and return the run directory.

    On failure a :class:`StageError` names the stage; artifacts written so far
    stay on disk and the manifest records the failure.
    """
    config.validate()
    run_dir = resolve_output(run_dir or config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    # the output location is left out so identical runs in different places hash alike
    _write_json(run_dir / "run_config.json", config.to_dict(include_output=False))
    stage = None
    try:
        with _Stage("data") as stage:
            data = load_source_dataset(config.dataset)
            save_dataset_csv(data, _at(run_dir / "data" / "dataset.csv"))

        with _Stage("rank-features") as stage:
            if config.feature_k > data.n_features:
                raise ConfigError(f"feature_k={config.feature_k} exceeds {data.n_features} features")
            ranking, reduced, keep = rank_features(data, config.feature_k, config.rank_algorithm,
                                                   sub_seed(config.seed, "rank"))
            _write_json(run_dir / "data" / "ranking.json",
                        {**ranking.to_dict(data.vocabulary), "selected": keep})
            _write_text(run_dir / "data" / "ranking.txt", ranking_table(ranking, data.vocabulary, config.feature_k))
            save_dataset_csv(reduced, _at(run_dir / "data" / "reduced.csv"))
            train, test = train_test_split(reduced, config.test_fraction, sub_seed(config.seed, "split"))
            save_dataset_csv(train, _at(run_dir / "data" / "train.csv"))
            save_dataset_csv(test, _at(run_dir / "data" / "test.csv"))

        with _Stage("train") as stage:
            specs, models, metrics = [], [], {}
            for alg in config.algorithms:
                spec = DetectorSpec(alg, config.hyperparameters.get(alg, {}),
                                    sub_seed(config.seed, "train", alg) % (2 ** 32))
                model = train_model(spec, train, model_id=alg)
                specs.append(spec)
                models.append(model)
                metrics[alg] = evaluate(model, test).to_dict()
                save_model(model, _at(run_dir / "models" / f"{alg}.json"))
            _write_json(run_dir / "models" / "metrics.json", metrics)

        with _Stage("agents") as stage:
            policies = []
            for alg, model in zip(config.algorithms, models):
                res = train_qtable(config.env, model, train.malware(), config.episodes, config.epsilon,
                                   sub_seed(config.seed, "agent", alg), source_model_id=alg)
                res.qtable.save(_at(run_dir / "agents" / f"{alg}.qtable.json"))
                policy = extract_policy(res.qtable, config.env.action_mode, policy_id=f"pi-{alg}")
                policy.save(_at(run_dir / "agents" / f"{alg}.policy.json"))
                policies.append(policy)

        with _Stage("attack") as stage:
            malware_test = test.malware()
            reports = []
            for mode in config.modes:
                for alg, model, pol in zip(config.algorithms, models, policies):
                    pols = [pol] if mode == SPA else policies
                    for r in attack_curve(pols, model, malware_test, config.budgets, mode,
                                          config.env.benign_threshold):
                        r.save(_at(run_dir / "attacks" / f"{alg}_{mode}_b{r.budget}.json"))
                        reports.append(r)
            _write_text(run_dir / "attacks" / "summary.csv", reports_to_csv(reports))

        with _Stage("report") as stage:
            acc = {alg: metrics[alg]["accuracy"] for alg in config.algorithms}
            emit_report(reports, "csv", run_dir / "reports", accuracies=acc)
            emit_report(reports, "svg", run_dir / "reports", accuracies=acc)

        if config.defense:
            with _Stage("defend") as stage:
                after = {}
                for mode in config.modes:
                    retrained, pools = dfn.adversarial_round(specs, train, models, policies,
                                                             max(config.budgets), mode,
                                                             sub_seed(config.seed, "defend", mode) % (2 ** 32))
                    after[mode] = []
                    for alg, m, pool in zip(config.algorithms, retrained, pools):
                        m.model_id = f"{alg}+adv-{mode}"
                        save_model(m, _at(run_dir / "defense" / mode / f"{alg}.json"))
                        _write_json(run_dir / "defense" / mode / f"{alg}.pool.json", pool.to_dict())
                        after[mode].append(m)
                report = dfn.defense_evaluate(models, after, policies, test.malware(), config.budgets,
                                              test, modes=tuple(config.modes))
                report.save(run_dir / "defense" / "report.json")
                _write_text(run_dir / "defense" / "report.csv", report.to_csv())
                emit_defense_report(report, run_dir / "reports")
    except StageError as exc:
        write_manifest(run_dir, config, status="failed", failed_stage=exc.stage)
        raise
    except PermEvadeError as exc:   # pragma: no cover - stages wrap everything
        write_manifest(run_dir, config, status="failed", failed_stage=getattr(stage, "name", None))
        raise StageError(getattr(stage, "name", "unknown"), exc) from exc
    write_manifest(run_dir, config)
    return run_dir
