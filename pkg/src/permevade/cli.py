"""Command-line entry point: ``permevade <subcommand> ...``.

Relative output paths are placed under ``$PERMEVADE_OUTPUT`` when set.
Exit status is 0 on success, 1 when a stage fails and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import defense as dfn
from .attack import (SPA, AttackPolicy, AttackReport, EnvConfig, attack_curve, extract_policy,
                     reports_to_csv, train_qtable)
from .core import (DEFAULT_SYNTH, SynthSpec, load_dataset_csv, load_master_vocabulary,
                   save_dataset_csv, synth_dataset)
from .detectors import (ALGORITHMS, DetectorSpec, cross_validate, evaluate, load_model, save_model,
                        train_model)
from .errors import PermEvadeError, StageError
from .harness import (RunConfig, _write_json, _write_text, rank_features, ranking_table,
                      resolve_output, run_pipeline)
from .manifest import ingest_corpus
from .report import emit_report

log = logging.getLogger("permevade")


class UsageError(Exception):
    """Bad flag combination; reported like an argparse error (exit status 2)."""


def _out(path) -> Path:
    p = resolve_output(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _out_dir(path) -> Path:
    p = resolve_output(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _hyper(pairs):
    out = {}
    for pair in pairs or ():
        key, _, value = pair.partition("=")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


# -------------------------------------------------------------- commands

def cmd_synth(a):
    spec = SynthSpec(a.n_benign, a.n_malware, a.k, a.informative, a.noise, a.seed,
                     tuple(a.strength), a.base_rate)
    ds = synth_dataset(spec)
    dest = _out(a.out)
    save_dataset_csv(ds, dest)
    print(f"wrote {len(ds)} samples x {ds.n_features} features to {dest}")


def cmd_ingest(a):
    vocab = load_master_vocabulary(a.vocabulary)
    parts, skipped = [], 0
    jobs = [(a.benign_dir, 0), (a.malware_dir, 1)]
    if a.manifests is not None:
        if a.label is None:
            raise UsageError("--manifests needs --label")
        jobs.append((a.manifests, a.label))
    for directory, label in jobs:
        if directory is None:
            continue
        res = ingest_corpus(directory, vocab, label)
        parts.append(res.dataset)
        for name, names in res.unknown.items():
            log.info("%s: %d permission(s) outside the vocabulary", name, len(names))
        skipped += len(res.skipped)
        for name, err in res.skipped:
            log.warning("skipped %s: %s", name, err)
    if not parts:
        raise UsageError("give --manifests/--label, --malware-dir or --benign-dir")
    ds = parts[0]
    for part in parts[1:]:
        ds = ds.concat(part)
    dest = _out(a.out)
    save_dataset_csv(ds, dest)
    print(f"wrote {len(ds)} samples to {dest} ({skipped} files skipped)")


def cmd_rank(a):
    ds = load_dataset_csv(a.data)
    k = ds.n_features if a.k is None else a.k
    ranking, reduced, keep = rank_features(ds, k, a.algorithm, a.seed)
    out = _out_dir(a.out_dir)
    _write_json(out / "ranking.json", {**ranking.to_dict(ds.vocabulary), "selected": keep})
    table = ranking_table(ranking, ds.vocabulary, k)
    _write_text(out / "ranking.txt", table)
    save_dataset_csv(reduced, out / "reduced.csv")
    print(table, end="")


def cmd_train(a):
    ds = load_dataset_csv(a.data)
    spec = DetectorSpec(a.algorithm, _hyper(a.hyper), a.seed)
    if a.cv:
        res = cross_validate(spec, ds, a.cv, a.seed)
        print(f"{a.cv}-fold mean accuracy: {res.mean_accuracy:.4f}")
    model = train_model(spec, ds, model_id=a.model_id)
    dest = _out(a.out)
    save_model(model, dest)
    print(f"trained {model.model_id} -> {dest}")
    if a.test:
        m = evaluate(model, load_dataset_csv(a.test, ds.vocabulary))
        print(json.dumps(m.to_dict()))


def _env(a):
    return EnvConfig(action_mode=a.action_mode)


def _policies_for(a, models, train_malware, out):
    if a.policy:
        return [AttackPolicy.load(p) for p in a.policy]
    pols = []
    for i, m in enumerate(models):
        res = train_qtable(_env(a), m, train_malware, a.episodes, seed=a.seed + i)
        pol = extract_policy(res.qtable, a.action_mode, policy_id=f"pi-{m.model_id}")
        res.qtable.save(out / f"{m.model_id}.qtable.json")
        pol.save(out / f"{m.model_id}.policy.json")
        pols.append(pol)
    return pols


def cmd_attack(a):
    target = load_model(a.target)
    data = load_dataset_csv(a.data, target.vocabulary)
    train = load_dataset_csv(a.train_data, target.vocabulary) if a.train_data else data
    out = _out_dir(a.out_dir)
    mode = a.mode.upper()
    if mode == SPA and (a.surrogate or (a.policy and len(a.policy) > 1)):
        raise UsageError("SPA takes a single policy")
    models = [target] + [load_model(p) for p in a.surrogate or ()]
    policies = _policies_for(a, models, train.malware(), out)
    reports = attack_curve(policies, target, data.malware(), a.budget, mode)
    for r in reports:
        r.save(out / f"{target.model_id}_{mode}_b{r.budget}.json")
    _write_text(out / "summary.csv", reports_to_csv(reports))
    for r in reports:
        print(f"{r.model_id} {r.mode} budget={r.budget} fooling_rate={r.fooling_rate:.2f}")


def cmd_defend(a):
    models = [load_model(p) for p in a.models]
    policies = [AttackPolicy.load(p) for p in a.policy]
    if len(policies) != len(models):
        raise UsageError("give one --policy per --models entry")
    vocab = models[0].vocabulary
    train = load_dataset_csv(a.train, vocab)
    test = load_dataset_csv(a.test, vocab)
    mode = a.mode.upper()
    specs = [m.spec for m in models]
    after, pools = dfn.adversarial_round(specs, train, models, policies, a.harvest_budget, mode, a.seed)
    out = _out_dir(a.out_dir)
    for m, new, pool in zip(models, after, pools):
        new.model_id = f"{m.model_id}+adv-{mode}"
        save_model(new, out / f"{m.model_id}.json")
        _write_json(out / f"{m.model_id}.pool.json", pool.to_dict())
    report = dfn.defense_evaluate(models, after, policies, test.malware(), a.budget, test, modes=(mode,))
    report.save(out / "report.json")
    _write_text(out / "report.csv", report.to_csv())
    print(report.to_csv(), end="")


def _collect_reports(paths):
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    reports = []
    for f in files:
        with open(f, encoding="utf-8") as fh:
            d = json.load(fh)
        if "outcomes" in d and "fooling_rate" in d:
            reports.append(AttackReport.from_dict(d))
    return reports


def cmd_report(a):
    reports = _collect_reports(a.inputs)
    if not reports:
        raise UsageError("no attack reports found")
    out = _out_dir(a.out_dir)
    for fmt in a.format:
        for p in emit_report(reports, fmt, out):
            print(p)


def cmd_pipeline(a):
    cfg = RunConfig.load(a.config) if a.config else RunConfig()
    cfg = cfg.with_overrides(seed=a.seed, episodes=a.episodes, output_dir=a.output_dir)
    cfg.validate()
    run_dir = run_pipeline(cfg)
    print(f"run complete: {run_dir}")


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="permevade", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic permission corpus")
    s.add_argument("--n-benign", type=int, default=DEFAULT_SYNTH.n_benign)
    s.add_argument("--n-malware", type=int, default=DEFAULT_SYNTH.n_malware)
    s.add_argument("--k", type=int, default=DEFAULT_SYNTH.k)
    s.add_argument("--informative", type=int, default=DEFAULT_SYNTH.informative)
    s.add_argument("--noise", type=float, default=DEFAULT_SYNTH.noise)
    s.add_argument("--strength", type=float, nargs=2, default=list(DEFAULT_SYNTH.strength))
    s.add_argument("--base-rate", type=float, default=DEFAULT_SYNTH.base_rate)
    s.add_argument("--seed", type=int, default=DEFAULT_SYNTH.seed)
    s.add_argument("--out", default="synth.csv")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("ingest", help="build a dataset from manifest directories")
    s.add_argument("--manifests", help="directory of manifests sharing one --label")
    s.add_argument("--label", type=int, choices=(0, 1))
    s.add_argument("--malware-dir")
    s.add_argument("--benign-dir")
    s.add_argument("--vocab", "--vocabulary", dest="vocabulary",
                   help="permission list, one per line (default: bundled list)")
    s.add_argument("--out", default="dataset.csv")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("rank-features", help="rank permissions by tree importance and keep the top k")
    s.add_argument("--data", required=True)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--algorithm", default="RF", choices=("RF", "DT", "ET", "AB", "GB"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default="ranking")
    s.set_defaults(fn=cmd_rank)

    s = sub.add_parser("train", help="train one detector")
    s.add_argument("--data", required=True)
    s.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    s.add_argument("--hyper", action="append", metavar="KEY=VALUE")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--model-id")
    s.add_argument("--cv", type=int, metavar="K", help="also report K-fold accuracy")
    s.add_argument("--test", help="CSV to evaluate the trained model on")
    s.add_argument("--out", default="model.json")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("attack", help="run SPA or MPA against a detector")
    s.add_argument("--mode", required=True, choices=("spa", "mpa"))
    s.add_argument("--budget", type=int, nargs="+", required=True)
    s.add_argument("--target", required=True, help="detector model JSON")
    s.add_argument("--data", required=True, help="CSV whose malware rows are attacked")
    s.add_argument("--policy", action="append", help="policy JSON (repeat for MPA)")
    s.add_argument("--surrogate", action="append", help="extra model JSON to train MPA policies on")
    s.add_argument("--train-data", help="CSV whose malware rows seed agent training (default: --data)")
    s.add_argument("--episodes", type=int, default=100_000)
    s.add_argument("--action-mode", default="add-only", choices=("add-only", "flip"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default="attack")
    s.set_defaults(fn=cmd_attack)

    s = sub.add_parser("defend", help="adversarially retrain detectors and re-attack them")
    s.add_argument("--models", nargs="+", required=True)
    s.add_argument("--policy", nargs="+", required=True, help="one policy per model, same order")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--mode", default="spa", choices=("spa", "mpa"))
    s.add_argument("--harvest-budget", type=int, default=5)
    s.add_argument("--budget", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default="defense")
    s.set_defaults(fn=cmd_defend)

    s = sub.add_parser("report", help="render attack reports as CSV and SVG")
    s.add_argument("inputs", nargs="+", help="report JSON files or directories")
    s.add_argument("--format", nargs="+", default=["csv", "svg"], choices=("csv", "svg"))
    s.add_argument("--out-dir", default="reports")
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("pipeline", help="run every stage from a JSON config")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--episodes", type=int)
    s.add_argument("--output-dir")
    s.set_defaults(fn=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return 1
    except (PermEvadeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
