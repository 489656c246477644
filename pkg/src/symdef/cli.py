"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchmarkResult, ExternalEvaluator, LodoParams, default_methods, report, run_lodo
from .bench.lodo import CONSTANT, DEFAULT_PREFIX, KNN1, RS_PREFIX, SYMBOLIC, stream_seed
from .config import RunConfig, load_config
from .errors import SymdefError, ValidationError
from .evolve import evolve
from .expr import FLOAT, INTEGER, MetaFeatures, eval_expr, parse_formula, realize_configuration, round_half_away
from .metadata import (
    check_metafeature_coverage,
    compute_metafeatures,
    load_metafeatures,
    load_records,
    read_raw_dataset,
    save_records,
)
from .space import ALGORITHMS, SearchSpace, builtin_space, default_sources, load_space
from .surrogate import SurrogateStore, manifest_entry, quality, settings_dict, train_surrogate


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _budgets(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("budgets must be positive integers")
    return values


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run-configuration file")
    p.add_argument("--algorithm", help="algorithm whose search space is used (default: svm)")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--threads", type=int, help="worker threads (fallback: $SYMDEF_THREADS)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--records", help="evaluation records CSV")
    p.add_argument("--metafeatures", dest="metafeatures_path", help="meta-features JSON")
    p.add_argument("--surrogate-dir", help="surrogate store root")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="symdef", description="Learn symbolic hyperparameter defaults on surrogate models.")
    parser.add_argument("--version", action="version", version=f"symdef {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("metafeatures", help="print the meta-features of a raw dataset CSV")
    p.add_argument("data", help="CSV with the target in the last column; ':cat' marks categorical headers")
    p.add_argument("--seed", type=int, default=0, help="seed for the kernel-distance subsample")

    p = sub.add_parser("ingest", help="validate evaluation records and cache the normalized table")
    _common(p)

    p = sub.add_parser("surrogate-train", help="train one surrogate per dataset and write the store")
    _common(p)

    p = sub.add_parser("surrogate-quality", help="cross-validate surrogates and update pass flags")
    _common(p)

    p = sub.add_parser("search", help="evolve a symbolic default on the stored surrogates")
    _common(p)
    p.add_argument("--constant-only", action="store_true", default=None, help="forbid meta-feature terminals")
    p.add_argument("--heldout", help="dataset to leave out of training")
    p.add_argument("--generations", type=int)

    p = sub.add_parser("lodo", help="leave-one-dataset-out benchmark against baselines")
    _common(p)
    p.add_argument("--budget", type=_budgets, help="optimistic random-search budgets, e.g. 1,2,4,8")
    p.add_argument("--generations", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--methods", help="comma-separated subset of methods")

    p = sub.add_parser("report", help="render report files from a saved benchmark result")
    p.add_argument("--input", required=True, help="result.json written by lodo")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.05, choices=(0.05, 0.1))

    p = sub.add_parser("eval-formula", help="evaluate a formula on a meta-feature record")
    p.add_argument("formula")
    p.add_argument("--metafeatures", required=True, help="JSON with one record, or keyed by dataset id")
    p.add_argument("--dataset", help="dataset id when the JSON is keyed by id")
    p.add_argument("--slot", choices=(FLOAT, INTEGER), default=FLOAT)
    return parser


def _config(args) -> RunConfig:
    overrides = {
        "algorithm": getattr(args, "algorithm", None),
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "out": getattr(args, "out", None),
        "records": getattr(args, "records", None),
        "metafeatures": getattr(args, "metafeatures_path", None),
        "surrogate_dir": getattr(args, "surrogate_dir", None),
        "constant_only": getattr(args, "constant_only", None),
        "generations": getattr(args, "generations", None),
        "replications": getattr(args, "replications", None),
        "rs_budgets": getattr(args, "budget", None),
    }
    return load_config(getattr(args, "config", None), overrides)


def _space(cfg: RunConfig) -> SearchSpace:
    if cfg.space:
        space = load_space(cfg.space)
        if space.algorithm != cfg.algorithm:
            raise ValidationError(f"space file is for {space.algorithm}, config says {cfg.algorithm}")
        return space
    return builtin_space(cfg.algorithm)


def _require(value, what: str):
    if not value:
        raise ValidationError(f"no {what} given (flag or config file)")
    return value


def _table(cfg: RunConfig, space: SearchSpace):
    return load_records(_require(cfg.records, "records CSV"), space, cfg.min_unique)


def _metafeatures(cfg: RunConfig):
    return load_metafeatures(_require(cfg.metafeatures, "meta-features JSON"))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _fmt(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# subcommands


def cmd_metafeatures(args) -> int:
    frame, categorical, target = read_raw_dataset(args.data)
    mf = compute_metafeatures(frame, categorical, target, seed=args.seed)
    print(json.dumps(mf.to_dict(), indent=2))
    return 0


def cmd_ingest(args) -> int:
    cfg = _config(args)
    space = _space(cfg)
    table = _table(cfg, space)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_records(table, out / "records.csv")
    summary = {
        "algorithm": space.algorithm,
        "datasets": [
            {
                "dataset_id": d,
                "rows": len(g),
                "unique_configs": g.unique_configs,
                "best_loss": g.best_loss,
                "worst_loss": g.worst_loss,
                "flags": table.flags()[d],
            }
            for d, g in table.groups.items()
        ],
    }
    _write(out / "ingest.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    flagged = sum(1 for d in summary["datasets"] if d["flags"])
    print(f"{len(table.groups)} datasets, {sum(len(g) for g in table.groups.values())} records, {flagged} flagged")
    for d in summary["datasets"]:
        if d["flags"]:
            print(f"  {d['dataset_id']}: {', '.join(d['flags'])}")
    return 0


def _quality_pass(cfg, space, table, store, retrain: bool) -> dict:
    flags = table.flags()
    entries = []
    pairs = ["dataset_id,predicted,true"]
    for d in table.dataset_ids:
        report_ = None
        if not flags[d] and len(table[d]) >= cfg.quality_folds:
            seed = stream_seed(cfg.seed, d)
            if retrain:
                store.save(train_surrogate(table, d, space, cfg.forest, seed=seed, threads=cfg.threads))
            report_ = quality(
                table, d, space, cfg.quality_folds, seed, cfg.forest, cfg.quality_threshold, cfg.threads
            )
            pairs += [f"{d},{_fmt(p)},{_fmt(t)}" for p, t in zip(report_.predicted, report_.true)]
        elif not flags[d]:
            flags[d] = ["too_few_records"]
        entries.append(manifest_entry(d, report_, flags[d]))
    manifest = {
        "algorithm": space.algorithm,
        "seed": cfg.seed,
        "threshold": cfg.quality_threshold,
        "folds": cfg.quality_folds,
        "forest": settings_dict(cfg.forest),
        "datasets": entries,
    }
    store.write_manifest(manifest)
    _write(Path(cfg.out) / f"quality_{space.algorithm}.csv", "\n".join(pairs) + "\n")
    for e in entries:
        if "spearman" in e:
            status = "ok" if e["usable"] else "FAIL"
            print(f"{e['dataset_id']}: spearman={e['spearman']:.4f} kendall={e['kendall']:.4f} {status}")
        else:
            print(f"{e['dataset_id']}: skipped ({', '.join(e['flags'])})")
    usable = sum(e["usable"] for e in entries)
    print(f"{usable}/{len(entries)} datasets usable")
    return manifest


def cmd_surrogate_train(args) -> int:
    cfg = _config(args)
    space = _space(cfg)
    table = _table(cfg, space)
    _quality_pass(cfg, space, table, SurrogateStore(cfg.surrogate_dir, space.algorithm), retrain=True)
    return 0


def cmd_surrogate_quality(args) -> int:
    cfg = _config(args)
    space = _space(cfg)
    table = _table(cfg, space)
    store = SurrogateStore(cfg.surrogate_dir, space.algorithm)
    _quality_pass(cfg, space, table, store, retrain=False)
    return 0


def _load_usable(cfg, space, metafeatures):
    store = SurrogateStore(cfg.surrogate_dir, space.algorithm)
    ids = store.usable_ids()
    if not ids:
        raise ValidationError("no dataset passed the surrogate quality gate")
    missing = [d for d in ids if d not in metafeatures]
    if missing:
        raise ValidationError(f"no meta-features for dataset(s) {missing}")
    return {d: store.load(d) for d in ids}


def cmd_search(args) -> int:
    cfg = _config(args)
    space = _space(cfg)
    mf = _metafeatures(cfg)
    surrogates = _load_usable(cfg, space, mf)
    if args.heldout:
        if args.heldout not in surrogates:
            raise ValidationError(f"held-out dataset {args.heldout!r} is not among the usable surrogates")
        surrogates.pop(args.heldout)
    if not surrogates:
        raise ValidationError("no training surrogates left")
    params = replace(cfg.evolution, seed=cfg.seed)
    train_mf = {d: mf[d] for d in surrogates}
    result = evolve(params, space, list(surrogates.values()), train_mf, threads=cfg.threads)
    best = result.default
    print(f"default for {space.algorithm} (loss {best.loss:.6f}, depth {best.depth}):")
    for hp, formula in zip(space.tunable, best.config.formulas()):
        print(f"  {hp.name} = {formula}")
    print("realized on training datasets:")
    print("  dataset_id," + ",".join(space.names))
    for d in surrogates:
        values, _ = realize_configuration(best.config, mf[d], space)
        print(f"  {d}," + ",".join(_fmt(v) for v in values))
    out = Path(cfg.out)
    tag = f"{space.algorithm}{'_constant' if params.constant_only else ''}"
    _write(out / f"search_{tag}.json", result.manifest_json())
    _write(out / f"trace_{tag}.csv", result.trace_csv())
    return 0


def cmd_lodo(args) -> int:
    cfg = _config(args)
    space = _space(cfg)
    table = _table(cfg, space)
    mf = _metafeatures(cfg)
    check_metafeature_coverage(table, mf)
    surrogates = _load_usable(cfg, space, mf)
    if args.methods:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    else:
        methods = default_methods(space, cfg.rs_budgets, cfg.knn)
        if cfg.defaults is not None:
            known = set(default_sources(space.algorithm)) if space.algorithm in ALGORITHMS else set()
            bad = sorted(set(cfg.defaults) - known)
            if bad:
                raise ValidationError(f"unknown package default(s) {bad} for {space.algorithm}")
            methods = [m for m in methods if not m.startswith(DEFAULT_PREFIX) or m[len(DEFAULT_PREFIX):] in cfg.defaults]
    for m in methods:
        ok = m in (SYMBOLIC, CONSTANT, KNN1) or m.startswith(DEFAULT_PREFIX) or (
            m.startswith(RS_PREFIX) and m[len(RS_PREFIX):].isdigit()
        )
        if not ok:
            raise ValidationError(f"unknown method {m!r}")
    params = LodoParams(
        evolution=cfg.evolution,
        replications=cfg.replications,
        rs_budgets=cfg.rs_budgets,
        rs_reps=cfg.rs_reps,
        seed=cfg.seed,
        threads=cfg.threads,
    )
    evaluator = ExternalEvaluator(cfg.external_evaluator) if cfg.external_evaluator else None
    result = run_lodo(methods, space, table, mf, surrogates, params, evaluator)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result.save(out / "result.json")
    report(result, out)
    print((out / "summary.md").read_text(encoding="utf-8"))
    return 0


def cmd_report(args) -> int:
    path = Path(args.input)
    if not path.exists():
        raise ValidationError(f"{path} does not exist")
    result = BenchmarkResult.load(path)
    for p in report(result, args.out, args.alpha):
        print(p)
    return 0


def cmd_eval_formula(args) -> int:
    with open(args.metafeatures, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.metafeatures}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{args.metafeatures}: expected a JSON object")
    if args.dataset is not None:
        if args.dataset not in raw:
            raise ValidationError(f"dataset {args.dataset!r} not in {args.metafeatures}")
        raw = raw[args.dataset]
    elif "n" not in raw:
        if len(raw) != 1:
            raise ValidationError("meta-features file holds several datasets; pick one with --dataset")
        raw = next(iter(raw.values()))
    mf = MetaFeatures.from_dict(raw)
    e = parse_formula(args.formula, args.slot)
    value = eval_expr(e, mf)
    if args.slot == INTEGER:
        value = round_half_away(value)
    print(_fmt(value))
    return 0


COMMANDS = {
    "metafeatures": cmd_metafeatures,
    "ingest": cmd_ingest,
    "surrogate-train": cmd_surrogate_train,
    "surrogate-quality": cmd_surrogate_quality,
    "search": cmd_search,
    "lodo": cmd_lodo,
    "report": cmd_report,
    "eval-formula": cmd_eval_formula,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SymdefError, OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
