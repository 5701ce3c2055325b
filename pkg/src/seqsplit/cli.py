"""Command line entry point: ``seqsplit <command> [options]``.

Commands: preprocess, split, evaluate, correlate, rank, timegaps. Options may
also come from a JSON file given with ``--config``; flags override it.
Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from . import analysis, baselines, stats
from .core import DataError, PreprocessConfig, Schema, parse_event_log, preprocess, to_user_sequences, write_dataset
from .metrics import DEFAULT_KS, METRICS, MetricReport, evaluate_run, read_rankings, write_rankings
from .splitting import SplitSpec, read_manifest, split, write_manifest

_log = logging.getLogger("seqsplit")

CACHE_ENV = "SEQSPLIT_CACHE"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "seqsplit"))


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x]


def _str_list(text: str) -> list[str]:
    return [x for x in str(text).split(",") if x]


def _params(pairs: Sequence[str] | None) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"model parameter {pair!r} is not key=value")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _add_schema_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=["canonical", "ml-1m"], default="canonical",
                   help="input layout; ml-1m reads user::item::rating::timestamp")
    p.add_argument("--delimiter", default=None)
    p.add_argument("--no-header", action="store_true", default=False)
    p.add_argument("--user-col", default=None)
    p.add_argument("--item-col", default=None)
    p.add_argument("--time-col", default=None)
    p.add_argument("--time-format", choices=["auto", "int", "iso"], default=None)
    p.add_argument("--strict", action="store_true", default=False)


def _schema(args) -> Schema:
    base = Schema.movielens() if args.preset == "ml-1m" else Schema()
    overrides = {}
    for name, attr in (("user_col", "user_col"), ("item_col", "item_col"), ("time_col", "time_col")):
        value = getattr(args, name)
        if value is not None:
            overrides[attr] = int(value) if str(value).isdigit() else value
    if args.delimiter is not None:
        overrides["delimiter"] = "\t" if args.delimiter in ("\\t", "tab") else args.delimiter
    if args.no_header:
        overrides["header"] = False
    if args.time_format:
        overrides["time_format"] = args.time_format
    overrides["strict"] = args.strict
    return Schema(**{**base.__dict__, **overrides})


def _input_path(args) -> Path:
    if args.input:
        return Path(args.input)
    if args.preset == "ml-1m":
        return cache_dir() / "ml-1m" / "ratings.dat"
    raise UsageError("--input is required")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seqsplit", description="Temporal splits, ranking metrics and split agreement for sequential recommenders.")
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="dedup consecutive repeats, p-core filter, sample users")
    p.add_argument("--input")
    p.add_argument("--output", required=True, help="canonical dataset CSV")
    _add_schema_args(p)
    p.add_argument("--p-core", type=int, default=5)
    p.add_argument("--no-dedup", action="store_true", default=False)
    p.add_argument("--sample-users", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("split", help="build a train/validation/test split and its manifest")
    p.add_argument("--input", required=True, help="canonical dataset CSV")
    p.add_argument("--output-dir", required=True)
    _add_schema_args(p)
    p.add_argument("--strategy", choices=["loo", "gts"], default="gts")
    p.add_argument("--quantile", type=float, default=0.9)
    p.add_argument("--t-test", type=int, default=None)
    p.add_argument("--target", choices=["last", "first", "random", "successive", "all"], default="last")
    p.add_argument("--validation", choices=["loo", "gt", "lti", "ub", "none"], default=None)
    p.add_argument("--val-quantile", type=float, default=0.9)
    p.add_argument("--val-target", choices=["last", "first", "random", "successive", "all"], default="last")
    p.add_argument("--ub-users", type=int, default=1024)
    p.add_argument("--min-seq-len", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("evaluate", help="score rankings or a built-in model on a manifest")
    p.add_argument("--manifest", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--rankings", help="JSON-lines or TSV rankings keyed by instance_id")
    src.add_argument("--model", choices=sorted(baselines.MODELS))
    p.add_argument("--param", action="append", default=None, help="model parameter key=value")
    p.add_argument("--refit", action="store_true", default=False, help="fit on train plus validation events")
    p.add_argument("--role", choices=["test", "valid"], default="test")
    p.add_argument("--ks", type=_int_list, default=list(DEFAULT_KS))
    p.add_argument("--metrics", type=_str_list, default=list(METRICS))
    p.add_argument("--averaging", choices=["user", "flat"], default="user")
    p.add_argument("--filter-seen", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--label", default=None, help="configuration id recorded in the report")
    p.add_argument("--split-label", default=None)
    p.add_argument("--dataset-label", default=None)
    p.add_argument("--output", required=True)
    p.add_argument("--rankings-out", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("correlate", help="Kendall/Spearman agreement between splits")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--reference", required=True, help="split label compared against")
    p.add_argument("--ks", type=_int_list, default=[10])
    p.add_argument("--metrics", type=_str_list, default=list(METRICS))
    p.add_argument("--output", required=True)
    p.add_argument("--scatter-dir", default=None)

    p = sub.add_parser("rank", help="rank models by best value per split")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--metric", default="ndcg")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--reference", default=None)
    p.add_argument("--output", required=True)

    p = sub.add_parser("timegaps", help="time gaps between targets and their previous event")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dataset", default=None, help="canonical dataset for the all-events baseline")
    p.add_argument("--role", choices=["test", "valid"], default="test")
    p.add_argument("--bins-per-decade", type=int, default=4)
    p.add_argument("--output", required=True)
    return parser


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            file_values = json.loads(Path(known.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {known.config}: {exc}") from exc
        choices = parser._subparsers._group_actions[0].choices
        command = next((a for a in (argv if argv is not None else sys.argv[1:]) if a in choices), None)
        if command is None:
            raise UsageError("no command given")
        sub = choices[command]
        file_values = {k.replace("-", "_"): v for k, v in file_values.items() if k != "command"}
        unknown = set(file_values) - {a.dest for a in sub._actions}
        if unknown:
            raise UsageError(f"unknown options in {known.config}: {sorted(unknown)}")
        for action in sub._actions:
            if action.dest in file_values:
                action.required = False
        sub.set_defaults(**file_values)
    return parser.parse_args(argv)


def _run_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}


def cmd_preprocess(args) -> int:
    schema = _schema(args)
    config = PreprocessConfig(
        p_core=args.p_core, dedup_consecutive=not args.no_dedup, sample_users=args.sample_users, seed=args.seed
    )
    ds = parse_event_log(_input_path(args), schema)
    raw = ds.interaction_count
    ds = preprocess(ds, config)
    if ds.interaction_count == 0:
        raise DataError("preprocessing removed every interaction")
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out)
    summary = stats.dataset_stats(ds).to_dict()
    _dump(summary, out.with_name(out.name + ".stats.json"))
    _dump({"users": [str(x) for x in ds.user_labels], "items": [str(x) for x in ds.item_labels]},
          out.with_name(out.name + ".idmap.json"))
    _dump(_run_config(args), out.with_name(out.name + ".config.json"))
    print(f"read {raw} interactions ({ds.skipped} malformed rows skipped)")
    print(f"{'#Interact.':>12} {'#Users':>8} {'#Items':>8} {'Avg.Len.':>9} {'Density(%)':>11} {'#Days':>7}")
    print(f"{summary['interactions']:>12} {summary['users']:>8} {summary['items']:>8} "
          f"{summary['avg_len']:>9.1f} {summary['density_pct']:>11.2f} {round(summary['days']):>7}")
    return 0


def cmd_split(args) -> int:
    spec = SplitSpec(
        strategy=args.strategy,
        test_quantile=args.quantile if args.t_test is None else None,
        t_test=args.t_test,
        target=args.target,
        validation=args.validation,
        val_quantile=args.val_quantile,
        ub_user_count=args.ub_users,
        val_target=args.val_target,
        seed=args.seed,
        min_seq_len=args.min_seq_len,
    )
    sequences = to_user_sequences(parse_event_log(Path(args.input), _schema(args)))
    result = split(sequences, spec)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(result, out / "manifest.jsonl")
    report = {
        "split": spec.label(),
        "t_test": result.t_test,
        "t_val": result.t_val,
        "test": stats.split_stats(result, sequences, "test").to_dict(),
        "report": result.report,
    }
    if result.validation_instances:
        report["valid"] = stats.split_stats(result, sequences, "valid").to_dict()
    _dump(report, out / "stats.json")
    _dump(_run_config(args), out / "config.json")
    t = report["test"]
    print(f"{spec.label()}: {len(result.test_instances)} test instances from {t['users']} users "
          f"({t['users_pct']:.1f}%), holdout len {t['holdout_len']:.2f}, test period {t['days']:.0f} days; "
          f"{len(result.validation_instances)} validation instances")
    return 0


def cmd_evaluate(args) -> int:
    result = read_manifest(args.manifest)
    instances = result.test_instances if args.role == "test" else result.validation_instances
    if not instances:
        raise DataError(f"manifest has no {args.role} instances")
    model_label = "external"
    if args.model:
        params = _params(args.param)
        if args.refit:
            model = baselines.refit_on_train_plus_valid(args.model, result, params)
        else:
            model = baselines.fit(args.model, result.train, params)
        rankings = baselines.recommend_batch(model, instances, max(args.ks), args.filter_seen, args.threads)
        model_label = args.model
        if args.rankings_out:
            write_rankings(rankings, args.rankings_out)
    elif args.rankings:
        rankings = read_rankings(args.rankings)
    else:
        raise UsageError("give --rankings or --model")
    report = evaluate_run(instances, rankings, args.ks, args.metrics, args.averaging, args.filter_seen)
    report.meta.update({
        "model": model_label,
        "params": _params(args.param) if args.model else {},
        "refit": bool(args.refit),
        "role": args.role,
        "config": args.label or model_label,
        "split": args.split_label or SplitSpec.from_dict(result.provenance["spec"]).label(),
        "dataset": args.dataset_label or "",
        "dataset_checksum": result.provenance.get("dataset_checksum"),
    })
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    report.save(args.output)
    shown = ", ".join(f"{k}={v:.4f}" for k, v in report.summary.items() if k.endswith("@10"))
    print(f"{report.meta['split']} {report.meta['config']}: {shown or report.summary}")
    return 0


def _load_reports(paths) -> list[MetricReport]:
    reports = []
    for path in paths:
        try:
            reports.append(MetricReport.load(path))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read report {path}: {exc}") from exc
    return reports


def cmd_correlate(args) -> int:
    reports = _load_reports(args.reports)
    grouped: dict[str, dict[str, dict[str, MetricReport]]] = defaultdict(lambda: defaultdict(dict))
    for rep in reports:
        runs = grouped[rep.meta.get("dataset", "")][rep.meta["split"]]
        config = rep.meta["config"]
        if config in runs:
            raise DataError(f"two reports for split {rep.meta['split']!r} config {config!r}")
        runs[config] = rep
    per_dataset = {}
    out = {"reference": args.reference, "datasets": {}}
    for dataset in sorted(grouped):
        try:
            matrix = analysis.correlation_matrix(grouped[dataset], args.reference, args.metrics, args.ks)
        except (KeyError, analysis.AlignmentError) as exc:
            raise DataError(f"dataset {dataset!r}: {exc}") from exc
        per_dataset[dataset] = matrix
        out["datasets"][dataset] = {f"{c}|{m}@{k}": r.to_dict() for (c, m, k), r in sorted(matrix.items())}
        if args.scatter_dir:
            scatter = Path(args.scatter_dir)
            scatter.mkdir(parents=True, exist_ok=True)
            for (c, m, k), r in sorted(matrix.items()):
                name = f"{dataset or 'data'}__{args.reference}__vs__{c}__{m}@{k}.csv".replace("/", "_")
                analysis.write_scatter_csv(r, scatter / name)
    means = analysis.mean_correlation(per_dataset)
    out["mean"] = {f"{c}|{m}@{k}": v for (c, m, k), v in sorted(means.items())}
    _dump(out, Path(args.output))
    for key, v in out["mean"].items():
        if v["kendall_tau"] is None:
            print(f"{key:40s} undefined (all values tied)")
        else:
            print(f"{key:40s} tau={v['kendall_tau']:+.3f} rho={v['spearman_rho']:+.3f}")
    return 0


def cmd_rank(args) -> int:
    reports = _load_reports(args.reports)
    by_split: dict[str, list] = defaultdict(list)
    for rep in reports:
        by_split[rep.meta["split"]].append((rep.meta["model"], rep.meta["config"], rep))
    rankings = {label: analysis.model_ranking(entries, args.metric, args.k) for label, entries in sorted(by_split.items())}
    reference = args.reference or next(iter(rankings))
    out = {
        "metric": args.metric,
        "k": args.k,
        "reference": reference,
        "rankings": {label: [r.__dict__ for r in rows] for label, rows in rankings.items()},
        "shifts": analysis.rank_shift_table(rankings, reference),
    }
    _dump(out, Path(args.output))
    for label, rows in rankings.items():
        print(label + ": " + " > ".join(f"{r.model}({r.best_value:.4f}{'*' if r.tied else ''})" for r in rows))
    return 0


def cmd_timegaps(args) -> int:
    result = read_manifest(args.manifest)
    instances = result.test_instances if args.role == "test" else result.validation_instances
    if not instances:
        raise DataError(f"manifest has no {args.role} instances")
    sequences = to_user_sequences(parse_event_log(Path(args.dataset))) if args.dataset else None
    gaps = stats.target_time_gaps(instances, sequences, args.bins_per_decade)
    payload = gaps.to_dict()
    payload["split"] = SplitSpec.from_dict(result.provenance["spec"]).label()
    payload["role"] = args.role
    _dump(payload, Path(args.output))
    print(f"{payload['split']} {args.role}: median delta {gaps.median_delta}s over {payload['count']} targets"
          + (f"; all events {gaps.full_data_median}s" if gaps.full_data_median is not None else ""))
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "split": cmd_split,
    "evaluate": cmd_evaluate,
    "correlate": cmd_correlate,
    "rank": cmd_rank,
    "timegaps": cmd_timegaps,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"seqsplit {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"seqsplit {args.command}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"seqsplit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
