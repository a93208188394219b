"""Command-line entry point: ``commval <stage> [--config FILE] [options]``.

Exit status is 0 only when the requested work finished completely, 1 when a
stage failed, 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .config import RunConfig
from .corpus import load_corpus, masked
from .errors import CommvalError, ConfigError, InsufficientData, StageFailed, UnadjudicatedItem
from .pipeline import (
    Manifest,
    emit_reports,
    load_records,
    read_json,
    run_pipeline,
    run_stage,
    write_json,
)
from .reliability import AnnotationTable, krippendorff_alpha, label_accuracy, sample_for_annotation, write_worksheet
from .scales import ValueCommunityMatrix, compare_years

logger = logging.getLogger("commval")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--out", dest="out_dir", help="output directory (default commval-out)")
    p.add_argument("--seed", type=int)
    p.add_argument("--year-tag", "--year", dest="year_tag")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _provider_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", choices=("http", "mock"))
    p.add_argument("--model", help="model identifier sent to the provider")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commval", description="Community value extraction and analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", help="load a comment dump and drop ineligible comments")
    _common(p)
    p.add_argument("--input", help="newline-delimited JSON comment dump")
    p.add_argument("--bots", help="file of bot accounts, one per line")
    p.add_argument("--mods", help="file of moderator accounts")

    p = sub.add_parser("label", help="assign Low/Mid/High score labels per community")
    _common(p)
    p.add_argument("--low-pct", dest="low_pct", type=float)
    p.add_argument("--high-pct", dest="high_pct", type=float)

    p = sub.add_parser("sample-pairs", help="draw context/High-reply pairs per community")
    _common(p)
    p.add_argument("--pairs-per-community", dest="pairs_per_community", type=int)

    p = sub.add_parser("sample-regression", help="draw balanced High/Low sets per community")
    _common(p)
    p.add_argument("--regression-per-class", dest="regression_per_class", type=int)

    p = sub.add_parser("extract", help="ask the model for each pair's values")
    _common(p)
    _provider_opts(p)
    p.add_argument("--pairs", type=Path, help="pairs file (default OUT/pairs.jsonl)")
    p.add_argument("--store", type=Path, help="comment store (default OUT/store.jsonl)")
    p.add_argument("--metadata", help="community,subscriber_count,description CSV")
    p.add_argument("--template", help="prompt template file")
    p.add_argument("--cache", help="response cache file")
    p.add_argument("--max-retries", dest="max_retries", type=int)

    p = sub.add_parser("canonicalize", help="cluster keywords into canonical values")
    _common(p)
    _provider_opts(p)
    p.add_argument("--records", type=Path, help="extraction records (default OUT/records.jsonl)")
    p.add_argument("--embedder", help="hash[:d], file:PATH or st:MODEL")
    p.add_argument("-k", "--k", dest="k", type=int, help="number of clusters")
    p.add_argument("--overrides", help="regrouping directives file")

    p = sub.add_parser("scales", help="build the value x community matrix and classify scales")
    _common(p)
    p.add_argument("--macro-fraction", dest="macro_fraction", type=float)
    p.add_argument("--micro-fraction", dest="micro_fraction", type=float)

    p = sub.add_parser("compare", help="values kept, added and removed in a community between two runs")
    p.add_argument("--from", dest="from_dir", required=True, type=Path, help="earlier run's output directory")
    p.add_argument("--to", dest="to_dir", required=True, type=Path, help="later run's output directory")
    p.add_argument("--community", required=True)
    p.add_argument("--output", type=Path, help="write the comparison as JSON here")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--config", help=argparse.SUPPRESS)

    p = sub.add_parser("na-report", help="count and list N/A extractions")
    _common(p)
    p.add_argument("--records", type=Path)

    p = sub.add_parser("prosocial", help="regress High/Low labels on the prosociality composite")
    _common(p)
    p.add_argument("--scores", help="comment_id,supportiveness,agreement,politeness CSV")
    p.add_argument("--metadata")
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("recall", help="share of each value's comments that are highly prosocial")
    _common(p)
    p.add_argument("--scores")

    p = sub.add_parser("annotate-sample", help="write a worksheet of extractions for human raters")
    _common(p)
    p.add_argument("--per-community", dest="annotate_per_community", type=int)
    p.add_argument("--output", type=Path, help="worksheet path (default OUT/reports/annotation_worksheet.csv)")

    p = sub.add_parser("alpha", help="Krippendorff's alpha and accuracy from a filled worksheet")
    p.add_argument("worksheet", type=Path)
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("report", help="rewrite every report from existing stage outputs")
    _common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--metadata")

    p = sub.add_parser("run", help="run every stage in order")
    _common(p)
    _provider_opts(p)
    p.add_argument("--input")
    p.add_argument("--scores")
    p.add_argument("--metadata")
    p.add_argument("--prosocial", action="store_true", default=None,
                   help="also run sample-regression, prosocial and recall")
    return parser


_NON_CONFIG = {"command", "config", "verbose", "pairs", "store", "records", "output", "worksheet",
               "from_dir", "to_dir", "community"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG and v is not None}
    return base.with_overrides(**overrides)


def _cmd_compare(args) -> int:
    a = ValueCommunityMatrix.from_json(read_json(args.from_dir / "matrix.json"))
    b = ValueCommunityMatrix.from_json(read_json(args.to_dir / "matrix.json"))
    kept, added, removed = compare_years(a, b, args.community)
    result = {"community": args.community, "from": a.year_tag, "to": b.year_tag,
              "kept": sorted(kept), "added": sorted(added), "removed": sorted(removed)}
    if args.output:
        write_json(args.output, result)
    for key in ("kept", "added", "removed"):
        print(f"{key}: {', '.join(result[key]) or '-'}")
    return 0


def _cmd_annotate(cfg: RunConfig, args) -> int:
    manifest = Manifest(cfg)
    L = manifest.layout
    records = load_records(L.records)
    mapping = read_json(L.canonical_map) if L.canonical_map.exists() else None
    bodies = {}
    if L.store.exists():
        bodies = {c.id: masked(c).body for c in load_corpus(L.store)}
    rows = sample_for_annotation(records, cfg.annotate_per_community, cfg.seed, mapping, bodies)
    out = args.output or L.reports / "annotation_worksheet.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_worksheet(out, rows)
    manifest.record("annotate-sample", [L.records, L.canonical_map], [out], stats={"rows": len(rows)})
    print(f"wrote {len(rows)} row(s) to {out}")
    return 0


def _cmd_alpha(args) -> int:
    table = AnnotationTable.from_worksheet(args.worksheet)
    alpha = krippendorff_alpha(table)
    print(f"krippendorff_alpha: {alpha:.4f}")
    try:
        print(f"accuracy: {label_accuracy(table):.4f}")
    except UnadjudicatedItem as exc:
        print(f"accuracy: unavailable ({exc})")
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    warnings.simplefilter("default")

    try:
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "alpha":
            return _cmd_alpha(args)
        cfg = resolve_config(args)
        if args.command == "run":
            manifest = run_pipeline(cfg)
            print(f"run complete; outputs in {cfg.out_dir}")
            return 0 if manifest.to_json()["complete"] else 1
        if args.command == "report":
            for path in emit_reports(cfg):
                print(path)
            return 0
        if args.command == "annotate-sample":
            return _cmd_annotate(cfg, args)
        kwargs = {}
        if args.command == "extract":
            kwargs = {"pairs_path": args.pairs, "store_path": args.store}
        elif args.command in ("canonicalize", "na-report"):
            kwargs = {"records_path": args.records}
        run_stage(args.command, cfg, **kwargs)
        return 0
    except ConfigError as exc:
        print(f"commval: configuration error: {exc}", file=sys.stderr)
        return 2
    except StageFailed as exc:
        print(f"commval: {exc}", file=sys.stderr)
        return 1
    except (CommvalError, InsufficientData, OSError, KeyError, ValueError) as exc:
        print(f"commval {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
