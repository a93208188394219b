"""Stage runners, file layout, run manifest and report emission.

Every stage reads its inputs from, and writes its outputs to, one output
directory, so any stage can be rerun on its own. ``manifest.json`` records the
resolved config and a SHA-256 digest of every stage input and output; it holds
no timestamps, so identical reruns produce identical manifests.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .canonicalize import RegroupOverride, canonicalize, make_embedder
from .config import RunConfig
from .corpus import CommentStore, ExclusionLists, filter_eligible, load_corpus, save_store
from .errors import MissingStageOutput, ProviderUnavailable, StageFailed
from .extraction import ExtractionRecord, PromptTemplate, ResponseCache, run_extraction
from .labeling import (
    PRNG_NAME,
    ScoreLabel,
    label_store,
    pair_manifest_rows,
    pairs_from_manifest,
    sample_pairs,
    sample_regression_set,
    thresholds as score_thresholds,
)
from .prosocial import (
    HIGH_PRO,
    LOW_PRO,
    RegressionResult,
    analyze_regression,
    load_score_file,
    normalize_scores,
    odds_ratio_report,
    pca_first_component,
    prosocial_threshold,
    recall_per_value,
)
from .providers import make_provider
from .scales import Scale, ValueCommunityMatrix, build_matrix, na_report, prevalence_plot_data, prevalence_report

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class Layout:
    root: Path

    @property
    def store(self): return self.root / "store.jsonl"
    @property
    def labels(self): return self.root / "labels.jsonl"
    @property
    def thresholds(self): return self.root / "thresholds.json"
    @property
    def pairs(self): return self.root / "pairs.jsonl"
    @property
    def excluded(self): return self.root / "excluded.json"
    @property
    def regression_sample(self): return self.root / "regression_sample.jsonl"
    @property
    def records(self): return self.root / "records.jsonl"
    @property
    def bank(self): return self.root / "bank.json"
    @property
    def quarantine(self): return self.root / "quarantine.jsonl"
    @property
    def clusters(self): return self.root / "clusters.json"
    @property
    def canonical_map(self): return self.root / "canonical_map.json"
    @property
    def matrix(self): return self.root / "matrix.json"
    @property
    def scales(self): return self.root / "scales.json"
    @property
    def na_report(self): return self.root / "na_report.json"
    @property
    def regression(self): return self.root / "regression.json"
    @property
    def prosocial_labels(self): return self.root / "prosocial_labels.jsonl"
    @property
    def recall(self): return self.root / "recall.json"
    @property
    def reports(self): return self.root / "reports"
    @property
    def manifest(self): return self.root / MANIFEST


# -- file helpers ---------------------------------------------------------------

def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_jsonl(path: Path, rows: Iterable[Mapping]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_metadata(path: str | Path | None) -> dict[str, dict]:
    """``community,subscriber_count,description`` CSV → {community: {...}}."""
    if not path:
        return {}
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            subs = (row.get("subscriber_count") or "").strip()
            out[row["community"]] = {
                "subscriber_count": int(float(subs)) if subs else None,
                "description": row.get("description") or "",
            }
    return out


def load_records(path: Path) -> list[ExtractionRecord]:
    return [ExtractionRecord.from_json(r) for r in read_jsonl(path)]


def load_labels(path: Path) -> dict[str, dict[str, ScoreLabel]]:
    out: dict[str, dict[str, ScoreLabel]] = {}
    for row in read_jsonl(path):
        out.setdefault(row["community"], {})[row["id"]] = ScoreLabel(row["label"])
    return out


# -- manifest -------------------------------------------------------------------

class Manifest:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.layout = Layout(Path(cfg.out_dir))
        self.path = self.layout.manifest
        self.stages: dict[str, dict] = {}
        if self.path.exists():
            try:
                self.stages = read_json(self.path).get("stages", {})
            except (ValueError, OSError):
                logger.warning("ignoring unreadable manifest %s", self.path)

    def _name(self, path: Path) -> str:
        try:
            return str(Path(path).resolve().relative_to(self.layout.root.resolve()))
        except ValueError:
            return str(path)

    def record(self, stage: str, inputs: Iterable[Path | str | None], outputs: Iterable[Path],
               status: str = "complete", error: str | None = None, stats: Mapping | None = None) -> None:
        entry: dict = {
            "status": status,
            "inputs": {self._name(p): sha256_file(Path(p)) for p in inputs if p and Path(p).is_file()},
            "outputs": {self._name(p): sha256_file(p) for p in outputs if Path(p).is_file()},
        }
        if error:
            entry["error"] = error
        if stats:
            entry["stats"] = dict(stats)
        self.stages[stage] = entry
        self.save()

    def to_json(self) -> dict:
        template_text = (PromptTemplate.from_file(self.cfg.template) if self.cfg.template
                         else PromptTemplate.default())
        return {
            "tool": "commval",
            "version": __version__,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.digest(),
            "seed": self.cfg.seed,
            "year_tag": self.cfg.year_tag,
            "prng": PRNG_NAME,
            "provider": {"name": self.cfg.provider, "model_id": self.cfg.model},
            "template_digest": template_text.digest,
            "stages": self.stages,
            "complete": bool(self.stages) and all(s["status"] == "complete" for s in self.stages.values()),
        }

    def save(self) -> None:
        write_json(self.path, self.to_json())


# -- stages ---------------------------------------------------------------------

def stage_ingest(cfg: RunConfig, manifest: Manifest, out: Path | None = None) -> None:
    if not cfg.input:
        raise ValueError("ingest needs an input file")
    store = load_corpus(cfg.input, cfg.year_tag)
    excl = ExclusionLists.from_files(cfg.bots, cfg.mods)
    eligible = filter_eligible(store, excl)
    dest = out or manifest.layout.store
    dest.parent.mkdir(parents=True, exist_ok=True)
    save_store(eligible, dest)
    logger.info("ingest: %d loaded, %d skipped, %d eligible", len(store), store.skipped, len(eligible))
    manifest.record("ingest", [cfg.input, cfg.bots, cfg.mods], [dest],
                    stats={"loaded": len(store), "skipped": store.skipped, "eligible": len(eligible)})


def _store(manifest: Manifest, path: Path | None = None) -> CommentStore:
    p = path or manifest.layout.store
    if not p.exists():
        raise MissingStageOutput(f"{p} not found; run 'commval ingest' first")
    return load_corpus(p)


def stage_label(cfg: RunConfig, manifest: Manifest) -> None:
    L = manifest.layout
    store = _store(manifest)
    plan = cfg.sample_plan()
    labels = label_store(store, plan)
    rows = []
    thr = {}
    for comm in store.communities:
        comments = store.community(comm)
        low, high = score_thresholds([c.score for c in comments], plan)
        thr[comm] = {"low": str(low), "high": str(high), "low_value": float(low), "high_value": float(high)}
        for c in comments:
            rows.append({"community": comm, "id": c.id, "score": c.score, "label": labels[comm][c.id].value})
    write_jsonl(L.labels, rows)
    write_json(L.thresholds, thr)
    manifest.record("label", [L.store], [L.labels, L.thresholds])


def stage_sample_pairs(cfg: RunConfig, manifest: Manifest) -> None:
    L = manifest.layout
    store = _store(manifest)
    if not L.labels.exists():
        raise MissingStageOutput("labels.jsonl not found; run 'commval label' first")
    pairs, excluded = sample_pairs(store, load_labels(L.labels), cfg.sample_plan())
    write_jsonl(L.pairs, pair_manifest_rows(pairs, cfg.seed))
    write_json(L.excluded, excluded)
    manifest.record("sample-pairs", [L.store, L.labels], [L.pairs, L.excluded],
                    stats={"pairs": len(pairs), "communities": len({p.community for p in pairs}),
                           "excluded": len(excluded)})


def stage_sample_regression(cfg: RunConfig, manifest: Manifest) -> None:
    L = manifest.layout
    store = _store(manifest)
    if not L.labels.exists():
        raise MissingStageOutput("labels.jsonl not found; run 'commval label' first")
    sets, skipped = sample_regression_set(store, load_labels(L.labels), cfg.sample_plan())
    rows = [{"community": comm, "comment_id": c.id, "label": y}
            for comm in sorted(sets) for c, y in sets[comm]]
    write_jsonl(L.regression_sample, rows)
    manifest.record("sample-regression", [L.store, L.labels], [L.regression_sample],
                    stats={"communities": len(sets), "skipped": skipped})


def stage_extract(cfg: RunConfig, manifest: Manifest, pairs_path: Path | None = None,
                  store_path: Path | None = None, provider=None) -> None:
    L = manifest.layout
    pairs_path = pairs_path or L.pairs
    if not Path(pairs_path).exists():
        raise MissingStageOutput(f"{pairs_path} not found; run 'commval sample-pairs' first")
    store = _store(manifest, store_path)
    pairs = pairs_from_manifest(read_jsonl(pairs_path), store)
    template = PromptTemplate.from_file(cfg.template) if cfg.template else PromptTemplate.default()
    pcfg = cfg.provider_config()
    provider = provider or make_provider(cfg.provider)
    meta = load_metadata(cfg.metadata)
    run = run_extraction(pairs, pcfg, template, provider, meta, ResponseCache(pcfg.cache_path))
    write_jsonl(L.records, (r.to_json() for r in run.records))
    write_json(L.bank, list(run.bank))
    write_jsonl(L.quarantine, [q.to_json() | {"kind": "quarantined"} for q in run.quarantined]
                + [q.to_json() | {"kind": "unavailable"} for q in run.unavailable])
    manifest.record("extract", [pairs_path, store_path or L.store, cfg.template, cfg.metadata],
                    [L.records, L.bank, L.quarantine],
                    stats={"records": len(run.records), "na": sum(r.na for r in run.records),
                           "quarantined": len(run.quarantined), "unavailable": len(run.unavailable),
                           "bank_size": len(run.bank)})


def stage_canonicalize(cfg: RunConfig, manifest: Manifest, records_path: Path | None = None,
                       provider=None) -> None:
    L = manifest.layout
    records_path = records_path or L.records
    if not Path(records_path).exists():
        raise MissingStageOutput(f"{records_path} not found; run 'commval extract' first")
    records = load_records(records_path)
    overrides = RegroupOverride.from_file(cfg.overrides) if cfg.overrides else None
    provider = provider or make_provider(cfg.provider)
    clusters, mapping = canonicalize(records, make_embedder(cfg.embedder), provider, cfg.k, overrides, cfg.model)
    write_json(L.clusters, [{"cluster_id": c.cluster_id, "label": c.label, "members": list(c.members)}
                            for c in clusters])
    write_json(L.canonical_map, mapping)
    manifest.record("canonicalize", [records_path, cfg.overrides], [L.clusters, L.canonical_map],
                    stats={"keywords": len(mapping), "clusters": len(clusters),
                           "values": len(set(mapping.values()))})


def _study_communities(L: Layout) -> list[str]:
    if L.pairs.exists():
        return sorted({r["community"] for r in read_jsonl(L.pairs)})
    return []


def stage_scales(cfg: RunConfig, manifest: Manifest) -> None:
    L = manifest.layout
    for p in (L.records, L.canonical_map):
        if not p.exists():
            raise MissingStageOutput(f"{p} not found")
    records = load_records(L.records)
    matrix = build_matrix(records, read_json(L.canonical_map), _study_communities(L), cfg.year_tag or None)
    thresholds = cfg.scale_thresholds()
    rows = prevalence_report(matrix, thresholds)
    write_json(L.matrix, matrix.to_json())
    write_json(L.scales, {r.value: r.scale.value for r in rows})
    written = emit_prevalence(L, thresholds)
    counts = {s.value: sum(r.scale is s for r in rows) for s in Scale}
    manifest.record("scales", [L.records, L.canonical_map, L.pairs], [L.matrix, L.scales, *written],
                    stats={"values": len(rows), **counts, "communities": len(matrix.communities)})


def stage_na_report(cfg: RunConfig, manifest: Manifest, records_path: Path | None = None) -> None:
    L = manifest.layout
    records_path = records_path or L.records
    if not Path(records_path).exists():
        raise MissingStageOutput(f"{records_path} not found")
    report = na_report(load_records(records_path))
    write_json(L.na_report, report.to_json())
    written = emit_na(L)
    manifest.record("na-report", [records_path], [L.na_report, *written],
                    stats={"total": report.total, "communities": report.n_communities})


def _require_scores(cfg: RunConfig, stage: str) -> dict[str, tuple[float, float, float]]:
    if not cfg.scores:
        raise FileNotFoundError(f"{stage} needs a prosociality score file; set scores or pass --scores")
    if not Path(cfg.scores).is_file():
        raise FileNotFoundError(f"prosociality score file {cfg.scores!r} not found (needed by {stage})")
    return load_score_file(cfg.scores)


def _lookup_scores(scores: Mapping, ids: Sequence[str]) -> np.ndarray:
    missing = [i for i in ids if i not in scores]
    if missing:
        raise KeyError(f"{len(missing)} comment(s) have no prosociality scores, e.g. {missing[0]}")
    return np.array([scores[i] for i in ids], dtype=np.float64)


def stage_prosocial(cfg: RunConfig, manifest: Manifest) -> None:
    L = manifest.layout
    scores = _require_scores(cfg, "prosocial")
    if not L.regression_sample.exists():
        raise MissingStageOutput("regression_sample.jsonl not found; run 'commval sample-regression' first")
    by_comm: dict[str, tuple[list, list]] = {}
    for row in read_jsonl(L.regression_sample):
        ids, ys = by_comm.setdefault(row["community"], ([], []))
        ids.append(row["comment_id"])
        ys.append(row["label"])
    datasets = {c: (_lookup_scores(scores, ids), np.array(ys)) for c, (ids, ys) in by_comm.items()}
    analysis = analyze_regression(datasets)
    write_json(L.regression, {
        "vif": None if analysis.vif is None else dict(zip(("supportiveness", "agreement", "politeness"),
                                                          analysis.vif.tolist())),
        "pca": {c: m.to_json() for c, m in sorted(analysis.pca.items())},
        "results": {c: r.to_json() for c, r in sorted(analysis.results.items())},
        "failures": analysis.failures,
    })
    written = emit_odds_ratios(L, cfg.alpha, load_metadata(cfg.metadata))
    manifest.record("prosocial", [L.regression_sample, cfg.scores, cfg.metadata], [L.regression, *written],
                    stats={"fitted": len(analysis.results), "failed": len(analysis.failures)})


def stage_recall(cfg: RunConfig, manifest: Manifest) -> None:
    L = manifest.layout
    scores = _require_scores(cfg, "recall")
    for p in (L.records, L.canonical_map, L.scales):
        if not p.exists():
            raise MissingStageOutput(f"{p} not found")
    records = load_records(L.records)
    ids = sorted({r.target_id for r in records})
    raw = _lookup_scores(scores, ids)
    _, composite = pca_first_component(normalize_scores(raw))
    high = prosocial_threshold(composite)
    labels = dict(zip(ids, high.tolist()))
    write_jsonl(L.prosocial_labels, ({"comment_id": i, "score": float(s), "label": HIGH_PRO if h else LOW_PRO}
                                     for i, s, h in zip(ids, composite, high)))
    scales = {v: Scale(s) for v, s in read_json(L.scales).items()}
    rows, table = recall_per_value(records, read_json(L.canonical_map), labels, scales)
    write_json(L.recall, {
        "rows": [{"value": r.value, "scale": r.scale.value, "n_comments": r.n_comments,
                  "n_high_prosocial": r.n_high_prosocial, "recall": r.recall, "bucket": r.bucket} for r in rows],
        "buckets": table,
    })
    written = emit_recall(L)
    manifest.record("recall", [L.records, L.canonical_map, L.scales, cfg.scores],
                    [L.prosocial_labels, L.recall, *written])


# -- reports --------------------------------------------------------------------

def emit_prevalence(L: Layout, thresholds) -> list[Path]:
    matrix = ValueCommunityMatrix.from_json(read_json(L.matrix))
    rows = prevalence_report(matrix, thresholds)
    out = L.reports
    write_csv(out / "prevalence.csv", ("value", "prevalence", "scale", "comment_count", "year"),
              [(r.value, r.prevalence, r.scale.value, r.comment_count, r.year) for r in rows])
    write_json(out / "prevalence.json", [{"value": r.value, "prevalence": r.prevalence, "scale": r.scale.value,
                                          "comment_count": r.comment_count, "year": r.year} for r in rows])
    plot = prevalence_plot_data(rows)
    write_csv(out / "prevalence_plot.csv", ("year", "value", "prevalence", "scale"),
              [(p["year"], p["value"], p["prevalence"], p["scale"]) for p in plot])
    return [out / "prevalence.csv", out / "prevalence.json", out / "prevalence_plot.csv"]


def emit_na(L: Layout) -> list[Path]:
    report = read_json(L.na_report)
    out = L.reports
    write_csv(out / "na_counts.csv", ("community", "na_count"), sorted(report["per_community"].items()))
    write_csv(out / "na_explanations.csv", ("community", "target_id", "year_tag", "reasoning"),
              [(e["community"], e["target_id"], e["year_tag"], e["reasoning"]) for e in report["explanations"]])
    return [out / "na_counts.csv", out / "na_explanations.csv"]


def emit_odds_ratios(L: Layout, alpha: float, metadata: Mapping[str, Mapping]) -> list[Path]:
    data = read_json(L.regression)
    results = {c: RegressionResult(**r) for c, r in data["results"].items()}
    subs = {c: m.get("subscriber_count") for c, m in metadata.items()}
    report = odds_ratio_report(results, subs, alpha, data.get("failures"))
    out = L.reports
    write_csv(out / "odds_ratios.csv",
              ("community", "n", "odds_ratio", "p_value", "subscriber_count", "significant"),
              [(r.community, r.n, r.odds_ratio, r.p_value, r.subscriber_count, r.significant) for r in report.rows])
    write_csv(out / "odds_ratio_plot.csv", ("community", "subscriber_count", "odds_ratio"),
              [(r.community, r.subscriber_count, r.odds_ratio) for r in report.plot_rows])
    write_json(out / "odds_ratio_summary.json", {
        "alpha": alpha, "communities": len(report.rows), "significant": len(report.plot_rows),
        "fraction_below_one": report.fraction_below_one, "failures": report.failures,
        "summary": report.summary(),
    })
    return [out / "odds_ratios.csv", out / "odds_ratio_plot.csv", out / "odds_ratio_summary.json"]


def emit_recall(L: Layout) -> list[Path]:
    data = read_json(L.recall)
    out = L.reports
    write_csv(out / "recall.csv", ("value", "scale", "n_comments", "n_high_prosocial", "recall", "bucket"),
              [(r["value"], r["scale"], r["n_comments"], r["n_high_prosocial"], r["recall"], r["bucket"])
               for r in data["rows"]])
    write_csv(out / "recall_buckets.csv", ("scale", "bucket", "n_values"),
              [(b["scale"], b["bucket"], b["n_values"]) for b in data["buckets"]])
    return [out / "recall.csv", out / "recall_buckets.csv"]


def emit_reports(cfg: RunConfig, manifest: Manifest | None = None) -> list[Path]:
    """Rewrite every report whose stage output exists; skip the rest with a notice."""
    manifest = manifest or Manifest(cfg)
    L = manifest.layout
    emitters: list[tuple[str, Path, Callable[[], list[Path]]]] = [
        ("prevalence", L.matrix, lambda: emit_prevalence(L, cfg.scale_thresholds())),
        ("n/a", L.na_report, lambda: emit_na(L)),
        ("odds ratios", L.regression, lambda: emit_odds_ratios(L, cfg.alpha, load_metadata(cfg.metadata))),
        ("recall", L.recall, lambda: emit_recall(L)),
    ]
    written: list[Path] = []
    sources = []
    for name, source, emit in emitters:
        if not source.exists():
            logger.warning("report: no %s, skipping %s report", source.name, name)
            continue
        sources.append(source)
        try:
            written.extend(emit())
        except OSError as exc:
            raise StageFailed("report", exc) from exc
    if not sources:
        raise MissingStageOutput(f"no stage outputs in {L.root} to report on")
    manifest.record("report", sources, written)
    return written


STAGES: dict[str, Callable[..., None]] = {
    "ingest": stage_ingest,
    "label": stage_label,
    "sample-pairs": stage_sample_pairs,
    "extract": stage_extract,
    "canonicalize": stage_canonicalize,
    "scales": stage_scales,
    "na-report": stage_na_report,
    "sample-regression": stage_sample_regression,
    "prosocial": stage_prosocial,
    "recall": stage_recall,
}

CORE_ORDER = ("ingest", "label", "sample-pairs", "extract", "canonicalize", "scales", "na-report")
PROSOCIAL_ORDER = ("sample-regression", "prosocial", "recall")


def run_stage(name: str, cfg: RunConfig, manifest: Manifest | None = None, **kwargs) -> None:
    """Run one stage; failures are written to the manifest and re-raised as StageFailed."""
    manifest = manifest or Manifest(cfg)
    try:
        STAGES[name](cfg, manifest, **kwargs)
    except StageFailed:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        manifest.stages[name] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}",
                                 "inputs": {}, "outputs": {}}
        try:
            manifest.save()
        except OSError:
            pass
        raise StageFailed(name, exc) from exc


def run_pipeline(cfg: RunConfig, provider=None) -> Manifest:
    """Run every stage in order, then emit reports.

    The prosocial stages run only when ``cfg.prosocial`` is set. Outputs of
    stages that finished before a failure stay on disk.
    """
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    manifest = Manifest(cfg)
    manifest.stages = {}
    order = CORE_ORDER + (PROSOCIAL_ORDER if cfg.prosocial else ())
    for name in order:
        kwargs = {"provider": provider} if provider is not None and name in ("extract", "canonicalize") else {}
        run_stage(name, cfg, manifest, **kwargs)
    try:
        emit_reports(cfg, manifest)
    except (MissingStageOutput, ProviderUnavailable) as exc:
        raise StageFailed("report", exc) from exc
    return manifest
