"""Agreement between human raters on extracted values, and label accuracy."""

from __future__ import annotations

import csv
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CommunityTooSmall, InsufficientData, UnadjudicatedItem
from .extraction import ExtractionRecord
from .labeling import community_rng

WORKSHEET_FIELDS = ("comment_id", "community", "body", "value", "rater_1", "rater_2", "resolution")

_TRUE = {"1", "y", "yes", "true", "exhibited", "x"}
_FALSE = {"0", "n", "no", "false", "not_exhibited", "not exhibited"}


def parse_judgment(text: str | None) -> bool | None:
    """``yes``/``1``/``exhibited`` → True, ``no``/``0`` → False, blank → missing."""
    if text is None:
        return None
    t = text.strip().lower()
    if not t:
        return None
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"unrecognised judgment {text!r}")


@dataclass
class AnnotationTable:
    """Binary exhibited/not judgments per (comment, value) item and rater.

    ``judgments[i][r]`` is True, False or None (missing) for item ``i`` and
    rater ``r``.
    """

    items: list[tuple[str, str]]
    raters: list[str]
    judgments: list[list[bool | None]]
    resolution: list[bool | None] = field(default_factory=list)

    def __post_init__(self):
        if len(self.raters) < 2:
            raise ValueError("need at least two raters")
        if len(self.judgments) != len(self.items):
            raise ValueError("one judgment row per item")
        for row in self.judgments:
            if len(row) != len(self.raters):
                raise ValueError("one judgment per rater")

    @classmethod
    def from_worksheet(cls, path: str | Path) -> "AnnotationTable":
        items, judgments, resolution = [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            raters = sorted((f for f in reader.fieldnames or () if f.startswith("rater_")),
                            key=lambda f: int(f.split("_", 1)[1]) if f.split("_", 1)[1].isdigit() else 0)
            for row in reader:
                items.append((row["comment_id"], row["value"]))
                judgments.append([parse_judgment(row.get(r)) for r in raters])
                resolution.append(parse_judgment(row.get("resolution")))
        return cls(items, raters, judgments, resolution)


def coincidence_matrix(units: Iterable[Sequence]) -> tuple[list, np.ndarray]:
    """Nominal coincidence matrix over units with at least two values."""
    units = [list(u) for u in units if len(u) >= 2]
    cats = sorted({v for u in units for v in u}, key=repr)
    idx = {c: i for i, c in enumerate(cats)}
    o = np.zeros((len(cats), len(cats)))
    for u in units:
        m = len(u)
        counts = Counter(u)
        for c, nc in counts.items():
            for k, nk in counts.items():
                pairs = nc * (nk - 1) if c == k else nc * nk
                o[idx[c], idx[k]] += pairs / (m - 1)
    return cats, o


def krippendorff_alpha(table: AnnotationTable) -> float:
    """Nominal Krippendorff's alpha; missing judgments are dropped per item."""
    units = [[j for j in row if j is not None] for row in table.judgments]
    pairable = [u for u in units if len(u) >= 2]
    if len(pairable) < 2:
        raise InsufficientData("need at least two items with two or more judgments")
    return alpha_from_units(pairable)


def alpha_from_units(units: Iterable[Sequence]) -> float:
    _, o = coincidence_matrix(units)
    n_c = o.sum(axis=1)
    n = n_c.sum()
    observed = (o.sum() - np.trace(o)) / n
    expected = (n * n - (n_c ** 2).sum()) / (n * (n - 1))
    if observed == 0:
        return 1.0
    return float(1.0 - observed / expected)


def label_accuracy(table: AnnotationTable, resolution: Sequence[bool | None] | None = None) -> float:
    """Share of (comment, value) items adjudicated as exhibited."""
    res = list(resolution if resolution is not None else table.resolution)
    if not table.items:
        raise InsufficientData("no items")
    if len(res) != len(table.items) or any(r is None for r in res):
        missing = sum(r is None for r in res) + max(0, len(table.items) - len(res))
        raise UnadjudicatedItem(f"{missing} item(s) lack an adjudicated judgment")
    return sum(bool(r) for r in res) / len(res)


def sample_for_annotation(
    records: Sequence[ExtractionRecord],
    per_community: int,
    seed: int,
    mapping: Mapping[str, str] | None = None,
    bodies: Mapping[str, str] | None = None,
) -> list[dict]:
    """Seeded per-community sample of non-N/A records, one row per extracted value.

    With ``mapping`` the rows carry canonical values; otherwise raw keywords.
    """
    if not records:
        raise InsufficientData("no records to sample")
    by_comm: dict[str, list[ExtractionRecord]] = defaultdict(list)
    for r in sorted(records, key=lambda r: (r.community, r.target_id)):
        if not r.na:
            by_comm[r.community].append(r)
    rows = []
    for comm in sorted(by_comm):
        pool = by_comm[comm]
        if len(pool) < per_community:
            warnings.warn(f"{comm}: only {len(pool)} record(s), wanted {per_community}", CommunityTooSmall,
                          stacklevel=2)
            chosen = pool
        else:
            idx = np.sort(community_rng(seed, comm).permutation(len(pool))[:per_community])
            chosen = [pool[i] for i in idx]
        for r in chosen:
            values = sorted({mapping.get(k, k) for k in r.keywords}) if mapping else list(r.keywords)
            for v in values:
                rows.append({"comment_id": r.target_id, "community": comm,
                             "body": (bodies or {}).get(r.target_id, ""), "value": v,
                             "rater_1": "", "rater_2": "", "resolution": ""})
    return rows


def write_worksheet(path: str | Path, rows: Sequence[Mapping]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=WORKSHEET_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in WORKSHEET_FIELDS})
