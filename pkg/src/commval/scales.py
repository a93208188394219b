"""Value × community counts, macro/meso/micro scales, year diffs and N/A accounting."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import UnknownCommunity, UnknownValue, UnmappedKeyword
from .extraction import ExtractionRecord
from .labeling import as_fraction


class Scale(str, enum.Enum):
    MACRO = "macro"
    MESO = "meso"
    MICRO = "micro"


SCALE_ORDER = {Scale.MACRO: 0, Scale.MESO: 1, Scale.MICRO: 2}


@dataclass(frozen=True)
class ScaleThresholds:
    macro_fraction: float = 0.75
    micro_fraction: float = 0.25

    def __post_init__(self):
        if not 0 < self.micro_fraction < self.macro_fraction < 1:
            raise ValueError("need 0 < micro_fraction < macro_fraction < 1")

    def macro_min(self, n_communities: int) -> int:
        return math.ceil(as_fraction(self.macro_fraction) * n_communities)

    def micro_max(self, n_communities: int) -> int:
        return math.floor(as_fraction(self.micro_fraction) * n_communities)

    def classify(self, prevalence: int, n_communities: int) -> Scale:
        if prevalence >= self.macro_min(n_communities):
            return Scale.MACRO
        if prevalence <= self.micro_max(n_communities):
            return Scale.MICRO
        return Scale.MESO


@dataclass
class ValueCommunityMatrix:
    values: list[str]
    communities: list[str]
    counts: np.ndarray  # shape (len(values), len(communities))
    year_tag: str = ""
    records_per_community: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(len(self.values), len(self.communities))
        self._vi = {v: i for i, v in enumerate(self.values)}
        self._ci = {c: i for i, c in enumerate(self.communities)}

    def _row(self, value: str) -> np.ndarray:
        try:
            return self.counts[self._vi[value]]
        except KeyError:
            raise UnknownValue(value) from None

    def count(self, value: str, community: str) -> int:
        if community not in self._ci:
            raise UnknownCommunity(community)
        return int(self._row(value)[self._ci[community]])

    def prevalence(self, value: str) -> int:
        return int(np.count_nonzero(self._row(value)))

    def comment_count(self, value: str) -> int:
        return int(self._row(value).sum())

    def values_in(self, community: str) -> set[str]:
        if community not in self._ci:
            raise UnknownCommunity(community)
        col = self.counts[:, self._ci[community]]
        return {v for v, n in zip(self.values, col) if n > 0}

    def to_json(self) -> dict:
        return {
            "year_tag": self.year_tag,
            "values": self.values,
            "communities": self.communities,
            "counts": self.counts.tolist(),
            "records_per_community": self.records_per_community,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ValueCommunityMatrix":
        return cls(list(obj["values"]), list(obj["communities"]), np.array(obj["counts"], dtype=np.int64),
                   obj.get("year_tag", ""), dict(obj.get("records_per_community", {})))


def record_values(record: ExtractionRecord, mapping: Mapping[str, str]) -> set[str]:
    """Canonical values a record exhibits; empty for N/A records."""
    if record.na:
        return set()
    out = set()
    for kw in record.keywords:
        if kw not in mapping:
            raise UnmappedKeyword(kw)
        out.add(mapping[kw])
    return out


def build_matrix(
    records: Sequence[ExtractionRecord],
    mapping: Mapping[str, str],
    communities: Iterable[str] = (),
    year_tag: str | None = None,
) -> ValueCommunityMatrix:
    """Count, per value and community, the records exhibiting that value.

    A record counts once per value however many of its keywords map there.
    ``communities`` adds columns for communities with no records.
    """
    comms = sorted({r.community for r in records} | set(communities))
    per_cell: Counter = Counter()
    per_comm: Counter = Counter()
    for r in records:
        per_comm[r.community] += 1
        for v in record_values(r, mapping):
            per_cell[v, r.community] += 1
    values = sorted({v for v, _ in per_cell})
    ci = {c: i for i, c in enumerate(comms)}
    vi = {v: i for i, v in enumerate(values)}
    counts = np.zeros((len(values), len(comms)), dtype=np.int64)
    for (v, c), n in per_cell.items():
        counts[vi[v], ci[c]] = n
    if year_tag is None:
        year_tag = records[0].year_tag if records else ""
    return ValueCommunityMatrix(values, comms, counts, year_tag, {c: per_comm.get(c, 0) for c in comms})


def classify_scale(value: str, matrix: ValueCommunityMatrix, thresholds: ScaleThresholds = ScaleThresholds()) -> Scale:
    return thresholds.classify(matrix.prevalence(value), len(matrix.communities))


@dataclass(frozen=True)
class PrevalenceRow:
    value: str
    prevalence: int
    scale: Scale
    comment_count: int
    year: str


def prevalence_report(matrix: ValueCommunityMatrix, thresholds: ScaleThresholds = ScaleThresholds()) -> list[PrevalenceRow]:
    rows = [
        PrevalenceRow(v, matrix.prevalence(v), classify_scale(v, matrix, thresholds), matrix.comment_count(v),
                      matrix.year_tag)
        for v in matrix.values
    ]
    rows.sort(key=lambda r: (SCALE_ORDER[r.scale], -r.prevalence, r.value))
    return rows


def prevalence_plot_data(rows: Sequence[PrevalenceRow]) -> list[dict]:
    return [{"year": r.year, "value": r.value, "prevalence": r.prevalence, "scale": r.scale.value} for r in rows]


def scale_table(matrix: ValueCommunityMatrix, thresholds: ScaleThresholds = ScaleThresholds()) -> dict[str, Scale]:
    return {v: classify_scale(v, matrix, thresholds) for v in matrix.values}


def compare_years(
    matrix_a: ValueCommunityMatrix, matrix_b: ValueCommunityMatrix, community: str
) -> tuple[set[str], set[str], set[str]]:
    """``(kept, added, removed)`` going from ``matrix_a``'s year to ``matrix_b``'s."""
    a = matrix_a.values_in(community)
    b = matrix_b.values_in(community)
    return a & b, b - a, a - b


@dataclass
class NAReport:
    per_community: dict[str, int]
    explanations: list[dict]

    @property
    def total(self) -> int:
        return sum(self.per_community.values())

    @property
    def n_communities(self) -> int:
        return len(self.per_community)

    def to_json(self) -> dict:
        return {"total": self.total, "n_communities": self.n_communities,
                "per_community": self.per_community, "explanations": self.explanations}


def na_report(records: Iterable[ExtractionRecord]) -> NAReport:
    counts: Counter = Counter()
    explanations = []
    for r in sorted((r for r in records if r.na), key=lambda r: (r.community, r.target_id)):
        counts[r.community] += 1
        explanations.append({"community": r.community, "target_id": r.target_id,
                             "year_tag": r.year_tag, "reasoning": r.reasoning})
    return NAReport(dict(sorted(counts.items())), explanations)
