"""Score percentiles, Low/Mid/High labels, and seeded per-community sampling."""

from __future__ import annotations

import enum
import logging
import math
import zlib
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .corpus import Comment, CommentStore, masked, resolve_context
from .errors import CommunitySkipped, EmptyInput

logger = logging.getLogger(__name__)

PRNG_NAME = f"numpy.random.PCG64/SeedSequence(seed, crc32(community)) numpy={np.__version__}"


class ScoreLabel(str, enum.Enum):
    LOW = "Low"
    MID = "Mid"
    HIGH = "High"


@dataclass(frozen=True)
class SamplePlan:
    pairs_per_community: int = 100
    regression_per_class: int = 2500
    low_percentile: float = 0.70
    high_percentile: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.low_percentile < self.high_percentile < 1:
            raise ValueError("need 0 < low_percentile < high_percentile < 1")
        if self.pairs_per_community <= 0 or self.regression_per_class <= 0:
            raise ValueError("sample counts must be positive")


@dataclass(frozen=True)
class CommentPair:
    community: str
    context: Comment
    target: Comment
    year_tag: str = ""

    def __post_init__(self):
        if self.target.parent_id != self.context.id:
            raise ValueError(f"{self.target.id} is not a reply to {self.context.id}")


def as_fraction(p) -> Fraction:
    """Exact rational for a user-facing fraction like 0.7 (read as 7/10)."""
    if isinstance(p, Fraction):
        return p
    if isinstance(p, float):
        return Fraction(repr(p))
    return Fraction(p)


def percentile(scores: Sequence[int], p) -> Fraction:
    """Linear-interpolation percentile on ``n - 1`` ranks, computed exactly."""
    if len(scores) == 0:
        raise EmptyInput("percentile of an empty list")
    q = as_fraction(p)
    if not 0 <= q <= 1:
        raise ValueError(f"percentile fraction {p} outside [0, 1]")
    s = sorted(scores)
    r = q * (len(s) - 1)
    lo, hi = math.floor(r), math.ceil(r)
    return Fraction(s[lo]) + (r - lo) * (Fraction(s[hi]) - Fraction(s[lo]))


def thresholds(scores: Sequence[int], plan: SamplePlan) -> tuple[Fraction, Fraction]:
    return percentile(scores, plan.low_percentile), percentile(scores, plan.high_percentile)


def classify(score: int, low: Fraction, high: Fraction) -> ScoreLabel:
    if score < low:
        return ScoreLabel.LOW
    if score > high:
        return ScoreLabel.HIGH
    return ScoreLabel.MID


def label_scores(community_comments: Sequence[Comment], plan: SamplePlan) -> dict[str, ScoreLabel]:
    if not community_comments:
        raise EmptyInput("no comments to label")
    low, high = thresholds([c.score for c in community_comments], plan)
    return {c.id: classify(c.score, low, high) for c in community_comments}


def label_store(store: CommentStore, plan: SamplePlan) -> dict[str, dict[str, ScoreLabel]]:
    return {name: label_scores(store.community(name), plan) for name in store.communities}


def community_rng(seed: int, community: str) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(community.encode("utf-8"))])
    return np.random.Generator(np.random.PCG64(ss))


def _draw(rng: np.random.Generator, items: list, n: int) -> list:
    idx = np.sort(rng.permutation(len(items))[:n])
    return [items[i] for i in idx]


def pair_candidates(store: CommentStore, community: str, labels: Mapping[str, ScoreLabel]) -> list[tuple[Comment, Comment]]:
    out = []
    for c in store.community(community):
        if labels.get(c.id) is not ScoreLabel.HIGH:
            continue
        ctx = resolve_context(store, c)
        if ctx is not None:
            out.append((ctx, c))
    return out


def sample_pairs(
    store: CommentStore,
    labels: Mapping[str, Mapping[str, ScoreLabel]],
    plan: SamplePlan,
) -> tuple[list[CommentPair], list[str]]:
    """Draw ``plan.pairs_per_community`` context/High-reply pairs per community.

    Candidates are High comments whose parent comment is in the (already
    filtered) store, so the context is eligible too. Communities with too few
    candidates contribute nothing and are returned in the excluded list.
    """
    pairs: list[CommentPair] = []
    excluded: list[str] = []
    n = plan.pairs_per_community
    for name in store.communities:
        cands = pair_candidates(store, name, labels.get(name, {}))
        if len(cands) < n:
            logger.info("%s: %d pair candidates < %d, excluded", name, len(cands), n)
            excluded.append(name)
            continue
        for ctx, tgt in _draw(community_rng(plan.seed, name), cands, n):
            pairs.append(CommentPair(name, masked(ctx), masked(tgt), tgt.year_tag))
    return pairs, excluded


def sample_regression_community(
    store: CommentStore, community: str, labels: Mapping[str, ScoreLabel], plan: SamplePlan
) -> list[tuple[Comment, int]]:
    comments = store.community(community)
    high = [c for c in comments if labels.get(c.id) is ScoreLabel.HIGH]
    low = [c for c in comments if labels.get(c.id) is ScoreLabel.LOW]
    if not high or not low:
        raise CommunitySkipped(f"{community}: {len(high)} High and {len(low)} Low comments")
    m = min(plan.regression_per_class, len(high), len(low))
    rng = community_rng(plan.seed + 1, community)
    chosen = [(c, 1) for c in _draw(rng, high, m)] + [(c, 0) for c in _draw(rng, low, m)]
    return chosen


def sample_regression_set(
    store: CommentStore,
    labels: Mapping[str, Mapping[str, ScoreLabel]],
    plan: SamplePlan,
) -> tuple[dict[str, list[tuple[Comment, int]]], list[str]]:
    """Balanced High(1)/Low(0) samples per community, plus skipped communities."""
    out: dict[str, list[tuple[Comment, int]]] = {}
    skipped: list[str] = []
    for name in store.communities:
        try:
            out[name] = sample_regression_community(store, name, labels.get(name, {}), plan)
        except CommunitySkipped as exc:
            logger.warning("%s", exc)
            skipped.append(name)
    return out, skipped


def pair_manifest_rows(pairs: Sequence[CommentPair], seed: int) -> list[dict]:
    return [
        {
            "community": p.community,
            "target_id": p.target.id,
            "context_id": p.context.id,
            "year_tag": p.year_tag,
            "seed": seed,
        }
        for p in pairs
    ]


def pairs_from_manifest(rows: Sequence[Mapping], store: CommentStore) -> list[CommentPair]:
    pairs = []
    for row in rows:
        tgt = store.get(row["target_id"])
        ctx = store.get(row["context_id"])
        if tgt is None or ctx is None:
            raise KeyError(f"pair {row['target_id']}/{row['context_id']} not in store")
        pairs.append(CommentPair(row["community"], masked(ctx), masked(tgt), row.get("year_tag", "")))
    return pairs
