"""Prosociality statistics: normalisation, VIF, PCA score, logistic fits and recall.

The three input metrics are supportiveness, agreement and politeness. Raw
scores come from an external scorer (a score file keyed by comment id);
:class:`LexiconScorer` is a transparent stand-in for tests.
"""

from __future__ import annotations

import csv
import logging
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CollinearInput,
    DegenerateColumn,
    DegenerateColumnWarning,
    DegenerateInput,
    EmptyInput,
    EmptyValueWarning,
    InsufficientData,
    SeparationDetected,
    SingleClass,
    UnknownValue,
)
from .extraction import ExtractionRecord
from .scales import SCALE_ORDER, Scale, record_values

logger = logging.getLogger(__name__)

METRICS = ("supportiveness", "agreement", "politeness")
HIGH_PRO = "HighPro"
LOW_PRO = "LowPro"

BUCKET_LOW = "<0.1"
BUCKET_MID = "0.1–0.25"
BUCKET_HIGH = "≥0.25"
BUCKETS = (BUCKET_LOW, BUCKET_MID, BUCKET_HIGH)

COLLINEAR_R2 = 1 - 1e-12
SEPARATION_SLOPE = 50.0
MAX_ITER = 100
COEF_TOL = 1e-10


def normalize_scores(raw) -> np.ndarray:
    """Min-max scale each column to [0, 1]; a constant column becomes 0.5."""
    x = np.asarray(raw, dtype=np.float64)
    if x.size == 0:
        raise EmptyInput("no scores to normalise")
    if x.ndim == 1:
        x = x[:, None]
    lo, hi = x.min(axis=0), x.max(axis=0)
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        if hi[j] == lo[j]:
            warnings.warn(f"column {j} is constant; mapped to 0.5", DegenerateColumnWarning, stacklevel=2)
            out[:, j] = 0.5
        else:
            out[:, j] = (x[:, j] - lo[j]) / (hi[j] - lo[j])
    return out


def _r_squared(y: np.ndarray, others: np.ndarray) -> float:
    a = np.column_stack([np.ones(len(y)), others])
    beta, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ beta
    sst = float(((y - y.mean()) ** 2).sum())
    return 1.0 - float(resid @ resid) / sst


def vif(scores) -> np.ndarray:
    """Variance inflation factor of each column against the others (OLS with intercept)."""
    x = np.asarray(scores, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError("need an n x p matrix with p >= 2")
    if x.shape[0] < 4:
        raise InsufficientData(f"VIF needs at least 4 rows, got {x.shape[0]}")
    for j in range(x.shape[1]):
        if np.ptp(x[:, j]) == 0:
            raise DegenerateColumn(f"column {j} is constant")
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        r2 = _r_squared(x[:, j], np.delete(x, j, axis=1))
        if r2 >= COLLINEAR_R2:
            raise CollinearInput(f"column {j} is a linear function of the others (R^2={r2:.15f})")
        out[j] = 1.0 / (1.0 - r2)
    return out


@dataclass(frozen=True)
class PcaModel:
    component: np.ndarray
    variance_explained: float
    means: np.ndarray
    orientation_sign: int
    eigenvalues: np.ndarray

    def transform(self, scores) -> np.ndarray:
        return (np.asarray(scores, dtype=np.float64) - self.means) @ self.component

    def to_json(self) -> dict:
        return {"component": self.component.tolist(), "variance_explained": self.variance_explained,
                "means": self.means.tolist(), "orientation_sign": self.orientation_sign,
                "eigenvalues": self.eigenvalues.tolist()}


def pca_first_component(scores) -> tuple[PcaModel, np.ndarray]:
    """First principal component of the covariance matrix and the per-row score.

    The component is oriented to correlate non-negatively with the row mean of
    the metrics, so "higher" always means "more prosocial".
    """
    x = np.asarray(scores, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise InsufficientData("PCA needs at least 3 rows")
    means = x.mean(axis=0)
    c = x - means
    cov = c.T @ c / (x.shape[0] - 1)
    total = float(np.trace(cov))
    if not total > 0:
        raise DegenerateInput("zero total variance")
    w, v = np.linalg.eigh(cov)
    w = w[::-1]
    comp = v[:, -1].copy()
    score = c @ comp
    agreement = float(score @ c.mean(axis=1))
    sign = 1
    if agreement < 0 or (agreement == 0 and comp[np.flatnonzero(comp)[0]] < 0):
        sign = -1
    comp *= sign
    model = PcaModel(comp, float(w[0] / total), means, sign, w)
    return model, c @ comp


def _expit(eta: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -eta))


def _loglik(a: float, b: float, z: np.ndarray, y: np.ndarray) -> float:
    eta = a + b * z
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


@dataclass(frozen=True)
class RegressionResult:
    intercept: float
    slope: float
    slope_std_err: float
    z_statistic: float
    p_value: float
    odds_ratio: float
    converged: bool
    n: int
    iterations: int = 0
    log_likelihood: float = float("nan")

    def predict_proba(self, x) -> np.ndarray:
        return _expit(self.intercept + self.slope * np.asarray(x, dtype=np.float64))

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def logistic_fit(x, y) -> RegressionResult:
    """Maximum-likelihood fit of ``P(y=1) = expit(intercept + slope * x)``.

    Newton iterations with step halving, run on standardised ``x`` and mapped
    back. The Wald test gives the two-sided p-value for the slope.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y differ in length")
    n = len(x)
    if n < 10:
        raise InsufficientData(f"logistic fit needs n >= 10, got {n}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    n1 = int(y.sum())
    if n1 == 0 or n1 == n:
        raise SingleClass("only one class present")
    mu, sd = float(x.mean()), float(x.std())
    if sd == 0:
        raise DegenerateInput("predictor is constant")
    z = (x - mu) / sd

    pos, neg = z[y == 1], z[y == 0]
    if pos.min() >= neg.max() or neg.min() >= pos.max():
        raise SeparationDetected("classes are separated by the predictor; the MLE does not exist")

    beta = np.array([math.log(n1 / (n - n1)), 0.0])
    ll = _loglik(beta[0], beta[1], z, y)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        p = _expit(beta[0] + beta[1] * z)
        w = p * (1 - p)
        grad = np.array([np.sum(y - p), np.sum((y - p) * z)])
        hess = np.array([[w.sum(), (w * z).sum()], [(w * z).sum(), (w * z * z).sum()]])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise SeparationDetected("singular information matrix") from exc
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = _loglik(cand[0], cand[1], z, y)
            if ll_new >= ll or t < 1e-10:
                break
            t *= 0.5
        delta = float(np.max(np.abs(cand - beta)))
        improving = ll_new > ll
        beta, ll = cand, ll_new
        if abs(beta[1]) > SEPARATION_SLOPE and improving:
            raise SeparationDetected(f"standardised slope {beta[1]:.1f} still growing")
        if delta < COEF_TOL:
            converged = True
            break

    p = _expit(beta[0] + beta[1] * z)
    w = p * (1 - p)
    info = np.array([[w.sum(), (w * z).sum()], [(w * z).sum(), (w * z * z).sum()]])
    cov = np.linalg.inv(info)
    se_z = math.sqrt(cov[1, 1])
    zstat = beta[1] / se_z
    slope = beta[1] / sd
    return RegressionResult(
        intercept=float(beta[0] - beta[1] * mu / sd),
        slope=float(slope),
        slope_std_err=se_z / sd,
        z_statistic=float(zstat),
        p_value=min(1.0, math.erfc(abs(zstat) / math.sqrt(2))),
        odds_ratio=math.exp(slope),
        converged=converged,
        n=n,
        iterations=it,
        log_likelihood=ll,
    )


@dataclass(frozen=True)
class OddsRatioRow:
    community: str
    n: int
    odds_ratio: float
    p_value: float
    subscriber_count: int | None
    significant: bool


@dataclass
class OddsRatioReport:
    rows: list[OddsRatioRow]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def plot_rows(self) -> list[OddsRatioRow]:
        return [r for r in self.rows if r.significant]

    @property
    def fraction_below_one(self) -> float | None:
        sig = self.plot_rows
        if not sig:
            return None
        return sum(r.odds_ratio < 1 for r in sig) / len(sig)

    def summary(self) -> str:
        frac = self.fraction_below_one
        sig = len(self.plot_rows)
        if frac is None:
            return f"0 of {len(self.rows)} communities significant"
        return (f"{sig} of {len(self.rows)} communities significant; "
                f"{frac:.1%} of those have odds ratio < 1")


def odds_ratio_report(
    results: Mapping[str, RegressionResult],
    subscribers: Mapping[str, int] | None = None,
    alpha: float = 0.05,
    failures: Mapping[str, str] | None = None,
) -> OddsRatioReport:
    subs = subscribers or {}
    rows = [
        OddsRatioRow(c, r.n, r.odds_ratio, r.p_value, subs.get(c), r.converged and r.p_value < alpha)
        for c, r in sorted(results.items())
    ]
    return OddsRatioReport(rows, dict(failures or {}))


@dataclass
class RegressionAnalysis:
    vif: np.ndarray | None
    pca: dict[str, PcaModel]
    results: dict[str, RegressionResult]
    failures: dict[str, str]


def analyze_regression(datasets: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> RegressionAnalysis:
    """Per-community prosociality regressions for one year.

    ``datasets`` maps community → (raw n×3 scores, 0/1 labels). Scores are
    normalised over all communities together, VIF is computed on the pooled
    normalised scores, and PCA plus the logistic fit run per community.
    """
    names = sorted(datasets)
    if not names:
        raise EmptyInput("no regression datasets")
    sizes = [len(datasets[c][0]) for c in names]
    pooled = normalize_scores(np.vstack([np.asarray(datasets[c][0], dtype=np.float64) for c in names]))
    try:
        vifs = vif(pooled)
    except (CollinearInput, DegenerateColumn, InsufficientData) as exc:
        logger.warning("VIF not computed: %s", exc)
        vifs = None
    pcas: dict[str, PcaModel] = {}
    results: dict[str, RegressionResult] = {}
    failures: dict[str, str] = {}
    start = 0
    for c, size in zip(names, sizes):
        block = pooled[start:start + size]
        start += size
        labels = np.asarray(datasets[c][1])
        try:
            model, score = pca_first_component(block)
            pcas[c] = model
            results[c] = logistic_fit(score, labels)
        except (SeparationDetected, SingleClass, DegenerateInput, InsufficientData) as exc:
            logger.warning("%s: regression skipped (%s)", c, exc)
            failures[c] = f"{type(exc).__name__}: {exc}"
    return RegressionAnalysis(vifs, pcas, results, failures)


def prosocial_threshold(scores) -> np.ndarray:
    """True (HighPro) where the score exceeds mean + one population SD."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise EmptyInput("no scores")
    if np.ptp(s) == 0:
        return np.zeros(s.shape, dtype=bool)
    return s > s.mean() + s.std()


def bucket_for(n_high: int, n: int) -> str:
    r = Fraction(n_high, n)
    if r < Fraction(1, 10):
        return BUCKET_LOW
    if r < Fraction(1, 4):
        return BUCKET_MID
    return BUCKET_HIGH


@dataclass(frozen=True)
class RecallRow:
    value: str
    scale: Scale
    n_comments: int
    n_high_prosocial: int
    recall: float
    bucket: str


def recall_per_value(
    records: Iterable[ExtractionRecord],
    mapping: Mapping[str, str],
    high_prosocial: Mapping[str, bool],
    scales: Mapping[str, Scale],
) -> tuple[list[RecallRow], list[dict]]:
    """Per-value share of exhibiting comments labelled HighPro, and bucket counts per scale."""
    total: Counter = Counter()
    high: Counter = Counter()
    for r in records:
        vals = record_values(r, mapping)
        if not vals:
            continue
        if r.target_id not in high_prosocial:
            raise KeyError(f"no prosocial label for comment {r.target_id}")
        for v in vals:
            total[v] += 1
            high[v] += bool(high_prosocial[r.target_id])

    for v in total:
        if v not in scales:
            raise UnknownValue(v)
    empty = sorted(v for v in scales if total[v] == 0)
    if empty:
        warnings.warn(f"{len(empty)} value(s) have no comments: {', '.join(empty)}", EmptyValueWarning, stacklevel=2)

    rows = [
        RecallRow(v, Scale(scales[v]), total[v], high[v], high[v] / total[v], bucket_for(high[v], total[v]))
        for v in total
    ]
    rows.sort(key=lambda r: (SCALE_ORDER[r.scale], -r.recall, r.value))
    tally = Counter((r.scale, r.bucket) for r in rows)
    table = [{"scale": s.value, "bucket": b, "n_values": tally[s, b]} for s in Scale for b in BUCKETS]
    return rows, table


def load_score_file(path: str | Path) -> dict[str, tuple[float, float, float]]:
    """Read ``comment_id,supportiveness,agreement,politeness`` rows."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["comment_id"]] = tuple(float(row[m]) for m in METRICS)
    return out


def write_score_file(path: str | Path, scores: Mapping[str, Sequence[float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("comment_id",) + METRICS)
        for cid in sorted(scores):
            w.writerow([cid] + [repr(float(v)) for v in scores[cid]])


class LexiconScorer:
    """Word-count scorer for tests. Not a substitute for trained classifiers."""

    SUPPORT = {"thanks", "thank", "support", "hope", "sorry", "care", "love", "proud", "hug", "luck"}
    AGREE = {"agree", "agreed", "yes", "exactly", "true", "right", "same", "absolutely", "indeed"}
    POLITE = {"please", "thanks", "thank", "appreciate", "kindly", "sorry", "welcome", "pardon"}

    _word = re.compile(r"[a-z']+")

    def score(self, text: str) -> tuple[float, float, float]:
        words = self._word.findall(text.lower())
        if not words:
            return (0.0, 0.0, 0.0)
        n = len(words)
        return (sum(w in self.SUPPORT for w in words) / n,
                sum(w in self.AGREE for w in words) / n,
                sum(w in self.POLITE for w in words) / n)
