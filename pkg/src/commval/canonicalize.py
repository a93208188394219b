"""Keyword embedding, average-linkage clustering, cluster labels and regroup overrides."""

from __future__ import annotations

import hashlib
import json
import logging
import shlex
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import BadK, EmbedderUnavailable, UnknownKeyword, UnknownLabel
from .extraction import ExtractionRecord, normalize_keyword
from .linkage import average_linkage_merges
from .providers import Provider

logger = logging.getLogger(__name__)

CanonicalMap = dict  # keyword -> canonical value label


class EmbeddingPool:
    """Unit-normalised keyword vectors of a common dimension."""

    def __init__(self, d: int):
        if d <= 0:
            raise ValueError("dimension must be positive")
        self.d = d
        self._vectors: dict[str, np.ndarray] = {}

    def add(self, keyword: str, vector) -> None:
        v = np.asarray(vector, dtype=np.float64).ravel()
        if v.shape != (self.d,):
            raise ValueError(f"{keyword!r}: expected dimension {self.d}, got {v.shape}")
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0:
            raise ValueError(f"{keyword!r}: zero or non-finite vector")
        v = v / norm
        v.setflags(write=False)
        self._vectors[keyword] = v

    def __getitem__(self, keyword: str) -> np.ndarray:
        return self._vectors[keyword]

    def __contains__(self, keyword: object) -> bool:
        return keyword in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def keywords(self) -> list[str]:
        return sorted(self._vectors)

    def matrix(self, keywords: Sequence[str] | None = None) -> np.ndarray:
        keys = self.keywords() if keywords is None else keywords
        if not keys:
            return np.empty((0, self.d))
        return np.vstack([self._vectors[k] for k in keys])


class HashEmbedder:
    """Deterministic test embedder: seeded projection of character trigrams.

    Each trigram of ``<keyword>`` (plus the whole word) seeds a Gaussian
    vector; the sum is the embedding. Keywords sharing spelling land close
    together, which is all the tests need. No model download involved.
    """

    name = "hash"

    def __init__(self, d: int = 32, seed: int = 0):
        self.d = d
        self.seed = seed

    def _feature(self, feat: str) -> np.ndarray:
        h = hashlib.blake2b(f"{self.seed}\x00{feat}".encode("utf-8"), digest_size=8).digest()
        return np.random.default_rng(int.from_bytes(h, "little")).standard_normal(self.d)

    def embed(self, keywords: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(keywords), self.d))
        for row, kw in enumerate(keywords):
            padded = f"<{kw}>"
            feats = [padded[i:i + 3] for i in range(max(len(padded) - 2, 1))] + [kw]
            for f in feats:
                out[row] += self._feature(f)
        return out


class FileEmbedder:
    """Vectors precomputed elsewhere, stored as JSON ``{keyword: [floats]}``."""

    name = "file"

    def __init__(self, path: str | Path):
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise EmbedderUnavailable(f"cannot load embeddings from {path}: {exc}") from exc
        self.vectors = {normalize_keyword(k): np.asarray(v, dtype=np.float64) for k, v in raw.items()}
        dims = {v.shape for v in self.vectors.values()}
        if len(dims) > 1:
            raise EmbedderUnavailable(f"{path}: mixed vector dimensions {dims}")
        self.d = dims.pop()[0] if dims else 0

    def embed(self, keywords: Sequence[str]) -> np.ndarray:
        missing = [k for k in keywords if k not in self.vectors]
        if missing:
            raise EmbedderUnavailable(f"no vector for {len(missing)} keyword(s), e.g. {missing[0]!r}")
        return np.vstack([self.vectors[k] for k in keywords]) if keywords else np.empty((0, self.d))


class SentenceTransformerEmbedder:
    name = "sentence-transformers"

    def __init__(self, model_name: str = "all-MiniLM-L6-v2"):
        try:
            from sentence_transformers import SentenceTransformer
            self._model = SentenceTransformer(model_name)
        except Exception as exc:  # noqa: BLE001 - import or download failure
            raise EmbedderUnavailable(f"sentence-transformers model {model_name!r} unavailable: {exc}") from exc
        self.d = int(self._model.get_sentence_embedding_dimension())

    def embed(self, keywords: Sequence[str]) -> np.ndarray:
        if not keywords:
            return np.empty((0, self.d))
        return np.asarray(self._model.encode(list(keywords), convert_to_numpy=True), dtype=np.float64)


def make_embedder(spec: str):
    """``hash``, ``hash:<d>``, ``file:<path>`` or ``st:<model name>``."""
    kind, _, arg = spec.partition(":")
    if kind == "hash":
        return HashEmbedder(d=int(arg) if arg else 32)
    if kind == "file":
        return FileEmbedder(arg)
    if kind == "st":
        return SentenceTransformerEmbedder(arg or "all-MiniLM-L6-v2")
    raise ValueError(f"unknown embedder spec {spec!r}")


def embed_keywords(embedder, keywords: Iterable[str]) -> EmbeddingPool:
    keys = sorted(set(keywords))
    vecs = embedder.embed(keys)
    pool = EmbeddingPool(getattr(embedder, "d", 0) or (vecs.shape[1] if len(keys) else 1))
    for k, v in zip(keys, vecs):
        pool.add(k, v)
    return pool


@dataclass(frozen=True)
class ValueCluster:
    cluster_id: int
    members: tuple[str, ...]
    label: str = ""


def cosine_distances(x: np.ndarray) -> np.ndarray:
    d = 1.0 - x @ x.T
    d = np.triu(d, 1)
    d = d + d.T
    return np.clip(d, 0.0, 2.0)


def linkage(pool: EmbeddingPool, k: int, backend: str | None = None):
    """Merge sequence for ``pool`` down to ``k`` clusters.

    Returns ``(keywords, pairs, heights)``; slot ``i`` starts as
    ``keywords[i]`` (sorted), so the sequence is independent of insertion order.
    """
    keys = pool.keywords()
    if not 1 <= k <= len(keys):
        raise BadK(f"k={k} outside 1..{len(keys)}")
    pairs, heights = average_linkage_merges(cosine_distances(pool.matrix(keys)), k, backend=backend)
    return keys, pairs, heights


def agglomerative_cluster(pool: EmbeddingPool, k: int, backend: str | None = None) -> list[ValueCluster]:
    """Average-linkage clustering under cosine distance, cut at exactly ``k`` clusters."""
    keys, pairs, _ = linkage(pool, k, backend)
    groups: dict[int, list[str]] = {i: [kw] for i, kw in enumerate(keys)}
    for i, j in pairs:
        groups[int(i)].extend(groups.pop(int(j)))
    return [ValueCluster(cid, tuple(sorted(groups[slot]))) for cid, slot in enumerate(sorted(groups))]


def keyword_frequencies(records: Iterable[ExtractionRecord]) -> Counter:
    return Counter(kw for r in records if not r.na for kw in r.keywords)


def _label_prompt(members: Sequence[str]) -> str:
    text = resources.files("commval").joinpath("templates/cluster_label.txt").read_text(encoding="utf-8")
    return text.replace("{KEYWORDS}", ", ".join(members))


def _clean_label(raw: str) -> str | None:
    word = raw.strip().strip("\"'`.!").strip().lower()
    if not word or len(word.split()) != 1:
        return None
    return word


def ordered_members(cluster: ValueCluster, frequencies: Mapping[str, int] | None = None) -> list[str]:
    freq = frequencies or {}
    return sorted(cluster.members, key=lambda m: (-freq.get(m, 0), m))


def label_cluster(
    provider: Provider,
    cluster: ValueCluster,
    frequencies: Mapping[str, int] | None = None,
    model_id: str = "mock-1",
) -> str:
    """One-word lowercase label for a cluster.

    The provider gets two tries; after that the most frequent member keyword
    is used.
    """
    if not cluster.members:
        raise ValueError("cannot label an empty cluster")
    members = ordered_members(cluster, frequencies)
    prompt = _label_prompt(members)
    for _ in range(2):
        label = _clean_label(provider.complete(prompt, model=model_id, json_mode=False))
        if label:
            return label
    logger.info("cluster %d: provider label rejected, using %r", cluster.cluster_id, members[0])
    return members[0]


def label_clusters(provider, clusters, frequencies=None, model_id="mock-1") -> list[ValueCluster]:
    return [replace(c, label=label_cluster(provider, c, frequencies, model_id)) for c in clusters]


@dataclass(frozen=True)
class Merge:
    a: str
    b: str
    new: str


@dataclass(frozen=True)
class Rename:
    old: str
    new: str


@dataclass(frozen=True)
class Move:
    keyword: str
    label: str


@dataclass
class RegroupOverride:
    directives: list = field(default_factory=list)

    @classmethod
    def parse(cls, text: str) -> "RegroupOverride":
        """Parse ``merge a b -> c`` / ``rename a -> b`` / ``move "kw" -> a`` lines."""
        out = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            tokens = shlex.split(raw, comments=True)
            if not tokens:
                continue
            op, args = tokens[0].lower(), tokens[1:]
            try:
                arrow = args.index("->")
            except ValueError:
                raise ValueError(f"line {lineno}: missing '->' in {raw!r}") from None
            lhs, rhs = args[:arrow], args[arrow + 1:]
            if len(rhs) != 1:
                raise ValueError(f"line {lineno}: expected one target after '->'")
            if op == "merge" and len(lhs) == 2:
                out.append(Merge(lhs[0], lhs[1], rhs[0]))
            elif op == "rename" and len(lhs) == 1:
                out.append(Rename(lhs[0], rhs[0]))
            elif op == "move" and len(lhs) == 1:
                out.append(Move(normalize_keyword(lhs[0]), rhs[0]))
            else:
                raise ValueError(f"line {lineno}: cannot parse {raw!r}")
        return cls(out)

    @classmethod
    def from_file(cls, path: str | Path) -> "RegroupOverride":
        return cls.parse(Path(path).read_text(encoding="utf-8"))


def apply_regroup_overrides(clusters: Sequence[ValueCluster], overrides: RegroupOverride | None = None) -> CanonicalMap:
    mapping: CanonicalMap = {}
    for c in clusters:
        if not c.label:
            raise ValueError(f"cluster {c.cluster_id} has no label")
        for kw in c.members:
            mapping[kw] = c.label

    for d in (overrides.directives if overrides else ()):
        labels = set(mapping.values())
        if isinstance(d, Merge):
            for lab in (d.a, d.b):
                if lab not in labels:
                    raise UnknownLabel(lab)
            for kw, lab in mapping.items():
                if lab in (d.a, d.b):
                    mapping[kw] = d.new
        elif isinstance(d, Rename):
            if d.old not in labels:
                raise UnknownLabel(d.old)
            for kw, lab in mapping.items():
                if lab == d.old:
                    mapping[kw] = d.new
        elif isinstance(d, Move):
            if d.keyword not in mapping:
                raise UnknownKeyword(d.keyword)
            if d.label not in labels:
                raise UnknownLabel(d.label)
            mapping[d.keyword] = d.label
        else:
            raise TypeError(f"unknown directive {d!r}")
        if not all(mapping.values()):
            raise ValueError(f"{d!r} produced an empty label")
    return dict(sorted(mapping.items()))


def canonicalize(
    records: Sequence[ExtractionRecord],
    embedder,
    provider: Provider,
    k: int = 100,
    overrides: RegroupOverride | None = None,
    model_id: str = "mock-1",
    backend: str | None = None,
) -> tuple[list[ValueCluster], CanonicalMap]:
    """Embed, cluster, label and regroup every keyword in ``records``.

    ``k`` is capped at the number of distinct keywords.
    """
    freq = keyword_frequencies(records)
    if not freq:
        return [], {}
    pool = embed_keywords(embedder, freq)
    k_eff = min(k, len(pool))
    if k_eff < k:
        logger.info("only %d distinct keywords, clustering to %d instead of %d", len(pool), k_eff, k)
    clusters = label_clusters(provider, agglomerative_cluster(pool, k_eff, backend), freq, model_id)
    return clusters, apply_regroup_overrides(clusters, overrides)
