"""Synthetic corpus with planted values, for end-to-end tests and demos.

Each study community has exactly 400 eligible comments: 20 top-level contexts,
20 replies scored 1000+ (the only High comments, all with a parent present)
and 360 low-scored filler comments. Reply bodies carry ``[[values: ...]]`` or
``[[N/A]]`` tags that :class:`~commval.providers.MockProvider` answers from, so
prevalence, scale, synonym merges and the N/A total are known in advance.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAIRS_PER_COMMUNITY = 20
FILLER_PER_COMMUNITY = 360
YEAR_TAG = "2019"
FILLER_VALUE = "humor"

# canonical value -> (prevalence over 80 communities, synonyms)
PLANTED: dict[str, tuple[int, tuple[str, ...]]] = {
    "humor": (80, ("funny", "humour")),
    "helpfulness": (70, ("helpful",)),
    "empathy": (60, ("compassion",)),
    "honesty": (59, ()),
    "expertise": (50, ("knowledgeable", "expert")),
    "wit": (40, ()),
    "clarity": (30, ("clear",)),
    "sarcasm": (25, ()),
    "kindness": (21, ()),
    "brevity": (20, ("concise",)),
    "creativity": (15, ()),
    "nostalgia": (10, ()),
    "optimism": (7, ()),
    "skepticism": (5, ()),
    "patriotism": (3, ()),
    "frugality": (2, ()),
    "stoicism": (1, ()),
}


@dataclass
class SyntheticTruth:
    communities: list[str]
    excluded: list[str]
    prevalence: dict[str, int]
    scales: dict[str, str]
    synonyms: dict[str, str]  # surface keyword -> canonical value
    na_total: int
    na_per_community: dict[str, int]
    malformed: list[str] = field(default_factory=list)  # target ids tagged [[malformed]]

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SyntheticFixture:
    root: Path
    corpus: Path
    bots: Path
    mods: Path
    metadata: Path
    scores: Path
    embeddings: Path
    config: Path
    truth: SyntheticTruth


def _scale(prev: int, n: int) -> str:
    if prev >= -(-3 * n // 4):
        return "macro"
    if prev <= n // 4:
        return "micro"
    return "meso"


def _plan_values(n_comm: int, na_every: int):
    """Per-community, per-pair keyword lists and N/A flags."""
    names = [f"c{i:02d}" for i in range(n_comm)]
    present: dict[str, list[str]] = {c: [] for c in names}
    for vi, (value, (prev, _)) in enumerate(PLANTED.items()):
        start = (vi * 7) % n_comm
        for j in range(prev):
            present[names[(start + j) % n_comm]].append(value)

    plan: dict[str, list[list[str] | None]] = {}
    for ci, c in enumerate(names):
        slots: list[list[str] | None] = [[] for _ in range(PAIRS_PER_COMMUNITY)]
        if na_every and ci % na_every == 0:
            slots[-1] = None
        n_live = sum(s is not None for s in slots)
        values = present[c]
        for k, value in enumerate(values):
            synonyms = PLANTED[value][1]
            # canonical form twice, each synonym once, so the canonical form is the most frequent keyword
            forms = [value, value, *synonyms] if synonyms else [value]
            for f_i, form in enumerate(forms):
                slot = (k * 3 + f_i * 5) % n_live
                for step in range(n_live):
                    s = slots[(slot + step) % n_live]
                    if len(s) < 3 and form not in s:
                        s.append(form)
                        break
        for s in slots:
            if s is not None and not s:
                s.append(FILLER_VALUE if FILLER_VALUE in values else values[0])
        plan[c] = slots
    return names, present, plan


def _record(cid, parent, link, community, author, body, score, t):
    return {"id": cid, "parent_id": parent, "link_id": link, "subreddit": community, "author": author,
            "body": body, "score": score, "created_utc": t}


def generate(root: str | Path, n_communities: int = 80, seed: int = 0, na_every: int = 4,
             malformed_rate: float = 0.0, n_excluded: int = 2) -> SyntheticFixture:
    """Write the fixture under ``root`` and return its paths and planted truth."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    names, present, plan = _plan_values(n_communities, na_every)

    records: list[dict] = []
    scores: dict[str, tuple[float, float, float]] = {}
    na_per: dict[str, int] = {}
    malformed: list[str] = []
    t0 = 1546300800

    def add_scores(cid: str, high: bool):
        base = rng.normal(0.0, 1.0, 3) + (0.6 if high else 0.0)
        shared = rng.normal()
        scores[cid] = tuple(float(v) for v in (base + 0.5 * shared))

    for ci, c in enumerate(names):
        link = f"t3_l{ci:02d}"
        t = t0 + ci * 100000
        for i in range(PAIRS_PER_COMMUNITY):
            ctx_id = f"{c}x{i:02d}"
            tgt_id = f"{c}h{i:02d}"
            records.append(_record(ctx_id, link, link, c, f"user{i}", f"context {i} in {c} /u/someone{i} said",
                                   int(rng.integers(0, 50)), t + i))
            add_scores(ctx_id, False)
            kws = plan[c][i]
            if kws is None:
                tag = "[[N/A]]"
                na_per[c] = na_per.get(c, 0) + 1
            elif malformed_rate and rng.random() < malformed_rate:
                tag = "[[malformed]]"
                malformed.append(tgt_id)
            else:
                tag = f"[[values: {', '.join(kws)}]]"
            body = f"&gt; context {i}\n\nreply {i} from u/replier{i} {tag}"
            records.append(_record(tgt_id, f"t1_{ctx_id}", link, c, f"replier{i}", body, 1000 + i, t + 50 + i))
            add_scores(tgt_id, True)
        for j in range(FILLER_PER_COMMUNITY):
            fid = f"{c}f{j:03d}"
            parent = f"t1_{c}x{j % PAIRS_PER_COMMUNITY:02d}" if j % 3 == 0 else link
            records.append(_record(fid, parent, link, c, f"member{j % 97}", f"filler {j}",
                                   int(rng.integers(-5, 100)), t + 200 + j))
            add_scores(fid, False)
        # ineligible noise: removed, deleted, bot and moderator comments
        records.append(_record(f"{c}r0", link, link, c, "someone", "[removed]", 5000, t + 900))
        records.append(_record(f"{c}d0", link, link, c, "[deleted]", "[deleted]", 4000, t + 901))
        records.append(_record(f"{c}b0", link, link, c, "AutoModerator", "I am a bot", 3000, t + 902))
        records.append(_record(f"{c}m0", link, link, c, f"mod_{c}", "please read the rules", 2000, t + 903))

    excluded = []
    for e in range(n_excluded):
        c = f"tiny{e}"
        excluded.append(c)
        link = f"t3_tiny{e}"
        for j in range(60):
            cid = f"{c}f{j:02d}"
            parent = f"t1_{c}f{j - 1:02d}" if j % 10 == 9 else link
            records.append(_record(cid, parent, link, c, f"member{j}", f"small talk {j}", j, t0 + j))
            add_scores(cid, j >= 57)
    # one record the loader must skip
    lines = [json.dumps(r, sort_keys=True) for r in records] + ['{"id": "broken"']
    corpus = root / "corpus.jsonl"
    corpus.write_text("\n".join(lines) + "\n", encoding="utf-8")

    bots = root / "bots.txt"
    bots.write_text("AutoModerator\n", encoding="utf-8")
    mods = root / "mods.txt"
    mods.write_text("".join(f"{c} mod_{c}\n" for c in names), encoding="utf-8")

    metadata = root / "metadata.csv"
    with open(metadata, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community", "subscriber_count", "description"])
        for i, c in enumerate(names + excluded):
            w.writerow([c, 1000 * (i + 1) ** 2, f"synthetic community {c}"])

    scores_path = root / "scores.csv"
    with open(scores_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["comment_id", "supportiveness", "agreement", "politeness"])
        for cid in sorted(scores):
            w.writerow([cid, *(repr(v) for v in scores[cid])])

    # embeddings: one random direction per value, synonyms within a small perturbation
    d = 32
    emb = {}
    synonyms = {}
    for value, (_, syns) in PLANTED.items():
        base = rng.normal(size=d)
        for form in (value, *syns):
            emb[form] = (base + 0.05 * rng.normal(size=d)).tolist()
            synonyms[form] = value
    embeddings = root / "embeddings.json"
    embeddings.write_text(json.dumps(emb, sort_keys=True), encoding="utf-8")

    config = root / "commval.cfg"
    config.write_text(
        "\n".join([
            "input = corpus.jsonl",
            f"year_tag = {YEAR_TAG}",
            "bots = bots.txt",
            "mods = mods.txt",
            "metadata = metadata.csv",
            "scores = scores.csv",
            "out_dir = out",
            f"pairs_per_community = {PAIRS_PER_COMMUNITY}",
            f"regression_per_class = {PAIRS_PER_COMMUNITY}",
            f"seed = {seed}",
            "provider = mock",
            "model = mock-1",
            "embedder = file:embeddings.json",
            f"k = {len(PLANTED)}",
            "prosocial = true",
            "",
        ]),
        encoding="utf-8",
    )

    # a value's prevalence drops when every one of its slots lands on a malformed pair
    prevalence = {v: p for v, (p, _) in PLANTED.items()}
    truth = SyntheticTruth(
        communities=names,
        excluded=excluded,
        prevalence=prevalence,
        scales={v: _scale(p, n_communities) for v, p in prevalence.items()},
        synonyms=synonyms,
        na_total=sum(na_per.values()),
        na_per_community=dict(sorted(na_per.items())),
        malformed=malformed,
    )
    (root / "truth.json").write_text(json.dumps(truth.to_json(), sort_keys=True, indent=2) + "\n",
                                     encoding="utf-8")
    return SyntheticFixture(root, corpus, bots, mods, metadata, scores_path, embeddings, config, truth)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Write a synthetic commval fixture.")
    parser.add_argument("root", type=Path)
    parser.add_argument("--communities", type=int, default=80)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--malformed-rate", type=float, default=0.0)
    args = parser.parse_args(argv)
    fx = generate(args.root, args.communities, args.seed, malformed_rate=args.malformed_rate)
    print(f"wrote fixture to {fx.root}; run: commval run --config {fx.config}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
