"""Prompt construction, value bank, response parsing and the extraction loop."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ParseError, ProviderUnavailable, Quarantined, TemplateError
from .labeling import CommentPair
from .providers import Provider

logger = logging.getLogger(__name__)

PLACEHOLDERS = ("SUBREDDIT", "SUBREDDIT_DESCRIPTION", "VALUE_BANK", "CONTEXT", "COMMENT")
_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")

EMPTY_BANK = "(empty)"
NA = "N/A"
JSON_INSTRUCTION = (
    'Respond in strict JSON with exactly two fields: "thinking", a string holding your '
    'step-by-step reasoning, and "answer", either a list of one to three keyword strings '
    'or the string "N/A".'
)
MAX_KEYWORDS = 3


def _default_template_text() -> str:
    return resources.files("commval").joinpath("templates/extraction.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptTemplate:
    text: str

    def __post_init__(self):
        missing = [p for p in PLACEHOLDERS if "{" + p + "}" not in self.text]
        if missing:
            raise TemplateError(f"template lacks placeholder(s): {', '.join(missing)}")

    @classmethod
    def default(cls) -> "PromptTemplate":
        return cls(_default_template_text())

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        return cls(Path(path).read_text(encoding="utf-8"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    # rough chars-per-token ratio for English BPE vocabularies
    return math.ceil(len(text) / 4)


class ValueBank:
    """Keywords already emitted, in first-use order."""

    def __init__(self, entries: Iterable[str] = ()):
        self._entries: list[str] = []
        self._seen: set[str] = set()
        for e in entries:
            self.add(e)

    def add(self, keyword: str) -> bool:
        kw = normalize_keyword(keyword)
        if not kw or kw in self._seen:
            return False
        self._seen.add(kw)
        self._entries.append(kw)
        return True

    def update(self, keywords: Iterable[str]) -> int:
        return sum(self.add(k) for k in keywords)

    @property
    def entries(self) -> tuple[str, ...]:
        return tuple(self._entries)

    def render(self, token_budget: int | None = None) -> str:
        if not self._entries:
            return EMPTY_BANK
        if token_budget is None:
            return ", ".join(self._entries)
        kept: list[str] = []
        for e in self._entries:
            if estimate_tokens(", ".join(kept + [e])) > token_budget:
                break
            kept.append(e)
        return ", ".join(kept) if kept else EMPTY_BANK

    def __contains__(self, kw: object) -> bool:
        return isinstance(kw, str) and normalize_keyword(kw) in self._seen

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ValueBank) and self._entries == other._entries

    def __repr__(self) -> str:
        return f"ValueBank({self._entries!r})"


@dataclass(frozen=True)
class ProviderConfig:
    provider_name: str = "mock"
    model_id: str = "mock-1"
    temperature: float = 0.0
    top_p: float = 1.0
    max_retries: int = 2
    cache_path: str | None = None
    failure_budget: float = 0.01
    bank_scope: str = "global"
    bank_token_budget: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not 0 <= self.failure_budget <= 1:
            raise ValueError("failure_budget must be a fraction")
        if self.bank_scope not in ("global", "community"):
            raise ValueError("bank_scope must be 'global' or 'community'")


@dataclass(frozen=True)
class ExtractionRecord:
    community: str
    target_id: str
    context_id: str
    year_tag: str
    keywords: tuple[str, ...]
    na: bool
    reasoning: str
    model_id: str
    cached: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.na == bool(self.keywords) or len(self.keywords) > MAX_KEYWORDS:
            raise ValueError("record needs 1-3 keywords or the N/A flag, not both")

    def to_json(self) -> dict:
        # ``cached`` is run-time bookkeeping and stays out of the output files
        return {
            "community": self.community,
            "target_id": self.target_id,
            "context_id": self.context_id,
            "year_tag": self.year_tag,
            "keywords": list(self.keywords),
            "na": self.na,
            "reasoning": self.reasoning,
            "model_id": self.model_id,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ExtractionRecord":
        return cls(
            community=obj["community"],
            target_id=obj["target_id"],
            context_id=obj.get("context_id", ""),
            year_tag=obj.get("year_tag", ""),
            keywords=tuple(obj.get("keywords") or ()),
            na=bool(obj.get("na")),
            reasoning=obj.get("reasoning", ""),
            model_id=obj.get("model_id", ""),
        )


@dataclass(frozen=True)
class QuarantineRecord:
    community: str
    target_id: str
    context_id: str
    reason: str
    raw_responses: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "community": self.community,
            "target_id": self.target_id,
            "context_id": self.context_id,
            "reason": self.reason,
            "raw_responses": list(self.raw_responses),
        }


@dataclass(frozen=True)
class ParsedResponse:
    keywords: tuple[str, ...]
    na: bool
    reasoning: str


def normalize_keyword(kw: str) -> str:
    return " ".join(kw.strip().lower().split())


def _strip_fences(raw: str) -> str:
    text = raw.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[1] if "\n" in text else ""
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


def parse_response(raw: str) -> ParsedResponse:
    """Parse a ``{"thinking": ..., "answer": ...}`` reply.

    ``answer`` may be ``"N/A"``, a list of one to three strings, or a single
    comma-separated string. Keywords are lowercased, trimmed and deduplicated.
    """
    try:
        obj = json.loads(_strip_fences(raw))
    except (ValueError, TypeError) as exc:
        raise ParseError(f"not JSON: {exc}") from exc
    if not isinstance(obj, dict) or "answer" not in obj:
        raise ParseError("expected an object with an 'answer' field")
    reasoning = obj.get("thinking", "")
    if not isinstance(reasoning, str):
        raise ParseError("'thinking' must be a string")

    answer = obj["answer"]
    if isinstance(answer, str):
        if answer.strip().upper() == NA:
            return ParsedResponse((), True, reasoning)
        answer = answer.split(",")
    if not isinstance(answer, list):
        raise ParseError("'answer' must be a list or 'N/A'")
    if any(not isinstance(a, str) for a in answer):
        raise ParseError("non-string keyword in answer")
    if len(answer) == 1 and answer[0].strip().upper() == NA:
        return ParsedResponse((), True, reasoning)

    keywords: list[str] = []
    for a in answer:
        kw = normalize_keyword(a)
        if kw == NA.lower():
            raise ParseError("'N/A' mixed with keywords")
        if kw and kw not in keywords:
            keywords.append(kw)
    if not keywords:
        raise ParseError("empty keyword list")
    if len(keywords) > MAX_KEYWORDS:
        raise ParseError(f"{len(keywords)} keywords, at most {MAX_KEYWORDS} allowed")
    return ParsedResponse(tuple(keywords), False, reasoning)


def build_prompt(
    template: PromptTemplate | str,
    community: str,
    description: str,
    bank: ValueBank,
    pair: CommentPair,
    token_budget: int | None = None,
) -> str:
    if isinstance(template, str):
        template = PromptTemplate(template)
    values = {
        "SUBREDDIT": community,
        "SUBREDDIT_DESCRIPTION": description,
        "VALUE_BANK": bank.render(token_budget),
        "CONTEXT": pair.context.body,
        "COMMENT": pair.target.body,
    }
    # single pass, so placeholder-like text inside comment bodies is left alone
    body = _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template.text)
    return body.rstrip("\n") + "\n\n" + JSON_INSTRUCTION + "\n"


def cache_key(model_id: str, prompt: str) -> str:
    return hashlib.sha256(f"{model_id}\n{prompt}".encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only ``{key, raw}`` JSONL store; ``path=None`` keeps it in memory."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[str, str] = {}
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    try:
                        row = json.loads(line)
                        self._data[row["key"]] = row["raw"]
                    except (ValueError, KeyError, TypeError):
                        logger.warning("%s: ignoring damaged cache line", self.path)

    def get(self, key: str) -> str | None:
        return self._data.get(key)

    def put(self, key: str, raw: str) -> None:
        if self._data.get(key) == raw:
            return
        self._data[key] = raw
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"key": key, "raw": raw}, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: object) -> bool:
        return key in self._data


def _description(meta, community: str) -> str:
    if meta is None:
        return ""
    if isinstance(meta, str):
        return meta
    entry = meta.get(community, "")
    if isinstance(entry, Mapping):
        return str(entry.get("description", ""))
    return str(entry)


def _record(pair: CommentPair, parsed: ParsedResponse, model_id: str, cached: bool) -> ExtractionRecord:
    return ExtractionRecord(
        community=pair.community,
        target_id=pair.target.id,
        context_id=pair.context.id,
        year_tag=pair.year_tag,
        keywords=parsed.keywords,
        na=parsed.na,
        reasoning=parsed.reasoning,
        model_id=model_id,
        cached=cached,
    )


def extract_one(
    provider: Provider,
    config: ProviderConfig,
    template: PromptTemplate,
    community_meta,
    bank: ValueBank,
    pair: CommentPair,
    cache: ResponseCache | None = None,
) -> ExtractionRecord:
    """Extract values for one pair, consulting the cache first.

    A reply that fails to parse is retried with the identical prompt up to
    ``config.max_retries`` times before the pair is quarantined.
    """
    prompt = build_prompt(template, pair.community, _description(community_meta, pair.community),
                          bank, pair, config.bank_token_budget)
    key = cache_key(config.model_id, prompt)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            try:
                return _record(pair, parse_response(hit), config.model_id, cached=True)
            except ParseError:
                logger.warning("unparseable cache entry for %s, re-querying", pair.target.id)

    raws: list[str] = []
    last_error: Exception | None = None
    for _ in range(1 + config.max_retries):
        try:
            raw = provider.complete(prompt, model=config.model_id, temperature=config.temperature,
                                    top_p=config.top_p, json_mode=True)
        except ProviderUnavailable as exc:
            last_error = exc
            continue
        raws.append(raw)
        try:
            parsed = parse_response(raw)
        except ParseError as exc:
            last_error = exc
            continue
        if cache is not None:
            cache.put(key, raw)
        return _record(pair, parsed, config.model_id, cached=False)

    if not raws:
        raise ProviderUnavailable(f"{pair.target.id}: provider failed {1 + config.max_retries} times: {last_error}")
    raise Quarantined(f"{pair.target.id}: {last_error}", raws)


@dataclass
class ExtractionRun:
    records: list[ExtractionRecord]
    banks: dict[str, ValueBank]
    quarantined: list[QuarantineRecord] = field(default_factory=list)
    unavailable: list[QuarantineRecord] = field(default_factory=list)

    @property
    def bank(self) -> ValueBank:
        merged = ValueBank()
        for b in self.banks.values():
            merged.update(b)
        return merged

    @property
    def cache_hits(self) -> int:
        return sum(r.cached for r in self.records)


def pair_order(pair: CommentPair) -> tuple[str, str]:
    return pair.community, pair.target.id


def run_extraction(
    pairs: Sequence[CommentPair],
    config: ProviderConfig,
    template: PromptTemplate,
    provider: Provider,
    metadata=None,
    cache: ResponseCache | None = None,
) -> ExtractionRun:
    """Extract values for every pair in (community, target_id) order.

    The bank seen by each prompt includes every keyword from earlier non-N/A
    records. Quarantined pairs are reported but produce no record. The run
    aborts once provider outages exceed ``config.failure_budget`` of the pairs.
    """
    if not pairs:
        raise ValueError("no pairs to extract")
    tags = {p.year_tag for p in pairs}
    if len(tags) > 1:
        raise ValueError(f"pairs mix year tags {sorted(tags)}; run each year separately")
    if cache is None:
        cache = ResponseCache(config.cache_path)

    budget = math.floor(config.failure_budget * len(pairs))
    banks: dict[str, ValueBank] = {}
    run = ExtractionRun(records=[], banks=banks)
    for pair in sorted(pairs, key=pair_order):
        scope = pair.community if config.bank_scope == "community" else ""
        bank = banks.setdefault(scope, ValueBank())
        try:
            rec = extract_one(provider, config, template, metadata, bank, pair, cache)
        except Quarantined as exc:
            logger.warning("quarantined %s/%s: %s", pair.community, pair.target.id, exc)
            run.quarantined.append(QuarantineRecord(pair.community, pair.target.id, pair.context.id,
                                                    str(exc), tuple(exc.raw_responses)))
            continue
        except ProviderUnavailable as exc:
            run.unavailable.append(QuarantineRecord(pair.community, pair.target.id, pair.context.id, str(exc)))
            if len(run.unavailable) > budget:
                raise ProviderUnavailable(
                    f"aborting: {len(run.unavailable)} provider failures exceed budget of {budget}"
                ) from exc
            continue
        if not rec.na:
            bank.update(rec.keywords)
        run.records.append(rec)
    logger.info("extracted %d records (%d cached, %d quarantined)", len(run.records),
                run.cache_hits, len(run.quarantined))
    return run
