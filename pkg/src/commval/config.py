"""Run configuration: a flat ``key = value`` file validated against :class:`RunConfig`."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .extraction import ProviderConfig
from .labeling import SamplePlan
from .scales import ScaleThresholds

_SECTION = "commval"


@dataclass(frozen=True)
class RunConfig:
    # inputs
    input: str | None = None
    year_tag: str = ""
    bots: str | None = None
    mods: str | None = None
    metadata: str | None = None
    scores: str | None = None
    out_dir: str = "commval-out"
    # labeling / sampling
    low_pct: float = 0.70
    high_pct: float = 0.95
    pairs_per_community: int = 100
    regression_per_class: int = 2500
    seed: int = 0
    # extraction
    provider: str = "http"
    model: str = "gpt-4o-2024-08-06"
    template: str | None = None
    cache: str | None = None
    max_retries: int = 2
    temperature: float = 0.0
    top_p: float = 1.0
    failure_budget: float = 0.01
    bank_scope: str = "global"
    bank_token_budget: int | None = None
    # canonicalisation
    embedder: str = "hash"
    k: int = 100
    overrides: str | None = None
    # scales and statistics
    macro_fraction: float = 0.75
    micro_fraction: float = 0.25
    alpha: float = 0.05
    prosocial: bool = False
    annotate_per_community: int = 2

    def __post_init__(self):
        try:
            self.sample_plan()
            self.provider_config()
            self.scale_thresholds()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must be in (0, 1)")
        if self.annotate_per_community < 1:
            raise ConfigError("annotate_per_community must be >= 1")

    def sample_plan(self) -> SamplePlan:
        return SamplePlan(self.pairs_per_community, self.regression_per_class, self.low_pct, self.high_pct, self.seed)

    def provider_config(self) -> ProviderConfig:
        return ProviderConfig(self.provider, self.model, self.temperature, self.top_p, self.max_retries,
                              self.cache_path, self.failure_budget, self.bank_scope, self.bank_token_budget)

    def scale_thresholds(self) -> ScaleThresholds:
        return ScaleThresholds(self.macro_fraction, self.micro_fraction)

    @property
    def cache_path(self) -> str:
        return self.cache or str(Path(self.out_dir) / "cache.jsonl")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()

    def with_overrides(self, **overrides) -> "RunConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(clean) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **clean)

    @classmethod
    def from_mapping(cls, raw: Mapping[str, str]) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(raw) - set(types)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        values = {k: _coerce(k, types[k], v) for k, v in raw.items()}
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",),
                                           inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            parser.read_string(f"[{_SECTION}]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        raw = dict(parser[_SECTION])
        base = Path(path).resolve().parent
        for key in ("input", "bots", "mods", "metadata", "scores", "template", "cache", "overrides", "out_dir"):
            if raw.get(key) and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])
        emb = raw.get("embedder", "")
        if emb.startswith("file:") and not Path(emb[5:]).is_absolute():
            raw["embedder"] = "file:" + str(base / emb[5:])
        return cls.from_mapping(raw)


def _coerce(key: str, type_name: str, value: str):
    text = value.strip()
    optional = "None" in str(type_name)
    if optional and text.lower() in ("", "none"):
        return None
    kind = str(type_name).replace(" | None", "")
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind}") from None
    return text
