"""Pipeline configuration: defaults, config file, environment, CLI flags.

Precedence is CLI flags > environment variables > config file > defaults.
Config files are YAML or JSON; the recognized environment variables are
``TRIAGE_CUTOFF_DATE``, ``TRIAGE_TOKEN_LIMIT``, ``TRIAGE_SEED``, and
``TRIAGE_PROVIDER`` (credentials ``TRIAGE_API_TOKEN`` and
``TRIAGE_COMMIT_TOKEN`` are read by the provider and commit clients).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from . import cvss
from .extract import DEFAULT_EXTENSIONS, DEFAULT_NODE_KINDS, LanguageId
from .filters import FilterConfig
from .inference import ProviderConfig
from .model import EVALUATION_VARIANTS, PromptVariant, parse_variant

DEFAULT_DISTANCES = (0.5, 1.0, 1.5)


class ConfigError(ValueError):
    """Raised for unreadable or inconsistent configuration."""


@dataclass(frozen=True)
class CommitClientSettings:
    kind: str = "github"  # or "recorded"
    fixture_dir: str | None = None
    cache_dir: str | None = None
    max_workers: int = 4
    min_interval: float = 0.0


@dataclass(frozen=True)
class ProviderSettings:
    kind: str = "mock"  # or "remote"
    fixtures_path: str | None = None
    config: ProviderConfig = field(default_factory=ProviderConfig)


@dataclass(frozen=True)
class PipelineConfig:
    filters: FilterConfig = field(default_factory=FilterConfig)
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    commit_client: CommitClientSettings = field(default_factory=CommitClientSettings)
    variants: tuple[PromptVariant, ...] = EVALUATION_VARIANTS
    distances: tuple[float, ...] = DEFAULT_DISTANCES
    dataset_dir: str = "dataset"
    results_dir: str = "results"
    reports_dir: str = "reports"
    evaluate: bool = True
    seed: int = 0
    eval_fraction: float = 0.5
    sample: int | None = None
    schemes: Mapping | None = None  # CVSS band overrides
    node_kinds: Mapping[LanguageId, frozenset[str]] | None = None

    def __post_init__(self) -> None:
        if not self.distances or any(d <= 0 for d in self.distances):
            raise ConfigError("distances must be a non-empty positive list")
        if tuple(sorted(self.distances)) != self.distances:
            raise ConfigError("distances must be sorted ascending")
        paths = (self.dataset_dir, self.results_dir, self.reports_dir)
        if len(set(paths)) != len(paths):
            raise ConfigError("dataset, results, and reports paths must differ")


def load_config_file(path: str | Path) -> dict[str, Any]:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        doc = json.loads(text)
    else:
        doc = yaml.safe_load(text)
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} is not a mapping")
    return doc


def _parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    token = str(value).strip().lower()
    if token in ("1", "true", "yes", "on"):
        return True
    if token in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _parse_variants(value: Any) -> tuple[PromptVariant, ...]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(parse_variant(v) for v in value)


def _parse_distances(value: Any) -> tuple[float, ...]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(float(v) for v in value)


def _parse_extensions(value: Mapping[str, str]) -> dict[str, LanguageId]:
    table = dict(DEFAULT_EXTENSIONS)
    for ext, lang in value.items():
        table[ext if ext.startswith(".") else f".{ext}"] = LanguageId(lang)
    return table


def _parse_node_kinds(value: Mapping[str, Sequence[str]]) -> dict[LanguageId, frozenset[str]]:
    table = dict(DEFAULT_NODE_KINDS)
    for lang, kinds in value.items():
        table[LanguageId(lang)] = frozenset(kinds)
    return table


def _pick(cli: Any, env_name: str | None, file_doc: Mapping, key: str, default: Any) -> Any:
    if cli is not None:
        return cli
    if env_name and os.environ.get(env_name) is not None:
        return os.environ[env_name]
    if key in file_doc:
        return file_doc[key]
    return default


def build_pipeline_config(
    config_path: str | None = None, cli: Mapping[str, Any] | None = None
) -> PipelineConfig:
    """Merge CLI values, environment, and a config file into one config."""
    cli = cli or {}
    doc = load_config_file(config_path) if config_path else {}

    cutoff_raw = _pick(cli.get("cutoff_date"), "TRIAGE_CUTOFF_DATE", doc, "cutoff_date", None)
    token_limit = _pick(cli.get("token_limit"), "TRIAGE_TOKEN_LIMIT", doc, "token_limit", 4096)
    keep_after = _pick(cli.get("keep_after_cutoff"), None, doc, "keep_after_cutoff", True)
    variants_raw = _pick(cli.get("variants"), None, doc, "variants", None)
    distances_raw = _pick(cli.get("distances"), None, doc, "distances", DEFAULT_DISTANCES)
    seed = _pick(cli.get("seed"), "TRIAGE_SEED", doc, "seed", 0)
    sample = _pick(cli.get("sample"), None, doc, "sample", None)
    evaluate = _pick(cli.get("evaluate"), None, doc, "evaluate", True)
    eval_fraction = _pick(None, None, doc, "eval_fraction", 0.5)
    token_mode = _pick(None, None, doc, "token_discard_mode", "variant")

    try:
        cutoff = date.fromisoformat(str(cutoff_raw)) if cutoff_raw else None
    except ValueError as exc:
        raise ConfigError(f"bad cutoff date {cutoff_raw!r}") from exc
    variants = _parse_variants(variants_raw) if variants_raw else EVALUATION_VARIANTS

    languages_raw = doc.get("supported_languages")
    languages = (
        frozenset(LanguageId(l) for l in languages_raw)
        if languages_raw
        else frozenset(LanguageId)
    )
    extraction = doc.get("extraction", {}) or {}
    extensions = _parse_extensions(extraction.get("extensions", {}) or {})
    node_kinds = (
        _parse_node_kinds(extraction["node_kinds"])
        if extraction.get("node_kinds")
        else None
    )

    filters = FilterConfig(
        cutoff_date=cutoff or FilterConfig.cutoff_date,
        keep_after_cutoff=_parse_bool(keep_after),
        token_limit=int(token_limit),
        supported_languages=languages,
        required_variants=variants,
        token_discard_mode=str(token_mode),
        extensions=extensions,
    )

    provider_doc = doc.get("provider", {}) or {}
    provider_kind = str(
        _pick(cli.get("provider"), "TRIAGE_PROVIDER", provider_doc, "kind", "mock")
    )
    provider = ProviderSettings(
        kind=provider_kind,
        fixtures_path=provider_doc.get("fixtures"),
        config=ProviderConfig(
            endpoint=str(provider_doc.get("endpoint", "")),
            model=str(provider_doc.get("model", "")),
            temperature=float(provider_doc.get("temperature", 0.0)),
            max_retries=int(provider_doc.get("max_retries", 3)),
            timeout=float(provider_doc.get("timeout", 60.0)),
            concurrency=int(provider_doc.get("concurrency", 1)),
        ),
    )

    commit_doc = doc.get("commit_client", {}) or {}
    commit_client = CommitClientSettings(
        kind=str(commit_doc.get("kind", "github")),
        fixture_dir=commit_doc.get("fixture_dir"),
        cache_dir=commit_doc.get("cache_dir"),
        max_workers=int(commit_doc.get("max_workers", 4)),
        min_interval=float(commit_doc.get("min_interval", 0.0)),
    )

    paths = doc.get("paths", {}) or {}
    schemes = (
        cvss.schemes_from_config(doc["cvss_bands"]) if doc.get("cvss_bands") else None
    )

    return PipelineConfig(
        filters=filters,
        provider=provider,
        commit_client=commit_client,
        variants=variants,
        distances=tuple(sorted(_parse_distances(distances_raw))),
        dataset_dir=str(cli.get("dataset_dir") or paths.get("dataset_dir", "dataset")),
        results_dir=str(cli.get("results_dir") or paths.get("results_dir", "results")),
        reports_dir=str(cli.get("reports_dir") or paths.get("reports_dir", "reports")),
        evaluate=_parse_bool(evaluate),
        seed=int(seed),
        eval_fraction=float(eval_fraction),
        sample=int(sample) if sample is not None else None,
        schemes=schemes,
        node_kinds=node_kinds,
    )
