"""Record filtering: date checker, validity checker, ground-truth extraction.

Records failing a check become :class:`DiscardRecord` entries in the
non-evaluated report, each carrying the first failing condition as a
machine-readable reason code. Conservation holds for every batch:
``|passed| + |discarded| = |input|``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Any, Mapping, Sequence

from . import cvss
from .extract import DEFAULT_EXTENSIONS, LanguageId, detect_language
from .ingest import Cve2CweEntry
from .model import (
    CvssVersion,
    EnrichedRecord,
    GroundTruth,
    MalformedRecord,
    PromptVariant,
    ScoreOutOfRange,
    SeverityLabel,
    EVALUATION_VARIANTS,
    parse_cwe_id,
    MalformedCweId,
    validate_score,
)
from .prompts import MissingGranularity, TokenEstimator, prompt_tokens

logger = logging.getLogger(__name__)

DEFAULT_CUTOFF = date(2021, 9, 1)


class MissingCve(KeyError):
    """Raised when a CVE has no entry in the CVE2CWE store."""


class MissingSeverityForVersion(ValueError):
    """Raised when the selected CVSS version lacks a usable label+score."""


class EmptyCweGroundTruth(ValueError):
    """Raised when no ground-truth CWE text parses to a valid id."""


class FilterStage(Enum):
    DATE = "date"
    VALIDITY = "validity"


@dataclass(frozen=True)
class DiscardRecord:
    """One discarded record: which stage rejected it and why."""

    cve: str
    stage: FilterStage
    reason: str
    detail: str = ""

    def to_json(self) -> dict[str, str]:
        return {
            "cve": self.cve,
            "stage": self.stage.value,
            "reason": self.reason,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class FilterConfig:
    """Knobs for the date and validity checkers.

    ``keep_after_cutoff=True`` keeps records with commit dates strictly after
    the cutoff (unseen-by-the-model evaluation data); flipping it keeps the
    complement for pipelines that want pre-cutoff data instead.
    ``token_discard_mode`` is ``"variant"`` (an oversized variant only drops
    that variant; the record survives while any required variant fits) or
    ``"record"`` (any oversized required variant discards the whole record).
    """

    cutoff_date: date = DEFAULT_CUTOFF
    keep_after_cutoff: bool = True
    token_limit: int = 4096
    supported_languages: frozenset[LanguageId] = frozenset(LanguageId)
    required_variants: tuple[PromptVariant, ...] = EVALUATION_VARIANTS
    token_discard_mode: str = "variant"
    extensions: Mapping[str, LanguageId] = field(
        default_factory=lambda: dict(DEFAULT_EXTENSIONS)
    )

    def __post_init__(self) -> None:
        if self.token_limit <= 0:
            raise ValueError("token_limit must be positive")
        if self.token_discard_mode not in ("variant", "record"):
            raise ValueError(f"bad token_discard_mode {self.token_discard_mode!r}")


@dataclass(frozen=True)
class ValidityPass:
    """A record that passed validity, with the variants that fit the budget."""

    ground_truth: GroundTruth
    variants_ok: tuple[PromptVariant, ...]


def date_check(record: EnrichedRecord, config: FilterConfig) -> DiscardRecord | None:
    """None when the record passes; otherwise the discard entry.

    The cutoff comparison is strict: commit dates equal to the cutoff are
    discarded in either direction.
    """
    if record.commit_date is None:
        return DiscardRecord(
            record.cve, FilterStage.DATE, "unparsable-date", "commit date missing"
        )
    after = record.commit_date > config.cutoff_date
    keep = after if config.keep_after_cutoff else not after
    if keep:
        return None
    side = "not after" if config.keep_after_cutoff else "after"
    return DiscardRecord(
        record.cve,
        FilterStage.DATE,
        "cutoff",
        f"commit date {record.commit_date.isoformat()} {side} "
        f"cutoff {config.cutoff_date.isoformat()}",
    )


def extract_ground_truth(
    cve: str, store: Mapping[str, Cve2CweEntry]
) -> GroundTruth:
    """Build the ground truth for a CVE under its latest CVSS version.

    Versionless severity entries back the v3.1 default when no version is
    listed. CWE texts that do not parse as ids (``NVD-CWE-noinfo`` and
    friends) are skipped; an empty result raises.
    """
    entry = store.get(cve)
    if entry is None:
        raise MissingCve(cve)

    versions = []
    for version_text, _label, _score in entry.severities:
        if version_text:
            versions.append(cvss.parse_version(version_text))
    version = cvss.select_version(versions)

    candidates = []
    for version_text, label_text, score in entry.severities:
        if version_text:
            if cvss.parse_version(version_text) is not version:
                continue
        elif versions:
            continue  # versionless rows only back the default selection
        candidates.append((label_text, score))
    chosen = next(
        ((l, s) for l, s in candidates if l is not None and s is not None), None
    )
    if chosen is None:
        raise MissingSeverityForVersion(
            f"{cve}: no severity label+score for CVSS {version.value}"
        )
    label_text, score = chosen
    try:
        label = SeverityLabel(label_text.strip().upper())
    except ValueError as exc:
        raise MissingSeverityForVersion(f"{cve}: unknown label {label_text!r}") from exc

    cwes = set()
    for text in entry.cwes:
        try:
            cwes.add(parse_cwe_id(text))
        except MalformedCweId:
            continue
    if not cwes:
        raise EmptyCweGroundTruth(f"{cve}: no valid ground-truth CWE")

    return GroundTruth(
        cwes=frozenset(cwes),
        label=label,
        score=validate_score(score),
        version=version,
    )


def validity_check(
    record: EnrichedRecord,
    store: Mapping[str, Cve2CweEntry],
    config: FilterConfig,
    estimator: TokenEstimator | None = None,
    schemes: Mapping[CvssVersion, cvss.CvssScheme] | None = None,
) -> ValidityPass | DiscardRecord:
    """Check conditions in fixed order: ground truth, code, language, tokens.

    The reported reason is always the first failing condition.
    """
    # i) non-empty, valid ground truth CWEs and severity
    try:
        ground_truth = extract_ground_truth(record.cve, store)
    except MissingCve:
        return DiscardRecord(
            record.cve, FilterStage.VALIDITY, "missing-ground-truth",
            "cve absent from the CVE2CWE store",
        )
    except EmptyCweGroundTruth as exc:
        return DiscardRecord(record.cve, FilterStage.VALIDITY, "empty-cwe", str(exc))
    except MissingSeverityForVersion as exc:
        return DiscardRecord(
            record.cve, FilterStage.VALIDITY, "missing-severity", str(exc)
        )
    except (cvss.UnknownCvssVersion, ScoreOutOfRange, MalformedRecord) as exc:
        return DiscardRecord(
            record.cve, FilterStage.VALIDITY, "invalid-ground-truth", str(exc)
        )

    # ii) non-empty buggy code and hunks
    if not any(f.content for f in record.files):
        return DiscardRecord(
            record.cve, FilterStage.VALIDITY, "empty-code",
            "no buggy file with content",
        )
    if not record.hunks:
        return DiscardRecord(
            record.cve, FilterStage.VALIDITY, "no-hunks", "commit has no hunks"
        )

    # iii) every changed file maps to a supported language
    for file in record.files:
        language = detect_language(file.filename, config.extensions)
        if language is None or language not in config.supported_languages:
            return DiscardRecord(
                record.cve, FilterStage.VALIDITY, "unsupported-language",
                f"{file.filename} is not in a supported language",
            )

    # iv) required variants fit the token budget
    variants_ok: list[PromptVariant] = []
    rejections: list[tuple[PromptVariant, str]] = []
    for variant in config.required_variants:
        try:
            tokens = prompt_tokens(
                record, variant, ground_truth.version, estimator, schemes
            )
        except MissingGranularity:
            rejections.append((variant, "missing-granularity"))
            continue
        if tokens > config.token_limit:
            rejections.append((variant, "token-limit"))
        else:
            variants_ok.append(variant)

    if rejections and (config.token_discard_mode == "record" or not variants_ok):
        reason = rejections[0][1]
        detail = "; ".join(f"{v.value}: {r}" for v, r in rejections)
        return DiscardRecord(record.cve, FilterStage.VALIDITY, reason, detail)
    return ValidityPass(ground_truth=ground_truth, variants_ok=tuple(variants_ok))


@dataclass(frozen=True)
class FilterOutcome:
    passed: tuple[tuple[EnrichedRecord, ValidityPass], ...]
    discarded: tuple[DiscardRecord, ...]


def filter_records(
    records: Sequence[EnrichedRecord],
    store: Mapping[str, Cve2CweEntry],
    config: FilterConfig,
    estimator: TokenEstimator | None = None,
    schemes: Mapping[CvssVersion, cvss.CvssScheme] | None = None,
) -> FilterOutcome:
    """Run both checkers over a batch; every input lands on exactly one side.

    The non-evaluated report is deterministic: sorted by CVE id.
    """
    passed: list[tuple[EnrichedRecord, ValidityPass]] = []
    discarded: list[DiscardRecord] = []
    for record in records:
        discard = date_check(record, config)
        if discard is not None:
            discarded.append(discard)
            continue
        verdict = validity_check(record, store, config, estimator, schemes)
        if isinstance(verdict, DiscardRecord):
            discarded.append(verdict)
        else:
            passed.append((record, verdict))
    discarded.sort(key=lambda d: d.cve)
    return FilterOutcome(passed=tuple(passed), discarded=tuple(discarded))


def non_evaluated_report(discards: Sequence[DiscardRecord]) -> list[dict[str, Any]]:
    return [d.to_json() for d in sorted(discards, key=lambda d: d.cve)]
