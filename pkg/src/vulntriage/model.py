"""Core domain model shared by every pipeline stage.

Defines CWE identifiers, severity labels and scores, CVSS versions, prompt
variants, enriched CVE records carrying buggy code at file/method/hunk
granularity, ground truth, validated inference outcomes, and per-record
evaluation verdicts.

All types are immutable after construction and safe to share between
concurrent workers. The canonical serialized form of a record is a JSON
object whose field names follow the dataset schema: ``cve``,
``description``, ``url``, ``date``, ``github_description``, ``buggy_code``,
plus ``hunks`` and ``methods``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from datetime import date, datetime
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Any, Iterable, Mapping

SCORE_DECLINED = -1.0  # sentinel: model could not assess severity


class MalformedCweId(ValueError):
    """Raised for CWE identifier text that does not name a positive id."""


class ScoreOutOfRange(ValueError):
    """Raised for severity scores outside [0, 10] other than the -1 sentinel."""


class MalformedRecord(ValueError):
    """Raised when a record or one of its parts violates its invariants."""


# ---------------------------------------------------------------------------
# CWE identifiers


@dataclass(frozen=True, order=True)
class CweId:
    """A CWE identifier. Canonical text form is ``CWE-<n>`` with n >= 1."""

    id: int

    def __post_init__(self) -> None:
        if not isinstance(self.id, int) or isinstance(self.id, bool) or self.id < 1:
            raise MalformedCweId(f"CWE ids start at 1, got {self.id!r}")

    def __str__(self) -> str:
        return f"CWE-{self.id}"


_CWE_TEXT = re.compile(r"^(?:CWE-)?([0-9]+)$", re.IGNORECASE)


def parse_cwe_id(text: str) -> CweId:
    """Parse ``CWE-79``, ``cwe-79``, or bare ``79`` into a :class:`CweId`."""
    match = _CWE_TEXT.match(text.strip())
    if match is None:
        raise MalformedCweId(f"not a CWE identifier: {text!r}")
    number = int(match.group(1))
    if number < 1:
        raise MalformedCweId(f"CWE ids start at 1, got {text!r}")
    return CweId(number)


def render_cwe_set(cwes: frozenset[CweId]) -> list[str]:
    """Canonical JSON form of a CWE set: sorted ``CWE-<n>`` strings."""
    return [str(c) for c in sorted(cwes)]


def parse_cwe_set(texts: Iterable[str]) -> frozenset[CweId]:
    return frozenset(parse_cwe_id(t) for t in texts)


# ---------------------------------------------------------------------------
# Severity labels, scores, CVSS versions


class SeverityLabel(Enum):
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"
    CRITICAL = "CRITICAL"


class CvssVersion(Enum):
    V2_0 = "2.0"
    V3_0 = "3.0"
    V3_1 = "3.1"

    @property
    def rank(self) -> tuple[int, int]:
        major, minor = self.value.split(".")
        return (int(major), int(minor))

    def __lt__(self, other: "CvssVersion") -> bool:
        if not isinstance(other, CvssVersion):
            return NotImplemented
        return self.rank < other.rank

    def __le__(self, other: "CvssVersion") -> bool:
        if not isinstance(other, CvssVersion):
            return NotImplemented
        return self.rank <= other.rank

    def __gt__(self, other: "CvssVersion") -> bool:
        if not isinstance(other, CvssVersion):
            return NotImplemented
        return self.rank > other.rank

    def __ge__(self, other: "CvssVersion") -> bool:
        if not isinstance(other, CvssVersion):
            return NotImplemented
        return self.rank >= other.rank


def legal_labels(version: CvssVersion) -> tuple[SeverityLabel, ...]:
    """The label vocabulary of a CVSS version. v2.0 has no CRITICAL."""
    if version is CvssVersion.V2_0:
        return (SeverityLabel.LOW, SeverityLabel.MEDIUM, SeverityLabel.HIGH)
    return (
        SeverityLabel.LOW,
        SeverityLabel.MEDIUM,
        SeverityLabel.HIGH,
        SeverityLabel.CRITICAL,
    )


def round_score(value: float) -> float:
    """Round to one fractional digit, half away from zero."""
    return float(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def validate_score(value: float, version: CvssVersion | None = None) -> float:
    """Normalize a severity score to one fractional digit.

    The -1 sentinel passes through untouched. The accepted range [0, 10] is
    the same for every CVSS version; ``version`` is accepted for interface
    symmetry with the rest of the pipeline.
    """
    value = float(value)
    if value != value:  # NaN
        raise ScoreOutOfRange("severity score is NaN")
    if value == SCORE_DECLINED:
        return SCORE_DECLINED
    if not 0.0 <= value <= 10.0:
        raise ScoreOutOfRange(f"severity score {value!r} outside [0, 10]")
    return round_score(value)


def render_score(score: float) -> str:
    return "-1" if score == SCORE_DECLINED else f"{score:.1f}"


def score_to_json(score: float) -> float | int:
    return -1 if score == SCORE_DECLINED else score


# ---------------------------------------------------------------------------
# Prompt variants and tasks


class PromptVariant(Enum):
    DESCRIPTION = "description"
    DESCRIPTION_FILES = "description-files"
    DESCRIPTION_METHODS = "description-methods"
    DESCRIPTION_HUNKS = "description-hunks"
    FILES_ONLY = "files-only"
    METHODS_ONLY = "methods-only"
    HUNKS_ONLY = "hunks-only"

    @property
    def includes_description(self) -> bool:
        return self in (
            PromptVariant.DESCRIPTION,
            PromptVariant.DESCRIPTION_FILES,
            PromptVariant.DESCRIPTION_METHODS,
            PromptVariant.DESCRIPTION_HUNKS,
        )

    @property
    def granularity(self) -> str | None:
        """One of ``files``/``methods``/``hunks`` or None for description-only."""
        name = self.value.removesuffix("-only")
        for kind in ("files", "methods", "hunks"):
            if name.endswith(kind):
                return kind
        return None


#: The four variants evaluated by default; all seven are legal for export.
EVALUATION_VARIANTS: tuple[PromptVariant, ...] = (
    PromptVariant.DESCRIPTION,
    PromptVariant.DESCRIPTION_FILES,
    PromptVariant.DESCRIPTION_METHODS,
    PromptVariant.DESCRIPTION_HUNKS,
)

ALL_VARIANTS: tuple[PromptVariant, ...] = tuple(PromptVariant)


def parse_variant(text: str) -> PromptVariant:
    token = text.strip().lower().replace("_", "-")
    for variant in PromptVariant:
        if variant.value == token:
            return variant
    raise ValueError(f"unknown prompt variant: {text!r}")


class TaskKind(Enum):
    CWE = "cwe"
    SEVERITY = "severity"


# ---------------------------------------------------------------------------
# Code payloads


def line_count(content: str) -> int:
    return len(content.splitlines())


def slice_lines(content: str, start_line: int, end_line: int) -> str:
    """The text of lines ``start_line``..``end_line`` (1-based, inclusive)."""
    return "\n".join(content.splitlines()[start_line - 1 : end_line])


def _as_line_tuple(lines: Iterable) -> tuple[tuple[int, str], ...]:
    return tuple((int(n), str(t)) for n, t in lines)


@dataclass(frozen=True)
class BuggyFile:
    """A pre-change source file with the lines deleted by the fixing commit."""

    filename: str
    content: str
    buggy_lines: tuple[tuple[int, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "buggy_lines", _as_line_tuple(self.buggy_lines))
        total = line_count(self.content)
        previous = 0
        for number, _text in self.buggy_lines:
            if number <= previous:
                raise MalformedRecord(
                    f"{self.filename}: buggy line numbers must be strictly increasing"
                )
            if number > total:
                raise MalformedRecord(
                    f"{self.filename}: buggy line {number} beyond {total} lines"
                )
            previous = number


@dataclass(frozen=True)
class Hunk:
    """One ``@@``-delimited block of a unified diff.

    ``deleted_lines`` carry pre-image line numbers, ``added_lines`` carry
    post-image numbers; both exclude the ``-``/``+`` prefix character.
    """

    filename: str
    header: str
    deleted_lines: tuple[tuple[int, str], ...] = ()
    added_lines: tuple[tuple[int, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "deleted_lines", _as_line_tuple(self.deleted_lines))
        object.__setattr__(self, "added_lines", _as_line_tuple(self.added_lines))
        if not self.deleted_lines and not self.added_lines:
            raise MalformedRecord(f"{self.filename}: hunk contains no changed lines")


@dataclass(frozen=True)
class MethodSnippet:
    """A function/method definition enclosing at least one buggy line."""

    filename: str
    language: str
    method_name: str
    start_line: int
    end_line: int
    body: str

    def __post_init__(self) -> None:
        if self.start_line < 1 or self.start_line > self.end_line:
            raise MalformedRecord(
                f"{self.filename}: bad method span {self.start_line}..{self.end_line}"
            )


_CVE_ID = re.compile(r"^CVE-\d{4}-\d{4,}$")


@dataclass(frozen=True)
class EnrichedRecord:
    """One CVE with its description, commit metadata, and buggy code.

    ``commit_date`` is None only for records loaded from foreign JSON whose
    date field did not parse; the date filter discards those.
    """

    cve: str
    description: str
    url: str
    commit_date: date | None
    github_description: str | None = None
    files: tuple[BuggyFile, ...] = ()
    hunks: tuple[Hunk, ...] = ()
    methods: tuple[MethodSnippet, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "files", tuple(self.files))
        object.__setattr__(self, "hunks", tuple(self.hunks))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not _CVE_ID.match(self.cve):
            raise MalformedRecord(f"not a CVE identifier: {self.cve!r}")
        known = {f.filename for f in self.files}
        for part in (*self.hunks, *self.methods):
            if part.filename not in known:
                raise MalformedRecord(
                    f"{self.cve}: {part.filename!r} not among the record's files"
                )

    def with_methods(self, methods: Iterable[MethodSnippet]) -> "EnrichedRecord":
        return replace(self, methods=tuple(methods))

    def file_by_name(self, filename: str) -> BuggyFile:
        for f in self.files:
            if f.filename == filename:
                return f
        raise KeyError(filename)


def _parse_record_date(text: str | None) -> date | None:
    if not text:
        return None
    candidate = text.strip()
    try:
        return datetime.fromisoformat(candidate.replace("Z", "+00:00")).date()
    except ValueError:
        return None


def record_to_json(record: EnrichedRecord) -> dict[str, Any]:
    """Canonical JSON shape of a record (dataset schema field names)."""
    return {
        "cve": record.cve,
        "description": record.description,
        "url": record.url,
        "date": record.commit_date.isoformat() if record.commit_date else None,
        "github_description": record.github_description,
        "buggy_code": [
            {
                "filename": f.filename,
                "content": f.content,
                "buggy_lines": [[n, t] for n, t in f.buggy_lines],
            }
            for f in record.files
        ],
        "hunks": [
            {
                "filename": h.filename,
                "header": h.header,
                "deleted_lines": [[n, t] for n, t in h.deleted_lines],
                "added_lines": [[n, t] for n, t in h.added_lines],
            }
            for h in record.hunks
        ],
        "methods": [
            {
                "filename": m.filename,
                "language": m.language,
                "method_name": m.method_name,
                "start_line": m.start_line,
                "end_line": m.end_line,
                "body": m.body,
            }
            for m in record.methods
        ],
    }


def record_from_json(doc: Mapping[str, Any]) -> EnrichedRecord:
    try:
        return EnrichedRecord(
            cve=doc["cve"],
            description=doc.get("description", ""),
            url=doc.get("url", ""),
            commit_date=_parse_record_date(doc.get("date")),
            github_description=doc.get("github_description"),
            files=tuple(
                BuggyFile(f["filename"], f["content"], f.get("buggy_lines", []))
                for f in doc.get("buggy_code", [])
            ),
            hunks=tuple(
                Hunk(
                    h["filename"],
                    h.get("header", ""),
                    h.get("deleted_lines", []),
                    h.get("added_lines", []),
                )
                for h in doc.get("hunks", [])
            ),
            methods=tuple(
                MethodSnippet(
                    m["filename"],
                    m.get("language", ""),
                    m.get("method_name", ""),
                    m["start_line"],
                    m["end_line"],
                    m.get("body", ""),
                )
                for m in doc.get("methods", [])
            ),
        )
    except (KeyError, TypeError) as exc:
        raise MalformedRecord(f"bad record document: {exc}") from exc


# ---------------------------------------------------------------------------
# Ground truth and inference outcomes


@dataclass(frozen=True)
class GroundTruth:
    """The NVD-assigned CWEs and severity for a CVE under one CVSS version."""

    cwes: frozenset[CweId]
    label: SeverityLabel
    score: float
    version: CvssVersion

    def __post_init__(self) -> None:
        object.__setattr__(self, "cwes", frozenset(self.cwes))
        if not self.cwes:
            raise MalformedRecord("ground truth CWE set is empty")
        if self.score == SCORE_DECLINED:
            raise MalformedRecord("ground truth score cannot be the -1 sentinel")
        object.__setattr__(self, "score", validate_score(self.score))
        if self.label not in legal_labels(self.version):
            raise MalformedRecord(
                f"label {self.label.value} not legal under CVSS {self.version.value}"
            )


def ground_truth_to_json(gt: GroundTruth) -> dict[str, Any]:
    return {
        "cwes": render_cwe_set(gt.cwes),
        "label": gt.label.value,
        "score": score_to_json(gt.score),
        "version": gt.version.value,
    }


def ground_truth_from_json(doc: Mapping[str, Any]) -> GroundTruth:
    return GroundTruth(
        cwes=parse_cwe_set(doc["cwes"]),
        label=SeverityLabel(doc["label"]),
        score=float(doc["score"]),
        version=CvssVersion(doc["version"]),
    )


@dataclass(frozen=True)
class InferenceOutcome:
    """A validated model answer for one record/variant pair.

    ``exact_cwes`` is the model's committed answer, ``top_cwes`` its up-to-five
    candidate superset. A severity decline is (label=None, score=-1).
    """

    exact_cwes: frozenset[CweId]
    top_cwes: frozenset[CweId]
    label: SeverityLabel | None
    score: float
    raw_text_cwe: str = ""
    raw_text_severity: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "exact_cwes", frozenset(self.exact_cwes))
        object.__setattr__(self, "top_cwes", frozenset(self.top_cwes))
        if not self.exact_cwes <= self.top_cwes:
            raise MalformedRecord("exact CWEs must be a subset of top candidates")
        if len(self.top_cwes) > 5:
            raise MalformedRecord("more than five top candidate CWEs")
        object.__setattr__(self, "score", validate_score(self.score))


#: A decline outcome: empty CWE sets, no label, sentinel score.
DECLINED_OUTCOME = InferenceOutcome(
    exact_cwes=frozenset(),
    top_cwes=frozenset(),
    label=None,
    score=SCORE_DECLINED,
)


# ---------------------------------------------------------------------------
# Verdicts


class CweStatus(Enum):
    EQUAL = "equal"
    SUBSET_EQUAL = "subset-equal"
    OVERLAPPED = "overlapped"
    NON_OVERLAPPED = "non-overlapped"


@dataclass(frozen=True)
class Verdict:
    """Per-record evaluation statuses for every CWE and severity criterion.

    Direction flags are non-strict set relations, so EQUAL implies both.
    ``score_distance`` maps each configured distance to whether the clamped
    interval around the identified score covers the ground-truth score.
    """

    cve: str
    variant: PromptVariant
    cwe_status: CweStatus
    cwe_pred_in_gt: bool
    cwe_gt_in_pred: bool
    top_status: CweStatus
    top_pred_in_gt: bool
    top_gt_in_pred: bool
    label_match: bool
    score_exact: bool
    score_label_range: bool
    score_distance: tuple[tuple[float, bool], ...]
    gt_label: SeverityLabel
    identified_label: SeverityLabel | None

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "score_distance", tuple((float(d), bool(ok)) for d, ok in self.score_distance)
        )
        if self.cwe_status is CweStatus.EQUAL and not (
            self.cwe_pred_in_gt and self.cwe_gt_in_pred
        ):
            raise MalformedRecord("EQUAL verdict requires both direction flags")

    def distance_ok(self, distance: float) -> bool:
        for d, ok in self.score_distance:
            if d == distance:
                return ok
        raise KeyError(f"distance {distance} not evaluated")

    @property
    def max_distance(self) -> float:
        return max(d for d, _ in self.score_distance)
