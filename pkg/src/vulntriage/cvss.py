"""CVSS qualitative rating knowledge.

Per-version score band tables, version selection, score/label mapping, and
clamped score-distance ranges. Band tables default to the published CVSS
qualitative rating scales (with the v3.x "None" band folded into LOW so the
label set is exactly LOW/MEDIUM/HIGH/CRITICAL) and can be overridden from a
config mapping for future scheme revisions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping

from .model import (
    CvssVersion,
    SCORE_DECLINED,
    SeverityLabel,
    round_score,
)


class SentinelScore(ValueError):
    """Raised when the -1 decline sentinel reaches a score/label mapping."""


class LabelNotInScheme(KeyError):
    """Raised when a label does not exist in a version's band table."""


class UnknownCvssVersion(ValueError):
    """Raised for version strings that normalize to no known CVSS version."""


@dataclass(frozen=True)
class ScoreRange:
    """An inclusive score interval inside [0.0, 10.0]."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.lo <= self.hi <= 10.0:
            raise ValueError(f"bad score range [{self.lo}, {self.hi}]")

    def covers(self, score: float) -> bool:
        return self.lo <= score <= self.hi


@dataclass(frozen=True)
class CvssScheme:
    """Ordered severity bands partitioning [0.0, 10.0] for one CVSS version."""

    version: CvssVersion
    bands: tuple[tuple[SeverityLabel, float, float], ...]

    def __post_init__(self) -> None:
        if not self.bands:
            raise ValueError("scheme has no bands")
        expected_lo = 0.0
        for label, lo, hi in self.bands:
            if lo != expected_lo or hi < lo:
                raise ValueError(
                    f"bands of {self.version.value} do not partition [0, 10] "
                    f"at {label.value}: [{lo}, {hi}] after {expected_lo}"
                )
            expected_lo = round_score(hi + 0.1)
        if self.bands[-1][2] != 10.0:
            raise ValueError(f"bands of {self.version.value} do not reach 10.0")

    @property
    def labels(self) -> tuple[SeverityLabel, ...]:
        return tuple(label for label, _lo, _hi in self.bands)


_V3_BANDS = (
    (SeverityLabel.LOW, 0.0, 3.9),
    (SeverityLabel.MEDIUM, 4.0, 6.9),
    (SeverityLabel.HIGH, 7.0, 8.9),
    (SeverityLabel.CRITICAL, 9.0, 10.0),
)

DEFAULT_SCHEMES: dict[CvssVersion, CvssScheme] = {
    CvssVersion.V2_0: CvssScheme(
        CvssVersion.V2_0,
        (
            (SeverityLabel.LOW, 0.0, 3.9),
            (SeverityLabel.MEDIUM, 4.0, 6.9),
            (SeverityLabel.HIGH, 7.0, 10.0),
        ),
    ),
    CvssVersion.V3_0: CvssScheme(CvssVersion.V3_0, _V3_BANDS),
    CvssVersion.V3_1: CvssScheme(CvssVersion.V3_1, _V3_BANDS),
}


def schemes_from_config(raw: Mapping[str, Iterable]) -> dict[CvssVersion, CvssScheme]:
    """Build a scheme table from a config mapping.

    Expected shape: ``{"3.1": [["LOW", 0.0, 3.9], ...], ...}``. Versions not
    mentioned keep their default bands.
    """
    schemes = dict(DEFAULT_SCHEMES)
    for version_text, rows in raw.items():
        version = parse_version(str(version_text))
        bands = tuple(
            (SeverityLabel(str(label)), float(lo), float(hi)) for label, lo, hi in rows
        )
        schemes[version] = CvssScheme(version, bands)
    return schemes


_VERSION_TEXT = re.compile(r"^(?:cvss[:\s]*)?v?([0-9]+)(?:\.([0-9]+))?$")
_METRIC_KEY = re.compile(r"^cvssmetricv([0-9])([0-9])?$")


def parse_version(text: str) -> CvssVersion:
    """Normalize version spellings like ``3.1``, ``V3.1``, ``cvssMetricV31``."""
    token = text.strip().lower()
    match = _METRIC_KEY.match(token) or _VERSION_TEXT.match(token)
    if match is None:
        raise UnknownCvssVersion(f"unrecognized CVSS version: {text!r}")
    major, minor = match.group(1), match.group(2) or "0"
    candidate = f"{int(major)}.{int(minor)}"
    for version in CvssVersion:
        if version.value == candidate:
            return version
    raise UnknownCvssVersion(f"unsupported CVSS version: {text!r}")


def select_version(available: Iterable[CvssVersion]) -> CvssVersion:
    """The latest version present; v3.1 when nothing is listed."""
    versions = list(available)
    if not versions:
        return CvssVersion.V3_1
    return max(versions, key=lambda v: v.rank)


def _scheme(
    version: CvssVersion, schemes: Mapping[CvssVersion, CvssScheme] | None
) -> CvssScheme:
    table = schemes if schemes is not None else DEFAULT_SCHEMES
    return table[version]


def score_to_label(
    score: float,
    version: CvssVersion,
    schemes: Mapping[CvssVersion, CvssScheme] | None = None,
) -> SeverityLabel:
    """The severity label whose band contains ``score`` under ``version``."""
    if score == SCORE_DECLINED:
        raise SentinelScore("declined score has no severity label")
    value = round_score(float(score))
    for label, lo, hi in _scheme(version, schemes).bands:
        if lo <= value <= hi:
            return label
    raise ValueError(f"score {score!r} outside [0, 10]")


def label_range(
    label: SeverityLabel,
    version: CvssVersion,
    schemes: Mapping[CvssVersion, CvssScheme] | None = None,
) -> ScoreRange:
    """The inclusive score band of ``label`` under ``version``."""
    for band_label, lo, hi in _scheme(version, schemes).bands:
        if band_label is label:
            return ScoreRange(lo, hi)
    raise LabelNotInScheme(f"{label.value} not in CVSS {version.value}")


def distance_range(score: float, distance: float) -> ScoreRange:
    """The interval of radius ``distance`` around ``score``, clamped to [0, 10].

    Scores and distances are at one-decimal resolution, so the bounds are
    rounded back to the grid after the arithmetic.
    """
    if score == SCORE_DECLINED:
        raise SentinelScore("declined score has no distance range")
    if distance <= 0:
        raise ValueError(f"distance must be positive, got {distance!r}")
    lo = max(0.0, round_score(score - distance))
    hi = min(10.0, round_score(score + distance))
    return ScoreRange(lo, hi)


def range_covers(score_range: ScoreRange, score: float) -> bool:
    """True iff ``lo <= score <= hi`` (inclusive on both ends)."""
    return score_range.covers(score)
