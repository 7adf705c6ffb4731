"""Evaluation: per-record verdicts, accuracy aggregation, and reports.

Implements every figure-backed criterion: CWE set relations on exact and
top-candidate sets, severity label equality, exact score comparison, label
range comparison, clamped score-distance coverage, and the combined
(perfect match + severity) criteria. Format-violation records keep their
decline values and therefore fail every criterion while staying in the
denominator.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import cvss
from .extract import detect_language
from .inference import RawResult
from .model import (
    CvssVersion,
    CweId,
    CweStatus,
    EnrichedRecord,
    GroundTruth,
    InferenceOutcome,
    PromptVariant,
    SCORE_DECLINED,
    SeverityLabel,
    Verdict,
)

logger = logging.getLogger(__name__)

DEFAULT_DISTANCES: tuple[float, ...] = (0.5, 1.0, 1.5)


class EmptyEvaluationSet(ValueError):
    """Raised when accuracy is requested over zero verdicts."""


class CriterionId(Enum):
    CWE_PE = "cwe_pe"
    CWE_PC = "cwe_pc"
    CWE_GC = "cwe_gc"
    CWE_TOP_PC = "cwe_top_pc"
    CWE_TOP_GC = "cwe_top_gc"
    SEV_LABEL = "sev_label"
    SEV_SCORE_EXACT = "sev_score_exact"
    SEV_SCORE_LABEL_RANGE = "sev_score_label_range"
    SEV_SCORE_DIST_05 = "sev_score_dist_0.5"
    SEV_SCORE_DIST_10 = "sev_score_dist_1.0"
    SEV_SCORE_DIST_15 = "sev_score_dist_1.5"
    TOTAL_PM_LABEL = "total_pm_label"
    TOTAL_PM_LABEL_RANGE = "total_pm_label_range"
    TOTAL_PM_DIST = "total_pm_dist"


@dataclass(frozen=True)
class AccuracyReport:
    variant: PromptVariant
    criterion: CriterionId
    numerator: int
    denominator: int

    @property
    def accuracy(self) -> float:
        return self.numerator / self.denominator

    def to_json(self) -> dict[str, Any]:
        return {
            "variant": self.variant.value,
            "criterion": self.criterion.value,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "accuracy": self.accuracy,
        }


def classify_cwe_status(
    identified: frozenset[CweId], gt: frozenset[CweId]
) -> tuple[CweStatus, bool, bool]:
    """Set relation between identified and ground-truth CWEs plus direction
    flags (identified ⊆ gt, gt ⊆ identified; non-strict, so EQUAL sets both).

    Precedence for the status: equality, then proper containment in either
    direction, then overlap, then disjointness.
    """
    pred_in_gt = identified <= gt
    gt_in_pred = gt <= identified
    if pred_in_gt and gt_in_pred:
        status = CweStatus.EQUAL
    elif pred_in_gt or gt_in_pred:
        status = CweStatus.SUBSET_EQUAL
    elif identified & gt:
        status = CweStatus.OVERLAPPED
    else:
        status = CweStatus.NON_OVERLAPPED
    return status, pred_in_gt, gt_in_pred


def eval_record(
    outcome: InferenceOutcome,
    gt: GroundTruth,
    schemes: Mapping[CvssVersion, cvss.CvssScheme] | None = None,
    distances: Sequence[float] = DEFAULT_DISTANCES,
    *,
    cve: str = "",
    variant: PromptVariant = PromptVariant.DESCRIPTION,
) -> Verdict:
    """Fill every verdict field for one outcome against its ground truth.

    Declines (label None, score -1) fail every severity criterion. The label
    range criterion maps the identified score through the record's governing
    CVSS version and compares against the ground-truth label.
    """
    status, pred_in_gt, gt_in_pred = classify_cwe_status(outcome.exact_cwes, gt.cwes)
    top_status, top_in_gt, gt_in_top = classify_cwe_status(outcome.top_cwes, gt.cwes)

    label_match = outcome.label is not None and outcome.label is gt.label
    declined = outcome.score == SCORE_DECLINED
    score_exact = not declined and outcome.score == gt.score
    if declined:
        score_label_range = False
        distance_flags = tuple((d, False) for d in distances)
    else:
        score_label_range = (
            cvss.score_to_label(outcome.score, gt.version, schemes) is gt.label
        )
        distance_flags = tuple(
            (d, cvss.range_covers(cvss.distance_range(outcome.score, d), gt.score))
            for d in distances
        )

    return Verdict(
        cve=cve,
        variant=variant,
        cwe_status=status,
        cwe_pred_in_gt=pred_in_gt,
        cwe_gt_in_pred=gt_in_pred,
        top_status=top_status,
        top_pred_in_gt=top_in_gt,
        top_gt_in_pred=gt_in_top,
        label_match=label_match,
        score_exact=score_exact,
        score_label_range=score_label_range,
        score_distance=distance_flags,
        gt_label=gt.label,
        identified_label=outcome.label,
    )


def verdict_from_raw(
    raw: RawResult,
    schemes: Mapping[CvssVersion, cvss.CvssScheme] | None = None,
    distances: Sequence[float] = DEFAULT_DISTANCES,
) -> Verdict:
    """Evaluate a persisted raw result.

    A task whose answer failed the provider or the formatter keeps its
    decline values in ``parsed`` and so fails that task's criteria.
    """
    return eval_record(
        raw.outcome,
        raw.ground_truth,
        schemes,
        distances,
        cve=raw.cve,
        variant=raw.variant,
    )


def _criterion_holds(verdict: Verdict, criterion: CriterionId) -> bool:
    if criterion is CriterionId.CWE_PE:
        return verdict.cwe_status is CweStatus.EQUAL
    if criterion is CriterionId.CWE_PC:
        return verdict.cwe_pred_in_gt
    if criterion is CriterionId.CWE_GC:
        return verdict.cwe_gt_in_pred
    if criterion is CriterionId.CWE_TOP_PC:
        return verdict.top_pred_in_gt
    if criterion is CriterionId.CWE_TOP_GC:
        return verdict.top_gt_in_pred
    if criterion is CriterionId.SEV_LABEL:
        return verdict.label_match
    if criterion is CriterionId.SEV_SCORE_EXACT:
        return verdict.score_exact
    if criterion is CriterionId.SEV_SCORE_LABEL_RANGE:
        return verdict.score_label_range
    if criterion is CriterionId.SEV_SCORE_DIST_05:
        return verdict.distance_ok(0.5)
    if criterion is CriterionId.SEV_SCORE_DIST_10:
        return verdict.distance_ok(1.0)
    if criterion is CriterionId.SEV_SCORE_DIST_15:
        return verdict.distance_ok(1.5)
    perfect = verdict.cwe_status is CweStatus.EQUAL
    if criterion is CriterionId.TOTAL_PM_LABEL:
        return perfect and verdict.label_match
    if criterion is CriterionId.TOTAL_PM_LABEL_RANGE:
        return perfect and verdict.score_label_range
    if criterion is CriterionId.TOTAL_PM_DIST:
        # combined criterion uses the largest evaluated distance
        return perfect and verdict.distance_ok(verdict.max_distance)
    raise AssertionError(criterion)


def accuracy(
    verdicts: Sequence[Verdict], criterion: CriterionId, variant: PromptVariant
) -> AccuracyReport:
    """Accuracy of one criterion over a variant's verdicts.

    The denominator is the total number of evaluated records for the
    variant, declines and format violations included.
    """
    relevant = [v for v in verdicts if v.variant is variant]
    if not relevant:
        raise EmptyEvaluationSet(f"no verdicts for variant {variant.value}")
    numerator = sum(1 for v in relevant if _criterion_holds(v, criterion))
    return AccuracyReport(
        variant=variant,
        criterion=criterion,
        numerator=numerator,
        denominator=len(relevant),
    )


_DISTANCE_CRITERIA = {
    CriterionId.SEV_SCORE_DIST_05: 0.5,
    CriterionId.SEV_SCORE_DIST_10: 1.0,
    CriterionId.SEV_SCORE_DIST_15: 1.5,
}


def criteria_for(distances: Sequence[float] = DEFAULT_DISTANCES) -> list[CriterionId]:
    """Every criterion computable under the configured distances."""
    return [
        criterion
        for criterion in CriterionId
        if criterion not in _DISTANCE_CRITERIA
        or _DISTANCE_CRITERIA[criterion] in distances
    ]


def all_accuracies(
    verdicts: Sequence[Verdict],
    variants: Iterable[PromptVariant],
    distances: Sequence[float] = DEFAULT_DISTANCES,
) -> list[AccuracyReport]:
    return [
        accuracy(verdicts, criterion, variant)
        for variant in variants
        for criterion in criteria_for(distances)
    ]


def verify_accuracy_bounds(reports: Sequence[AccuracyReport]) -> None:
    """Sanity bounds that hold for any verdict set; raises on violation.

    Equality implies both coverages, nested distance ranges are monotone,
    and a conjunction cannot beat its conjuncts.
    """
    by_cell = {(r.variant, r.criterion): r.accuracy for r in reports}
    variants = {r.variant for r in reports}
    for variant in variants:
        def cell(criterion: CriterionId) -> float | None:
            return by_cell.get((variant, criterion))

        pe = cell(CriterionId.CWE_PE)
        for wider in (CriterionId.CWE_PC, CriterionId.CWE_GC):
            if pe is not None and cell(wider) is not None and pe > cell(wider):
                raise AssertionError(f"{variant.value}: PE exceeds {wider.value}")
        chain = [
            cell(c)
            for c in (
                CriterionId.SEV_SCORE_DIST_05,
                CriterionId.SEV_SCORE_DIST_10,
                CriterionId.SEV_SCORE_DIST_15,
            )
            if cell(c) is not None
        ]
        if any(a > b for a, b in zip(chain, chain[1:])):
            raise AssertionError(f"{variant.value}: distance accuracies not monotone")
        for total, conjunct in (
            (CriterionId.TOTAL_PM_LABEL, CriterionId.SEV_LABEL),
            (CriterionId.TOTAL_PM_LABEL_RANGE, CriterionId.SEV_SCORE_LABEL_RANGE),
        ):
            t, c = cell(total), cell(conjunct)
            if t is not None and pe is not None and c is not None and t > min(pe, c):
                raise AssertionError(f"{variant.value}: {total.value} beats conjuncts")


NULL_LABEL = "NULL"


def label_distribution(
    verdicts: Sequence[Verdict], variant: PromptVariant
) -> dict[str, dict[str, int]]:
    """Per-label ground-truth and identified counts, with a NULL bucket for
    declined identifications."""
    buckets = [label.value for label in SeverityLabel] + [NULL_LABEL]
    gt_counts = {b: 0 for b in buckets}
    identified_counts = {b: 0 for b in buckets}
    for verdict in verdicts:
        if verdict.variant is not variant:
            continue
        gt_counts[verdict.gt_label.value] += 1
        key = verdict.identified_label.value if verdict.identified_label else NULL_LABEL
        identified_counts[key] += 1
    return {"ground_truth": gt_counts, "identified": identified_counts}


def dominant_language(record: EnrichedRecord) -> str | None:
    """The language of the file with the most buggy lines (first wins ties)."""
    best: tuple[int, int] | None = None
    best_language: str | None = None
    for index, file in enumerate(record.files):
        language = detect_language(file.filename)
        if language is None:
            continue
        score = (-len(file.buggy_lines), index)
        if best is None or score < best:
            best = score
            best_language = language.value
    return best_language


def language_breakdown(
    verdicts: Sequence[Verdict],
    records_by_cve: Mapping[str, EnrichedRecord],
    variant: PromptVariant,
) -> dict[str, dict[str, int]]:
    """Per-language record counts with perfect-match-CWE and label hits."""
    breakdown: dict[str, dict[str, int]] = {}
    for verdict in verdicts:
        if verdict.variant is not variant:
            continue
        record = records_by_cve.get(verdict.cve)
        if record is None:
            continue
        language = dominant_language(record)
        if language is None:
            continue
        row = breakdown.setdefault(
            language, {"records": 0, "cwe_correct": 0, "label_correct": 0}
        )
        row["records"] += 1
        if verdict.cwe_status is CweStatus.EQUAL:
            row["cwe_correct"] += 1
        if verdict.label_match:
            row["label_correct"] += 1
    return dict(sorted(breakdown.items()))


# ---------------------------------------------------------------------------
# Report bundle


def _dump(path: Path, doc: Any) -> None:
    path.write_text(
        json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def generate_report(
    reports: Sequence[AccuracyReport],
    distributions: Mapping[PromptVariant, Mapping[str, Any]],
    breakdowns: Mapping[PromptVariant, Mapping[str, Any]],
    out_dir: str | Path,
) -> list[Path]:
    """Write the report bundle: summary.json, per-variant distribution and
    language files, and a human-readable criterion matrix in report.md.

    Reruns over identical inputs produce byte-identical files.
    """
    if not reports:
        raise EmptyEvaluationSet("no accuracy reports to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    ordered = sorted(reports, key=lambda r: (r.variant.value, r.criterion.value))
    summary_path = out / "summary.json"
    _dump(summary_path, [r.to_json() for r in ordered])
    written.append(summary_path)

    for variant in sorted(distributions, key=lambda v: v.value):
        path = out / f"distribution_{variant.value}.json"
        _dump(path, distributions[variant])
        written.append(path)
    for variant in sorted(breakdowns, key=lambda v: v.value):
        path = out / f"languages_{variant.value}.json"
        _dump(path, breakdowns[variant])
        written.append(path)

    report_path = out / "report.md"
    report_path.write_text(render_report_table(ordered), encoding="utf-8")
    written.append(report_path)
    return written


def render_report_table(reports: Sequence[AccuracyReport]) -> str:
    variants = sorted({r.variant for r in reports}, key=lambda v: v.value)
    by_cell = {(r.variant, r.criterion): r for r in reports}
    lines = ["# Evaluation summary", ""]
    header = "| criterion | " + " | ".join(v.value for v in variants) + " |"
    rule = "|---" * (len(variants) + 1) + "|"
    lines.extend([header, rule])
    for criterion in CriterionId:
        cells = []
        for variant in variants:
            report = by_cell.get((variant, criterion))
            cells.append(
                f"{report.accuracy:.3f} ({report.numerator}/{report.denominator})"
                if report
                else "-"
            )
        lines.append(f"| {criterion.value} | " + " | ".join(cells) + " |")
    lines.append("")
    return "\n".join(lines)
