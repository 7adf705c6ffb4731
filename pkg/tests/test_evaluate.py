from __future__ import annotations

import random

import pytest

from conftest import make_gt, make_record
from oracles import recount
from vulntriage.evaluate import (
    AccuracyReport,
    CriterionId,
    EmptyEvaluationSet,
    accuracy,
    all_accuracies,
    classify_cwe_status,
    dominant_language,
    eval_record,
    generate_report,
    label_distribution,
    language_breakdown,
    eval_record as _eval_record,
)
from vulntriage.model import (
    BuggyFile,
    CvssVersion,
    CweId,
    CweStatus,
    InferenceOutcome,
    PromptVariant,
    SeverityLabel,
    legal_labels,
    parse_cwe_set,
)

V = PromptVariant.DESCRIPTION


def outcome(exact=(), top=None, label=None, score=-1.0):
    exact_set = parse_cwe_set([f"CWE-{n}" for n in exact])
    top_set = (
        parse_cwe_set([f"CWE-{n}" for n in top]) if top is not None else exact_set
    )
    return InferenceOutcome(
        exact_cwes=exact_set, top_cwes=top_set, label=label, score=score
    )


class TestClassifyCweStatus:
    def test_equal(self):
        assert classify_cwe_status(
            parse_cwe_set(["CWE-79"]), parse_cwe_set(["CWE-79"])
        )[0] is CweStatus.EQUAL

    def test_subset_direction_flag(self):
        status, pred_in_gt, gt_in_pred = classify_cwe_status(
            parse_cwe_set(["CWE-79"]), parse_cwe_set(["CWE-79", "CWE-89"])
        )
        assert status is CweStatus.SUBSET_EQUAL
        assert pred_in_gt and not gt_in_pred

    def test_overlap(self):
        status, *_ = classify_cwe_status(
            parse_cwe_set(["CWE-79", "CWE-20"]), parse_cwe_set(["CWE-89", "CWE-20"])
        )
        assert status is CweStatus.OVERLAPPED

    def test_disjoint(self):
        status, *_ = classify_cwe_status(
            parse_cwe_set(["CWE-79"]), parse_cwe_set(["CWE-89"])
        )
        assert status is CweStatus.NON_OVERLAPPED


class TestEvalRecord:
    def test_paper_distance_example(self):
        gt = make_gt(label=SeverityLabel.HIGH, score=8.0)
        verdict = eval_record(outcome(exact=(89,), label=None, score=9.2), gt)
        assert verdict.distance_ok(1.5)  # [7.7, 10.0] covers 8.0
        assert not verdict.distance_ok(1.0)  # [8.2, 10.0] misses 8.0
        # 9.2 maps to CRITICAL, gt label HIGH
        assert not verdict.score_label_range

    def test_label_range_true_when_labels_align(self):
        gt = make_gt(label=SeverityLabel.CRITICAL, score=9.8)
        verdict = eval_record(outcome(exact=(89,), score=9.2), gt)
        assert verdict.score_label_range

    def test_decline_fails_every_severity_criterion(self):
        verdict = eval_record(outcome(exact=(89,)), make_gt())
        assert not verdict.label_match
        assert not verdict.score_exact
        assert not verdict.score_label_range
        assert not any(ok for _d, ok in verdict.score_distance)

    def test_perfect_cwe(self):
        verdict = eval_record(outcome(exact=(269,)), make_gt(cwes=("CWE-269",)))
        assert verdict.cwe_status is CweStatus.EQUAL

    def test_label_match_case_sensitive_identity(self):
        gt = make_gt(label=SeverityLabel.HIGH, score=7.5)
        verdict = eval_record(
            outcome(exact=(89,), label=SeverityLabel.HIGH, score=7.5), gt
        )
        assert verdict.label_match and verdict.score_exact

    def test_top_flags(self):
        gt = make_gt(cwes=("CWE-79",))
        verdict = eval_record(outcome(exact=(79,), top=(79, 89)), gt)
        assert verdict.top_gt_in_pred and not verdict.top_pred_in_gt


class TestAccuracy:
    def _verdicts(self):
        gt = make_gt(cwes=("CWE-1", "CWE-2"))
        rows = [
            outcome(exact=(1,)),  # proper subset
            outcome(exact=(2,)),  # proper subset
            outcome(exact=(1, 2)),  # equal
            outcome(exact=(9,)),  # disjoint
        ]
        return [eval_record(o, gt, cve=f"CVE-2021-{i:04d}", variant=V) for i, o in enumerate(rows, 1)]

    def test_pe(self):
        report = accuracy(self._verdicts(), CriterionId.CWE_PE, V)
        assert (report.numerator, report.denominator) == (1, 4)

    def test_pc_counts_subset_or_equal(self):
        report = accuracy(self._verdicts(), CriterionId.CWE_PC, V)
        assert report.accuracy == 0.75

    def test_total_conjunction_hand_enumerated(self):
        gt = make_gt(cwes=("CWE-5",), label=SeverityLabel.CRITICAL, score=9.8)
        rows = [
            outcome(exact=(5,), label=SeverityLabel.CRITICAL, score=9.8),  # PE+label
            outcome(exact=(5,), label=SeverityLabel.LOW, score=1.0),  # PE only
            outcome(exact=(6,), label=SeverityLabel.CRITICAL, score=9.8),  # label only
            outcome(exact=(6,)),  # neither
        ]
        verdicts = [eval_record(o, gt, cve=f"CVE-2021-{i:04d}", variant=V) for i, o in enumerate(rows, 1)]
        report = accuracy(verdicts, CriterionId.TOTAL_PM_LABEL, V)
        assert report.accuracy == 0.25

    def test_empty_set_raises(self):
        with pytest.raises(EmptyEvaluationSet):
            accuracy([], CriterionId.CWE_PE, V)


def random_pair(rng: random.Random):
    universe = list(range(1, 8))
    gt_ids = rng.sample(universe, rng.randint(1, 3))
    version = rng.choice(list(CvssVersion))
    labels = legal_labels(version)
    gt = make_gt(
        cwes=[f"CWE-{n}" for n in gt_ids],
        label=rng.choice(labels),
        score=round(rng.randrange(0, 101) / 10, 1),
        version=version,
    )
    if rng.random() < 0.1:
        out = outcome()  # full decline
    else:
        exact_ids = rng.sample(universe, rng.randint(0, 3))
        extra = [n for n in universe if n not in exact_ids]
        top_ids = exact_ids + rng.sample(extra, min(len(extra), rng.randint(0, 5 - len(exact_ids))))
        declined = rng.random() < 0.15
        out = outcome(
            exact=exact_ids,
            top=top_ids,
            label=None if declined else rng.choice(list(SeverityLabel)),
            score=-1.0 if declined else round(rng.randrange(0, 101) / 10, 1),
        )
    return out, gt


class TestMetricOracleEquivalence:
    def test_random_sets_match_brute_force_recount(self):
        rng = random.Random(99)
        for _round in range(200):
            pairs = [random_pair(rng) for _ in range(rng.randint(1, 20))]
            verdicts = [
                eval_record(o, gt, cve=f"CVE-2021-{i:04d}", variant=V)
                for i, (o, gt) in enumerate(pairs, 1)
            ]
            for criterion in CriterionId:
                report = accuracy(verdicts, criterion, V)
                assert report.numerator == recount(pairs, criterion.value), criterion
            pe = accuracy(verdicts, CriterionId.CWE_PE, V).accuracy
            assert pe <= accuracy(verdicts, CriterionId.CWE_PC, V).accuracy
            assert pe <= accuracy(verdicts, CriterionId.CWE_GC, V).accuracy
            d05 = accuracy(verdicts, CriterionId.SEV_SCORE_DIST_05, V).accuracy
            d10 = accuracy(verdicts, CriterionId.SEV_SCORE_DIST_10, V).accuracy
            d15 = accuracy(verdicts, CriterionId.SEV_SCORE_DIST_15, V).accuracy
            assert d05 <= d10 <= d15
            total = accuracy(verdicts, CriterionId.TOTAL_PM_LABEL, V).accuracy
            label = accuracy(verdicts, CriterionId.SEV_LABEL, V).accuracy
            assert total <= min(pe, label)


class TestDistributions:
    def test_gt_histogram(self):
        gt = make_gt(label=SeverityLabel.MEDIUM, score=5.4)
        verdicts = [
            eval_record(outcome(exact=(89,)), gt, cve=f"CVE-2021-{i:04d}", variant=V)
            for i in range(1, 4)
        ]
        dist = label_distribution(verdicts, V)
        assert dist["ground_truth"]["MEDIUM"] == 3
        assert dist["identified"]["NULL"] == 3

    def test_echo_matches(self):
        gt = make_gt(label=SeverityLabel.HIGH, score=7.5)
        verdicts = [
            eval_record(
                outcome(exact=(89,), label=SeverityLabel.HIGH, score=7.5),
                gt,
                cve="CVE-2021-0001",
                variant=V,
            )
        ]
        dist = label_distribution(verdicts, V)
        assert dist["ground_truth"] == dist["identified"]


class TestLanguageBreakdown:
    def test_counts(self):
        record = make_record()  # php
        gt = make_gt()
        verdicts = [
            eval_record(
                outcome(exact=(89,), label=SeverityLabel.CRITICAL, score=9.8),
                gt,
                cve=record.cve,
                variant=V,
            )
        ]
        rows = language_breakdown(verdicts, {record.cve: record}, V)
        assert rows == {"php": {"records": 1, "cwe_correct": 1, "label_correct": 1}}

    def test_dominant_language_most_buggy_lines(self):
        go_file = BuggyFile(
            "a.go",
            "package a\n\nfunc f() {\n\treturn\n}\n",
            buggy_lines=[(3, "func f() {"), (4, "\treturn")],
        )
        php_file = BuggyFile("b.php", "<?php\n$x = 1;\n", buggy_lines=[(2, "$x = 1;")])
        record = make_record().__class__(
            cve="CVE-2021-7777",
            description="d",
            url="u",
            commit_date=None,
            files=(go_file, php_file),
            hunks=(),
            methods=(),
        )
        assert dominant_language(record) == "go"


class TestGenerateReport:
    def test_bundle_and_determinism(self, tmp_path):
        gt = make_gt()
        verdicts = [
            eval_record(
                outcome(exact=(89,), label=SeverityLabel.CRITICAL, score=9.8),
                gt,
                cve="CVE-2021-0001",
                variant=V,
            )
        ]
        reports = all_accuracies(verdicts, [V])
        assert len(reports) == 14
        dists = {V: label_distribution(verdicts, V)}
        langs = {V: {}}
        first = generate_report(reports, dists, langs, tmp_path / "a")
        second = generate_report(reports, dists, langs, tmp_path / "b")
        assert [p.name for p in first] == [p.name for p in second]
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()
        summary = (tmp_path / "a" / "summary.json").read_text()
        assert '"cwe_pe"' in summary

    def test_empty_reports_error(self, tmp_path):
        with pytest.raises(EmptyEvaluationSet):
            generate_report([], {}, {}, tmp_path)


class TestVerifyAccuracyBounds:
    def test_violation_detected(self):
        from vulntriage.evaluate import verify_accuracy_bounds

        rows = [
            AccuracyReport(V, CriterionId.CWE_PE, 3, 4),
            AccuracyReport(V, CriterionId.CWE_PC, 1, 4),  # impossible: PE > PC
        ]
        with pytest.raises(AssertionError):
            verify_accuracy_bounds(rows)

    def test_consistent_rows_pass(self):
        from vulntriage.evaluate import verify_accuracy_bounds

        rows = [
            AccuracyReport(V, CriterionId.CWE_PE, 1, 4),
            AccuracyReport(V, CriterionId.CWE_PC, 3, 4),
            AccuracyReport(V, CriterionId.SEV_SCORE_DIST_05, 1, 4),
            AccuracyReport(V, CriterionId.SEV_SCORE_DIST_10, 2, 4),
            AccuracyReport(V, CriterionId.SEV_SCORE_DIST_15, 2, 4),
        ]
        verify_accuracy_bounds(rows)
