from __future__ import annotations

import itertools
import json

import pytest
from hypothesis import given, strategies as st

from conftest import make_record
from vulntriage.model import (
    BuggyFile,
    CvssVersion,
    CweId,
    Hunk,
    InferenceOutcome,
    MalformedCweId,
    MalformedRecord,
    ScoreOutOfRange,
    SeverityLabel,
    legal_labels,
    parse_cwe_id,
    parse_cwe_set,
    record_from_json,
    record_to_json,
    render_cwe_set,
    render_score,
    round_score,
    validate_score,
)
from vulntriage.evaluate import classify_cwe_status
from vulntriage.model import CweStatus


class TestParseCweId:
    def test_canonical_form(self):
        assert parse_cwe_id("CWE-79") == CweId(79)

    def test_lowercase(self):
        assert parse_cwe_id("cwe-79") == CweId(79)

    def test_bare_number(self):
        assert parse_cwe_id("79") == CweId(79)

    def test_zero_rejected(self):
        with pytest.raises(MalformedCweId):
            parse_cwe_id("CWE-0")

    @pytest.mark.parametrize("bad", ["", "CWE-", "CWE-abc", "NVD-CWE-noinfo", "-5"])
    def test_garbage_rejected(self, bad):
        with pytest.raises(MalformedCweId):
            parse_cwe_id(bad)

    @given(st.integers(min_value=1, max_value=10_000))
    def test_round_trip(self, n):
        assert parse_cwe_id(str(CweId(n))) == CweId(n)

    def test_render_sorted(self):
        assert render_cwe_set(parse_cwe_set(["CWE-89", "79"])) == ["CWE-79", "CWE-89"]


class TestValidateScore:
    def test_paper_example(self):
        assert validate_score(9.2) == 9.2

    def test_sentinel_passthrough(self):
        assert validate_score(-1) == -1.0

    def test_above_ceiling(self):
        with pytest.raises(ScoreOutOfRange):
            validate_score(10.01)

    def test_below_floor(self):
        with pytest.raises(ScoreOutOfRange):
            validate_score(-0.5)

    def test_nan(self):
        with pytest.raises(ScoreOutOfRange):
            validate_score(float("nan"))

    def test_rounds_half_away_from_zero(self):
        assert validate_score(5.25) == 5.3
        assert validate_score(5.24) == 5.2

    def test_render(self):
        assert render_score(7.5) == "7.5"
        assert render_score(-1.0) == "-1"

    @given(st.floats(min_value=0.0, max_value=10.0, allow_nan=False))
    def test_idempotent(self, x):
        once = validate_score(x)
        assert validate_score(once) == once
        assert round(once * 10) == pytest.approx(once * 10)


class TestRoundScore:
    def test_negative_half(self):
        assert round_score(-0.25) == -0.3

    def test_float_noise(self):
        assert round_score(9.2 - 1.5) == 7.7


class TestVersionOrder:
    def test_total_order(self):
        assert CvssVersion.V2_0 < CvssVersion.V3_0 < CvssVersion.V3_1

    def test_legal_labels(self):
        assert SeverityLabel.CRITICAL not in legal_labels(CvssVersion.V2_0)
        assert SeverityLabel.CRITICAL in legal_labels(CvssVersion.V3_1)


class TestBuggyFile:
    def test_line_numbers_must_increase(self):
        with pytest.raises(MalformedRecord):
            BuggyFile("a.c", "x\ny\n", buggy_lines=[(2, "y"), (1, "x")])

    def test_line_numbers_within_content(self):
        with pytest.raises(MalformedRecord):
            BuggyFile("a.c", "x\n", buggy_lines=[(2, "y")])


class TestHunk:
    def test_needs_a_change(self):
        with pytest.raises(MalformedRecord):
            Hunk("a.c", "@@ -1 +1 @@")


class TestEnrichedRecord:
    def test_cve_pattern(self):
        with pytest.raises(MalformedRecord):
            make_record(cve="BUG-123")

    def test_hunk_filename_must_be_known(self):
        record = make_record()
        with pytest.raises(MalformedRecord):
            make_record(filename="src/a.php").with_methods(record.methods)

    def test_json_round_trip(self):
        record = make_record()
        doc = record_to_json(record)
        again = record_to_json(record_from_json(doc))
        assert doc == again
        assert json.dumps(doc, sort_keys=True) == json.dumps(again, sort_keys=True)

    def test_json_field_names(self):
        doc = record_to_json(make_record())
        assert set(doc) == {
            "cve",
            "description",
            "url",
            "date",
            "github_description",
            "buggy_code",
            "hunks",
            "methods",
        }

    def test_unparsable_date_becomes_none(self):
        doc = record_to_json(make_record())
        doc["date"] = "not-a-date"
        assert record_from_json(doc).commit_date is None


class TestInferenceOutcome:
    def test_exact_must_be_subset(self):
        with pytest.raises(MalformedRecord):
            InferenceOutcome(
                exact_cwes=parse_cwe_set(["CWE-79"]),
                top_cwes=parse_cwe_set(["CWE-89"]),
                label=None,
                score=-1,
            )

    def test_top_limit(self):
        ids = [f"CWE-{n}" for n in range(1, 7)]
        with pytest.raises(MalformedRecord):
            InferenceOutcome(
                exact_cwes=frozenset(),
                top_cwes=parse_cwe_set(ids),
                label=None,
                score=-1,
            )


class TestVerdictConsistency:
    def test_status_flags_consistent_by_brute_force(self):
        """Exhaust all subset pairs of a small universe; gt stays non-empty."""
        universe = [1, 2, 3, 4]
        subsets = [
            frozenset(CweId(n) for n in combo)
            for r in range(len(universe) + 1)
            for combo in itertools.combinations(universe, r)
        ]
        for identified in subsets:
            for gt in subsets:
                if not gt:
                    continue
                status, pred_in_gt, gt_in_pred = classify_cwe_status(identified, gt)
                assert pred_in_gt == (identified <= gt)
                assert gt_in_pred == (gt <= identified)
                if status is CweStatus.EQUAL:
                    assert pred_in_gt and gt_in_pred
                elif status is CweStatus.SUBSET_EQUAL:
                    assert pred_in_gt != gt_in_pred
                elif status is CweStatus.OVERLAPPED:
                    assert identified & gt and not pred_in_gt and not gt_in_pred
                else:
                    assert not identified & gt
