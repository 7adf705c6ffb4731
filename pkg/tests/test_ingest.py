from __future__ import annotations

import json
from datetime import date

import pytest

from conftest import FIXTURES, make_record
from vulntriage.ingest import (
    CommitData,
    DatasetStore,
    FeedSyntaxError,
    FetchError,
    NotACommitUrl,
    RateLimited,
    RecordedCommitClient,
    SampleTooLarge,
    assemble_record,
    cve2cwe_from_feed,
    fetch_commit,
    fetch_commits,
    first_commit_url,
    load_cve2cwe,
    parse_commit_url,
    parse_nvd_feed,
    sample_evaluation,
    split_dataset,
)
from vulntriage.model import record_to_json


class TestParseNvdFeed:
    def test_api2_shape(self):
        entries = parse_nvd_feed((FIXTURES / "feed_v2.json").read_bytes())
        assert len(entries) == 3
        first = entries[0]
        assert first.cve == "CVE-2021-41000"
        assert first.cwe_texts == ("CWE-89",)
        assert len(first.cvss_entries) == 2
        assert ("3.1", "CRITICAL", 9.8) in first.cvss_entries
        assert ("2.0", "HIGH", 7.5) in first.cvss_entries
        assert first.description.startswith("SQL injection")

    def test_missing_cwe_preserved_as_empty(self):
        entries = parse_nvd_feed((FIXTURES / "feed_v2.json").read_bytes())
        assert entries[1].cwe_texts == ()

    def test_legacy_shape(self):
        entries = parse_nvd_feed((FIXTURES / "feed_legacy.json").read_bytes())
        assert entries[0].cve == "CVE-2020-5000"
        assert entries[0].cwe_texts == ("CWE-79",)
        assert ("3.1", "MEDIUM", 6.1) in entries[0].cvss_entries
        assert ("2.0", "MEDIUM", 4.3) in entries[0].cvss_entries

    def test_truncated_document(self):
        with pytest.raises(FeedSyntaxError):
            parse_nvd_feed(b'{"vulnerabilities": [')

    def test_unknown_shape(self):
        with pytest.raises(FeedSyntaxError):
            parse_nvd_feed(b'{"something": []}')


class TestCommitUrl:
    def test_parse(self):
        assert parse_commit_url(
            "https://github.com/acme/webapp/commit/a1b2c3d4e5f6"
        ) == ("acme", "webapp", "a1b2c3d4e5f6")

    def test_branch_url_rejected(self):
        with pytest.raises(NotACommitUrl):
            parse_commit_url("https://github.com/acme/webapp/tree/main")

    def test_first_commit_url(self):
        urls = [
            "https://example.com/advisory",
            "https://github.com/acme/webapp/commit/a1b2c3d4e5f6",
            "https://github.com/other/repo/commit/ffff00000000",
        ]
        assert first_commit_url(urls) == urls[1]
        assert first_commit_url(["https://example.com"]) is None


class TestRecordedClient:
    def test_fetch(self):
        client = RecordedCommitClient(FIXTURES / "commits")
        commit = fetch_commit(
            "https://github.com/acme/webapp/commit/a1b2c3d4e5f6", client
        )
        assert commit.date == date(2021, 10, 5)
        assert "src/auth.php" in commit.file_contents
        assert commit.issue_message == "SQL injection in login"

    def test_missing_fixture(self):
        client = RecordedCommitClient(FIXTURES / "commits")
        with pytest.raises(FetchError):
            fetch_commit("https://github.com/x/y/commit/abcdef123456", client)

    def test_batch_fetch_records_errors(self):
        client = RecordedCommitClient(FIXTURES / "commits")
        urls = [
            "https://github.com/acme/webapp/commit/a1b2c3d4e5f6",
            "https://github.com/x/y/commit/abcdef123456",
        ]
        results = fetch_commits(urls, client, max_workers=2)
        assert isinstance(results[urls[0]], CommitData)
        assert isinstance(results[urls[1]], FetchError)

    def test_rate_limit_retry_then_success(self):
        class Flaky:
            def __init__(self):
                self.calls = 0

            def fetch_commit(self, owner, repo, sha):
                self.calls += 1
                if self.calls <= 2:
                    raise RateLimited("slow down")
                return RecordedCommitClient(FIXTURES / "commits").fetch_commit(
                    "acme", "webapp", "a1b2c3d4e5f6"
                )

        flaky = Flaky()
        url = "https://github.com/acme/webapp/commit/a1b2c3d4e5f6"
        results = fetch_commits([url], flaky, max_workers=1, max_retries=3)
        assert isinstance(results[url], CommitData)
        assert flaky.calls == 3


class TestAssembleRecord:
    def _entry_and_commit(self):
        entries = parse_nvd_feed((FIXTURES / "feed_v2.json").read_bytes())
        client = RecordedCommitClient(FIXTURES / "commits")
        commit = fetch_commit(
            "https://github.com/acme/webapp/commit/a1b2c3d4e5f6", client
        )
        return entries[0], commit

    def test_buggy_lines_are_deleted_lines(self):
        entry, commit = self._entry_and_commit()
        record = assemble_record(entry, commit)
        assert [f.filename for f in record.files] == ["src/auth.php"]
        assert [n for n, _ in record.files[0].buggy_lines] == [4, 5]
        assert record.commit_date == date(2021, 10, 5)
        assert record.github_description == "SQL injection in login"
        assert len(record.hunks) == 1
        assert record.methods == ()

    def test_content_preserved_byte_for_byte(self):
        entry, commit = self._entry_and_commit()
        record = assemble_record(entry, commit)
        assert record.files[0].content == commit.file_contents["src/auth.php"]

    def test_unavailable_file_dropped(self):
        entry, commit = self._entry_and_commit()
        stripped = CommitData(
            url=commit.url,
            date=commit.date,
            diff_text=commit.diff_text,
            file_contents={},
            unavailable_files=("src/auth.php",),
        )
        record = assemble_record(entry, stripped)
        assert record.files == ()
        assert record.hunks == ()


class TestSplitDataset:
    def test_even_split(self):
        records = list(range(6032))
        evaluation, finetune = split_dataset(records, 0.5, seed=7)
        assert len(evaluation) == 3016
        assert len(finetune) == 3016
        assert sorted(evaluation + finetune) == records
        assert not set(evaluation) & set(finetune)

    def test_deterministic(self):
        records = list(range(10))
        assert split_dataset(records, 0.5, seed=3) == split_dataset(records, 0.5, seed=3)

    def test_floor_rule(self):
        evaluation, finetune = split_dataset(list(range(10)), 0.3, seed=1)
        assert (len(evaluation), len(finetune)) == (3, 7)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            split_dataset([1], 1.0, seed=0)


class TestSampleEvaluation:
    def test_sample_size(self):
        sample = sample_evaluation(list(range(3016)), 500, seed=11)
        assert len(sample) == 500
        assert len(set(sample)) == 500

    def test_all_records(self):
        assert sorted(sample_evaluation([5, 4, 3, 2, 1], 5, seed=0)) == [1, 2, 3, 4, 5]

    def test_too_large(self):
        with pytest.raises(SampleTooLarge):
            sample_evaluation([1, 2, 3, 4, 5], 6, seed=0)

    def test_deterministic(self):
        a = sample_evaluation(list(range(100)), 10, seed=42)
        assert a == sample_evaluation(list(range(100)), 10, seed=42)


class TestCve2Cwe:
    def test_load(self):
        store = load_cve2cwe(FIXTURES / "cve2cwe.json")
        assert store["CVE-2021-41000"].cwes == ("CWE-89",)
        assert ("3.1", "CRITICAL", 9.8) in store["CVE-2021-41000"].severities

    def test_from_feed(self):
        entries = parse_nvd_feed((FIXTURES / "feed_v2.json").read_bytes())
        store = cve2cwe_from_feed(entries)
        assert store["CVE-2021-41000"].cwes == ("CWE-89",)


class TestDatasetStore:
    def test_round_trip_with_hash(self, tmp_path):
        record = make_record()
        store = DatasetStore(tmp_path / "ds")
        store.write(
            {"evaluation": [record]},
            {record.cve: {"cwes": ["CWE-89"], "label": "CRITICAL", "score": 9.8, "version": "3.1"}},
            [],
            seed=9,
            eval_fraction=0.5,
        )
        manifest = store.manifest()
        assert manifest["seed"] == 9
        entry = manifest["records"][record.cve]
        assert entry["split"] == "evaluation"
        loaded = store.load_record(record.cve)
        assert record_to_json(loaded) == record_to_json(record)
        body = (store.root / entry["path"]).read_bytes()
        import hashlib

        assert hashlib.sha256(body).hexdigest() == entry["sha256"]
