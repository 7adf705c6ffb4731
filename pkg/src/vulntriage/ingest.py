"""Dataset creation: NVD feed parsing, commit scraping, record assembly.

Builds :class:`~vulntriage.model.EnrichedRecord` objects from an NVD-style
JSON feed plus commit data fetched from a code-hosting service, then splits
and stores the dataset. Commit fetching sits behind a small client
interface with a recorded-fixture implementation so the whole pipeline is
testable offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx

from .diffs import parse_unified_diff
from .model import BuggyFile, EnrichedRecord, Hunk, record_from_json, record_to_json

logger = logging.getLogger(__name__)

COMMIT_TOKEN_ENV = "TRIAGE_COMMIT_TOKEN"


class FeedSyntaxError(ValueError):
    """Raised for feed documents that are not valid JSON in a known shape."""


class FetchError(RuntimeError):
    """Raised when commit data cannot be retrieved."""


class RateLimited(FetchError):
    """Retryable: the commit host asked us to back off."""


class NotACommitUrl(ValueError):
    """Raised for URLs that do not name a single commit on a supported host."""


class SampleTooLarge(ValueError):
    """Raised when a sample of n records is requested from fewer records."""


# ---------------------------------------------------------------------------
# Feed parsing


@dataclass(frozen=True)
class RawCveEntry:
    """One CVE item from the feed, before enrichment and filtering."""

    cve: str
    description: str
    reference_urls: tuple[str, ...] = ()
    cwe_texts: tuple[str, ...] = ()
    cvss_entries: tuple[tuple[str | None, str | None, float | None], ...] = ()


def parse_nvd_feed(data: bytes | str) -> list[RawCveEntry]:
    """Parse an NVD JSON feed (API 2.0 or legacy 1.1 shape) into entries.

    Missing fields become empty collections, never failures; a malformed
    document raises :class:`FeedSyntaxError`.
    """
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise FeedSyntaxError(f"feed is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FeedSyntaxError("feed document is not a JSON object")
    if "vulnerabilities" in doc:
        items = doc.get("vulnerabilities") or []
        return [_entry_from_api2(item) for item in items if isinstance(item, dict)]
    if "CVE_Items" in doc:
        items = doc.get("CVE_Items") or []
        return [_entry_from_legacy(item) for item in items if isinstance(item, dict)]
    raise FeedSyntaxError("unrecognized feed shape: no vulnerabilities/CVE_Items key")


def _first_english(descriptions: Iterable[Mapping[str, Any]]) -> str:
    rows = [d for d in descriptions if isinstance(d, Mapping)]
    for row in rows:
        if row.get("lang") == "en":
            return str(row.get("value", ""))
    return str(rows[0].get("value", "")) if rows else ""


def _entry_from_api2(item: Mapping[str, Any]) -> RawCveEntry:
    cve = item.get("cve", {}) if isinstance(item.get("cve"), Mapping) else {}
    cwes = []
    for weakness in cve.get("weaknesses", []) or []:
        for row in weakness.get("description", []) or []:
            value = row.get("value")
            if value:
                cwes.append(str(value))
    cvss = []
    metrics = cve.get("metrics", {}) or {}
    for key, rows in metrics.items():
        for row in rows or []:
            data = row.get("cvssData", {}) or {}
            version = data.get("version") or str(key)
            label = data.get("baseSeverity") or row.get("baseSeverity")
            score = data.get("baseScore")
            cvss.append(
                (
                    str(version) if version else None,
                    str(label) if label else None,
                    float(score) if score is not None else None,
                )
            )
    return RawCveEntry(
        cve=str(cve.get("id", "")),
        description=_first_english(cve.get("descriptions", []) or []),
        reference_urls=tuple(
            str(r.get("url")) for r in cve.get("references", []) or [] if r.get("url")
        ),
        cwe_texts=tuple(cwes),
        cvss_entries=tuple(cvss),
    )


def _entry_from_legacy(item: Mapping[str, Any]) -> RawCveEntry:
    cve = item.get("cve", {}) or {}
    meta = cve.get("CVE_data_meta", {}) or {}
    description = _first_english(
        (cve.get("description", {}) or {}).get("description_data", []) or []
    )
    urls = [
        str(r.get("url"))
        for r in (cve.get("references", {}) or {}).get("reference_data", []) or []
        if r.get("url")
    ]
    cwes = []
    for ptype in (cve.get("problemtype", {}) or {}).get("problemtype_data", []) or []:
        for row in ptype.get("description", []) or []:
            if row.get("value"):
                cwes.append(str(row["value"]))
    cvss = []
    impact = item.get("impact", {}) or {}
    v3 = (impact.get("baseMetricV3", {}) or {}).get("cvssV3", {}) or {}
    if v3:
        cvss.append(
            (
                str(v3.get("version") or "3.1"),
                str(v3["baseSeverity"]) if v3.get("baseSeverity") else None,
                float(v3["baseScore"]) if v3.get("baseScore") is not None else None,
            )
        )
    v2_metric = impact.get("baseMetricV2", {}) or {}
    v2 = v2_metric.get("cvssV2", {}) or {}
    if v2 or v2_metric:
        cvss.append(
            (
                str(v2.get("version") or "2.0"),
                str(v2_metric["severity"]) if v2_metric.get("severity") else None,
                float(v2["baseScore"]) if v2.get("baseScore") is not None else None,
            )
        )
    return RawCveEntry(
        cve=str(meta.get("ID", "")),
        description=description,
        reference_urls=tuple(urls),
        cwe_texts=tuple(cwes),
        cvss_entries=tuple(cvss),
    )


# ---------------------------------------------------------------------------
# CVE2CWE ground-truth store


@dataclass(frozen=True)
class Cve2CweEntry:
    """Ground-truth CWEs and per-version severities for one CVE."""

    cve: str
    cwes: tuple[str, ...]
    severities: tuple[tuple[str | None, str | None, float | None], ...]


def load_cve2cwe(path: str | Path) -> dict[str, Cve2CweEntry]:
    """Load the CVE2CWE dataset: a JSON map keyed by CVE id."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    store: dict[str, Cve2CweEntry] = {}
    for cve, row in doc.items():
        severities = tuple(
            (
                s.get("version"),
                s.get("label"),
                float(s["score"]) if s.get("score") is not None else None,
            )
            for s in row.get("severities", [])
        )
        store[cve] = Cve2CweEntry(
            cve=cve, cwes=tuple(row.get("cwes", [])), severities=severities
        )
    return store


def cve2cwe_from_feed(entries: Iterable[RawCveEntry]) -> dict[str, Cve2CweEntry]:
    """Derive a CVE2CWE store from parsed feed entries."""
    return {
        e.cve: Cve2CweEntry(cve=e.cve, cwes=e.cwe_texts, severities=e.cvss_entries)
        for e in entries
        if e.cve
    }


def dump_cve2cwe(store: Mapping[str, Cve2CweEntry], path: str | Path) -> None:
    doc = {
        cve: {
            "cwes": list(entry.cwes),
            "severities": [
                {"version": v, "label": l, "score": s} for v, l, s in entry.severities
            ],
        }
        for cve, entry in sorted(store.items())
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# Commit fetching


@dataclass(frozen=True)
class CommitData:
    """A commit's diff, pre-change file contents, and metadata."""

    url: str
    date: date
    diff_text: str
    file_contents: Mapping[str, str]
    unavailable_files: tuple[str, ...] = ()
    issue_message: str | None = None


class CommitHostClient(Protocol):
    def fetch_commit(self, owner: str, repo: str, sha: str) -> CommitData: ...


_COMMIT_URL = re.compile(
    r"^https?://github\.com/([^/\s]+)/([^/\s]+)/commit/([0-9a-fA-F]{6,40})/?(?:[#?].*)?$"
)


def parse_commit_url(url: str) -> tuple[str, str, str]:
    match = _COMMIT_URL.match(url.strip())
    if match is None:
        raise NotACommitUrl(f"not a commit URL on a supported host: {url!r}")
    return match.group(1), match.group(2), match.group(3)


def fetch_commit(url: str, client: CommitHostClient) -> CommitData:
    """Fetch the diff and pre-change contents for a single commit URL."""
    owner, repo, sha = parse_commit_url(url)
    return client.fetch_commit(owner, repo, sha)


def first_commit_url(urls: Iterable[str]) -> str | None:
    """The first reference URL that parses as a supported commit URL."""
    for url in urls:
        try:
            parse_commit_url(url)
        except NotACommitUrl:
            continue
        return url
    return None


class RecordedCommitClient:
    """Replays commits recorded as JSON files, for offline runs and tests.

    Fixture files live at ``<dir>/<owner>__<repo>__<sha>.json`` with keys
    ``date``, ``diff_text``, ``file_contents``, ``unavailable_files``,
    ``issue_message``.
    """

    def __init__(self, fixture_dir: str | Path) -> None:
        self._dir = Path(fixture_dir)

    def fetch_commit(self, owner: str, repo: str, sha: str) -> CommitData:
        path = self._dir / f"{owner}__{repo}__{sha}.json"
        if not path.exists():
            raise FetchError(f"no recorded commit at {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        return CommitData(
            url=f"https://github.com/{owner}/{repo}/commit/{sha}",
            date=date.fromisoformat(doc["date"]),
            diff_text=doc["diff_text"],
            file_contents=dict(doc.get("file_contents", {})),
            unavailable_files=tuple(doc.get("unavailable_files", [])),
            issue_message=doc.get("issue_message"),
        )


class GithubCommitClient:
    """GitHub REST client with disk caching and rate-limit signalling.

    Auth token comes from the ``TRIAGE_COMMIT_TOKEN`` environment variable.
    Every response is cached to ``cache_dir`` (when given) so reruns replay
    from disk.
    """

    def __init__(
        self,
        token: str | None = None,
        cache_dir: str | Path | None = None,
        base_url: str = "https://api.github.com",
        timeout: float = 30.0,
    ) -> None:
        self._token = token or os.environ.get(COMMIT_TOKEN_ENV)
        self._cache_dir = Path(cache_dir) if cache_dir else None
        headers = {"Accept": "application/vnd.github+json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        self._client = httpx.Client(base_url=base_url, headers=headers, timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def _get_json(self, path: str) -> Any:
        if self._cache_dir is not None:
            key = hashlib.sha256(path.encode("utf-8")).hexdigest()
            cached = self._cache_dir / f"{key}.json"
            if cached.exists():
                return json.loads(cached.read_text(encoding="utf-8"))
        try:
            response = self._client.get(path)
        except httpx.HTTPError as exc:
            raise FetchError(f"GET {path} failed: {exc}") from exc
        if response.status_code in (403, 429) and (
            response.headers.get("X-RateLimit-Remaining") == "0"
            or "Retry-After" in response.headers
        ):
            raise RateLimited(f"rate limited on {path}")
        if response.status_code >= 400:
            raise FetchError(f"GET {path} -> HTTP {response.status_code}")
        doc = response.json()
        if self._cache_dir is not None:
            self._cache_dir.mkdir(parents=True, exist_ok=True)
            cached.write_text(json.dumps(doc), encoding="utf-8")
        return doc

    def fetch_commit(self, owner: str, repo: str, sha: str) -> CommitData:
        commit = self._get_json(f"/repos/{owner}/{repo}/commits/{sha}")
        commit_info = commit.get("commit", {}) or {}
        date_text = (commit_info.get("committer") or {}).get("date") or (
            commit_info.get("author") or {}
        ).get("date")
        if not date_text:
            raise FetchError(f"{owner}/{repo}@{sha}: commit has no date")
        commit_date = datetime.fromisoformat(date_text.replace("Z", "+00:00")).date()
        parents = commit.get("parents") or []
        parent_sha = parents[0]["sha"] if parents else None

        diff_parts: list[str] = []
        contents: dict[str, str] = {}
        unavailable: list[str] = []
        for file_info in commit.get("files") or []:
            filename = file_info.get("filename", "")
            status = file_info.get("status", "modified")
            previous = file_info.get("previous_filename") or filename
            patch = file_info.get("patch")
            if patch is None:
                unavailable.append(filename)
                continue
            pre_path = "/dev/null" if status == "added" else f"a/{previous}"
            diff_parts.append(
                f"diff --git a/{previous} b/{filename}\n"
                f"--- {pre_path}\n+++ b/{filename}\n{patch}\n"
            )
            if status == "added" or parent_sha is None:
                continue
            try:
                blob = self._get_json(
                    f"/repos/{owner}/{repo}/contents/{previous}?ref={parent_sha}"
                )
                import base64

                contents[previous] = base64.b64decode(
                    blob.get("content", "")
                ).decode("utf-8", errors="replace")
            except FetchError:
                unavailable.append(previous)

        issue_message = self._issue_message(owner, repo, commit_info.get("message", ""))
        return CommitData(
            url=f"https://github.com/{owner}/{repo}/commit/{sha}",
            date=commit_date,
            diff_text="".join(diff_parts),
            file_contents=contents,
            unavailable_files=tuple(unavailable),
            issue_message=issue_message,
        )

    def _issue_message(self, owner: str, repo: str, message: str) -> str | None:
        match = re.search(r"#(\d+)", message)
        if match is None:
            return None
        try:
            issue = self._get_json(f"/repos/{owner}/{repo}/issues/{match.group(1)}")
        except FetchError:
            return None
        title = issue.get("title") or ""
        body = issue.get("body") or ""
        text = f"{title}\n\n{body}".strip()
        return text or None


def fetch_commits(
    urls: Sequence[str],
    client: CommitHostClient,
    max_workers: int = 4,
    min_interval: float = 0.0,
    max_retries: int = 3,
) -> dict[str, CommitData | Exception]:
    """Fetch many commits concurrently with per-host pacing and retries.

    Returns a map url -> CommitData or the final exception; the map is
    complete and deterministic regardless of completion order.
    """
    lock = threading.Lock()
    last_call = [0.0]

    def paced_fetch(url: str) -> CommitData | Exception:
        for attempt in range(max_retries + 1):
            if min_interval > 0:
                with lock:
                    wait = last_call[0] + min_interval - time.monotonic()
                    if wait > 0:
                        time.sleep(wait)
                    last_call[0] = time.monotonic()
            try:
                return fetch_commit(url, client)
            except RateLimited as exc:
                if attempt == max_retries:
                    return exc
                time.sleep(min(2.0**attempt, 30.0))
            except (FetchError, NotACommitUrl) as exc:
                return exc
        raise AssertionError("unreachable")

    results: dict[str, CommitData | Exception] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for url, outcome in zip(urls, pool.map(paced_fetch, urls)):
            results[url] = outcome
    return results


# ---------------------------------------------------------------------------
# Record assembly


def assemble_record(entry: RawCveEntry, commit: CommitData) -> EnrichedRecord:
    """Merge a feed entry and fetched commit into an enriched record.

    Files carry pre-change contents with the diff's deleted lines as buggy
    lines; hunks whose pre-change file is unavailable are dropped. Methods
    stay empty here and are filled by the extraction stage.
    """
    hunks = parse_unified_diff(commit.diff_text)
    order: list[str] = []
    by_file: dict[str, list[Hunk]] = {}
    for hunk in hunks:
        if hunk.filename not in by_file:
            order.append(hunk.filename)
            by_file[hunk.filename] = []
        by_file[hunk.filename].append(hunk)

    files: list[BuggyFile] = []
    kept_hunks: list[Hunk] = []
    for filename in order:
        content = commit.file_contents.get(filename)
        if content is None:
            logger.debug(
                "%s: no pre-change content for %s; hunks dropped", entry.cve, filename
            )
            continue
        deleted: list[tuple[int, str]] = []
        for hunk in by_file[filename]:
            deleted.extend(hunk.deleted_lines)
        deleted.sort(key=lambda pair: pair[0])
        files.append(BuggyFile(filename=filename, content=content, buggy_lines=deleted))
        kept_hunks.extend(by_file[filename])

    return EnrichedRecord(
        cve=entry.cve,
        description=entry.description,
        url=commit.url,
        commit_date=commit.date,
        github_description=commit.issue_message,
        files=tuple(files),
        hunks=tuple(kept_hunks),
        methods=(),
    )


# ---------------------------------------------------------------------------
# Splitting and sampling


def split_dataset(
    records: Sequence, eval_fraction: float, seed: int
) -> tuple[list, list]:
    """Deterministically partition records into (evaluation, finetune).

    The evaluation part gets ``floor(n * eval_fraction)`` records; both
    parts preserve the input order.
    """
    if not 0 < eval_fraction < 1:
        raise ValueError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    indexes = list(range(len(records)))
    random.Random(seed).shuffle(indexes)
    k = math.floor(len(records) * eval_fraction)
    chosen = set(indexes[:k])
    evaluation = [records[i] for i in range(len(records)) if i in chosen]
    finetune = [records[i] for i in range(len(records)) if i not in chosen]
    return evaluation, finetune


def sample_evaluation(records: Sequence, n: int, seed: int) -> list:
    """A deterministic uniform sample of n records, in input order."""
    if n > len(records):
        raise SampleTooLarge(f"cannot sample {n} from {len(records)} records")
    indexes = sorted(random.Random(seed).sample(range(len(records)), n))
    return [records[i] for i in indexes]


# ---------------------------------------------------------------------------
# Dataset store


def _canonical_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False)


class DatasetStore:
    """Content-addressed on-disk layout for enriched records.

    ``records/<hh>/<sha256>.json`` holds one record document each;
    ``manifest.json`` lists record ids, split assignment, and the seed;
    ``ground_truth.json`` and ``non_evaluated.json`` sit alongside.
    """

    MANIFEST = "manifest.json"
    GROUND_TRUTH = "ground_truth.json"
    NON_EVALUATED = "non_evaluated.json"

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def write(
        self,
        splits: Mapping[str, Sequence[EnrichedRecord]],
        ground_truth: Mapping[str, Mapping[str, Any]],
        non_evaluated: Sequence[Mapping[str, Any]],
        seed: int,
        eval_fraction: float,
    ) -> None:
        records_dir = self.root / "records"
        records_dir.mkdir(parents=True, exist_ok=True)
        manifest: dict[str, Any] = {
            "seed": seed,
            "eval_fraction": eval_fraction,
            "records": {},
        }
        for split, records in splits.items():
            for record in records:
                body = _canonical_json(record_to_json(record))
                digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
                rel = Path("records") / digest[:2] / f"{digest}.json"
                path = self.root / rel
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(body, encoding="utf-8")
                manifest["records"][record.cve] = {
                    "path": str(rel),
                    "sha256": digest,
                    "split": split,
                }
        (self.root / self.MANIFEST).write_text(
            _canonical_json(manifest), encoding="utf-8"
        )
        (self.root / self.GROUND_TRUTH).write_text(
            _canonical_json(dict(ground_truth)), encoding="utf-8"
        )
        (self.root / self.NON_EVALUATED).write_text(
            _canonical_json(list(non_evaluated)), encoding="utf-8"
        )

    def manifest(self) -> dict[str, Any]:
        return json.loads((self.root / self.MANIFEST).read_text(encoding="utf-8"))

    def ground_truth_docs(self) -> dict[str, Any]:
        return json.loads((self.root / self.GROUND_TRUTH).read_text(encoding="utf-8"))

    def load_record(self, cve: str) -> EnrichedRecord:
        entry = self.manifest()["records"][cve]
        doc = json.loads((self.root / entry["path"]).read_text(encoding="utf-8"))
        return record_from_json(doc)

    def load_records(self, split: str | None = None) -> list[EnrichedRecord]:
        manifest = self.manifest()
        records = []
        for cve in sorted(manifest["records"]):
            entry = manifest["records"][cve]
            if split is not None and entry["split"] != split:
                continue
            doc = json.loads((self.root / entry["path"]).read_text(encoding="utf-8"))
            records.append(record_from_json(doc))
        return records
