"""Provider-driven inference, output formatting, and raw-result persistence.

The CWE and severity inferences for a record are issued as independent
calls with no shared conversational state. Every provider string either
formats into a valid outcome or raises :class:`FormatViolation`; violations
are recorded on the persisted result and count as incorrect downstream,
never as crashes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Protocol

import httpx

from .model import (
    CweId,
    GroundTruth,
    InferenceOutcome,
    MalformedCweId,
    PromptVariant,
    SCORE_DECLINED,
    ScoreOutOfRange,
    SeverityLabel,
    TaskKind,
    ground_truth_from_json,
    ground_truth_to_json,
    parse_cwe_id,
    render_cwe_set,
    score_to_json,
    validate_score,
)
from .prompts import PromptPair

logger = logging.getLogger(__name__)

API_TOKEN_ENV = "TRIAGE_API_TOKEN"

#: Default decline outputs, mirroring the clauses in the system prompts.
DECLINE_CWE_TEXT = '{"exact": [], "top5": []}'
DECLINE_SEVERITY_TEXT = '{"label": null, "score": -1}'


class ProviderError(RuntimeError):
    """Raised when the provider fails after all retries."""


class TransientProviderError(ProviderError):
    """Retryable provider failure (rate limit, 5xx, connection reset)."""


class FormatViolation(ValueError):
    """Raised when a provider answer does not fit the output template."""


class IoError(OSError):
    """Raised when a raw result cannot be persisted."""


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    concurrency: int = 1
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")


class Provider(Protocol):
    def complete(self, pair: PromptPair) -> str: ...


class MockProvider:
    """Deterministic offline provider scripted per (cve, task).

    ``fixtures`` maps cve -> {"cwe": text, "severity": text}; unknown keys
    return the default decline output for the task.
    """

    def __init__(self, fixtures: Mapping[str, Mapping[str, str]] | None = None) -> None:
        self._fixtures = dict(fixtures or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "MockProvider":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, pair: PromptPair) -> str:
        scripted = self._fixtures.get(pair.cve, {}).get(pair.task.value)
        if scripted is not None:
            return scripted
        return DECLINE_CWE_TEXT if pair.task is TaskKind.CWE else DECLINE_SEVERITY_TEXT


class RemoteProvider:
    """Chat-style message API client (system/user roles).

    Credentials come from the ``TRIAGE_API_TOKEN`` environment variable.
    """

    def __init__(self, config: ProviderConfig, token: str | None = None) -> None:
        self._config = config
        self._token = token or os.environ.get(API_TOKEN_ENV)
        headers = {"Content-Type": "application/json"}
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        self._client = httpx.Client(
            base_url=config.endpoint, headers=headers, timeout=config.timeout
        )

    def close(self) -> None:
        self._client.close()

    def complete(self, pair: PromptPair) -> str:
        payload = {
            "model": self._config.model,
            "temperature": self._config.temperature,
            "messages": [
                {"role": "system", "content": pair.system_text},
                {"role": "user", "content": pair.user_text},
            ],
        }
        try:
            response = self._client.post("/chat/completions", json=payload)
        except httpx.TimeoutException as exc:
            raise TimeoutError(f"provider timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise TransientProviderError(f"provider request failed: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientProviderError(f"provider HTTP {response.status_code}")
        if response.status_code >= 400:
            raise ProviderError(f"provider HTTP {response.status_code}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc


def infer(pair: PromptPair, provider: Provider, config: ProviderConfig | None = None) -> str:
    """One completion with exponential backoff on transient failures."""
    config = config or ProviderConfig()
    last: Exception | None = None
    for attempt in range(config.max_retries + 1):
        started = time.monotonic()
        try:
            text = provider.complete(pair)
            logger.debug(
                "%s/%s/%s answered in %.3fs",
                pair.cve,
                pair.variant.value,
                pair.task.value,
                time.monotonic() - started,
            )
            return text
        except TransientProviderError as exc:
            last = exc
            if attempt < config.max_retries:
                time.sleep(config.backoff_base * (2.0**attempt))
        except TimeoutError:
            raise
    raise ProviderError(f"provider failed after {config.max_retries + 1} attempts: {last}")


# ---------------------------------------------------------------------------
# Output formatting


_CODE_FENCE = re.compile(r"^```[\w-]*\s*$", re.MULTILINE)


def _json_payload(text: str) -> Any:
    """Parse the answer as JSON, tolerating code fences and leading prose."""
    candidate = _CODE_FENCE.sub("", text).strip()
    try:
        return json.loads(candidate)
    except (json.JSONDecodeError, RecursionError):
        pass
    start = candidate.find("{")
    end = candidate.rfind("}")
    if start == -1 or end <= start:
        raise FormatViolation("no JSON object in the answer")
    try:
        return json.loads(candidate[start : end + 1])
    except (json.JSONDecodeError, RecursionError) as exc:
        raise FormatViolation(f"answer is not valid JSON: {exc}") from exc


def _cwe_list(value: Any, field_name: str) -> frozenset[CweId]:
    if not isinstance(value, list):
        raise FormatViolation(f"{field_name!r} must be a list")
    ids = set()
    for item in value:
        if isinstance(item, bool):
            raise FormatViolation(f"{field_name!r} contains a non-identifier")
        if isinstance(item, int):
            item = str(item)
        if not isinstance(item, str):
            raise FormatViolation(f"{field_name!r} contains a non-identifier")
        try:
            ids.add(parse_cwe_id(item))
        except MalformedCweId as exc:
            raise FormatViolation(str(exc)) from exc
    return frozenset(ids)


def format_cwe_output(text: str) -> tuple[frozenset[CweId], frozenset[CweId]]:
    """Parse a CWE answer into (exact, top) sets, enforcing exact ⊆ top, |top| ≤ 5."""
    doc = _json_payload(text)
    if not isinstance(doc, dict) or "exact" not in doc or "top5" not in doc:
        raise FormatViolation('answer must carry "exact" and "top5" lists')
    exact = _cwe_list(doc["exact"], "exact")
    top = _cwe_list(doc["top5"], "top5")
    if not exact <= top:
        raise FormatViolation("exact CWEs are not a subset of top candidates")
    if len(top) > 5:
        raise FormatViolation(f"{len(top)} top candidates exceed the limit of 5")
    return exact, top


def format_severity_output(text: str) -> tuple[SeverityLabel | None, float]:
    """Parse a severity answer into (label, score).

    The score is accepted as a number or numeric string; the label must be
    one of the four tokens (case-sensitive) or null. (null, -1) is the
    declared decline pair.
    """
    doc = _json_payload(text)
    if not isinstance(doc, dict) or "label" not in doc or "score" not in doc:
        raise FormatViolation('answer must carry "label" and "score"')
    raw_label = doc["label"]
    if raw_label is None:
        label = None
    elif isinstance(raw_label, str) and raw_label in SeverityLabel.__members__:
        label = SeverityLabel[raw_label]
    else:
        raise FormatViolation(f"unknown severity label {raw_label!r}")
    raw_score = doc["score"]
    if isinstance(raw_score, str):
        try:
            raw_score = float(raw_score.strip())
        except ValueError as exc:
            raise FormatViolation(f"non-numeric score {doc['score']!r}") from exc
    if isinstance(raw_score, bool) or not isinstance(raw_score, (int, float)):
        raise FormatViolation(f"non-numeric score {doc['score']!r}")
    try:
        score = validate_score(raw_score)
    except ScoreOutOfRange as exc:
        raise FormatViolation(str(exc)) from exc
    return label, score


# ---------------------------------------------------------------------------
# Raw results


@dataclass(frozen=True)
class RawResult:
    """Everything persisted for one (cve, variant): inputs, outputs, parse."""

    cve: str
    variant: PromptVariant
    cwe_system: str
    cwe_user: str
    severity_system: str
    severity_user: str
    cwe_raw: str
    severity_raw: str
    outcome: InferenceOutcome
    ground_truth: GroundTruth
    nvd_description: str
    errors: tuple[str, ...] = ()


def run_record_inference(
    pairs: Mapping[TaskKind, PromptPair],
    ground_truth: GroundTruth,
    nvd_description: str,
    provider: Provider,
    config: ProviderConfig | None = None,
) -> RawResult:
    """Run both tasks for one record/variant and format the answers.

    Provider failures and format violations become ``errors`` entries
    (prefixed with the task name); the result is persisted either way and
    the failed task keeps its decline values.
    """
    cwe_pair = pairs[TaskKind.CWE]
    severity_pair = pairs[TaskKind.SEVERITY]
    errors: list[str] = []

    cwe_raw = ""
    exact: frozenset[CweId] = frozenset()
    top: frozenset[CweId] = frozenset()
    try:
        cwe_raw = infer(cwe_pair, provider, config)
    except (ProviderError, TimeoutError) as exc:
        errors.append(f"cwe: {exc}")
    if cwe_raw:
        try:
            exact, top = format_cwe_output(cwe_raw)
        except FormatViolation as exc:
            errors.append(f"cwe: format violation: {exc}")
            exact, top = frozenset(), frozenset()

    severity_raw = ""
    label: SeverityLabel | None = None
    score = SCORE_DECLINED
    try:
        severity_raw = infer(severity_pair, provider, config)
    except (ProviderError, TimeoutError) as exc:
        errors.append(f"severity: {exc}")
    if severity_raw:
        try:
            label, score = format_severity_output(severity_raw)
        except FormatViolation as exc:
            errors.append(f"severity: format violation: {exc}")
            label, score = None, SCORE_DECLINED

    outcome = InferenceOutcome(
        exact_cwes=exact,
        top_cwes=top,
        label=label,
        score=score,
        raw_text_cwe=cwe_raw,
        raw_text_severity=severity_raw,
    )
    return RawResult(
        cve=cwe_pair.cve,
        variant=cwe_pair.variant,
        cwe_system=cwe_pair.system_text,
        cwe_user=cwe_pair.user_text,
        severity_system=severity_pair.system_text,
        severity_user=severity_pair.user_text,
        cwe_raw=cwe_raw,
        severity_raw=severity_raw,
        outcome=outcome,
        ground_truth=ground_truth,
        nvd_description=nvd_description,
        errors=tuple(errors),
    )


def raw_result_to_json(raw: RawResult) -> dict[str, Any]:
    return {
        "cve": raw.cve,
        "variant": raw.variant.value,
        "task_inputs": {
            "cwe_system": raw.cwe_system,
            "cwe_user": raw.cwe_user,
            "severity_system": raw.severity_system,
            "severity_user": raw.severity_user,
        },
        "outputs": {"cwe_raw": raw.cwe_raw, "severity_raw": raw.severity_raw},
        "parsed": {
            "exact_cwes": render_cwe_set(raw.outcome.exact_cwes),
            "top_cwes": render_cwe_set(raw.outcome.top_cwes),
            "label": raw.outcome.label.value if raw.outcome.label else None,
            "score": score_to_json(raw.outcome.score),
        },
        "ground_truth": ground_truth_to_json(raw.ground_truth),
        "cvss_version": raw.ground_truth.version.value,
        "errors": list(raw.errors),
        "nvd_description": raw.nvd_description,
    }


def raw_result_from_json(doc: Mapping[str, Any]) -> RawResult:
    from .model import parse_cwe_set, parse_variant

    parsed = doc["parsed"]
    outcome = InferenceOutcome(
        exact_cwes=parse_cwe_set(parsed["exact_cwes"]),
        top_cwes=parse_cwe_set(parsed["top_cwes"]),
        label=SeverityLabel(parsed["label"]) if parsed["label"] else None,
        score=float(parsed["score"]),
        raw_text_cwe=doc["outputs"]["cwe_raw"],
        raw_text_severity=doc["outputs"]["severity_raw"],
    )
    inputs = doc["task_inputs"]
    return RawResult(
        cve=doc["cve"],
        variant=parse_variant(doc["variant"]),
        cwe_system=inputs["cwe_system"],
        cwe_user=inputs["cwe_user"],
        severity_system=inputs["severity_system"],
        severity_user=inputs["severity_user"],
        cwe_raw=doc["outputs"]["cwe_raw"],
        severity_raw=doc["outputs"]["severity_raw"],
        outcome=outcome,
        ground_truth=ground_truth_from_json(doc["ground_truth"]),
        nvd_description=doc.get("nvd_description", ""),
        errors=tuple(doc.get("errors", [])),
    )


class ResultStore:
    """One JSON file per (cve, variant) plus a content-hash manifest.

    Writes are idempotent: identical content leaves the file and manifest
    untouched, so reruns produce byte-identical state.
    """

    MANIFEST = "manifest.json"

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self._manifest_path = self.root / self.MANIFEST

    @staticmethod
    def key(cve: str, variant: PromptVariant) -> str:
        return f"{cve}__{variant.value}"

    def manifest(self) -> dict[str, Any]:
        if not self._manifest_path.exists():
            return {}
        return json.loads(self._manifest_path.read_text(encoding="utf-8"))

    def has(self, cve: str, variant: PromptVariant) -> bool:
        return self.key(cve, variant) in self.manifest()

    def write(self, raw: RawResult) -> Path:
        try:
            raw_dir = self.root / "raw"
            raw_dir.mkdir(parents=True, exist_ok=True)
            body = json.dumps(
                raw_result_to_json(raw), indent=2, sort_keys=True, ensure_ascii=False
            )
            digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
            key = self.key(raw.cve, raw.variant)
            path = raw_dir / f"{key}.json"
            manifest = self.manifest()
            existing = manifest.get(key)
            if existing is None or existing["sha256"] != digest or not path.exists():
                path.write_text(body, encoding="utf-8")
                manifest[key] = {"path": str(path.relative_to(self.root)), "sha256": digest}
                self._manifest_path.write_text(
                    json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
                )
            return path
        except OSError as exc:
            raise IoError(f"cannot persist raw result: {exc}") from exc

    def load_all(self) -> list[RawResult]:
        manifest = self.manifest()
        results = []
        for key in sorted(manifest):
            path = self.root / manifest[key]["path"]
            results.append(
                raw_result_from_json(json.loads(path.read_text(encoding="utf-8")))
            )
        return results


def write_raw_result(raw: RawResult, results_dir: str | Path) -> Path:
    """Persist one raw result under ``results_dir`` (manifest maintained)."""
    return ResultStore(results_dir).write(raw)


# ---------------------------------------------------------------------------
# Scripted mock fixtures


def echo_fixture(gt: GroundTruth) -> dict[str, str]:
    """Scripted answers that reproduce the ground truth exactly."""
    ids = render_cwe_set(gt.cwes)
    return {
        "cwe": json.dumps({"exact": ids, "top5": ids}),
        "severity": json.dumps(
            {"label": gt.label.value, "score": score_to_json(gt.score)}
        ),
    }


def perturbed_fixture(gt: GroundTruth) -> dict[str, str]:
    """Scripted answers that are wrong on every criterion.

    One CWE id is replaced with an id outside the ground truth; the label
    shifts to the next one in the version's vocabulary; the score moves by
    2.0 (clamped direction), which exceeds every default distance.
    """
    from .model import legal_labels

    ids = sorted(gt.cwes)
    replacement = ids[0].id + 1
    taken = {c.id for c in gt.cwes}
    while replacement in taken:
        replacement += 1
    wrong_ids = [str(CweId(replacement))] + [str(c) for c in ids[1:]]

    labels = legal_labels(gt.version)
    wrong_label = labels[(labels.index(gt.label) + 1) % len(labels)]
    wrong_score = gt.score - 2.0 if gt.score > 5.0 else gt.score + 2.0
    return {
        "cwe": json.dumps({"exact": wrong_ids, "top5": wrong_ids}),
        "severity": json.dumps(
            {"label": wrong_label.value, "score": score_to_json(validate_score(wrong_score))}
        ),
    }


def build_mock_fixtures(
    ground_truths: Mapping[str, GroundTruth], perturb_cves: set[str] | None = None
) -> dict[str, dict[str, str]]:
    """Echo fixtures for every CVE, perturbed for the named subset."""
    perturb = perturb_cves or set()
    return {
        cve: (perturbed_fixture(gt) if cve in perturb else echo_fixture(gt))
        for cve, gt in ground_truths.items()
    }
