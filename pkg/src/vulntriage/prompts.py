"""Prompt construction, token budgeting, and fine-tuning export.

System and user prompts are rendered from plain-text template files with
``{{placeholder}}`` substitution, so the wording lives in versioned files
rather than code. Fine-tuning examples serialize the ground truth in the
exact output form the response formatter parses back.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import cvss
from .diffs import render_hunk
from .model import (
    CvssVersion,
    EnrichedRecord,
    GroundTruth,
    PromptVariant,
    TaskKind,
    render_cwe_set,
    score_to_json,
)

logger = logging.getLogger(__name__)

TokenEstimator = Callable[[str], int]


class MissingGranularity(ValueError):
    """Raised when a variant's code payload is empty for a record."""


@dataclass(frozen=True)
class PromptPair:
    """The system/user message pair for one task on one record/variant."""

    system_text: str
    user_text: str
    task: TaskKind
    variant: PromptVariant
    cve: str


@dataclass(frozen=True)
class FineTuneExample:
    system_text: str
    user_text: str
    assistant_text: str


@lru_cache(maxsize=None)
def _template(name: str) -> str:
    return (resources.files("vulntriage") / "templates" / name).read_text(
        encoding="utf-8"
    )


@lru_cache(maxsize=None)
def _keyed_fragments(name: str) -> dict[str, str]:
    fragments: dict[str, str] = {}
    for line in _template(name).splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, text = line.split(":", 1)
        fragments[key.strip()] = text.strip()
    return fragments


def _render(template: str, values: Mapping[str, str]) -> str:
    text = template
    for key, value in values.items():
        text = text.replace("{{" + key + "}}", value)
    return text


def _inputs_clause(variant: PromptVariant) -> str:
    fragments = _keyed_fragments("input_fragments.txt")
    parts = []
    if variant.includes_description:
        parts.append(fragments["DESCRIPTION"])
    granularity = variant.granularity
    if granularity is not None:
        parts.append(fragments[granularity.upper()])
    if len(parts) == 1:
        body = parts[0]
    else:
        body = parts[0] + ", followed by " + parts[1]
    return f"The user message provides {body}."


def build_cvss_guide(
    version: CvssVersion,
    schemes: Mapping[CvssVersion, cvss.CvssScheme] | None = None,
) -> str:
    """The version-specific severity guide paragraph for system prompts."""
    scheme = (schemes or cvss.DEFAULT_SCHEMES)[version]
    examples = _keyed_fragments("cvss_label_examples.txt")
    lines = []
    for label, lo, hi in scheme.bands:
        example = examples.get(label.value, "")
        lines.append(f"- {label.value} ({lo:.1f}-{hi:.1f}): {example}")
    return _render(
        _template("cvss_guide.txt"),
        {"version": version.value, "label_lines": "\n".join(lines)},
    ).strip()


def build_system_prompt(
    task: TaskKind,
    variant: PromptVariant,
    version: CvssVersion | None = None,
    schemes: Mapping[CvssVersion, cvss.CvssScheme] | None = None,
) -> str:
    """Render the system prompt for a task and variant.

    Severity prompts carry the version-specific CVSS guide and the default
    (decline) output clause, so ``version`` is required for them.
    """
    if task is TaskKind.CWE:
        return _render(
            _template("system_cwe.txt"), {"inputs": _inputs_clause(variant)}
        ).strip()
    if version is None:
        version = CvssVersion.V3_1
    scheme = (schemes or cvss.DEFAULT_SCHEMES)[version]
    labels = ", ".join(f'"{label.value}"' for label in scheme.labels)
    return _render(
        _template("system_severity.txt"),
        {
            "inputs": _inputs_clause(variant),
            "labels": labels,
            "version": version.value,
            "cvss_guide": build_cvss_guide(version, schemes),
        },
    ).strip()


def _tag_block(tag: str, filename: str, payload: str) -> str:
    return f'<{tag} filename="{filename}">\n{payload}\n</{tag}>'


def _code_blocks(record: EnrichedRecord, variant: PromptVariant) -> str:
    granularity = variant.granularity
    if granularity is None:
        return ""
    if granularity == "files":
        blocks = [_tag_block("File", f.filename, f.content) for f in record.files]
    elif granularity == "methods":
        blocks = [
            _tag_block("Method", m.filename, m.body) for m in record.methods
        ]
    else:
        blocks = [
            _tag_block("Hunk", h.filename, render_hunk(h)) for h in record.hunks
        ]
    if not blocks:
        raise MissingGranularity(
            f"{record.cve}: record has no {granularity} for variant {variant.value}"
        )
    return "\n".join(blocks)


def build_user_prompt(record: EnrichedRecord, variant: PromptVariant) -> str:
    """Render the user prompt: description and/or tagged code payloads."""
    code = _code_blocks(record, variant)
    if variant.includes_description:
        description_block = f"Vulnerability description:\n{record.description}\n"
        if code:
            description_block += "\n"
    else:
        description_block = ""
    return _render(
        _template("user.txt"),
        {"description_block": description_block, "code_blocks": code},
    ).strip()


def prompt_pairs(
    record: EnrichedRecord,
    variant: PromptVariant,
    version: CvssVersion,
    schemes: Mapping[CvssVersion, cvss.CvssScheme] | None = None,
) -> dict[TaskKind, PromptPair]:
    """Both tasks' prompt pairs for a record/variant, built independently."""
    user_text = build_user_prompt(record, variant)
    return {
        task: PromptPair(
            system_text=build_system_prompt(task, variant, version, schemes),
            user_text=user_text,
            task=task,
            variant=variant,
            cve=record.cve,
        )
        for task in TaskKind
    }


# ---------------------------------------------------------------------------
# Token estimation


def default_token_estimator(text: str) -> int:
    """ceil(utf-8 bytes / 4): a cheap, monotone stand-in for the provider's
    tokenizer; substitute the exact one via config when accuracy matters."""
    return math.ceil(len(text.encode("utf-8")) / 4)


def estimate_tokens(text: str, estimator: TokenEstimator | None = None) -> int:
    return (estimator or default_token_estimator)(text)


def prompt_tokens(
    record: EnrichedRecord,
    variant: PromptVariant,
    version: CvssVersion,
    estimator: TokenEstimator | None = None,
    schemes: Mapping[CvssVersion, cvss.CvssScheme] | None = None,
) -> int:
    """The larger of the two tasks' total prompt sizes for this variant."""
    user_text = build_user_prompt(record, variant)
    user_tokens = estimate_tokens(user_text, estimator)
    return max(
        estimate_tokens(build_system_prompt(task, variant, version, schemes), estimator)
        + user_tokens
        for task in TaskKind
    )


# ---------------------------------------------------------------------------
# Fine-tuning export


def assistant_text(task: TaskKind, gt: GroundTruth) -> str:
    """Serialize ground truth in the exact output template the formatter
    parses. CWE exports repeat the exact set as top5 (no separate top
    candidates are used for tuning)."""
    if task is TaskKind.CWE:
        ids = render_cwe_set(gt.cwes)
        return json.dumps({"exact": ids, "top5": ids})
    return json.dumps({"label": gt.label.value, "score": score_to_json(gt.score)})


#: Provider-default tuning settings, recorded in export metadata only.
FINETUNE_DEFAULTS = {"epochs": 3, "batch_size": 11, "lr_multiplier": 2}


@dataclass(frozen=True)
class ExportResult:
    train_path: Path
    test_path: Path
    metadata_path: Path
    examples_pre_filter: int
    examples_written: int
    train_records: int
    test_records: int
    train_examples: int
    test_examples: int
    token_filtered: int
    missing_granularity: int


def export_finetune_dataset(
    items: Sequence[tuple[EnrichedRecord, GroundTruth]],
    task: TaskKind,
    out_dir: str | Path,
    variants: Iterable[PromptVariant] | None = None,
    train_fraction: float = 0.75,
    seed: int = 0,
    token_limit: int | None = None,
    estimator: TokenEstimator | None = None,
    schemes: Mapping[CvssVersion, cvss.CvssScheme] | None = None,
) -> ExportResult:
    """Write train/test JSONL files of fine-tuning examples.

    One example per (record, variant); the token filter drops oversized
    examples individually, while the train/test split is record-level so all
    of a record's variants land on the same side.
    """
    variant_list = tuple(variants) if variants is not None else tuple(PromptVariant)
    ordered = sorted(items, key=lambda pair: pair[0].cve)
    indexes = list(range(len(ordered)))
    random.Random(seed).shuffle(indexes)
    train_count = math.floor(len(ordered) * train_fraction)
    train_cves = {ordered[i][0].cve for i in indexes[:train_count]}

    examples: dict[str, list[FineTuneExample]] = {"train": [], "test": []}
    pre_filter = 0
    token_filtered = 0
    missing = 0
    for record, gt in ordered:
        side = "train" if record.cve in train_cves else "test"
        for variant in variant_list:
            try:
                user_text = build_user_prompt(record, variant)
            except MissingGranularity:
                missing += 1
                continue
            pre_filter += 1
            system_text = build_system_prompt(task, variant, gt.version, schemes)
            answer = assistant_text(task, gt)
            if token_limit is not None:
                total = sum(
                    estimate_tokens(t, estimator)
                    for t in (system_text, user_text, answer)
                )
                if total > token_limit:
                    token_filtered += 1
                    continue
            examples[side].append(FineTuneExample(system_text, user_text, answer))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_path = out / f"finetune_{task.value}_train.jsonl"
    test_path = out / f"finetune_{task.value}_test.jsonl"
    for path, side in ((train_path, "train"), (test_path, "test")):
        with path.open("w", encoding="utf-8") as fh:
            for example in examples[side]:
                row = {
                    "system": example.system_text,
                    "user": example.user_text,
                    "assistant": example.assistant_text,
                }
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    metadata = {
        "task": task.value,
        "variants": [v.value for v in variant_list],
        "records_total": len(ordered),
        "train_records": train_count,
        "test_records": len(ordered) - train_count,
        "examples_pre_filter": pre_filter,
        "examples_written": len(examples["train"]) + len(examples["test"]),
        "train_examples": len(examples["train"]),
        "test_examples": len(examples["test"]),
        "token_filtered": token_filtered,
        "missing_granularity": missing,
        "train_fraction": train_fraction,
        "seed": seed,
        "token_limit": token_limit,
        "provider_defaults": FINETUNE_DEFAULTS,
    }
    metadata_path = out / f"finetune_{task.value}_metadata.json"
    metadata_path.write_text(
        json.dumps(metadata, indent=2, sort_keys=True), encoding="utf-8"
    )
    return ExportResult(
        train_path=train_path,
        test_path=test_path,
        metadata_path=metadata_path,
        examples_pre_filter=pre_filter,
        examples_written=metadata["examples_written"],
        train_records=train_count,
        test_records=len(ordered) - train_count,
        train_examples=len(examples["train"]),
        test_examples=len(examples["test"]),
        token_filtered=token_filtered,
        missing_granularity=missing,
    )
