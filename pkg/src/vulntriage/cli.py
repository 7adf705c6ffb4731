"""Multi-stage command-line pipeline with resumable intermediates.

Commands: ``build-dataset`` (ingest + extract + filter + store),
``export-finetune`` (tuning JSONL files), ``infer`` (two inferences per
record/variant, resumable), ``evaluate`` (verdicts and report bundle from
persisted results only), and ``report`` (re-render tables from a summary).

Exit codes: 0 success, 1 fatal input error, 2 partial failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .config import ConfigError, PipelineConfig, build_pipeline_config
from .evaluate import (
    CriterionId,
    all_accuracies,
    verify_accuracy_bounds,
    generate_report,
    label_distribution,
    language_breakdown,
    render_report_table,
    verdict_from_raw,
    AccuracyReport,
)
from .extract import methods_for_record
from .filters import filter_records, non_evaluated_report
from .ingest import (
    DatasetStore,
    FeedSyntaxError,
    GithubCommitClient,
    RecordedCommitClient,
    assemble_record,
    fetch_commits,
    first_commit_url,
    load_cve2cwe,
    parse_nvd_feed,
    sample_evaluation,
    split_dataset,
)
from .inference import (
    MockProvider,
    RemoteProvider,
    ResultStore,
    run_record_inference,
)
from .model import (
    EnrichedRecord,
    ground_truth_from_json,
    ground_truth_to_json,
    parse_variant,
)
from .prompts import export_finetune_dataset, prompt_pairs
from .model import TaskKind

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def _bool_flag(value: str) -> bool:
    token = value.strip().lower()
    if token in ("1", "true", "yes", "on"):
        return True
    if token in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML or JSON config file")
    common.add_argument("--cutoff-date", metavar="YYYY-MM-DD")
    common.add_argument("--keep-after-cutoff", type=_bool_flag, metavar="BOOL")
    common.add_argument("--token-limit", type=int, metavar="N")
    common.add_argument("--variants", metavar="LIST", help="comma-separated variants")
    common.add_argument("--distances", metavar="LIST", help="comma-separated distances")
    common.add_argument("--provider", choices=("mock", "remote"))
    common.add_argument("--evaluate", type=_bool_flag, metavar="BOOL")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--sample", type=int, metavar="N")
    common.add_argument("--force", action="store_true")
    common.add_argument("--dataset-dir", metavar="PATH")
    common.add_argument("--results-dir", metavar="PATH")
    common.add_argument("--reports-dir", metavar="PATH")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vulntriage",
        description="CVE triage pipeline: enrich, infer, evaluate.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True)

    build = sub.add_parser(
        "build-dataset", parents=[common], help="ingest feeds into a dataset"
    )
    build.add_argument("--feed", action="append", required=True, metavar="PATH")
    build.add_argument("--cve2cwe", required=True, metavar="PATH")

    export = sub.add_parser(
        "export-finetune", parents=[common], help="export tuning JSONL files"
    )
    export.add_argument("--task", choices=("cwe", "severity"), required=True)
    export.add_argument("--out-dir", metavar="PATH", default="finetune")

    sub.add_parser("infer", parents=[common], help="run inference over the dataset")
    sub.add_parser("evaluate", parents=[common], help="evaluate persisted raw results")
    sub.add_parser("report", parents=[common], help="re-render report.md from summary")
    return parser


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cli_values = {
        "cutoff_date": args.cutoff_date,
        "keep_after_cutoff": args.keep_after_cutoff,
        "token_limit": args.token_limit,
        "variants": args.variants,
        "distances": args.distances,
        "provider": args.provider,
        "evaluate": args.evaluate,
        "seed": args.seed,
        "sample": args.sample,
        "dataset_dir": args.dataset_dir,
        "results_dir": args.results_dir,
        "reports_dir": args.reports_dir,
    }
    return build_pipeline_config(args.config, cli_values)


def _commit_client(config: PipelineConfig):
    settings = config.commit_client
    if settings.kind == "recorded":
        if not settings.fixture_dir:
            raise ConfigError("recorded commit client needs commit_client.fixture_dir")
        return RecordedCommitClient(settings.fixture_dir)
    return GithubCommitClient(cache_dir=settings.cache_dir)


def _provider(config: PipelineConfig):
    if config.provider.kind == "mock":
        if config.provider.fixtures_path:
            return MockProvider.from_file(config.provider.fixtures_path)
        return MockProvider()
    return RemoteProvider(config.provider.config)


# ---------------------------------------------------------------------------
# Commands


def cmd_build_dataset(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    try:
        store = load_cve2cwe(args.cve2cwe)
    except (OSError, json.JSONDecodeError) as exc:
        logger.error("cannot read cve2cwe dataset: %s", exc)
        return EXIT_FATAL

    entries = []
    for feed_path in args.feed:
        try:
            entries.extend(parse_nvd_feed(Path(feed_path).read_bytes()))
        except (OSError, FeedSyntaxError) as exc:
            logger.error("cannot read feed %s: %s", feed_path, exc)
            return EXIT_FATAL
    if not entries:
        logger.warning("feeds contained no CVE entries; dataset left empty")
        DatasetStore(config.dataset_dir).write(
            {}, {}, [], config.seed, config.eval_fraction
        )
        return EXIT_PARTIAL

    client = _commit_client(config)
    by_url: dict[str, list] = {}
    skipped_no_url = 0
    for entry in entries:
        url = first_commit_url(entry.reference_urls)
        if url is None:
            skipped_no_url += 1
            logger.info("%s: no commit URL among references; skipped", entry.cve)
            continue
        by_url.setdefault(url, []).append(entry)

    fetched = fetch_commits(
        sorted(by_url),
        client,
        max_workers=config.commit_client.max_workers,
        min_interval=config.commit_client.min_interval,
    )

    records: list[EnrichedRecord] = []
    fetch_failures = 0
    for url in sorted(by_url):
        outcome = fetched[url]
        if isinstance(outcome, Exception):
            fetch_failures += len(by_url[url])
            logger.warning("fetch failed for %s: %s", url, outcome)
            continue
        for entry in by_url[url]:
            try:
                record = assemble_record(entry, outcome)
            except Exception as exc:
                fetch_failures += 1
                logger.warning("%s: cannot assemble record: %s", entry.cve, exc)
                continue
            record, failures = methods_for_record(
                record, config.filters.extensions, config.node_kinds
            )
            for failure in failures:
                logger.info("%s: %s", record.cve, failure)
            records.append(record)

    outcome = filter_records(records, store, config.filters, schemes=config.schemes)
    passed_records = [record for record, _ok in outcome.passed]
    evaluation, finetune = split_dataset(
        passed_records, config.eval_fraction, config.seed
    )
    ground_truth = {
        record.cve: ground_truth_to_json(ok.ground_truth)
        for record, ok in outcome.passed
    }
    dataset = DatasetStore(config.dataset_dir)
    dataset.write(
        {"evaluation": evaluation, "finetune": finetune},
        ground_truth,
        non_evaluated_report(outcome.discarded),
        config.seed,
        config.eval_fraction,
    )
    variants_by_cve = {
        record.cve: [v.value for v in ok.variants_ok] for record, ok in outcome.passed
    }
    manifest = dataset.manifest()
    for cve, entry in manifest["records"].items():
        entry["variants"] = variants_by_cve.get(cve, [])
    (dataset.root / DatasetStore.MANIFEST).write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )

    print(
        f"built {len(passed_records)} records "
        f"({len(evaluation)} evaluation / {len(finetune)} finetune); "
        f"discarded {len(outcome.discarded)}; "
        f"no commit URL {skipped_no_url}; fetch failures {fetch_failures}"
    )
    if fetch_failures or skipped_no_url:
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_export_finetune(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    task = TaskKind(args.task)
    dataset = DatasetStore(config.dataset_dir)
    try:
        gt_docs = dataset.ground_truth_docs()
        records = dataset.load_records(split="finetune")
    except OSError as exc:
        logger.error("dataset not readable at %s: %s", config.dataset_dir, exc)
        return EXIT_FATAL
    if not records:
        logger.error("no finetune records in dataset %s", config.dataset_dir)
        return EXIT_FATAL

    items = [
        (record, ground_truth_from_json(gt_docs[record.cve]))
        for record in records
        if record.cve in gt_docs
    ]
    result = export_finetune_dataset(
        items,
        task,
        args.out_dir,
        variants=None,  # all seven variants
        seed=config.seed,
        token_limit=config.filters.token_limit,
        schemes=config.schemes,
    )
    print(
        f"{task.value}: {result.examples_pre_filter} examples pre-filter, "
        f"{result.token_filtered} token-filtered, "
        f"{result.train_examples} train / {result.test_examples} test "
        f"({result.train_records}/{result.test_records} records) -> "
        f"{result.train_path} {result.test_path}"
    )
    return EXIT_OK


def _load_eval_targets(
    config: PipelineConfig,
) -> list[tuple[EnrichedRecord, Any, list[str]]]:
    dataset = DatasetStore(config.dataset_dir)
    manifest = dataset.manifest()
    gt_docs = dataset.ground_truth_docs()
    targets = []
    for cve in sorted(manifest["records"]):
        entry = manifest["records"][cve]
        if entry["split"] != "evaluation":
            continue
        record = dataset.load_record(cve)
        gt = ground_truth_from_json(gt_docs[cve])
        targets.append((record, gt, entry.get("variants", [])))
    return targets


def cmd_infer(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    try:
        targets = _load_eval_targets(config)
    except (OSError, KeyError) as exc:
        logger.error("dataset not readable at %s: %s", config.dataset_dir, exc)
        return EXIT_FATAL
    if not targets:
        logger.error("no evaluation records in dataset %s", config.dataset_dir)
        return EXIT_FATAL
    if config.sample is not None:
        targets = sample_evaluation(targets, config.sample, config.seed)

    provider = _provider(config)
    results = ResultStore(config.results_dir)
    jobs = []
    skipped = 0
    for record, gt, variants_ok in targets:
        for variant in config.variants:
            if variants_ok and variant.value not in variants_ok:
                continue
            if not args.force and results.has(record.cve, variant):
                skipped += 1
                continue
            jobs.append((record, gt, variant))

    failures = 0
    completed = 0

    def run_job(job):
        record, gt, variant = job
        pairs = prompt_pairs(record, variant, gt.version, config.schemes)
        return run_record_inference(
            pairs, gt, record.description, provider, config.provider.config
        )

    workers = max(1, config.provider.config.concurrency)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for raw in pool.map(run_job, jobs):
            results.write(raw)
            completed += 1
            if raw.errors:
                failures += 1

    print(
        f"inference: {completed} new results ({skipped} already present), "
        f"{failures} with errors -> {config.results_dir}"
    )
    if config.evaluate:
        code = _evaluate(config)
        if code != EXIT_OK:
            return code
    if completed and failures == completed:
        return EXIT_FATAL
    return EXIT_PARTIAL if failures else EXIT_OK


def _evaluate(config: PipelineConfig) -> int:
    results = ResultStore(config.results_dir)
    raws = results.load_all()
    if not raws:
        logger.error("no raw results under %s", config.results_dir)
        return EXIT_FATAL

    verdicts = [verdict_from_raw(raw, config.schemes, config.distances) for raw in raws]
    variants = sorted({v.variant for v in verdicts}, key=lambda v: v.value)
    reports = all_accuracies(verdicts, variants, config.distances)
    verify_accuracy_bounds(reports)

    records_by_cve: dict[str, EnrichedRecord] = {}
    dataset = DatasetStore(config.dataset_dir)
    if (dataset.root / DatasetStore.MANIFEST).exists():
        for record in dataset.load_records():
            records_by_cve[record.cve] = record

    distributions = {v: label_distribution(verdicts, v) for v in variants}
    breakdowns = {
        v: language_breakdown(verdicts, records_by_cve, v) for v in variants
    }
    written = generate_report(reports, distributions, breakdowns, config.reports_dir)
    for report in reports:
        print(
            f"{report.variant.value:22s} {report.criterion.value:26s} "
            f"{report.accuracy:.3f} ({report.numerator}/{report.denominator})"
        )
    print(f"report bundle: {', '.join(str(p) for p in written)}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    return _evaluate(config)


def cmd_report(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    summary_path = Path(config.reports_dir) / "summary.json"
    if not summary_path.exists():
        logger.error("no summary at %s; run evaluate first", summary_path)
        return EXIT_FATAL
    rows = json.loads(summary_path.read_text(encoding="utf-8"))
    reports = [
        AccuracyReport(
            variant=parse_variant(row["variant"]),
            criterion=CriterionId(row["criterion"]),
            numerator=row["numerator"],
            denominator=row["denominator"],
        )
        for row in rows
    ]
    out = Path(config.reports_dir) / "report.md"
    out.write_text(render_report_table(reports), encoding="utf-8")
    print(f"rendered {out}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "build-dataset": cmd_build_dataset,
        "export-finetune": cmd_export_finetune,
        "infer": cmd_infer,
        "evaluate": cmd_evaluate,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
