"""Pipeline driver: ingest -> score -> filter -> export as subcommands.

Stages communicate only through files under the output directory, so the
expensive scoring pass is restartable and auditable. Scoring checkpoints
after every completed sample; ``--resume`` picks up where a previous run
stopped. Exit codes: 0 success, 1 validation error, 2 runtime or endpoint
failure.

Test hook: when the ``TREESIFT_FAIL_AFTER_SAMPLES`` environment variable
is set to N, scoring aborts deliberately after N checkpoint writes; the
resumability suite uses it to interrupt runs at a deterministic point.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Optional, Sequence

from tqdm import tqdm

from . import corpus as corpus_mod
from .config import ConfigError, PipelineConfig, write_meta
from .corpus import Corpus, CorpusError
from .filtering import (
    ConsistencyScore,
    FilterRule,
    apply_filter,
    bucketize,
    emit_distribution_report,
    read_records,
    read_scores,
    self_consistency_score,
    write_records,
    write_scores,
)
from .gateway import (
    CriticClient,
    MockCriticGateway,
    MockPolicyGateway,
    MockPolicySpec,
    PolicyClient,
    TransportError,
)
from .grpo import GrpoConfig, export_rft_dataset, gradient_check
from .mcts import RetriableSampleError, run_mcts

FAIL_AFTER_ENV_VAR = "TREESIFT_FAIL_AFTER_SAMPLES"

CORPUS_FILE = "corpus.jsonl"
PROVENANCE_FILE = "corpus.provenance.json"
CONV_FAILURES_FILE = "conversion_failures.jsonl"
DIFFICULTY_FILE = "difficulty.jsonl"
SCORE_CHECKPOINT_FILE = "score.checkpoint.jsonl"
CONSISTENCY_FILE = "consistency.jsonl"
CONSISTENCY_CHECKPOINT_FILE = "consistency.checkpoint.jsonl"
CURATED_FILE = "curated.jsonl"
DISTRIBUTION_FILE = "distribution.csv"
RFT_FILE = "rft.jsonl"


class CliValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are validation
        raise CliValidationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="treesift", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="pipeline config JSON file")
        p.add_argument("--out-dir", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="global seed (overrides config)")
        p.add_argument("--workers", type=int, help="worker count (overrides config)")
        p.add_argument("--mock-policy", help="mock policy spec JSON file")

    p = sub.add_parser("ingest", help="assemble the canonical corpus")
    add_common(p)

    p = sub.add_parser("score", help="run the difficulty search over the corpus")
    add_common(p)
    p.add_argument("--resume", action="store_true", help="skip samples already checkpointed")
    p.add_argument("--visit-update", choices=["path", "leaf"], help="visit-count update mode")

    p = sub.add_parser("consistency", help="score samples by rollout accuracy")
    add_common(p)
    p.add_argument("--resume", action="store_true", help="skip samples already checkpointed")

    p = sub.add_parser("filter", help="select the curated subset")
    add_common(p)
    p.add_argument("--sweep", help="comma-separated k_min values, one curated set each")

    p = sub.add_parser("export", help="write the RFT training file")
    add_common(p)

    p = sub.add_parser("report", help="write the difficulty distribution CSV")
    add_common(p)

    p = sub.add_parser("grpo-check", help="verify the policy objective numerically")
    add_common(p)
    p.add_argument("--grpo-seeds", type=int, default=100, help="number of random scenarios")
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument(
        "--mutate-clip-sign",
        action="store_true",
        help="self-test: implant a clip-branch bug and confirm the check fails",
    )
    return parser


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    if args.mock_policy is not None:
        if not Path(args.mock_policy).is_file():
            raise CliValidationError(f"mock policy spec not found: {args.mock_policy}")
        config.mock_policy = MockPolicySpec.from_file(args.mock_policy)
    if getattr(args, "visit_update", None):
        config.mcts.visit_update = args.visit_update
    return config


def _build_gateways(config: PipelineConfig):
    if config.mock_policy is not None:
        return MockPolicyGateway(config.mock_policy), MockCriticGateway()
    if config.policy_endpoint is None or config.critic_endpoint is None:
        raise CliValidationError(
            "no mock policy configured and policy/critic endpoints are missing"
        )
    return PolicyClient(config.policy_endpoint), CriticClient(config.critic_endpoint)


def _out_dir(config: PipelineConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CliValidationError(f"{what} not found: {path} (run the producing stage first)")
    return path


def _log_name(sample_id: str) -> str:
    return sample_id.replace("/", "__") + ".log.jsonl"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(config: PipelineConfig) -> int:
    if not config.sources:
        raise CliValidationError("config lists no corpus source files")
    for entry in config.sources:
        if not Path(entry.path).is_file():
            raise CliValidationError(f"source file not found: {entry.path}")
    merged: list = []
    for entry in config.sources:
        part = corpus_mod.ingest_dataset(
            entry.path, entry.source, limit=entry.limit, seed=config.seed
        )
        merged.extend(part.samples)
    assembled = Corpus.from_samples(merged)
    curated, failures = corpus_mod.apply_format_policy(assembled, config.format_policy)
    out = _out_dir(config)
    corpus_path = out / CORPUS_FILE
    corpus_mod.write_corpus(curated, corpus_path)
    write_meta(corpus_path, config, "ingest")
    provenance = {src.value: n for src, n in sorted(curated.provenance.items())}
    (out / PROVENANCE_FILE).write_text(
        json.dumps(provenance, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    if failures:
        with (out / CONV_FAILURES_FILE).open("w", encoding="utf-8") as handle:
            for failure in failures:
                handle.write(
                    json.dumps({"sample_id": failure.sample_id, "reason": failure.reason}) + "\n"
                )
    print(
        f"ingested {len(curated)} samples from {len(config.sources)} source file(s); "
        f"{len(failures)} conversion failure(s); provenance: {provenance}"
    )
    return 0


def _read_checkpoint(path: Path) -> dict[str, dict]:
    """Load checkpointed records by sample_id, tolerating a torn last line."""
    records: dict[str, dict] = {}
    if not path.is_file():
        return records
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                print("warning: dropping torn checkpoint line", file=sys.stderr)
                continue
            records[record["sample_id"]] = record
    return records


class _InjectedFault(Exception):
    pass


def _run_checkpointed(
    config: PipelineConfig,
    samples: Sequence,
    checkpoint_path: Path,
    resume: bool,
    worker_fn,
    on_result=None,
    label: str = "scoring",
) -> tuple[dict[str, dict], list[str]]:
    """Run worker_fn over samples with checkpointing; returns (records, retriable ids).

    The checkpoint is append-only and flushed per record so an interrupted
    run leaves only complete lines behind. Results are keyed by sample id;
    callers rebuild ordered output files from the returned mapping.
    """
    done = _read_checkpoint(checkpoint_path) if resume else {}
    if not resume and checkpoint_path.exists():
        checkpoint_path.unlink()
    pending = [s for s in samples if s.id not in done]
    retriable: list[str] = []
    fail_after = os.environ.get(FAIL_AFTER_ENV_VAR)
    fail_after = int(fail_after) if fail_after else None
    written = 0
    checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
    with checkpoint_path.open("a", encoding="utf-8") as checkpoint:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = {pool.submit(worker_fn, sample): sample for sample in pending}
            progress = tqdm(total=len(pending), desc=label, disable=not sys.stderr.isatty())
            try:
                for future in as_completed(futures):
                    sample = futures[future]
                    try:
                        record, extra = future.result()
                    except RetriableSampleError as exc:
                        print(f"retriable: {exc}", file=sys.stderr)
                        retriable.append(sample.id)
                        progress.update(1)
                        continue
                    checkpoint.write(json.dumps(record) + "\n")
                    checkpoint.flush()
                    os.fsync(checkpoint.fileno())
                    done[record["sample_id"]] = record
                    if on_result is not None:
                        on_result(sample, record, extra)
                    written += 1
                    progress.update(1)
                    if fail_after is not None and written >= fail_after:
                        raise _InjectedFault(f"injected fault after {written} samples")
            finally:
                progress.close()
                for future in futures:
                    future.cancel()
    return done, retriable


def cmd_score(config: PipelineConfig, resume: bool) -> int:
    out = _out_dir(config)
    corpus_path = _require_file(out / CORPUS_FILE, "corpus file")
    corpus = corpus_mod.read_corpus(corpus_path)
    policy, critic = _build_gateways(config)
    runs_dir = out / "runs" / corpus_path.stem
    runs_dir.mkdir(parents=True, exist_ok=True)

    def worker(sample):
        events: list[dict] = []
        record = run_mcts(sample, policy, critic, config.mcts, event_sink=events.append)
        return record.to_record(), events

    def persist_events(sample, record, events):
        with (runs_dir / _log_name(sample.id)).open("w", encoding="utf-8") as handle:
            for event in events:
                handle.write(json.dumps(event) + "\n")

    checkpoint_path = out / SCORE_CHECKPOINT_FILE
    try:
        done, retriable = _run_checkpointed(
            config, corpus.samples, checkpoint_path, resume, worker, persist_events, "scoring"
        )
    except _InjectedFault as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2
    solved = sum(1 for r in done.values() if r["status"] == "solved")
    unsolved = sum(1 for r in done.values() if r["status"] == "unsolved")
    print(f"scored {len(done)} samples: {solved} solved, {unsolved} unsolved, "
          f"{len(retriable)} retriable")
    record_path = out / DIFFICULTY_FILE
    with record_path.open("w", encoding="utf-8") as handle:
        for sample in corpus.samples:
            if sample.id in done:
                handle.write(json.dumps(done[sample.id]) + "\n")
    write_meta(record_path, config, "score")
    return 2 if retriable else 0


def cmd_consistency(config: PipelineConfig, resume: bool) -> int:
    out = _out_dir(config)
    corpus_path = _require_file(out / CORPUS_FILE, "corpus file")
    corpus = corpus_mod.read_corpus(corpus_path)
    policy, critic = _build_gateways(config)

    def worker(sample):
        try:
            score = self_consistency_score(
                sample, policy, critic, config.consistency.n_rollouts,
                config.consistency.step_limit,
            )
        except TransportError as exc:
            raise RetriableSampleError(f"{sample.id}: {exc}") from exc
        return score.to_record(), None

    checkpoint_path = out / CONSISTENCY_CHECKPOINT_FILE
    try:
        done, retriable = _run_checkpointed(
            config, corpus.samples, checkpoint_path, resume, worker, label="consistency"
        )
    except _InjectedFault as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2
    score_path = out / CONSISTENCY_FILE
    scores = [
        ConsistencyScore.from_record(done[s.id]) for s in corpus.samples if s.id in done
    ]
    write_scores(scores, score_path)
    write_meta(score_path, config, "consistency")
    print(f"consistency-scored {len(scores)} samples ({len(retriable)} retriable)")
    return 2 if retriable else 0


def cmd_filter(config: PipelineConfig, sweep: Optional[str]) -> int:
    out = _out_dir(config)
    corpus = corpus_mod.read_corpus(_require_file(out / CORPUS_FILE, "corpus file"))
    records = read_records(_require_file(out / DIFFICULTY_FILE, "difficulty record file"))
    scores = None
    if config.filter_rule.mode == "self_consistency":
        scores = read_scores(_require_file(out / CONSISTENCY_FILE, "consistency score file"))

    buckets = bucketize(records)
    report_path = out / DISTRIBUTION_FILE
    emit_distribution_report(buckets, report_path)
    write_meta(report_path, config, "filter")

    if sweep:
        try:
            k_values = [int(v) for v in sweep.split(",") if v.strip()]
        except ValueError as exc:
            raise CliValidationError(f"bad --sweep value: {exc}") from None
        sizes = []
        for k_min in k_values:
            curated = apply_filter(
                records, corpus, FilterRule.iter_threshold_plus_unsolved(k_min)
            )
            path = out / f"curated_iter{k_min}_plus_unsolved.jsonl"
            corpus_mod.write_corpus(curated, path)
            write_meta(path, config, "filter")
            sizes.append((k_min, len(curated)))
        print("sweep sizes: " + ", ".join(f"k>{k}: {n}" for k, n in sizes))
        return 0

    curated = apply_filter(records, corpus, config.filter_rule, scores=scores)
    curated_path = out / CURATED_FILE
    corpus_mod.write_corpus(curated, curated_path)
    write_meta(curated_path, config, "filter")
    print(f"kept {len(curated)} of {len(corpus)} samples under rule {config.filter_rule.mode}")
    return 0


def cmd_export(config: PipelineConfig) -> int:
    out = _out_dir(config)
    curated = corpus_mod.read_corpus(_require_file(out / CURATED_FILE, "curated corpus file"))
    rft_path = out / RFT_FILE
    count = export_rft_dataset(curated, rft_path)
    write_meta(rft_path, config, "export")
    print(f"exported {count} RFT training records")
    return 0


def cmd_report(config: PipelineConfig) -> int:
    out = _out_dir(config)
    records = read_records(_require_file(out / DIFFICULTY_FILE, "difficulty record file"))
    report_path = out / DISTRIBUTION_FILE
    emit_distribution_report(bucketize(records), report_path)
    write_meta(report_path, config, "report")
    print(f"wrote distribution over {len(records)} records")
    return 0


def cmd_grpo_check(config: PipelineConfig, args) -> int:
    report = gradient_check(
        config.grpo,
        seeds=range(args.grpo_seeds),
        fd_step=args.fd_step,
        tolerance=args.tolerance,
        mutate_clip_sign=args.mutate_clip_sign,
    )
    print(report.to_json())
    return 0 if report.passed else 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args)
        if args.command == "ingest":
            return cmd_ingest(config)
        if args.command == "score":
            return cmd_score(config, args.resume)
        if args.command == "consistency":
            return cmd_consistency(config, args.resume)
        if args.command == "filter":
            return cmd_filter(config, args.sweep)
        if args.command == "export":
            return cmd_export(config)
        if args.command == "report":
            return cmd_report(config)
        if args.command == "grpo-check":
            return cmd_grpo_check(config, args)
        raise CliValidationError(f"unknown command {args.command!r}")
    except (CliValidationError, ConfigError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TransportError, RetriableSampleError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
