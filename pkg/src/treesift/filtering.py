"""Turn difficulty records into curated training subsets.

The flagship rule keeps every sample whose search took strictly more than
``k_min`` iterations together with everything the search never solved.
The remaining rules are the comparison baselines: unsolved-only, the
solved-only window, a seeded random subset, an accuracy-under-threshold
self-consistency filter, and the identity full-set rule.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .corpus import Corpus, CorpusError, Sample
from .gateway import judge_correct_fail_closed, render_transcript
from .mcts import STATUS_SOLVED, STATUS_UNSOLVED, DifficultyRecord


@dataclass(frozen=True)
class DifficultyBucket:
    k: Optional[int]  # None means unsolved
    count: int

    @property
    def label(self) -> str:
        return "Unsolved" if self.k is None else f"Iter{self.k}"


@dataclass(frozen=True)
class ConsistencyScore:
    sample_id: str
    rollouts: int
    correct: int

    def __post_init__(self):
        if not 0 <= self.correct <= self.rollouts:
            raise ValueError("correct count outside [0, rollouts]")

    @property
    def accuracy(self) -> float:
        return self.correct / self.rollouts

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "rollouts": self.rollouts,
            "correct": self.correct,
            "accuracy": self.accuracy,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ConsistencyScore":
        return cls(
            sample_id=record["sample_id"],
            rollouts=record["rollouts"],
            correct=record["correct"],
        )


ITER_THRESHOLD_PLUS_UNSOLVED = "iter_threshold_plus_unsolved"
UNSOLVED_ONLY = "unsolved_only"
ITER_WINDOW_ONLY = "iter_window_only"
RANDOM_SUBSET = "random_subset"
SELF_CONSISTENCY = "self_consistency"
FULL_SET = "full_set"


@dataclass(frozen=True)
class FilterRule:
    mode: str
    k_min: Optional[int] = None
    n: Optional[int] = None
    seed: Optional[int] = None
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.mode in (ITER_THRESHOLD_PLUS_UNSOLVED, ITER_WINDOW_ONLY):
            if self.k_min is None or self.k_min < 0:
                raise ValueError(f"{self.mode} requires k_min >= 0")
        elif self.mode == RANDOM_SUBSET:
            if self.n is None or self.n < 0 or self.seed is None:
                raise ValueError("random_subset requires n >= 0 and a seed")
        elif self.mode == SELF_CONSISTENCY:
            if self.threshold is None or not 0.0 <= self.threshold <= 1.0:
                raise ValueError("self_consistency requires a threshold in [0, 1]")
        elif self.mode not in (UNSOLVED_ONLY, FULL_SET):
            raise ValueError(f"unknown filter mode {self.mode!r}")

    @classmethod
    def iter_threshold_plus_unsolved(cls, k_min: int) -> "FilterRule":
        return cls(ITER_THRESHOLD_PLUS_UNSOLVED, k_min=k_min)

    @classmethod
    def unsolved_only(cls) -> "FilterRule":
        return cls(UNSOLVED_ONLY)

    @classmethod
    def iter_window_only(cls, k_min: int) -> "FilterRule":
        return cls(ITER_WINDOW_ONLY, k_min=k_min)

    @classmethod
    def random_subset(cls, n: int, seed: int) -> "FilterRule":
        return cls(RANDOM_SUBSET, n=n, seed=seed)

    @classmethod
    def self_consistency(cls, threshold: float) -> "FilterRule":
        return cls(SELF_CONSISTENCY, threshold=threshold)

    @classmethod
    def full_set(cls) -> "FilterRule":
        return cls(FULL_SET)


def bucketize(records: Sequence[DifficultyRecord]) -> list[DifficultyBucket]:
    """Histogram records by K, with one trailing bucket for the unsolved."""
    if not records:
        return []
    counts: dict[int, int] = {}
    unsolved = 0
    for record in records:
        if record.status == STATUS_UNSOLVED:
            unsolved += 1
        else:
            counts[record.K] = counts.get(record.K, 0) + 1
    buckets = [DifficultyBucket(k, counts[k]) for k in sorted(counts)]
    buckets.append(DifficultyBucket(None, unsolved))
    return buckets


def apply_filter(
    records: Sequence[DifficultyRecord],
    corpus: Corpus,
    rule: FilterRule,
    scores: Optional[Sequence[ConsistencyScore]] = None,
) -> Corpus:
    """Select the curated subset of ``corpus`` named by ``rule``.

    Output samples keep corpus order and are never duplicated or mutated.
    Threshold comparisons are strict on both sides: the iteration rules
    keep K > k_min, and the self-consistency rule keeps accuracy strictly
    below its threshold, so boundary samples are excluded.
    """
    if rule.mode == FULL_SET:
        return Corpus.from_samples(corpus.samples)
    if rule.mode == RANDOM_SUBSET:
        if rule.n > len(corpus):
            raise CorpusError(
                f"random subset of {rule.n} exceeds corpus size {len(corpus)}"
            )
        rng = random.Random(rule.seed)
        keep_idx = sorted(rng.sample(range(len(corpus)), rule.n))
        return Corpus.from_samples(corpus.samples[i] for i in keep_idx)
    if rule.mode == SELF_CONSISTENCY:
        if scores is None:
            raise CorpusError("self_consistency rule requires consistency scores")
        by_id = corpus.by_id()
        keep_ids = set()
        for score in scores:
            if score.sample_id not in by_id:
                raise CorpusError(f"score for unknown sample {score.sample_id!r}")
            if score.accuracy < rule.threshold:
                keep_ids.add(score.sample_id)
        return Corpus.from_samples(s for s in corpus.samples if s.id in keep_ids)

    ids = corpus.sample_ids()
    keep_ids = set()
    for record in records:
        if record.sample_id not in ids:
            raise CorpusError(f"record for unknown sample {record.sample_id!r}")
        if rule.mode == UNSOLVED_ONLY:
            keep = record.status == STATUS_UNSOLVED
        elif rule.mode == ITER_THRESHOLD_PLUS_UNSOLVED:
            keep = record.status == STATUS_UNSOLVED or record.K > rule.k_min
        else:  # ITER_WINDOW_ONLY: solved samples above the threshold
            keep = record.status == STATUS_SOLVED and record.K > rule.k_min
        if keep:
            keep_ids.add(record.sample_id)
    return Corpus.from_samples(s for s in corpus.samples if s.id in keep_ids)


def self_consistency_score(
    sample: Sample,
    policy,
    critic,
    n_rollouts: int,
    step_limit: int,
) -> ConsistencyScore:
    """Accuracy of independent rollouts from the empty prefix.

    Rollouts are judged by the critic; one that fails to answer, or whose
    verdict stays unreadable after a re-ask, counts as incorrect.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    correct = 0
    for draw in range(n_rollouts):
        rollout = policy.complete_rollout(sample, [], step_limit, draw=draw)
        if not rollout.answered:
            continue
        verdict = judge_correct_fail_closed(
            critic, sample.prompt, sample.answer, render_transcript(rollout.steps)
        )
        if verdict.correct:
            correct += 1
    return ConsistencyScore(sample_id=sample.id, rollouts=n_rollouts, correct=correct)


def emit_distribution_report(
    buckets: Sequence[DifficultyBucket], out_path: str | Path
) -> None:
    """Write ``bucket,count,fraction`` rows, K ascending, Unsolved last."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    total = sum(b.count for b in buckets)
    ordered = sorted(buckets, key=lambda b: (b.k is None, b.k if b.k is not None else 0))
    with out_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bucket", "count", "fraction"])
        for bucket in ordered:
            fraction = bucket.count / total if total else 0.0
            writer.writerow([bucket.label, bucket.count, repr(fraction)])


def write_records(records: Sequence[DifficultyRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_record()) + "\n")


def read_records(path: str | Path) -> list[DifficultyRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(DifficultyRecord.from_record(json.loads(line)))
    return records


def write_scores(scores: Sequence[ConsistencyScore], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for score in scores:
            handle.write(json.dumps(score.to_record()) + "\n")


def read_scores(path: str | Path) -> list[ConsistencyScore]:
    scores = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                scores.append(ConsistencyScore.from_record(json.loads(line)))
    return scores
