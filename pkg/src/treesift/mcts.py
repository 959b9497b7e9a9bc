"""Reward-model-free tree search that measures sample difficulty.

Each iteration runs selection, expansion, and simulation. Selection is
driven purely by visit counts: at a node with visit count N, the child
with count n scores ``c_puct * sqrt(N) / (1 + n)`` and the argmax wins
(ties break toward creation order). A simulation rolls the policy out to
a final answer and asks the critic for a verdict; the first correct
verdict stops the search and the 0-based iteration index K at which it
happened is the difficulty signal. No process reward model, value
network, or backed-up value statistic is involved anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .corpus import Sample
from .gateway import (
    ReasoningStep,
    Rollout,
    TransportError,
    judge_correct_fail_closed,
    render_transcript,
)

VISIT_UPDATE_PATH = "path"
VISIT_UPDATE_LEAF = "leaf"

STATUS_SOLVED = "solved"
STATUS_UNSOLVED = "unsolved"


class RetriableSampleError(Exception):
    """The run aborted on an endpoint failure; the sample can be retried."""


@dataclass
class MctsConfig:
    c_puct: float = 2.0
    k: int = 3
    temperature: float = 0.5
    iteration_cap: int = 50
    step_limit: int = 10
    seed: int = 0
    visit_update: str = VISIT_UPDATE_PATH

    def __post_init__(self):
        if self.c_puct <= 0:
            raise ValueError("c_puct must be positive")
        if self.k < 1 or self.iteration_cap < 1 or self.step_limit < 1:
            raise ValueError("k, iteration_cap and step_limit must be >= 1")
        if self.visit_update not in (VISIT_UPDATE_PATH, VISIT_UPDATE_LEAF):
            raise ValueError("visit_update must be 'path' or 'leaf'")


class ReasoningNode:
    """One prefix of the reasoning chain. The root carries no step."""

    __slots__ = ("step", "visit_count", "children", "depth", "parent", "dead", "node_id")

    def __init__(
        self,
        step: Optional[ReasoningStep] = None,
        parent: Optional["ReasoningNode"] = None,
        node_id: int = 0,
    ):
        if parent is None and step is not None:
            raise ValueError("root node must not carry a step")
        if parent is not None and step is None:
            raise ValueError("non-root node must carry a step")
        self.step = step
        self.parent = parent
        self.depth = 0 if parent is None else parent.depth + 1
        self.visit_count = 0
        self.children: list[ReasoningNode] = []
        self.dead = False
        self.node_id = node_id

    @property
    def is_terminal(self) -> bool:
        return self.step is not None and self.step.is_final

    def prefix_steps(self) -> list[ReasoningStep]:
        steps: list[ReasoningStep] = []
        node: Optional[ReasoningNode] = self
        while node is not None and node.step is not None:
            steps.append(node.step)
            node = node.parent
        steps.reverse()
        return steps


@dataclass
class DifficultyRecord:
    sample_id: str
    status: str
    K: Optional[int]
    iterations_used: int
    node_count: int
    max_depth: int
    winning_transcript: Optional[tuple[ReasoningStep, ...]] = None

    def __post_init__(self):
        if self.status == STATUS_SOLVED:
            if self.K is None or self.K < 0:
                raise ValueError("solved record requires a non-negative K")
            if self.winning_transcript is not None and not self.winning_transcript[-1].is_final:
                raise ValueError("winning transcript must end in a final step")
        elif self.status == STATUS_UNSOLVED:
            if self.K is not None or self.winning_transcript is not None:
                raise ValueError("unsolved record must carry no K or transcript")
        else:
            raise ValueError(f"unknown status {self.status!r}")

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "status": self.status,
            "K": self.K,
            "iterations_used": self.iterations_used,
            "node_count": self.node_count,
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_record(cls, record: dict) -> "DifficultyRecord":
        return cls(
            sample_id=record["sample_id"],
            status=record["status"],
            K=record["K"],
            iterations_used=record["iterations_used"],
            node_count=record["node_count"],
            max_depth=record["max_depth"],
        )


@dataclass
class SimulationResult:
    answered: bool
    correct: bool
    transcript: tuple[ReasoningStep, ...]
    verdict_reply: Optional[str] = None
    diagnostic: Optional[str] = None


EventSink = Callable[[dict], None]


def select_path(tree: ReasoningNode, c_puct: float) -> list[ReasoningNode]:
    """Descend by the visit-count rule from the root to a childless node."""
    path = [tree]
    node = tree
    while node.children:
        live = [child for child in node.children if not child.dead]
        if not live:
            break  # fully dead interior node; caller handles
        parent_term = c_puct * math.sqrt(node.visit_count)
        best = live[0]
        best_score = parent_term / (1 + best.visit_count)
        for child in live[1:]:
            score = parent_term / (1 + child.visit_count)
            if score > best_score:  # ties keep the earliest-created child
                best, best_score = child, score
        path.append(best)
        node = best
    return path


def _mark_dead(node: ReasoningNode) -> None:
    node.dead = True
    parent = node.parent
    while parent is not None and parent.children and all(c.dead for c in parent.children):
        parent.dead = True
        parent = parent.parent


def expand(
    node: ReasoningNode,
    policy,
    sample: Sample,
    k: int,
    temperature: float,
    next_id: Callable[[], int] = lambda: 0,
) -> list[ReasoningNode]:
    """Attach one child per distinct proposed step; empty means dead node."""
    if node.children:
        raise ValueError("expand requires an unexpanded node")
    if node.is_terminal:
        raise ValueError("expand requires a non-terminal prefix")
    steps = policy.propose_steps(sample, node.prefix_steps(), k, temperature)
    for step in steps:
        node.children.append(ReasoningNode(step=step, parent=node, node_id=next_id()))
    if not node.children:
        _mark_dead(node)
    return list(node.children)


def simulate(
    node: ReasoningNode,
    policy,
    critic,
    sample: Sample,
    step_limit: int,
) -> SimulationResult:
    """Roll out from the node's prefix and judge any final answer.

    A terminal node skips the rollout: its prefix already ends in a final
    answer, which is judged directly. Parse failures terminate the rollout
    unanswered and therefore count as incorrect; transport failures
    propagate so the caller can abort the sample as retriable.
    """
    prefix = node.prefix_steps()
    if node.is_terminal:
        rollout = Rollout(tuple(prefix), Rollout.ANSWERED)
    else:
        rollout = policy.complete_rollout(sample, prefix, step_limit)
    if not rollout.answered:
        return SimulationResult(
            answered=False,
            correct=False,
            transcript=rollout.steps,
            diagnostic=rollout.diagnostic,
        )
    verdict = judge_correct_fail_closed(
        critic, sample.prompt, sample.answer, render_transcript(rollout.steps)
    )
    return SimulationResult(
        answered=True,
        correct=verdict.correct,
        transcript=rollout.steps,
        verdict_reply=verdict.raw_reply,
    )


def run_mcts(
    sample: Sample,
    policy,
    critic,
    config: MctsConfig,
    event_sink: Optional[EventSink] = None,
    tree_out: Optional[list] = None,
) -> DifficultyRecord:
    """Search until the critic accepts an answer or the iteration cap hits.

    Iterations are numbered from 0. Every iteration ends in exactly one
    simulation; an expansion that yields zero parseable candidates marks
    the node dead and reselects within the same iteration. On an incorrect
    verdict the visit count of every node on the path from the root to the
    simulated node is incremented (or only the simulated node's, under the
    'leaf' visit-update mode kept for comparison runs).
    """

    def emit(event: dict) -> None:
        if event_sink is not None:
            event_sink(event)

    counter = iter(range(1, 1_000_000_000))
    root = ReasoningNode(node_id=0)
    if tree_out is not None:  # diagnostics hook: hand the tree to the caller
        tree_out.append(root)
    try:
        for iteration in range(config.iteration_cap):
            while True:
                if root.dead:
                    raise RetriableSampleError(
                        f"{sample.id}: no parseable expansion anywhere in the tree"
                    )
                path = select_path(root, config.c_puct)
                leaf = path[-1]
                emit({
                    "event": "select",
                    "iteration": iteration,
                    "path": [n.node_id for n in path],
                })
                if leaf.is_terminal:
                    sim_node, sim_path = leaf, path
                    break
                if not leaf.children:
                    children = expand(
                        leaf, policy, sample, config.k, config.temperature, lambda: next(counter)
                    )
                    emit({
                        "event": "expand",
                        "iteration": iteration,
                        "node": leaf.node_id,
                        "children": [c.node_id for c in children],
                        "dead": leaf.dead,
                    })
                    if children:
                        sim_node, sim_path = children[0], path + [children[0]]
                        break
                    continue
                _mark_dead(leaf)  # interior node with only dead children
                continue
            result = simulate(sim_node, policy, critic, sample, config.step_limit)
            emit({
                "event": "simulate",
                "iteration": iteration,
                "node": sim_node.node_id,
                "answered": result.answered,
                "correct": result.correct,
                "transcript": [s.text for s in result.transcript],
                "verdict_reply": result.verdict_reply,
                "diagnostic": result.diagnostic,
            })
            if result.correct:
                node_count, max_depth = _tree_stats(root)
                return DifficultyRecord(
                    sample_id=sample.id,
                    status=STATUS_SOLVED,
                    K=iteration,
                    iterations_used=iteration + 1,
                    node_count=node_count,
                    max_depth=max_depth,
                    winning_transcript=result.transcript,
                )
            if config.visit_update == VISIT_UPDATE_PATH:
                for node in sim_path:
                    node.visit_count += 1
            else:
                sim_node.visit_count += 1
    except TransportError as exc:
        raise RetriableSampleError(f"{sample.id}: {exc}") from exc
    node_count, max_depth = _tree_stats(root)
    return DifficultyRecord(
        sample_id=sample.id,
        status=STATUS_UNSOLVED,
        K=None,
        iterations_used=config.iteration_cap,
        node_count=node_count,
        max_depth=max_depth,
    )


def _tree_stats(root: ReasoningNode) -> tuple[int, int]:
    count = 0
    max_depth = 0
    stack = [root]
    while stack:
        node = stack.pop()
        count += 1
        max_depth = max(max_depth, node.depth)
        stack.extend(node.children)
    return count, max_depth
