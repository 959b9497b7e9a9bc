"""Group-relative clipped policy objective, with numerical verification.

The objective maximized for a group of G sampled outputs is

    J = (1/G) sum_i (1/|o_i|) sum_t [ min(r * A_i, clip(r, 1-eps, 1+eps) * A_i)
                                      - beta * kl_t ]

where r is the per-token probability ratio between the current and the
sampling-time policy, A_i is the group-normalized advantage of output i
broadcast to its tokens, and kl_t is a per-token unbiased estimate of the
KL divergence from the frozen reference policy. This module evaluates the
objective, differentiates it analytically through a toy softmax policy,
and cross-checks that gradient against central finite differences. It
also exports curated corpora as RFT-ready training files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import Corpus
from .prompts import render_rft_prompt

ADVANTAGE_STD_POPULATION = "population"
ADVANTAGE_STD_SAMPLE = "sample"


@dataclass(frozen=True)
class TokenSequence:
    """Per-token log-probabilities of one sampled output under three policies."""

    logp_current: tuple[float, ...]
    logp_old: tuple[float, ...]
    logp_ref: tuple[float, ...]

    def __post_init__(self):
        n = len(self.logp_current)
        if len(self.logp_old) != n or len(self.logp_ref) != n:
            raise ValueError("logp lists must share one length")
        if n == 0:
            raise ValueError("token sequence must be non-empty")
        for name, values in (
            ("logp_current", self.logp_current),
            ("logp_old", self.logp_old),
            ("logp_ref", self.logp_ref),
        ):
            if any(v > 1e-9 for v in values):
                raise ValueError(f"{name} holds a positive log-probability")

    def __len__(self) -> int:
        return len(self.logp_current)


@dataclass(frozen=True)
class RolloutGroup:
    question_id: str
    outputs: tuple[TokenSequence, ...]
    rewards: tuple[float, ...]

    def __post_init__(self):
        if len(self.outputs) < 1:
            raise ValueError("group must hold at least one output")
        if len(self.rewards) != len(self.outputs):
            raise ValueError("one reward per output is required")

    @property
    def group_size(self) -> int:
        return len(self.outputs)


@dataclass(frozen=True)
class GrpoConfig:
    clip_epsilon: float = 0.2
    kl_coeff: float = 0.04
    group_size: int = 32
    std_floor: float = 1e-8
    advantage_std: str = ADVANTAGE_STD_POPULATION

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.kl_coeff < 0.0:
            raise ValueError("kl_coeff must be non-negative")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.std_floor <= 0.0:
            raise ValueError("std_floor must be positive")
        if self.advantage_std not in (ADVANTAGE_STD_POPULATION, ADVANTAGE_STD_SAMPLE):
            raise ValueError("advantage_std must be 'population' or 'sample'")


def group_advantages(
    rewards: Sequence[float],
    std_floor: float = 1e-8,
    advantage_std: str = ADVANTAGE_STD_POPULATION,
) -> np.ndarray:
    """Center rewards on the group mean and scale by the group std.

    A group whose reward std falls below ``std_floor`` carries no learning
    signal and gets all-zero advantages instead of a blow-up.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 1:
        raise ValueError("rewards must be a non-empty 1-d sequence")
    ddof = 1 if advantage_std == ADVANTAGE_STD_SAMPLE and r.size > 1 else 0
    std = float(np.std(r, ddof=ddof))
    if std < std_floor:
        return np.zeros_like(r)
    return (r - np.mean(r)) / std


def kl_term(logp_current, logp_ref):
    """Per-token KL estimate ``exp(d) - d - 1`` with ``d = logp_ref - logp_current``.

    Non-negative for every input, zero exactly when the two match, and
    unbiased for KL(current || ref) in expectation over current samples.
    """
    d = np.asarray(logp_ref, dtype=float) - np.asarray(logp_current, dtype=float)
    return np.exp(d) - d - 1.0


@dataclass(frozen=True)
class GrpoResult:
    objective: float
    per_token_terms: tuple[np.ndarray, ...]


def grpo_objective(group: RolloutGroup, config: GrpoConfig) -> GrpoResult:
    """Evaluate the clipped group-relative objective J (to be maximized)."""
    advantages = group_advantages(
        group.rewards, std_floor=config.std_floor, advantage_std=config.advantage_std
    )
    lo, hi = 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon
    per_token: list[np.ndarray] = []
    total = 0.0
    for sequence, advantage in zip(group.outputs, advantages):
        current = np.asarray(sequence.logp_current, dtype=float)
        old = np.asarray(sequence.logp_old, dtype=float)
        ref = np.asarray(sequence.logp_ref, dtype=float)
        ratio = np.exp(current - old)
        surrogate = np.minimum(ratio * advantage, np.clip(ratio, lo, hi) * advantage)
        terms = surrogate - config.kl_coeff * kl_term(current, ref)
        per_token.append(terms)
        total += float(np.mean(terms))
    return GrpoResult(objective=total / group.group_size, per_token_terms=tuple(per_token))


# ---------------------------------------------------------------------------
# Toy differentiable policy and gradient verification
# ---------------------------------------------------------------------------


@dataclass
class ToySoftmaxPolicy:
    """Softmax over a small vocabulary with one shared logit per symbol."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 1 or self.theta.size < 2:
            raise ValueError("theta must be a 1-d vector of at least two logits")

    @property
    def vocab_size(self) -> int:
        return self.theta.size

    def log_probs(self) -> np.ndarray:
        z = self.theta - np.max(self.theta)
        return z - np.log(np.sum(np.exp(z)))

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def sequence_logps(self, tokens: Sequence[int]) -> tuple[float, ...]:
        logp = self.log_probs()
        return tuple(float(logp[t]) for t in tokens)

    def sample_sequence(self, rng: np.random.Generator, length: int) -> tuple[int, ...]:
        return tuple(int(t) for t in rng.choice(self.vocab_size, size=length, p=self.probs()))


def exact_kl(policy: ToySoftmaxPolicy, reference: ToySoftmaxPolicy) -> float:
    """Enumerated KL(policy || reference) over the toy vocabulary."""
    p = policy.probs()
    return float(np.sum(p * (policy.log_probs() - reference.log_probs())))


@dataclass(frozen=True)
class ToyGroupSpec:
    """A sampled verification scenario: token ids, rewards, and frozen policies."""

    question_id: str
    token_ids: tuple[tuple[int, ...], ...]
    rewards: tuple[float, ...]
    theta_old: np.ndarray
    theta_ref: np.ndarray


def sample_toy_group(
    rng: np.random.Generator,
    vocab_size: int = 6,
    group_size: int = 4,
    max_len: int = 5,
    old_policy: Optional[ToySoftmaxPolicy] = None,
) -> ToyGroupSpec:
    theta_old = rng.normal(0.0, 1.0, vocab_size) if old_policy is None else old_policy.theta
    sampler = ToySoftmaxPolicy(theta_old)
    token_ids = tuple(
        sampler.sample_sequence(rng, int(rng.integers(1, max_len + 1)))
        for _ in range(group_size)
    )
    rewards = tuple(float(r) for r in rng.normal(0.0, 1.0, group_size))
    theta_ref = theta_old + rng.normal(0.0, 0.3, vocab_size)
    return ToyGroupSpec(
        question_id="toy",
        token_ids=token_ids,
        rewards=rewards,
        theta_old=np.asarray(theta_old, dtype=float),
        theta_ref=np.asarray(theta_ref, dtype=float),
    )


def build_toy_group(spec: ToyGroupSpec, theta: np.ndarray) -> RolloutGroup:
    current = ToySoftmaxPolicy(theta)
    old = ToySoftmaxPolicy(spec.theta_old)
    ref = ToySoftmaxPolicy(spec.theta_ref)
    outputs = tuple(
        TokenSequence(
            logp_current=current.sequence_logps(tokens),
            logp_old=old.sequence_logps(tokens),
            logp_ref=ref.sequence_logps(tokens),
        )
        for tokens in spec.token_ids
    )
    return RolloutGroup(question_id=spec.question_id, outputs=outputs, rewards=spec.rewards)


def toy_loss(spec: ToyGroupSpec, theta: np.ndarray, config: GrpoConfig) -> float:
    """The minimized quantity: -J evaluated through the toy policy."""
    return -grpo_objective(build_toy_group(spec, theta), config).objective


def toy_loss_gradient(
    spec: ToyGroupSpec,
    theta: np.ndarray,
    config: GrpoConfig,
    mutate_clip_sign: bool = False,
) -> np.ndarray:
    """Analytic gradient of -J with respect to the toy policy logits.

    Chain rule: dJ/dlogp is the active-branch slope ``ratio * advantage``
    (zero where the clipped branch is flat) minus ``beta * (1 - exp(d))``
    from the KL estimate, and dlogp/dtheta_u for a softmax is
    ``1[u = token] - softmax(theta)_u``.

    ``mutate_clip_sign`` deliberately inverts the clip-branch test; it
    exists so the finite-difference check can prove it catches this bug.
    """
    theta = np.asarray(theta, dtype=float)
    current = ToySoftmaxPolicy(theta)
    old = ToySoftmaxPolicy(spec.theta_old)
    ref = ToySoftmaxPolicy(spec.theta_ref)
    advantages = group_advantages(
        spec.rewards, std_floor=config.std_floor, advantage_std=config.advantage_std
    )
    lo, hi = 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon
    probs = current.probs()
    logp_current = current.log_probs()
    logp_old = old.log_probs()
    logp_ref = ref.log_probs()
    grad_j = np.zeros_like(theta)
    group_size = len(spec.token_ids)
    for tokens, advantage in zip(spec.token_ids, advantages):
        weight = 1.0 / (group_size * len(tokens))
        for token in tokens:
            ratio = float(np.exp(logp_current[token] - logp_old[token]))
            unclipped_wins = ratio * advantage <= np.clip(ratio, lo, hi) * advantage
            if mutate_clip_sign:
                unclipped_wins = not unclipped_wins
            slope = ratio * advantage if unclipped_wins else 0.0
            d = logp_ref[token] - logp_current[token]
            slope -= config.kl_coeff * (1.0 - np.exp(d))
            dlogp = -probs.copy()
            dlogp[token] += 1.0
            grad_j += weight * slope * dlogp
    return -grad_j


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float
) -> np.ndarray:
    """Central-difference gradient oracle, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        bumped = x.copy()
        bumped[i] = x[i] + step
        plus = f(bumped)
        bumped[i] = x[i] - step
        minus = f(bumped)
        grad[i] = (plus - minus) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class GradientCheckReport:
    seeds: int
    max_rel_error: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(
            {"seeds": self.seeds, "max_rel_error": self.max_rel_error, "pass": self.passed}
        )


def gradient_check(
    config: GrpoConfig,
    seeds: Sequence[int] = tuple(range(100)),
    fd_step: float = 1e-5,
    tolerance: float = 1e-4,
    mutate_clip_sign: bool = False,
) -> GradientCheckReport:
    """Compare the analytic gradient against finite differences per seed.

    Each seed draws a fresh toy scenario (vocabulary of at most 10
    symbols, sequences of at most 5 tokens), a perturbed current policy,
    and a KL weight cycling through 0, the default, and a large value.
    The reported error is the worst normalized component mismatch.
    """
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        vocab_size = int(rng.integers(4, 9))
        group_size = int(rng.integers(2, 7))
        spec = sample_toy_group(rng, vocab_size=vocab_size, group_size=group_size)
        theta = spec.theta_old + rng.normal(0.0, 0.3, vocab_size)
        seed_config = GrpoConfig(
            clip_epsilon=config.clip_epsilon,
            kl_coeff=(0.0, config.kl_coeff, 1.0)[seed % 3],
            group_size=config.group_size,
            std_floor=config.std_floor,
            advantage_std=config.advantage_std,
        )
        analytic = toy_loss_gradient(spec, theta, seed_config, mutate_clip_sign=mutate_clip_sign)
        numeric = finite_difference_gradient(
            lambda th: toy_loss(spec, th, seed_config), theta, fd_step
        )
        if not np.all(np.isfinite(analytic)):
            raise FloatingPointError(f"non-finite analytic gradient at seed {seed}")
        scale = max(1e-6, float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))))
        worst = max(worst, float(np.max(np.abs(analytic - numeric))) / scale)
    return GradientCheckReport(seeds=len(seeds), max_rel_error=worst, passed=worst < tolerance)


# ---------------------------------------------------------------------------
# RFT export
# ---------------------------------------------------------------------------


def export_rft_dataset(curated: Corpus, out_path: str | Path) -> int:
    """Write curated samples as RFT training records; returns the count."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as handle:
        for sample in curated.samples:
            record = {
                "id": sample.id,
                "image": sample.image_ref,
                "prompt": render_rft_prompt(sample.prompt),
                "answer": sample.answer,
            }
            handle.write(json.dumps(record) + "\n")
    return len(curated.samples)
