"""Structured pipeline configuration: one JSON file, flag overrides win.

Every artifact the pipeline writes gets a ``<file>.meta.json`` sidecar
carrying the resolved config hash, so outputs stay traceable to the exact
parameters that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .corpus import DEFAULT_FORMAT_POLICY, Source
from .filtering import FilterRule
from .gateway import MockPolicySpec, PolicyEndpoint
from .grpo import GrpoConfig
from .mcts import MctsConfig


class ConfigError(Exception):
    """Invalid or incomplete pipeline configuration."""


@dataclass(frozen=True)
class SourceFile:
    path: str
    source: Source
    limit: Optional[int] = None


@dataclass(frozen=True)
class ConsistencyConfig:
    n_rollouts: int = 50
    step_limit: int = 10

    def __post_init__(self):
        if self.n_rollouts < 1 or self.step_limit < 1:
            raise ConfigError("consistency n_rollouts and step_limit must be >= 1")


@dataclass
class PipelineConfig:
    seed: int = 0
    workers: int = 4
    out_dir: str = "out"
    sources: list[SourceFile] = field(default_factory=list)
    format_policy: dict[Source, str] = field(default_factory=lambda: dict(DEFAULT_FORMAT_POLICY))
    mcts: MctsConfig = field(default_factory=MctsConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    filter_rule: FilterRule = field(default_factory=lambda: FilterRule.iter_threshold_plus_unsolved(5))
    policy_endpoint: Optional[PolicyEndpoint] = None
    critic_endpoint: Optional[PolicyEndpoint] = None
    mock_policy: Optional[MockPolicySpec] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "workers": self.workers,
            "out_dir": self.out_dir,
            "corpus": {
                "sources": [
                    {"path": s.path, "source": s.source.value, "limit": s.limit}
                    for s in self.sources
                ],
                "format_policy": {src.value: act for src, act in sorted(self.format_policy.items())},
            },
            "mcts": {
                "c_puct": self.mcts.c_puct,
                "k": self.mcts.k,
                "temperature": self.mcts.temperature,
                "iteration_cap": self.mcts.iteration_cap,
                "step_limit": self.mcts.step_limit,
                "seed": self.mcts.seed,
                "visit_update": self.mcts.visit_update,
            },
            "grpo": {
                "clip_epsilon": self.grpo.clip_epsilon,
                "kl_coeff": self.grpo.kl_coeff,
                "group_size": self.grpo.group_size,
                "std_floor": self.grpo.std_floor,
                "advantage_std": self.grpo.advantage_std,
            },
            "consistency": {
                "n_rollouts": self.consistency.n_rollouts,
                "step_limit": self.consistency.step_limit,
            },
            "filter": {
                "mode": self.filter_rule.mode,
                "k_min": self.filter_rule.k_min,
                "n": self.filter_rule.n,
                "seed": self.filter_rule.seed,
                "threshold": self.filter_rule.threshold,
            },
            "policy_endpoint": _endpoint_dict(self.policy_endpoint),
            "critic_endpoint": _endpoint_dict(self.critic_endpoint),
            "mock_policy": _mock_dict(self.mock_policy),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        try:
            corpus_section = data.get("corpus", {})
            sources = [
                SourceFile(
                    path=str(entry["path"]),
                    source=Source(entry["source"]),
                    limit=entry.get("limit"),
                )
                for entry in corpus_section.get("sources", [])
            ]
            policy = dict(DEFAULT_FORMAT_POLICY)
            for name, action in corpus_section.get("format_policy", {}).items():
                policy[Source(name)] = action
            mcts_section = dict(data.get("mcts", {}))
            grpo_section = dict(data.get("grpo", {}))
            consistency_section = dict(data.get("consistency", {}))
            filter_section = dict(data.get("filter", {}))
            config = cls(
                seed=int(data.get("seed", 0)),
                workers=int(data.get("workers", 4)),
                out_dir=str(data.get("out_dir", "out")),
                sources=sources,
                format_policy=policy,
                mcts=MctsConfig(**mcts_section),
                grpo=GrpoConfig(**grpo_section),
                consistency=ConsistencyConfig(**consistency_section),
                filter_rule=FilterRule(
                    mode=filter_section.get("mode", "iter_threshold_plus_unsolved"),
                    k_min=filter_section.get("k_min", 5),
                    n=filter_section.get("n"),
                    seed=filter_section.get("seed"),
                    threshold=filter_section.get("threshold"),
                ),
                policy_endpoint=_endpoint_from(data.get("policy_endpoint")),
                critic_endpoint=_endpoint_from(data.get("critic_endpoint")),
                mock_policy=_mock_from(data.get("mock_policy")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid pipeline config: {exc}") from exc
        return config

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _endpoint_dict(endpoint: Optional[PolicyEndpoint]) -> Optional[dict]:
    if endpoint is None:
        return None
    return {
        "base_url": endpoint.base_url,
        "model_name": endpoint.model_name,
        "timeout": endpoint.timeout,
        "max_retries": endpoint.max_retries,
        "request_concurrency_limit": endpoint.request_concurrency_limit,
        "max_tokens": endpoint.max_tokens,
    }


def _endpoint_from(data: Optional[dict]) -> Optional[PolicyEndpoint]:
    return None if data is None else PolicyEndpoint(**data)


def _mock_dict(spec: Optional[MockPolicySpec]) -> Optional[dict]:
    if spec is None:
        return None
    return {
        "per_sample_solve_probability": dict(sorted(spec.per_sample_solve_probability.items())),
        "seed": spec.seed,
        "steps_per_rollout": spec.steps_per_rollout,
        "default_solve_probability": spec.default_solve_probability,
    }


def _mock_from(data: Optional[dict]) -> Optional[MockPolicySpec]:
    if data is None:
        return None
    return MockPolicySpec(
        per_sample_solve_probability=dict(data.get("per_sample_solve_probability", {})),
        seed=int(data.get("seed", 0)),
        steps_per_rollout=int(data.get("steps_per_rollout", 3)),
        default_solve_probability=float(data.get("default_solve_probability", 0.0)),
    )


def write_meta(artifact_path: str | Path, config: PipelineConfig, command: str) -> None:
    """Drop the config-hash sidecar next to an artifact."""
    artifact_path = Path(artifact_path)
    meta = {"command": command, "config_hash": config.config_hash()}
    sidecar = artifact_path.with_name(artifact_path.name + ".meta.json")
    sidecar.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
