"""Difficulty-aware curation of visual QA training data via tree search."""

from .corpus import (
    Choice,
    Corpus,
    QAFormat,
    Sample,
    Source,
    apply_format_policy,
    ingest_dataset,
    to_open_ended,
)
from .filtering import (
    ConsistencyScore,
    DifficultyBucket,
    FilterRule,
    apply_filter,
    bucketize,
    emit_distribution_report,
    self_consistency_score,
)
from .gateway import (
    MockCriticGateway,
    MockPolicyGateway,
    MockPolicySpec,
    PolicyEndpoint,
    ReasoningStep,
    Verdict,
    extract_boxed_answer,
    judge_answer,
)
from .grpo import (
    GrpoConfig,
    RolloutGroup,
    TokenSequence,
    gradient_check,
    export_rft_dataset,
    group_advantages,
    grpo_objective,
    kl_term,
)
from .mcts import (
    DifficultyRecord,
    MctsConfig,
    ReasoningNode,
    expand,
    run_mcts,
    select_path,
    simulate,
)

__version__ = "0.1.0"
