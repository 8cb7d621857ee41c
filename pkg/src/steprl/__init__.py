"""steprl: desk-scale RL for multi-turn search agents with judged step rewards."""

from .config import TrainConfig
from .judging import (
    DEFAULT_PRINCIPLES,
    EVALUATOR_SYSTEM_PROMPT,
    JudgeQuery,
    JudgeVerdict,
    OracleJudge,
    RemoteJudge,
    build_query,
    parse_verdict,
)
from .optim import AdvantageSet, gae, kl_penalty, ppo_loss, value_loss
from .policy import TabularPolicy, ValueTable
from .rewards import (
    NormStrategy,
    RewardTensor,
    aggregate_step,
    apply_strategy,
    build_tensor,
    exact_match,
    renorm,
)
from .rollout import GoldSampler, RandomSampler, rollout
from .traj import Doc, MalformedTrajectory, TokenSequence, Trajectory, Turn, parse, render, tokenize
from .trainer import EpisodeBatch, MetricsRecord, count_valid_search, train
from .world import Question, World, generate_questions, generate_world, gold_step_labels, retrieve

__version__ = "0.1.0"

__all__ = [
    "AdvantageSet",
    "DEFAULT_PRINCIPLES",
    "Doc",
    "EVALUATOR_SYSTEM_PROMPT",
    "EpisodeBatch",
    "GoldSampler",
    "JudgeQuery",
    "JudgeVerdict",
    "MalformedTrajectory",
    "MetricsRecord",
    "NormStrategy",
    "OracleJudge",
    "Question",
    "RandomSampler",
    "RemoteJudge",
    "RewardTensor",
    "TabularPolicy",
    "TokenSequence",
    "TrainConfig",
    "Trajectory",
    "Turn",
    "ValueTable",
    "World",
    "aggregate_step",
    "apply_strategy",
    "build_query",
    "build_tensor",
    "count_valid_search",
    "exact_match",
    "gae",
    "generate_questions",
    "generate_world",
    "gold_step_labels",
    "kl_penalty",
    "parse",
    "parse_verdict",
    "ppo_loss",
    "render",
    "renorm",
    "retrieve",
    "rollout",
    "tokenize",
    "train",
    "value_loss",
]
