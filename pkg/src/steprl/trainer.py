"""End-to-end training: collect -> judge -> normalize -> GAE -> PPO.

One training step collects a batch of rollouts with the frozen policy,
scores every turn with the configured judge, applies the reward
normalization strategy once outcomes are known, builds the per-token reward
tensors, subtracts the KL penalty, runs GAE, and takes clipped-PPO /
value-regression updates over shuffled minibatches with micro-batch
gradient accumulation. Metrics are logged per step and written as CSV and
JSONL; checkpoints are written on a fixed schedule.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .judging import JudgeBackend, JudgeVerdict, OracleJudge, RemoteJudge
from .optim import gae, kl_penalty, ppo_loss, sgd_step, value_loss
from .policy import TabularPolicy, ValueTable, context_keys_for
from .rewards import NormStrategy, apply_strategy, build_tensor
from .rollout import (
    SLOT_ACTION,
    SLOT_QUERY_ENT,
    SLOT_QUERY_REL,
    GoldSampler,
    build_vocab,
    rollout,
)
from .traj import TokenSequence, Trajectory
from .world import Question, World, generate_questions, generate_world


@dataclass
class Episode:
    """One scored rollout, ready for optimization."""

    trajectory: Trajectory
    question: Question
    tokens: list[str]
    ctx_keys: list[tuple[str, ...]]
    gen_mask: np.ndarray
    free_mask: np.ndarray
    old_logp: np.ndarray
    verdicts: list[JudgeVerdict]
    raw_steps: list[float]
    outcome: int
    step_values: list[float]
    final_value: float
    base_rewards: np.ndarray
    shaped_rewards: np.ndarray | None = None
    values_old: np.ndarray | None = None
    advantages: np.ndarray | None = None
    value_targets: np.ndarray | None = None
    n_valid_search: int = 0
    malformed_moves: int = 0

    @property
    def response_length(self) -> int:
        return len(self.tokens)

    def to_dict(self) -> dict:
        tensor = self.base_rewards
        return {
            "trajectory": self.trajectory.to_dict(),
            "question": self.question.to_dict(),
            "outcome": self.outcome,
            "raw_steps": self.raw_steps,
            "step_values": self.step_values,
            "final_value": self.final_value,
            "tensor_nonzeros": [[int(i), float(tensor[i])] for i in np.nonzero(tensor)[0]],
            "old_logp": self.old_logp.tolist(),
            "advantages": self.advantages.tolist() if self.advantages is not None else None,
            "value_targets": self.value_targets.tolist() if self.value_targets is not None else None,
            "metrics": {
                "n_valid_search": self.n_valid_search,
                "malformed_moves": self.malformed_moves,
                "response_length": self.response_length,
            },
        }


@dataclass
class EpisodeBatch:
    episodes: list[Episode]
    step_index: int = 0

    def save_jsonl(self, path: str | Path) -> int:
        with open(path, "w", encoding="utf-8") as fh:
            for ep in self.episodes:
                fh.write(json.dumps(ep.to_dict(), ensure_ascii=False) + "\n")
        return len(self.episodes)


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    mean_training_reward: float
    valid_judge_rate: float
    mean_valid_searches: float
    mean_response_length: float
    mean_raw_step_reward: float
    mean_total_reward: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "mean_training_reward": self.mean_training_reward,
            "valid_judge_rate": self.valid_judge_rate,
            "mean_valid_searches": self.mean_valid_searches,
            "mean_response_length": self.mean_response_length,
            "mean_raw_step_reward": self.mean_raw_step_reward,
            "mean_total_reward": self.mean_total_reward,
        }


METRIC_FIELDS = tuple(MetricsRecord(0, 0, 0, 0, 0, 0, 0).to_dict().keys())


def count_valid_search(traj: Trajectory) -> int:
    """Searches that are well-formed and not exact duplicates of earlier ones."""
    seen: set[str] = set()
    count = 0
    for turn in traj.turns:
        if turn.searched and turn.search_query not in seen:
            count += 1
        if turn.searched:
            seen.add(turn.search_query)
    return count


_WARMED_SLOTS = (SLOT_ACTION, SLOT_QUERY_ENT, SLOT_QUERY_REL)


class _SlotRecorder:
    """Sampler wrapper that records (context, token) pairs at chosen slots."""

    def __init__(self, inner, slots=_WARMED_SLOTS):
        self.inner = inner
        self.slots = slots
        self.pairs: list[tuple[tuple[str, ...], str]] = []

    def act(self, ctx, slot, view, rng):
        tok, logp = self.inner.act(ctx, slot, view, rng)
        if slot in self.slots:
            self.pairs.append((ctx, tok))
        return tok, logp


def warm_start_format(
    policy: TabularPolicy, world: World, questions: list[Question], config: TrainConfig
) -> None:
    """Bias action- and query-slot contexts toward the demonstrated template.

    Stands in for initializing from an instruction-tuned model that already
    follows the search/answer template and writes sane queries: one scripted
    demonstration per question contributes (context -> token) pairs whose
    logits get a fixed boost (roughly a coin flip under the softmax, leaving
    plenty for RL to improve). Claims and answers stay at a uniform prior;
    extraction quality and answer accuracy are learned by RL.
    """
    if config.format_boost <= 0:
        return
    rng = np.random.default_rng(config.seed)
    for question in questions:
        recorder = _SlotRecorder(GoldSampler(world, question))
        rollout(
            recorder,
            world,
            question,
            config.max_turns,
            None,
            rng=rng,
            k=config.retrieve_k,
            window=config.context_window,
        )
        for ctx, tok in recorder.pairs:
            row = policy.row(ctx)
            policy.logits_view()[row, policy.token_index[tok]] = config.format_boost


def make_judge(config: TrainConfig, world: World) -> JudgeBackend:
    if config.judge == "oracle":
        return OracleJudge(world)
    return RemoteJudge(
        config.judge_endpoint,
        timeout=config.judge_timeout,
        max_retries=config.judge_retries,
    )


def collect_episode(
    sampler,
    world: World,
    question: Question,
    judge: JudgeBackend,
    strategy: NormStrategy,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Episode:
    """Roll out one episode and attach normalized rewards and the tensor."""
    r = rollout(
        sampler,
        world,
        question,
        config.max_turns,
        judge,
        rng=rng,
        k=config.retrieve_k,
        window=config.context_window,
    )
    step_values, final_value = apply_strategy(strategy, r.raw_steps, r.outcome)
    tensor = build_tensor(r.tokens, step_values, final_value)
    return Episode(
        trajectory=r.trajectory,
        question=question,
        tokens=list(r.tokens.tokens),
        ctx_keys=context_keys_for(
            question.text.split(), list(r.tokens.tokens), config.context_window
        ),
        gen_mask=np.asarray(r.tokens.generated_mask, dtype=bool),
        free_mask=r.free_mask,
        old_logp=r.old_logp,
        verdicts=r.verdicts,
        raw_steps=r.raw_steps,
        outcome=r.outcome,
        step_values=step_values,
        final_value=final_value,
        base_rewards=tensor.per_token,
        n_valid_search=count_valid_search(r.trajectory),
        malformed_moves=r.malformed_moves,
    )


def batch_metrics(step: int, episodes: list[Episode]) -> MetricsRecord:
    n = len(episodes)
    verdicts = [v for ep in episodes for v in ep.verdicts]
    raws = [r for ep in episodes for r in ep.raw_steps]
    return MetricsRecord(
        step=step,
        mean_training_reward=sum(ep.outcome for ep in episodes) / n,
        valid_judge_rate=(sum(v.valid for v in verdicts) / len(verdicts)) if verdicts else 1.0,
        mean_valid_searches=sum(ep.n_valid_search for ep in episodes) / n,
        mean_response_length=sum(ep.response_length for ep in episodes) / n,
        mean_raw_step_reward=(sum(raws) / len(raws)) if raws else 0.0,
        mean_total_reward=sum(float(ep.base_rewards.sum()) for ep in episodes) / n,
    )


@dataclass
class TrainResult:
    config: TrainConfig
    metrics: list[MetricsRecord]
    policy: TabularPolicy
    value_fn: ValueTable
    world: World
    questions: list[Question]
    out_dir: Path
    metrics_csv: Path = field(init=False)
    metrics_jsonl: Path = field(init=False)
    checkpoint: Path = field(init=False)

    def __post_init__(self):
        self.metrics_csv = self.out_dir / "metrics.csv"
        self.metrics_jsonl = self.out_dir / "metrics.jsonl"
        self.checkpoint = self.out_dir / "checkpoint_final.json"


def save_metrics(records: list[MetricsRecord], csv_path: Path, jsonl_path: Path) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for rec in records:
            writer.writerow(rec.to_dict())
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def save_checkpoint(
    path: Path, policy: TabularPolicy, value_fn: ValueTable, config: TrainConfig, step: int
) -> None:
    payload = {
        "step": step,
        "config_hash": config.hash(),
        "policy": policy.to_dict(),
        "value": value_fn.to_dict(),
    }
    path.write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[TabularPolicy, ValueTable, dict]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return (
        TabularPolicy.from_dict(data["policy"]),
        ValueTable.from_dict(data["value"]),
        data,
    )


def train(config: TrainConfig, *, on_batch=None, judge: JudgeBackend | None = None) -> TrainResult:
    """Run the full training loop; deterministic given seeds and a
    deterministic judge.

    on_batch, when given, is called as on_batch(step, EpisodeBatch) after
    normalization and GAE, before the parameter updates.
    """
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    world = generate_world(config.world_seed, config.n_entities, config.n_relations)
    questions = generate_questions(
        world, config.n_questions, config.hops, seed=config.question_seed
    )
    if judge is None:
        judge = make_judge(config, world)
    strategy = NormStrategy(kind=config.norm)
    policy = TabularPolicy(build_vocab(world), config.context_window)
    warm_start_format(policy, world, questions, config)
    value_fn = ValueTable(config.context_window)
    ref_policy = policy.copy() if config.kl_beta > 0 else None
    rng = np.random.default_rng(config.seed)

    metrics: list[MetricsRecord] = []
    for step in range(1, config.steps + 1):
        episodes = [
            collect_episode(
                policy,
                world,
                questions[int(rng.integers(len(questions)))],
                judge,
                strategy,
                config,
                rng,
            )
            for _ in range(config.train_batch)
        ]
        batch = EpisodeBatch(episodes, step_index=step)

        penalties = (
            kl_penalty(policy, ref_policy, batch) if ref_policy is not None else None
        )
        for i, ep in enumerate(episodes):
            ep.shaped_rewards = (
                ep.base_rewards - config.kl_beta * penalties[i]
                if penalties is not None
                else ep.base_rewards
            )
            values = np.empty(len(ep.tokens) + 1, dtype=np.float64)
            for j, ctx in enumerate(ep.ctx_keys):
                values[j] = value_fn.value(ctx)
            values[-1] = 0.0  # terminal bootstrap
            adv = gae(ep.shaped_rewards, values, config.gamma, config.lam)
            ep.values_old = values[:-1]
            ep.advantages = adv.advantages
            ep.value_targets = adv.value_targets

        metrics.append(batch_metrics(step, episodes))
        if on_batch is not None:
            on_batch(step, batch)

        n = len(episodes)
        for _ in range(config.ppo_epochs):
            order = rng.permutation(n)
            for mb_start in range(0, n, config.mini_batch):
                mb = order[mb_start : mb_start + config.mini_batch]
                pol_acc = np.zeros_like(policy.logits_view())
                val_acc = np.zeros_like(value_fn.values_view())
                for mc_start in range(0, len(mb), config.micro_batch):
                    micro = EpisodeBatch(
                        [episodes[i] for i in mb[mc_start : mc_start + config.micro_batch]]
                    )
                    _, pol_grad = ppo_loss(micro, policy, config.clip_eps)
                    _, val_grad = value_loss(micro, value_fn)
                    pol_acc += pol_grad * len(micro.episodes)
                    val_acc += val_grad * len(micro.episodes)
                sgd_step(policy.logits_view(), pol_acc / len(mb), config.learning_rate)
                sgd_step(value_fn.values_view(), val_acc / len(mb), config.value_learning_rate)

        if step % config.checkpoint_every == 0:
            save_checkpoint(
                out_dir / f"checkpoint_step{step}.json", policy, value_fn, config, step
            )

    result = TrainResult(
        config=config,
        metrics=metrics,
        policy=policy,
        value_fn=value_fn,
        world=world,
        questions=questions,
        out_dir=out_dir,
    )
    save_metrics(metrics, result.metrics_csv, result.metrics_jsonl)
    save_checkpoint(result.checkpoint, policy, value_fn, config, config.steps)
    return result
