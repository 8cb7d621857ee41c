"""Benchmark harness for step judges on labeled synthetic trajectories.

Builds datasets of (judge query, binary step label, trajectory outcome)
from oracle-scored rollouts: continuous step scores are binarized at the
dataset mean and the four (outcome x label) cells are sampled to balance.
evaluate() runs any judge backend over such a dataset and reports accuracy
(invalid verdicts count as wrong), valid-judge rate, and per-cell counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .judging import JudgeBackend, JudgeQuery, OracleJudge, aggregate_or_zero, build_query
from .rollout import GoldSampler, RandomSampler, RolloutResult, build_vocab, rollout
from .world import Question, World

CELLS = ((1, 1), (1, 0), (0, 1), (0, 0))


class InsufficientData(ValueError):
    """Some (outcome, label) cell has no examples."""


@dataclass(frozen=True)
class LabeledStep:
    context: str
    step: str
    label: int
    outcome: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "context": self.context,
            "step": self.step,
            "label": self.label,
            "outcome": self.outcome,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LabeledStep":
        return cls(
            context=data["context"],
            step=data["step"],
            label=int(data["label"]),
            outcome=int(data["outcome"]),
            meta=data.get("meta", {}),
        )


@dataclass
class BenchDataset:
    steps: list[LabeledStep]
    threshold: float

    def cell_counts(self) -> dict[tuple[int, int], int]:
        counts = {cell: 0 for cell in CELLS}
        for s in self.steps:
            counts[(s.outcome, s.label)] += 1
        return counts

    def save_jsonl(self, path: str | Path) -> int:
        with open(path, "w", encoding="utf-8") as fh:
            for s in self.steps:
                fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")
        return len(self.steps)

    @classmethod
    def load_jsonl(cls, path: str | Path, threshold: float) -> "BenchDataset":
        steps = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    steps.append(LabeledStep.from_dict(json.loads(line)))
        return cls(steps=steps, threshold=threshold)


def build_dataset(
    world: World,
    rollouts: Sequence[RolloutResult],
    threshold: float | str = "mean",
    *,
    total: int | None = None,
    seed: int = 0,
) -> BenchDataset:
    """Binarize oracle step scores at the dataset mean and balance the cells.

    threshold="mean" uses the mean raw step score across all rollouts (ties
    label 1, matching the prediction rule in evaluate). A `total` request is
    split evenly over the four cells; cells short of their quota contribute
    everything they have. Raises InsufficientData when a cell is empty.
    """
    del world  # steps are self-contained; kept for interface symmetry
    scored: list[tuple[float, int, JudgeQuery, dict]] = []
    for r in rollouts:
        for t in range(1, len(r.trajectory.turns) + 1):
            q = build_query(r.trajectory, t)
            raw = r.raw_steps[t - 1]
            scored.append(
                (raw, r.outcome, q, {"turn": t, "raw_score": raw, "question": r.trajectory.query})
            )
    if not scored:
        raise InsufficientData("no steps to label")
    theta = float(np.mean([s[0] for s in scored])) if threshold == "mean" else float(threshold)

    cells: dict[tuple[int, int], list[LabeledStep]] = {cell: [] for cell in CELLS}
    for raw, outcome, q, meta in scored:
        label = int(raw >= theta)
        cells[(outcome, label)].append(
            LabeledStep(context=q.context, step=q.step, label=label, outcome=outcome, meta=meta)
        )
    empty = [cell for cell, steps in cells.items() if not steps]
    if empty:
        raise InsufficientData(f"empty (outcome, label) cells: {empty}")

    rng = np.random.default_rng(seed)
    quota = total // len(CELLS) if total is not None else min(len(s) for s in cells.values())
    picked: list[LabeledStep] = []
    for cell in CELLS:
        pool = cells[cell]
        take = min(quota, len(pool))
        picked.extend(pool[i] for i in rng.permutation(len(pool))[:take])
    return BenchDataset(steps=picked, threshold=theta)


@dataclass(frozen=True)
class BenchReport:
    accuracy: float
    accuracy_valid_only: float
    valid_judge_rate: float
    cells: dict
    n: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "accuracy_valid_only": self.accuracy_valid_only,
            "valid_judge_rate": self.valid_judge_rate,
            "cells": {f"{o},{l}": v for (o, l), v in self.cells.items()},
            "n": self.n,
        }

    def format_table(self) -> str:
        lines = [
            f"n                 {self.n}",
            f"accuracy          {self.accuracy:.3f}",
            f"accuracy (valid)  {self.accuracy_valid_only:.3f}",
            f"valid judge rate  {self.valid_judge_rate:.3f}",
            "cell (outcome, label)   n   correct",
        ]
        for cell in CELLS:
            stats = self.cells.get(cell, {"n": 0, "correct": 0})
            lines.append(f"  ({cell[0]}, {cell[1]})   {stats['n']:6d}   {stats['correct']:6d}")
        return "\n".join(lines)


def evaluate(
    judge: JudgeBackend,
    dataset: BenchDataset | Sequence[LabeledStep],
    threshold: float | None = None,
    *,
    concurrency: int = 1,
) -> BenchReport:
    """Score every step; the judge predicts label 1 iff its raw score >= threshold.

    Invalid verdicts count as wrong and lower the valid-judge rate;
    accuracy_valid_only reports the rate over valid verdicts alone.
    """
    if isinstance(dataset, BenchDataset):
        steps = dataset.steps
        if threshold is None:
            threshold = dataset.threshold
    else:
        steps = list(dataset)
        if threshold is None:
            raise ValueError("threshold required when dataset carries none")
    if not steps:
        raise InsufficientData("empty dataset")

    from .judging import judge_many

    queries = [JudgeQuery(s.context, s.step) for s in steps]
    verdicts = judge_many(judge, queries, concurrency=concurrency)
    cells = {cell: {"n": 0, "correct": 0} for cell in CELLS}
    correct = 0
    valid = 0
    for s, v in zip(steps, verdicts):
        cell = cells[(s.outcome, s.label)]
        cell["n"] += 1
        if not v.valid:
            continue
        valid += 1
        prediction = int(aggregate_or_zero(v) >= threshold)
        if prediction == s.label:
            correct += 1
            cell["correct"] += 1
    return BenchReport(
        accuracy=correct / len(steps),
        accuracy_valid_only=(correct / valid) if valid else 0.0,
        valid_judge_rate=valid / len(steps),
        cells=cells,
        n=len(steps),
    )


DEFAULT_MIX = {"gold": 1, "duplicate": 1, "wrong": 1, "random": 1}


def generate_bench_rollouts(
    world: World,
    questions: Sequence[Question],
    *,
    per_kind: int,
    mix: dict[str, int] | None = None,
    max_turns: int | None = None,
    k: int = 3,
    seed: int = 0,
) -> list[RolloutResult]:
    """Oracle-scored rollouts from scripted policies covering all four cells.

    gold -> correct steps + correct answer; duplicate -> one redundant
    search on a correct trajectory; wrong -> correct steps + wrong answer;
    random -> uniform token soup.
    """
    mix = mix or DEFAULT_MIX
    judge = OracleJudge(world)
    vocab = build_vocab(world)
    rng = np.random.default_rng(seed)
    results = []
    for kind, weight in mix.items():
        for i in range(per_kind * weight):
            question = questions[i % len(questions)]
            cap = max_turns if max_turns is not None else question.hops + 2
            if kind == "gold":
                sampler = GoldSampler(world, question)
            elif kind == "duplicate":
                sampler = GoldSampler(world, question, duplicate_search=True)
            elif kind == "wrong":
                sampler = GoldSampler(world, question, wrong_answer=True)
            elif kind == "random":
                sampler = RandomSampler(vocab)
            else:
                raise ValueError(f"unknown rollout kind {kind!r}")
            results.append(
                rollout(sampler, world, question, cap, judge, rng=rng, k=k)
            )
    return results
