"""Batch scoring of persisted trajectories.

Applies the judge, the outcome reward, the normalization strategy, and the
tensor layout to trajectory JSONL records. Per-record failures are reported
in place so one bad line never aborts a batch.
"""

from __future__ import annotations

from typing import Sequence

from .judging import JudgeBackend, aggregate_or_zero, build_query
from .rewards import NormStrategy, apply_strategy, build_tensor, exact_match
from .traj import Trajectory, tokenize


def score_record(record: dict, judge: JudgeBackend, strategy: NormStrategy) -> dict:
    """Score one trajectory dict; raises ValueError on unusable records."""
    traj = Trajectory.from_dict(record)
    meta = record.get("meta") or {}
    golden = meta.get("golden_answer")
    if golden is None:
        raise ValueError("meta.golden_answer is required for outcome scoring")
    outcome = exact_match(traj.final_answer or "", golden)
    verdicts = [judge.judge(build_query(traj, t)) for t in range(1, len(traj.turns) + 1)]
    raw_steps = [aggregate_or_zero(v) for v in verdicts]
    step_values, final_value = apply_strategy(strategy, raw_steps, outcome)
    tokens = tokenize(traj)
    nonzeros = []
    if len(tokens):
        tensor = build_tensor(tokens, step_values, final_value)
        nonzeros = [[int(i), float(tensor.per_token[i])] for i in sorted(tensor.nonzero_positions)]
    out = dict(record)
    out.update(
        {
            "outcome_reward": outcome,
            "raw_steps": raw_steps,
            "step_values": step_values,
            "final_value": final_value,
            "tensor_nonzeros": nonzeros,
            "judge_valid": [v.valid for v in verdicts],
        }
    )
    return out


def score_records(
    records: Sequence[dict], judge: JudgeBackend, strategy: NormStrategy
) -> list[dict]:
    """Score many records; failures become {"error": ...} result lines."""
    results = []
    for i, record in enumerate(records):
        try:
            results.append(score_record(record, judge, strategy))
        except Exception as exc:
            results.append({"index": i, "error": str(exc)})
    return results
