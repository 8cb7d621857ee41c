"""Outcome and step reward computation.

Covers the outcome reward (exact match on the final answer), aggregation of
judge principle scores into a raw step reward in [0,1], the ReNorm
calibration r = raw + outcome - 1 plus its ablation variants, and the
per-token reward tensor (step rewards on turn-end tokens, the final value
on the last token, zeros elsewhere).
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .traj import TokenSequence

NORM_KINDS = ("renorm", "none", "rescale", "reduced")

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLES = {"a", "an", "the"}


class InvalidVerdict(ValueError):
    """A (score, max_score) pair is out of range."""


class ArityMismatch(ValueError):
    """Step value count does not match the trajectory's turn count."""


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace, drop a leading article."""
    words = text.lower().translate(_PUNCT_TABLE).split()
    if words and words[0] in _ARTICLES:
        words = words[1:]
    return " ".join(words)


def exact_match(answer: str, golden: str, *, strict: bool = False) -> int:
    """Outcome reward: 1 iff the answer matches the golden answer, else 0.

    strict=True compares the raw strings byte for byte.
    """
    if strict:
        return int(answer == golden)
    return int(normalize_answer(answer) == normalize_answer(golden))


def aggregate_step(pairs: Sequence[tuple[float, float]]) -> float:
    """Combine per-principle (score, max_score) pairs into sum(score)/sum(max)."""
    if not pairs:
        raise InvalidVerdict("no score pairs")
    total, total_max = 0.0, 0.0
    for score, max_score in pairs:
        if max_score <= 0:
            raise InvalidVerdict(f"max_score must be positive, got {max_score}")
        if not 0 <= score <= max_score:
            raise InvalidVerdict(f"score {score} outside [0, {max_score}]")
        total += score
        total_max += max_score
    return total / total_max


def renorm(raw: float, outcome: int) -> float:
    """Calibrate a raw step reward against the outcome: raw + outcome - 1.

    Keeps the result in [-1, 1] and sign-consistent with the outcome: failed
    trajectories never earn positive step credit, successful ones never
    negative.
    """
    if not 0.0 <= raw <= 1.0:
        raise ValueError(f"raw step reward {raw} outside [0, 1]")
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome}")
    return raw + outcome - 1.0


@dataclass(frozen=True)
class NormStrategy:
    """Mapping from (raw step rewards, outcome) to tensor values.

    kind "renorm":  steps -> raw + outcome - 1, final -> outcome
    kind "none":    steps -> raw,               final -> outcome
    kind "rescale": steps -> raw / sum(raws) (0 if the sum is 0), final -> outcome
    kind "reduced": steps -> 0,                 final -> outcome + sum(raws)

    mu_prior / pi_prior are the assumed step/outcome reward means used by
    the generalized centering form (defaults 1/2, under which centering
    reduces to the renorm shift of -1).
    """

    kind: str = "renorm"
    mu_prior: float = 0.5
    pi_prior: float = 0.5

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}, expected one of {NORM_KINDS}")


def center(raw: float, outcome: float, mu: float, pi: float) -> float:
    """Generalized centering (raw - mu) + (outcome - pi); mean zero by construction."""
    return (raw - mu) + (outcome - pi)


def apply_strategy(
    strategy: NormStrategy, raws: Sequence[float], outcome: int
) -> tuple[list[float], float]:
    """Map raw step rewards and the outcome to (step values, final value)."""
    raws = list(raws)
    if strategy.kind == "renorm":
        return [renorm(r, outcome) for r in raws], float(outcome)
    if strategy.kind == "none":
        return raws, float(outcome)
    if strategy.kind == "rescale":
        total = sum(raws)
        if total > 0:
            return [r / total for r in raws], float(outcome)
        return [0.0 for _ in raws], float(outcome)
    # reduced: fold all process reward into the final outcome position
    return [0.0 for _ in raws], float(outcome) + sum(raws)


@dataclass(frozen=True)
class RewardTensor:
    """Per-token rewards aligned to a TokenSequence.

    Nonzero only at turn-end positions and the final token. For an
    unanswered trajectory the last turn end *is* the final token and the
    two contributions add there.
    """

    per_token: np.ndarray

    @property
    def nonzero_positions(self) -> set[int]:
        return {int(i) for i in np.nonzero(self.per_token)[0]}

    def total(self) -> float:
        return float(self.per_token.sum())


def build_tensor(
    tokens: TokenSequence, step_values: Sequence[float], final_value: float
) -> RewardTensor:
    """Place step values on turn-end tokens and the final value on the last token."""
    if len(step_values) != len(tokens.turn_end_positions):
        raise ArityMismatch(
            f"{len(step_values)} step values for {len(tokens.turn_end_positions)} turns"
        )
    if len(tokens) == 0:
        raise ArityMismatch("cannot build a reward tensor over an empty token sequence")
    per_token = np.zeros(len(tokens), dtype=np.float64)
    for pos, value in zip(tokens.turn_end_positions, step_values):
        per_token[pos] += value
    per_token[len(tokens) - 1] += final_value
    return RewardTensor(per_token=per_token)
