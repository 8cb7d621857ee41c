"""Tabular softmax policy and value function over token-window contexts.

The policy is the smallest differentiable object that exercises the full
token-level PPO path: a logit table indexed by (context key, token), where
a context key is the last `window` tokens of the stream (question tokens
included, left-padded with a BOS marker). Rows are allocated lazily as
contexts are first seen; parameters are plain numpy arrays so finite
difference checks can perturb them directly.
"""

from __future__ import annotations

import numpy as np

BOS = "<bos>"


def context_key(tokens: list[str], window: int) -> tuple[str, ...]:
    """Key for the next-token distribution after `tokens`."""
    if len(tokens) >= window:
        return tuple(tokens[-window:])
    return (BOS,) * (window - len(tokens)) + tuple(tokens)


def context_keys_for(prefix: list[str], body: list[str], window: int) -> list[tuple[str, ...]]:
    """Context key at every body position, conditioning on prefix + earlier body."""
    stream = list(prefix)
    keys = []
    for tok in body:
        keys.append(context_key(stream, window))
        stream.append(tok)
    return keys


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class TabularPolicy:
    """Softmax next-token distribution per context row."""

    def __init__(self, vocab: tuple[str, ...], window: int = 6):
        if len(set(vocab)) != len(vocab):
            raise ValueError("vocabulary has duplicate tokens")
        self.vocab = tuple(vocab)
        self.window = window
        self.token_index = {tok: i for i, tok in enumerate(self.vocab)}
        self._rows: dict[tuple[str, ...], int] = {}
        self._logits = np.zeros((64, len(self.vocab)), dtype=np.float64)

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    def row(self, ctx: tuple[str, ...]) -> int:
        idx = self._rows.get(ctx)
        if idx is None:
            idx = len(self._rows)
            if idx == self._logits.shape[0]:
                self._logits = np.vstack([self._logits, np.zeros_like(self._logits)])
            self._rows[ctx] = idx
        return idx

    def logits_view(self) -> np.ndarray:
        """Mutable view of the allocated parameter rows."""
        return self._logits[: self.n_rows]

    def log_probs(self, ctx: tuple[str, ...]) -> np.ndarray:
        idx = self.row(ctx)  # may reallocate _logits; index afterwards
        return log_softmax(self._logits[idx])

    def log_prob(self, ctx: tuple[str, ...], token: str) -> float:
        return float(self.log_probs(ctx)[self.token_index[token]])

    def log_probs_rows(self, rows: np.ndarray) -> np.ndarray:
        return log_softmax(self._logits[rows])

    def sample(self, ctx: tuple[str, ...], rng: np.random.Generator) -> tuple[str, float]:
        logps = self.log_probs(ctx)
        i = int(rng.choice(len(self.vocab), p=np.exp(logps)))
        return self.vocab[i], float(logps[i])

    def act(self, ctx, slot, view, rng) -> tuple[str, float]:
        """Rollout sampler entry point; a trained policy sees only the context."""
        del slot, view
        return self.sample(ctx, rng)

    def copy(self) -> "TabularPolicy":
        clone = TabularPolicy(self.vocab, self.window)
        clone._rows = dict(self._rows)
        clone._logits = self._logits.copy()
        return clone

    # -- flat parameter access for checkpoints and finite-difference tests --

    def flat_params(self) -> np.ndarray:
        return self.logits_view().copy().ravel()

    def set_flat_params(self, flat: np.ndarray) -> None:
        view = self.logits_view()
        view[...] = np.asarray(flat, dtype=np.float64).reshape(view.shape)

    def to_dict(self) -> dict:
        return {
            "vocab": list(self.vocab),
            "window": self.window,
            "contexts": [list(ctx) for ctx in self._rows],
            "logits": self.logits_view().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularPolicy":
        policy = cls(tuple(data["vocab"]), data["window"])
        for ctx in data["contexts"]:
            policy.row(tuple(ctx))
        policy.logits_view()[...] = np.asarray(data["logits"], dtype=np.float64)
        return policy


class ValueTable:
    """Scalar value per context row."""

    def __init__(self, window: int = 6):
        self.window = window
        self._rows: dict[tuple[str, ...], int] = {}
        self._values = np.zeros(64, dtype=np.float64)

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    def row(self, ctx: tuple[str, ...]) -> int:
        idx = self._rows.get(ctx)
        if idx is None:
            idx = len(self._rows)
            if idx == self._values.shape[0]:
                self._values = np.concatenate([self._values, np.zeros_like(self._values)])
            self._rows[ctx] = idx
        return idx

    def values_view(self) -> np.ndarray:
        return self._values[: self.n_rows]

    def value(self, ctx: tuple[str, ...]) -> float:
        idx = self.row(ctx)  # may reallocate _values; index afterwards
        return float(self._values[idx])

    def values_rows(self, rows: np.ndarray) -> np.ndarray:
        return self._values[rows]

    def flat_params(self) -> np.ndarray:
        return self.values_view().copy()

    def set_flat_params(self, flat: np.ndarray) -> None:
        self.values_view()[...] = np.asarray(flat, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "contexts": [list(ctx) for ctx in self._rows],
            "values": self.values_view().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ValueTable":
        table = cls(data["window"])
        for ctx in data["contexts"]:
            table.row(tuple(ctx))
        table.values_view()[...] = np.asarray(data["values"], dtype=np.float64)
        return table
