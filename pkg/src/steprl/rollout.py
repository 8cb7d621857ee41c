"""Turn-structured rollouts against the synthetic world.

The rollout loop owns the tag grammar and the reasoning-sentence scaffold;
the sampler fills the consequential slots:

  turn 1   <think> i need to answer : {question echoed} </think>
  turn t>1 <think> the results mention <obj> . </think>
  action   one free token: <search> opens a query (two free tokens,
           entity then relation), <answer> opens the final answer (one free
           token), anything else is a no-op move that burns the turn.

Forced scaffold tokens are probability-1 actions (log-prob 0); the turn-1
echo keeps the question's tokens inside the context window of the action
and query slots, and the claim sentence plays the same role for later
turns. Retrieved information is spliced in as masked environment tokens.
Each completed turn is judged immediately; normalization happens later,
once the outcome is known. Scripted samplers (gold, corrupted-gold,
random) cover tests and benchmark data generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .judging import JudgeBackend, JudgeVerdict, aggregate_or_zero, build_query
from .policy import context_key
from .rewards import exact_match
from .traj import Doc, TokenSequence, Trajectory, Turn, info_text, tokenize
from .world import Question, World, gold_chain, resolved_flags, retrieve

SLOT_OBJ = "obj"
SLOT_ACTION = "action"
SLOT_QUERY_ENT = "query_ent"
SLOT_QUERY_REL = "query_rel"
SLOT_ANSWER = "answer"

TAG_TOKENS = (
    "<think>", "</think>", "<search>", "</search>",
    "<information>", "</information>", "<answer>", "</answer>",
)
TEMPLATE_WORDS = ("i", "need", "to", "answer", ":", "the", "results", "mention", ".")


def build_vocab(world: World) -> tuple[str, ...]:
    """Action vocabulary: tags, scaffold words, entities, relations."""
    return TAG_TOKENS + TEMPLATE_WORDS + tuple(sorted(world.entities)) + tuple(
        sorted(world.relations)
    )


@dataclass
class RolloutView:
    """Read-only state handed to samplers; the tabular policy ignores it."""

    question: Question
    turn_index: int
    turns: list[Turn]


@dataclass
class RolloutResult:
    trajectory: Trajectory
    tokens: TokenSequence
    raw_steps: list[float]
    verdicts: list[JudgeVerdict]
    outcome: int
    old_logp: np.ndarray
    free_mask: np.ndarray
    malformed_moves: int = 0


def rollout(
    sampler,
    world: World,
    question: Question,
    max_turns: int,
    judge: JudgeBackend | None,
    *,
    rng: np.random.Generator,
    k: int = 3,
    window: int = 6,
) -> RolloutResult:
    """Run one episode; step rewards come back un-normalized.

    The rollout stops at the first answer (computing the exact-match
    outcome) or when the turn budget is exhausted (outcome 0).
    """
    prefix = question.text.split()
    body: list[str] = []
    free_logp: dict[int, float] = {}
    turns: list[Turn] = []
    verdicts: list[JudgeVerdict] = []
    malformed = 0
    final_answer: str | None = None
    outcome = 0

    def take(slot: str, t: int) -> str:
        ctx = context_key(prefix + body, window)
        tok, logp = sampler.act(ctx, slot, RolloutView(question, t, turns), rng)
        free_logp[len(body)] = logp
        body.append(tok)
        return tok

    def judge_turn(t: int) -> None:
        if judge is None:
            return
        partial = Trajectory(question.text, tuple(turns), max_turns=max(max_turns, len(turns)))
        verdicts.append(judge.judge(build_query(partial, t)))

    for t in range(1, max_turns + 1):
        body.append("<think>")
        if t == 1:
            reasoning = f"i need to answer : {question.text}"
            body.extend(reasoning.split())
        else:
            body.extend(["the", "results", "mention"])
            obj = take(SLOT_OBJ, t)
            body.append(".")
            reasoning = f"the results mention {obj} ."
        body.append("</think>")

        action = take(SLOT_ACTION, t)
        if action == "<search>":
            q_ent = take(SLOT_QUERY_ENT, t)
            q_rel = take(SLOT_QUERY_REL, t)
            body.append("</search>")
            query = f"{q_ent} {q_rel}"
            docs = retrieve(world, query, k)
            body.append("<information>")
            body.extend(info_text(docs).split())
            body.append("</information>")
            turns.append(Turn(reasoning, query, tuple(docs)))
            judge_turn(t)
        elif action == "<answer>":
            turns.append(Turn(reasoning))
            judge_turn(t)
            answer = take(SLOT_ANSWER, t)
            body.append("</answer>")
            final_answer = answer
            outcome = exact_match(answer, question.golden_answer)
            break
        else:
            # stray token at the action slot: a no-op turn; the token is not
            # emitted, so the stream still parses
            body.pop()
            del free_logp[len(body)]
            malformed += 1
            turns.append(Turn(reasoning))
            judge_turn(t)

    traj = Trajectory(
        query=question.text,
        turns=tuple(turns),
        final_answer=final_answer,
        max_turns=max_turns,
    )
    tokens = tokenize(traj)
    assert list(tokens.tokens) == body, "rollout stream diverged from tokenizer"
    old_logp = np.zeros(len(body), dtype=np.float64)
    free_mask = np.zeros(len(body), dtype=bool)
    for pos, logp in free_logp.items():
        old_logp[pos] = logp
        free_mask[pos] = True
    raw_steps = [aggregate_or_zero(v) for v in verdicts]
    return RolloutResult(
        trajectory=traj,
        tokens=tokens,
        raw_steps=raw_steps,
        verdicts=verdicts,
        outcome=outcome,
        old_logp=old_logp,
        free_mask=free_mask,
        malformed_moves=malformed,
    )


class RandomSampler:
    """Uniform over the action vocabulary; the chaos baseline."""

    def __init__(self, vocab: tuple[str, ...]):
        self.vocab = tuple(vocab)
        self._logp = -float(np.log(len(self.vocab)))

    def act(self, ctx, slot, view, rng) -> tuple[str, float]:
        return self.vocab[int(rng.integers(len(self.vocab)))], self._logp


@dataclass
class GoldSampler:
    """Follows the gold retrieval chain and answers correctly.

    wrong_answer corrupts only the final answer token (good steps, failed
    outcome); duplicate_search inserts one redundant repeat of the previous
    query before answering (one bad step, intact outcome; needs a turn of
    slack in max_turns).
    """

    world: World
    question: Question
    wrong_answer: bool = False
    duplicate_search: bool = False
    _dup_done: bool = field(default=False, repr=False)

    def act(self, ctx, slot, view: RolloutView, rng) -> tuple[str, float]:
        chain = gold_chain(self.world, self.question)
        seen = {d.title for t in view.turns if t.retrieved_info for d in t.retrieved_info}
        flags = resolved_flags(chain, seen)
        complete = all(flags)
        seek = None if complete else chain[flags.index(False)]
        claim = None
        for fact, done in zip(chain, flags):
            if done:
                claim = fact
        dup_now = self.duplicate_search and complete and not self._dup_done

        if slot == SLOT_OBJ:
            return (claim or chain[0]).obj, 0.0
        if slot == SLOT_ACTION:
            if dup_now or not complete:
                return "<search>", 0.0
            return "<answer>", 0.0
        if slot == SLOT_QUERY_ENT:
            if dup_now:
                return view.turns[-1].search_query.split()[0], 0.0
            return (seek or chain[-1]).subject, 0.0
        if slot == SLOT_QUERY_REL:
            if dup_now:
                self._dup_done = True
                return view.turns[-1].search_query.split()[1], 0.0
            return (seek or chain[-1]).relation, 0.0
        if slot == SLOT_ANSWER:
            if self.wrong_answer:
                wrong = next(
                    e for e in sorted(self.world.entities) if e != self.question.golden_answer
                )
                return wrong, 0.0
            return self.question.golden_answer, 0.0
        raise ValueError(f"unknown slot {slot!r}")
