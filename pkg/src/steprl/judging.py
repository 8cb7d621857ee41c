"""Step judging: query construction, verdict parsing, oracle and remote judges.

A judge scores one turn of a trajectory against a small principle set and
answers in a fixed two-line format whose second line carries
``<final_score>SCORE,MAX_SCORE</final_score>``. Two backends implement it:

* OracleJudge: deterministic scoring against the synthetic world's gold
  chain (the stand-in for a trained generative reward model).
* RemoteJudge: HTTP client for any generative judge speaking the wire
  format {system, user, temperature} -> plain-text body.
"""

from __future__ import annotations

import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from .rewards import aggregate_step
from .traj import Trajectory, _turn_blocks, parse, render
from .world import (
    Question,
    World,
    gold_chain,
    norm_tokens,
    resolve_question,
    resolved_flags,
)

_FINAL_SCORE_RE = re.compile(r"<final_score>(.*?)</final_score>", re.DOTALL)
_ANALYSIS_LINE_RE = re.compile(r"^\s*(?:\d+\.\s*)?analysis\s*:", re.IGNORECASE | re.MULTILINE)
_SCORES_LINE_RE = re.compile(r"^\s*(?:\d+\.\s*)?scores\s*:", re.IGNORECASE | re.MULTILINE)


class OutOfRange(IndexError):
    """Turn index outside 1..len(turns)."""


@dataclass(frozen=True)
class Principle:
    id: int
    description: str
    max_score: int


DEFAULT_PRINCIPLES = (
    Principle(1, "Whether it correctly extracts information from <information> based on the query.", 2),
    Principle(2, "Whether it provides correct search query for <search>.", 2),
    Principle(3, "Whether it correctly decides conduct or not conduct <search>.", 2),
)


def principles_from_file(path: str | Path) -> tuple[Principle, ...]:
    """Load a principle set from a JSON list of {id, description, max_score}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    principles = tuple(Principle(p["id"], p["description"], p["max_score"]) for p in data)
    if len({p.id for p in principles}) != len(principles):
        raise ValueError("principle ids must be unique")
    return principles


def build_system_prompt(principles: Sequence[Principle] = DEFAULT_PRINCIPLES) -> str:
    lines = "\n".join(f"{i}. {p.description}" for i, p in enumerate(principles, 1))
    return (
        "You are a very strict and skilled evaluator.\n"
        "Given Query and Response pair, you should only evaluate the Response. "
        "This Response is one turn of multi-turn response, so it is acceptable "
        "that the response does not have final answer.\n"
        "\n"
        "For evaluation, generate reasonable principles and score each principle individually.\n"
        "The most important principles you can refer are:\n"
        f"{lines}\n"
        "\n"
        "Every string in Response must be wrapped in <think></think>, "
        "<search></search>, <information></information>, or <answer></answer>. "
        "Otherwise, set the output SCORE to 0.\n"
        "\n"
        "[Output Format Requirements]\n"
        "Respond in exactly two lines:\n"
        "1. Analysis: Explain the reasoning and individual scores for each principle.\n"
        "2. Scores: <final_score>SCORE,MAX_SCORE</final_score>. e.g., <final_score>4,6</final_score>."
    )


EVALUATOR_SYSTEM_PROMPT = build_system_prompt()


def build_user_prompt(context: str, step: str) -> str:
    return f"[Conversation Context]\nQuery: {context}\nResponse: {step}"


@dataclass(frozen=True)
class JudgeQuery:
    """The (context, step) pair a judge evaluates.

    context is the user query plus the rendered turns before the judged one;
    step is the judged turn's own rendered segments (reasoning, search,
    information — never the final answer).
    """

    context: str
    step: str


def build_query(traj: Trajectory, t: int) -> JudgeQuery:
    """Judge query for 1-based turn t; context for t=1 is exactly the user query."""
    if not 1 <= t <= len(traj.turns):
        raise OutOfRange(f"turn {t} outside 1..{len(traj.turns)}")
    prefix = Trajectory(query=traj.query, turns=traj.turns[: t - 1], max_turns=traj.max_turns)
    return JudgeQuery(
        context=render(prefix),
        step="\n".join(_turn_blocks(traj.turns[t - 1])),
    )


@dataclass(frozen=True)
class JudgeVerdict:
    analysis: str
    pairs: tuple[tuple[int, int], ...]
    valid: bool
    raw_response: str

    @classmethod
    def invalid(cls, raw_response: str) -> "JudgeVerdict":
        return cls(analysis="", pairs=(), valid=False, raw_response=raw_response)


def parse_verdict(response: str) -> JudgeVerdict:
    """Parse a judge response; never raises, validity is data.

    Valid iff an Analysis line and a Scores line are present and the last
    <final_score>S,M</final_score> holds integers with M > 0 and 0 <= S <= M.
    """
    analysis_m = _ANALYSIS_LINE_RE.search(response)
    scores_m = _SCORES_LINE_RE.search(response)
    score_tags = _FINAL_SCORE_RE.findall(response)
    if analysis_m is None or scores_m is None or not score_tags:
        return JudgeVerdict.invalid(response)
    parts = score_tags[-1].split(",")
    if len(parts) != 2:
        return JudgeVerdict.invalid(response)
    try:
        score, max_score = int(parts[0].strip()), int(parts[1].strip())
    except ValueError:
        return JudgeVerdict.invalid(response)
    if max_score <= 0 or not 0 <= score <= max_score:
        return JudgeVerdict.invalid(response)
    analysis = response[analysis_m.end() : scores_m.start()].strip()
    return JudgeVerdict(
        analysis=analysis, pairs=((score, max_score),), valid=True, raw_response=response
    )


def aggregate_or_zero(verdict: JudgeVerdict) -> float:
    """Raw step reward for a verdict; invalid judge output scores 0."""
    if not verdict.valid or not verdict.pairs:
        return 0.0
    return aggregate_step(verdict.pairs)


class JudgeBackend(Protocol):
    """Anything that can score a judge query."""

    def judge(self, query: JudgeQuery) -> JudgeVerdict: ...


class OracleJudge:
    """Deterministic judge over a synthetic world.

    Scores one pair per applicable principle (2 points each):

    * extraction — applicable when any information is visible to the judge
      (prior turns' or the step's own); full marks iff every entity the
      reasoning names is grounded in the question or previously retrieved
      text (no fabricated facts), and the object of the newest gold-chain
      fact retrieved so far is restated once one exists.
    * query quality — applicable when the step searched; full marks iff the
      query names the current target entity of the gold chain.
    * search decision — always applicable; full marks iff the step searched
      exactly when chain facts were still missing and did not repeat an
      earlier query.

    Pure function of (query, world): the question and gold chain are
    recovered from the context's query line.
    """

    def __init__(self, world: World):
        self.world = world
        self._entity_tokens = {e.lower() for e in world.entities}

    def judge(self, query: JudgeQuery) -> JudgeVerdict:
        context = parse(query.context)
        question = resolve_question(self.world, context.trajectory.query)
        step = parse(query.step)
        if step.violations or len(step.trajectory.turns) != 1:
            return _verdict([("malformed step", 0, 2)])
        return self.judge_turn(question, context.trajectory.turns, step.trajectory.turns[0])

    def judge_turn(self, question: Question, prior_turns, turn) -> JudgeVerdict:
        """Structured entry point used by the rollout loop (same scoring)."""
        chain = gold_chain(self.world, question)
        seen_titles = {
            d.title for t in prior_turns if t.retrieved_info for d in t.retrieved_info
        }
        seen_queries = {t.search_query for t in prior_turns if t.searched}
        flags = resolved_flags(chain, seen_titles)
        complete = all(flags)
        target = None if complete else chain[flags.index(False)].subject

        scored: list[tuple[str, int, int]] = []
        info_visible = bool(seen_titles) or turn.retrieved_info is not None
        if info_visible:
            resolved = [f for f, done in zip(chain, flags) if done]
            toks = norm_tokens(turn.reasoning)
            grounded = set(norm_tokens(question.text))
            for t in prior_turns:
                if t.retrieved_info:
                    for d in t.retrieved_info:
                        grounded.update(norm_tokens(f"{d.title} {d.body}"))
            ok = all(t in grounded for t in toks if t in self._entity_tokens)
            if resolved:
                ok = ok and resolved[-1].obj.lower() in toks
            scored.append(("extraction", 2 if ok else 0, 2))
        if turn.searched:
            hit = target is not None and target.lower() in norm_tokens(turn.search_query)
            scored.append(("query", 2 if hit else 0, 2))
            decision_ok = not complete and turn.search_query not in seen_queries
        else:
            decision_ok = complete
        scored.append(("decision", 2 if decision_ok else 0, 2))
        return _verdict(scored)


def _verdict(scored: list[tuple[str, int, int]]) -> JudgeVerdict:
    analysis = "; ".join(f"{name} {s}/{m}" for name, s, m in scored)
    total = sum(s for _, s, _ in scored)
    total_max = sum(m for _, _, m in scored)
    return JudgeVerdict(
        analysis=analysis,
        pairs=tuple((s, m) for _, s, m in scored),
        valid=True,
        raw_response=f"Analysis: {analysis}\nScores: <final_score>{total},{total_max}</final_score>",
    )


@dataclass
class JudgeStats:
    calls: int = 0
    valid: int = 0
    retries: int = 0
    total_latency: float = 0.0

    @property
    def valid_rate(self) -> float:
        return self.valid / self.calls if self.calls else 0.0


class RemoteJudge:
    """HTTP client for a generative judge.

    POSTs {"system", "user", "temperature"} as JSON and reads the response
    body as plain text. Transport errors and 5xx responses are retried up
    to max_retries extra attempts; on exhaustion the verdict is marked
    invalid rather than raised, so training degrades instead of dying.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 30.0,
        max_retries: int = 2,
        temperature: float = 0.0,
        system_prompt: str = EVALUATOR_SYSTEM_PROMPT,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.max_retries = max_retries
        self.temperature = temperature
        self.system_prompt = system_prompt
        self.stats = JudgeStats()
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def judge(self, query: JudgeQuery) -> JudgeVerdict:
        payload = {
            "system": self.system_prompt,
            "user": build_user_prompt(query.context, query.step),
            "temperature": self.temperature,
        }
        self.stats.calls += 1
        start = time.monotonic()
        last_error = "no attempt made"
        try:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    self.stats.retries += 1
                try:
                    response = self._client.post(self.endpoint, json=payload)
                except httpx.TransportError as exc:
                    last_error = f"transport error: {exc}"
                    continue
                if response.status_code >= 500:
                    last_error = f"server error: {response.status_code}"
                    continue
                if response.status_code != 200:
                    return JudgeVerdict.invalid(f"http {response.status_code}")
                verdict = parse_verdict(response.text)
                if verdict.valid:
                    self.stats.valid += 1
                return verdict
            return JudgeVerdict.invalid(last_error)
        finally:
            self.stats.total_latency += time.monotonic() - start

    def close(self) -> None:
        self._client.close()


def judge_many(
    judge: JudgeBackend, queries: Sequence[JudgeQuery], concurrency: int = 1
) -> list[JudgeVerdict]:
    """Score queries, optionally concurrently; results keep input order."""
    if concurrency <= 1 or len(queries) <= 1:
        return [judge.judge(q) for q in queries]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(judge.judge, queries))
