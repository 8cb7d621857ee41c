"""Trajectory data model and the tagged-text grammar.

A trajectory is a user query followed by turns of reasoning / search /
retrieved information, optionally ending in a final answer:

    <think> ... </think>
    <search> ... </search>
    <information> Doc 1(Title: "...") ... </information>
    ...
    <answer> ... </answer>

This module defines the structured types (Doc, Turn, Trajectory,
TokenSequence), the bidirectional text mapping (render / parse, with a
tolerant mode that records grammar violations instead of aborting), the
deterministic whitespace tokenizer, and JSONL persistence.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

TAGS = ("think", "search", "information", "answer")
_TAG_RE = re.compile(r"</?(think|search|information|answer)>")
_DOC_RE = re.compile(r'Doc\s+\d+\(Title:\s*"([^"]*)"\)\s*')

# Token segment labels. The <information> delimiters count as part of the
# info span (they are produced by the environment, not the policy).
SEG_REASONING = "reasoning"
SEG_SEARCH = "search"
SEG_INFO = "info"
SEG_ANSWER = "answer"
SEG_TAG = "tag"


class MalformedTrajectory(ValueError):
    """Raised by strict parse at the first grammar violation."""

    def __init__(self, message: str, byte_offset: int, expected: str):
        super().__init__(f"{message} at byte {byte_offset} (expected {expected})")
        self.byte_offset = byte_offset
        self.expected = expected


@dataclass(frozen=True)
class Doc:
    """One retrieved document: a short titled passage."""

    title: str
    body: str

    def to_dict(self) -> dict:
        return {"title": self.title, "body": self.body}

    @classmethod
    def from_dict(cls, data: dict) -> "Doc":
        return cls(title=data["title"], body=data["body"])


@dataclass(frozen=True)
class Turn:
    """One rollout turn: reasoning plus an optional search and its results.

    retrieved_info is present iff search_query is present; a turn with
    neither search nor answer is a "no-op" turn (legal, but it burns
    rollout budget and scores zero on the search-decision principle).
    """

    reasoning: str
    search_query: str | None = None
    retrieved_info: tuple[Doc, ...] | None = None

    def __post_init__(self):
        if (self.search_query is None) != (self.retrieved_info is None):
            raise ValueError("retrieved_info must be present iff search_query is present")
        if self.retrieved_info is not None and not isinstance(self.retrieved_info, tuple):
            object.__setattr__(self, "retrieved_info", tuple(self.retrieved_info))

    @property
    def searched(self) -> bool:
        return self.search_query is not None


@dataclass(frozen=True)
class Trajectory:
    """A full rollout: query, ordered turns, optional final answer.

    max_turns is the rollout budget, not a property of the text; parse()
    cannot recover it and takes it as an argument.
    """

    query: str
    turns: tuple[Turn, ...] = ()
    final_answer: str | None = None
    max_turns: int = 1

    def __post_init__(self):
        if not isinstance(self.turns, tuple):
            object.__setattr__(self, "turns", tuple(self.turns))

    def validate(self) -> None:
        """Check the structural invariants; raises ValueError on breach."""
        if self.max_turns < 1:
            raise ValueError("max_turns must be positive")
        if len(self.turns) > self.max_turns:
            raise ValueError(f"{len(self.turns)} turns exceed max_turns={self.max_turns}")
        for i, turn in enumerate(self.turns):
            last = i == len(self.turns) - 1
            if not turn.reasoning.strip() and not turn.searched:
                if not (last and self.final_answer is not None):
                    raise ValueError(f"turn {i + 1} has neither reasoning nor search")

    def structurally_equal(self, other: "Trajectory") -> bool:
        """Equality over text-recoverable content (ignores max_turns)."""
        return (
            self.query == other.query
            and self.turns == other.turns
            and self.final_answer == other.final_answer
        )

    def to_dict(self) -> dict:
        turns = []
        for t in self.turns:
            turns.append(
                {
                    "reasoning": t.reasoning,
                    "search": t.search_query,
                    "docs": [d.to_dict() for d in t.retrieved_info] if t.retrieved_info is not None else None,
                }
            )
        return {
            "query": self.query,
            "turns": turns,
            "answer": self.final_answer,
            "meta": {"max_turns": self.max_turns},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        turns = []
        for t in data.get("turns", ()):
            docs = t.get("docs")
            turns.append(
                Turn(
                    reasoning=t.get("reasoning", ""),
                    search_query=t.get("search"),
                    retrieved_info=tuple(Doc.from_dict(d) for d in docs) if docs is not None else None,
                )
            )
        meta = data.get("meta") or {}
        return cls(
            query=data.get("query", ""),
            turns=tuple(turns),
            final_answer=data.get("answer"),
            max_turns=meta.get("max_turns", max(len(turns), 1)),
        )


@dataclass(frozen=True)
class Violation:
    """One grammar violation found by tolerant parse."""

    kind: str
    byte_offset: int
    message: str


@dataclass
class ParseResult:
    trajectory: Trajectory
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def info_text(docs: Iterable[Doc]) -> str:
    """Render retrieved docs as the text placed inside <information> tags."""
    return "\n".join(f'Doc {i}(Title: "{d.title}") {d.body}' for i, d in enumerate(docs, 1))


def parse_info_text(content: str) -> tuple[Doc, ...]:
    """Split information-block text back into docs (inverse of info_text)."""
    matches = list(_DOC_RE.finditer(content))
    if not matches:
        stripped = content.strip()
        return (Doc(title="", body=stripped),) if stripped else ()
    docs = []
    for m, nxt in zip(matches, matches[1:] + [None]):
        end = nxt.start() if nxt is not None else len(content)
        docs.append(Doc(title=m.group(1), body=content[m.end():end].strip()))
    return tuple(docs)


def _turn_blocks(turn: Turn) -> list[str]:
    blocks = [f"<think> {turn.reasoning} </think>"]
    if turn.searched:
        blocks.append(f"<search> {turn.search_query} </search>")
        blocks.append(f"<information> {info_text(turn.retrieved_info)} </information>")
    return blocks


def render(traj: Trajectory) -> str:
    """Render a trajectory to tagged text: query line, turn blocks, answer.

    Inverse of parse() for valid trajectories whose text fields are
    whitespace-trimmed and contain no tag-like substrings.
    """
    parts = [traj.query]
    for turn in traj.turns:
        parts.extend(_turn_blocks(turn))
    if traj.final_answer is not None:
        parts.append(f"<answer> {traj.final_answer} </answer>")
    return "\n".join(parts)


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def parse(text: str, *, strict: bool = False, max_turns: int | None = None) -> ParseResult:
    """Parse tagged text back into a Trajectory.

    Tolerant by default: malformed spans (unclosed tags, closes without an
    open, text outside tags, a search with no information block, ...) are
    recorded as violations and recovery continues, so training-time rollout
    text never crashes the caller. With strict=True the first violation
    raises MalformedTrajectory with its byte offset and the expected tag.
    """
    violations: list[Violation] = []

    def violate(kind: str, pos: int, message: str, expected: str) -> None:
        if strict:
            raise MalformedTrajectory(message, _byte_offset(text, pos), expected)
        violations.append(Violation(kind, _byte_offset(text, pos), message))

    # Pass 1: lex into closed blocks of (kind, content, pos), recovering
    # from unopened/unclosed tags so that each defect costs one violation.
    blocks: list[tuple[str, str, int]] = []
    tags = list(_TAG_RE.finditer(text))
    query = text[: tags[0].start()].strip() if tags else text.strip()
    cursor = tags[0].end() if tags else len(text)
    open_kind: str | None = None
    open_at = 0  # content start of the open block

    def gap_before(pos: int) -> str:
        return text[cursor:pos]

    for i, m in enumerate(tags):
        kind = m.group(1)
        closing = m.group(0).startswith("</")
        if i == 0:
            # the leading text is the query line, not a violation
            if closing:
                violate("unopened_tag", m.start(), f"</{kind}> without <{kind}>", f"<{kind}>")
                blocks.append((kind, query, m.start()))
                query = ""
            else:
                open_kind, open_at = kind, m.end()
            cursor = m.end()
            continue
        if closing:
            if open_kind == kind:
                blocks.append((kind, text[open_at : m.start()].strip(), m.start()))
                open_kind = None
            elif open_kind is None:
                # recover: treat the text since the last block as the content
                violate("unopened_tag", m.start(), f"</{kind}> without <{kind}>", f"<{kind}>")
                blocks.append((kind, gap_before(m.start()).strip(), m.start()))
            else:
                violate(
                    "mismatched_tag", m.start(), f"</{kind}> closes <{open_kind}>", f"</{open_kind}>"
                )
                blocks.append((open_kind, text[open_at : m.start()].strip(), m.start()))
                open_kind = None
        else:
            if open_kind is not None:
                violate("unclosed_tag", m.start(), f"<{open_kind}> not closed", f"</{open_kind}>")
                blocks.append((open_kind, text[open_at : m.start()].strip(), m.start()))
            elif gap_before(m.start()).strip():
                violate("text_outside_tags", cursor, "text outside tags", "a tag")
            open_kind, open_at = kind, m.end()
        cursor = m.end()
    if open_kind is not None:
        violate("unclosed_tag", len(text), f"<{open_kind}> not closed at end of input", f"</{open_kind}>")
        blocks.append((open_kind, text[open_at:].strip(), len(text)))
    elif tags and text[cursor:].strip():
        violate("text_outside_tags", cursor, "trailing text outside tags", "a tag")

    # Pass 2: assemble blocks into turns.
    turns: list[Turn] = []
    final_answer: str | None = None
    reasoning: str | None = None
    pending_search: str | None = None
    pending_pos = 0

    def flush(search: str | None, docs: tuple[Doc, ...] | None) -> None:
        nonlocal reasoning, pending_search
        turns.append(Turn(reasoning or "", search, docs))
        reasoning = None
        pending_search = None

    def flush_dangling_search(pos: int) -> None:
        violate(
            "search_without_information", pos, "search without information", "<information>"
        )
        flush(pending_search, ())

    for kind, content, pos in blocks:
        if final_answer is not None:
            violate("content_after_answer", pos, f"<{kind}> after <answer>", "end of input")
            continue
        if kind == "think":
            if pending_search is not None:
                flush_dangling_search(pos)
            if reasoning is not None:
                flush(None, None)
            reasoning = content
        elif kind == "search":
            if pending_search is not None:
                flush_dangling_search(pos)
            if reasoning is None:
                violate("search_without_think", pos, "search with no preceding think", "<think>")
                reasoning = ""
            pending_search = content
            pending_pos = pos
        elif kind == "information":
            if pending_search is None:
                violate(
                    "information_without_search", pos, "information with no preceding search", "<search>"
                )
                continue
            flush(pending_search, parse_info_text(content))
        else:  # answer
            if pending_search is not None:
                flush_dangling_search(pos)
            if reasoning is not None:
                flush(None, None)
            final_answer = content
    if pending_search is not None:
        flush_dangling_search(pending_pos)
    elif reasoning is not None:
        flush(None, None)

    traj = Trajectory(
        query=query,
        turns=tuple(turns),
        final_answer=final_answer,
        max_turns=max_turns if max_turns is not None else max(len(turns), 1),
    )
    return ParseResult(trajectory=traj, violations=violations)


@dataclass(frozen=True)
class TokenSequence:
    """The flattened token stream of a trajectory body (query excluded).

    Tags are atomic tokens; other tokens are whitespace-split words.
    generated_mask is False exactly on info-segment tokens (the environment
    produced them, including the <information> delimiters). turn_of holds
    1-based turn indices; answer tokens map to n_turns + 1.
    """

    tokens: tuple[str, ...]
    segment_of: tuple[str, ...]
    generated_mask: tuple[bool, ...]
    turn_of: tuple[int, ...]
    turn_end_positions: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def final_position(self) -> int:
        if not self.tokens:
            raise ValueError("empty token sequence has no final position")
        return len(self.tokens) - 1


def tokenize(traj: Trajectory) -> TokenSequence:
    """Deterministic whitespace/tag tokenization of the trajectory body."""
    tokens: list[str] = []
    segments: list[str] = []
    mask: list[bool] = []
    turn_of: list[int] = []
    turn_ends: list[int] = []

    def add(tok: str, seg: str, generated: bool, turn: int) -> None:
        tokens.append(tok)
        segments.append(seg)
        mask.append(generated)
        turn_of.append(turn)

    for idx, turn in enumerate(traj.turns, 1):
        add("<think>", SEG_TAG, True, idx)
        for w in turn.reasoning.split():
            add(w, SEG_REASONING, True, idx)
        add("</think>", SEG_TAG, True, idx)
        if turn.searched:
            add("<search>", SEG_TAG, True, idx)
            for w in turn.search_query.split():
                add(w, SEG_SEARCH, True, idx)
            add("</search>", SEG_TAG, True, idx)
            add("<information>", SEG_INFO, False, idx)
            for w in info_text(turn.retrieved_info).split():
                add(w, SEG_INFO, False, idx)
            add("</information>", SEG_INFO, False, idx)
        turn_ends.append(len(tokens) - 1)
    if traj.final_answer is not None:
        answer_turn = len(traj.turns) + 1
        add("<answer>", SEG_TAG, True, answer_turn)
        for w in traj.final_answer.split():
            add(w, SEG_ANSWER, True, answer_turn)
        add("</answer>", SEG_TAG, True, answer_turn)

    return TokenSequence(
        tokens=tuple(tokens),
        segment_of=tuple(segments),
        generated_mask=tuple(mask),
        turn_of=tuple(turn_of),
        turn_end_positions=tuple(turn_ends),
    )


def save_jsonl(trajectories: Iterable[Trajectory], path: str | Path, metas: Iterable[dict] | None = None) -> int:
    """Write trajectories as JSONL; extra per-line meta dicts are merged in."""
    n = 0
    metas = list(metas) if metas is not None else None
    with open(path, "w", encoding="utf-8") as fh:
        for i, traj in enumerate(trajectories):
            record = traj.to_dict()
            if metas is not None:
                record["meta"].update(metas[i])
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            n += 1
    return n


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def load_jsonl(path: str | Path) -> list[Trajectory]:
    return [Trajectory.from_dict(rec) for rec in iter_jsonl(path)]
