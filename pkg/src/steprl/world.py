"""Synthetic search world: entities, facts, retriever, questions.

A world is a deterministic fact table (one (subject, relation, object)
triple per entity/relation pair, each rendered to one titled document), a
lexical top-k retriever over those documents, and template-rendered 1-hop /
2-hop questions with known golden answers and known gold retrieval chains.
Entity and relation names are single whitespace tokens so that queries and
answers are single policy actions.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .traj import Doc, Trajectory

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

_NAME_PREFIXES = (
    "Bran", "Dor", "Vel", "Mar", "Quor", "Fen", "Hal", "Rin", "Sol", "Ver",
    "Zan", "Kel", "Nov", "Pex", "Gur", "Tav", "Lum", "Ost", "Yar", "Cro",
)
_NAME_SUFFIXES = (
    "vik", "mond", "ric", "dale", "shan", "tor", "bel", "wyn", "gard", "fell",
    "mor", "dun", "holt", "grim", "stad", "lowe",
)
_RELATION_POOL = (
    "mentor", "founder", "patron", "rival", "successor", "employer",
    "architect", "curator", "sponsor", "guardian", "translator", "librarian",
    "chronicler", "envoy", "steward", "apprentice", "cartographer",
    "benefactor", "herald", "warden", "archivist", "tutor", "biographer",
    "navigator",
)

_ONE_HOP_RE = re.compile(r"^What is the (\w+) of (\w+)\?$")
_TWO_HOP_RE = re.compile(r"^What is the (\w+) of the (\w+) of (\w+)\?$")


class WorldMismatch(ValueError):
    """A question or entity does not belong to this world."""


def norm_tokens(text: str) -> list[str]:
    """Lowercased, punctuation-stripped word tokens (used for overlap scoring)."""
    return [w for w in (t.translate(_PUNCT_TABLE) for t in text.lower().split()) if w]


@dataclass(frozen=True)
class ChainFact:
    """One hop of a question's gold retrieval chain."""

    subject: str
    relation: str
    obj: str
    doc_title: str


@dataclass(frozen=True)
class Question:
    text: str
    golden_answer: str
    hops: int
    bridge_entity: str | None = None
    subject: str = ""
    relations: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"text": self.text, "golden_answer": self.golden_answer, "hops": self.hops}


@dataclass
class World:
    """Immutable after generation; retrieval and lookups are pure."""

    seed: int
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    facts: tuple[tuple[str, str, str], ...]
    docs: tuple[Doc, ...] = ()
    _by_pair: dict = field(default_factory=dict, repr=False)
    _doc_tokens: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.docs:
            self.docs = tuple(
                Doc(title=f"{s} {r}", body=f"The {r} of {s} is {o}.") for s, r, o in self.facts
            )
        self._by_pair = {(s, r): o for s, r, o in self.facts}
        self._doc_tokens = [
            (set(norm_tokens(d.title)), set(norm_tokens(d.body))) for d in self.docs
        ]

    def fact_object(self, subject: str, relation: str) -> str:
        try:
            return self._by_pair[(subject, relation)]
        except KeyError:
            raise WorldMismatch(f"no fact for ({subject}, {relation})") from None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "entities": list(self.entities),
            "relations": list(self.relations),
            "facts": [list(f) for f in self.facts],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "World":
        return cls(
            seed=data["seed"],
            entities=tuple(data["entities"]),
            relations=tuple(data["relations"]),
            facts=tuple(tuple(f) for f in data["facts"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "World":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_world(seed: int, n_entities: int, n_relations: int) -> World:
    """Build a deterministic world with n_entities * n_relations facts."""
    if n_entities < 4:
        raise ValueError("need at least 4 entities")
    if n_relations < 2:
        raise ValueError("need at least 2 relations")
    combos = [p + s for p in _NAME_PREFIXES for s in _NAME_SUFFIXES]
    if n_entities > len(combos):
        raise ValueError(f"at most {len(combos)} entities supported")
    rng = np.random.default_rng(seed)
    entities = tuple(combos[i] for i in rng.permutation(len(combos))[:n_entities])
    relations = list(_RELATION_POOL[:n_relations])
    for i in range(len(relations), n_relations):
        relations.append(f"bond{i}")
    facts = []
    for s in entities:
        for r in relations:
            o = s
            while o == s:  # self-referential facts read badly and break 2-hop bridges
                o = entities[int(rng.integers(n_entities))]
            facts.append((s, r, o))
    return World(seed=seed, entities=entities, relations=tuple(relations), facts=tuple(facts))


def retrieve(world: World, query: str, k: int) -> list[Doc]:
    """Top-k docs by token overlap (title tokens weighted double), ties by title."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = set(norm_tokens(query))
    scored = []
    for doc, (title_toks, body_toks) in zip(world.docs, world._doc_tokens):
        score = 2 * len(q & title_toks) + len(q & body_toks)
        scored.append((-score, doc.title, doc))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [doc for _, _, doc in scored[: min(k, len(scored))]]


def one_hop_question(world: World, subject: str, relation: str) -> Question:
    return Question(
        text=f"What is the {relation} of {subject}?",
        golden_answer=world.fact_object(subject, relation),
        hops=1,
        subject=subject,
        relations=(relation,),
    )


def two_hop_question(world: World, subject: str, rel1: str, rel2: str) -> Question:
    bridge = world.fact_object(subject, rel1)
    return Question(
        text=f"What is the {rel2} of the {rel1} of {subject}?",
        golden_answer=world.fact_object(bridge, rel2),
        hops=2,
        bridge_entity=bridge,
        subject=subject,
        relations=(rel1, rel2),
    )


def generate_questions(world: World, n: int, hops: int, seed: int = 0) -> list[Question]:
    """Deterministically sample n distinct questions of the given hop count."""
    rng = np.random.default_rng(seed)
    if hops == 1:
        combos = [(s, r) for s in world.entities for r in world.relations]
        order = rng.permutation(len(combos))
        picked = [combos[i] for i in order[:n]]
        if len(picked) < n:
            raise ValueError(f"only {len(picked)} distinct 1-hop questions available")
        return [one_hop_question(world, s, r) for s, r in picked]
    if hops == 2:
        combos = [
            (s, r1, r2)
            for s in world.entities
            for r1 in world.relations
            for r2 in world.relations
            if world.fact_object(s, r1) != s
        ]
        order = rng.permutation(len(combos))
        questions = []
        for i in order:
            s, r1, r2 = combos[int(i)]
            questions.append(two_hop_question(world, s, r1, r2))
            if len(questions) == n:
                return questions
        raise ValueError(f"only {len(questions)} distinct 2-hop questions available")
    raise ValueError("hops must be 1 or 2")


def resolve_question(world: World, text: str) -> Question:
    """Recover a Question (and its gold chain) from rendered question text."""
    m = _TWO_HOP_RE.match(text.strip())
    if m:
        rel2, rel1, subject = m.groups()
        _require(world, subject, rel1, rel2)
        return two_hop_question(world, subject, rel1, rel2)
    m = _ONE_HOP_RE.match(text.strip())
    if m:
        rel, subject = m.groups()
        _require(world, subject, rel)
        return one_hop_question(world, subject, rel)
    raise WorldMismatch(f"unrecognized question: {text!r}")


def _require(world: World, subject: str, *relations: str) -> None:
    if subject not in world.entities:
        raise WorldMismatch(f"unknown entity {subject!r}")
    for r in relations:
        if r not in world.relations:
            raise WorldMismatch(f"unknown relation {r!r}")


def gold_chain(world: World, question: Question) -> tuple[ChainFact, ...]:
    """The ordered facts a rollout must retrieve to answer the question."""
    chain = []
    subject = question.subject
    for relation in question.relations:
        obj = world.fact_object(subject, relation)
        chain.append(ChainFact(subject, relation, obj, f"{subject} {relation}"))
        subject = obj
    return tuple(chain)


def resolved_flags(chain: Sequence[ChainFact], doc_titles: set[str]) -> list[bool]:
    return [fact.doc_title in doc_titles for fact in chain]


def reasoning_contradicts(reasoning: str, chain: Sequence[ChainFact]) -> bool:
    """True iff the reasoning asserts "the R of S is X" with X not the gold object."""
    toks = norm_tokens(reasoning)
    for fact in chain:
        pattern = ["the", fact.relation.lower(), "of", fact.subject.lower(), "is"]
        for i in range(len(toks) - len(pattern)):
            if toks[i : i + len(pattern)] == pattern:
                claimed = toks[i + len(pattern)]
                if claimed != fact.obj.lower():
                    return True
    return False


def gold_step_labels(world: World, question: Question, traj: Trajectory) -> list[int]:
    """Binary per-turn correctness labels under the gold-chain rule.

    A searching turn is correct iff the chain is still incomplete, the query
    names the current target entity, the query is not an exact duplicate of
    an earlier one, and the reasoning does not contradict a chain fact. A
    non-searching turn is correct iff the chain was already complete and the
    reasoning does not contradict.
    """
    chain = gold_chain(world, question)
    labels: list[int] = []
    seen_titles: set[str] = set()
    seen_queries: list[str] = []
    for turn in traj.turns:
        flags = resolved_flags(chain, seen_titles)
        complete = all(flags)
        target = None if complete else chain[flags.index(False)].subject
        ok = not reasoning_contradicts(turn.reasoning, chain)
        if turn.searched:
            dup = turn.search_query in seen_queries
            hit = target is not None and target.lower() in norm_tokens(turn.search_query)
            labels.append(int(ok and hit and not dup))
            seen_queries.append(turn.search_query)
            seen_titles.update(d.title for d in turn.retrieved_info)
        else:
            labels.append(int(ok and complete))
    return labels


def save_questions(questions: Iterable[Question], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps(q.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def load_questions(world: World, path: str | Path) -> list[Question]:
    questions = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                questions.append(resolve_question(world, json.loads(line)["text"]))
    return questions
