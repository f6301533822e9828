"""Synthetic fact-chain task family and a rule-based scripted generator.

Each task is a chain of single-fact hops ("the R of X is Y"); the question
composes the chain and the per-task corpus carries one document per hop.
The generator resolves as many hops as the facts in front of it allow, so
the number of rounds a task takes equals the number of hops that still have
to be fetched one document at a time. Seen/unseen pairs share a hop prefix:
a retrieved log of the seen task hands the generator those hops for free,
which is what makes iteration counts drop when logs are injected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .backends import GeneratorBackend, question_of_prompt
from .datasets import TaskRecord

_FACT_RE = re.compile(r"[Tt]he ([a-z0-9]+) of ([a-z0-9]+) is ([a-z0-9]+)\.")
_REL_RE = re.compile(r"the ([a-z0-9]+) of")
_BASE_RE = re.compile(r"of ([a-z0-9]+)\?")


def fact_sentence(rel: str, ent: str, val: str) -> str:
    return f"The {rel} of {ent} is {val}."


def chain_question(rels: list[str], base: str) -> str:
    inner = base
    for rel in rels:
        inner = f"the {rel} of {inner}"
    return f"What is {inner}?"


def parse_chain(question: str) -> tuple[list[str], str]:
    """Relations in application order (innermost first) and the base entity."""
    rels = _REL_RE.findall(question)
    base = _BASE_RE.search(question)
    if not rels or base is None:
        raise ValueError(f"not a chain question: {question!r}")
    return list(reversed(rels)), base.group(1)


class FactChainGenerator(GeneratorBackend):
    """Resolves chain questions from facts visible in the prompt documents
    and in retrieved log content; answers once the chain is complete,
    otherwise asks for the first missing hop."""

    accepts_kv_prefix = True

    def generate(self, messages, kv_prefix=None, log_entries=None) -> str:
        content = messages[-1]["content"]
        question = question_of_prompt(content)
        rels, base = parse_chain(question)

        facts: dict[tuple[str, str], str] = {}
        for rel, ent, val in _FACT_RE.findall(content):
            facts[(rel, ent)] = val
        for entry in log_entries or []:
            text = entry.text_payload or entry.retrieval_key_text
            for rel, ent, val in _FACT_RE.findall(text):
                facts[(rel, ent)] = val

        current = base
        resolved: list[tuple[str, str, str]] = []
        missing: tuple[str, str] | None = None
        for rel in rels:
            nxt = facts.get((rel, current))
            if nxt is None:
                missing = (rel, current)
                break
            resolved.append((rel, current, nxt))
            current = nxt

        lines = [fact_sentence(r, e, v) for r, e, v in resolved]
        if missing is None:
            lines.append(f"<ans>{current}</ans>")
        else:
            lines.append(f"<keywords>{missing[0]} {missing[1]}</keywords>")
        return "\n".join(lines)


@dataclass
class ChainSpec:
    family: int
    role: str  # "seen" | "unseen"
    rels: list[str]
    entities: list[str]  # base followed by one entity per hop

    @property
    def answer(self) -> str:
        return self.entities[-1]


def _make_task(spec: ChainSpec, distractors: list[tuple[str, str]]) -> TaskRecord:
    question = chain_question(spec.rels, spec.entities[0])
    corpus = [
        (
            f"{spec.entities[i]} {rel}",
            fact_sentence(rel, spec.entities[i], spec.entities[i + 1]),
        )
        for i, rel in enumerate(spec.rels)
    ]
    return TaskRecord(
        id=f"f{spec.family}-{spec.role}",
        question=question,
        answers=[spec.answer],
        corpus=corpus + distractors,
    )


def build_reuse_suite(
    overlaps: tuple[int, ...] = (3, 2, 1, 0), hops: int = 4
) -> tuple[list[TaskRecord], list[TaskRecord]]:
    """(seen, unseen) task lists; unseen task i shares the first
    ``overlaps[i]`` hops with its seen counterpart. The overlap-3 pair is
    the flagship: standard mode needs 4 rounds, log reuse leaves 2."""
    seen, unseen = [], []
    for fam, overlap in enumerate(overlaps):
        if not 0 <= overlap < hops:
            raise ValueError("overlap must be in [0, hops)")
        shared_rels = [f"r{fam}s{i}" for i in range(hops)]
        shared_ents = [f"e{fam}s{i}" for i in range(hops + 1)]
        seen_spec = ChainSpec(fam, "seen", shared_rels, shared_ents)

        u_rels = shared_rels[:overlap] + [f"r{fam}u{i}" for i in range(overlap, hops)]
        u_ents = shared_ents[: overlap + 1] + [
            f"e{fam}u{i}" for i in range(overlap + 1, hops + 1)
        ]
        unseen_spec = ChainSpec(fam, "unseen", u_rels, u_ents)

        noise = [
            (f"z{fam}n{j}", f"The z{fam}q{j} of z{fam}a{j} is z{fam}b{j}.")
            for j in range(2)
        ]
        seen.append(_make_task(seen_spec, noise))
        unseen.append(_make_task(unseen_spec, noise))
    return seen, unseen
