"""Action tags emitted by the generator inside assistant messages."""

from __future__ import annotations

import re
from dataclasses import dataclass

ANSWER = "answer"
FOLLOWUP = "followup_query"
SUBQUESTION = "subquestion"
NONE = "none"

_TAG_KIND = {"ans": ANSWER, "keywords": FOLLOWUP, "subquestion": SUBQUESTION}
_TAG_RE = re.compile(r"<(ans|keywords|subquestion)>(.*?)</\1>", re.DOTALL)


@dataclass(frozen=True)
class Action:
    kind: str = NONE
    payload: str = ""


def extract_action(assistant_text: str) -> Action:
    """Last well-formed tag pair wins; an <ans> pair beats the other kinds
    regardless of order. No tag at all yields kind 'none'."""
    matches = list(_TAG_RE.finditer(assistant_text or ""))
    if not matches:
        return Action(NONE)
    answers = [m for m in matches if m.group(1) == "ans"]
    m = answers[-1] if answers else matches[-1]
    return Action(_TAG_KIND[m.group(1)], m.group(2).strip())


def find_last_action_span(text: str) -> tuple[int, int] | None:
    """Character span of the payload of the LAST well-formed tag pair (any
    kind, no precedence); tags themselves are excluded. None when the text
    carries no action."""
    matches = list(_TAG_RE.finditer(text or ""))
    if not matches:
        return None
    m = matches[-1]
    return m.start(2), m.end(2)
