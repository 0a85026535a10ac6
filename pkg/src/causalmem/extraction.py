"""Turn raw dialogue into atomic declarative facts, one LLM call per turn."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import prompts
from .errors import MalformedReply, ProviderError, ValidationError
from .model import DialogueTurn, Fact
from .providers import ChatRequest, ProviderSuite

logger = logging.getLogger(__name__)

_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")
_LETTER_RE = re.compile(r"[^\W\d_]", re.UNICODE)


def parse_fact_lines(reply: str) -> list[str]:
    """One fact per line; blank lines are skipped and list markers stripped.

    Raises MalformedReply when the reply has content but no line with a letter in it.
    """
    lines = []
    for raw in reply.splitlines():
        line = _BULLET_RE.sub("", raw).strip()
        if line and _LETTER_RE.search(line):
            lines.append(line)
    if not lines and reply.strip():
        raise MalformedReply("extraction reply has no parsable fact line", reply)
    return lines


def extract_facts(turn: DialogueTurn, suite: ProviderSuite) -> list[Fact]:
    request = ChatRequest(prompts.EXTRACTION_SYSTEM, prompts.extraction_user(turn.user_text, turn.assistant_text))
    reply = suite.chat(request, stage="extract")
    try:
        lines = parse_fact_lines(reply)
    except MalformedReply:
        logger.warning("turn %s/%d: malformed extraction reply %r", turn.session_id, turn.turn_index, reply[:80])
        return []
    return [Fact.create(text, turn.session_id, turn.turn_index, rank) for rank, text in enumerate(lines)]


def check_dialogue(dialogue: Sequence[DialogueTurn]) -> None:
    seen: set[tuple[str, int]] = set()
    for turn in dialogue:
        if turn.key in seen:
            raise ValidationError(f"duplicate turn {turn.session_id}/{turn.turn_index}")
        seen.add(turn.key)


def extract_corpus(dialogue: Sequence[DialogueTurn], suite: ProviderSuite) -> list[Fact]:
    """Extract every turn (concurrently) and merge in chronological order.

    Exact duplicate texts within one session keep only the first occurrence.
    A failing turn is logged and skipped; if every turn fails the first error
    is re-raised.
    """
    check_dialogue(dialogue)
    if not dialogue:
        return []

    def run(turn: DialogueTurn):
        try:
            return extract_facts(turn, suite), None
        except ProviderError as exc:
            logger.warning("turn %s/%d: extraction failed: %s", turn.session_id, turn.turn_index, exc)
            return [], exc

    with ThreadPoolExecutor(max_workers=max(1, suite.max_in_flight)) as pool:
        results = list(pool.map(run, dialogue))
    errors = [err for _, err in results if err is not None]
    if len(errors) == len(dialogue):
        raise errors[0]

    facts: list[Fact] = []
    seen_text: set[tuple[str, str]] = set()
    for turn_facts, _ in results:
        for fact in turn_facts:
            key = (fact.session_id, fact.text)
            if key in seen_text:
                continue
            seen_text.add(key)
            facts.append(fact)
    return facts


# -- dialogue files ----------------------------------------------------------


def turn_from_dict(d: Mapping[str, Any]) -> DialogueTurn:
    return DialogueTurn(str(d["session_id"]), int(d["turn_index"]), str(d["user"]), str(d.get("assistant") or ""))


def turn_to_dict(turn: DialogueTurn) -> dict[str, Any]:
    return {"session_id": turn.session_id, "turn_index": turn.turn_index,
            "user": turn.user_text, "assistant": turn.assistant_text}


def load_dialogue(path: str | Path) -> list[DialogueTurn]:
    """Read a dialogue JSONL file; line order is chronological order."""
    path = Path(path)
    turns = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                turns.append(turn_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path} line {lineno}: bad dialogue turn: {exc}") from exc
    check_dialogue(turns)
    return turns


def write_dialogue(turns: Iterable[DialogueTurn], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in turns:
            fh.write(json.dumps(turn_to_dict(t), ensure_ascii=False) + "\n")
