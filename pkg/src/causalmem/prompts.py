"""Prompt templates for every LLM call the engine makes.

Reply formats are strict and line-oriented so parsing never guesses.
"""

from __future__ import annotations

from typing import Sequence

EXTRACTION_SYSTEM = (
    "You extract long-term memory from a conversation turn. "
    "Identify the entities, events, states, plans and preferences it reveals about the user. "
    "Rewrite each one as a single atomic declarative sentence in the third person "
    "(refer to the speaker as 'User'). "
    "Output one fact per line and nothing else. Output nothing if the turn contains no memorable fact."
)

CAUSAL_SYSTEM = (
    "You identify cause-effect relations between memory facts. "
    "You will receive a numbered list of facts. For every pair where fact i plausibly causes, "
    "enables or leads to fact j, output a line of the exact form 'i -> j'. "
    "Output only such lines. Output nothing if there is no causal relation."
)

COUNTERFACTUAL_SYSTEM = (
    "You reason about consequences. Given a user's intended action and what is known about them, "
    "state concretely what could go wrong, drawing on the listed facts and on commonsense world knowledge. "
    "Answer in at most three sentences."
)

ANSWER_SYSTEM = (
    "You are an assistant with long-term memory of the user. "
    "Before answering, check whether the request conflicts with anything in the memory context or with "
    "the world knowledge provided. Reason step by step about implicit constraints: a request that "
    "looks harmless may be unsafe or inconsistent given the user's situation. "
    "If there is a conflict, say so explicitly, explain it, and suggest an alternative. "
    "Otherwise answer the request directly, using relevant memories."
)

JUDGE_SYSTEM = (
    "You grade an assistant's answer against a reference answer. "
    "Decide whether the candidate conveys the same key conclusion as the reference. "
    "Reply with exactly one line: 'CORRECT <score>' or 'INCORRECT <score>', "
    "where <score> is an integer from 0 to 100 expressing how well the candidate matches."
)

# marker used by causal mining prompts so scripted fixtures can target a scope
CAUSAL_HEADER = "Facts:"


def extraction_user(user_text: str, assistant_text: str) -> str:
    return f"User: {user_text}\nAssistant: {assistant_text}".rstrip()


def causal_user(fact_texts: Sequence[str]) -> str:
    lines = [f"{i}. {t}" for i, t in enumerate(fact_texts, start=1)]
    return CAUSAL_HEADER + "\n" + "\n".join(lines)


def counterfactual_user(query: str, fact_texts: Sequence[str]) -> str:
    if fact_texts:
        known = "\n".join(f"- {t}" for t in fact_texts)
    else:
        known = "- (no stored facts)"
    return (
        f"If the user does {query}, what negative consequences might occur "
        f"considering the following facts or general knowledge?\n{known}"
    )


def answer_user(query: str, context_lines: Sequence[str]) -> str:
    if not context_lines:
        return f"Request: {query}"
    ctx = "\n".join(context_lines)
    return f"Memory context:\n{ctx}\n\nRequest: {query}"


def judge_user(question: str, gold_answer: str, candidate: str) -> str:
    return f"Question: {question}\nReference answer: {gold_answer}\nCandidate answer: {candidate}"


TASKS = {
    EXTRACTION_SYSTEM: "extract",
    CAUSAL_SYSTEM: "causal",
    COUNTERFACTUAL_SYSTEM: "counterfactual",
    ANSWER_SYSTEM: "answer",
    JUDGE_SYSTEM: "judge",
}


def task_of(system_prompt: str) -> str:
    return TASKS.get(system_prompt, "other")
