"""Zero-, one- and few-shot prompt assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import FormatError, InvariantViolation

STRATEGIES = ("zero_shot", "one_shot", "few_shot")

DEFAULT_INSTRUCTION = (
    "Summarize the provided clinical notes to generate a concise and medically "
    "accurate case summary."
)


@dataclass(frozen=True)
class FewShotExample:
    instruction: str
    input: str
    target_summary: str

    def __post_init__(self):
        for name in ("instruction", "input", "target_summary"):
            if not getattr(self, name):
                raise InvariantViolation(f"few-shot example field {name!r} is empty")


@dataclass(frozen=True)
class PromptSpec:
    strategy: str
    instruction: str
    enriched_input: str
    examples: tuple = field(default_factory=tuple)

    def check(self) -> None:
        count = len(self.examples)
        if self.strategy not in STRATEGIES:
            raise InvariantViolation(f"unknown strategy {self.strategy!r}")
        if self.strategy == "zero_shot" and count != 0:
            raise InvariantViolation(f"zero_shot takes no examples, got {count}")
        if self.strategy == "one_shot" and count != 1:
            raise InvariantViolation(f"one_shot takes exactly 1 example, got {count}")
        if self.strategy == "few_shot" and count < 2:
            raise InvariantViolation(f"few_shot needs at least 2 examples, got {count}")


def build_prompt(spec: PromptSpec) -> str:
    spec.check()
    parts = [spec.instruction, "\n\n"]
    for ex in spec.examples:
        parts.append(f"Input:\n{ex.input}\nSummary:\n{ex.target_summary}\n")
    parts.append(f"Input:\n{spec.enriched_input}\nSummary:\n")
    return "".join(parts)


def examples_for(strategy: str, pool) -> tuple:
    """Take the leading exemplars a strategy needs from ``pool``."""
    pool = tuple(pool)
    if strategy == "zero_shot":
        return ()
    if strategy == "one_shot":
        return pool[:1]
    return pool


def parse_examples(doc) -> list[FewShotExample]:
    if not isinstance(doc, list):
        raise FormatError("exemplar file must hold a JSON array")
    try:
        return [FewShotExample(d["instruction"], d["input"], d["target_summary"]) for d in doc]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad exemplar record: {exc}") from exc


def load_examples(path) -> list[FewShotExample]:
    return parse_examples(json.loads(Path(path).read_text(encoding="utf-8")))


def default_examples() -> list[FewShotExample]:
    """The bundled oncology and cardiology exemplars."""
    raw = resources.files("contextual").joinpath("data/exemplars.json").read_text(encoding="utf-8")
    return parse_examples(json.loads(raw))


def final_input_section(prompt: str) -> str:
    """Text between the last ``Input:`` label and its ``Summary:`` label."""
    start = prompt.rfind("Input:\n")
    if start < 0:
        return prompt
    body = prompt[start + len("Input:\n"):]
    end = body.rfind("\nSummary:")
    return body if end < 0 else body[:end]
