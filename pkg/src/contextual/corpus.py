"""Clinical note ingestion, tag flattening and rule-based tokenization."""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DuplicateNoteId, ParseError, UnknownTag

# <SEX>, <CHIEF COMPLAINT>, <HISTORY OF PRESENT ILLNESS>: uppercase words, single spaces.
TAG_RE = re.compile(r"<[A-Z][A-Z0-9_/&-]*(?: [A-Z0-9_/&-]+)*>")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ClinicalNote:
    note_id: str
    patient_id: str
    text: str
    tags: dict = field(default_factory=dict)
    reference_summary: str | None = None

    def to_json(self) -> dict:
        out = {
            "note_id": self.note_id,
            "patient_id": self.patient_id,
            "text": self.text,
            "tags": dict(self.tags),
        }
        if self.reference_summary is not None:
            out["reference_summary"] = self.reference_summary
        return out


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple
    positions: tuple
    vocab_ids: tuple

    def __len__(self):
        return len(self.tokens)


def token_id(token: str) -> int:
    """FNV-1a (64-bit) over the UTF-8 bytes, truncated to the low 32 bits."""
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h & 0xFFFFFFFF


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def _split_chunk(chunk: str) -> list[str]:
    start, end = 0, len(chunk)
    while start < end and _is_punct(chunk[start]):
        start += 1
    if start == end:
        return list(chunk)
    while _is_punct(chunk[end - 1]):
        end -= 1
    return list(chunk[:start]) + [chunk[start:end]] + list(chunk[end:])


def split_tokens(text: str) -> list[str]:
    tokens: list[str] = []
    cursor = 0
    for m in TAG_RE.finditer(text):
        for chunk in text[cursor:m.start()].split():
            tokens.extend(_split_chunk(chunk))
        tokens.append(m.group(0))
        cursor = m.end()
    for chunk in text[cursor:].split():
        tokens.extend(_split_chunk(chunk))
    return tokens


def tokenize(text: str) -> TokenSequence:
    tokens = split_tokens(text)
    return TokenSequence(
        tokens=tuple(tokens),
        positions=tuple(range(len(tokens))),
        vocab_ids=tuple(token_id(t) for t in tokens),
    )


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


def count_tokens(text: str) -> int:
    return len(split_tokens(text))


def flatten_note(note: ClinicalNote, tag_order: list[str] | None = None) -> str:
    """Serialize tags as ``<TAG> value`` segments joined by ``", "``, then the body.

    >>> flatten_note(ClinicalNote("n", "p", "b", {"SEX": "M"}))
    '<SEX> M b'
    """
    order = list(note.tags) if tag_order is None else list(tag_order)
    for name in order:
        if name not in note.tags:
            raise UnknownTag(name)
    segments = [f"<{name}> {note.tags[name]}".rstrip() for name in order]
    head = ", ".join(segments)
    parts = [p for p in (head, note.text.strip()) if p]
    return " ".join(parts)


def _note_from_record(rec, lineno: int) -> ClinicalNote:
    if not isinstance(rec, dict):
        raise ValueError("record is not a JSON object")
    note_id = rec.get("note_id")
    if not isinstance(note_id, str) or not note_id:
        raise ValueError("missing note_id")
    patient_id = rec.get("patient_id")
    if not isinstance(patient_id, str) or not patient_id:
        raise ValueError("missing patient_id")
    text = rec.get("text", "")
    if not isinstance(text, str):
        raise ValueError("text must be a string")
    tags = rec.get("tags") or {}
    if not isinstance(tags, dict) or not all(isinstance(v, str) for v in tags.values()):
        raise ValueError("tags must be an object of strings")
    ref = rec.get("reference_summary")
    if ref is not None and not isinstance(ref, str):
        raise ValueError("reference_summary must be a string")
    return ClinicalNote(note_id, patient_id, text, dict(tags), ref)


def load_corpus(path, format: str = "notes-jsonl") -> list[ClinicalNote]:
    if format != "notes-jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    notes: list[ClinicalNote] = []
    problems: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                note = _note_from_record(json.loads(line), lineno)
            except json.JSONDecodeError as exc:
                problems.append((lineno, f"invalid JSON: {exc.msg}"))
                continue
            except ValueError as exc:
                problems.append((lineno, str(exc)))
                continue
            if note.note_id in seen:
                raise DuplicateNoteId(
                    f"note_id {note.note_id!r} on line {lineno} already used on line {seen[note.note_id]}"
                )
            seen[note.note_id] = lineno
            notes.append(note)
    if problems:
        raise ParseError(problems)
    return notes


def write_corpus(notes: Iterable[ClinicalNote], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for note in notes:
            fh.write(json.dumps(note.to_json(), ensure_ascii=False) + "\n")
