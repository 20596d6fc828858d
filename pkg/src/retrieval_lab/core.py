"""Shared domain records, tokenization, edit distance, and answer matching."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field, is_dataclass, asdict
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class DataError(Exception):
    """An input file or record violates the expected format."""


_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_NON_WORD_RE = re.compile(r"[^\w\s]")
_WS_RE = re.compile(r"\s+")

DEFAULT_BANNED_ADDED_WORDS = frozenset({"first", "last", "new", "next", "original", "not"})
DEFAULT_QUESTION_WORDS = frozenset(
    {"who", "what", "when", "where", "which", "why", "how", "whose", "whom"}
)

RELATIONS = ("paraphrase", "meq", "candidate")


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, split on whitespace, strip punctuation at token edges."""
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            tokens.append(tok)
    return tuple(tokens)


def word_edit_distance(t1: Sequence[str], t2: Sequence[str]) -> int:
    """Levenshtein distance over word tokens, unit cost for every edit."""
    if len(t1) < len(t2):
        t1, t2 = t2, t1
    prev = list(range(len(t2) + 1))
    for i, a in enumerate(t1, start=1):
        cur = [i]
        for j, b in enumerate(t2, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a != b)))
        prev = cur
    return prev[-1]


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and English articles, collapse whitespace."""
    s = _NON_WORD_RE.sub(" ", text.lower())
    s = _ARTICLES_RE.sub(" ", s)
    return _WS_RE.sub(" ", s).strip()


def _contains_sublist(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    m = len(needle)
    return any(list(haystack[i : i + m]) == list(needle) for i in range(len(haystack) - m + 1))


def contains_answer(passage: "Passage", answers: Sequence[str]) -> bool:
    """True when any normalized answer occurs as a token run in the passage text."""
    if not answers:
        raise ValueError("answers must be non-empty")
    hay = normalize_answer(passage.text).split()
    for answer in answers:
        needle = normalize_answer(answer).split()
        if needle and _contains_sublist(hay, needle):
            return True
    return False


@dataclass(frozen=True)
class Question:
    """A question with its gold answers; tokens are derived from the text."""

    id: str
    text: str
    answers: tuple[str, ...]
    tokens: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "answers", tuple(self.answers))
        if not self.answers:
            raise ValueError(f"question {self.id!r}: answers must be non-empty")
        object.__setattr__(self, "tokens", tokenize(self.text))


@dataclass(frozen=True)
class Passage:
    """A titled corpus passage; tokens cover the title followed by the body."""

    id: str
    title: str
    text: str
    tokens: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError(f"passage {self.id!r}: text must be non-empty")
        object.__setattr__(self, "tokens", tokenize(self.title) + tokenize(self.text))


@dataclass(frozen=True)
class QuestionPair:
    """An (original, variant) question pair with its filtering outcome."""

    original_id: str
    variant_id: str
    relation: str
    edit_distance: int = 0
    semantic_similarity: float | None = None
    filter_report: tuple = ()

    def __post_init__(self) -> None:
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        if self.edit_distance < 0:
            raise ValueError("edit_distance must be non-negative")
        object.__setattr__(self, "filter_report", tuple(self.filter_report))


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds and word lists for the variant-question filtering stages."""

    eps_lexical: int = 3
    eps_semantic_cos: float = 0.95
    banned_added_words: frozenset = DEFAULT_BANNED_ADDED_WORDS
    question_words: frozenset = DEFAULT_QUESTION_WORDS

    def __post_init__(self) -> None:
        if self.eps_lexical < 1:
            raise ValueError("eps_lexical must be >= 1")
        if not 0.0 <= self.eps_semantic_cos <= 1.0:
            raise ValueError("eps_semantic_cos must lie in [0, 1]")
        object.__setattr__(self, "banned_added_words", frozenset(self.banned_added_words))
        object.__setattr__(self, "question_words", frozenset(self.question_words))


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line number, record) for every non-empty line of a JSONL file."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, record


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False))
            handle.write("\n")


def _require(record: dict, keys: Sequence[str], path: Path, lineno: int) -> None:
    for key in keys:
        if key not in record:
            raise DataError(f"{path}:{lineno}: missing field {key!r}")


def load_questions(path: str | Path) -> list[Question]:
    path = Path(path)
    questions: list[Question] = []
    seen: set[str] = set()
    for lineno, record in read_jsonl(path):
        _require(record, ("id", "text", "answers"), path, lineno)
        if record["id"] in seen:
            raise DataError(f"{path}:{lineno}: duplicate question id {record['id']!r}")
        seen.add(record["id"])
        try:
            questions.append(
                Question(id=record["id"], text=record["text"], answers=tuple(record["answers"]))
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return questions


def save_questions(path: str | Path, questions: Iterable[Question]) -> None:
    write_jsonl(
        path,
        ({"id": q.id, "text": q.text, "answers": list(q.answers)} for q in questions),
    )


def load_passages(path: str | Path) -> list[Passage]:
    path = Path(path)
    passages: list[Passage] = []
    seen: set[str] = set()
    for lineno, record in read_jsonl(path):
        _require(record, ("id", "title", "text"), path, lineno)
        if record["id"] in seen:
            raise DataError(f"{path}:{lineno}: duplicate passage id {record['id']!r}")
        seen.add(record["id"])
        try:
            passages.append(Passage(id=record["id"], title=record["title"], text=record["text"]))
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return passages


def save_passages(path: str | Path, passages: Iterable[Passage]) -> None:
    write_jsonl(
        path,
        ({"id": p.id, "title": p.title, "text": p.text} for p in passages),
    )


def pair_to_record(pair: QuestionPair) -> dict:
    record = {
        "original_id": pair.original_id,
        "variant_id": pair.variant_id,
        "relation": pair.relation,
        "edit_distance": pair.edit_distance,
        "semantic_similarity": pair.semantic_similarity,
    }
    if pair.filter_report:
        record["filter_report"] = [
            asdict(v) if is_dataclass(v) else dict(v) for v in pair.filter_report
        ]
    return record


def load_pairs(path: str | Path) -> list[QuestionPair]:
    path = Path(path)
    pairs: list[QuestionPair] = []
    for lineno, record in read_jsonl(path):
        _require(record, ("original_id", "variant_id", "relation"), path, lineno)
        try:
            pairs.append(
                QuestionPair(
                    original_id=record["original_id"],
                    variant_id=record["variant_id"],
                    relation=record["relation"],
                    edit_distance=record.get("edit_distance", 0),
                    semantic_similarity=record.get("semantic_similarity"),
                    filter_report=tuple(record.get("filter_report", ())),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return pairs


def save_pairs(path: str | Path, pairs: Iterable[QuestionPair]) -> None:
    write_jsonl(path, (pair_to_record(p) for p in pairs))
