"""BM25 inverted index: baseline search, hard-negative mining, candidate sets.

Scoring uses the Lucene-style smoothed idf ln(1 + (N - df + 0.5)/(df + 0.5)),
which stays positive on tiny corpora. Ranking ties are broken by ascending
passage id so downstream metrics are reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import DataError, Passage, Question, contains_answer, read_jsonl, write_jsonl

INDEX_FORMAT_VERSION = 1


class CandidateSetError(Exception):
    """Candidate-set construction cannot satisfy its size requirements."""


@dataclass
class Bm25Index:
    k1: float
    b: float
    postings: dict[str, list[tuple[str, int]]]  # term -> [(passage id, tf)], sorted by id
    doc_lengths: dict[str, int]
    avg_doc_length: float
    passages: dict[str, Passage]
    sorted_ids: tuple[str, ...] = field(init=False, repr=False)
    # Precomputed per-term score contributions, aligned with sorted_ids.
    _term_docs: dict[str, np.ndarray] = field(init=False, repr=False)
    _term_scores: dict[str, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.sorted_ids = tuple(sorted(self.doc_lengths))
        id_to_idx = {pid: i for i, pid in enumerate(self.sorted_ids)}
        n = len(self.sorted_ids)
        self._term_docs = {}
        self._term_scores = {}
        for term, entries in self.postings.items():
            df = len(entries)
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            docs = np.empty(df, dtype=np.int64)
            scores = np.empty(df, dtype=float)
            for j, (pid, tf) in enumerate(entries):
                norm = self.k1 * (
                    1.0 - self.b + self.b * self.doc_lengths[pid] / self.avg_doc_length
                )
                docs[j] = id_to_idx[pid]
                scores[j] = idf * tf * (self.k1 + 1.0) / (tf + norm)
            self._term_docs[term] = docs
            self._term_scores[term] = scores

    @property
    def n_docs(self) -> int:
        return len(self.doc_lengths)


def build_index(corpus: Sequence[Passage], k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    if not corpus:
        raise ValueError("cannot index an empty corpus")
    postings: dict[str, dict[str, int]] = {}
    doc_lengths: dict[str, int] = {}
    passages: dict[str, Passage] = {}
    for passage in corpus:
        if passage.id in passages:
            raise ValueError(f"duplicate passage id {passage.id!r}")
        passages[passage.id] = passage
        doc_lengths[passage.id] = len(passage.tokens)
        for token in passage.tokens:
            postings.setdefault(token, {}).setdefault(passage.id, 0)
            postings[token][passage.id] += 1
    sorted_postings = {
        term: sorted(freqs.items()) for term, freqs in sorted(postings.items())
    }
    avg = sum(doc_lengths.values()) / len(doc_lengths)
    return Bm25Index(k1=k1, b=b, postings=sorted_postings, doc_lengths=doc_lengths,
                     avg_doc_length=avg, passages=passages)


def bm25_search(index: Bm25Index, query: Sequence[str], k: int) -> list[tuple[str, float]]:
    """Top-k (passage id, score); zero-score documents are never returned.

    Repeated query terms contribute once per occurrence, and term
    contributions accumulate in query order, keeping sums reproducible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not query:
        return []
    scores = np.zeros(index.n_docs)
    matched = np.zeros(index.n_docs, dtype=bool)
    for term in query:
        docs = index._term_docs.get(term)
        if docs is None:
            continue
        scores[docs] += index._term_scores[term]
        matched[docs] = True
    # sorted_ids are ascending, so a stable sort breaks ties by ascending id
    order = np.argsort(-scores, kind="stable")
    results: list[tuple[str, float]] = []
    for i in order:
        if not matched[i]:
            break  # unmatched docs sort after every positive score
        results.append((index.sorted_ids[i], float(scores[i])))
        if len(results) == k:
            break
    return results


def mine_hard_negatives(
    index: Bm25Index,
    question: Question,
    count: int,
    exclude: frozenset[str] | set[str] = frozenset(),
) -> list[str]:
    """First `count` BM25-ranked passages that do not contain the answer."""
    if count < 1:
        raise ValueError("count must be >= 1")
    mined: list[str] = []
    for pid, _score in bm25_search(index, question.tokens, k=index.n_docs):
        if pid in exclude:
            continue
        if contains_answer(index.passages[pid], question.answers):
            continue
        mined.append(pid)
        if len(mined) == count:
            break
    return mined


def find_candidate_gold(index: Bm25Index, question: Question) -> list[str]:
    """First up-to-3 BM25-ranked passages that do contain the answer."""
    found: list[str] = []
    for pid, _score in bm25_search(index, question.tokens, k=index.n_docs):
        if contains_answer(index.passages[pid], question.answers):
            found.append(pid)
            if len(found) == 3:
                break
    return found


N_HARD_NEGATIVES = 30
N_RANDOM_NEGATIVES = 19


@dataclass(frozen=True)
class CandidateSet:
    """Ranking pool for one question: a positive plus 49 negatives."""

    question_id: str
    positive: str
    hard_negatives: tuple[str, ...]
    random_negatives: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "hard_negatives", tuple(self.hard_negatives))
        object.__setattr__(self, "random_negatives", tuple(self.random_negatives))
        if len(self.hard_negatives) != N_HARD_NEGATIVES:
            raise ValueError(f"{self.question_id}: expected {N_HARD_NEGATIVES} hard negatives")
        if len(self.random_negatives) != N_RANDOM_NEGATIVES:
            raise ValueError(f"{self.question_id}: expected {N_RANDOM_NEGATIVES} random negatives")
        ids = (self.positive,) + self.hard_negatives + self.random_negatives
        if len(set(ids)) != len(ids):
            raise ValueError(f"{self.question_id}: candidate ids must be distinct")

    @property
    def all_ids(self) -> tuple[str, ...]:
        return (self.positive,) + self.hard_negatives + self.random_negatives


def build_candidate_set(
    question: Question,
    positive: str,
    index: Bm25Index,
    rng: np.random.Generator,
) -> CandidateSet:
    """30 BM25 hard negatives plus 19 uniform random negatives."""
    if positive not in index.passages:
        raise CandidateSetError(f"{question.id}: positive passage {positive!r} not in corpus")
    hard = mine_hard_negatives(index, question, N_HARD_NEGATIVES, exclude={positive})
    if len(hard) < N_HARD_NEGATIVES:
        raise CandidateSetError(
            f"{question.id}: only {len(hard)} hard negatives minable "
            f"(need {N_HARD_NEGATIVES})"
        )
    taken = set(hard) | {positive}
    eligible = [pid for pid in index.sorted_ids if pid not in taken]
    if len(eligible) < N_RANDOM_NEGATIVES:
        raise CandidateSetError(
            f"{question.id}: corpus too small for {N_RANDOM_NEGATIVES} random negatives"
        )
    picks = rng.choice(len(eligible), size=N_RANDOM_NEGATIVES, replace=False)
    random_negatives = tuple(eligible[i] for i in picks)
    return CandidateSet(question.id, positive, tuple(hard), random_negatives)


def candidate_set_to_record(cs: CandidateSet) -> dict:
    return {
        "question_id": cs.question_id,
        "positive": cs.positive,
        "hard_negatives": list(cs.hard_negatives),
        "random_negatives": list(cs.random_negatives),
    }


def save_candidate_sets(path: str | Path, sets: Iterable[CandidateSet]) -> None:
    write_jsonl(path, (candidate_set_to_record(cs) for cs in sets))


def load_candidate_sets(path: str | Path) -> list[CandidateSet]:
    path = Path(path)
    sets: list[CandidateSet] = []
    for lineno, record in read_jsonl(path):
        try:
            sets.append(
                CandidateSet(
                    question_id=record["question_id"],
                    positive=record["positive"],
                    hard_negatives=tuple(record["hard_negatives"]),
                    random_negatives=tuple(record["random_negatives"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return sets


def index_to_dict(index: Bm25Index) -> dict:
    return {
        "format_version": INDEX_FORMAT_VERSION,
        "k1": index.k1,
        "b": index.b,
        "passages": [
            {"id": p.id, "title": p.title, "text": p.text}
            for p in (index.passages[pid] for pid in index.sorted_ids)
        ],
    }


def save_index(index: Bm25Index, path: str | Path) -> None:
    # Postings and statistics are cheap to rebuild, so the artifact stores
    # only the parameters and the corpus it was built from.
    Path(path).write_text(json.dumps(index_to_dict(index), sort_keys=True))


def load_index(path: str | Path) -> Bm25Index:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != INDEX_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported index format version {doc.get('format_version')!r}")
    passages = [Passage(id=p["id"], title=p["title"], text=p["text"]) for p in doc["passages"]]
    return build_index(passages, k1=doc["k1"], b=doc["b"])


def passages_by_id(corpus: Iterable[Passage]) -> Mapping[str, Passage]:
    return {p.id: p for p in corpus}
