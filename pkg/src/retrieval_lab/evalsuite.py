"""Ranking, retrieval, passage-overlap, and question-identification metrics.

All dense search here is exhaustive inner product. Ties are always broken
by ascending passage id, and identification ties count as failures, so
every metric is deterministic for a frozen model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import DataError, Passage, Question, QuestionPair, contains_answer
from .embedder import (
    DualEncoderModel,
    encode_passage,
    encode_question,
    model_content_hash,
    relevance_score,
)
from .lexindex import CandidateSet


class CacheError(Exception):
    """A corpus-embedding cache does not match the model in use."""


@dataclass
class RankingResult:
    ranks: dict[str, int]  # question id -> rank of the positive (1-based)
    mr: float
    mrr: float


@dataclass
class RetrievalResult:
    hits: dict[str, dict[int, bool]]  # question id -> {k: hit}
    recall: dict[int, float]


@dataclass
class CorpusEmbeddings:
    """Passage vectors for a frozen model, keyed by its content hash."""

    model_hash: str
    passage_ids: tuple[str, ...]  # ascending
    vectors: np.ndarray  # (len(passage_ids), dim), rows aligned with ids


def _passage_vector_cache(model: DualEncoderModel, passages: Mapping[str, Passage]):
    cache: dict[str, np.ndarray] = {}

    def get(pid: str) -> np.ndarray:
        if pid not in cache:
            if pid not in passages:
                raise DataError(f"unknown passage id {pid!r}")
            cache[pid] = encode_passage(model, passages[pid])
        return cache[pid]

    return get


def rank_candidates(
    model: DualEncoderModel,
    question: Question,
    candidate_set: CandidateSet,
    passages: Mapping[str, Passage],
    _passage_vec=None,
) -> int:
    """Rank of the positive among all 50 candidates (1-based).

    Equal scores are ordered by ascending passage id.
    """
    get_vec = _passage_vec or _passage_vector_cache(model, passages)
    vq = encode_question(model, question)
    scored = [(pid, relevance_score(vq, get_vec(pid))) for pid in candidate_set.all_ids]
    pos_score = dict(scored)[candidate_set.positive]
    rank = 1
    for pid, score in scored:
        if pid == candidate_set.positive:
            continue
        if score > pos_score or (score == pos_score and pid < candidate_set.positive):
            rank += 1
    return rank


def ranking_eval(
    model: DualEncoderModel,
    sets: Sequence[CandidateSet],
    questions: Mapping[str, Question],
    passages: Mapping[str, Passage],
) -> RankingResult:
    if not sets:
        raise ValueError("ranking_eval needs at least one candidate set")
    get_vec = _passage_vector_cache(model, passages)
    ranks: dict[str, int] = {}
    for cs in sets:
        if cs.question_id not in questions:
            raise DataError(f"unknown question id {cs.question_id!r}")
        ranks[cs.question_id] = rank_candidates(
            model, questions[cs.question_id], cs, passages, _passage_vec=get_vec
        )
    values = list(ranks.values())
    mr = sum(values) / len(values)
    mrr = sum(1.0 / r for r in values) / len(values)
    return RankingResult(ranks=ranks, mr=mr, mrr=mrr)


def encode_corpus(model: DualEncoderModel, passages: Mapping[str, Passage]) -> CorpusEmbeddings:
    ids = tuple(sorted(passages))
    vectors = np.stack([encode_passage(model, passages[pid]) for pid in ids])
    return CorpusEmbeddings(model_hash=model_content_hash(model), passage_ids=ids, vectors=vectors)


def _check_cache(model: DualEncoderModel, corpus_embeddings: CorpusEmbeddings) -> None:
    if corpus_embeddings.model_hash != model_content_hash(model):
        raise CacheError("corpus embeddings were built with a different model")


def _top_k_ids(corpus_embeddings: CorpusEmbeddings, vq: np.ndarray, k: int) -> list[str]:
    scores = corpus_embeddings.vectors @ vq
    # ids are stored ascending, so a stable sort keeps ties in id order
    order = np.argsort(-scores, kind="stable")[:k]
    return [corpus_embeddings.passage_ids[i] for i in order]


def dense_retrieve(
    model: DualEncoderModel,
    corpus_embeddings: CorpusEmbeddings,
    question: Question,
    k: int,
) -> list[str]:
    """Exhaustive top-k passage ids by inner product, ties by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_cache(model, corpus_embeddings)
    return _top_k_ids(corpus_embeddings, encode_question(model, question), k)


def retrieval_eval(
    model: DualEncoderModel,
    passages: Mapping[str, Passage],
    questions: Sequence[Question],
    ks: Sequence[int],
    corpus_embeddings: CorpusEmbeddings | None = None,
) -> RetrievalResult:
    """Question-level hit rate: an answer-containing passage in the top k."""
    if not ks or list(ks) != sorted(ks) or ks[0] < 1:
        raise ValueError("ks must be ascending and >= 1")
    if corpus_embeddings is None:
        corpus_embeddings = encode_corpus(model, passages)
    _check_cache(model, corpus_embeddings)
    max_k = min(max(ks), len(corpus_embeddings.passage_ids))
    hits: dict[str, dict[int, bool]] = {}
    for question in questions:
        top = _top_k_ids(corpus_embeddings, encode_question(model, question), max_k)
        contains = [contains_answer(passages[pid], question.answers) for pid in top]
        hits[question.id] = {k: any(contains[: min(k, len(contains))]) for k in ks}
    recall = {k: sum(h[k] for h in hits.values()) / len(hits) for k in ks} if hits else {}
    return RetrievalResult(hits=hits, recall=recall)


def passage_overlap(
    model: DualEncoderModel,
    pairs: Sequence[QuestionPair],
    questions: Mapping[str, Question],
    passages: Mapping[str, Passage],
    k: int = 5,
    corpus_embeddings: CorpusEmbeddings | None = None,
) -> float:
    """Mean |top-k(original) intersect top-k(variant)| / k over edited pairs."""
    if not pairs:
        raise ValueError("passage_overlap needs at least one pair")
    for pair in pairs:
        if pair.relation != "meq":
            raise ValueError(f"pair {pair.original_id}/{pair.variant_id} is not an edited pair")
    if corpus_embeddings is None:
        corpus_embeddings = encode_corpus(model, passages)
    _check_cache(model, corpus_embeddings)
    total = 0.0
    for pair in pairs:
        vq = encode_question(model, questions[pair.original_id])
        vv = encode_question(model, questions[pair.variant_id])
        top_q = set(_top_k_ids(corpus_embeddings, vq, k))
        top_v = set(_top_k_ids(corpus_embeddings, vv, k))
        total += len(top_q & top_v) / k
    return total / len(pairs)


def identification_rate(
    model: DualEncoderModel,
    triples: Sequence[tuple[Question, Question, Question]],
) -> float:
    """Fraction of triples where the original scores its paraphrase strictly
    above its edited variant; ties count as failures."""
    if not triples:
        raise ValueError("identification_rate needs at least one triple")
    successes = 0
    for q, q_para, q_meq in triples:
        vq = encode_question(model, q)
        s_para = relevance_score(vq, encode_question(model, q_para))
        s_meq = relevance_score(vq, encode_question(model, q_meq))
        if s_para > s_meq:
            successes += 1
    return successes / len(triples)
