"""Five-stage filtering pipeline for minimally edited question candidates.

Stages run in a fixed order (quality, lexical, semantic, paraphrase, answer)
and short-circuit on the first failure. Boundary semantics: removal applies
to strict threshold violations, so edit distance exactly at the lexical cap
and cosine exactly at the semantic floor both pass.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    FilterConfig,
    Question,
    QuestionPair,
    normalize_answer,
    word_edit_distance,
)
from .embedder import cosine_similarity

STAGES = ("quality", "lexical", "semantic", "paraphrase", "answer")

# Function words ignored by the default paraphrase detector.
DEFAULT_STOPWORDS = frozenset(
    {"a", "an", "the", "is", "are", "was", "were", "in", "on", "at",
     "of", "for", "to", "do", "does", "did", "and", "or", "by"}
)

ParaphraseDetector = Callable[[Question, Question], bool]
EmbedFn = Callable[[Question], np.ndarray]


@dataclass(frozen=True)
class FilterVerdict:
    stage: str
    passed: bool
    reason: str = ""

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if not self.passed and not self.reason:
            raise ValueError("failed verdicts must carry a reason")


def quality_control(q: Question, q2: Question, cfg: FilterConfig) -> FilterVerdict:
    """Reject question-word changes and single banned-word additions."""
    qw1 = Counter(t for t in q.tokens if t in cfg.question_words)
    qw2 = Counter(t for t in q2.tokens if t in cfg.question_words)
    if qw1 != qw2:
        return FilterVerdict("quality", False, "question words changed")
    added = set(q2.tokens) - set(q.tokens)
    if len(added) == 1:
        (word,) = added
        if word in cfg.banned_added_words:
            return FilterVerdict("quality", False, f"added banned word {word!r}")
    return FilterVerdict("quality", True)


def lexical_filter(q: Question, q2: Question, cfg: FilterConfig) -> FilterVerdict:
    distance = word_edit_distance(q.tokens, q2.tokens)
    if distance == 0:
        return FilterVerdict("lexical", False, "edit distance 0 (identical)")
    if distance > cfg.eps_lexical:
        return FilterVerdict(
            "lexical", False, f"edit distance {distance} exceeds {cfg.eps_lexical}"
        )
    return FilterVerdict("lexical", True)


def semantic_filter(vq: np.ndarray, vq2: np.ndarray, cfg: FilterConfig) -> FilterVerdict:
    cos = cosine_similarity(vq, vq2)
    if cos < cfg.eps_semantic_cos:
        return FilterVerdict(
            "semantic", False, f"cosine {cos:.6f} below {cfg.eps_semantic_cos}"
        )
    return FilterVerdict("semantic", True)


def content_multiset_paraphrase(q: Question, q2: Question) -> bool:
    """Default detector: equal content-token multisets (stopwords removed)."""
    c1 = Counter(t for t in q.tokens if t not in DEFAULT_STOPWORDS)
    c2 = Counter(t for t in q2.tokens if t not in DEFAULT_STOPWORDS)
    return c1 == c2


def paraphrase_filter(
    q: Question, q2: Question, detector: ParaphraseDetector | None = None
) -> FilterVerdict:
    detector = detector or content_multiset_paraphrase
    if detector(q, q2):
        return FilterVerdict("paraphrase", False, "detected as paraphrase")
    return FilterVerdict("paraphrase", True)


def answer_difference(a: Sequence[str], a2: Sequence[str]) -> FilterVerdict:
    if not a or not a2:
        raise ValueError("answer lists must be non-empty")
    norm1 = {normalize_answer(x) for x in a}
    norm2 = {normalize_answer(x) for x in a2}
    shared = norm1 & norm2
    if shared:
        return FilterVerdict("answer", False, f"shared answer {sorted(shared)[0]!r}")
    return FilterVerdict("answer", True)


@dataclass(frozen=True)
class CandidateReport:
    """Filtering outcome for one candidate variant of an original question."""

    candidate: Question
    frequency: int
    edit_distance: int
    semantic_similarity: float
    verdicts: tuple[FilterVerdict, ...]

    @property
    def survived(self) -> bool:
        return len(self.verdicts) == len(STAGES) and all(v.passed for v in self.verdicts)


def run_stages(
    q: Question,
    candidate: Question,
    cfg: FilterConfig,
    embed: EmbedFn,
    detector: ParaphraseDetector | None = None,
) -> tuple[FilterVerdict, ...]:
    """Apply the five stages in order, stopping at the first failure."""
    verdicts: list[FilterVerdict] = []
    checks = (
        lambda: quality_control(q, candidate, cfg),
        lambda: lexical_filter(q, candidate, cfg),
        lambda: semantic_filter(embed(q), embed(candidate), cfg),
        lambda: paraphrase_filter(q, candidate, detector),
        lambda: answer_difference(q.answers, candidate.answers),
    )
    for check in checks:
        verdict = check()
        verdicts.append(verdict)
        if not verdict.passed:
            break
    return tuple(verdicts)


def filter_candidates(
    q: Question,
    candidates: Sequence[tuple[Question, int]],
    cfg: FilterConfig,
    embed: EmbedFn,
    detector: ParaphraseDetector | None = None,
) -> tuple[Question | None, list[CandidateReport]]:
    """Filter all candidates and select the surviving one to keep.

    Survivors are ranked by highest generation frequency, then lowest edit
    distance, then lexicographic text order.
    """
    reports: list[CandidateReport] = []
    for candidate, frequency in candidates:
        if frequency < 1:
            raise ValueError(f"{candidate.id}: frequency must be >= 1")
        verdicts = run_stages(q, candidate, cfg, embed, detector)
        reports.append(
            CandidateReport(
                candidate=candidate,
                frequency=frequency,
                edit_distance=word_edit_distance(q.tokens, candidate.tokens),
                semantic_similarity=cosine_similarity(embed(q), embed(candidate)),
                verdicts=verdicts,
            )
        )
    survivors = [r for r in reports if r.survived]
    if not survivors:
        return None, reports
    best = min(survivors, key=lambda r: (-r.frequency, r.edit_distance, r.candidate.text))
    return best.candidate, reports


def report_to_pair(original: Question, report: CandidateReport, selected: bool) -> QuestionPair:
    relation = "meq" if selected and report.survived else "candidate"
    return QuestionPair(
        original_id=original.id,
        variant_id=report.candidate.id,
        relation=relation,
        edit_distance=report.edit_distance,
        semantic_similarity=report.semantic_similarity,
        filter_report=report.verdicts,
    )
