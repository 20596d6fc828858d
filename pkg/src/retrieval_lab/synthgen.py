"""Deterministic synthetic QA world: facts, passages, questions, edits.

The world is a grid of (entity, attribute) facts with globally unique answer
values. Each fact yields one passage (answer embedded verbatim) and one
templated question. Edited-question variants swap exactly one content slot
(attribute word, entity qualifier, ordinal, or date token) so they map onto
a sibling fact with a different answer; paraphrases substitute synonyms and
reorder function words, keeping the answer fixed. Distractor passages reuse
entity and attribute surface tokens without any answer value, which makes
BM25 hard negatives plausible rather than random.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import FilterConfig, Passage, Question, QuestionPair, word_edit_distance
from .embedder import DualEncoderModel, cosine_similarity, encode_question
from .lexindex import Bm25Index, build_index, mine_hard_negatives
from .meqfilter import (
    DEFAULT_STOPWORDS,
    answer_difference,
    lexical_filter,
    paraphrase_filter,
    quality_control,
)
from .trainer import AugmentationPools, MeqCandidate, TrainingExample


class GenerationError(Exception):
    """The world configuration is infeasible or self-checks failed."""


@dataclass(frozen=True)
class WorldConfig:
    n_entities: int = 72
    n_attributes: int = 24
    n_passages: int = 2400
    n_train_questions: int = 600
    n_contrast_questions: int = 220
    n_heldout_questions: int = 200
    paraphrases_per_question: int = 2
    meqs_per_question: int = 2
    vocab_size: int = 120
    seed: int = 0

    def __post_init__(self) -> None:
        counts = (
            self.n_entities,
            self.n_attributes,
            self.n_passages,
            self.n_train_questions,
            self.n_contrast_questions,
            self.n_heldout_questions,
            self.paraphrases_per_question,
            self.vocab_size,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all world counts must be positive")
        if self.meqs_per_question < 1:
            raise ValueError("meqs_per_question must be >= 1")


@dataclass(frozen=True)
class Frame:
    name: str
    question_template: str  # uses {slot} and {entity}
    passage_template: str  # uses {slot}, {entity}, {value}, {f0}, {f1}, {f2}
    slots: tuple[str, ...]
    value_kind: str  # person | place | year


FRAMES: tuple[Frame, ...] = (
    Frame(
        name="wrote",
        question_template="who wrote the {slot} of {entity}",
        passage_template=(
            "the {slot} of {entity} was written by {value} . many {f0} scholars "
            "praise the {slot} for its {f1} style and {entity} honors it at the {f2} festival"
        ),
        slots=("anthem", "motto", "charter", "saga", "ballad", "creed"),
        value_kind="person",
    ),
    Frame(
        name="located",
        question_template="where is the {slot} of {entity} located",
        passage_template=(
            "the {slot} of {entity} is located in {value} . travelers from {f0} "
            "regions visit the {slot} during the {f1} season to study its {f2} halls"
        ),
        slots=("citadel", "archive", "observatory", "foundry", "granary", "harbor"),
        value_kind="place",
    ),
    Frame(
        name="ruler",
        question_template="who was the {slot} ruler of {entity}",
        passage_template=(
            "records name {value} as the {slot} ruler of {entity} . chronicles of "
            "the {f0} court describe the {slot} reign as a {f1} era for {entity}"
        ),
        slots=("second", "third", "fourth", "fifth"),
        value_kind="person",
    ),
    Frame(
        name="governed",
        question_template="who governed {entity} in {slot}",
        passage_template=(
            "in {slot} the territory of {entity} was governed by {value} . ledgers "
            "from {slot} list {f0} tributes and a {f1} census ordered for {entity}"
        ),
        slots=("1901", "1902", "1903", "1904", "1905", "1906"),
        value_kind="person",
    ),
    Frame(
        name="adopted",
        question_template="when did {entity} adopt the {slot}",
        passage_template=(
            "{entity} adopted the {slot} in {value} . the {slot} bears a {f0} sigil "
            "and is displayed in the {f1} hall beside older {f2} relics"
        ),
        slots=("flag", "seal", "crest", "emblem"),
        value_kind="year",
    ),
)

# Synonym groups used for paraphrase generation; the canonical word is the
# one appearing in the question templates.
SYNONYMS: dict[str, tuple[str, ...]] = {
    "wrote": ("composed", "penned", "authored"),
    "located": ("situated", "positioned"),
    "ruler": ("leader", "sovereign"),
    "governed": ("administered", "managed"),
    "adopt": ("embrace", "institute"),
}

SYNONYM_CANON: dict[str, str] = {
    alt: canon for canon, alts in SYNONYMS.items() for alt in alts
}

QUALIFIERS = ("northern", "southern", "eastern", "western", "upper", "lower")
_FAMILY_SIZE = 3

_BASE_A = ("vel", "mor", "tar", "quil", "zan", "dre", "fal", "gor", "hes", "jun", "kel", "lum")
_BASE_B = ("tor", "mane", "dia", "gard", "holm", "mark", "stan", "via")

_FIRST_A = ("tor", "mal", "sor", "brin", "cas", "dov", "fen", "gal", "hos", "jes",
            "kel", "lor", "mir", "nor", "pel", "ras", "sel", "tam", "ulr", "ves", "war", "zor")
_FIRST_B = ("en", "a", "is", "o")
_LAST_A = ("ash", "bel", "cor", "dray", "ells", "far", "gre", "hol", "ing", "jar",
           "kent", "lock", "marri", "north", "oak", "pem", "rook", "silver", "thorn", "under")
_LAST_B = ("ford", "ton", "moor", "worth")

_PLACE_PREFIX = ("port", "fort", "lake", "mount", "cape", "glen", "vale", "strath")
_PLACE_A = ("khel", "dorn", "ays", "bren", "cul", "drem", "fir", "goth", "hyl", "ist",
            "jor", "kyn", "lem", "myr", "ost", "pria")
_PLACE_B = ("lan", "mar", "wick", "by", "stead")

_FILLER_A = ("ard", "bren", "cal", "dorn", "est", "fol", "gris", "hal", "irn", "jut",
             "kor", "lisk", "mund", "nep", "orv", "pike", "quor", "rill", "sten", "tol",
             "umber", "vint", "wold", "yarn")
_FILLER_B = ("ish", "en", "al", "ic", "ory", "ine")

_ANSWER_YEAR_BASE = 1950


def _entity_names(n: int) -> list[str]:
    bases = [a + b for b in _BASE_B for a in _BASE_A]
    if n > len(bases) * _FAMILY_SIZE:
        raise GenerationError(f"n_entities={n} exceeds capacity {len(bases) * _FAMILY_SIZE}")
    names = []
    for i in range(n):
        base = bases[i // _FAMILY_SIZE]
        qualifier = QUALIFIERS[(i // _FAMILY_SIZE + i % _FAMILY_SIZE) % len(QUALIFIERS)]
        names.append(f"{qualifier} {base}")
    return names


def _attribute_library() -> list[tuple[int, str]]:
    return [(fi, slot) for fi, frame in enumerate(FRAMES) for slot in frame.slots]


def _filler_vocab(size: int) -> list[str]:
    words = [a + b for b in _FILLER_B for a in _FILLER_A]
    if size > len(words):
        raise GenerationError(f"vocab_size={size} exceeds capacity {len(words)}")
    return words[:size]


class _ValueFactory:
    """Hands out globally unique answer strings per value kind."""

    def __init__(self) -> None:
        self._counters: Counter[str] = Counter()
        self._first = [a + b for b in _FIRST_B for a in _FIRST_A]
        self._last = [a + b for b in _LAST_B for a in _LAST_A]
        self._place_roots = [a + b for b in _PLACE_B for a in _PLACE_A]

    def next(self, kind: str) -> str:
        i = self._counters[kind]
        self._counters[kind] += 1
        if kind == "person":
            if i >= len(self._first) * len(self._last):
                raise GenerationError("person value pool exhausted")
            return f"{self._first[i % len(self._first)]} {self._last[i // len(self._first)]}"
        if kind == "place":
            cap = len(_PLACE_PREFIX) * len(self._place_roots)
            if i >= cap:
                raise GenerationError("place value pool exhausted")
            return f"{_PLACE_PREFIX[i % len(_PLACE_PREFIX)]} {self._place_roots[i // len(_PLACE_PREFIX)]}"
        if kind == "year":
            return str(_ANSWER_YEAR_BASE + i)
        raise GenerationError(f"unknown value kind {kind!r}")


@dataclass(frozen=True)
class Fact:
    entity_idx: int
    attr_idx: int
    value: str
    question_id: str
    passage_id: str


@dataclass
class World:
    config: WorldConfig
    passages: dict[str, Passage]
    train_questions: list[Question]
    heldout_questions: list[Question]
    contrast_pairs: list[QuestionPair]
    variant_questions: dict[str, Question]  # edited + paraphrase questions by id
    pools: AugmentationPools
    train_examples: list[TrainingExample]
    eval_triples: list[tuple[str, str, str]]  # (q id, paraphrase id, edited id)
    gold: dict[str, str]  # question id -> gold passage id
    manifest: dict

    def all_questions(self) -> dict[str, Question]:
        questions = {q.id: q for q in self.train_questions}
        questions.update({q.id: q for q in self.heldout_questions})
        questions.update(self.variant_questions)
        return questions


def synonym_paraphrase_detector(q: Question, q2: Question) -> bool:
    """Content-multiset equality after folding generator synonyms together."""
    def canon(tokens: Sequence[str]) -> Counter:
        return Counter(
            SYNONYM_CANON.get(t, t) for t in tokens if t not in DEFAULT_STOPWORDS
        )

    return canon(q.tokens) == canon(q2.tokens)


class _WorldBuilder:
    def __init__(self, cfg: WorldConfig):
        self.cfg = cfg
        self.entities = _entity_names(cfg.n_entities)
        library = _attribute_library()
        if cfg.n_attributes > len(library):
            raise GenerationError(
                f"n_attributes={cfg.n_attributes} exceeds library size {len(library)}"
            )
        self.attributes = library[: cfg.n_attributes]
        self.filler = _filler_vocab(cfg.vocab_size)
        self.facts: list[Fact] = []
        self.fact_by_cell: dict[tuple[int, int], Fact] = {}
        self.questions: dict[str, Question] = {}
        self.fact_of_question: dict[str, Fact] = {}

    def entity_family(self, entity_idx: int) -> list[int]:
        base = entity_idx // _FAMILY_SIZE
        return [
            i
            for i in range(base * _FAMILY_SIZE, min((base + 1) * _FAMILY_SIZE, len(self.entities)))
            if i != entity_idx
        ]

    def question_text(self, entity_idx: int, attr_idx: int) -> str:
        frame_idx, slot = self.attributes[attr_idx]
        frame = FRAMES[frame_idx]
        return frame.question_template.format(slot=slot, entity=self.entities[entity_idx])

    def build_facts(self, rng: np.random.Generator) -> None:
        n_facts = len(self.entities) * len(self.attributes)
        if self.cfg.n_passages < n_facts:
            raise GenerationError(
                f"n_passages={self.cfg.n_passages} below fact count {n_facts}"
            )
        values = _ValueFactory()
        idx = 0
        for e in range(len(self.entities)):
            for a in range(len(self.attributes)):
                frame_idx, slot = self.attributes[a]
                frame = FRAMES[frame_idx]
                fact = Fact(
                    entity_idx=e,
                    attr_idx=a,
                    value=values.next(frame.value_kind),
                    question_id=f"q{idx:05d}",
                    passage_id=f"p{idx:05d}",
                )
                self.facts.append(fact)
                self.fact_by_cell[(e, a)] = fact
                idx += 1

    def fact_passage(self, fact: Fact, rng: np.random.Generator) -> Passage:
        frame_idx, slot = self.attributes[fact.attr_idx]
        frame = FRAMES[frame_idx]
        fillers = [self.filler[int(rng.integers(len(self.filler)))] for _ in range(3)]
        text = frame.passage_template.format(
            slot=slot,
            entity=self.entities[fact.entity_idx],
            value=fact.value,
            f0=fillers[0],
            f1=fillers[1],
            f2=fillers[2],
        )
        title = f"{self.entities[fact.entity_idx]} {slot}"
        return Passage(id=fact.passage_id, title=title, text=text)

    def distractor_passage(self, idx: int, rng: np.random.Generator) -> Passage:
        entity = self.entities[int(rng.integers(len(self.entities)))]
        other = self.entities[int(rng.integers(len(self.entities)))]
        slots = [self.attributes[int(rng.integers(len(self.attributes)))][1] for _ in range(3)]
        fillers = [self.filler[int(rng.integers(len(self.filler)))] for _ in range(3)]
        text = (
            f"chronicles of {entity} mention the {slots[0]} and the {slots[1]} kept "
            f"near the {fillers[0]} quarter . a {fillers[1]} ledger compares the "
            f"{slots[2]} of {other} with older {fillers[2]} records"
        )
        return Passage(id=f"p{idx:05d}", title=f"{entity} chronicles", text=text)

    def fact_question(self, fact: Fact) -> Question:
        return Question(
            id=fact.question_id,
            text=self.question_text(fact.entity_idx, fact.attr_idx),
            answers=(fact.value,),
        )

    def sibling_cells(self, fact: Fact) -> list[tuple[int, int]]:
        cells = [
            (fact.entity_idx, a)
            for a in range(len(self.attributes))
            if a != fact.attr_idx
            and self.attributes[a][0] == self.attributes[fact.attr_idx][0]
        ]
        cells.extend((e, fact.attr_idx) for e in self.entity_family(fact.entity_idx))
        return cells

    def edited_question(
        self, fact: Fact, cell: tuple[int, int], variant_id: str
    ) -> tuple[Question, Fact]:
        sibling = self.fact_by_cell[cell]
        question = Question(
            id=variant_id,
            text=self.question_text(cell[0], cell[1]),
            answers=(sibling.value,),
        )
        return question, sibling


def generate_paraphrase(
    question: Question,
    rng: np.random.Generator,
    require_synonym: bool = False,
) -> Question | None:
    """Rephrase via synonym substitution and/or function-word reordering.

    Answers are unchanged; returns None when no edit applies.
    """
    tokens = list(question.tokens)
    swappable = [i for i, t in enumerate(tokens) if t in SYNONYMS]

    def synonym_edit(toks: list[str]) -> list[str]:
        i = swappable[int(rng.integers(len(swappable)))]
        options = SYNONYMS[toks[i]]
        toks = list(toks)
        toks[i] = options[int(rng.integers(len(options)))]
        return toks

    def reorder_edit(toks: list[str]) -> list[str]:
        return toks[2:] + toks[:2]

    plans: list[tuple[str, ...]] = []
    if swappable:
        plans.extend([("synonym",), ("synonym", "reorder")])
    if len(tokens) > 2:
        plans.append(("reorder",))
    if require_synonym:
        plans = [p for p in plans if "synonym" in p]
    if not plans:
        return None
    plan = plans[int(rng.integers(len(plans)))]
    for step in plan:
        tokens = synonym_edit(tokens) if step == "synonym" else reorder_edit(tokens)
    text = " ".join(tokens)
    if word_edit_distance(question.tokens, tuple(tokens)) == 0:
        return None
    return Question(id=f"{question.id}-para", text=text, answers=question.answers)


def generate_meq(
    question: Question,
    builder: _WorldBuilder,
    rng: np.random.Generator,
    variant_id: str | None = None,
    exclude_cells: Iterable[tuple[int, int]] = (),
) -> tuple[Question, Fact] | None:
    """Swap one content slot so the question maps to a sibling fact."""
    fact = builder.fact_of_question.get(question.id)
    if fact is None:
        raise GenerationError(f"{question.id} is not a generated world question")
    cells = [c for c in builder.sibling_cells(fact) if c not in set(exclude_cells)]
    if not cells:
        return None
    cell = cells[int(rng.integers(len(cells)))]
    vid = variant_id or f"{question.id}-meq"
    return builder.edited_question(fact, cell, vid)


def _self_check_pair(original: Question, edited: Question, cfg: FilterConfig) -> None:
    checks = (
        quality_control(original, edited, cfg),
        lexical_filter(original, edited, cfg),
        paraphrase_filter(original, edited),
        answer_difference(original.answers, edited.answers),
    )
    for verdict in checks:
        if not verdict.passed:
            raise GenerationError(
                f"generated edit {edited.id} fails stage {verdict.stage}: {verdict.reason}"
            )


def generate_world(
    cfg: WorldConfig,
    embed: Callable[[Question], np.ndarray] | None = None,
) -> World:
    """Build the full synthetic world; a pure function of the config."""
    rng = np.random.default_rng(cfg.seed)
    builder = _WorldBuilder(cfg)
    builder.build_facts(rng)

    passages: dict[str, Passage] = {}
    for fact in builder.facts:
        passage = builder.fact_passage(fact, rng)
        passages[passage.id] = passage
    for idx in range(len(builder.facts), cfg.n_passages):
        passage = builder.distractor_passage(idx, rng)
        passages[passage.id] = passage

    n_facts = len(builder.facts)
    if cfg.n_train_questions + cfg.n_heldout_questions > n_facts:
        raise GenerationError(
            f"train+heldout questions ({cfg.n_train_questions}+{cfg.n_heldout_questions}) "
            f"exceed fact count {n_facts}"
        )
    if cfg.n_contrast_questions > cfg.n_train_questions:
        raise GenerationError("n_contrast_questions exceeds n_train_questions")

    fact_order = rng.permutation(n_facts)
    train_facts = [builder.facts[i] for i in sorted(fact_order[: cfg.n_train_questions])]
    heldout_facts = [
        builder.facts[i]
        for i in sorted(
            fact_order[cfg.n_train_questions : cfg.n_train_questions + cfg.n_heldout_questions]
        )
    ]

    train_questions = [builder.fact_question(f) for f in train_facts]
    heldout_questions = [builder.fact_question(f) for f in heldout_facts]
    for question, fact in zip(train_questions + heldout_questions, train_facts + heldout_facts):
        builder.questions[question.id] = question
        builder.fact_of_question[question.id] = fact

    gold = {q.id: f.passage_id for q, f in zip(train_questions, train_facts)}
    gold.update({q.id: f.passage_id for q, f in zip(heldout_questions, heldout_facts)})

    index = build_index(list(passages.values()))
    filter_cfg = FilterConfig()

    # Contrast pairs: one edited variant per sampled training question.
    picked = rng.choice(len(train_questions), size=cfg.n_contrast_questions, replace=False)
    contrast_pairs: list[QuestionPair] = []
    variant_questions: dict[str, Question] = {}
    contrast_cells: dict[str, tuple[int, int]] = {}
    for i in sorted(picked):
        original = train_questions[i]
        result = generate_meq(original, builder, rng)
        if result is None:
            raise GenerationError(f"{original.id}: no sibling fact available for an edit")
        edited, sibling = result
        _self_check_pair(original, edited, filter_cfg)
        if sibling.passage_id == gold[original.id]:
            raise GenerationError(f"{edited.id}: edited gold equals original gold")
        variant_questions[edited.id] = edited
        gold[edited.id] = sibling.passage_id
        contrast_cells[original.id] = (sibling.entity_idx, sibling.attr_idx)
        contrast_pairs.append(
            QuestionPair(
                original_id=original.id,
                variant_id=edited.id,
                relation="meq",
                edit_distance=word_edit_distance(original.tokens, edited.tokens),
            )
        )

    # Augmentation pools for every training question.
    mine_count = 16
    paraphrase_pool: dict[str, tuple[Question, ...]] = {}
    meq_pool: dict[str, tuple[MeqCandidate, ...]] = {}
    for original in train_questions:
        paras: list[Question] = []
        seen_texts: set[str] = set()
        attempts = 0
        while len(paras) < cfg.paraphrases_per_question and attempts < 4 * cfg.paraphrases_per_question:
            attempts += 1
            draft = generate_paraphrase(original, rng)
            if draft is None or draft.text in seen_texts:
                continue
            seen_texts.add(draft.text)
            para = Question(
                id=f"{original.id}-aug-p{len(paras)}", text=draft.text, answers=draft.answers
            )
            if not synonym_paraphrase_detector(original, para):
                raise GenerationError(f"{para.id}: paraphrase rejected by synonym detector")
            paras.append(para)
        paraphrase_pool[original.id] = tuple(paras)

        candidates: list[MeqCandidate] = []
        used_cells: list[tuple[int, int]] = []
        for j in range(cfg.meqs_per_question):
            result = generate_meq(
                original, builder, rng, variant_id=f"{original.id}-aug-m{j}", exclude_cells=used_cells
            )
            if result is None:
                break
            edited, sibling = result
            used_cells.append((sibling.entity_idx, sibling.attr_idx))
            _self_check_pair(original, edited, filter_cfg)
            negatives = mine_hard_negatives(
                index, edited, mine_count, exclude={sibling.passage_id}
            )
            candidates.append(
                MeqCandidate(
                    question=edited,
                    positive=sibling.passage_id,
                    hard_negatives=tuple(negatives),
                )
            )
            variant_questions[edited.id] = edited
        meq_pool[original.id] = tuple(candidates)
    pools = AugmentationPools(paraphrases=paraphrase_pool, meqs=meq_pool)

    # Training examples with BM25-mined hard negatives.
    train_examples = []
    for original in train_questions:
        negatives = mine_hard_negatives(
            index, original, mine_count, exclude={gold[original.id]}
        )
        train_examples.append(
            TrainingExample(
                question_id=original.id,
                positive=gold[original.id],
                hard_negatives=tuple(negatives),
                origin="original",
            )
        )

    # Evaluation triples: fresh synonym paraphrases against the contrast edits.
    eval_triples: list[tuple[str, str, str]] = []
    for pair in contrast_pairs:
        original = builder.questions[pair.original_id]
        para = generate_paraphrase(original, rng, require_synonym=True)
        if para is None:
            raise GenerationError(f"{original.id}: no synonym paraphrase available")
        para = Question(id=f"{original.id}-eval-p", text=para.text, answers=para.answers)
        variant_questions[para.id] = para
        eval_triples.append((pair.original_id, para.id, pair.variant_id))

    # Reported (not enforced): fraction of contrast pairs the desk-scale
    # encoder would keep at the default cosine threshold.
    if embed is None:
        probe = DualEncoderModel.initialize(hash_buckets=4096, dim=32, rng_seed=cfg.seed)
        embed = lambda q: encode_question(probe, q)  # noqa: E731
    similarities = []
    for pair in contrast_pairs:
        cos = cosine_similarity(embed(builder.questions[pair.original_id]), embed(variant_questions[pair.variant_id]))
        similarities.append(cos)
    semantic_pass_rate = (
        sum(1 for c in similarities if c >= filter_cfg.eps_semantic_cos) / len(similarities)
        if similarities
        else 1.0
    )

    manifest = {
        "config": asdict(cfg),
        "n_facts": n_facts,
        "n_passages": len(passages),
        "n_train_questions": len(train_questions),
        "n_heldout_questions": len(heldout_questions),
        "n_contrast_pairs": len(contrast_pairs),
        "semantic_pass_rate": semantic_pass_rate,
    }

    return World(
        config=cfg,
        passages=passages,
        train_questions=train_questions,
        heldout_questions=heldout_questions,
        contrast_pairs=contrast_pairs,
        variant_questions=variant_questions,
        pools=pools,
        train_examples=train_examples,
        eval_triples=eval_triples,
        gold=gold,
        manifest=manifest,
    )
