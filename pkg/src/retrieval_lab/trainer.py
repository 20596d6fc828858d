"""Training loop: per-epoch augmentation sampling, Adam with linear warmup,
checkpointing, and dev-based checkpoint selection.

Determinism contract: all random draws flow through generators keyed by
(seed, epoch), batches and gradient reductions use fixed iteration orders,
and metric logs format floats with repr, so two runs with the same seed
produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import evalsuite
from .core import Passage, Question
from .embedder import (
    DualEncoderModel,
    ModelGrads,
    backprop_batch,
    encode_question,
    encode_tokens,
    save_checkpoint,
)
from .lexindex import CandidateSet
from .losses import (
    LossConfig,
    combined_loss,
    qp_contrastive_loss,
    qq_dot_product,
    qq_infonce,
    qq_triplet,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

ORIGINS = ("original", "augmented_meq")


class TrainingError(Exception):
    """Training aborted (non-finite loss or inconsistent inputs)."""


@dataclass(frozen=True)
class TrainingExample:
    question_id: str
    positive: str
    hard_negatives: tuple[str, ...]
    origin: str = "original"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hard_negatives", tuple(self.hard_negatives))
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.positive in self.hard_negatives:
            raise ValueError(f"{self.question_id}: positive listed among negatives")


@dataclass(frozen=True)
class MeqCandidate:
    """A synthetic edited-question negative with its own retrieval targets."""

    question: Question
    positive: str
    hard_negatives: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "hard_negatives", tuple(self.hard_negatives))
        if self.positive in self.hard_negatives:
            raise ValueError(f"{self.question.id}: positive listed among negatives")


@dataclass
class AugmentationPools:
    """Per-question candidate paraphrases and edited-question negatives."""

    paraphrases: dict[str, tuple[Question, ...]] = field(default_factory=dict)
    meqs: dict[str, tuple[MeqCandidate, ...]] = field(default_factory=dict)

    def for_question(self, question_id: str) -> tuple[tuple[Question, ...], tuple[MeqCandidate, ...]]:
        return self.paraphrases.get(question_id, ()), self.meqs.get(question_id, ())


def sample_augmentations(
    question: Question, pools: AugmentationPools, rng: np.random.Generator
) -> tuple[Question | None, MeqCandidate | None]:
    """Uniform per-epoch draw from each non-empty candidate pool."""
    paras, meqs = pools.for_question(question.id)
    q_plus = paras[int(rng.integers(len(paras)))] if paras else None
    q_minus = meqs[int(rng.integers(len(meqs)))] if meqs else None
    return q_plus, q_minus


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 64
    epochs: int = 40
    warmup_fraction: float = 0.05
    qq_variant: str = "infonce"
    qq_lambda: float | None = None  # None picks the per-variant default
    margin_alpha: float = 1.0
    in_batch_negatives: bool = True
    negatives_per_question: int = 1
    augment_count: int | None = None  # None admits every sampled variant
    seed: int = 0
    hash_buckets: int = 1 << 16
    dim: int = 64
    selection_metric: str = "dev_mrr"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size, and epochs must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.negatives_per_question < 1:
            raise ValueError("negatives_per_question must be >= 1")
        if self.selection_metric not in ("dev_mrr", "contrast_mrr"):
            raise ValueError(f"unknown selection_metric {self.selection_metric!r}")

    def loss_config(self) -> LossConfig:
        return LossConfig(
            qq_variant=self.qq_variant,
            qq_lambda=self.qq_lambda,
            margin_alpha=self.margin_alpha,
            in_batch_negatives=self.in_batch_negatives,
        )


@dataclass
class TrainData:
    passages: Mapping[str, Passage]
    questions: Mapping[str, Question]
    examples: Sequence[TrainingExample]
    pools: AugmentationPools = field(default_factory=AugmentationPools)
    dev_sets: Sequence[CandidateSet] = ()
    contrast_sets: Sequence[CandidateSet] = ()


@dataclass
class BatchEntry:
    question: Question
    positive: str
    negatives: tuple[str, ...]
    origin: str


@dataclass
class QQTerm:
    row: int  # batch row of the original question
    q_plus: Question | None
    q_minus: MeqCandidate | None


@dataclass
class PreparedBatch:
    entries: list[BatchEntry]
    qq_terms: list[QQTerm]


def _variant_requirements(variant: str, q_plus, q_minus) -> bool:
    if variant == "dot_product":
        return q_minus is not None
    return q_plus is not None and q_minus is not None


def prepare_epoch(data: TrainData, cfg: TrainConfig, epoch: int) -> list[PreparedBatch]:
    """Sample augmentations and negatives, shuffle, and slice into batches."""
    rng = np.random.default_rng([cfg.seed, epoch])
    draws: list[tuple[Question | None, MeqCandidate | None]] = []
    for example in data.examples:
        question = data.questions[example.question_id]
        draws.append(sample_augmentations(question, data.pools, rng))

    eligible = [i for i, (_p, meq) in enumerate(draws) if meq is not None]
    admit = len(eligible) if cfg.augment_count is None else min(cfg.augment_count, len(eligible))
    if admit < len(eligible):
        picked = rng.choice(len(eligible), size=admit, replace=False)
        admitted = sorted(eligible[i] for i in picked)
    else:
        admitted = eligible

    def sampled_negatives(pool: tuple[str, ...]) -> tuple[str, ...]:
        take = min(cfg.negatives_per_question, len(pool))
        if take == 0:
            return ()
        picks = rng.choice(len(pool), size=take, replace=False)
        return tuple(pool[i] for i in sorted(picks))

    entries: list[tuple[BatchEntry, QQTerm | None]] = []
    for i, example in enumerate(data.examples):
        question = data.questions[example.question_id]
        entry = BatchEntry(
            question=question,
            positive=example.positive,
            negatives=sampled_negatives(example.hard_negatives),
            origin="original",
        )
        q_plus, q_minus = draws[i]
        term = QQTerm(-1, q_plus, q_minus) if _variant_requirements(cfg.qq_variant, q_plus, q_minus) else None
        entries.append((entry, term))
    for i in admitted:
        meq = draws[i][1]
        assert meq is not None
        entries.append(
            (
                BatchEntry(
                    question=meq.question,
                    positive=meq.positive,
                    negatives=sampled_negatives(meq.hard_negatives),
                    origin="augmented_meq",
                ),
                None,
            )
        )

    order = rng.permutation(len(entries))
    batches: list[PreparedBatch] = []
    for start in range(0, len(entries), cfg.batch_size):
        chunk = [entries[j] for j in order[start : start + cfg.batch_size]]
        batch_entries = [entry for entry, _term in chunk]
        qq_terms = [
            replace(term, row=row)
            for row, (_entry, term) in enumerate(chunk)
            if term is not None
        ]
        batches.append(PreparedBatch(entries=batch_entries, qq_terms=qq_terms))
    return batches


@dataclass
class StepLosses:
    l_qp: float
    l_qq: float
    combined: float
    n_qq_terms: int


def batch_losses_and_grads(
    model: DualEncoderModel,
    batch: PreparedBatch,
    data: TrainData,
    loss_cfg: LossConfig,
    compute_grads: bool = True,
) -> tuple[StepLosses, ModelGrads | None]:
    """Combined objective for one batch, with exact parameter gradients.

    The passage loss is averaged over all batch entries, using each entry's
    positive against every other passage in the batch plus its own sampled
    hard negatives (shared in-batch negatives). The query-side loss is
    averaged over the entries that carry the draws its variant needs.
    """
    entries = batch.entries
    b = len(entries)
    if b == 0:
        raise ValueError("empty batch")

    q_vectors = np.stack([encode_question(model, e.question) for e in entries])
    passage_ids: list[str] = [e.positive for e in entries]
    for e in entries:
        passage_ids.extend(e.negatives)
    p_tokens = [data.passages[pid].tokens for pid in passage_ids]
    p_vectors = np.stack([encode_tokens(model, "passage", toks) for toks in p_tokens])

    scores = q_vectors @ p_vectors.T
    d_scores = np.zeros_like(scores)
    qp_total = 0.0
    for i in range(b):
        neg_cols = [c for c in range(len(passage_ids)) if c != i]
        loss, g_pos, g_negs = qp_contrastive_loss(scores[i, i], scores[i, neg_cols])
        qp_total += loss
        d_scores[i, i] += g_pos
        d_scores[i, neg_cols] += g_negs
    l_qp = qp_total / b
    d_scores /= b

    grad_q = d_scores @ p_vectors  # (b, dim)
    grad_p = d_scores.T @ q_vectors  # (n_passages, dim)

    original_rows = [i for i, e in enumerate(entries) if e.origin == "original"]
    qq_total = 0.0
    # Per qq term: (tokens, gradient) for the extra encodes it introduced.
    extra_encodes: list[tuple[Sequence[str], np.ndarray]] = []
    qq_grad_q = np.zeros_like(q_vectors)
    terms = batch.qq_terms
    for term in terms:
        vq = q_vectors[term.row]
        v_plus = encode_question(model, term.q_plus) if term.q_plus is not None else None
        v_minus = encode_question(model, term.q_minus.question) if term.q_minus is not None else None
        g_plus_vec = np.zeros(model.dim)
        g_minus_vec = np.zeros(model.dim)
        if loss_cfg.qq_variant == "infonce":
            in_batch_rows = (
                [r for r in original_rows if r != term.row]
                if loss_cfg.in_batch_negatives
                else []
            )
            s_pos = float(vq @ v_plus)
            s_negs = [float(vq @ v_minus)] + [float(vq @ q_vectors[r]) for r in in_batch_rows]
            loss, g_pos, g_negs = qq_infonce(s_pos, s_negs)
            qq_grad_q[term.row] += g_pos * v_plus + g_negs[0] * v_minus
            g_plus_vec += g_pos * vq
            g_minus_vec += g_negs[0] * vq
            for g, r in zip(g_negs[1:], in_batch_rows):
                qq_grad_q[term.row] += g * q_vectors[r]
                qq_grad_q[r] += g * vq
        elif loss_cfg.qq_variant == "dot_product":
            loss, g_neg = qq_dot_product(float(vq @ v_minus))
            qq_grad_q[term.row] += g_neg * v_minus
            g_minus_vec += g_neg * vq
        else:  # triplet
            loss, g_pos, g_neg = qq_triplet(
                float(vq @ v_plus), float(vq @ v_minus), loss_cfg.margin_alpha
            )
            qq_grad_q[term.row] += g_pos * v_plus + g_neg * v_minus
            g_plus_vec += g_pos * vq
            g_minus_vec += g_neg * vq
        qq_total += loss
        if term.q_plus is not None:
            extra_encodes.append((term.q_plus.tokens, g_plus_vec))
        if term.q_minus is not None:
            extra_encodes.append((term.q_minus.question.tokens, g_minus_vec))

    n_terms = len(terms)
    l_qq = qq_total / n_terms if n_terms else 0.0
    lam = loss_cfg.qq_lambda
    total = combined_loss(l_qp, l_qq, lam)
    losses = StepLosses(l_qp=l_qp, l_qq=l_qq, combined=total, n_qq_terms=n_terms)
    if not compute_grads:
        return losses, None

    qq_scale = lam / n_terms if n_terms else 0.0
    items: list[tuple[str, Sequence[str]]] = []
    upstream_rows: list[np.ndarray] = []
    for i, e in enumerate(entries):
        items.append(("question", e.question.tokens))
        upstream_rows.append(grad_q[i] + qq_scale * qq_grad_q[i])
    for tokens, grad in extra_encodes:
        items.append(("question", tokens))
        upstream_rows.append(qq_scale * grad)
    for toks in p_tokens:
        items.append(("passage", toks))
    upstream = np.vstack([np.stack(upstream_rows), grad_p])
    grads = backprop_batch(model, items, upstream)
    return losses, grads


def model_params(model: DualEncoderModel) -> dict[str, np.ndarray]:
    return {
        "question_tower.embedding": model.question_tower.embedding,
        "question_tower.projection": model.question_tower.projection,
        "question_tower.bias": model.question_tower.bias,
        "passage_tower.embedding": model.passage_tower.embedding,
        "passage_tower.projection": model.passage_tower.projection,
        "passage_tower.bias": model.passage_tower.bias,
    }


def grads_dict(grads: ModelGrads) -> dict[str, np.ndarray]:
    return {
        "question_tower.embedding": grads.question_tower.embedding,
        "question_tower.projection": grads.question_tower.projection,
        "question_tower.bias": grads.question_tower.bias,
        "passage_tower.embedding": grads.passage_tower.embedding,
        "passage_tower.projection": grads.passage_tower.projection,
        "passage_tower.bias": grads.passage_tower.bias,
    }


@dataclass
class AdamState:
    step_count: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def init(cls, model: DualEncoderModel) -> "AdamState":
        params = model_params(model)
        return cls(
            step_count=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One bias-corrected Adam update, in place."""
    state.step_count += 1
    t = state.step_count
    for name, p in params.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


def warmup_linear_lr(
    base_lr: float, completed_steps: int, total_steps: int, warmup_fraction: float
) -> float:
    """Linear ramp over the warmup steps, then linear decay toward zero."""
    warmup = int(warmup_fraction * total_steps)
    if completed_steps < warmup:
        return base_lr * completed_steps / warmup
    return base_lr * max(0.0, total_steps - completed_steps) / max(1, total_steps - warmup)


@dataclass
class EpochMetrics:
    epoch: int
    mean_l_qp: float
    mean_l_qq: float
    mean_combined: float


def train_epoch(
    model: DualEncoderModel,
    adam: AdamState,
    data: TrainData,
    cfg: TrainConfig,
    epoch: int,
    total_steps: int,
    metrics_rows: list[tuple[int, float, float, float]] | None = None,
) -> EpochMetrics:
    """Run one epoch of updates in place; returns epoch-mean losses."""
    loss_cfg = cfg.loss_config()
    params = model_params(model)
    sums = np.zeros(3)
    batches = prepare_epoch(data, cfg, epoch)
    for batch in batches:
        losses, grads = batch_losses_and_grads(model, batch, data, loss_cfg)
        if not math.isfinite(losses.combined):
            ids = [e.question.id for e in batch.entries]
            raise TrainingError(
                f"non-finite loss at step {adam.step_count + 1} (batch {ids})"
            )
        lr = warmup_linear_lr(cfg.learning_rate, adam.step_count, total_steps, cfg.warmup_fraction)
        adam_step(params, grads_dict(grads), adam, lr)
        if metrics_rows is not None:
            metrics_rows.append((adam.step_count, losses.l_qp, losses.l_qq, losses.combined))
        sums += (losses.l_qp, losses.l_qq, losses.combined)
    n = len(batches)
    return EpochMetrics(epoch, sums[0] / n, sums[1] / n, sums[2] / n)


def planned_steps(data: TrainData, cfg: TrainConfig) -> int:
    """Total optimizer steps over the whole run (constant across epochs)."""
    eligible = sum(1 for ex in data.examples if data.pools.meqs.get(ex.question_id))
    admit = eligible if cfg.augment_count is None else min(cfg.augment_count, eligible)
    per_epoch = math.ceil((len(data.examples) + admit) / cfg.batch_size)
    return per_epoch * cfg.epochs


@dataclass
class TrainResult:
    out_dir: Path
    checkpoints: list[Path]
    metrics_path: Path
    report_path: Path
    report: dict
    model: DualEncoderModel


def _format_float(value: float) -> str:
    return repr(float(value))


def train(data: TrainData, cfg: TrainConfig, out_dir: str | Path) -> TrainResult:
    """Full run: per-epoch updates, checkpoints, and a selection report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = DualEncoderModel.initialize(cfg.hash_buckets, cfg.dim, rng_seed=cfg.seed)
    adam = AdamState.init(model)
    total_steps = planned_steps(data, cfg)

    metrics_rows: list[tuple[int, float, float, float]] = []
    checkpoints: list[Path] = []
    epoch_reports: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        epoch_metrics = train_epoch(model, adam, data, cfg, epoch, total_steps, metrics_rows)
        ckpt_path = out_dir / f"epoch_{epoch}.ckpt"
        save_checkpoint(model, ckpt_path)
        checkpoints.append(ckpt_path)
        entry: dict = {
            "epoch": epoch,
            "checkpoint": ckpt_path.name,
            "mean_l_qp": epoch_metrics.mean_l_qp,
            "mean_l_qq": epoch_metrics.mean_l_qq,
            "mean_combined": epoch_metrics.mean_combined,
        }
        if data.dev_sets:
            entry["dev_mrr"] = evalsuite.ranking_eval(
                model, data.dev_sets, data.questions, data.passages
            ).mrr
        if data.contrast_sets:
            entry["contrast_mrr"] = evalsuite.ranking_eval(
                model, data.contrast_sets, data.questions, data.passages
            ).mrr
        epoch_reports.append(entry)

    best: dict[str, dict] = {}
    for metric in ("dev_mrr", "contrast_mrr"):
        scored = [e for e in epoch_reports if metric in e]
        if scored:
            top = max(scored, key=lambda e: (e[metric], -e["epoch"]))
            best[metric] = {
                "epoch": top["epoch"],
                "checkpoint": top["checkpoint"],
                "value": top[metric],
            }

    report = {
        "selection_metric": cfg.selection_metric,
        "selected": best.get(cfg.selection_metric),
        "best": best,
        "epochs": epoch_reports,
        "total_steps": total_steps,
    }

    metrics_path = out_dir / "metrics.csv"
    with metrics_path.open("w", encoding="utf-8") as handle:
        handle.write("step,l_qp,l_qq,combined\n")
        for step, l_qp, l_qq, comb in metrics_rows:
            handle.write(
                f"{step},{_format_float(l_qp)},{_format_float(l_qq)},{_format_float(comb)}\n"
            )
    report_path = out_dir / "selection_report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    return TrainResult(
        out_dir=out_dir,
        checkpoints=checkpoints,
        metrics_path=metrics_path,
        report_path=report_path,
        report=report,
        model=model,
    )
