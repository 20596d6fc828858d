"""Contrast-consistency experiment driver.

Trains a vanilla model (passage loss only, no augmentation) and augmented
models with each query-side loss variant on the same synthetic world, then
measures held-out ranking, contrast-set ranking, top-k passage overlap, and
paraphrase-vs-edit identification. Checkpoints are selected per metric:
held-out MRR picks the checkpoint reported on held-out data, contrast MRR
picks the one used for contrast metrics, mirroring a dev-setting protocol.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import evalsuite, lexindex, synthgen, trainer
from .embedder import load_checkpoint
from .lexindex import CandidateSet, build_candidate_set, build_index
from .synthgen import World, WorldConfig
from .trainer import TrainConfig, TrainData


@dataclass
class PreparedWorld:
    world: World
    data: TrainData
    heldout_sets: list[CandidateSet]
    contrast_sets: list[CandidateSet]
    triples: list[tuple]


@dataclass
class RunMetrics:
    name: str
    seed: int
    heldout_mrr: float
    contrast_mrr: float
    overlap_top5: float
    identification_rate: float
    train_seconds: float


def prepare_world(world_cfg: WorldConfig) -> PreparedWorld:
    world = synthgen.generate_world(world_cfg)
    index = build_index(list(world.passages.values()))
    rng = np.random.default_rng([world_cfg.seed, 7])
    questions = world.all_questions()

    heldout_sets = [
        build_candidate_set(q, world.gold[q.id], index, rng) for q in world.heldout_questions
    ]
    contrast_sets = [
        build_candidate_set(questions[p.variant_id], world.gold[p.variant_id], index, rng)
        for p in world.contrast_pairs
    ]
    triples = [
        (questions[a], questions[b], questions[c]) for a, b, c in world.eval_triples
    ]
    data = TrainData(
        passages=world.passages,
        questions=questions,
        examples=world.train_examples,
        pools=world.pools,
        dev_sets=heldout_sets,
        contrast_sets=contrast_sets,
    )
    return PreparedWorld(world, data, heldout_sets, contrast_sets, triples)


def vanilla_config(base: TrainConfig) -> TrainConfig:
    """Passage loss only: no query-side loss, no edited-question augmentation."""
    return replace(base, qq_lambda=0.0, augment_count=0)


def run_training(
    prepared: PreparedWorld, cfg: TrainConfig, name: str, out_dir: str | Path | None = None
) -> RunMetrics:
    """Train one configuration and evaluate its selected checkpoints."""
    start = time.time()
    if out_dir is None:
        with tempfile.TemporaryDirectory(prefix=f"run-{name}-") as tmp:
            return _run_in_dir(prepared, cfg, name, Path(tmp), start)
    return _run_in_dir(prepared, cfg, name, Path(out_dir), start)


def _run_in_dir(
    prepared: PreparedWorld, cfg: TrainConfig, name: str, out_dir: Path, start: float
) -> RunMetrics:
    result = trainer.train(prepared.data, cfg, out_dir)
    best = result.report["best"]
    heldout_model = load_checkpoint(out_dir / best["dev_mrr"]["checkpoint"])
    contrast_model = load_checkpoint(out_dir / best["contrast_mrr"]["checkpoint"])

    questions = prepared.data.questions
    passages = prepared.data.passages
    heldout = evalsuite.ranking_eval(heldout_model, prepared.heldout_sets, questions, passages)
    contrast = evalsuite.ranking_eval(contrast_model, prepared.contrast_sets, questions, passages)
    corpus_cache = evalsuite.encode_corpus(contrast_model, passages)
    overlap = evalsuite.passage_overlap(
        contrast_model,
        prepared.world.contrast_pairs,
        questions,
        passages,
        k=5,
        corpus_embeddings=corpus_cache,
    )
    ident = evalsuite.identification_rate(contrast_model, prepared.triples)
    return RunMetrics(
        name=name,
        seed=cfg.seed,
        heldout_mrr=heldout.mrr,
        contrast_mrr=contrast.mrr,
        overlap_top5=overlap,
        identification_rate=ident,
        train_seconds=time.time() - start,
    )


def run_seed(
    world_cfg: WorldConfig, base_cfg: TrainConfig, variants: tuple[str, ...] = ("infonce", "dot_product", "triplet")
) -> dict[str, RunMetrics]:
    """All configurations for one seed: vanilla plus each query-loss variant."""
    prepared = prepare_world(world_cfg)
    runs: dict[str, RunMetrics] = {}
    vanilla = vanilla_config(replace(base_cfg, seed=world_cfg.seed))
    runs["vanilla"] = run_training(prepared, vanilla, "vanilla")
    for variant in variants:
        cfg = replace(base_cfg, seed=world_cfg.seed, qq_variant=variant, qq_lambda=None)
        runs[variant] = run_training(prepared, cfg, variant)
    return runs


def summarize(per_seed: list[dict[str, RunMetrics]]) -> dict[str, dict[str, float]]:
    """Mean metrics per configuration name across seeds."""
    names = per_seed[0].keys()
    summary: dict[str, dict[str, float]] = {}
    for name in names:
        rows = [runs[name] for runs in per_seed]
        summary[name] = {
            "heldout_mrr": float(np.mean([r.heldout_mrr for r in rows])),
            "contrast_mrr": float(np.mean([r.contrast_mrr for r in rows])),
            "overlap_top5": float(np.mean([r.overlap_top5 for r in rows])),
            "identification_rate": float(np.mean([r.identification_rate for r in rows])),
            "max_train_seconds": float(np.max([r.train_seconds for r in rows])),
        }
    return summary
