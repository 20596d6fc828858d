"""Trainable hashed bag-of-words dual encoder with analytic gradients.

Each tower maps a token sequence to a dense vector: tokens are hashed into
an embedding table, the rows are mean-pooled, and an affine projection with
a tanh nonlinearity produces the output. Token hashing uses FNV-1a (64-bit)
reduced modulo the bucket count so the mapping is stable across processes
and platforms. Initialization draws from a counter-based Philox generator,
so a model is a pure function of (hash_buckets, dim, rng_seed).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Passage, Question

CHECKPOINT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(token: str) -> int:
    """64-bit FNV-1a hash of the token's UTF-8 bytes."""
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def token_buckets(tokens: Sequence[str], hash_buckets: int) -> np.ndarray:
    return np.array([fnv1a64(t) % hash_buckets for t in tokens], dtype=np.int64)


@dataclass
class Tower:
    """Parameters of one encoder tower (also reused as a gradient container)."""

    embedding: np.ndarray  # (hash_buckets, dim)
    projection: np.ndarray  # (dim, dim)
    bias: np.ndarray  # (dim,)

    def copy(self) -> "Tower":
        return Tower(self.embedding.copy(), self.projection.copy(), self.bias.copy())


@dataclass
class DualEncoderModel:
    hash_buckets: int
    dim: int
    rng_seed: int
    question_tower: Tower
    passage_tower: Tower

    @classmethod
    def initialize(cls, hash_buckets: int = 1 << 16, dim: int = 64, rng_seed: int = 0) -> "DualEncoderModel":
        """Build a fresh model; parameter draws depend only on rng_seed."""
        rng = np.random.Generator(np.random.Philox(key=rng_seed))
        bound = 1.0 / math.sqrt(dim)

        def tower() -> Tower:
            return Tower(
                embedding=rng.uniform(-bound, bound, size=(hash_buckets, dim)),
                projection=rng.uniform(-bound, bound, size=(dim, dim)),
                bias=rng.uniform(-bound, bound, size=dim),
            )

        # Fixed draw order: question tower first, then passage tower.
        return cls(hash_buckets, dim, rng_seed, tower(), tower())

    def copy(self) -> "DualEncoderModel":
        return DualEncoderModel(
            self.hash_buckets,
            self.dim,
            self.rng_seed,
            self.question_tower.copy(),
            self.passage_tower.copy(),
        )


def _encode_ids(tower: Tower, ids: np.ndarray) -> np.ndarray:
    pooled = tower.embedding[ids].mean(axis=0)
    return np.tanh(pooled @ tower.projection + tower.bias)


def encode_tokens(model: DualEncoderModel, kind: str, tokens: Sequence[str]) -> np.ndarray:
    if not tokens:
        raise ValueError(f"cannot encode an empty token sequence ({kind})")
    tower = model.question_tower if kind == "question" else model.passage_tower
    return _encode_ids(tower, token_buckets(tokens, model.hash_buckets))


def encode_question(model: DualEncoderModel, question: Question) -> np.ndarray:
    return encode_tokens(model, "question", question.tokens)


def encode_passage(model: DualEncoderModel, passage: Passage) -> np.ndarray:
    return encode_tokens(model, "passage", passage.tokens)


def relevance_score(vq: np.ndarray, vp: np.ndarray) -> float:
    """Inner product of two embedding vectors."""
    vq = np.asarray(vq, dtype=float)
    vp = np.asarray(vp, dtype=float)
    if vq.shape != vp.shape:
        raise ValueError(f"vector length mismatch: {vq.shape} vs {vp.shape}")
    return float(vq @ vp)


def cosine_similarity(v1: np.ndarray, v2: np.ndarray) -> float:
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape:
        raise ValueError(f"vector length mismatch: {v1.shape} vs {v2.shape}")
    n1 = float(np.linalg.norm(v1))
    n2 = float(np.linalg.norm(v2))
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    return float(v1 @ v2) / (n1 * n2)


def zero_grads(model: DualEncoderModel) -> "ModelGrads":
    def zeros(tower: Tower) -> Tower:
        return Tower(
            np.zeros_like(tower.embedding),
            np.zeros_like(tower.projection),
            np.zeros_like(tower.bias),
        )

    return ModelGrads(zeros(model.question_tower), zeros(model.passage_tower))


@dataclass
class ModelGrads:
    """Per-parameter gradient accumulators, shaped like the model."""

    question_tower: Tower
    passage_tower: Tower


def backprop_batch(
    model: DualEncoderModel,
    batch: Sequence[tuple[str, Sequence[str]]],
    upstream: np.ndarray,
    grads: ModelGrads | None = None,
) -> ModelGrads:
    """Accumulate d(sum_i upstream_i . output_i)/d(params) over a batch.

    ``batch`` holds (kind, tokens) items, where kind is "question" or
    "passage"; ``upstream`` holds one gradient row per item. The forward
    pass is recomputed here, which keeps the function self-contained.
    """
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (len(batch), model.dim):
        raise ValueError(
            f"upstream gradient shape {upstream.shape} does not match "
            f"({len(batch)}, {model.dim})"
        )
    if grads is None:
        grads = zero_grads(model)
    for (kind, tokens), grad_out in zip(batch, upstream):
        if kind not in ("question", "passage"):
            raise ValueError(f"unknown batch item kind {kind!r}")
        if not tokens:
            raise ValueError(f"cannot backprop through an empty token sequence ({kind})")
        tower = model.question_tower if kind == "question" else model.passage_tower
        acc = grads.question_tower if kind == "question" else grads.passage_tower
        ids = token_buckets(tokens, model.hash_buckets)
        pooled = tower.embedding[ids].mean(axis=0)
        out = np.tanh(pooled @ tower.projection + tower.bias)
        gz = grad_out * (1.0 - out * out)
        acc.bias += gz
        acc.projection += np.outer(pooled, gz)
        gh = tower.projection @ gz
        np.add.at(acc.embedding, ids, gh / len(ids))
    return grads


def to_checkpoint_dict(model: DualEncoderModel) -> dict:
    def tower_dict(tower: Tower) -> dict:
        return {
            "embedding": tower.embedding.tolist(),
            "projection": tower.projection.tolist(),
            "bias": tower.bias.tolist(),
        }

    return {
        "version": CHECKPOINT_VERSION,
        "config": {
            "hash_buckets": model.hash_buckets,
            "dim": model.dim,
            "rng_seed": model.rng_seed,
        },
        "question_tower": tower_dict(model.question_tower),
        "passage_tower": tower_dict(model.passage_tower),
    }


def from_checkpoint_dict(doc: dict) -> DualEncoderModel:
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    cfg = doc["config"]

    def tower(name: str) -> Tower:
        raw = doc[name]
        return Tower(
            embedding=np.array(raw["embedding"], dtype=float),
            projection=np.array(raw["projection"], dtype=float),
            bias=np.array(raw["bias"], dtype=float),
        )

    model = DualEncoderModel(
        hash_buckets=int(cfg["hash_buckets"]),
        dim=int(cfg["dim"]),
        rng_seed=int(cfg["rng_seed"]),
        question_tower=tower("question_tower"),
        passage_tower=tower("passage_tower"),
    )
    expected = (model.hash_buckets, model.dim)
    for t in (model.question_tower, model.passage_tower):
        if t.embedding.shape != expected or t.projection.shape != (model.dim, model.dim):
            raise ValueError("checkpoint arrays do not match the stated config")
    return model


def checkpoint_bytes(model: DualEncoderModel) -> bytes:
    # Canonical serialization: sorted keys, no whitespace, repr'd doubles.
    return json.dumps(to_checkpoint_dict(model), sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(model: DualEncoderModel, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path: str | Path) -> DualEncoderModel:
    return from_checkpoint_dict(json.loads(Path(path).read_text()))


def model_content_hash(model: DualEncoderModel) -> str:
    """SHA-256 of the canonical checkpoint serialization."""
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()
