"""Training objectives with values and exact gradients w.r.t. input scores.

The passage-side loss and the query-side InfoNCE variant share the same
softmax cross-entropy form, stabilized with a max shift. The triplet hinge
uses a zero subgradient at its kink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

QQ_VARIANTS = ("infonce", "dot_product", "triplet")

DEFAULT_LAMBDA = {"infonce": 0.5, "dot_product": 0.03, "triplet": 0.5}


@dataclass(frozen=True)
class LossConfig:
    """Query-side loss variant and its weighting within the combined objective."""

    qq_variant: str = "infonce"
    qq_lambda: float | None = None  # None picks the per-variant default
    margin_alpha: float = 1.0
    in_batch_negatives: bool = True

    def __post_init__(self) -> None:
        if self.qq_variant not in QQ_VARIANTS:
            raise ValueError(f"unknown qq_variant {self.qq_variant!r}")
        if self.qq_lambda is None:
            object.__setattr__(self, "qq_lambda", DEFAULT_LAMBDA[self.qq_variant])
        if not math.isfinite(self.qq_lambda) or self.qq_lambda < 0:
            raise ValueError("qq_lambda must be finite and >= 0")
        if self.margin_alpha <= 0:
            raise ValueError("margin_alpha must be > 0")


def _softmax_nce(s_pos: float, s_negs: Sequence[float]) -> tuple[float, float, np.ndarray]:
    scores = np.concatenate(([s_pos], np.asarray(s_negs, dtype=float)))
    if scores.size < 2:
        raise ValueError("at least one negative score is required")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    shift = scores.max()
    exp = np.exp(scores - shift)
    total = exp.sum()
    probs = exp / total
    loss = float(math.log(total) + shift - scores[0])
    return loss, float(probs[0] - 1.0), probs[1:].copy()


def qp_contrastive_loss(s_pos: float, s_negs: Sequence[float]) -> tuple[float, float, np.ndarray]:
    """Softmax loss pulling a question toward its positive passage.

    Returns (loss, d loss/d s_pos, d loss/d s_negs).
    """
    return _softmax_nce(s_pos, s_negs)


def qq_infonce(s_pos: float, s_negs: Sequence[float]) -> tuple[float, float, np.ndarray]:
    """Same softmax form applied to question-question scores."""
    return _softmax_nce(s_pos, s_negs)


def qq_dot_product(s_neg: float) -> tuple[float, float]:
    """Directly penalize the score against the edited-question negative."""
    if not math.isfinite(s_neg):
        raise ValueError("score must be finite")
    return float(s_neg), 1.0


def qq_triplet(s_pos: float, s_neg: float, alpha: float) -> tuple[float, float, float]:
    """Hinge max(0, alpha - s_pos + s_neg); zero gradients at the kink."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    violation = alpha - s_pos + s_neg
    if violation > 0:
        return float(violation), -1.0, 1.0
    return 0.0, 0.0, 0.0


def combined_loss(l_qp: float, l_qq: float, lam: float) -> float:
    if not (math.isfinite(l_qp) and math.isfinite(l_qq) and math.isfinite(lam)):
        raise ValueError("loss terms and lambda must be finite")
    return l_qp + lam * l_qq
