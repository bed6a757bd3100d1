"""Cosine-similarity classification head and the training losses.

Class scores are cosine similarities between L2-normalized text features
(one row per class) and an image feature, softmaxed at temperature tau.
Losses run in float64: logits are cast up on entry, so cross-entropy and
KL keep far more headroom than the float32 activations feeding them,
while gradients cast back to float32 where they meet the prompts.

The distillation target (teacher) enters as detached probabilities, so
no gradient ever reaches it regardless of how it was produced. Log
arguments are floored at 1e-12 when a distribution may hold exact zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, NumericError, UsageError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Logits:
    """Per-class similarity scores with their origin."""

    values: T.Tensor  # shape (C,)
    provenance: str = "prompted"  # or "zero_shot"

    def __post_init__(self):
        if self.values.data.ndim != 1 or self.values.size < 2:
            raise DimensionError(
                f"logits must be a vector of at least 2 scores, got shape {tuple(self.values.shape)}"
            )
        if not np.all(np.isfinite(self.values.data)):
            raise NumericError("logits contain non-finite scores")

    @property
    def n_classes(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class Prediction:
    """A probability vector plus the graph tensors it came from."""

    probs: np.ndarray  # float64, detached copy
    tau: float
    probs_tensor: T.Tensor
    log_probs: T.Tensor
    provenance: str

    @property
    def n_classes(self) -> int:
        return self.probs.size


def stack_features(features) -> T.Tensor:
    """Stack per-class (d,) feature tensors into a (C, d) matrix."""
    rows = [T.reshape(f, (1, f.size)) for f in features]
    return rows[0] if len(rows) == 1 else T.concat(rows, axis=0)


def similarity(class_features: T.Tensor, image_feature: T.Tensor,
               provenance: str = "prompted") -> Logits:
    """Cosine similarity of each row of `class_features` (C, d) against
    `image_feature` (d,); every score lies in [-1, 1]."""
    z = class_features
    f = image_feature
    if z.data.ndim != 2 or f.data.ndim != 1 or z.shape[1] != f.shape[0]:
        raise DimensionError(
            f"similarity shapes incompatible: {tuple(z.shape)} vs {tuple(f.shape)}"
        )
    row_norms = np.sum(z.data.astype(np.float64) ** 2, axis=1)
    for i, n in enumerate(row_norms):
        if n == 0.0:
            raise NumericError(f"class {i} embedding has zero norm")
    if float(np.sum(f.data.astype(np.float64) ** 2)) == 0.0:
        raise NumericError("image embedding has zero norm")

    f_row = T.reshape(f, (1, f.shape[0]))
    f_inv = T.exp(T.scale(T.log(T.sum_all(T.mul(f_row, f_row))), -0.5))
    scores = []
    for i in range(z.shape[0]):
        zi = T.take_rows(z, [i])
        z_inv = T.exp(T.scale(T.log(T.sum_all(T.mul(zi, zi))), -0.5))
        dot = T.sum_all(T.mul(zi, f_row))
        cos = T.scale(T.scale(dot, z_inv), f_inv)
        scores.append(T.reshape(cos, (1,)))
    values = scores[0] if len(scores) == 1 else T.concat(scores, axis=0)
    return Logits(values=values, provenance=provenance)


def predict(logits: Logits, tau: float) -> Prediction:
    """Temperature softmax over the scores, carried out in float64."""
    if not (tau > 0):
        raise ConfigError(f"tau must be positive, got {tau}")
    scaled = T.scale(T.cast(logits.values, np.float64), 1.0 / tau)
    probs_t = T.softmax(scaled)
    # at extreme temperatures a probability can underflow to exact zero;
    # its log-prob is then -inf, the correct limit, and stays unread unless
    # that class is picked as a label or teacher-supported target
    with np.errstate(divide="ignore"):
        log_probs = T.log(probs_t)
    probs = probs_t.data.copy()
    if abs(float(probs.sum()) - 1.0) > 1e-6:
        raise NumericError("prediction does not sum to 1")
    return Prediction(probs=probs, tau=tau, probs_tensor=probs_t,
                      log_probs=log_probs, provenance=logits.provenance)


def ce_loss(pred: Prediction, label: int) -> T.Tensor:
    """Cross entropy -log p[label], built from log-probabilities."""
    if not (0 <= int(label) < pred.n_classes):
        raise UsageError(f"label {label} out of range for {pred.n_classes} classes")
    picked = T.sum_all(T.take_rows(pred.log_probs, [int(label)]))
    return T.scale(picked, -1.0)


def kl_loss(pred: Prediction, target: Prediction,
            direction: str = "teacher_first") -> T.Tensor:
    """Divergence between the student `pred` and the detached `target`.

    teacher_first computes KL(target || pred), the usual distillation
    reading; student_first computes KL(pred || target). Either way only
    `pred` carries gradient.
    """
    if pred.n_classes != target.n_classes:
        raise DimensionError(
            f"distribution lengths differ: {pred.n_classes} vs {target.n_classes}"
        )
    if direction not in ("teacher_first", "student_first"):
        raise UsageError(f"unknown kl direction {direction!r}")
    t = target.probs.astype(np.float64)
    log_t = np.log(np.maximum(t, PROB_FLOOR))
    if direction == "teacher_first":
        weights = T.Tensor(t, dtype=np.float64)
        gap = T.sub(T.Tensor(log_t, dtype=np.float64), pred.log_probs)
        return T.sum_all(T.mul(weights, gap))
    gap = T.sub(pred.log_probs, T.Tensor(log_t, dtype=np.float64))
    return T.sum_all(T.mul(pred.probs_tensor, gap))


def stage1_loss(pred: Prediction, label: int, teacher: Prediction, lam: float,
                direction: str = "teacher_first") -> T.Tensor:
    """CE plus lam * KL against the frozen teacher; at lam == 0 this IS the
    cross-entropy tensor, not a sum with a zero term."""
    if lam < 0:
        raise ConfigError(f"distillation weight must be >= 0, got {lam}")
    ce = ce_loss(pred, label)
    if lam == 0.0:
        return ce
    return T.add(ce, T.scale(kl_loss(pred, teacher, direction), float(lam)))


def stage2_loss(pred: Prediction, label: int) -> T.Tensor:
    """Pure cross-entropy; kept as its own entry point so logs and audits
    can tell the stages apart."""
    return ce_loss(pred, label)
