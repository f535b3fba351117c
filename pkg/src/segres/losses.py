"""Pixel cross-entropy losses over probability maps, with analytic gradients.

Both losses read the probability the model assigned to each pixel's true
class and average -log of it over non-ignored pixels. The balanced variant
weights that term by ``beta`` on positive-class pixels and ``1 - beta`` on
the rest, which counters heavy background/foreground imbalance.
"""

from dataclasses import dataclass

import numpy as np

from .validation import (
    DegenerateInputError,
    ShapeError,
    check_label_range,
    check_nchw,
)

# Floor for the true-class probability before log/division; keeps the loss
# and gradient finite even for a fully confident wrong prediction.
_P_FLOOR = 1e-300


@dataclass(frozen=True)
class LossConfig:
    """Weighting policy: which classes count as positive, and the beta factor.

    ``positive_classes=None`` treats every non-background id (anything but 0)
    as positive. ``ignore_id`` pixels contribute neither loss nor gradient.
    """

    beta: float = 0.75
    positive_classes: frozenset | None = None
    ignore_id: int = 255

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.positive_classes is not None:
            object.__setattr__(self, "positive_classes", frozenset(int(c) for c in self.positive_classes))

    def positive_mask(self, labels: np.ndarray) -> np.ndarray:
        if self.positive_classes is None:
            return labels != 0
        return np.isin(labels, sorted(self.positive_classes))


def _prepare(prob: np.ndarray, labels: np.ndarray, cfg: LossConfig):
    check_nchw(prob, "prob")
    labels = np.asarray(labels)
    if labels.shape != (prob.shape[0],) + prob.shape[2:]:
        raise ShapeError(f"labels shape {labels.shape} does not match probabilities {prob.shape}")
    check_label_range(labels, prob.shape[1], cfg.ignore_id)
    mask = labels != cfg.ignore_id
    count = int(mask.sum())
    if count == 0:
        raise DegenerateInputError("every pixel is ignored; loss undefined")
    safe = np.where(mask, labels, 0)
    p_true = np.take_along_axis(prob, safe[:, None], axis=1)[:, 0]
    return labels, mask, count, safe, np.maximum(p_true, _P_FLOOR)


def _weighted_ce(prob, labels, cfg, weights):
    labels, mask, count, safe, p_true = _prepare(prob, labels, cfg)
    terms = weights * -np.log(p_true)
    loss = float(terms[mask].sum() / count)
    dp = np.where(mask, -weights / (p_true * count), 0.0)
    dprob = np.zeros_like(prob)
    np.put_along_axis(dprob, safe[:, None], dp[:, None], axis=1)
    return loss, dprob


def ce_loss(prob: np.ndarray, labels: np.ndarray, cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray]:
    """Mean -log p_true over non-ignored pixels; returns (loss, dloss/dprob)."""
    labels = np.asarray(labels)
    return _weighted_ce(prob, labels, cfg, np.ones(labels.shape))


def balanced_ce_loss(
    prob: np.ndarray, labels: np.ndarray, cfg: LossConfig = LossConfig()
) -> tuple[float, np.ndarray]:
    """Class-balanced variant: weight beta on positive pixels, 1 - beta elsewhere."""
    labels_arr = np.asarray(labels)
    weights = np.where(cfg.positive_mask(labels_arr), cfg.beta, 1.0 - cfg.beta)
    return _weighted_ce(prob, labels_arr, cfg, weights)
