"""Scikit-learn style front end over the network builders and trainer."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .dataio import Dataset, Sample, split
from .network import ArchConfig, build_baseline, build_improved
from .tensor import Rng
from .training import TrainConfig, evaluate, train
from .validation import check_image_batch, check_label_batch

ARCHS = ("improved", "baseline")
SCALES = ("desk", "paper")


class SegmentationNet(BaseEstimator):
    """Pixel classifier with the familiar fit/predict surface.

    ``X`` is a float array (n_samples, 3, H, W) with values in [0, 1] and
    H, W divisible by 8; ``y`` is an integer map (n_samples, H, W) of class
    ids, with ``ignore_id`` marking pixels excluded from loss and scoring.

    Parameters mirror the training defaults: SGD with momentum 0.9,
    learning rate 0.1, and a 210-epoch limit; pass smaller ``epochs`` for
    quick experiments. ``arch="improved"`` selects the residual-fused
    decoder, ``"baseline"`` the plain index-unpooling one.
    """

    def __init__(
        self,
        arch: str = "improved",
        scale: str = "desk",
        class_count: int | None = None,
        convs_per_stage: int = 1,
        loss: str = "standard",
        beta: float = 0.75,
        learning_rate: float = 0.1,
        momentum: float = 0.9,
        epochs: int = 210,
        batch_size: int = 4,
        val_fraction: float = 0.0,
        shuffle: bool = True,
        seed: int = 0,
        ignore_id: int = 255,
    ):
        self.arch = arch
        self.scale = scale
        self.class_count = class_count
        self.convs_per_stage = convs_per_stage
        self.loss = loss
        self.beta = beta
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.shuffle = shuffle
        self.seed = seed
        self.ignore_id = ignore_id

    # -- sklearn plumbing ----------------------------------------------

    def _check_params(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")

    def _require_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError("this SegmentationNet instance is not fitted yet; call fit first")

    def _infer_classes(self, y: np.ndarray) -> int:
        if self.class_count is not None:
            return int(self.class_count)
        valid = y[y != self.ignore_id]
        if valid.size == 0:
            raise ValueError("cannot infer class count from all-ignored labels")
        return max(2, int(valid.max()) + 1)

    # -- estimator API ---------------------------------------------------

    def fit(self, X, y):
        """Train a fresh network on image/label arrays; returns self."""
        self._check_params()
        X = check_image_batch(X)
        classes = self._infer_classes(np.asarray(y))
        y = check_label_batch(y, X, classes, self.ignore_id)
        cfg = ArchConfig(
            class_count=classes,
            desk_scale=(self.scale == "desk"),
            convs_per_stage=self.convs_per_stage,
        )
        build = build_improved if self.arch == "improved" else build_baseline
        net = build(cfg, Rng(self.seed))
        data = Dataset([Sample(img, lab) for img, lab in zip(X, y)], classes)
        if self.val_fraction > 0.0 and len(data) > 1:
            train_set, val_set = split(data, 1.0 - self.val_fraction, self.seed)
        else:
            train_set, val_set = data, data
        tcfg = TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            epoch_limit=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            loss=self.loss,
            beta=self.beta,
            shuffle=self.shuffle,
            ignore_id=self.ignore_id,
        )
        self.network_, self.history_ = train(net, train_set, val_set, tcfg)
        self.classes_ = np.arange(classes)
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Per-pixel class probabilities (n_samples, C, H, W)."""
        self._require_fitted()
        X = check_image_batch(X)
        return np.concatenate(
            [self.network_.forward(img[None], training=False) for img in X], axis=0
        )

    def predict(self, X) -> np.ndarray:
        """Per-pixel argmax labels (n_samples, H, W); ties go to the lowest id."""
        return self.predict_proba(X).argmax(axis=1)

    def score(self, X, y) -> float:
        """Mean IoU of predictions against ground truth."""
        self._require_fitted()
        X = check_image_batch(X)
        y = check_label_batch(y, X, len(self.classes_), self.ignore_id)
        data = Dataset([Sample(img, lab) for img, lab in zip(X, y)], len(self.classes_))
        return evaluate(self.network_, data).mean_iou
