"""SGD-with-momentum training loop and inference-mode evaluation.

Training is bitwise reproducible given (seed, data, config): batching order
comes from the package RNG and the update rule is the classical velocity
form ``v <- mu*v - lr*grad; p <- p + v``. Evaluation always runs sample by
sample in inference mode, so its metrics cannot depend on batch size.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .dataio import save_checkpoint
from .losses import LossConfig, balanced_ce_loss, ce_loss
from .metrics import ConfusionMatrix
from .network import Network
from .tensor import Rng
from .validation import DegenerateInputError, ShapeError

LOSS_KINDS = ("standard", "balanced")


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    epoch_limit: int = 210
    batch_size: int = 4
    seed: int = 0
    loss: str = "standard"
    beta: float = 0.75
    shuffle: bool = True
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    ignore_id: int = 255

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epoch_limit < 1:
            raise ValueError(f"epoch_limit must be >= 1, got {self.epoch_limit}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def loss_config(self) -> LossConfig:
        return LossConfig(beta=self.beta, ignore_id=self.ignore_id)

    def loss_fn(self):
        return balanced_ce_loss if self.loss == "balanced" else ce_loss


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_miou: float
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    CSV_HEADER = "epoch,train_loss,val_loss,val_miou,seconds"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_miou!r},{r.seconds!r}")
        return "\n".join(lines) + "\n"

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    per_class_iou: np.ndarray
    mean_iou: float
    mean_loss: float


def sgd_momentum_step(
    param: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, mu: float
) -> tuple[np.ndarray, np.ndarray]:
    """One classical-momentum update, in place: v <- mu*v - lr*grad; p <- p + v."""
    if not (param.shape == grad.shape == velocity.shape):
        raise ShapeError(
            f"param/grad/velocity shapes differ: {param.shape}, {grad.shape}, {velocity.shape}"
        )
    velocity *= mu
    velocity -= lr * grad
    param += velocity
    return param, velocity


def _batches(order: list, size: int):
    for start in range(0, len(order), size):
        yield order[start : start + size]


def train(
    net: Network,
    train_data,
    val_data,
    cfg: TrainConfig,
    clock=time.perf_counter,
) -> tuple[Network, TrainHistory]:
    """Run the full epoch loop, recording one history row per epoch.

    ``clock`` exists so reproducibility checks can substitute a deterministic
    timer; everything else in a run is a pure function of (seed, data, config).
    Returns the trained network and its history.
    """
    if len(train_data) == 0:
        raise DegenerateInputError("training set is empty")
    if len(val_data) == 0:
        raise DegenerateInputError("validation set is empty")
    loss_fn = cfg.loss_fn()
    loss_cfg = cfg.loss_config()
    rng = Rng(cfg.seed)
    velocities = {name: np.zeros_like(p.data) for name, p in net.params.items()}
    history = TrainHistory()
    for epoch in range(1, cfg.epoch_limit + 1):
        t0 = clock()
        order = list(range(len(train_data)))
        if cfg.shuffle:
            rng.shuffle(order)
        loss_sum = 0.0
        pixel_sum = 0
        for batch in _batches(order, cfg.batch_size):
            x = np.stack([train_data[i].image for i in batch])
            y = np.stack([train_data[i].labels for i in batch])
            prob = net.forward(x, training=True)
            loss, dprob = loss_fn(prob, y, loss_cfg)
            net.backward(dprob)
            for name, p in net.params.items():
                sgd_momentum_step(p.data, p.grad, velocities[name], cfg.learning_rate, cfg.momentum)
            counted = int((y != cfg.ignore_id).sum())
            loss_sum += loss * counted
            pixel_sum += counted
        report = evaluate(net, val_data, loss_kind=cfg.loss, loss_cfg=loss_cfg)
        history.records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / pixel_sum,
                val_loss=report.mean_loss,
                val_miou=report.mean_iou,
                seconds=clock() - t0,
            )
        )
        if cfg.checkpoint_every and cfg.checkpoint_path and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(net, cfg.checkpoint_path)
    return net, history


def evaluate(
    net: Network,
    data,
    loss_kind: str = "standard",
    loss_cfg: LossConfig | None = None,
) -> MetricsReport:
    """Inference-mode pass over a dataset: confusion matrix, IoUs, mean loss.

    Samples are forwarded one at a time, which makes the report independent
    of any batching choice by construction. Argmax ties resolve to the
    lowest class id.
    """
    if len(data) == 0:
        raise DegenerateInputError("evaluation set is empty")
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {loss_kind!r}")
    loss_fn = balanced_ce_loss if loss_kind == "balanced" else ce_loss
    loss_cfg = loss_cfg or LossConfig()
    conf = ConfusionMatrix(net.cfg.class_count)
    loss_sum = 0.0
    pixel_sum = 0
    for sample in data:
        prob = net.forward(sample.image[None], training=False)
        labels = sample.labels[None]
        loss, _ = loss_fn(prob, labels, loss_cfg)
        counted = int((labels != loss_cfg.ignore_id).sum())
        loss_sum += loss * counted
        pixel_sum += counted
        conf.add(prob.argmax(axis=1)[0], sample.labels, loss_cfg.ignore_id)
    return MetricsReport(
        confusion=conf,
        per_class_iou=conf.per_class_iou(),
        mean_iou=conf.mean_iou(),
        mean_loss=loss_sum / pixel_sum,
    )
