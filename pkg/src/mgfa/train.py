"""SGD-with-momentum training loop, evaluation and metrics CSV."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .attention import BlendWeights, LossWeights
from .masks import to_ground_truth
from .model import Model, forward, predict
from .tensor import Tape, backward
from .transforms import transform

CSV_HEADER = "epoch,lr,loss_total,loss_ce,loss_vein,loss_con,train_acc"


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.003
    momentum: float = 0.938
    lr_decay_factor: float = 10.0
    lr_decay_period: int = 100
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    blend: BlendWeights = field(default_factory=BlendWeights)
    loss: LossWeights = field(default_factory=LossWeights)
    crop: bool = True
    flip: bool = True

    def __post_init__(self):
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ValueError(f"learning rate must be finite and non-negative, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr_decay_factor <= 0 or self.lr_decay_period < 1:
            raise ValueError("lr decay factor must be positive and period >= 1")


def lr_at(config: TrainConfig, epoch: int) -> float:
    return config.lr / config.lr_decay_factor ** (epoch // config.lr_decay_period)


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    loss_total: float
    loss_ce: float
    loss_vein: float
    loss_con: float
    train_acc: float

    def csv_row(self) -> str:
        vals = (self.lr, self.loss_total, self.loss_ce, self.loss_vein, self.loss_con, self.train_acc)
        return f"{self.epoch}," + ",".join(repr(float(v)) for v in vals)


@dataclass
class TrainState:
    """Everything besides the parameters needed to resume bit-exactly."""

    epoch: int = 0
    rng_state: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def fresh(cls, seed: int) -> "TrainState":
        return cls(epoch=0, rng_state=int(seed) % (1 << 128))


def epoch_rng(state: int) -> tuple[np.random.Generator, int]:
    """Generator for one epoch plus the 128-bit state that seeds the next."""
    work, nxt = np.random.SeedSequence(state).spawn(2)
    words = nxt.generate_state(2, np.uint64)
    return np.random.default_rng(work), int(words[0]) | (int(words[1]) << 64)


def sgd_step(model: Model, velocity: dict[str, np.ndarray], lr: float, momentum: float) -> None:
    # v <- m*v + g ; p <- p - lr*v
    for name, p in model.named_parameters():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        v = velocity.get(name)
        v = g.copy() if v is None else momentum * v + g
        velocity[name] = v
        p.data = p.data - lr * v


def prepare_batch(samples: Sequence, model: Model, mode: str, rng=None, crop=True, flip=True):
    size = model.config.input_size
    hs = model.config.hook_size
    images, gv, gc, labels = [], [], [], []
    for s in samples:
        t = transform(s, mode, rng, size=size, crop=crop, hflip=flip)
        images.append(t.image.transpose(2, 0, 1))
        gv.append(to_ground_truth(t.vein, hs, hs).values)
        gc.append(to_ground_truth(t.contour, hs, hs).values)
        labels.append(t.label)
    return (np.stack(images), np.stack(gv)[:, None], np.stack(gc)[:, None], np.asarray(labels, dtype=np.int64))


def train(config: TrainConfig, train_set: Sequence, model: Model, state: Optional[TrainState] = None,
          on_epoch: Optional[Callable[[EpochMetrics, TrainState], None]] = None) -> list[EpochMetrics]:
    """Train ``model`` in place from ``state.epoch`` up to ``config.epochs``."""
    if not train_set:
        raise ValueError("training set is empty")
    k = model.config.num_classes
    for s in train_set:
        if not 0 <= s.label < k:
            raise ValueError(f"label {s.label} outside [0, {k})")
    model.blend = config.blend
    state = state or TrainState.fresh(config.seed)
    history = []
    n = len(train_set)
    while state.epoch < config.epochs:
        lr = lr_at(config, state.epoch)
        rng, next_state = epoch_rng(state.rng_state)
        order = rng.permutation(n)
        sums = np.zeros(4)
        correct = 0
        for start in range(0, n, config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            images, gv, gc, labels = prepare_batch(batch, model, "train", rng, config.crop, config.flip)
            with Tape() as tape:
                res = forward(images, model, labels, gv, gc, config.blend, config.loss)
            lb = res.losses
            if not all(math.isfinite(v) for v in (lb.total, lb.ce, lb.vein, lb.con)):
                raise TrainingDiverged(f"non-finite loss at epoch {state.epoch}: {lb}")
            backward(res.loss, tape)
            sgd_step(model, state.velocity, lr, config.momentum)
            m = len(batch)
            sums += m * np.array([lb.total, lb.ce, lb.vein, lb.con])
            correct += int((predict(res.logits.data) == labels).sum())
        sums /= n
        metrics = EpochMetrics(state.epoch, lr, *sums.tolist(), correct / n)
        state.epoch += 1
        state.rng_state = next_state
        history.append(metrics)
        if on_epoch is not None:
            on_epoch(metrics, state)
    return history


def evaluate(test_set: Sequence, model: Model, batch_size: int = 32) -> float:
    """Top-1 accuracy with the deterministic test transform."""
    if not test_set:
        raise ValueError("evaluation set is empty")
    correct = 0
    for start in range(0, len(test_set), batch_size):
        images, _, _, labels = prepare_batch(test_set[start:start + batch_size], model, "test")
        correct += int((predict(forward(images, model).logits.data) == labels).sum())
    return correct / len(test_set)


def write_metrics_csv(path, history: Sequence[EpochMetrics]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(CSV_HEADER + "\n")
        for m in history:
            f.write(m.csv_row() + "\n")
