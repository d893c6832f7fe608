"""Dual attention heads, weighted feature blending and the composite loss."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .masks import GroundTruthMap
from .tensor import (
    ShapeError,
    Tensor,
    add,
    broadcast_mul,
    channel_reduce,
    concat_channels,
    conv2d,
    scale,
    spatial_softmax,
    square,
    sum_all,
)


@dataclass
class AttentionHead:
    weight: Tensor  # 1×2×1×1, input order (max, mean)
    bias: Tensor  # shape (1,)

    @classmethod
    def init(cls, rng: np.random.Generator, name: str = "head") -> "AttentionHead":
        w = rng.uniform(-0.5, 0.5, size=(1, 2, 1, 1))
        return cls(Tensor(w, requires_grad=True, name=f"{name}.weight"),
                   Tensor(np.zeros(1), requires_grad=True, name=f"{name}.bias"))

    @classmethod
    def from_values(cls, w_max: float, w_mean: float, bias: float = 0.0) -> "AttentionHead":
        return cls(Tensor(np.array([w_max, w_mean], dtype=float).reshape(1, 2, 1, 1), requires_grad=True),
                   Tensor(np.array([bias], dtype=float), requires_grad=True))

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class AttentionMaps:
    vein: Tensor
    contour: Tensor


@dataclass(frozen=True)
class BlendWeights:
    alpha: float = 0.3
    beta: float = 0.5
    gamma: float = 0.2

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma)
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ValueError(f"blend weights must be finite and non-negative, got {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"alpha + beta + gamma must equal 1, got {sum(vals)!r}")


@dataclass(frozen=True)
class LossWeights:
    delta: float = 0.1
    lam: float = 0.1
    mu: float = 1.0

    def __post_init__(self):
        vals = (self.delta, self.lam, self.mu)
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ValueError(f"loss weights must be finite and non-negative, got {vals}")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    vein: float
    con: float
    total: float


def compute_attention(m_img: Tensor, head: AttentionHead) -> Tensor:
    """Spatial attention map of N×C×H×W features, normalized over H×W."""
    if m_img.data.ndim != 4:
        raise ShapeError(f"attention input must be N×C×H×W, got {m_img.shape}")
    pooled = concat_channels([channel_reduce(m_img, "max"), channel_reduce(m_img, "mean")])
    return spatial_softmax(conv2d(pooled, head.weight, head.bias))


def blend(m_img: Tensor, vein: Tensor, con: Tensor, w: BlendWeights) -> Tensor:
    """alpha*M + beta*(vein ⊙ M) + gamma*(con ⊙ M); zero-weight terms are skipped."""
    for name, m in (("vein", vein), ("contour", con)):
        if m.data.ndim != 4 or m.shape[0] != m_img.shape[0] or m.shape[2:] != m_img.shape[2:]:
            raise ShapeError(f"{name} map {m.shape} does not match features {m_img.shape}")
    out = m_img if w.alpha == 1.0 else scale(m_img, w.alpha)
    if w.beta:
        out = add(out, scale(broadcast_mul(vein, m_img), w.beta))
    if w.gamma:
        out = add(out, scale(broadcast_mul(con, m_img), w.gamma))
    return out


def stack_ground_truth(gts: Sequence[GroundTruthMap]) -> Tensor:
    return Tensor(np.stack([g.values for g in gts])[:, None])


def mse_loss(m_fea: Tensor, m_gt) -> Tensor:
    """Per-sample mean squared error over the full H×W grid, averaged over the batch."""
    if isinstance(m_gt, Tensor):
        gt = m_gt
    elif isinstance(m_gt, np.ndarray):
        gt = Tensor(m_gt)
    else:
        gt = stack_ground_truth(m_gt)
    if gt.shape != m_fea.shape:
        raise ShapeError(f"attention map {m_fea.shape} and ground truth {gt.shape} resolutions differ")
    n, _, h, w = m_fea.shape
    diff = add(m_fea, scale(gt, -1.0))
    return scale(sum_all(square(diff)), 1.0 / (n * h * w))


def total_loss(l_vein: float, l_con: float, l_ce: float, w: LossWeights = LossWeights()) -> LossBreakdown:
    vals = (l_vein, l_con, l_ce)
    if any(not math.isfinite(v) for v in vals):
        raise ValueError(f"losses must be finite, got {vals}")
    if any(v < 0 for v in vals):
        raise ValueError(f"losses must be non-negative, got {vals}")
    total = w.delta * l_vein + w.lam * l_con + w.mu * l_ce
    return LossBreakdown(ce=l_ce, vein=l_vein, con=l_con, total=total)


def total_loss_tensor(l_vein: Tensor | None, l_con: Tensor | None, l_ce: Tensor, w: LossWeights) -> Tensor:
    """Differentiable counterpart of :func:`total_loss`."""
    out = scale(l_ce, w.mu)
    if l_vein is not None and w.delta:
        out = add(out, scale(l_vein, w.delta))
    if l_con is not None and w.lam:
        out = add(out, scale(l_con, w.lam))
    return out
