"""Tiny conv backbone with the attention hook, classifier head and CAM."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention import (
    AttentionHead,
    AttentionMaps,
    BlendWeights,
    LossBreakdown,
    LossWeights,
    blend,
    compute_attention,
    mse_loss,
    stack_ground_truth,
    total_loss_tensor,
)
from .tensor import (
    Tensor,
    add,
    scale,
    conv2d,
    cross_entropy,
    global_avg_pool,
    linear,
    pool2d,
    layer_norm,
    relu,
)
from .transforms import resize_bilinear


# fixed input standardization applied inside the network
IMAGE_MEAN = 0.4
IMAGE_STD = 0.2


def standardize(x: Tensor) -> Tensor:
    return scale(add(x, -IMAGE_MEAN), 1.0 / IMAGE_STD)


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple[int, ...] = (8, 16, 32)
    kernel: int = 3
    pools: tuple[int, ...] = (2, 2, 2)
    hook: int = 2  # number of stages run before the attention hook
    input_size: int = 64
    num_classes: int = 20
    in_channels: int = 3
    norm: bool = False  # per-sample layer norm after each conv

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        pools = tuple(int(p) for p in self.pools)
        if len(pools) == 1 and len(self.channels) > 1:
            pools = pools * len(self.channels)
        object.__setattr__(self, "pools", pools)
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError(f"stage channels must be positive, got {self.channels}")
        if len(self.pools) != len(self.channels):
            raise ValueError(f"{len(self.pools)} pool windows for {len(self.channels)} stages")
        if any(p < 1 for p in self.pools):
            raise ValueError(f"pool windows must be >= 1, got {self.pools}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {self.kernel}")
        if not 0 <= self.hook < len(self.channels):
            raise ValueError(f"hook {self.hook} must be below the stage count {len(self.channels)}")
        if self.input_size % math.prod(self.pools):
            raise ValueError(f"input size {self.input_size} not divisible by pooling factor {math.prod(self.pools)}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")

    @property
    def hook_size(self) -> int:
        return self.input_size // math.prod(self.pools[:self.hook])

    @property
    def final_size(self) -> int:
        return self.input_size // math.prod(self.pools)


@dataclass
class Model:
    config: BackboneConfig
    stages: list[tuple[Tensor, Tensor]]
    head_vein: AttentionHead
    head_con: AttentionHead
    cls_weight: Tensor
    cls_bias: Tensor
    blend: BlendWeights = field(default_factory=BlendWeights)

    @classmethod
    def init(cls, config: BackboneConfig, seed: int = 0) -> "Model":
        rng = np.random.default_rng([seed, 7])
        stages = []
        cin = config.in_channels
        for i, cout in enumerate(config.channels):
            fan_in = cin * config.kernel ** 2
            bound = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(cout, cin, config.kernel, config.kernel))
            stages.append((Tensor(w, requires_grad=True, name=f"stage{i}.weight"),
                           Tensor(np.zeros(cout), requires_grad=True, name=f"stage{i}.bias")))
            cin = cout
        head_vein = AttentionHead.init(rng, "head_vein")
        head_con = AttentionHead.init(rng, "head_con")
        cw = rng.uniform(-0.1, 0.1, size=(config.num_classes, cin))
        return cls(config, stages, head_vein, head_con,
                   Tensor(cw, requires_grad=True, name="classifier.weight"),
                   Tensor(np.zeros(config.num_classes), requires_grad=True, name="classifier.bias"))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(self.stages):
            out += [(f"stage{i}.weight", w), (f"stage{i}.bias", b)]
        out += [("head_vein.weight", self.head_vein.weight), ("head_vein.bias", self.head_vein.bias),
                ("head_con.weight", self.head_con.weight), ("head_con.bias", self.head_con.bias),
                ("classifier.weight", self.cls_weight), ("classifier.bias", self.cls_bias)]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def with_parameter(self, name: str, t: Tensor) -> "Model":
        """Shallow copy with one parameter tensor swapped out (used for gradient checks)."""
        stages = list(self.stages)
        heads = {"head_vein": self.head_vein, "head_con": self.head_con}
        cw, cb = self.cls_weight, self.cls_bias
        prefix, attr = name.split(".")
        if prefix.startswith("stage"):
            i = int(prefix[5:])
            w, b = stages[i]
            stages[i] = (t, b) if attr == "weight" else (w, t)
        elif prefix in heads:
            h = heads[prefix]
            heads[prefix] = AttentionHead(t, h.bias) if attr == "weight" else AttentionHead(h.weight, t)
        elif name == "classifier.weight":
            cw = t
        elif name == "classifier.bias":
            cb = t
        else:
            raise KeyError(name)
        return Model(self.config, stages, heads["head_vein"], heads["head_con"], cw, cb, self.blend)

    def copy(self) -> "Model":
        m = Model.init(self.config)
        m.blend = self.blend
        for (_, dst), (_, src) in zip(m.named_parameters(), self.named_parameters()):
            dst.data = src.data.copy()
        return m


def run_stage(model: Model, i: int, x: Tensor) -> Tensor:
    w, b = model.stages[i]
    pad = model.config.kernel // 2
    x = conv2d(x, w, b, stride=1, pad=pad)
    if model.config.norm:
        x = layer_norm(x)
    x = relu(x)
    p = model.config.pools[i]
    return pool2d(x, "max", p, p) if p > 1 else x


@dataclass
class ForwardResult:
    logits: Tensor
    maps: AttentionMaps
    features: Tensor  # final-stage feature maps, used by CAM
    loss: Optional[Tensor] = None
    losses: Optional[LossBreakdown] = None
    m_img: Optional[Tensor] = None
    f_final: Optional[Tensor] = None


def _as_gt_tensor(gt) -> Optional[Tensor]:
    if gt is None or isinstance(gt, Tensor):
        return gt
    if isinstance(gt, np.ndarray):
        return Tensor(gt)
    return stack_ground_truth(gt)


def forward(images, model: Model, labels=None, gt_vein=None, gt_con=None,
            w_blend: Optional[BlendWeights] = None, w_loss: LossWeights = LossWeights()) -> ForwardResult:
    """Backbone to the hook, attention blend, remaining stages, GAP and linear head.

    Without labels no loss is computed.  Missing ground truth zeroes the
    corresponding attention loss.
    """
    x = images if isinstance(images, Tensor) else Tensor(images)
    cfg = model.config
    w_blend = model.blend if w_blend is None else w_blend
    if x.data.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2:] != (cfg.input_size, cfg.input_size):
        raise ValueError(f"expected N×{cfg.in_channels}×{cfg.input_size}×{cfg.input_size} images, got {x.shape}")
    x = standardize(x)
    for i in range(cfg.hook):
        x = run_stage(model, i, x)
    m_img = x
    maps = AttentionMaps(compute_attention(m_img, model.head_vein), compute_attention(m_img, model.head_con))
    x = f_final = blend(m_img, maps.vein, maps.contour, w_blend)
    for i in range(cfg.hook, len(cfg.channels)):
        x = run_stage(model, i, x)
    features = x
    logits = linear(global_avg_pool(features), model.cls_weight, model.cls_bias)
    result = ForwardResult(logits, maps, features, m_img=m_img, f_final=f_final)
    if labels is None:
        return result
    labels = np.asarray(labels, dtype=np.int64)
    l_ce = cross_entropy(logits, labels)
    gv, gc = _as_gt_tensor(gt_vein), _as_gt_tensor(gt_con)
    l_vein = mse_loss(maps.vein, gv) if gv is not None and w_loss.delta else None
    l_con = mse_loss(maps.contour, gc) if gc is not None and w_loss.lam else None
    result.loss = total_loss_tensor(l_vein, l_con, l_ce, w_loss)
    vein_v = l_vein.item() if l_vein is not None else (mse_loss(maps.vein, gv).item() if gv is not None else 0.0)
    con_v = l_con.item() if l_con is not None else (mse_loss(maps.contour, gc).item() if gc is not None else 0.0)
    result.losses = LossBreakdown(ce=l_ce.item(), vein=vein_v, con=con_v, total=result.loss.item())
    return result


def baseline_logits(images, model: Model) -> Tensor:
    """Plain backbone + head with no attention branch at all."""
    x = standardize(images if isinstance(images, Tensor) else Tensor(images))
    for i in range(len(model.config.channels)):
        x = run_stage(model, i, x)
    return linear(global_avg_pool(x), model.cls_weight, model.cls_bias)


def predict(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=1)  # first maximum wins ties


def cam(image, class_id: int, model: Model, w_blend: Optional[BlendWeights] = None) -> np.ndarray:
    """Class activation map for one image, S×S in [0, 1]."""
    k = model.config.num_classes
    if not 0 <= class_id < k:
        raise ValueError(f"class id {class_id} outside [0, {k})")
    x = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    res = forward(x, model, w_blend=w_blend)
    return cam_from_features(res.features.data[0], model.cls_weight.data[class_id], model.config.input_size)


def cam_from_features(features: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    heat = np.tensordot(weights, features, axes=(0, 0))
    heat = np.maximum(heat, 0.0)
    lo, hi = heat.min(), heat.max()
    if hi > lo:
        heat = (heat - lo) / (hi - lo)
    elif hi > 0:
        heat = np.ones_like(heat)
    else:
        heat = np.zeros_like(heat)
    return np.clip(resize_bilinear(heat, size, size), 0.0, 1.0)
