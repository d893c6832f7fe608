"""How strongly can the blend reshape the hooked features?

Trains one full-mode model on synthetic leaves, then reports on held-out
samples:

* peak attention mass relative to uniform (max(map) * H * W),
* the spread of the per-cell blend factor alpha + beta*M_vein + gamma*M_con
  (max / min over the grid), which is the only spatial reweighting the blend
  can apply,
* the gradient norm reaching the hooked features from the two MSE terms
  compared with the one from cross-entropy.

    python scripts/attention_strength.py --seed 10 --epsilon 2 --lr 0.03 --epochs 100
"""
from __future__ import annotations

import argparse

import numpy as np

from mgfa.attention import BlendWeights, LossWeights, mse_loss
from mgfa.model import BackboneConfig, Model, forward
from mgfa.synth import SynthConfig, generate, quantize
from mgfa.tensor import Tape, backward, cross_entropy, scale
from mgfa.train import TrainConfig, prepare_batch, train


def hook_grad_norm(model, images, gv, gc, labels, part: str) -> float:
    """Norm of d(term)/d(M_img) for one weighted loss term."""
    w = LossWeights()
    with Tape() as tape:
        res = forward(images, model, labels, gv, gc, w_loss=w)
        if part == "ce":
            loss = cross_entropy(res.logits, labels)
        elif part == "vein":
            loss = scale(mse_loss(res.maps.vein, gv), w.delta)
        else:
            loss = scale(mse_loss(res.maps.contour, gc), w.lam)
    backward(loss, tape)
    return float(np.linalg.norm(res.m_img.grad))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=10)
    ap.add_argument("--epsilon", type=float, default=2.0)
    ap.add_argument("--lr", type=float, default=0.03)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--norm", action="store_true")
    a = ap.parse_args()

    data = [quantize(s) for s in generate(SynthConfig(seed=a.seed, epsilon=a.epsilon))]
    tr = [s for s in data if s.split == "train"]
    te = [s for s in data if s.split == "test"]
    model = Model.init(BackboneConfig(num_classes=20, norm=a.norm), seed=a.seed)
    w = BlendWeights()
    train(TrainConfig(lr=a.lr, epochs=a.epochs, seed=a.seed), tr, model)

    images, gv, gc, labels = prepare_batch(te, model, "test")
    res = forward(images, model, labels, gv, gc)
    hw = res.maps.vein.shape[2] * res.maps.vein.shape[3]
    mv = res.maps.vein.data.reshape(len(te), -1)
    mc = res.maps.contour.data.reshape(len(te), -1)
    factor = w.alpha + w.beta * mv + w.gamma * mc
    gt_peak = gv.reshape(len(te), -1).max(axis=1) * hw
    print(f"grid {hw} cells; losses {res.losses}")
    print(f"vein map peak x HW:    mean {np.mean(mv.max(1) * hw):.2f}  max {np.max(mv.max(1) * hw):.2f}")
    print(f"contour map peak x HW: mean {np.mean(mc.max(1) * hw):.2f}  max {np.max(mc.max(1) * hw):.2f}")
    print(f"vein target peak x HW: mean {np.mean(gt_peak):.2f}")
    print(f"blend factor max/min:  mean {np.mean(factor.max(1) / factor.min(1)):.4f}  "
          f"max {np.max(factor.max(1) / factor.min(1)):.4f}")
    sub = slice(0, 16)
    g = {p: hook_grad_norm(model, images[sub], gv[sub], gc[sub], labels[sub], p) for p in ("ce", "vein", "con")}
    print("gradient norm at the hook: " + "  ".join(f"{k}={v:.3e}" for k, v in g.items()))


if __name__ == "__main__":
    main()
