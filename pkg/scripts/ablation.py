"""Baseline / vein / contour / full ablation on synthetic leaves.

    python scripts/ablation.py --seeds 0 1 2 --epsilon 2 --lr 0.03
"""
from __future__ import annotations

import argparse
import json

import numpy as np

from mgfa.experiments import ORDER, run_ablation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--classes", type=int, default=20)
    ap.add_argument("--epsilon", type=float, default=1.0)
    ap.add_argument("--jitter", type=float, default=1.0)
    ap.add_argument("--clutter", type=float, default=1.0)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--lr", type=float, default=0.003)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--hook", type=int, default=2)
    ap.add_argument("--pool", type=int, nargs="+", default=[2, 2, 2])
    ap.add_argument("--norm", action="store_true", help="layer-normalize after every conv")
    ap.add_argument("--modes", nargs="+", default=list(ORDER))
    ap.add_argument("--json", help="write the per-seed accuracies here")
    a = ap.parse_args()
    res = run_ablation(a.seeds, dict(classes=a.classes, epsilon=a.epsilon, jitter=a.jitter, clutter=a.clutter),
                       dict(hook=a.hook, pools=tuple(a.pool), norm=a.norm),
                       dict(epochs=a.epochs, lr=a.lr, batch_size=a.batch_size), a.modes)
    for mode, accs in res.items():
        print(f"{mode:8s} mean={np.mean(accs):.4f} per-seed={accs}")
    if a.json:
        with open(a.json, "w") as f:
            json.dump(res, f, indent=2)


if __name__ == "__main__":
    main()
