"""Shared pieces of the ablation and CAM-focus experiments."""
from __future__ import annotations

import time

import numpy as np

from .attention import BlendWeights, LossWeights
from .config import MODES
from .model import BackboneConfig, Model, cam
from .synth import SynthConfig, generate, quantize
from .train import TrainConfig, evaluate, train

ORDER = ("baseline", "vein", "contour", "full")


def mode_weights(mode: str) -> tuple[BlendWeights, LossWeights]:
    p = MODES[mode]
    return BlendWeights(p["alpha"], p["beta"], p["gamma"]), LossWeights(p["delta"], p["lambda"], 1.0)


def split_dataset(cfg: SynthConfig):
    data = [quantize(s) for s in generate(cfg)]
    return [s for s in data if s.split == "train"], [s for s in data if s.split == "test"]


def run_ablation(seeds, synth_kw: dict, backbone_kw: dict, train_kw: dict, modes=ORDER, verbose=True,
                 keep: dict | None = None) -> dict[str, list[float]]:
    """Per-mode lists of test accuracy, one entry per seed.

    Every mode of a seed starts from the same initial parameters and sees the
    same data and shuffling.  If ``keep`` is a dict it receives
    ``(seed, mode) -> (model, test_samples)``.
    """
    results = {m: [] for m in modes}
    for seed in seeds:
        scfg = SynthConfig(seed=seed, **synth_kw)
        tr, te = split_dataset(scfg)
        for mode in modes:
            wb, wl = mode_weights(mode)
            bcfg = BackboneConfig(num_classes=scfg.classes, input_size=scfg.image_size, **backbone_kw)
            model = Model.init(bcfg, seed=seed)
            t0 = time.time()
            train(TrainConfig(seed=seed, blend=wb, loss=wl, **train_kw), tr, model)
            acc = evaluate(te, model)
            results[mode].append(acc)
            if keep is not None:
                keep[(seed, mode)] = (model, te)
            if verbose:
                print(f"seed={seed} mode={mode:8s} acc={acc:.4f} ({time.time() - t0:.0f}s)", flush=True)
    return results


def mask_share(heat: np.ndarray, region: np.ndarray) -> float:
    """Fraction of total heatmap intensity inside ``region`` (0 for an all-zero map)."""
    total = heat.sum()
    return float(heat[region].sum() / total) if total > 0 else 0.0


def cam_shares(model: Model, samples) -> list[float]:
    """CAM share on vein ∪ contour for each sample's true class."""
    return [mask_share(cam(s.image.transpose(2, 0, 1), s.label, model), s.vein.bits | s.contour.bits)
            for s in samples]


def held_out(samples, n: int = 20):
    """``n`` test samples spread evenly over the classes."""
    return samples[::max(1, len(samples) // n)][:n]
