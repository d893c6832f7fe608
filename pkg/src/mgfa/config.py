"""Flat ``key=value`` run configuration shared by the CLI commands."""
from __future__ import annotations

import os
from dataclasses import dataclass

from .attention import BlendWeights, LossWeights
from .model import BackboneConfig
from .synth import SynthConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(p) for p in v.replace(" ", "").split(",") if p)


# key -> (parser, default)
KEYS = {
    "classes": (int, 20),
    "samples_per_class": (int, 6),
    "image_size": (int, 64),
    "seed": (int, 0),
    "epsilon": (float, 1.0),
    "jitter": (float, 1.0),
    "clutter": (float, 1.0),
    "channels": (_ints, (8, 16, 32)),
    "kernel": (int, 3),
    "pool": (_ints, (2,)),
    "hook": (int, 2),
    "norm": (_bool, False),
    "lr": (float, 0.003),
    "momentum": (float, 0.938),
    "lr_decay_factor": (float, 10.0),
    "lr_decay_period": (int, 100),
    "epochs": (int, 100),
    "batch_size": (int, 16),
    "crop": (_bool, True),
    "flip": (_bool, True),
    "alpha": (float, 0.3),
    "beta": (float, 0.5),
    "gamma": (float, 0.2),
    "delta": (float, 0.1),
    "lambda": (float, 0.1),
    "mu": (float, 1.0),
    "mode": (str, "full"),
}

# ablation presets: zero the unused blend/loss terms, hand their blend share to alpha
MODES = {
    "baseline": {"alpha": 1.0, "beta": 0.0, "gamma": 0.0, "delta": 0.0, "lambda": 0.0},
    "vein": {"alpha": 0.5, "beta": 0.5, "gamma": 0.0, "delta": 0.1, "lambda": 0.0},
    "contour": {"alpha": 0.8, "beta": 0.0, "gamma": 0.2, "delta": 0.0, "lambda": 0.1},
    "full": {"alpha": 0.3, "beta": 0.5, "gamma": 0.2, "delta": 0.1, "lambda": 0.1},
}

BLEND_KEYS = ("alpha", "beta", "gamma")


def parse_text(text: str, source: str = "<config>") -> dict[str, object]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return coerce(out, source)


def coerce(raw: dict[str, object], source: str = "<flags>") -> dict[str, object]:
    out = {}
    for key, value in raw.items():
        if key not in KEYS:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        parser = KEYS[key][0]
        try:
            out[key] = parser(value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from None
    if "mode" in out and out["mode"] not in MODES:
        raise ConfigError(f"{source}: unknown mode {out['mode']!r}; choose from {sorted(MODES)}")
    return out


def _layer(values: dict, explicit: dict) -> None:
    """Overlay ``explicit`` onto ``values``.

    Mode presets go first.  When only some blend weights are given the rest
    share the remaining mass in proportion to their current values, so
    ``alpha=1`` alone means the plain baseline blend.
    """
    if "mode" in explicit:
        values.update(MODES[explicit["mode"]])
        values["mode"] = explicit["mode"]
    given = [k for k in BLEND_KEYS if k in explicit]
    if given and len(given) < 3:
        rest = [k for k in BLEND_KEYS if k not in explicit]
        remaining = 1.0 - sum(float(explicit[k]) for k in given)
        base = sum(values[k] for k in rest)
        for k in rest:
            values[k] = remaining * values[k] / base if base > 0 else remaining / len(rest)
    values.update({k: v for k, v in explicit.items() if k != "mode"})


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def build(cls, file_values: dict | None = None, flag_values: dict | None = None) -> "RunConfig":
        values = {k: d for k, (_, d) in KEYS.items()}
        _layer(values, file_values or {})
        _layer(values, flag_values or {})
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike | None, flag_values: dict | None = None) -> "RunConfig":
        file_values = {}
        if path is not None:
            with open(path, encoding="utf-8") as f:
                file_values = parse_text(f.read(), str(path))
        return cls.build(file_values, coerce(flag_values or {}))

    def validate(self) -> None:
        try:
            self.synth()
            self.blend()
            self.loss()
            self.train()
            self.backbone()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def __getitem__(self, key):
        return self.values[key]

    def synth(self) -> SynthConfig:
        v = self.values
        return SynthConfig(v["classes"], v["samples_per_class"], v["image_size"], v["seed"],
                           v["epsilon"], v["jitter"], v["clutter"])

    def blend(self) -> BlendWeights:
        v = self.values
        return BlendWeights(v["alpha"], v["beta"], v["gamma"])

    def loss(self) -> LossWeights:
        v = self.values
        return LossWeights(v["delta"], v["lambda"], v["mu"])

    def backbone(self, num_classes: int | None = None) -> BackboneConfig:
        v = self.values
        return BackboneConfig(v["channels"], v["kernel"], v["pool"], v["hook"], v["image_size"],
                              num_classes or v["classes"], norm=v["norm"])

    def train(self) -> TrainConfig:
        v = self.values
        return TrainConfig(v["lr"], v["momentum"], v["lr_decay_factor"], v["lr_decay_period"], v["epochs"],
                           v["batch_size"], v["seed"], self.blend(), self.loss(), v["crop"], v["flip"])
