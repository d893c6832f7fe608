"""Procedural ultra-fine-grained "leaf" dataset with exact vein and contour masks.

Every class shares one species template (a lobed outline and a pinnate vein
skeleton).  Classes differ only by ``epsilon``-scaled shifts of the outline
harmonics and the branch angles; samples within a class add ``jitter``-scaled
noise plus pose, colour and a fresh textured background.  All class cues are
left/right symmetric so a horizontal flip never changes the label.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netpbm
from .masks import BinaryMask

HARMONICS = (2, 3, 4, 5, 6)
SPECIES_HARMONICS = (0.10, 0.10, 0.06, 0.04, 0.02)
BRANCH_POSITIONS = (0.22, 0.40, 0.58, 0.76)
SPECIES_BRANCH_ANGLES = (0.95, 0.80, 0.65, 0.50)  # radians from the midrib


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 20
    samples_per_class: int = 6
    image_size: int = 64
    seed: int = 0
    epsilon: float = 1.0
    jitter: float = 1.0
    clutter: float = 1.0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        if self.samples_per_class < 2 or self.samples_per_class % 2:
            raise ValueError(f"samples per class must be even and >= 2, got {self.samples_per_class}")
        if self.image_size < 32:
            raise ValueError(f"image size {self.image_size} too small to render (minimum 32)")
        if self.epsilon < 0 or self.jitter < 0 or self.clutter < 0:
            raise ValueError("epsilon, jitter and clutter must be non-negative")


@dataclass
class Sample:
    image: np.ndarray  # S×S×3 in [0, 1]
    vein: BinaryMask
    contour: BinaryMask
    label: int
    split: str = "train"
    name: str = ""


@dataclass
class ManifestRecord:
    image: str
    vein: str
    contour: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    root: Path
    records: list[ManifestRecord] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]


@dataclass(frozen=True)
class _ClassShape:
    harmonics: np.ndarray
    branch_angles: np.ndarray


def _class_shape(cfg: SynthConfig, label: int) -> _ClassShape:
    rng = np.random.default_rng([cfg.seed, 0, label])
    dh = rng.standard_normal(len(HARMONICS)) * 0.03
    da = rng.standard_normal(len(BRANCH_POSITIONS)) * 0.18
    return _ClassShape(
        harmonics=np.asarray(SPECIES_HARMONICS) + cfg.epsilon * dh,
        branch_angles=np.asarray(SPECIES_BRANCH_ANGLES) + cfg.epsilon * da,
    )


def _radius(theta: np.ndarray, r0: float, harmonics: np.ndarray) -> np.ndarray:
    # theta measured from the leaf tip, so cos terms are mirror-symmetric
    r = np.ones_like(theta)
    for k, a in zip(HARMONICS, harmonics):
        r = r + a * np.cos(k * theta)
    return r0 * r


def _segment_distance(px, py, ax, ay, bx, by):
    vx, vy = bx - ax, by - ay
    t = ((px - ax) * vx + (py - ay) * vy) / max(vx * vx + vy * vy, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    from .transforms import resize_bilinear

    return resize_bilinear(rng.random((cells, cells)), size, size)


def render_sample(cfg: SynthConfig, label: int, index: int) -> Sample:
    """Render one sample; a pure function of (config, label, index)."""
    s = cfg.image_size
    shape = _class_shape(cfg, label)
    rng = np.random.default_rng([cfg.seed, 1, label, index])
    j = cfg.jitter

    harmonics = shape.harmonics + j * rng.standard_normal(len(HARMONICS)) * 0.01
    angles = shape.branch_angles + j * rng.standard_normal(len(BRANCH_POSITIONS)) * 0.05
    cx = s / 2 + j * rng.uniform(-0.04, 0.04) * s
    cy = s / 2 + j * rng.uniform(-0.04, 0.04) * s
    r0 = s * 0.30 * (1 + j * rng.uniform(-0.05, 0.05))
    tilt = j * rng.uniform(-0.06, 0.06)

    yy, xx = np.mgrid[0:s, 0:s] + 0.5
    dx, dy = xx - cx, yy - cy
    # rotate into the leaf frame: tip points up (negative y)
    ux = dx * np.cos(tilt) + dy * np.sin(tilt)
    uy = -dx * np.sin(tilt) + dy * np.cos(tilt)
    theta = np.arctan2(ux, -uy)
    rho = np.hypot(ux, uy)
    edge = _radius(theta, r0, harmonics)
    signed = rho - edge
    inside = signed <= 0
    contour = np.abs(signed) <= 1.5

    # vein skeleton in the leaf frame
    r_tip = float(_radius(np.array([0.0]), r0, harmonics)[0])
    r_base = float(_radius(np.array([np.pi]), r0, harmonics)[0])
    segs = [((0.0, 0.85 * r_base), (0.0, -0.9 * r_tip))]
    for t, a in zip(BRANCH_POSITIONS, angles):
        y0 = 0.85 * r_base - t * (0.85 * r_base + 0.9 * r_tip)
        for side in (-1.0, 1.0):
            direction = np.array([side * np.sin(a), -np.cos(a)])
            # walk out until just short of the outline
            length = 0.0
            for step in np.linspace(0.5, 2 * r0, 120):
                px, py = side * 0.0 + direction[0] * step, y0 + direction[1] * step
                th = np.arctan2(px, -py)
                if np.hypot(px, py) >= 0.88 * _radius(np.array([th]), r0, harmonics)[0]:
                    break
                length = step
            segs.append(((0.0, y0), (direction[0] * length, y0 + direction[1] * length)))
    dist = np.full((s, s), np.inf)
    for (ax, ay), (bx, by) in segs:
        dist = np.minimum(dist, _segment_distance(ux, uy, ax, ay, bx, by))
    stroke = np.clip(1.2 - dist, 0.0, 1.0) * inside
    vein = (dist <= 1.5) & inside

    # background: smooth texture plus leaf-coloured clutter strokes
    bg_tone = 0.35 + 0.25 * _smooth_noise(rng, s, 5)
    image = np.empty((s, s, 3))
    tint = rng.uniform(-0.05, 0.05, 3)
    image[..., 0] = bg_tone * (0.85 + tint[0])
    image[..., 1] = bg_tone * (0.75 + tint[1])
    image[..., 2] = bg_tone * (0.60 + tint[2])
    clutter = np.zeros((s, s))
    for _ in range(int(round(6 * cfg.clutter))):
        ax, ay = rng.uniform(0, s, 2)
        ang = rng.uniform(0, np.pi)
        ln = rng.uniform(0.1, 0.35) * s
        d = _segment_distance(xx, yy, ax, ay, ax + ln * np.cos(ang), ay + ln * np.sin(ang))
        clutter = np.maximum(clutter, np.clip(1.2 - d, 0, 1))
    clutter *= ~inside
    image += clutter[..., None] * np.array([0.25, 0.35, 0.15]) * cfg.clutter

    shade = 0.9 + 0.2 * _smooth_noise(rng, s, 3)
    green = rng.uniform(0.85, 1.0)
    leaf = np.stack([0.18 * shade, 0.50 * shade * green, 0.16 * shade], axis=-1)
    leaf = leaf + stroke[..., None] * np.array([0.30, 0.30, 0.22])
    image = np.where(inside[..., None], leaf, image)
    image = image + rng.normal(0.0, 0.02, image.shape)
    image = np.clip(image, 0.0, 1.0)

    split = "train" if index % 2 == 0 else "test"
    return Sample(image=image, vein=BinaryMask(vein), contour=BinaryMask(contour),
                  label=label, split=split, name=f"c{label:03d}_s{index:02d}")


def generate(cfg: SynthConfig) -> list[Sample]:
    return [render_sample(cfg, c, i) for c in range(cfg.classes) for i in range(cfg.samples_per_class)]


def quantize(sample: Sample) -> Sample:
    """Round the image to 8-bit levels, matching what a save/load round trip yields."""
    return Sample(netpbm.to_bytes(sample.image) / 255.0, sample.vein, sample.contour,
                  sample.label, sample.split, sample.name)


# ------------------------------------------------------------------ manifest


def write_dataset(samples: list[Sample], out_dir: str | os.PathLike, manifest_name: str = "manifest.tsv") -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = ["# image\tvein_mask\tcontour_mask\tclass_id\tsplit"]
    for smp in samples:
        img = f"images/{smp.name}.ppm"
        vm = f"masks/{smp.name}_vein.pgm"
        cm = f"masks/{smp.name}_contour.pgm"
        netpbm.write_image(out / img, smp.image)
        netpbm.write_image(out / vm, smp.vein.bits.astype(np.uint8) * 255)
        netpbm.write_image(out / cm, smp.contour.bits.astype(np.uint8) * 255)
        lines.append(f"{img}\t{vm}\t{cm}\t{smp.label}\t{smp.split}")
    path = out / manifest_name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = Path(path)
    root = path.parent
    records = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ManifestError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
        img, vm, cm, label, split = parts
        try:
            label = int(label)
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: class id {label!r} is not an integer") from None
        if label < 0:
            raise ManifestError(f"{path}:{lineno}: negative class id {label}")
        if split not in ("train", "test"):
            raise ManifestError(f"{path}:{lineno}: split must be train or test, got {split!r}")
        for p in (img, vm, cm):
            if not (root / p).is_file():
                raise FileNotFoundError(f"{path}:{lineno}: missing file {root / p}")
        records.append(ManifestRecord(img, vm, cm, label, split))
    return DatasetManifest(root, records)


def load_sample(manifest: DatasetManifest, rec: ManifestRecord, threshold: float = 0.5) -> Sample:
    from .masks import binarize_image, rgb_to_gray

    image = netpbm.read_image(manifest.root / rec.image)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    vein = binarize_image(rgb_to_gray(netpbm.read_image(manifest.root / rec.vein)), threshold)
    contour = binarize_image(rgb_to_gray(netpbm.read_image(manifest.root / rec.contour)), threshold)
    for name, m in (("vein", vein), ("contour", contour)):
        if m.bits.shape != image.shape[:2]:
            raise ManifestError(f"{rec.image}: {name} mask {m.bits.shape} does not match image {image.shape[:2]}")
    return Sample(image, vein, contour, rec.label, rec.split, Path(rec.image).stem)


def load_split(manifest: DatasetManifest, split: str) -> list[Sample]:
    return [load_sample(manifest, r) for r in manifest.split(split)]
