"""Region annotations to binary masks and normalized ground-truth attention maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLASSES = ("vein", "contour")


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class RegionBox:
    cls: str
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise AnnotationError(f"unknown region class {self.cls!r}; expected one of {CLASSES}")
        if not (self.w > 0 and self.h > 0):
            raise AnnotationError(f"box must have positive extent, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def clamp(self, height: int, width: int) -> "RegionBox":
        x0 = min(max(self.x, 0), width)
        y0 = min(max(self.y, 0), height)
        x1 = min(max(self.x + self.w, 0), width)
        y1 = min(max(self.y + self.h, 0), height)
        if x1 <= x0 or y1 <= y0:
            raise AnnotationError(f"{self} has zero area inside a {height}x{width} image")
        return RegionBox(self.cls, x0, y0, x1 - x0, y1 - y0)


@dataclass
class BinaryMask:
    bits: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2 or 0 in self.bits.shape:
            raise AnnotationError(f"mask must be a non-empty 2-D grid, got shape {self.bits.shape}")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass
class GroundTruthMap:
    values: np.ndarray
    degenerate: bool = False

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def rasterize_boxes(boxes, height: int, width: int, cls: str) -> BinaryMask:
    """Union of all boxes of ``cls``; pixel (r, c) is covered when its centre lies in the box."""
    if height <= 0 or width <= 0:
        raise AnnotationError(f"image size must be positive, got {height}x{width}")
    bits = np.zeros((height, width), dtype=bool)
    for box in boxes:
        if box.cls != cls:
            continue
        b = box.clamp(height, width)
        # pixel-centre rule so fractional boxes still rasterize deterministically
        c0 = int(np.ceil(b.x - 0.5))
        r0 = int(np.ceil(b.y - 0.5))
        c1 = int(np.ceil(b.x + b.w - 0.5))
        r1 = int(np.ceil(b.y + b.h - 0.5))
        if c1 <= c0 or r1 <= r0:
            raise AnnotationError(f"{box} covers no pixel centre")
        bits[r0:r1, c0:c1] = True
    return BinaryMask(bits)


def rgb_to_gray(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image.mean(axis=2) if image.ndim == 3 else image


def binarize_image(gray: np.ndarray, threshold: float = 0.5) -> BinaryMask:
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return BinaryMask(np.asarray(gray, dtype=np.float64) >= threshold)


def to_ground_truth(mask: BinaryMask, h: int, w: int) -> GroundTruthMap:
    """Average-pool a mask down to h×w and scale it to sum to one.

    An empty mask yields the uniform map with ``degenerate`` set.
    """
    H, W = mask.bits.shape
    if h <= 0 or w <= 0 or H % h or W % w:
        raise AnnotationError(
            f"mask {H}x{W} cannot be average-pooled to {h}x{w}; resize the mask to a multiple first"
        )
    fy, fx = H // h, W // w
    pooled = mask.bits.astype(np.float64).reshape(h, fy, w, fx).sum(axis=(1, 3)) / (fy * fx)
    total = pooled.sum()
    if total == 0:
        return GroundTruthMap(np.full((h, w), 1.0 / (h * w)), degenerate=True)
    return GroundTruthMap(pooled / total, degenerate=mask.degenerate)
