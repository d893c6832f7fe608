"""Resizing and the train/test geometric transforms."""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .masks import BinaryMask

TRAIN_RESIZE_RATIO = 1.14


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres, edge-clamped
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] == (height, width):
        return img.copy()
    y0, y1, fy = _bilinear_axis(img.shape[0], height)
    x0, x1, fx = _bilinear_axis(img.shape[1], width)
    extra = (None,) * (img.ndim - 2)
    fy = fy[(slice(None), None) + extra]
    fx = fx[(None, slice(None)) + extra]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_nearest(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    arr = np.asarray(arr)
    rows = np.minimum(((np.arange(height) + 0.5) * arr.shape[0] / height).astype(int), arr.shape[0] - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * arr.shape[1] / width).astype(int), arr.shape[1] - 1)
    return arr[rows][:, cols]


def train_resize_size(size: int) -> int:
    return math.ceil(TRAIN_RESIZE_RATIO * size)


def max_crop_offset(size: int) -> int:
    return min(train_resize_size(size) - size, math.floor((TRAIN_RESIZE_RATIO - 1) * size))


def crop_offsets(rng: np.random.Generator, size: int) -> tuple[int, int]:
    """Row and column offset of a train crop, each uniform on [0, max_crop_offset]."""
    oy, ox = rng.integers(0, max_crop_offset(size) + 1, size=2)
    return int(oy), int(ox)


def flip(sample):
    return replace(
        sample,
        image=sample.image[:, ::-1].copy(),
        vein=BinaryMask(sample.vein.bits[:, ::-1].copy(), sample.vein.degenerate),
        contour=BinaryMask(sample.contour.bits[:, ::-1].copy(), sample.contour.degenerate),
    )


def _resized(sample, h: int, w: int):
    return replace(
        sample,
        image=resize_bilinear(sample.image, h, w),
        vein=BinaryMask(resize_nearest(sample.vein.bits, h, w), sample.vein.degenerate),
        contour=BinaryMask(resize_nearest(sample.contour.bits, h, w), sample.contour.degenerate),
    )


def transform(sample, mode: str, rng: np.random.Generator | None = None, size: int | None = None,
              crop: bool = True, hflip: bool = True):
    """Apply the same geometric transform to the image and both masks.

    test: resize straight to ``size``.  train: resize to ceil(1.14*size),
    take a random size×size crop, then flip horizontally with p=0.5.
    """
    size = size or sample.image.shape[0]
    if mode == "test":
        return _resized(sample, size, size)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    if rng is None:
        raise ValueError("train transform needs an rng")
    if crop:
        big = train_resize_size(size)
        r = _resized(sample, big, big)
        oy, ox = crop_offsets(rng, size)
        r = replace(
            r,
            image=r.image[oy:oy + size, ox:ox + size].copy(),
            vein=BinaryMask(r.vein.bits[oy:oy + size, ox:ox + size].copy(), r.vein.degenerate),
            contour=BinaryMask(r.contour.bits[oy:oy + size, ox:ox + size].copy(), r.contour.degenerate),
        )
    else:
        r = _resized(sample, size, size)
    if hflip and rng.random() < 0.5:
        r = flip(r)
    return r
