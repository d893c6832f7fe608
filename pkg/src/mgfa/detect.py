"""IoU, all-point-interpolated average precision and mAP for region detections."""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .masks import AnnotationError, RegionBox


class EmptyGroundTruthWarning(UserWarning):
    pass


class DetectionFileError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class Detection:
    box: RegionBox
    confidence: float
    image_id: str = "0"

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class GtBox:
    box: RegionBox
    image_id: str = "0"


def iou(a: RegionBox, b: RegionBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def match_detections(dets: Sequence[Detection], gts: Sequence[GtBox], iou_thresh: float = 0.5) -> list[bool]:
    """TP flags in confidence order; each GT absorbs at most one detection."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)  # stable: ties keep input order
    taken = [False] * len(gts)
    flags = []
    for i in order:
        d = dets[i]
        best, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if taken[j] or g.image_id != d.image_id:
                continue
            v = iou(d.box, g.box)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0 and best_iou >= iou_thresh:
            taken[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(dets: Sequence[Detection], gts: Sequence[GtBox], iou_thresh: float = 0.5) -> float:
    if not 0 < iou_thresh <= 1:
        raise ValueError(f"IoU threshold must lie in (0, 1], got {iou_thresh}")
    if not gts:
        warnings.warn("no ground-truth boxes: AP defined as %d" % (0 if dets else 1), EmptyGroundTruthWarning,
                      stacklevel=2)
        return 0.0 if dets else 1.0
    if not dets:
        return 0.0
    tp = np.array(match_detections(dets, gts, iou_thresh), dtype=float)
    ctp = np.cumsum(tp)
    recall = ctp / len(gts)
    precision = ctp / np.arange(1, len(tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def mean_ap(per_class_aps: dict[str, float]) -> float:
    if not per_class_aps:
        raise ValueError("mean_ap needs at least one class")
    return sum(per_class_aps.values()) / len(per_class_aps)


def evaluate_detections(dets: Iterable[tuple[str, Detection]], gts: Iterable[tuple[str, GtBox]],
                        iou_thresh: float = 0.5) -> tuple[dict[str, float], float]:
    """Per-class AP over (class, record) pairs plus their mean."""
    dets, gts = list(dets), list(gts)
    classes = sorted({c for c, _ in gts} | {c for c, _ in dets})
    aps = {c: average_precision([d for k, d in dets if k == c], [g for k, g in gts if k == c], iou_thresh)
           for c in classes}
    return aps, mean_ap(aps)


def _parse(path, n_fields: int):
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != n_fields:
                raise DetectionFileError(path, lineno, f"expected {n_fields} fields, got {len(parts)}")
            try:
                nums = [float(v) for v in parts[2:]]
            except ValueError:
                raise DetectionFileError(path, lineno, "non-numeric coordinate or confidence") from None
            if not all(np.isfinite(nums)):
                raise DetectionFileError(path, lineno, "non-finite value")
            try:
                box = RegionBox(parts[1], *nums[:4])
            except AnnotationError as exc:
                raise DetectionFileError(path, lineno, str(exc)) from None
            yield lineno, parts[0], box, nums[4:]


def read_detections(path: str | os.PathLike) -> list[tuple[str, Detection]]:
    """``image_id class x y w h confidence`` per line."""
    out = []
    for lineno, image_id, box, rest in _parse(path, 7):
        try:
            out.append((box.cls, Detection(box, rest[0], image_id)))
        except ValueError as exc:
            raise DetectionFileError(path, lineno, str(exc)) from None
    return out


def read_ground_truth(path: str | os.PathLike) -> list[tuple[str, GtBox]]:
    """``image_id class x y w h`` per line."""
    return [(box.cls, GtBox(box, image_id)) for _, image_id, box, _ in _parse(path, 6)]
