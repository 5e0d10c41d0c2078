"""Multi-scale detection on top of a fused fully convolutional model.

Pipeline: per-scale probability maps -> candidate boxes above the score
floor -> per-class greedy suppression -> part-based score boosting ->
global suppression across classes -> per-class score thresholds.
"""

from dataclasses import dataclass, field

import numpy as np

from .convnet import forward, resize_bilinear
from .evalkit import iou


@dataclass
class BoundingBox:
    x: float  # center, pixels in the original image
    y: float
    w: float
    h: float
    cls: int
    score: float

    def __post_init__(self):
        self.x, self.y = float(self.x), float(self.y)
        self.w, self.h = float(self.w), float(self.h)
        self.cls, self.score = int(self.cls), float(self.score)
        if self.w <= 0 or self.h <= 0:
            raise ValueError("boxes need positive size")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")


def default_scales(m=8, factor=1.3):
    return [factor ** -k for k in range(m)]


# Sign subjects that recur inside other signs, keyed by class name: the
# bicycle pictogram (237) appears within 241 and 244.1. Extend via config.
DEFAULT_PART_NAMES = {"241": ("237",), "244.1": ("237",)}


def default_part_table(class_names):
    """Index-keyed part table for the classes present in class_names."""
    table = {}
    for name, parts in DEFAULT_PART_NAMES.items():
        if name in class_names and all(p in class_names for p in parts):
            table[class_names.index(name)] = [class_names.index(p) for p in parts]
    return table


@dataclass
class DetectorConfig:
    scales: list = field(default_factory=default_scales)
    t_min: float = 0.2
    part_table: dict = field(default_factory=dict)    # class -> list of part classes
    part_iou: float = 0.2
    global_nms_iou: float = 0.5
    class_thresholds: dict = field(default_factory=dict)  # class -> t_c, default 0.5
    background_class: int = 0

    def threshold_for(self, cls):
        return self.class_thresholds.get(cls, 0.5)


@dataclass
class ScaleMap:
    scale: float
    probs: np.ndarray  # (h, w, C)


def probability_maps(fcn, image, scales):
    """Run the fused model over a pyramid of bilinear rescales.

    Scales whose resized image is smaller than one patch are skipped and
    returned in the notices list. The image must be larger than a patch
    at the largest requested scale.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected a 3-channel (h, w, 3) image")
    patch = fcn.patch_size
    maps, notices = [], []
    if not scales:
        raise ValueError("need at least one scale")
    largest = max(scales)
    if min(round(image.shape[0] * largest), round(image.shape[1] * largest)) < patch:
        raise ValueError(f"image {image.shape[:2]} smaller than one {patch}px patch "
                         f"at scale {largest}")
    for s in scales:
        oh = max(1, int(round(image.shape[0] * s)))
        ow = max(1, int(round(image.shape[1] * s)))
        if oh < patch or ow < patch:
            notices.append(f"scale {s:g}: resized image {oh}x{ow} smaller than a patch, skipped")
            continue
        scaled = resize_bilinear(image, oh, ow) if (oh, ow) != image.shape[:2] else image
        maps.append(ScaleMap(scale=s, probs=forward(fcn, scaled)))
    return maps, notices


def extract_boxes(maps, config, total_stride, patch_size):
    """Candidate boxes from every map cell whose probability tops t_min."""
    boxes = []
    for sm in maps:
        probs = sm.probs
        for cls in range(probs.shape[2]):
            if cls == config.background_class:
                continue
            ii, jj = np.nonzero(probs[:, :, cls] > config.t_min)
            for i, j in zip(ii, jj):
                boxes.append(BoundingBox(
                    x=(total_stride * j + patch_size / 2) / sm.scale,
                    y=(total_stride * i + patch_size / 2) / sm.scale,
                    w=patch_size / sm.scale,
                    h=patch_size / sm.scale,
                    cls=cls,
                    # float32 vote sums can exceed 1 by a few ulps
                    score=min(1.0, float(probs[i, j, cls])),
                ))
    return boxes


def _order(boxes):
    return sorted(boxes, key=lambda b: (-b.score, b.cls, b.x, b.y, b.w, b.h))


def nms(boxes, iou_threshold, per_class=False):
    """Greedy suppression: keep the best box, drop overlaps with IoU
    strictly above the threshold, repeat. per_class restricts comparisons
    to boxes of the same class."""
    kept = []
    for box in _order(boxes):
        suppressed = False
        for k in kept:
            if per_class and k.cls != box.cls:
                continue
            if iou(k, box) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(box)
    return kept


def part_boost(boxes, part_table, part_iou=0.2):
    """Raise the score of boxes whose declared part classes co-occur.

    For a box of a class with P part classes, each part class contributes
    best_part_score * 0.2 / P when some box of that class overlaps with
    IoU strictly above part_iou. Scores cap at 1.0; geometry and class
    never change.
    """
    boosted = []
    for box in boxes:
        parts = part_table.get(box.cls, ())
        if not parts:
            boosted.append(box)
            continue
        bonus = 0.0
        for part_cls in parts:
            best = 0.0
            for other in boxes:
                if other is box or other.cls != part_cls:
                    continue
                if iou(box, other) > part_iou:
                    best = max(best, other.score)
            bonus += best * 0.2 / len(parts)
        boosted.append(BoundingBox(box.x, box.y, box.w, box.h, box.cls,
                                   min(1.0, box.score + bonus)))
    return boosted


def detect(image, fcn, config):
    """Full detection pipeline; deterministic for fixed inputs."""
    maps, _ = probability_maps(fcn, image, config.scales)
    candidates = extract_boxes(maps, config, fcn.total_stride, fcn.patch_size)
    stage1 = nms(candidates, config.global_nms_iou, per_class=True)
    boosted = part_boost(stage1, config.part_table, config.part_iou)
    stage3 = nms(boosted, config.global_nms_iou, per_class=False)
    final = [b for b in stage3 if b.score >= config.threshold_for(b.cls)]
    return _order(final)
