"""Detection evaluation: IoU matching, PR curves, AP/mAP, threshold picking.

Matching is greedy per image and class in descending score order; a
detection claims the unclaimed ground-truth box of highest overlap when
that overlap is strictly above the IoU floor. AP uses all-points
interpolation (area under the nonincreasing precision envelope over
recall).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GroundTruthBox:
    image_id: str
    x: float  # center
    y: float
    w: float
    h: float
    cls: int

    def __post_init__(self):
        self.x, self.y = float(self.x), float(self.y)
        self.w, self.h = float(self.w), float(self.h)
        self.cls = int(self.cls)
        if self.w <= 0 or self.h <= 0:
            raise ValueError("ground-truth boxes need positive size")


@dataclass
class Detection:
    image_id: str
    x: float
    y: float
    w: float
    h: float
    cls: int
    score: float


@dataclass
class PRCurve:
    cls: int
    thresholds: list = field(default_factory=list)
    precisions: list = field(default_factory=list)
    recalls: list = field(default_factory=list)


def _corners(b):
    return (b.x - b.w / 2, b.y - b.h / 2, b.x + b.w / 2, b.y + b.h / 2)


def iou(a, b):
    """Intersection over union of two axis-aligned center-format boxes."""
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def match_detections(dets, gts, iou_min=0.5):
    """Label each detection TP/FP against ground truth.

    Returns (labels, gt_counts): labels is a list of (detection, is_tp)
    sorted by descending score with deterministic tie-breaking; gt_counts
    maps class -> number of ground-truth boxes.
    """
    order = sorted(dets, key=lambda d: (-d.score, d.image_id, d.x, d.y))
    gt_by_key = {}
    for g in gts:
        gt_by_key.setdefault((g.image_id, g.cls), []).append(g)
    claimed = set()
    labels = []
    for det in order:
        candidates = gt_by_key.get((det.image_id, det.cls), [])
        best, best_iou = None, 0.0
        for g in candidates:
            if id(g) in claimed:
                continue
            overlap = iou(det, g)
            if overlap > best_iou:
                best, best_iou = g, overlap
        if best is not None and best_iou > iou_min:
            claimed.add(id(best))
            labels.append((det, True))
        else:
            labels.append((det, False))
    gt_counts = {}
    for g in gts:
        gt_counts[g.cls] = gt_counts.get(g.cls, 0) + 1
    return labels, gt_counts


def pr_and_ap(labels, n_gt, cls=0):
    """PR curve and average precision for one class.

    labels: (detection, is_tp) pairs for this class, any order; thresholds
    sweep the distinct scores from high to low.
    """
    if n_gt < 1:
        raise ValueError("need at least one ground-truth box for this class")
    ordered = sorted(labels, key=lambda item: (-item[0].score, item[0].image_id, item[0].x))
    curve = PRCurve(cls=cls)
    if not ordered:
        return curve, 0.0
    scores = np.array([d.score for d, _ in ordered])
    tp = np.cumsum([1.0 if ok else 0.0 for _, ok in ordered])
    fp = np.cumsum([0.0 if ok else 1.0 for _, ok in ordered])
    distinct = np.nonzero(np.concatenate([scores[1:] < scores[:-1], [True]]))[0]
    precision = tp[distinct] / (tp[distinct] + fp[distinct])
    recall = tp[distinct] / n_gt
    curve.thresholds = [float(scores[i]) for i in distinct]
    curve.precisions = [float(p) for p in precision]
    curve.recalls = [float(r) for r in recall]
    # Precision envelope over recall, integrated across recall steps.
    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[1.0], precision])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))
    return curve, ap


def evaluate(dets, gts, iou_min=0.5):
    """Per-class PR/AP plus mAP over classes that have ground truth.

    Classes present in detections but absent from ground truth are
    skipped and reported in the notices list.
    """
    labels, gt_counts = match_detections(dets, gts, iou_min)
    by_class = {}
    for det, ok in labels:
        by_class.setdefault(det.cls, []).append((det, ok))
    curves, aps, notices = {}, {}, []
    for cls in sorted(set(by_class) | set(gt_counts)):
        if gt_counts.get(cls, 0) == 0:
            notices.append(f"class {cls} has no ground truth; excluded from mAP")
            continue
        curve, ap = pr_and_ap(by_class.get(cls, []), gt_counts[cls], cls)
        curves[cls] = curve
        aps[cls] = ap
    mean_ap = float(np.mean(list(aps.values()))) if aps else 0.0
    return curves, aps, mean_ap, notices


def select_thresholds(curves):
    """Pick the max-F1 threshold per class; ties go to the higher threshold.

    A class whose every swept F1 is zero is disabled: its threshold is set
    above any reachable score and listed in the returned notices.
    """
    thresholds, notices = {}, []
    for cls, curve in curves.items():
        best_f1, best_thr = 0.0, None
        for thr, p, r in zip(curve.thresholds, curve.precisions, curve.recalls):
            if p + r == 0:
                continue
            f1 = 2 * p * r / (p + r)
            if f1 > best_f1 + 1e-12 or (abs(f1 - best_f1) <= 1e-12 and best_thr is not None and thr > best_thr):
                best_f1, best_thr = f1, thr
        if best_f1 <= 0.0 or best_thr is None:
            thresholds[cls] = 1.01
            notices.append(f"class {cls} disabled: no threshold reaches a positive F1")
        else:
            thresholds[cls] = best_thr
    return thresholds, notices
