"""Desk-scale segmentation metrics: mean IoU and Panoptic Quality.

All tallies are exact integer pixel counts; ratios stay rational until
the single final float conversion, so results are deterministic across
platforms. PQ matches segments of the same category at IoU > 1/2
(strict), which makes matches provably unique.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from segpipe.errors import EmptyEvaluation, ShapeMismatch
from segpipe.maps import IGNORE, VOID, PanopticMap, SemanticMap


def confusion_matrix(pred: SemanticMap, gt: SemanticMap, num_categories: int) -> np.ndarray:
    """(num_categories, num_categories) counts; entry (i, j) tallies pixels
    with gt category i and predicted category j. Pixels with IGNORE ground
    truth are excluded entirely."""
    _check_shapes(pred.labels.shape, gt.labels.shape)
    valid = (gt.labels != IGNORE) & (pred.labels != IGNORE)
    g = gt.labels[valid].astype(np.int64)
    p = pred.labels[valid].astype(np.int64)
    if g.size and (g.max() >= num_categories or p.max() >= num_categories):
        raise ValueError("labels exceed num_categories")
    counts = np.bincount(g * num_categories + p, minlength=num_categories * num_categories)
    return counts.reshape(num_categories, num_categories)


class SemanticTally:
    """Accumulated per-category pixel tallies; image results sum exactly."""

    def __init__(self, num_categories: int):
        self.num_categories = num_categories
        self.cm = np.zeros((num_categories, num_categories), dtype=np.int64)
        self.gt_counts = np.zeros(num_categories, dtype=np.int64)
        self.pred_counts = np.zeros(num_categories, dtype=np.int64)
        self.valid_pixels = 0

    def update(self, pred: SemanticMap, gt: SemanticMap) -> None:
        _check_shapes(pred.labels.shape, gt.labels.shape)
        valid = gt.labels != IGNORE
        self.valid_pixels += int(valid.sum())
        self.cm += confusion_matrix(pred, gt, self.num_categories)
        self.gt_counts += np.bincount(
            gt.labels[valid].astype(np.int64), minlength=self.num_categories
        )
        pred_valid = valid & (pred.labels != IGNORE)
        self.pred_counts += np.bincount(
            pred.labels[pred_valid].astype(np.int64), minlength=self.num_categories
        )

    def iou_per_category(self) -> dict[int, Fraction]:
        """IoU for every category present in gt or pred."""
        tp = np.diag(self.cm)
        fp = self.cm.sum(axis=0) - tp
        fn = self.gt_counts - tp  # includes pixels the prediction left IGNORE
        present = (self.gt_counts > 0) | (self.pred_counts > 0)
        return {
            int(c): Fraction(int(tp[c]), int(tp[c] + fp[c] + fn[c]))
            for c in np.nonzero(present)[0]
        }

    def miou(self) -> float:
        if self.valid_pixels == 0:
            raise EmptyEvaluation("ground truth has no annotated pixels")
        ious = self.iou_per_category()
        return float(sum(ious.values(), Fraction(0)) / len(ious))


def miou(pred: SemanticMap, gt: SemanticMap, num_categories: int) -> float:
    """Mean IoU over categories present in gt or pred.

    Per category c: IoU = TP / (TP + FP + FN) on pixels with non-IGNORE
    ground truth; a predicted IGNORE on a valid pixel counts as a miss
    (FN for the gt category, FP for none). Categories absent from both
    maps are excluded from the mean.
    """
    tally = SemanticTally(num_categories)
    tally.update(pred, gt)
    return tally.miou()


@dataclass
class CategoryPQ:
    iou_sum: Fraction
    tp: int
    fp: int
    fn: int

    @property
    def pq(self) -> float:
        return _pq_value(self.iou_sum, self.tp, self.fp, self.fn)

    @property
    def sq(self) -> float:
        return float(self.iou_sum / self.tp) if self.tp else 0.0

    @property
    def rq(self) -> float:
        return _pq_value(Fraction(self.tp), self.tp, self.fp, self.fn)


@dataclass
class PQResult:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    per_category: dict[int, CategoryPQ]


def pq(pred: PanopticMap, gt: PanopticMap) -> PQResult:
    """Panoptic Quality: sum of matched IoUs over (TP + FP/2 + FN/2).

    Segments match when they share a category and their IoU exceeds 1/2
    strictly. Pixels that are VOID in the ground truth are excluded from
    IoU denominators, and predicted segments overlapping gt VOID on more
    than half their area are discarded rather than counted as FP.
    """
    _check_shapes(pred.segment_ids.shape, gt.segment_ids.shape)
    gt_cat = gt.category_of()
    pred_cat = pred.category_of()

    gt_ids = gt.segment_ids.ravel()
    pred_ids = pred.segment_ids.ravel()
    if max(gt_ids.max(initial=0), pred_ids.max(initial=0)) >= 1 << 31:
        raise ValueError("segment ids must fit 31 bits for pair packing")
    pairs, counts = np.unique(gt_ids << np.int64(32) | pred_ids, return_counts=True)
    inter: dict[tuple[int, int], int] = {}
    for packed, count in zip(pairs.tolist(), counts.tolist()):
        inter[(packed >> 32, packed & 0xFFFFFFFF)] = count

    gt_area = {g: 0 for g in gt_cat}
    pred_area = {p: 0 for p in pred_cat}
    void_overlap = {p: 0 for p in pred_cat}
    for (g, p), count in inter.items():
        if g != VOID:
            gt_area[g] += count
        if p != VOID:
            pred_area[p] += count
            if g == VOID:
                void_overlap[p] += count

    matched_gt: set[int] = set()
    matched_pred: set[int] = set()
    per_cat: dict[int, CategoryPQ] = {}

    def cat_entry(category: int) -> CategoryPQ:
        return per_cat.setdefault(category, CategoryPQ(iou_sum=Fraction(0), tp=0, fp=0, fn=0))

    for (g, p), count in sorted(inter.items()):
        if g == VOID or p == VOID or gt_cat[g] != pred_cat[p]:
            continue
        union = gt_area[g] + pred_area[p] - count - void_overlap[p]
        iou = Fraction(count, union)
        if iou > Fraction(1, 2):
            entry = cat_entry(gt_cat[g])
            entry.tp += 1
            entry.iou_sum += iou
            matched_gt.add(g)
            matched_pred.add(p)

    for g, category in gt_cat.items():
        if g not in matched_gt:
            cat_entry(category).fn += 1
    for p, category in pred_cat.items():
        if p in matched_pred:
            continue
        if 2 * void_overlap[p] > pred_area[p]:
            continue  # mostly unannotated area; not a false positive
        cat_entry(category).fp += 1

    iou_total = sum((e.iou_sum for e in per_cat.values()), Fraction(0))
    tp = sum(e.tp for e in per_cat.values())
    fp = sum(e.fp for e in per_cat.values())
    fn = sum(e.fn for e in per_cat.values())
    return PQResult(
        pq=_pq_value(iou_total, tp, fp, fn),
        sq=float(iou_total / tp) if tp else 0.0,
        rq=_pq_value(Fraction(tp), tp, fp, fn),
        tp=tp,
        fp=fp,
        fn=fn,
        per_category=per_cat,
    )


def combine_pq(results: list[PQResult]) -> PQResult:
    """Sum per-image PQ tallies into one dataset-level result."""
    per_cat: dict[int, CategoryPQ] = {}
    for result in results:
        for category, entry in result.per_category.items():
            merged = per_cat.setdefault(category, CategoryPQ(iou_sum=Fraction(0), tp=0, fp=0, fn=0))
            merged.iou_sum += entry.iou_sum
            merged.tp += entry.tp
            merged.fp += entry.fp
            merged.fn += entry.fn
    iou_total = sum((e.iou_sum for e in per_cat.values()), Fraction(0))
    tp = sum(e.tp for e in per_cat.values())
    fp = sum(e.fp for e in per_cat.values())
    fn = sum(e.fn for e in per_cat.values())
    return PQResult(
        pq=_pq_value(iou_total, tp, fp, fn),
        sq=float(iou_total / tp) if tp else 0.0,
        rq=_pq_value(Fraction(tp), tp, fp, fn),
        tp=tp,
        fp=fp,
        fn=fn,
        per_category=per_cat,
    )


def _pq_value(iou_sum: Fraction, tp: int, fp: int, fn: int) -> float:
    denom = Fraction(2 * tp + fp + fn, 2)  # tp + fp/2 + fn/2
    if denom == 0:
        return 0.0
    return float(iou_sum / denom)


def _check_shapes(a: tuple, b: tuple) -> None:
    if a != b:
        raise ShapeMismatch(f"map shapes differ: {a} vs {b}")
