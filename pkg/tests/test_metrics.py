from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest

from segpipe.errors import EmptyEvaluation, ShapeMismatch
from segpipe.maps import IGNORE, VOID, PanopticMap, SegmentInfo, SemanticMap
from segpipe.metrics import SemanticTally, combine_pq, confusion_matrix, miou, pq


# -- oracles ---------------------------------------------------------------


def miou_oracle(pred: np.ndarray, gt: np.ndarray, num_categories: int) -> float:
    """Literal per-pixel set definitions, Fractions all the way."""
    h, w = gt.shape
    total = Fraction(0)
    present = 0
    for c in range(num_categories):
        tp = fp = fn = 0
        seen = False
        for y in range(h):
            for x in range(w):
                if gt[y, x] == IGNORE:
                    continue
                g, p = gt[y, x], pred[y, x]
                if g == c or p == c:
                    seen = True
                if g == c and p == c:
                    tp += 1
                elif p == c:
                    fp += 1
                elif g == c:
                    fn += 1
        if seen:
            present += 1
            total += Fraction(tp, tp + fp + fn)
    return float(total / present)


def pq_oracle(pred: PanopticMap, gt: PanopticMap):
    """Exhaustive matching over all candidate pair subsets."""
    gt_cat = gt.category_of()
    pred_cat = pred.category_of()
    gt_px = {g: set(zip(*np.nonzero(gt.segment_ids == g))) for g in gt_cat}
    pred_px = {p: set(zip(*np.nonzero(pred.segment_ids == p))) for p in pred_cat}
    void_px = set(zip(*np.nonzero(gt.segment_ids == VOID)))

    candidates = []
    for g, p in itertools.product(gt_cat, pred_cat):
        if gt_cat[g] != pred_cat[p]:
            continue
        inter = len(gt_px[g] & pred_px[p])
        if inter == 0:
            continue
        union = len(gt_px[g]) + len(pred_px[p]) - inter - len(pred_px[p] & void_px)
        iou = Fraction(inter, union)
        if iou > Fraction(1, 2):
            candidates.append((g, p, iou))

    best_score, best_set = Fraction(-1), []
    for r in range(len(candidates) + 1):
        for subset in itertools.combinations(candidates, r):
            gs = [g for g, _, _ in subset]
            ps = [p for _, p, _ in subset]
            if len(set(gs)) != len(gs) or len(set(ps)) != len(ps):
                continue
            score = sum((iou for _, _, iou in subset), Fraction(0))
            if score > best_score:
                best_score, best_set = score, list(subset)

    matched_gt = {g for g, _, _ in best_set}
    matched_pred = {p for _, p, _ in best_set}
    tp = len(best_set)
    fn = len([g for g in gt_cat if g not in matched_gt])
    fp = 0
    for p in pred_cat:
        if p in matched_pred:
            continue
        if 2 * len(pred_px[p] & void_px) > len(pred_px[p]):
            continue
        fp += 1
    iou_sum = sum((iou for _, _, iou in best_set), Fraction(0))
    denom = Fraction(2 * tp + fp + fn, 2)
    value = float(iou_sum / denom) if denom else 0.0
    return value, tp, fp, fn, {(g, p) for g, p, _ in best_set}


def random_pair(rng: np.random.Generator, num_categories: int, size: int, max_segments: int):
    def one():
        n_segments = int(rng.integers(1, max_segments + 1))
        sites = np.stack(
            np.unravel_index(rng.choice(size * size, size=n_segments, replace=False), (size, size)),
            axis=1,
        )
        yy, xx = np.mgrid[0:size, 0:size]
        d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
        ids = np.argmin(d2, axis=2).astype(np.int64) + 1
        if rng.random() < 0.5:
            ids[rng.random((size, size)) < 0.1] = VOID
        present = sorted(set(np.unique(ids).tolist()) - {VOID})
        segments = tuple(
            SegmentInfo(int(s), int(rng.integers(0, num_categories)), True) for s in present
        )
        return PanopticMap(ids, segments)

    return one(), one()


# -- confusion matrix --------------------------------------------------------


def test_confusion_uniform_diagonal():
    m = SemanticMap(np.full((4, 4), 3, dtype=np.int32))
    cm = confusion_matrix(m, m, 10)
    expected = np.zeros((10, 10), dtype=np.int64)
    expected[3, 3] = 16
    assert np.array_equal(cm, expected)


def test_confusion_matches_tally_oracle():
    rng = np.random.default_rng(0)
    gt = rng.integers(0, 5, size=(8, 8)).astype(np.int32)
    gt[rng.random((8, 8)) < 0.2] = IGNORE
    pred = rng.integers(0, 5, size=(8, 8)).astype(np.int32)
    cm = confusion_matrix(SemanticMap(pred), SemanticMap(gt), 5)
    manual = np.zeros((5, 5), dtype=np.int64)
    for y in range(8):
        for x in range(8):
            if gt[y, x] != IGNORE:
                manual[gt[y, x], pred[y, x]] += 1
    assert np.array_equal(cm, manual)


def test_confusion_all_ignore_is_zero():
    gt = SemanticMap(np.full((4, 4), IGNORE, dtype=np.int32))
    pred = SemanticMap(np.zeros((4, 4), dtype=np.int32))
    assert confusion_matrix(pred, gt, 3).sum() == 0


def test_confusion_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        confusion_matrix(
            SemanticMap(np.zeros((2, 2), dtype=np.int32)),
            SemanticMap(np.zeros((3, 3), dtype=np.int32)),
            2,
        )


# -- miou ---------------------------------------------------------------------


def test_miou_perfect_prediction():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 7, size=(6, 6)).astype(np.int32)
    m = SemanticMap(labels)
    assert miou(m, m, 7) == 1.0


def test_miou_hand_fixture_seven_twelfths():
    gt = SemanticMap(np.array([[0, 0], [1, 1]], dtype=np.int32))
    pred = SemanticMap(np.array([[0, 1], [1, 1]], dtype=np.int32))
    assert abs(miou(pred, gt, 2) - 7 / 12) < 1e-15


def test_miou_disjoint_classes_zero():
    gt = SemanticMap(np.array([[0, 0], [1, 1]], dtype=np.int32))
    pred = SemanticMap(np.array([[1, 1], [0, 0]], dtype=np.int32))
    assert miou(pred, gt, 2) == 0.0


def test_miou_matches_bruteforce_oracle():
    rng = np.random.default_rng(2)
    for _ in range(40):
        size = int(rng.integers(2, 13))
        n_cat = int(rng.integers(2, 8))
        gt = rng.integers(0, n_cat, size=(size, size)).astype(np.int32)
        gt[rng.random((size, size)) < 0.15] = IGNORE
        pred = rng.integers(0, n_cat, size=(size, size)).astype(np.int32)
        if rng.random() < 0.3:
            pred[rng.random((size, size)) < 0.1] = IGNORE
        got = miou(SemanticMap(pred), SemanticMap(gt), n_cat)
        want = miou_oracle(pred, gt, n_cat)
        assert abs(got - want) < 1e-12


def test_miou_empty_evaluation():
    gt = SemanticMap(np.full((3, 3), IGNORE, dtype=np.int32))
    pred = SemanticMap(np.zeros((3, 3), dtype=np.int32))
    with pytest.raises(EmptyEvaluation):
        miou(pred, gt, 2)


def test_miou_permutation_invariance():
    rng = np.random.default_rng(3)
    gt = rng.integers(0, 6, size=(10, 10)).astype(np.int32)
    pred = rng.integers(0, 6, size=(10, 10)).astype(np.int32)
    perm = rng.permutation(6).astype(np.int32)
    base = miou(SemanticMap(pred), SemanticMap(gt), 6)
    permuted = miou(SemanticMap(perm[pred]), SemanticMap(perm[gt]), 6)
    assert abs(base - permuted) < 1e-15


def test_semantic_tally_accumulates():
    rng = np.random.default_rng(4)
    tally = SemanticTally(5)
    pairs = []
    for _ in range(4):
        gt = rng.integers(0, 5, size=(6, 6)).astype(np.int32)
        pred = rng.integers(0, 5, size=(6, 6)).astype(np.int32)
        pairs.append((pred, gt))
        tally.update(SemanticMap(pred), SemanticMap(gt))
    combined_gt = np.concatenate([gt for _, gt in pairs], axis=0)
    combined_pred = np.concatenate([pred for pred, _ in pairs], axis=0)
    assert abs(tally.miou() - miou(SemanticMap(combined_pred), SemanticMap(combined_gt), 5)) < 1e-15


# -- pq -------------------------------------------------------------------------


def grid_map(assignment: dict[int, tuple[int, int]], size: int = 10) -> PanopticMap:
    """assignment: segment_id -> (category, flat cell count), laid out row-major."""
    ids = np.zeros(size * size, dtype=np.int64)
    cursor = 0
    segments = []
    for seg_id, (category, count) in assignment.items():
        ids[cursor : cursor + count] = seg_id
        segments.append(SegmentInfo(seg_id, category, True))
        cursor += count
    return PanopticMap(ids.reshape(size, size), tuple(segments))


def test_pq_perfect_prediction():
    gt = grid_map({1: (0, 50), 2: (1, 50)})
    result = pq(gt, gt)
    assert result.pq == 1.0
    assert result.sq == 1.0
    assert result.rq == 1.0
    assert result.tp == 2 and result.fp == 0 and result.fn == 0


def test_pq_hand_fixture_point_four():
    # TP at IoU 0.6 (30 px pred inside a 50 px gt segment) plus one missed gt segment
    gt = grid_map({1: (0, 50), 2: (1, 50)})
    pred = grid_map({11: (0, 30)})
    result = pq(pred, gt)
    assert result.tp == 1 and result.fn == 1 and result.fp == 0
    assert abs(result.pq - 0.4) < 1e-12


def test_pq_iou_exactly_half_is_no_match():
    gt = grid_map({1: (0, 50), 2: (1, 50)})
    pred = grid_map({11: (0, 25)})  # IoU = 25/50 = 0.5 exactly
    result = pq(pred, gt)
    assert result.tp == 0
    assert result.fp == 1
    assert result.fn == 2
    assert result.pq == 0.0


def test_pq_void_majority_prediction_discarded():
    # gt: first 50 cells category 0, rest VOID; pred segment sits 80% on void
    gt = grid_map({1: (0, 50)})
    pred_ids = np.zeros(100, dtype=np.int64)
    pred_ids[40:90] = 11  # 10 cells on gt segment, 40 on void
    pred = PanopticMap(pred_ids.reshape(10, 10), (SegmentInfo(11, 0, True),))
    result = pq(pred, gt)
    assert result.fp == 0  # discarded, not a false positive
    assert result.fn == 1


def test_pq_void_excluded_from_union():
    # pred segment covers the whole gt segment plus void area only:
    # union excludes the void overlap so IoU = 50/50 = 1.0
    gt = grid_map({1: (0, 50)})
    pred_ids = np.zeros(100, dtype=np.int64)
    pred_ids[:90] = 11
    pred = PanopticMap(pred_ids.reshape(10, 10), (SegmentInfo(11, 0, True),))
    result = pq(pred, gt)
    assert result.tp == 1
    assert result.pq == 1.0


def test_pq_category_mismatch_never_matches():
    gt = grid_map({1: (0, 100)})
    pred = grid_map({11: (1, 100)})
    result = pq(pred, gt)
    assert result.tp == 0 and result.fp == 1 and result.fn == 1


def test_pq_matches_exhaustive_oracle():
    rng = np.random.default_rng(5)
    for trial in range(40):
        size = int(rng.integers(4, 13))
        pred, gt = random_pair(rng, num_categories=4, size=size, max_segments=6)
        result = pq(pred, gt)
        want_pq, want_tp, want_fp, want_fn, _ = pq_oracle(pred, gt)
        assert result.tp == want_tp, f"trial {trial}"
        assert result.fp == want_fp, f"trial {trial}"
        assert result.fn == want_fn, f"trial {trial}"
        assert abs(result.pq - want_pq) < 1e-12, f"trial {trial}"


def test_pq_permutation_invariance():
    rng = np.random.default_rng(6)
    pred, gt = random_pair(rng, num_categories=4, size=10, max_segments=5)
    base = pq(pred, gt)
    perm = {0: 2, 1: 3, 2: 0, 3: 1}
    relabel = lambda pm: PanopticMap(
        pm.segment_ids,
        tuple(SegmentInfo(s.segment_id, perm[s.category], s.isthing) for s in pm.segments),
    )
    permuted = pq(relabel(pred), relabel(gt))
    assert abs(base.pq - permuted.pq) < 1e-15
    assert base.tp == permuted.tp and base.fp == permuted.fp and base.fn == permuted.fn


def test_pq_bounds():
    rng = np.random.default_rng(7)
    for _ in range(20):
        pred, gt = random_pair(rng, num_categories=3, size=8, max_segments=4)
        result = pq(pred, gt)
        assert 0.0 <= result.pq <= 1.0
        assert 0.0 <= result.sq <= 1.0
        assert 0.0 <= result.rq <= 1.0


def test_pq_shape_mismatch():
    a = grid_map({1: (0, 100)}, size=10)
    b = PanopticMap(np.ones((5, 5), dtype=np.int64), (SegmentInfo(1, 0, True),))
    with pytest.raises(ShapeMismatch):
        pq(a, b)


def test_combine_pq_equals_concatenated_tallies():
    rng = np.random.default_rng(8)
    pairs = [random_pair(rng, num_categories=3, size=8, max_segments=4) for _ in range(3)]
    combined = combine_pq([pq(p, g) for p, g in pairs])
    assert combined.tp == sum(pq(p, g).tp for p, g in pairs)
    assert combined.fn == sum(pq(p, g).fn for p, g in pairs)
    assert 0.0 <= combined.pq <= 1.0
