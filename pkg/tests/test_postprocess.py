"""Pasting, thresholding, superpixels, and NMS invariants."""

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iterseg import postprocess
from iterseg.errors import ConfigError, DataError
from iterseg.postprocess import (binarize, box_iou, compute_superpixels, nms,
                                 paste_heatmap, project_to_superpixels)


def test_box_iou_hand_cases():
    assert box_iou((0, 0, 4, 4), (0, 0, 4, 4)) == 1.0
    assert box_iou((0, 0, 4, 4), (4, 0, 8, 4)) == 0.0
    assert box_iou((0, 0, 4, 4), (2, 0, 6, 4)) == pytest.approx(8 / 24)


def test_paste_constant_heatmap_fills_box():
    grid = paste_heatmap(np.ones((4, 4)), (2, 3, 6, 9), scene_size=12)
    inside = grid[3:9, 2:6]
    np.testing.assert_allclose(inside, 1.0)
    grid[3:9, 2:6] = 0.0
    np.testing.assert_array_equal(grid, 0.0)


def test_paste_whole_scene_is_resize_identity():
    rng = np.random.default_rng(0)
    heat = rng.random((8, 8))
    grid = paste_heatmap(heat, (0, 0, 8, 8), scene_size=8)
    np.testing.assert_array_equal(grid, heat)


def test_paste_rejects_bad_boxes():
    with pytest.raises(DataError):
        paste_heatmap(np.ones((4, 4)), (2, 2, 14, 6), scene_size=12)
    with pytest.raises(DataError):
        paste_heatmap(np.ones((4, 4)), (5, 2, 5, 6), scene_size=12)
    with pytest.raises(ConfigError):
        paste_heatmap(np.ones(4), (0, 0, 2, 2), scene_size=4)


def test_binarize_is_strict_at_threshold():
    heat = np.array([0.39, 0.4, 0.4 + 1e-12, 0.41])
    np.testing.assert_array_equal(binarize(heat),
                                  [False, False, True, True])
    np.testing.assert_array_equal(binarize(np.zeros((3, 3))), False)
    np.testing.assert_array_equal(
        binarize(np.array([0.0, 1e-300]), threshold=0.0), [False, True])


GOLDEN_UNIFORM_TILES = np.repeat(np.repeat(
    np.array([[0, 1], [2, 3]]), [9, 7], axis=0), [9, 7], axis=1)


def test_superpixels_on_uniform_image_tile_evenly():
    img = np.full((16, 16, 3), 120, dtype=np.uint8)
    labels = compute_superpixels(img, count=4, iterations=5)
    np.testing.assert_array_equal(labels, GOLDEN_UNIFORM_TILES)


def _components_of(mask):
    """4-connected component count, written independently of the library."""
    comp = np.full(mask.shape, -1)
    n = 0
    for sy, sx in zip(*np.nonzero(mask)):
        if comp[sy, sx] >= 0:
            continue
        stack = [(sy, sx)]
        comp[sy, sx] = n
        while stack:
            y, x = stack.pop()
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if (0 <= ny < mask.shape[0] and 0 <= nx < mask.shape[1]
                        and mask[ny, nx] and comp[ny, nx] < 0):
                    comp[ny, nx] = n
                    stack.append((ny, nx))
        n += 1
    return n


def test_superpixels_partition_and_connectivity(tiny_dataset):
    image = tiny_dataset.load_scene_image(tiny_dataset.scenes[0]["id"])
    labels = compute_superpixels(image, count=24, iterations=4)
    assert labels.shape == image.shape[:2]
    uniq = np.unique(labels)
    np.testing.assert_array_equal(uniq, np.arange(uniq.size))
    for lab in uniq:
        assert _components_of(labels == lab) == 1
    again = compute_superpixels(image, count=24, iterations=4)
    np.testing.assert_array_equal(labels, again)


def test_superpixels_single_cluster():
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    labels = compute_superpixels(img, count=1, iterations=2)
    np.testing.assert_array_equal(labels, 0)


def test_superpixels_reject_bad_parameters():
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    with pytest.raises(ConfigError):
        compute_superpixels(img, count=0)
    with pytest.raises(ConfigError):
        compute_superpixels(img, count=65)
    with pytest.raises(DataError):
        compute_superpixels(np.zeros((8, 8)), count=4)


def test_projection_replaces_with_superpixel_means():
    labels = np.array([[0, 0], [1, 1]])
    heat = np.array([[0.2, 0.8], [0.4, 0.4]])
    out = project_to_superpixels(heat, labels)
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.4, 0.4]])


def test_projection_idempotent_and_mean_preserving():
    rng = np.random.default_rng(1)
    heat = rng.random((20, 20))
    labels = (np.mgrid[:20, :20][0] // 5) * 4 + np.mgrid[:20, :20][1] // 5
    once = project_to_superpixels(heat, labels)
    twice = project_to_superpixels(once, labels)
    # Averaging identical values re-rounds, so idempotence and constant
    # preservation hold to a few ulps rather than bitwise.
    np.testing.assert_allclose(once, twice, atol=1e-12)
    assert once.mean() == pytest.approx(heat.mean(), abs=1e-12)
    constant = np.full((20, 20), 0.7)
    np.testing.assert_allclose(
        project_to_superpixels(constant, labels), constant, atol=1e-15)


def test_projection_shape_mismatch():
    with pytest.raises(ConfigError):
        project_to_superpixels(np.zeros((3, 3)), np.zeros((4, 4), dtype=int))


@dataclass
class Det:
    det_id: str
    score: float
    mask: np.ndarray


def _mask_overlap(a: Det, b: Det) -> float:
    inter = np.logical_and(a.mask, b.mask).sum()
    union = np.logical_or(a.mask, b.mask).sum()
    return inter / union if union else 0.0


def test_nms_keeps_disjoint_and_highest():
    m1 = np.zeros((6, 6), dtype=bool); m1[:3, :3] = True
    m2 = np.zeros((6, 6), dtype=bool); m2[3:, 3:] = True
    dets = [Det("a", 0.9, m1), Det("b", 0.8, m2), Det("c", 0.7, m1)]
    kept = nms(dets, _mask_overlap, threshold=0.3)
    assert [d.det_id for d in kept] == ["a", "b"]


def test_nms_chain_example():
    # A overlaps B, B overlaps C, A and C are disjoint: B is suppressed
    # by A, C survives because it only overlaps the suppressed B.
    a = np.zeros(8, dtype=bool); a[0:4] = True
    b = np.zeros(8, dtype=bool); b[2:6] = True
    c = np.zeros(8, dtype=bool); c[5:8] = True
    dets = [Det("A", 0.9, a), Det("B", 0.8, b), Det("C", 0.7, c)]
    kept = nms(dets, _mask_overlap, threshold=0.3)
    assert [d.det_id for d in kept] == ["A", "C"]


def test_nms_tie_breaks_by_id():
    m = np.ones((2, 2), dtype=bool)
    dets = [Det("z", 0.5, m), Det("a", 0.5, m)]
    kept = nms(dets, _mask_overlap, threshold=0.3)
    assert [d.det_id for d in kept] == ["a"]


@given(seed=st.integers(0, 10_000), thr=st.floats(0.1, 0.9))
@settings(max_examples=40, deadline=None)
def test_nms_pairwise_bound_and_score_relabeling(seed, thr):
    rng = np.random.default_rng(seed)
    dets = []
    for i in range(12):
        mask = np.zeros((8, 8), dtype=bool)
        y, x = rng.integers(0, 5, size=2)
        h, w = rng.integers(2, 4, size=2)
        mask[y:y + h, x:x + w] = True
        dets.append(Det(f"d{i:02d}", float(rng.random()), mask))
    kept = nms(dets, _mask_overlap, thr)
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            assert _mask_overlap(a, b) <= thr
    relabeled = [Det(d.det_id, float(np.exp(4 * d.score)), d.mask)
                 for d in dets]
    kept2 = nms(relabeled, _mask_overlap, thr)
    assert [d.det_id for d in kept2] == [d.det_id for d in kept]
