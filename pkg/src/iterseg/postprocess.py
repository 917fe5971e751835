"""From heatmaps to scene-level regions: paste, binarize, superpixels, NMS."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels, nn
from .errors import ConfigError, DataError
from .nn import Array

BINARIZE_THRESHOLD = 0.4


def box_iou(a: Sequence[int], b: Sequence[int]) -> float:
    """IoU of two integer boxes (x0, y0, x1, y1), exclusive upper bounds."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def paste_heatmap(heat: Array, bbox: Sequence[int],
                  scene_size: int) -> Array:
    """Resize a patch heatmap to its box and paste onto a zero canvas."""
    heat = np.asarray(heat, dtype=np.float64)
    if heat.ndim != 2:
        raise ConfigError(f"heatmap must be 2-d, got shape {heat.shape}")
    x0, y0, x1, y1 = (int(v) for v in bbox)
    if not (0 <= x0 < x1 <= scene_size and 0 <= y0 < y1 <= scene_size):
        raise DataError(f"bbox {tuple(bbox)} outside scene of size {scene_size}")
    canvas = np.zeros((scene_size, scene_size), dtype=np.float64)
    canvas[y0:y1, x0:x1] = nn.bilinear_resize(heat[None, None],
                                              y1 - y0, x1 - x0)[0, 0]
    return canvas


def binarize(heat: Array, threshold: float = BINARIZE_THRESHOLD) -> Array:
    """Strictly-greater-than threshold; values equal to it are background."""
    return np.asarray(heat, dtype=np.float64) > threshold


def _grid_centers(image: Array, count: int) -> tuple[Array, float]:
    h, w = image.shape[:2]
    step = float(np.sqrt(h * w / count))
    ny = max(1, int(round(h / step)))
    nx = max(1, int(round(w / step)))
    centers = np.empty((ny * nx, 5), dtype=np.float64)
    k = 0
    for i in range(ny):
        for j in range(nx):
            cy = (i + 0.5) * h / ny
            cx = (j + 0.5) * w / nx
            iy = min(int(cy), h - 1)
            ix = min(int(cx), w - 1)
            centers[k, 0] = cy
            centers[k, 1] = cx
            centers[k, 2:] = image[iy, ix]
            k += 1
    return centers, step


def _assign_remaining(color: Array, centers: Array, spatial_w: float,
                      labels: Array) -> Array:
    miss = labels < 0
    if not miss.any():
        return labels
    ys, xs = np.nonzero(miss)
    dc = ((color[ys, xs][:, None, :] - centers[None, :, 2:]) ** 2).sum(axis=2)
    ds = (ys[:, None] - centers[None, :, 0]) ** 2 \
        + (xs[:, None] - centers[None, :, 1]) ** 2
    labels[ys, xs] = np.argmin(dc + spatial_w * ds, axis=1)
    return labels


def _components(labels: Array) -> tuple[Array, list[tuple[int, int, int]]]:
    """4-connected components; returns (component ids, [(label, size, first)])."""
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int64)
    comps: list[tuple[int, int, int]] = []
    flat_labels = labels.ravel()
    flat_comp = comp.ravel()
    for start in range(h * w):
        if flat_comp[start] >= 0:
            continue
        cid = len(comps)
        lab = flat_labels[start]
        stack = [start]
        flat_comp[start] = cid
        size = 0
        while stack:
            p = stack.pop()
            size += 1
            y, x = divmod(p, w)
            if y > 0 and flat_comp[p - w] < 0 and flat_labels[p - w] == lab:
                flat_comp[p - w] = cid
                stack.append(p - w)
            if y < h - 1 and flat_comp[p + w] < 0 and flat_labels[p + w] == lab:
                flat_comp[p + w] = cid
                stack.append(p + w)
            if x > 0 and flat_comp[p - 1] < 0 and flat_labels[p - 1] == lab:
                flat_comp[p - 1] = cid
                stack.append(p - 1)
            if x < w - 1 and flat_comp[p + 1] < 0 and flat_labels[p + 1] == lab:
                flat_comp[p + 1] = cid
                stack.append(p + 1)
        comps.append((int(lab), size, start))
    return comp, comps


def _merge_orphans(labels: Array) -> Array:
    """Keep each label's largest component; merge the rest into the
    neighboring label with the largest area (ties to the smallest label)."""
    h, w = labels.shape
    while True:
        comp, comps = _components(labels)
        best: dict[int, int] = {}
        for cid, (lab, size, first) in enumerate(comps):
            if lab not in best:
                best[lab] = cid
            else:
                b = comps[best[lab]]
                if size > b[1] or (size == b[1] and first < b[2]):
                    best[lab] = cid
        orphan_ids = [cid for cid, (lab, _, _) in enumerate(comps)
                      if best[lab] != cid]
        if not orphan_ids:
            return labels
        areas = np.bincount(labels.ravel())
        for cid in sorted(orphan_ids, key=lambda c: comps[c][2]):
            mask = comp == cid
            neigh: set[int] = set()
            ys, xs = np.nonzero(mask)
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ny = np.clip(ys + dy, 0, h - 1)
                nx = np.clip(xs + dx, 0, w - 1)
                neigh.update(int(v) for v in np.unique(labels[ny, nx]))
            neigh.discard(int(comps[cid][0]))
            if not neigh:
                continue
            target = max(neigh, key=lambda lab: (areas[lab], -lab))
            labels[mask] = target
            areas = np.bincount(labels.ravel())


def compute_superpixels(image: Array, count: int = 200, iterations: int = 10,
                        spatial_weight: float = 10.0) -> Array:
    """SLIC-style superpixels: (y, x, r, g, b) k-means from grid seeds.

    Returns int64 labels 0..K-1 forming a full partition with
    4-connected segments; deterministic for identical inputs.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"superpixels expect (H, W, 3) image, got {image.shape}")
    if count < 1 or iterations < 1 or spatial_weight <= 0:
        raise ConfigError("bad superpixel parameters")
    if count > image.shape[0] * image.shape[1]:
        raise ConfigError(
            f"asked for {count} superpixels on a "
            f"{image.shape[0]}x{image.shape[1]} image"
        )
    color = image.astype(np.float64)
    centers, step = _grid_centers(color, count)
    spatial_w = (spatial_weight / step) ** 2
    half_window = int(np.ceil(step)) + 1
    h, w = color.shape[:2]
    yy, xx = np.mgrid[:h, :w]
    for _ in range(iterations):
        labels, _dist = kernels.slic_assign(color, centers, spatial_w,
                                            half_window)
        labels = _assign_remaining(color, centers, spatial_w, labels)
        counts = np.bincount(labels.ravel(), minlength=centers.shape[0])
        nonzero = counts > 0
        sums = np.empty_like(centers)
        sums[:, 0] = np.bincount(labels.ravel(), weights=yy.ravel(),
                                 minlength=centers.shape[0])
        sums[:, 1] = np.bincount(labels.ravel(), weights=xx.ravel(),
                                 minlength=centers.shape[0])
        for c in range(3):
            sums[:, 2 + c] = np.bincount(labels.ravel(),
                                         weights=color[:, :, c].ravel(),
                                         minlength=centers.shape[0])
        centers[nonzero] = sums[nonzero] / counts[nonzero, None]
    labels = _merge_orphans(labels)
    uniq = np.unique(labels)
    remap = np.zeros(int(uniq.max()) + 1, dtype=np.int64)
    remap[uniq] = np.arange(uniq.size)
    return remap[labels]


def project_to_superpixels(canvas: Array, labels: Array) -> Array:
    """Replace every pixel's heat with the mean heat over its superpixel."""
    canvas = np.asarray(canvas, dtype=np.float64)
    if canvas.shape != labels.shape:
        raise ConfigError(
            f"heat canvas {canvas.shape} does not match labels {labels.shape}"
        )
    n = int(labels.max()) + 1
    sums = np.bincount(labels.ravel(), weights=canvas.ravel(), minlength=n)
    counts = np.bincount(labels.ravel(), minlength=n)
    means = sums / counts
    return means[labels]


def nms(detections: list, overlap_fn: Callable, threshold: float) -> list:
    """Greedy NMS: keep by descending score (ties by id ascending),
    suppress anything whose overlap with a kept item strictly exceeds
    the threshold."""
    order = sorted(detections, key=lambda d: (-d.score, d.det_id))
    kept: list = []
    for cand in order:
        if all(overlap_fn(k, cand) <= threshold for k in kept):
            kept.append(cand)
    return kept
