"""Region-level detection metrics and model probes.

Matching follows the usual detection protocol: detections are visited
in descending score order, each may claim at most one unmatched ground
truth, and a claim requires mask IoU strictly above the threshold.
Average precision integrates the interpolated precision envelope over
all recall points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine, model as model_mod
from .errors import ConfigError, DataError
from .nn import Array


def mask_iou(a: Array, b: Array) -> float:
    """IoU of two boolean masks; 0.0 when both are empty."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ConfigError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if a.dtype != bool or b.dtype != bool:
        raise DataError("mask_iou expects boolean masks")
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    return inter / union if union else 0.0


def bleed_fraction(pred: Array, rival: Array) -> float:
    """Fraction of predicted foreground pixels falling inside rival territory.

    rival is typically the union of ground-truth masks of other instances
    of the same category. An empty prediction bleeds nowhere and scores 0.
    """
    pred = np.asarray(pred)
    rival = np.asarray(rival)
    if pred.shape != rival.shape:
        raise ConfigError(f"mask shapes differ: {pred.shape} vs {rival.shape}")
    if pred.dtype != bool or rival.dtype != bool:
        raise DataError("bleed_fraction expects boolean masks")
    fg = int(pred.sum())
    if fg == 0:
        return 0.0
    return int(np.logical_and(pred, rival).sum()) / fg


@dataclass
class ScoredRegion:
    """One predicted region, scene-scoped, ready for matching."""

    det_id: str
    scene_id: int
    category: int
    score: float
    region: Array   # (S, S) bool


def match_detections(dets: list[ScoredRegion],
                     gts_by_scene: dict[int, list[Array]],
                     iou_threshold: float) -> list[tuple[ScoredRegion, bool]]:
    """Greedy matching pooled across scenes.

    gts_by_scene maps scene id to that scene's ground-truth masks (same
    category as the detections). Returns (detection, is_tp) pairs in
    descending score order, ties broken by det_id ascending. A detection
    matches the unused ground truth with the highest IoU, provided that
    IoU strictly exceeds the threshold; IoU ties go to the lowest ground
    truth index.
    """
    order = sorted(dets, key=lambda d: (-d.score, d.det_id))
    used: dict[int, list[bool]] = {
        sid: [False] * len(masks) for sid, masks in gts_by_scene.items()
    }
    out: list[tuple[ScoredRegion, bool]] = []
    for det in order:
        masks = gts_by_scene.get(det.scene_id, [])
        best_iou = 0.0
        best_idx = -1
        for gi, gt in enumerate(masks):
            if used[det.scene_id][gi]:
                continue
            iou = mask_iou(det.region, gt)
            if iou > best_iou:
                best_iou = iou
                best_idx = gi
        if best_idx >= 0 and best_iou > iou_threshold:
            used[det.scene_id][best_idx] = True
            out.append((det, True))
        else:
            out.append((det, False))
    return out


def average_precision(tp_flags: list[bool], num_gt: int) -> float:
    """All-points interpolated AP; NaN when there is no ground truth."""
    if num_gt < 0:
        raise ConfigError(f"num_gt must be >= 0, got {num_gt}")
    if num_gt == 0:
        return math.nan
    if not tp_flags:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    ranks = np.arange(1, len(tp_flags) + 1, dtype=np.float64)
    precision = tp / ranks
    recall = tp / num_gt
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for i, is_tp in enumerate(tp_flags):
        if is_tp:
            ap += (recall[i] - prev_recall) * precision[i]
            prev_recall = recall[i]
    return float(ap)


@dataclass
class AprResult:
    thresholds: tuple[float, ...]
    # per_category[threshold][category] = AP (NaN when undefined)
    per_category: dict[float, dict[int, float]]
    mean: dict[float, float]
    num_gt: dict[int, int]
    undefined: list[tuple[float, int]]   # (threshold, category) with no GT


def mean_apr(dets: list[ScoredRegion],
             gts: dict[int, list[tuple[int, Array]]],
             thresholds: tuple[float, ...],
             num_categories: int) -> AprResult:
    """AP per category and threshold over scene-keyed ground truths.

    gts maps scene id to a list of (category, mask). Categories without
    any ground truth are excluded from the mean and flagged.
    """
    num_gt = {c: 0 for c in range(num_categories)}
    gt_masks: dict[int, dict[int, list[Array]]] = {
        c: {} for c in range(num_categories)
    }
    for sid, items in gts.items():
        for cat, mask in items:
            if not 0 <= cat < num_categories:
                raise DataError(f"ground truth category {cat} out of range")
            num_gt[cat] += 1
            gt_masks[cat].setdefault(sid, []).append(mask)
    per_category: dict[float, dict[int, float]] = {}
    mean: dict[float, float] = {}
    undefined: list[tuple[float, int]] = []
    for thr in thresholds:
        per_cat: dict[int, float] = {}
        defined: list[float] = []
        for c in range(num_categories):
            cat_dets = [d for d in dets if d.category == c]
            matched = match_detections(cat_dets, gt_masks[c], thr)
            flags = [tp for _, tp in matched]
            ap = average_precision(flags, num_gt[c])
            per_cat[c] = ap
            if math.isnan(ap):
                undefined.append((thr, c))
            else:
                defined.append(ap)
        per_category[thr] = per_cat
        mean[thr] = float(np.mean(defined)) if defined else math.nan
    return AprResult(thresholds=tuple(thresholds), per_category=per_category,
                     mean=mean, num_gt=num_gt, undefined=undefined)


def best_iou(det: ScoredRegion, gts: dict[int, list[tuple[int, Array]]]
             ) -> float:
    """Best IoU of a detection against any same-category GT in its scene."""
    best = 0.0
    for cat, mask in gts.get(det.scene_id, []):
        if cat != det.category:
            continue
        best = max(best, mask_iou(det.region, mask))
    return best


SCATTER_EQUAL_BAND = 0.01


@dataclass
class ScatterResult:
    points: list[tuple[str, float, float]]   # (det_id, iou_before, iou_after)
    improved: float
    degraded: float
    unchanged: float


def overlap_scatter(baseline: list[ScoredRegion], refined: list[ScoredRegion],
                    gts: dict[int, list[tuple[int, Array]]]) -> ScatterResult:
    """Per-detection best-IoU before vs after refinement.

    Detections are paired by det_id; both sets must cover the same ids.
    A pair counts as improved or degraded when the IoU moves by more
    than 0.01, otherwise unchanged.
    """
    base_by_id = {d.det_id: d for d in baseline}
    ref_by_id = {d.det_id: d for d in refined}
    if set(base_by_id) != set(ref_by_id):
        raise DataError("baseline and refined predictions cover different ids")
    points = []
    improved = degraded = 0
    for det_id in sorted(base_by_id):
        before = best_iou(base_by_id[det_id], gts)
        after = best_iou(ref_by_id[det_id], gts)
        points.append((det_id, before, after))
        if after - before > SCATTER_EQUAL_BAND:
            improved += 1
        elif before - after > SCATTER_EQUAL_BAND:
            degraded += 1
    n = max(len(points), 1)
    return ScatterResult(
        points=points,
        improved=improved / n,
        degraded=degraded / n,
        unchanged=(len(points) - improved - degraded) / n,
    )


def category_swap_probe(net: model_mod.SegNet, patch: Array,
                        iterations: int = 1) -> Array:
    """Heatmap sensitivity to the forced category channel.

    Runs inference on one patch once per category and returns the C x C
    matrix of mean absolute differences between the resulting heatmaps.
    """
    C = net.arch.num_categories
    heats = []
    for cat in range(C):
        final, _ = engine.infer(net, patch, cat, iterations)
        heats.append(final)
    dist = np.zeros((C, C), dtype=np.float64)
    for i in range(C):
        for j in range(C):
            dist[i, j] = float(np.abs(heats[i] - heats[j]).mean())
    return dist
