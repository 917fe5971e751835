"""Synthetic shape-world scenes, simulated detections, and patch datasets.

Four shape families double as the four categories: snowman (two stacked
disks), bar (rotated rectangle), ring (annulus) and tee (T-polyomino).
Instances draw colors from one shared palette, so color never
identifies a category, and an abutting same-category pair shares its
palette entry to keep the boundary locally ambiguous. Later instances
occlude earlier ones; visible masks are disjoint by construction.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import netpbm, nn
from .engine import TrainSample
from .errors import ConfigError, DataError, RefusalError
from .model import ArchDescriptor
from .nn import Array
from .postprocess import box_iou

CATEGORY_NAMES = ("snowman", "bar", "ring", "tee")

BG_COLOR = (28.0, 30.0, 34.0)
PALETTE = (
    (200.0, 85.0, 80.0),
    (80.0, 150.0, 210.0),
    (105.0, 190.0, 115.0),
    (225.0, 200.0, 90.0),
    (170.0, 110.0, 200.0),
    (210.0, 140.0, 75.0),
)


@dataclass(frozen=True)
class SceneConfig:
    scene_size: int = 128
    num_categories: int = 4
    min_instances: int = 2
    max_instances: int = 6
    abut_rate: float = 0.6
    noise_sigma: float = 6.0
    color_jitter: float = 10.0
    min_visible_fraction: float = 0.4
    max_place_tries: int = 50

    def __post_init__(self):
        if self.scene_size < 64:
            raise ConfigError(f"scene_size must be >= 64, got {self.scene_size}")
        if not 1 <= self.num_categories <= len(CATEGORY_NAMES):
            raise ConfigError(
                f"num_categories must be in [1, {len(CATEGORY_NAMES)}], got "
                f"{self.num_categories}"
            )
        if not 1 <= self.min_instances <= self.max_instances:
            raise ConfigError(
                f"bad instance range [{self.min_instances}, {self.max_instances}]"
            )
        if not 0.0 <= self.abut_rate <= 1.0:
            raise ConfigError(f"abut_rate must be in [0, 1], got {self.abut_rate}")
        if self.noise_sigma < 0 or self.color_jitter < 0:
            raise ConfigError("noise levels must be non-negative")
        if not 0.0 < self.min_visible_fraction < 1.0:
            raise ConfigError("min_visible_fraction must be in (0, 1)")


@dataclass
class SceneInstance:
    category: int
    visible: Array                      # (S, S) bool, after occlusion
    bbox: tuple[int, int, int, int]     # x0, y0, x1, y1 exclusive, on visible
    z: int                              # placement order; higher is on top


@dataclass
class Scene:
    size: int
    num_categories: int
    rng_seed: int
    image: Array                        # (S, S, 3) uint8
    labels: Array                       # (S, S) uint8, 0 bg, i+1 instance i
    instances: list[SceneInstance]
    abutting_pairs: list[tuple[int, int]]
    skipped_instances: int = 0


def _crop_tight(mask: Array) -> Array:
    ys, xs = np.nonzero(mask)
    return mask[ys.min():ys.max() + 1, xs.min():xs.max() + 1]


def _raster_snowman(rng: np.random.Generator) -> Array:
    r = rng.uniform(8.0, 12.5)
    rh = 0.6 * r
    gap = r + 0.55 * rh
    L = int(np.ceil(2.0 * (r + gap + rh))) + 4
    yy, xx = np.ogrid[:L, :L]
    cy, cx = L / 2.0 + gap / 2.0, L / 2.0
    body = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    head = (yy - (cy - gap)) ** 2 + (xx - cx) ** 2 <= rh * rh
    return _crop_tight(body | head)


def _raster_bar(rng: np.random.Generator) -> Array:
    length = rng.uniform(26.0, 46.0)
    thick = rng.uniform(7.0, 11.0)
    theta = rng.uniform(0.0, np.pi)
    L = int(np.ceil(length)) + 4
    yy, xx = np.ogrid[:L, :L]
    c = L / 2.0
    u = (xx - c) * np.cos(theta) + (yy - c) * np.sin(theta)
    v = -(xx - c) * np.sin(theta) + (yy - c) * np.cos(theta)
    return _crop_tight((np.abs(u) <= length / 2.0) & (np.abs(v) <= thick / 2.0))


def _raster_ring(rng: np.random.Generator) -> Array:
    outer = rng.uniform(9.5, 14.0)
    inner = 0.55 * outer
    L = int(np.ceil(2.0 * outer)) + 4
    yy, xx = np.ogrid[:L, :L]
    c = L / 2.0
    d2 = (yy - c) ** 2 + (xx - c) ** 2
    return _crop_tight((d2 <= outer * outer) & (d2 > inner * inner))


def _raster_tee(rng: np.random.Generator) -> Array:
    width = int(rng.integers(20, 35))
    bar_t = int(rng.integers(7, 11))
    stem_t = int(rng.integers(7, 11))
    stem_l = int(rng.integers(12, 23))
    mask = np.zeros((bar_t + stem_l, width), dtype=bool)
    mask[:bar_t, :] = True
    x0 = (width - stem_t) // 2
    mask[bar_t:, x0:x0 + stem_t] = True
    k = int(rng.integers(4))
    return np.ascontiguousarray(np.rot90(mask, k))


_RASTERIZERS = (_raster_snowman, _raster_bar, _raster_ring, _raster_tee)


def _dilate8(mask: Array) -> Array:
    out = mask.copy()
    h, w = mask.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            ys = slice(max(dy, 0), h + min(dy, 0))
            yd = slice(max(-dy, 0), h + min(-dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            xd = slice(max(-dx, 0), w + min(-dx, 0))
            out[yd, xd] |= mask[ys, xs]
    return out


def _place_abutting(rng: np.random.Generator, base: Array, local: Array,
                    size: int) -> tuple[int, int] | None:
    """Slide `local` toward `base` along a random ray until they touch.

    Accepts the first position that overlaps by at most a quarter of the
    shape, or the last non-overlapping position if it is 8-adjacent.
    Returns (top, left) or None if this ray does not work.
    """
    h, w = local.shape
    area = int(local.sum())
    ys, xs = np.nonzero(base)
    cy, cx = float(ys.mean()), float(xs.mean())
    ang = rng.uniform(0.0, 2.0 * np.pi)
    dy, dx = np.sin(ang), np.cos(ang)
    by0, by1 = ys.min(), ys.max()
    bx0, bx1 = xs.min(), xs.max()
    start = int(np.ceil(np.hypot(by1 - by0 + 1, bx1 - bx0 + 1) / 2.0
                        + np.hypot(h, w) / 2.0)) + 2
    prev: tuple[int, int] | None = None
    for t in range(start, -1, -1):
        top = int(round(cy + dy * t - h / 2.0))
        left = int(round(cx + dx * t - w / 2.0))
        if top < 2 or left < 2 or top + h > size - 2 or left + w > size - 2:
            continue
        overlap = int(base[top:top + h, left:left + w][local].sum())
        if overlap == 0:
            prev = (top, left)
            continue
        if overlap <= 0.25 * area:
            return top, left
        if prev is not None:
            pt, pl = prev
            full = np.zeros_like(base)
            full[pt:pt + h, pl:pl + w] = local
            if (_dilate8(base) & full).any():
                return prev
        return None
    return None


def _visible_stack(full_masks: list[Array]) -> list[Array]:
    above = np.zeros_like(full_masks[0])
    out: list[Array] = [None] * len(full_masks)  # type: ignore[list-item]
    for i in range(len(full_masks) - 1, -1, -1):
        out[i] = full_masks[i] & ~above
        above |= full_masks[i]
    return out


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Deterministic scene from one seed: compose, occlude, render.

    When the abut coin comes up, the scene is guaranteed to contain at
    least one abutting same-category pair; compositions where the pair
    failed to place or was occluded away are redrawn from follow-up
    streams of the same seed.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(config.min_instances, config.max_instances + 1))
    want_abut = n >= 2 and rng.random() < config.abut_rate
    for attempt in range(200):
        if attempt:
            rng = np.random.default_rng([seed, attempt])
        scene = _compose_scene(config, rng, seed, n, want_abut)
        if not want_abut or scene.abutting_pairs:
            return scene
    raise DataError(
        f"could not compose an abutting pair for seed {seed}; the scene "
        "configuration leaves too little room"
    )


def _compose_scene(config: SceneConfig, rng: np.random.Generator, seed: int,
                   n: int, want_abut: bool) -> Scene:
    S = config.scene_size
    C = config.num_categories

    n_slots = n - 1 if want_abut else n
    offset = int(rng.integers(C))
    deck = np.array([(offset + i) % C for i in range(n_slots)], dtype=np.int64)
    rng.shuffle(deck)
    cats = ([int(deck[0]), int(deck[0])] + [int(c) for c in deck[1:]]
            if want_abut else [int(c) for c in deck])

    full_masks: list[Array] = []
    placed_cats: list[int] = []
    pal_indices: list[int] = []
    skipped = 0
    for k, cat in enumerate(cats):
        placed = False
        for _try in range(config.max_place_tries):
            local = _RASTERIZERS[cat](rng)
            h, w = local.shape
            if h > S - 4 or w > S - 4:
                continue
            if want_abut and k == 1 and full_masks:
                pos = _place_abutting(rng, full_masks[0], local, S)
                if pos is None:
                    continue
                top, left = pos
            else:
                top = int(rng.integers(2, S - h - 1))
                left = int(rng.integers(2, S - w - 1))
            full = np.zeros((S, S), dtype=bool)
            full[top:top + h, left:left + w] = local
            trial = full_masks + [full]
            vis = _visible_stack(trial)
            ok = all(
                vis[i].sum() >= config.min_visible_fraction * trial[i].sum()
                for i in range(len(trial))
            )
            if ok:
                full_masks.append(full)
                placed_cats.append(cat)
                if want_abut and k == 1:
                    pal_indices.append(pal_indices[0])
                else:
                    pal_indices.append(int(rng.integers(len(PALETTE))))
                placed = True
                break
        if not placed:
            skipped += 1

    visibles = _visible_stack(full_masks) if full_masks else []
    keep = [i for i, v in enumerate(visibles) if v.sum() >= 8]
    full_masks = [full_masks[i] for i in keep]
    placed_cats = [placed_cats[i] for i in keep]
    pal_indices = [pal_indices[i] for i in keep]
    visibles = _visible_stack(full_masks) if full_masks else []

    labels = np.zeros((S, S), dtype=np.uint8)
    instances: list[SceneInstance] = []
    for i, vis in enumerate(visibles):
        labels[full_masks[i]] = i + 1
        ys, xs = np.nonzero(vis)
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        instances.append(SceneInstance(category=placed_cats[i], visible=vis,
                                       bbox=bbox, z=i))

    img = np.empty((S, S, 3), dtype=np.float64)
    img[:] = BG_COLOR
    img += rng.normal(0.0, config.noise_sigma, size=(S, S, 3))
    for i, inst in enumerate(instances):
        color = np.array(PALETTE[pal_indices[i]]) \
            + rng.normal(0.0, config.color_jitter, size=3)
        count = int(inst.visible.sum())
        img[inst.visible] = color + rng.normal(0.0, config.noise_sigma,
                                               size=(count, 3))
    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    pairs: list[tuple[int, int]] = []
    for i in range(len(instances)):
        for j in range(i + 1, len(instances)):
            if instances[i].category != instances[j].category:
                continue
            if (_dilate8(instances[i].visible) & instances[j].visible).any():
                pairs.append((i, j))

    return Scene(size=S, num_categories=C, rng_seed=seed, image=image,
                 labels=labels, instances=instances, abutting_pairs=pairs,
                 skipped_instances=skipped)


@dataclass
class SimDetection:
    instance_index: int
    category: int
    bbox: tuple[int, int, int, int]
    score: float


def simulate_detections(scene: Scene, rng: np.random.Generator,
                        jitter_count: int = 1, min_box_iou: float = 0.7
                        ) -> list[SimDetection]:
    """Ground-truth box plus jittered copies per instance.

    Jittered boxes are redrawn until their IoU with the ground-truth box
    strictly exceeds min_box_iou; scores decrease with jitter magnitude
    plus small noise.
    """
    dets: list[SimDetection] = []
    S = scene.size
    for idx, inst in enumerate(scene.instances):
        x0, y0, x1, y1 = inst.bbox
        w, h = x1 - x0, y1 - y0
        score = float(np.clip(0.95 + rng.normal(0.0, 0.01), 0.05, 0.999))
        dets.append(SimDetection(idx, inst.category, inst.bbox, score))
        for _j in range(jitter_count):
            box = None
            mag = 0.0
            for _try in range(50):
                fx = rng.normal(0.0, 0.06)
                fy = rng.normal(0.0, 0.06)
                sw = 1.0 + rng.normal(0.0, 0.06)
                sh = 1.0 + rng.normal(0.0, 0.06)
                cx = (x0 + x1) / 2.0 + fx * w
                cy = (y0 + y1) / 2.0 + fy * h
                nx0 = max(int(round(cx - sw * w / 2.0)), 0)
                ny0 = max(int(round(cy - sh * h / 2.0)), 0)
                nx1 = min(int(round(cx + sw * w / 2.0)), S)
                ny1 = min(int(round(cy + sh * h / 2.0)), S)
                if nx1 - nx0 < 2 or ny1 - ny0 < 2:
                    continue
                cand = (nx0, ny0, nx1, ny1)
                if box_iou(inst.bbox, cand) > min_box_iou:
                    box = cand
                    mag = abs(fx) + abs(fy) + abs(sw - 1.0) + abs(sh - 1.0)
                    break
            if box is None:
                box = (min(x0 + 1, S - 2), y0, min(x1 + 1, S - 1), y1)
                mag = 0.05
            score = float(np.clip(0.95 - 0.8 * mag + rng.normal(0.0, 0.01),
                                  0.05, 0.999))
            dets.append(SimDetection(idx, inst.category, box, score))
    return dets


@dataclass
class PatchSample:
    """One detection box cut from a scene, resized to the net's grids."""

    sample_id: str
    scene_id: int
    detection_id: str
    instance_index: int
    category: int
    bbox: tuple[int, int, int, int]
    split: str
    patch: Array        # (P, P, 3) uint8
    gt_mask: Array      # (H, H) bool
    area_weight: float
    abutting: bool = False


PATCH_MARGIN = 0.25


def expand_box(bbox: tuple[int, int, int, int], scene_size: int
               ) -> tuple[int, int, int, int]:
    """Grow a box by PATCH_MARGIN of its size per side, clamped to the scene."""
    x0, y0, x1, y1 = bbox
    mx = int(round(PATCH_MARGIN * (x1 - x0)))
    my = int(round(PATCH_MARGIN * (y1 - y0)))
    return (max(0, x0 - mx), max(0, y0 - my),
            min(scene_size, x1 + mx), min(scene_size, y1 + my))


def extract_patch(scene: Scene, instance_index: int,
                  bbox: tuple[int, int, int, int], arch: ArchDescriptor,
                  mean_box_area: float | None = None) -> PatchSample:
    """Crop bbox, resizing the image to P×P and the visible mask to H×H.

    Resizing is independent per axis; the mask is thresholded at 0.5
    after the resize. area_weight is the box area divided by
    mean_box_area when given, else the raw area. Callers wanting
    adjacent instances in view expand the box first (expand_box); the
    stored bbox is exactly the crop box.
    """
    x0, y0, x1, y1 = (int(v) for v in bbox)
    if not (0 <= x0 < x1 <= scene.size and 0 <= y0 < y1 <= scene.size):
        raise DataError(f"bbox {bbox} outside scene of size {scene.size}")
    if not 0 <= instance_index < len(scene.instances):
        raise DataError(f"instance index {instance_index} out of range")
    inst = scene.instances[instance_index]
    P, H = arch.patch_size, arch.heatmap_size
    crop = scene.image[y0:y1, x0:x1].astype(np.float64)
    resized = nn.bilinear_resize(crop.transpose(2, 0, 1)[None], P, P)[0]
    patch = np.clip(np.rint(resized.transpose(1, 2, 0)), 0, 255).astype(np.uint8)
    mask_crop = inst.visible[y0:y1, x0:x1].astype(np.float64)
    mask_r = nn.bilinear_resize(mask_crop[None, None], H, H)[0, 0]
    gt_mask = mask_r > 0.5
    area = float((x1 - x0) * (y1 - y0))
    weight = area / mean_box_area if mean_box_area else area
    return PatchSample(
        sample_id="", scene_id=-1, detection_id="",
        instance_index=instance_index, category=inst.category,
        bbox=(x0, y0, x1, y1), split="", patch=patch, gt_mask=gt_mask,
        area_weight=weight,
    )


@dataclass(frozen=True)
class DatasetSpec:
    scene: SceneConfig = field(default_factory=SceneConfig)
    num_scenes: int = 500
    val_fraction: float = 0.2
    jitter_count: int = 1
    patch_size: int = 64
    heatmap_size: int = 32

    def __post_init__(self):
        if self.num_scenes < 1:
            raise ConfigError(f"num_scenes must be >= 1, got {self.num_scenes}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got "
                              f"{self.val_fraction}")
        if self.jitter_count < 0:
            raise ConfigError(f"jitter_count must be >= 0, got {self.jitter_count}")


def split_for_scene(scene_id: int, val_fraction: float) -> str:
    bucket = zlib.crc32(str(scene_id).encode("ascii")) % 1000
    return "val" if bucket < int(round(val_fraction * 1000)) else "train"


def _patch_arch(spec: DatasetSpec) -> ArchDescriptor:
    return ArchDescriptor(patch_size=spec.patch_size,
                          heatmap_size=spec.heatmap_size,
                          num_categories=spec.scene.num_categories)


def _scene_dir(root: Path) -> Path:
    return root / "scenes"


def _patch_dir(root: Path) -> Path:
    return root / "patches"


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def build_dataset(spec: DatasetSpec, seed: int, out_dir) -> dict:
    """Generate scenes, detections and patches under out_dir.

    Fully deterministic in (spec, seed): running twice produces byte
    identical directories. Returns the manifest dict.
    """
    root = Path(out_dir)
    _scene_dir(root).mkdir(parents=True, exist_ok=True)
    _patch_dir(root).mkdir(parents=True, exist_ok=True)
    arch = _patch_arch(spec)

    scene_entries = []
    patches: list[PatchSample] = []
    skipped_total = 0
    for sid in range(spec.num_scenes):
        sseed = seed ^ sid
        scene = generate_scene(spec.scene, sseed)
        skipped_total += scene.skipped_instances
        det_rng = np.random.default_rng([sseed, 1])
        dets = simulate_detections(scene, det_rng, spec.jitter_count)
        split = split_for_scene(sid, spec.val_fraction)
        netpbm.write_ppm(_scene_dir(root) / f"{sid:05d}.ppm", scene.image)
        netpbm.write_pgm(_scene_dir(root) / f"{sid:05d}.labels.pgm", scene.labels)
        abutting_members = {i for pair in scene.abutting_pairs for i in pair}
        det_entries = []
        for di, det in enumerate(dets):
            det_id = f"s{sid:05d}_d{di:02d}"
            crop_box = expand_box(det.bbox, scene.size)
            ps = extract_patch(scene, det.instance_index, crop_box, arch)
            ps.sample_id = det_id
            ps.scene_id = sid
            ps.detection_id = det_id
            ps.split = split
            ps.abutting = det.instance_index in abutting_members
            patches.append(ps)
            det_entries.append({
                "id": det_id,
                "instance": det.instance_index,
                "category": det.category,
                "bbox": list(det.bbox),
                "score": det.score,
            })
        scene_entries.append({
            "id": sid,
            "split": split,
            "rng_seed": sseed,
            "abutting_pairs": [list(p) for p in scene.abutting_pairs],
            "instances": [
                {"category": inst.category, "bbox": list(inst.bbox), "z": inst.z}
                for inst in scene.instances
            ],
            "detections": det_entries,
        })

    train_areas = [p.area_weight for p in patches if p.split == "train"]
    if not train_areas:
        raise ConfigError("dataset has no training patches; adjust val_fraction")
    mean_area = float(np.mean(train_areas))
    patch_entries = []
    for p in patches:
        p.area_weight = p.area_weight / mean_area
        netpbm.write_ppm(_patch_dir(root) / f"{p.sample_id}.ppm", p.patch)
        netpbm.write_pgm(_patch_dir(root) / f"{p.sample_id}.mask.pgm",
                         p.gt_mask.astype(np.uint8) * 255)
        patch_entries.append({
            "sample_id": p.sample_id,
            "scene": p.scene_id,
            "detection": p.detection_id,
            "instance": p.instance_index,
            "category": p.category,
            "bbox": list(p.bbox),
            "split": p.split,
            "area_weight": p.area_weight,
            "abutting": p.abutting,
        })

    index = {
        "scene_size": spec.scene.scene_size,
        "num_categories": spec.scene.num_categories,
        "patch_size": spec.patch_size,
        "heatmap_size": spec.heatmap_size,
        "scenes": scene_entries,
        "patches": patch_entries,
    }
    index_text = _canonical_json(index)
    (root / "index.json").write_text(index_text)
    dataset_id = hashlib.sha256(index_text.encode()).hexdigest()

    train_patches = [p for p in patches if p.split == "train"]
    cat_counts = [0] * spec.scene.num_categories
    for p in train_patches:
        cat_counts[p.category] += 1
    manifest = {
        "dataset_id": dataset_id,
        "seed": seed,
        "num_scenes": spec.num_scenes,
        "train_patches": len(train_patches),
        "val_patches": len(patches) - len(train_patches),
        "train_category_counts": cat_counts,
        "train_abutting_patches": sum(1 for p in train_patches if p.abutting),
        "skipped_instances": skipped_total,
        "spec": {
            "scene_size": spec.scene.scene_size,
            "num_categories": spec.scene.num_categories,
            "min_instances": spec.scene.min_instances,
            "max_instances": spec.scene.max_instances,
            "abut_rate": spec.scene.abut_rate,
            "noise_sigma": spec.scene.noise_sigma,
            "color_jitter": spec.scene.color_jitter,
            "min_visible_fraction": spec.scene.min_visible_fraction,
            "max_place_tries": spec.scene.max_place_tries,
            "num_scenes": spec.num_scenes,
            "val_fraction": spec.val_fraction,
            "jitter_count": spec.jitter_count,
            "patch_size": spec.patch_size,
            "heatmap_size": spec.heatmap_size,
        },
    }
    (root / "manifest.json").write_text(_canonical_json(manifest))
    return manifest


class LoadedDataset:
    """Read-only view over a dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        index_path = self.root / "index.json"
        manifest_path = self.root / "manifest.json"
        if not index_path.is_file() or not manifest_path.is_file():
            raise RefusalError(f"{self.root} is not a dataset directory")
        index_text = index_path.read_text()
        self.index = json.loads(index_text)
        self.manifest = json.loads(manifest_path.read_text())
        actual = hashlib.sha256(index_text.encode()).hexdigest()
        if actual != self.manifest.get("dataset_id"):
            raise DataError(f"{self.root}: index.json does not match manifest "
                            "dataset_id")
        self.dataset_id: str = self.manifest["dataset_id"]
        self.scene_size: int = self.index["scene_size"]
        self.num_categories: int = self.index["num_categories"]
        self.patch_size: int = self.index["patch_size"]
        self.heatmap_size: int = self.index["heatmap_size"]
        self.scenes: list[dict] = self.index["scenes"]
        self.patches: list[dict] = self.index["patches"]
        self._scenes_by_id = {s["id"]: s for s in self.scenes}

    def scene_meta(self, scene_id: int) -> dict:
        if scene_id not in self._scenes_by_id:
            raise DataError(f"scene {scene_id} not in dataset")
        return self._scenes_by_id[scene_id]

    def load_scene_image(self, scene_id: int) -> Array:
        self.scene_meta(scene_id)
        return netpbm.read_ppm(_scene_dir(self.root) / f"{scene_id:05d}.ppm")

    def load_scene_labels(self, scene_id: int) -> Array:
        self.scene_meta(scene_id)
        return netpbm.read_pgm(_scene_dir(self.root) / f"{scene_id:05d}.labels.pgm")

    def gt_masks(self, scene_id: int) -> list[tuple[int, Array]]:
        """Per-instance (category, visible mask) for one scene."""
        meta = self.scene_meta(scene_id)
        labels = self.load_scene_labels(scene_id)
        out = []
        for i, inst in enumerate(meta["instances"]):
            out.append((int(inst["category"]), labels == i + 1))
        return out

    def load_patch(self, meta: dict) -> PatchSample:
        sid = meta["sample_id"]
        patch = netpbm.read_ppm(_patch_dir(self.root) / f"{sid}.ppm")
        mask_img = netpbm.read_pgm(_patch_dir(self.root) / f"{sid}.mask.pgm")
        bad = ~np.isin(mask_img, (0, 255))
        if bad.any():
            raise DataError(f"{sid}: mask PGM must contain only 0 and 255")
        return PatchSample(
            sample_id=sid,
            scene_id=int(meta["scene"]),
            detection_id=meta["detection"],
            instance_index=int(meta["instance"]),
            category=int(meta["category"]),
            bbox=tuple(int(v) for v in meta["bbox"]),
            split=meta["split"],
            patch=patch,
            gt_mask=mask_img == 255,
            area_weight=float(meta["area_weight"]),
            abutting=bool(meta["abutting"]),
        )

    def patches_for_split(self, split: str) -> list[dict]:
        if split == "all":
            return list(self.patches)
        return [p for p in self.patches if p["split"] == split]

    def train_samples(self) -> list[TrainSample]:
        out = []
        for meta in self.patches_for_split("train"):
            ps = self.load_patch(meta)
            out.append(TrainSample(
                sample_id=ps.sample_id, patch=ps.patch, gt_mask=ps.gt_mask,
                category=ps.category, area_weight=ps.area_weight,
            ))
        return out


def load_dataset(root) -> LoadedDataset:
    return LoadedDataset(root)
