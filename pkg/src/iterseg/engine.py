"""Staged training over a growing pool of cached self-predictions.

Stage t trains on pairs (patch, cached heatmap from stage i) for every
i < t, where stage 0 is the flat 0.5 prior. After each stage the net
refines the previous stage's cached heatmaps to produce the next
stage's cache entries. Test-time inference repeats the refinement for a
fixed number of iterations starting from the flat prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import model as model_mod
from . import nn
from .errors import ConfigError, TrainingDiverged, UsageError
from .model import ArchDescriptor, SegNet
from .nn import Array

FLAT_PRIOR = 0.5


@dataclass(frozen=True)
class StageSchedule:
    num_stages: int = 3
    stage_steps: tuple[int, ...] = (3000, 3000, 2000)
    batch_size: int = 16
    learning_rate: float = 1e-3
    momentum: float = 0.9

    def __post_init__(self):
        if self.num_stages < 1:
            raise ConfigError(f"num_stages must be >= 1, got {self.num_stages}")
        if len(self.stage_steps) != self.num_stages:
            raise ConfigError(
                f"stage_steps has {len(self.stage_steps)} entries for "
                f"{self.num_stages} stages"
            )
        if any(s < 1 for s in self.stage_steps):
            raise ConfigError("every stage needs at least one step")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainSample:
    """One training patch as the engine consumes it."""

    sample_id: str
    patch: Array          # (P, P, 3) uint8
    gt_mask: Array        # (H, H) bool
    category: int
    area_weight: float


class PredictionStore:
    """Write-once cache of per-stage heatmaps keyed (sample_id, stage).

    Stage 0 is seeded with the flat 0.5 prior for every sample; stage t
    entries are written exactly once, after stage t finishes training.
    """

    def __init__(self, heatmap_size: int):
        self.heatmap_size = heatmap_size
        self._maps: dict[tuple[str, int], Array] = {}

    def __len__(self) -> int:
        return len(self._maps)

    def seed_initial(self, sample_ids: list[str]):
        flat = np.full((self.heatmap_size, self.heatmap_size), FLAT_PRIOR)
        for sid in sample_ids:
            key = (sid, 0)
            if key in self._maps:
                raise UsageError(f"store entry {key} already written")
            self._maps[key] = flat.copy()

    def put(self, sample_id: str, stage: int, heatmap: Array):
        key = (sample_id, stage)
        if key in self._maps:
            raise UsageError(f"store entry {key} already written")
        heatmap = np.asarray(heatmap, dtype=np.float64)
        if heatmap.shape != (self.heatmap_size, self.heatmap_size):
            raise ConfigError(
                f"heatmap shape {heatmap.shape} does not match store size "
                f"{self.heatmap_size}"
            )
        if heatmap.min() < 0.0 or heatmap.max() > 1.0:
            raise ConfigError("heatmap values must lie in [0, 1]")
        self._maps[key] = heatmap

    def get(self, sample_id: str, stage: int) -> Array:
        key = (sample_id, stage)
        if key not in self._maps:
            raise UsageError(f"store entry {key} was never written")
        return self._maps[key]

    def has(self, sample_id: str, stage: int) -> bool:
        return (sample_id, stage) in self._maps


def build_stage_training_set(samples: list[TrainSample], stage: int
                             ) -> list[tuple[int, int]]:
    """Pairs (sample index, prior stage) available when training stage t.

    Every sample appears once per prior stage i < t, so the pool holds
    exactly len(samples) * stage pairs.
    """
    if stage < 1:
        raise ConfigError(f"stage must be >= 1, got {stage}")
    return [(idx, i) for i in range(stage) for idx in range(len(samples))]


@dataclass
class StepRecord:
    step: int      # global step index, 1-based
    stage: int     # 1-based stage
    loss: float    # mean per-pixel weighted BCE over the batch


@dataclass
class TrainResult:
    net: SegNet
    store: PredictionStore
    loss_trace: list[StepRecord]
    stage_nets: list[SegNet] = field(default_factory=list)  # snapshot per stage


def _encode_pairs(samples: list[TrainSample], store: PredictionStore,
                  pairs: list[tuple[int, int]], arch: ArchDescriptor
                  ) -> tuple[Array, Array, Array]:
    patches = np.stack([samples[i].patch for i, _ in pairs])
    heats = np.stack([store.get(samples[i].sample_id, p) for i, p in pairs])
    cats = np.array([samples[i].category for i, _ in pairs], dtype=np.int64)
    enc = model_mod.encode_batch(patches, heats, cats, arch)
    targets = np.stack(
        [samples[i].gt_mask for i, _ in pairs]).astype(np.float64)[:, None]
    weights = np.array([samples[i].area_weight for i, _ in pairs])
    return enc, targets, weights


def _refresh_cache(net: SegNet, samples: list[TrainSample],
                   store: PredictionStore, stage: int, batch_size: int):
    """Write stage-t cache entries by refining the stage t-1 heatmaps."""
    arch = net.arch
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        pairs = [(start + j, stage - 1) for j in range(len(chunk))]
        enc, _, _ = _encode_pairs(samples, store, pairs, arch)
        preds = model_mod.predict_batch(net, enc)
        for j, s in enumerate(chunk):
            store.put(s.sample_id, stage, preds[j])


def train_stages(samples: list[TrainSample], net: SegNet,
                 schedule: StageSchedule, seed: int,
                 on_step: Callable[[StepRecord], None] | None = None
                 ) -> TrainResult:
    """Run the staged curriculum; mutates and returns the given net.

    Batches draw a category uniformly among those present, then a pool
    pair uniformly within that category. The recorded loss is the batch
    loss divided by batch_size * heatmap pixels; the SGD step uses the
    gradient scaled the same way. Non-finite loss aborts.
    """
    if not samples:
        raise ConfigError("training requires at least one sample")
    arch = net.arch
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate sample_id in training set")
    for s in samples:
        if s.patch.shape != (arch.patch_size, arch.patch_size, 3):
            raise ConfigError(f"sample {s.sample_id} patch shape {s.patch.shape}")
        if s.gt_mask.shape != (arch.heatmap_size, arch.heatmap_size):
            raise ConfigError(f"sample {s.sample_id} mask shape {s.gt_mask.shape}")

    rng = np.random.default_rng(seed)
    store = PredictionStore(arch.heatmap_size)
    store.seed_initial(ids)
    opt = nn.OptimizerState(schedule.learning_rate, schedule.momentum)
    params = net.param_list()
    result = TrainResult(net=net, store=store, loss_trace=[])
    norm = 1.0 / (schedule.batch_size * arch.heatmap_size ** 2)
    global_step = 0

    for stage in range(1, schedule.num_stages + 1):
        pool = build_stage_training_set(samples, stage)
        by_cat: dict[int, list[tuple[int, int]]] = {}
        for pair in pool:
            by_cat.setdefault(samples[pair[0]].category, []).append(pair)
        cats_present = sorted(by_cat)
        for _ in range(schedule.stage_steps[stage - 1]):
            batch_pairs = []
            for _b in range(schedule.batch_size):
                cat = cats_present[int(rng.integers(len(cats_present)))]
                bucket = by_cat[cat]
                batch_pairs.append(bucket[int(rng.integers(len(bucket)))])
            enc, targets, weights = _encode_pairs(samples, store, batch_pairs, arch)
            tape, out = model_mod.forward_training(net, enc)
            loss, dpred = nn.weighted_bce(out.value, targets, weights)
            loss_n = loss * norm
            global_step += 1
            if not np.isfinite(loss_n):
                raise TrainingDiverged(stage, global_step, loss_n)
            tape.backward(out, dpred * norm)
            grads = [tape.param_grads(p) for p in params]
            nn.sgd_step(params, grads, opt)
            rec = StepRecord(step=global_step, stage=stage, loss=loss_n)
            result.loss_trace.append(rec)
            if on_step is not None:
                on_step(rec)
        _refresh_cache(net, samples, store, stage, schedule.batch_size)
        result.stage_nets.append(net.copy())
    return result


def infer(net: SegNet, patch: Array, category: int, iterations: int
          ) -> tuple[Array, list[Array]]:
    """Iterative refinement from the flat prior; returns (final, trajectory).

    The trajectory starts with the flat prior and holds one heatmap per
    iteration after it (length iterations + 1), so trajectory[-1] is the
    returned final heatmap. Zero iterations return the prior itself.
    """
    final, trajs = infer_batch(net, np.asarray(patch)[None],
                               np.array([category]), iterations)
    return final[0], [t[0] for t in trajs]


def infer_batch(net: SegNet, patches: Array, categories: Array,
                iterations: int) -> tuple[Array, list[Array]]:
    """Vector form of infer over (B, P, P, 3) patches."""
    if iterations < 0:
        raise ConfigError(f"iterations must be >= 0, got {iterations}")
    arch = net.arch
    B = patches.shape[0]
    heat = np.full((B, arch.heatmap_size, arch.heatmap_size), FLAT_PRIOR)
    trajectory: list[Array] = [heat]
    for _ in range(iterations):
        enc = model_mod.encode_batch(patches, heat, categories, arch)
        heat = model_mod.predict_batch(net, enc)
        trajectory.append(heat)
    return heat, trajectory


def convergence_trace(trajectory: list[Array]) -> list[float]:
    """Mean absolute change between consecutive trajectory heatmaps.

    A trajectory of length 1 (zero refinement iterations) has an empty
    trace.
    """
    if not trajectory:
        raise ConfigError("empty trajectory")
    trace = []
    for prev, heat in zip(trajectory, trajectory[1:]):
        prev = np.asarray(prev, dtype=np.float64)
        heat = np.asarray(heat, dtype=np.float64)
        trace.append(float(np.abs(heat - prev).mean()))
    return trace
