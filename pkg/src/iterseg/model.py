"""Category-conditioned hypercolumn net over image patches.

The net sees a fixed-size RGB patch plus one prior-heatmap channel per
category; only the channel of the patch's category is populated, the
rest stay zero. Three strided conv blocks feed a hypercolumn (each
block's activations upsampled to the heatmap grid and concatenated),
followed by two 1x1 convs and a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DataError
from .nn import Array, EagerOps, LayerParams, Tape

# Image and prior channels are encoded around zero at +-127 scale; the
# net consumes them scaled down to roughly unit range so the sigmoid
# head starts in its linear regime.
INPUT_SCALE = 1.0 / 127.0

HEATMAP_CLIP_LO = 1e-300
HEATMAP_CLIP_HI = float(np.nextafter(1.0, 0.0))


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ArchDescriptor:
    """Shape of the net; patch and heatmap sizes are powers of two."""

    patch_size: int = 64
    heatmap_size: int = 32
    num_categories: int = 4
    block_channels: tuple[int, ...] = (16, 32, 64)
    block_strides: tuple[int, ...] = (2, 2, 2)
    head_width: int = 64

    def __post_init__(self):
        if not _is_pow2(self.patch_size) or not _is_pow2(self.heatmap_size):
            raise ConfigError(
                f"patch_size and heatmap_size must be powers of two, got "
                f"{self.patch_size} and {self.heatmap_size}"
            )
        if self.patch_size < self.heatmap_size:
            raise ConfigError(
                f"patch_size {self.patch_size} smaller than heatmap_size "
                f"{self.heatmap_size}"
            )
        if self.num_categories < 1:
            raise ConfigError(f"num_categories must be >= 1, got {self.num_categories}")
        if len(self.block_channels) != len(self.block_strides) or not self.block_channels:
            raise ConfigError("block_channels and block_strides must match and be non-empty")
        if any(c < 1 for c in self.block_channels) or any(
                s < 1 for s in self.block_strides):
            raise ConfigError("block channels and strides must be positive")
        if self.head_width < 1:
            raise ConfigError(f"head_width must be >= 1, got {self.head_width}")

    @property
    def in_channels(self) -> int:
        return 3 + self.num_categories

    def to_dict(self) -> dict:
        return {
            "patch_size": self.patch_size,
            "heatmap_size": self.heatmap_size,
            "num_categories": self.num_categories,
            "block_channels": list(self.block_channels),
            "block_strides": list(self.block_strides),
            "head_width": self.head_width,
        }

    @staticmethod
    def from_dict(d: dict) -> "ArchDescriptor":
        try:
            return ArchDescriptor(
                patch_size=int(d["patch_size"]),
                heatmap_size=int(d["heatmap_size"]),
                num_categories=int(d["num_categories"]),
                block_channels=tuple(int(c) for c in d["block_channels"]),
                block_strides=tuple(int(s) for s in d["block_strides"]),
                head_width=int(d["head_width"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad architecture description: {exc}") from exc


@dataclass
class SegNet:
    arch: ArchDescriptor
    blocks: list[LayerParams]
    head1: LayerParams
    head2: LayerParams

    def param_list(self) -> list[LayerParams]:
        return [*self.blocks, self.head1, self.head2]

    def named_params(self) -> list[tuple[str, LayerParams]]:
        named = [(f"block{i}", p) for i, p in enumerate(self.blocks)]
        named.append(("head1", self.head1))
        named.append(("head2", self.head2))
        return named

    def num_params(self) -> int:
        return sum(p.num_params for p in self.param_list())

    def copy(self) -> "SegNet":
        return SegNet(
            arch=self.arch,
            blocks=[LayerParams(p.kernel.copy(), p.bias.copy()) for p in self.blocks],
            head1=LayerParams(self.head1.kernel.copy(), self.head1.bias.copy()),
            head2=LayerParams(self.head2.kernel.copy(), self.head2.bias.copy()),
        )


# First-layer gain on the prior-heatmap channels. During the first
# training stage every prior is the flat 0.5 map, an almost-zero input
# that leaves these weights untouched, so they must start large enough
# that later stages see the prior as a salient feature worth shaping.
PRIOR_INIT_GAIN = 4.0


def init_params(arch: ArchDescriptor, seed: int) -> SegNet:
    """Gaussian init with std 1/sqrt(fan_in) and zero biases.

    The first layer's prior-channel weights are drawn separately, with
    std PRIOR_INIT_GAIN times the empirical std of that layer's freshly
    drawn image weights.
    """
    rng = np.random.default_rng(seed)
    blocks: list[LayerParams] = []
    in_ch = arch.in_channels
    for i, out_ch in enumerate(arch.block_channels):
        fan_in = in_ch * 9
        std = 1.0 / np.sqrt(fan_in)
        if i == 0:
            img_part = rng.normal(0.0, std, size=(out_ch, 3, 3, 3))
            emp_std = PRIOR_INIT_GAIN * float(img_part.std())
            cat_part = rng.normal(0.0, emp_std,
                                  size=(out_ch, arch.num_categories, 3, 3))
            kernel = np.concatenate([img_part, cat_part], axis=1)
        else:
            kernel = rng.normal(0.0, std, size=(out_ch, in_ch, 3, 3))
        blocks.append(LayerParams(kernel, np.zeros(out_ch)))
        in_ch = out_ch
    hyper_ch = sum(arch.block_channels)
    head1 = LayerParams(
        rng.normal(0.0, 1.0 / np.sqrt(hyper_ch),
                   size=(arch.head_width, hyper_ch, 1, 1)),
        np.zeros(arch.head_width),
    )
    head2 = LayerParams(
        rng.normal(0.0, 1.0 / np.sqrt(arch.head_width),
                   size=(1, arch.head_width, 1, 1)),
        np.zeros(1),
    )
    return SegNet(arch=arch, blocks=blocks, head1=head1, head2=head2)


def encode_input(patch: Array, prev_heatmap: Array, category: int,
                 arch: ArchDescriptor) -> Array:
    """Encode one patch + prior into the net input, shape (1, 3+C, P, P).

    Image channels are centred to [-127, 128]. The prior heatmap is
    resized to the patch grid and mapped to 255*h - 127 in the channel
    of the given category; other category channels stay zero.
    """
    enc = encode_batch(
        np.asarray(patch)[None],
        np.asarray(prev_heatmap, dtype=np.float64)[None],
        np.array([category], dtype=np.int64),
        arch,
    )
    return enc


def encode_batch(patches: Array, prev_heatmaps: Array, categories: Array,
                 arch: ArchDescriptor) -> Array:
    """Vector form of encode_input; returns (B, 3+C, P, P).

    Bitwise identical to stacking encode_input over the batch.
    """
    P = arch.patch_size
    patches = np.asarray(patches)
    prev_heatmaps = np.asarray(prev_heatmaps, dtype=np.float64)
    categories = np.asarray(categories)
    B = patches.shape[0]
    if patches.shape != (B, P, P, 3):
        raise DataError(f"patches must be (B, {P}, {P}, 3), got {patches.shape}")
    if prev_heatmaps.shape != (B, arch.heatmap_size, arch.heatmap_size):
        raise DataError(
            f"prior heatmaps must be (B, {arch.heatmap_size}, "
            f"{arch.heatmap_size}), got {prev_heatmaps.shape}"
        )
    if categories.shape != (B,):
        raise DataError(f"categories must be ({B},), got {categories.shape}")
    if np.any((categories < 0) | (categories >= arch.num_categories)):
        raise DataError(
            f"category out of range [0, {arch.num_categories})"
        )
    img = patches.astype(np.float64)
    if img.min() < 0.0 or img.max() > 255.0:
        raise DataError("patch values must lie in [0, 255]")
    if prev_heatmaps.min() < 0.0 or prev_heatmaps.max() > 1.0:
        raise DataError("prior heatmap values must lie in [0, 1]")
    enc = np.zeros((B, arch.in_channels, P, P), dtype=np.float64)
    enc[:, :3] = img.transpose(0, 3, 1, 2) - 127.0
    heat_up = nn.bilinear_resize(prev_heatmaps[:, None], P, P)[:, 0]
    rows = np.arange(B)
    enc[rows, 3 + categories.astype(np.int64)] = 255.0 * heat_up - 127.0
    return enc


def forward(ops, net: SegNet, x):
    """Shared forward graph; ops is a Tape or EagerOps, x a handle from ops.input."""
    H = net.arch.heatmap_size
    h = ops.scale(x, INPUT_SCALE)
    feats = []
    for params, stride in zip(net.blocks, net.arch.block_strides):
        h = ops.relu(ops.conv2d(h, params, stride=stride, pad=1))
        feats.append(ops.bilinear_resize(h, H, H))
    h = ops.concat_channels(feats)
    h = ops.relu(ops.conv2d(h, net.head1, stride=1, pad=0))
    h = ops.conv2d(h, net.head2, stride=1, pad=0)
    return ops.sigmoid(h)


def predict_batch(net: SegNet, enc: Array) -> Array:
    """No-grad forward; returns (B, H, H) heatmaps strictly inside (0, 1)."""
    ops = EagerOps()
    y = forward(ops, net, ops.input(enc))
    return np.clip(y[:, 0], HEATMAP_CLIP_LO, HEATMAP_CLIP_HI)


def predict_heatmap(net: SegNet, enc: Array) -> Array:
    """Single-sample forward; enc is (1, 3+C, P, P), result (H, H)."""
    enc = np.asarray(enc, dtype=np.float64)
    expected = (1, net.arch.in_channels, net.arch.patch_size, net.arch.patch_size)
    if enc.shape != expected:
        raise ConfigError(f"encoded input must be {expected}, got {enc.shape}")
    return predict_batch(net, enc)[0]


def forward_training(net: SegNet, enc: Array) -> tuple[Tape, "nn.Node"]:
    """Tape-recorded forward over a batch; returns (tape, output node)."""
    tape = Tape()
    out = forward(tape, net, tape.input(enc))
    return tape, out


def gradcheck_arch(num_categories: int = 4) -> ArchDescriptor:
    """Reduced net that fits the finite-difference budget."""
    return ArchDescriptor(
        patch_size=16,
        heatmap_size=8,
        num_categories=num_categories,
        block_channels=(4, 8, 8),
        block_strides=(2, 2, 2),
        head_width=8,
    )


def _forward_preacts(net: SegNet, enc: Array) -> tuple[list[Array], Array]:
    """Forward pass that also returns every relu pre-activation."""
    ops = EagerOps()
    H = net.arch.heatmap_size
    h = ops.scale(ops.input(enc), INPUT_SCALE)
    zs: list[Array] = []
    feats = []
    for params, stride in zip(net.blocks, net.arch.block_strides):
        z = ops.conv2d(h, params, stride=stride, pad=1)
        zs.append(z)
        h = ops.relu(z)
        feats.append(ops.bilinear_resize(h, H, H))
    hc = ops.concat_channels(feats)
    z = ops.conv2d(hc, net.head1)
    zs.append(z)
    pred = ops.sigmoid(ops.conv2d(ops.relu(z), net.head2))
    return zs, pred


# Finite differences are only valid where the loss is smooth and the
# gradients rise above float noise. A check point is accepted when every
# relu pre-activation and every prediction (relative to the BCE clamp
# band) sits at least _SMOOTH_MARGIN from its kink, and every analytic
# gradient element is either exactly zero (a bitwise-dead path, where
# the difference quotient is exactly zero too) or above _GRAD_FLOOR, so
# the loss-rounding noise in the quotient cannot dominate.
_SMOOTH_MARGIN = 1e-3
_GRAD_FLOOR = 1e-5


def run_gradcheck(seed: int, corrupt: bool = False,
                  arch: ArchDescriptor | None = None) -> nn.GradcheckReport:
    """Finite-difference check of the full net + loss on random data.

    Draws a healthy-scale random input (image channels and one prior
    channel at encoding scale), a random binary target, and random
    positive sample weights; checks every parameter array. Draws where
    the central-difference oracle would be invalid (a kink within the
    step, or a gradient below float noise) are redrawn deterministically.
    """
    if arch is None:
        arch = gradcheck_arch()
    rng = np.random.default_rng(seed + 104729)
    B = 1
    accepted = False
    for _attempt in range(200):
        net = init_params(arch, int(rng.integers(2**32)))
        enc = np.zeros((B, arch.in_channels, arch.patch_size, arch.patch_size))
        enc[:, :3] = rng.uniform(-127.0, 128.0,
                                 size=(B, 3, arch.patch_size, arch.patch_size))
        cats = rng.integers(0, arch.num_categories, size=B)
        for b in range(B):
            enc[b, 3 + cats[b]] = rng.uniform(
                -127.0, 128.0, size=(arch.patch_size, arch.patch_size))
        target = (rng.random((B, 1, arch.heatmap_size, arch.heatmap_size)) < 0.5
                  ).astype(np.float64)
        weights = rng.uniform(0.5, 1.5, size=B)
        zs, pred = _forward_preacts(net, enc)
        min_z = min(float(np.abs(z).min()) for z in zs)
        min_p = float(np.minimum(pred, 1.0 - pred).min())
        if min_z <= _SMOOTH_MARGIN or min_p <= _SMOOTH_MARGIN:
            continue
        tape, out = forward_training(net, enc)
        _, dpred = nn.weighted_bce(out.value, target, weights)
        tape.backward(out, dpred)
        grads = {name: tape.param_grads(layer) for name, layer in net.named_params()}
        nonzero_min = min(
            (float(np.abs(g[np.nonzero(g)]).min())
             for pair in grads.values() for g in pair if np.any(g)),
            default=np.inf,
        )
        if nonzero_min > _GRAD_FLOOR:
            accepted = True
            break
    if not accepted:
        raise ConfigError("could not draw a valid gradcheck point in 200 tries")

    def loss_fn() -> float:
        ops = EagerOps()
        y = forward(ops, net, ops.input(enc))
        loss, _ = nn.weighted_bce(y, target, weights)
        return loss

    analytic: dict[str, Array] = {}
    params: list[tuple[str, Array]] = []
    for name, layer in net.named_params():
        dk, db = grads[name]
        if corrupt:
            dk = dk * 1.01
            db = db * 1.01
        analytic[f"{name}.kernel"] = dk
        analytic[f"{name}.bias"] = db
        params.append((f"{name}.kernel", layer.kernel))
        params.append((f"{name}.bias", layer.bias))
    return nn.gradcheck(loss_fn, params, analytic)
