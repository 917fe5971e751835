"""Reverse-mode autodiff over a fixed op set, in float64.

The op set is exactly what the segmentation net needs: conv2d, relu,
sigmoid, bilinear resize, channel concat, and scalar scale. A Tape
records the forward pass and replays it backwards; EagerOps exposes the
same surface without recording, for inference. Loss and optimizer are
free functions so the training loop stays explicit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, UsageError

Array = np.ndarray

GRADCHECK_PARAM_BUDGET = 10_000
BCE_CLAMP = 1e-7


@dataclass
class LayerParams:
    """Weights of one convolution layer: kernel (OC, IC, KH, KW), bias (OC,)."""

    kernel: Array
    bias: Array

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernel.ndim != 4:
            raise ConfigError(f"kernel must be 4-d, got shape {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ConfigError(
                f"bias shape {self.bias.shape} does not match "
                f"{self.kernel.shape[0]} output channels"
            )

    @property
    def num_params(self) -> int:
        return self.kernel.size + self.bias.size


@dataclass
class OptimizerState:
    """Heavy-ball SGD state; velocity buffers are created on first use."""

    learning_rate: float
    momentum: float
    velocity: list[Array] | None = None

    def __post_init__(self):
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")


def _contig(a: Array) -> Array:
    return a if a.flags.c_contiguous else np.ascontiguousarray(a)


def _check_conv_args(x_shape, params: LayerParams, stride: int, pad: int):
    if len(x_shape) != 4:
        raise ConfigError(f"conv2d input must be (B, C, H, W), got shape {x_shape}")
    if stride < 1 or pad < 0:
        raise ConfigError(f"conv2d stride={stride}, pad={pad} out of range")
    oc, ic, kh, kw = params.kernel.shape
    if x_shape[1] != ic:
        raise ConfigError(
            f"conv2d input has {x_shape[1]} channels but kernel expects {ic}"
        )
    oh = (x_shape[2] + 2 * pad - kh) // stride + 1
    ow = (x_shape[3] + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ConfigError(
            f"conv2d output would be empty: input {x_shape}, kernel {kh}x{kw}, "
            f"stride {stride}, pad {pad}"
        )
    return oh, ow


def _pad2d(x: Array, pad: int) -> Array:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x: Array, params: LayerParams, stride: int = 1, pad: int = 0) -> Array:
    """Cross-correlation with zero padding; output (B, OC, OH, OW)."""
    x = np.asarray(x, dtype=np.float64)
    _check_conv_args(x.shape, params, stride, pad)
    xp = _pad2d(x, pad)
    return kernels.conv2d_forward(_contig(xp), _contig(params.kernel),
                                  params.bias, stride)


def relu(x: Array) -> Array:
    return np.maximum(x, 0.0)


_ONE_BELOW_1 = float(np.nextafter(1.0, 0.0))


def sigmoid(x: Array) -> Array:
    """Numerically stable logistic; large positive inputs may round to 1.0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bilinear_resize(x: Array, out_h: int, out_w: int) -> Array:
    """Half-pixel-centred bilinear resample of an NCHW batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ConfigError(f"bilinear_resize input must be 4-d, got shape {x.shape}")
    if out_h < 1 or out_w < 1 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ConfigError(f"bilinear_resize: bad sizes {x.shape} -> ({out_h}, {out_w})")
    y0, y1, fy = kernels.bilinear_coords(x.shape[2], out_h)
    x0, x1, fx = kernels.bilinear_coords(x.shape[3], out_w)
    return kernels.bilinear_forward(_contig(x), y0, y1, fy, x0, x1, fx)


class Node:
    """Handle to one tape value."""

    __slots__ = ("value", "index")

    def __init__(self, value: Array, index: int):
        self.value = value
        self.index = index


class EagerOps:
    """Tape-compatible op surface that computes values without recording."""

    def input(self, value) -> Array:
        return np.asarray(value, dtype=np.float64)

    def conv2d(self, x, params, stride=1, pad=0):
        return conv2d(x, params, stride, pad)

    def relu(self, x):
        return relu(x)

    def sigmoid(self, x):
        return sigmoid(x)

    def bilinear_resize(self, x, out_h, out_w):
        return bilinear_resize(x, out_h, out_w)

    def concat_channels(self, xs):
        return np.concatenate(xs, axis=1)

    def scale(self, x, c):
        return x * float(c)

    @staticmethod
    def value(x) -> Array:
        return x


class Tape:
    """Records a forward pass; backward() replays it in reverse.

    Single-shot: after backward() the tape only serves gradient queries.
    Parameter gradients accumulate if the same LayerParams is used twice.
    """

    def __init__(self):
        self._values: list[Array] = []
        self._records: list[tuple[int, Callable[[Array], None]]] = []
        self._grads: list[Array | None] | None = None
        self._param_grads: dict[int, tuple[Array, Array]] = {}
        self._params_seen: dict[int, LayerParams] = {}

    def _new_node(self, value: Array) -> Node:
        if self._grads is not None:
            raise UsageError("tape already consumed by backward()")
        self._values.append(value)
        return Node(value, len(self._values) - 1)

    def _accum(self, index: int, grad: Array):
        grads = self._grads
        assert grads is not None
        if grads[index] is None:
            grads[index] = grad
        else:
            grads[index] = grads[index] + grad

    def _accum_param(self, params: LayerParams, dk: Array, db: Array):
        key = id(params)
        if key in self._param_grads:
            ok, ob = self._param_grads[key]
            self._param_grads[key] = (ok + dk, ob + db)
        else:
            self._param_grads[key] = (dk, db)
            self._params_seen[key] = params

    def input(self, value) -> Node:
        return self._new_node(np.asarray(value, dtype=np.float64))

    @staticmethod
    def value(x: Node) -> Array:
        return x.value

    def conv2d(self, x: Node, params: LayerParams, stride: int = 1,
               pad: int = 0) -> Node:
        _check_conv_args(x.value.shape, params, stride, pad)
        xp = _contig(_pad2d(x.value, pad))
        kern = _contig(params.kernel)
        out = kernels.conv2d_forward(xp, kern, params.bias, stride)
        node = self._new_node(out)
        _, _, kh, kw = params.kernel.shape
        in_h, in_w = x.value.shape[2], x.value.shape[3]

        def bwd(gout: Array):
            g = _contig(gout)
            dk, db = kernels.conv2d_backward_kernel(xp, g, kh, kw, stride)
            self._accum_param(params, dk, db)
            dxp = kernels.conv2d_backward_input(g, kern, stride,
                                                in_h + 2 * pad, in_w + 2 * pad)
            if pad:
                dxp = dxp[:, :, pad:pad + in_h, pad:pad + in_w]
            self._accum(x.index, dxp)

        self._records.append((node.index, bwd))
        return node

    def relu(self, x: Node) -> Node:
        mask = x.value > 0
        node = self._new_node(np.where(mask, x.value, 0.0))

        def bwd(gout: Array):
            self._accum(x.index, np.where(mask, gout, 0.0))

        self._records.append((node.index, bwd))
        return node

    def sigmoid(self, x: Node) -> Node:
        y = sigmoid(x.value)
        node = self._new_node(y)

        def bwd(gout: Array):
            self._accum(x.index, gout * (y * (1.0 - y)))

        self._records.append((node.index, bwd))
        return node

    def bilinear_resize(self, x: Node, out_h: int, out_w: int) -> Node:
        if x.value.ndim != 4:
            raise ConfigError(
                f"bilinear_resize input must be 4-d, got shape {x.value.shape}"
            )
        in_h, in_w = x.value.shape[2], x.value.shape[3]
        if out_h < 1 or out_w < 1 or in_h < 1 or in_w < 1:
            raise ConfigError(
                f"bilinear_resize: bad sizes {x.value.shape} -> ({out_h}, {out_w})"
            )
        y0, y1, fy = kernels.bilinear_coords(in_h, out_h)
        x0, x1, fx = kernels.bilinear_coords(in_w, out_w)
        out = kernels.bilinear_forward(_contig(x.value), y0, y1, fy, x0, x1, fx)
        node = self._new_node(out)

        def bwd(gout: Array):
            dx = kernels.bilinear_transpose(_contig(gout), y0, y1, fy,
                                            x0, x1, fx, in_h, in_w)
            self._accum(x.index, dx)

        self._records.append((node.index, bwd))
        return node

    def concat_channels(self, xs: list[Node]) -> Node:
        if not xs:
            raise ConfigError("concat_channels needs at least one input")
        out = np.concatenate([n.value for n in xs], axis=1)
        node = self._new_node(out)
        widths = [n.value.shape[1] for n in xs]

        def bwd(gout: Array):
            start = 0
            for n, w in zip(xs, widths):
                self._accum(n.index, gout[:, start:start + w])
                start += w

        self._records.append((node.index, bwd))
        return node

    def scale(self, x: Node, c: float) -> Node:
        c = float(c)
        node = self._new_node(x.value * c)

        def bwd(gout: Array):
            self._accum(x.index, gout * c)

        self._records.append((node.index, bwd))
        return node

    def backward(self, out: Node, grad: Array):
        """Seed the output gradient and propagate to inputs and params."""
        if self._grads is not None:
            raise UsageError("backward() may only run once per tape")
        if not self._records:
            raise UsageError("backward() before any forward op was recorded")
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != out.value.shape:
            raise ConfigError(
                f"backward seed shape {grad.shape} does not match "
                f"output shape {out.value.shape}"
            )
        self._grads = [None] * len(self._values)
        self._grads[out.index] = grad
        for idx, fn in reversed(self._records):
            g = self._grads[idx]
            if g is not None:
                fn(g)
        # The closures capture this tape (a reference cycle) plus large
        # cached activations; drop them now so each training step's
        # working set dies promptly instead of waiting on the gc.
        self._records.clear()
        self._values = []

    def grad(self, node: Node) -> Array:
        if self._grads is None:
            raise UsageError("grad() before backward()")
        g = self._grads[node.index]
        return np.zeros_like(node.value) if g is None else g

    def param_grads(self, params: LayerParams) -> tuple[Array, Array]:
        if self._grads is None:
            raise UsageError("param_grads() before backward()")
        got = self._param_grads.get(id(params))
        if got is None:
            return np.zeros_like(params.kernel), np.zeros_like(params.bias)
        return got


def weighted_bce(pred: Array, target: Array, weights: Array
                 ) -> tuple[float, Array]:
    """Per-sample-weighted sum of pixel-wise binary cross-entropies.

    pred is clamped to [1e-7, 1 - 1e-7] before the logs; pixels whose raw
    prediction sits outside that band get zero gradient. Targets must be
    exactly 0 or 1. Returns (loss, dloss/dpred).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigError(
            f"pred shape {pred.shape} does not match target shape {target.shape}"
        )
    if weights.shape != (pred.shape[0],):
        raise ConfigError(
            f"weights shape {weights.shape} does not match batch of {pred.shape[0]}"
        )
    if not np.all((target == 0.0) | (target == 1.0)):
        raise DataError("weighted_bce target contains values other than 0 and 1")
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    nll = -(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    per_sample = nll.reshape(pred.shape[0], -1).sum(axis=1)
    loss = float(np.dot(weights, per_sample))
    wb = weights.reshape((-1,) + (1,) * (pred.ndim - 1))
    inside = (pred > BCE_CLAMP) & (pred < 1.0 - BCE_CLAMP)
    grad = np.where(inside, wb * (p - target) / (p * (1.0 - p)), 0.0)
    return loss, grad


def sgd_step(params: list[LayerParams], grads: list[tuple[Array, Array]],
             state: OptimizerState):
    """One heavy-ball update, in place: v <- mu * v - lr * g; w <- w + v."""
    if len(params) != len(grads):
        raise ConfigError(f"{len(params)} param layers but {len(grads)} gradients")
    arrays: list[Array] = []
    gs: list[Array] = []
    for p, (dk, db) in zip(params, grads):
        if dk.shape != p.kernel.shape or db.shape != p.bias.shape:
            raise ConfigError("gradient shapes do not match parameter shapes")
        arrays.extend((p.kernel, p.bias))
        gs.extend((dk, db))
    if state.velocity is None:
        state.velocity = [np.zeros_like(a) for a in arrays]
    if len(state.velocity) != len(arrays):
        raise ConfigError("optimizer state does not match parameter list")
    for a, g, v in zip(arrays, gs, state.velocity):
        v *= state.momentum
        v -= state.learning_rate * g
        a += v


@dataclass
class GradcheckRow:
    name: str
    max_rel_err: float


@dataclass
class GradcheckReport:
    rows: list[GradcheckRow] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def gradcheck(loss_fn: Callable[[], float],
              params: list[tuple[str, Array]],
              analytic: dict[str, Array],
              h: float = 1e-5,
              tolerance: float = 1e-4) -> GradcheckReport:
    """Compare analytic gradients against central finite differences.

    loss_fn must recompute the loss from the current (mutated) contents
    of the arrays in params. Relative error per element is
    |a - f| / max(|a|, |f|, 1e-8); a parameter array passes if its max
    is below tolerance.
    """
    total = sum(arr.size for _, arr in params)
    if total > GRADCHECK_PARAM_BUDGET:
        raise ConfigError(
            f"gradcheck budget is {GRADCHECK_PARAM_BUDGET} parameters, got {total}"
        )
    report = GradcheckReport(tolerance=tolerance)
    for name, arr in params:
        if name not in analytic:
            raise ConfigError(f"no analytic gradient supplied for {name!r}")
        a = analytic[name]
        if a.shape != arr.shape:
            raise ConfigError(f"analytic gradient shape mismatch for {name!r}")
        flat = arr.reshape(-1)
        fd = np.empty(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lo_hi = loss_fn()
            flat[i] = orig - h
            lo_lo = loss_fn()
            flat[i] = orig
            fd[i] = (lo_hi - lo_lo) / (2.0 * h)
        af = a.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(af), np.abs(fd)), 1e-8)
        rel = np.abs(af - fd) / denom
        report.rows.append(GradcheckRow(name=name, max_rel_err=float(rel.max())))
    return report
