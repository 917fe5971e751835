"""Pure-numpy kernel implementations.

Convolutions are expressed as one tensor contraction per kernel tap so
the inner work runs through BLAS. The bilinear transpose goes through
small dense interpolation matrices instead of scattered adds, which is
far cheaper than np.add.at at training sizes.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def conv2d_forward(xp: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                   stride: int) -> np.ndarray:
    """Valid cross-correlation of a pre-padded NCHW batch.

    xp: (B, IC, IH, IW), kernel: (OC, IC, KH, KW), bias: (OC,).
    """
    B, IC, IH, IW = xp.shape
    OC, _, KH, KW = kernel.shape
    OH = (IH - KH) // stride + 1
    OW = (IW - KW) // stride + 1
    out = np.zeros((B, OC, OH, OW), dtype=np.float64)
    for kh in range(KH):
        for kw in range(KW):
            xs = xp[:, :,
                    kh:kh + stride * (OH - 1) + 1:stride,
                    kw:kw + stride * (OW - 1) + 1:stride]
            out += np.einsum("oi,bihw->bohw", kernel[:, :, kh, kw], xs,
                             optimize=True)
    out += bias[None, :, None, None]
    return out


def conv2d_backward_kernel(xp: np.ndarray, dout: np.ndarray, KH: int, KW: int,
                           stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. kernel and bias."""
    B, IC, IH, IW = xp.shape
    _, OC, OH, OW = dout.shape
    dkernel = np.empty((OC, IC, KH, KW), dtype=np.float64)
    for kh in range(KH):
        for kw in range(KW):
            xs = xp[:, :,
                    kh:kh + stride * (OH - 1) + 1:stride,
                    kw:kw + stride * (OW - 1) + 1:stride]
            dkernel[:, :, kh, kw] = np.einsum("bohw,bihw->oi", dout, xs,
                                              optimize=True)
    dbias = dout.sum(axis=(0, 2, 3))
    return dkernel, dbias


def conv2d_backward_input(dout: np.ndarray, kernel: np.ndarray, stride: int,
                          IH: int, IW: int) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. the pre-padded input."""
    B, OC, OH, OW = dout.shape
    _, IC, KH, KW = kernel.shape
    dxp = np.zeros((B, IC, IH, IW), dtype=np.float64)
    for kh in range(KH):
        for kw in range(KW):
            contrib = np.einsum("oi,bohw->bihw", kernel[:, :, kh, kw], dout,
                                optimize=True)
            dxp[:, :,
                kh:kh + stride * (OH - 1) + 1:stride,
                kw:kw + stride * (OW - 1) + 1:stride] += contrib
    return dxp


def bilinear_forward(x: np.ndarray, y0: np.ndarray, y1: np.ndarray,
                     fy: np.ndarray, x0: np.ndarray, x1: np.ndarray,
                     fx: np.ndarray) -> np.ndarray:
    """Bilinear resample of an NCHW batch onto precomputed coordinates.

    The two-step lerp below is kept textually identical to the numba
    backend so both produce bitwise-equal outputs.
    """
    a = x[:, :, y0[:, None], x0[None, :]]
    b = x[:, :, y0[:, None], x1[None, :]]
    c = x[:, :, y1[:, None], x0[None, :]]
    d = x[:, :, y1[:, None], x1[None, :]]
    fx2 = fx[None, :]
    fy2 = fy[:, None]
    v0 = a + (b - a) * fx2
    v1 = c + (d - c) * fx2
    return v0 + (v1 - v0) * fy2


def _resize_matrix(lo: np.ndarray, hi: np.ndarray, frac: np.ndarray,
                   in_size: int) -> np.ndarray:
    n_out = lo.size
    mat = np.zeros((n_out, in_size), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def bilinear_transpose(g: np.ndarray, y0: np.ndarray, y1: np.ndarray,
                       fy: np.ndarray, x0: np.ndarray, x1: np.ndarray,
                       fx: np.ndarray, IH: int, IW: int) -> np.ndarray:
    """Exact adjoint of the bilinear resize, as two matrix contractions."""
    ry = _resize_matrix(y0, y1, fy, IH)
    rx = _resize_matrix(x0, x1, fx, IW)
    tmp = np.tensordot(g, rx, axes=([3], [0]))          # (B, C, OH, IW)
    dx = np.tensordot(tmp, ry, axes=([2], [0]))         # (B, C, IW, IH)
    return np.ascontiguousarray(dx.transpose(0, 1, 3, 2))


def slic_assign(color: np.ndarray, centers: np.ndarray, spatial_w: float,
                half_window: int) -> tuple[np.ndarray, np.ndarray]:
    """Windowed nearest-center assignment for one k-means pass.

    color: (H, W, 3) float features, centers: (K, 5) rows (y, x, r, g, b).
    Returns (labels, dist); pixels outside every window keep label -1.
    Ties go to the lowest center index.
    """
    H, W, _ = color.shape
    K = centers.shape[0]
    dist = np.full((H, W), np.inf, dtype=np.float64)
    labels = np.full((H, W), -1, dtype=np.int64)
    for k in range(K):
        cy = centers[k, 0]
        cx = centers[k, 1]
        cr = centers[k, 2]
        cg = centers[k, 3]
        cb = centers[k, 4]
        ylo = max(int(np.floor(cy)) - half_window, 0)
        yhi = min(int(np.floor(cy)) + half_window + 1, H)
        xlo = max(int(np.floor(cx)) - half_window, 0)
        xhi = min(int(np.floor(cx)) + half_window + 1, W)
        if ylo >= yhi or xlo >= xhi:
            continue
        sub = color[ylo:yhi, xlo:xhi]
        yy = np.arange(ylo, yhi, dtype=np.float64)[:, None]
        xx = np.arange(xlo, xhi, dtype=np.float64)[None, :]
        dc = (sub[:, :, 0] - cr) ** 2 + (sub[:, :, 1] - cg) ** 2 \
            + (sub[:, :, 2] - cb) ** 2
        ds = (yy - cy) ** 2 + (xx - cx) ** 2
        d = dc + spatial_w * ds
        dwin = dist[ylo:yhi, xlo:xhi]
        lwin = labels[ylo:yhi, xlo:xhi]
        better = d < dwin
        dwin[better] = d[better]
        lwin[better] = k
    return labels, dist
