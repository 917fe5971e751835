"""Numba kernel implementations.

Convolutions gather im2col panels with explicit loops and hand the big
multiply to np.dot (BLAS); on one core that is several times faster
than einsum over shifted views. All loops are sequential, so results
are deterministic run to run.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def _im2col(xp, KH, KW, stride, OH, OW):
    B, IC, IH, IW = xp.shape
    K = IC * KH * KW
    N = B * OH * OW
    cols = np.empty((K, N), dtype=np.float64)
    for ic in range(IC):
        for kh in range(KH):
            for kw in range(KW):
                k = (ic * KH + kh) * KW + kw
                idx = 0
                for bb in range(B):
                    for oh in range(OH):
                        ih = oh * stride + kh
                        for ow in range(OW):
                            cols[k, idx] = xp[bb, ic, ih, ow * stride + kw]
                            idx += 1
    return cols


@njit(cache=True)
def conv2d_forward(xp, kernel, bias, stride):
    B, IC, IH, IW = xp.shape
    OC = kernel.shape[0]
    KH = kernel.shape[2]
    KW = kernel.shape[3]
    OH = (IH - KH) // stride + 1
    OW = (IW - KW) // stride + 1
    cols = _im2col(xp, KH, KW, stride, OH, OW)
    w2 = kernel.reshape(OC, IC * KH * KW)
    out2 = np.dot(w2, cols)
    out = np.empty((B, OC, OH, OW), dtype=np.float64)
    for oc in range(OC):
        idx = 0
        for bb in range(B):
            for oh in range(OH):
                for ow in range(OW):
                    out[bb, oc, oh, ow] = out2[oc, idx] + bias[oc]
                    idx += 1
    return out


@njit(cache=True)
def _pack_rows(dout):
    B, OC, OH, OW = dout.shape
    N = B * OH * OW
    out2 = np.empty((OC, N), dtype=np.float64)
    for oc in range(OC):
        idx = 0
        for bb in range(B):
            for oh in range(OH):
                for ow in range(OW):
                    out2[oc, idx] = dout[bb, oc, oh, ow]
                    idx += 1
    return out2


@njit(cache=True)
def conv2d_backward_kernel(xp, dout, KH, KW, stride):
    B, IC, IH, IW = xp.shape
    OC = dout.shape[1]
    OH = dout.shape[2]
    OW = dout.shape[3]
    cols = _im2col(xp, KH, KW, stride, OH, OW)
    dout2 = _pack_rows(dout)
    dk2 = np.dot(dout2, cols.T)
    dkernel = dk2.reshape(OC, IC, KH, KW).copy()
    dbias = np.zeros(OC, dtype=np.float64)
    for oc in range(OC):
        s = 0.0
        for idx in range(dout2.shape[1]):
            s += dout2[oc, idx]
        dbias[oc] = s
    return dkernel, dbias


@njit(cache=True)
def conv2d_backward_input(dout, kernel, stride, IH, IW):
    B, OC, OH, OW = dout.shape
    IC = kernel.shape[1]
    KH = kernel.shape[2]
    KW = kernel.shape[3]
    K = IC * KH * KW
    w2 = kernel.reshape(OC, K)
    dout2 = _pack_rows(dout)
    dcols = np.dot(w2.T, dout2)
    dxp = np.zeros((B, IC, IH, IW), dtype=np.float64)
    for ic in range(IC):
        for kh in range(KH):
            for kw in range(KW):
                k = (ic * KH + kh) * KW + kw
                idx = 0
                for bb in range(B):
                    for oh in range(OH):
                        ih = oh * stride + kh
                        for ow in range(OW):
                            dxp[bb, ic, ih, ow * stride + kw] += dcols[k, idx]
                            idx += 1
    return dxp


@njit(cache=True)
def bilinear_forward(x, y0, y1, fy, x0, x1, fx):
    B, C, IH, IW = x.shape
    OH = y0.size
    OW = x0.size
    out = np.empty((B, C, OH, OW), dtype=np.float64)
    for bb in range(B):
        for c in range(C):
            for i in range(OH):
                yl = y0[i]
                yh = y1[i]
                ffy = fy[i]
                for j in range(OW):
                    a = x[bb, c, yl, x0[j]]
                    b = x[bb, c, yl, x1[j]]
                    cc = x[bb, c, yh, x0[j]]
                    d = x[bb, c, yh, x1[j]]
                    ffx = fx[j]
                    v0 = a + (b - a) * ffx
                    v1 = cc + (d - cc) * ffx
                    out[bb, c, i, j] = v0 + (v1 - v0) * ffy
    return out


@njit(cache=True)
def bilinear_transpose(g, y0, y1, fy, x0, x1, fx, IH, IW):
    B, C, OH, OW = g.shape
    dx = np.zeros((B, C, IH, IW), dtype=np.float64)
    for bb in range(B):
        for c in range(C):
            for i in range(OH):
                yl = y0[i]
                yh = y1[i]
                wy1 = fy[i]
                wy0 = 1.0 - wy1
                for j in range(OW):
                    wx1 = fx[j]
                    wx0 = 1.0 - wx1
                    gv = g[bb, c, i, j]
                    dx[bb, c, yl, x0[j]] += gv * wy0 * wx0
                    dx[bb, c, yl, x1[j]] += gv * wy0 * wx1
                    dx[bb, c, yh, x0[j]] += gv * wy1 * wx0
                    dx[bb, c, yh, x1[j]] += gv * wy1 * wx1
    return dx


@njit(cache=True)
def slic_assign(color, centers, spatial_w, half_window):
    H = color.shape[0]
    W = color.shape[1]
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
        for y in range(ylo, yhi):
            dy = y - cy
            for x in range(xlo, xhi):
                dxx = x - cx
                dr = color[y, x, 0] - cr
                dg = color[y, x, 1] - cg
                db = color[y, x, 2] - cb
                dc = dr ** 2 + dg ** 2 + db ** 2
                ds = dy ** 2 + dxx ** 2
                d = dc + spatial_w * ds
                if d < dist[y, x]:
                    dist[y, x] = d
                    labels[y, x] = k
    return labels, dist
