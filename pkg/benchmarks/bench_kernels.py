"""Timing comparison of the numba kernels against the numpy fallback.

Run as a script; prints per-kernel wall times and the speedup. The
first numba call of each kernel includes JIT compilation, so every
kernel is warmed up once before timing.
"""

import time

import numpy as np

from iterseg.kernels import bilinear_coords, numba_impl, numpy_impl


def _time(fn, *args, repeat: int = 5) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    B, C_in, C_out, P, H = 16, 7, 16, 64, 32
    x = rng.normal(size=(B, C_in, P, P))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    w = rng.normal(size=(C_out, C_in, 3, 3))
    b = rng.normal(size=C_out)
    dout = rng.normal(size=(B, C_out, P // 2, P // 2))
    small = rng.normal(size=(B, C_out, 8, 8))
    y0, y1, fy = bilinear_coords(8, H)
    x0, x1, fx = bilinear_coords(8, H)
    gy0, gy1, gfy = bilinear_coords(8, H)
    img = rng.uniform(0, 255, size=(96, 96, 3))
    ky = rng.uniform(5, 91, 40)
    kx = rng.uniform(5, 91, 40)
    centers = np.stack(
        [ky, kx, *(img[ky.astype(int), kx.astype(int)].T)], axis=1)

    cases = [
        ("conv2d_forward", (xp, w, b, 2)),
        ("conv2d_backward_kernel", (xp, dout, 3, 3, 2)),
        ("conv2d_backward_input", (dout, w, 2, P + 2, P + 2)),
        ("bilinear_forward", (small, y0, y1, fy, x0, x1, fx)),
        ("bilinear_transpose",
         (rng.normal(size=(B, C_out, H, H)), gy0, gy1, gfy, x0, x1, fx, 8, 8)),
        ("slic_assign", (img, centers, 0.4, 16)),
    ]

    print(f"{'kernel':26s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, args in cases:
        np_fn = getattr(numpy_impl, name)
        nb_fn = getattr(numba_impl, name)
        nb_fn(*args)  # warm-up: JIT compile outside the timed region
        t_np = _time(np_fn, *args)
        t_nb = _time(nb_fn, *args)
        print(f"{name:26s} {t_np * 1e3:9.2f}ms {t_nb * 1e3:9.2f}ms "
              f"{t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
