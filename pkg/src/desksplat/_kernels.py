"""Numba-jitted blend kernels for the rasterizer hot path.

Math is identical to the numpy reference in renderer.py; loops run per
pixel with early termination at the transmittance cutoff, and all
accumulation is sequential in pixel order, so results are deterministic.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is installed in the target env
    HAVE_NUMBA = False

    def njit(*a, **k):
        def deco(f):
            return f
        return deco if not (len(a) == 1 and callable(a[0])) else a[0]

ALPHA_CAP = 0.99
T_CUTOFF = 1e-4
# Contributions below this alpha are dropped (standard rasterizer floor);
# the q-space cutoff equivalent is precomputed by the caller so the jitted
# and numpy paths classify pixels identically.
ALPHA_MIN = 1.0 / 255.0


@njit(cache=True)
def blend_forward(mu, conic, opac, col, qcut, y0, x0, h, w, bg):
    """Front-to-back blend of depth-sorted splats over one tile."""
    n = mu.shape[0]
    img = np.empty((h, w, 3))
    t_bg = np.empty((h, w))
    contributed = np.zeros(n, dtype=np.bool_)
    for iy in range(h):
        py = float(y0 + iy)
        for ix in range(w):
            px = float(x0 + ix)
            T = 1.0
            r = 0.0
            g = 0.0
            b = 0.0
            for i in range(n):
                dx = px - mu[i, 0]
                dy = py - mu[i, 1]
                q = conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy \
                    + conic[i, 2] * dy * dy
                if q > qcut[i]:
                    continue  # alpha would be below the contribution floor
                alpha = opac[i] * np.exp(-0.5 * q)
                if alpha > ALPHA_CAP:
                    alpha = ALPHA_CAP
                wgt = alpha * T
                if wgt > 0.0:
                    r += wgt * col[i, 0]
                    g += wgt * col[i, 1]
                    b += wgt * col[i, 2]
                    contributed[i] = True
                T *= 1.0 - alpha
                if T < T_CUTOFF:
                    break
            img[iy, ix, 0] = r + T * bg[0]
            img[iy, ix, 1] = g + T * bg[1]
            img[iy, ix, 2] = b + T * bg[2]
            t_bg[iy, ix] = T
    return img, t_bg, contributed


@njit(cache=True)
def blend_backward(mu, conic, opac, col, qcut, y0, x0, h, w, bg, grad):
    """Exact per-pixel replay backward for one tile.

    grad is the (h, w, 3) upstream image gradient. Returns gradients w.r.t.
    splat mean2d, the conic matrix entries (00, 01, 11), opacity and color.
    """
    n = mu.shape[0]
    d_mu = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    d_opac = np.zeros(n)
    d_col = np.zeros((n, 3))
    alpha_buf = np.empty(n)
    G_buf = np.empty(n)
    T_buf = np.empty(n)
    dx_buf = np.empty(n)
    dy_buf = np.empty(n)
    for iy in range(h):
        py = float(y0 + iy)
        for ix in range(w):
            g0 = grad[iy, ix, 0]
            g1 = grad[iy, ix, 1]
            g2 = grad[iy, ix, 2]
            if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                continue
            px = float(x0 + ix)
            # forward replay
            T = 1.0
            last = -1
            for i in range(n):
                dx = px - mu[i, 0]
                dy = py - mu[i, 1]
                q = conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy \
                    + conic[i, 2] * dy * dy
                if q > qcut[i]:
                    # below the contribution floor: zero weight, zero gradient
                    alpha_buf[i] = 0.0
                    G_buf[i] = 0.0
                    T_buf[i] = T
                    dx_buf[i] = dx
                    dy_buf[i] = dy
                    last = i
                    continue
                G = np.exp(-0.5 * q)
                alpha = opac[i] * G
                if alpha > ALPHA_CAP:
                    alpha = ALPHA_CAP
                alpha_buf[i] = alpha
                G_buf[i] = G
                T_buf[i] = T
                dx_buf[i] = dx
                dy_buf[i] = dy
                last = i
                T *= 1.0 - alpha
                if T < T_CUTOFF:
                    break
            # reverse sweep: A = contribution accumulated behind splat i
            a0 = T * bg[0]
            a1 = T * bg[1]
            a2 = T * bg[2]
            for i in range(last, -1, -1):
                alpha = alpha_buf[i]
                Ti = T_buf[i]
                wgt = alpha * Ti
                d_col[i, 0] += wgt * g0
                d_col[i, 1] += wgt * g1
                d_col[i, 2] += wgt * g2
                inv1m = 1.0 / (1.0 - alpha)
                d_alpha = (col[i, 0] * Ti - a0 * inv1m) * g0 \
                    + (col[i, 1] * Ti - a1 * inv1m) * g1 \
                    + (col[i, 2] * Ti - a2 * inv1m) * g2
                a0 += wgt * col[i, 0]
                a1 += wgt * col[i, 1]
                a2 += wgt * col[i, 2]
                if opac[i] * G_buf[i] >= ALPHA_CAP:
                    continue  # clamped: zero gradient into o and G
                G = G_buf[i]
                d_opac[i] += d_alpha * G
                d_q = -0.5 * G * d_alpha * opac[i]
                dx = dx_buf[i]
                dy = dy_buf[i]
                d_mu[i, 0] += d_q * (-2.0) * (conic[i, 0] * dx + conic[i, 1] * dy)
                d_mu[i, 1] += d_q * (-2.0) * (conic[i, 1] * dx + conic[i, 2] * dy)
                d_conic[i, 0] += d_q * dx * dx
                d_conic[i, 1] += d_q * dx * dy
                d_conic[i, 2] += d_q * dy * dy
    return d_mu, d_conic, d_opac, d_col
