"""Training losses: masked photometric (L1 + D-SSIM), residual-bound robust
loss, feature-similarity loss, decaying mask regularizer, and the SSIM/PSNR
primitives with analytic gradients where optimization needs them."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import correlate1d

from .imageops import box_blur3

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_CAP = 99.0


def _gaussian_taps() -> np.ndarray:
    r = SSIM_WINDOW // 2
    g = np.exp(-np.arange(-r, r + 1) ** 2 / (2.0 * SSIM_SIGMA**2))
    return g / g.sum()


_G1D = _gaussian_taps()
_WIN = np.outer(_G1D, _G1D)


@lru_cache(maxsize=None)
def _valid_matrix(n: int) -> np.ndarray:
    """(n-10, n) matrix applying the 1D window in valid mode; the window is
    symmetric so this doubles, transposed, as the full-mode adjoint."""
    m = np.zeros((n - SSIM_WINDOW + 1, n))
    for i in range(m.shape[0]):
        m[i, i:i + SSIM_WINDOW] = _G1D
    return m


def _filt(img: np.ndarray) -> np.ndarray:
    """Separable windowed filter, valid region only."""
    r = SSIM_WINDOW // 2
    t = correlate1d(img, _G1D, axis=0, mode="constant")
    t = correlate1d(t, _G1D, axis=1, mode="constant")
    return t[r:-r, r:-r]


def _filt_full(u: np.ndarray) -> np.ndarray:
    """Adjoint of _filt: valid-grid input scattered back to the full grid;
    with a symmetric window this is full-mode correlation of zero-padded u."""
    r = SSIM_WINDOW // 2
    up = np.pad(u, r)
    t = correlate1d(up, _G1D, axis=0, mode="constant")
    return correlate1d(t, _G1D, axis=1, mode="constant")


def _ssim_channel(x: np.ndarray, y: np.ndarray):
    mx, my = _filt(x), _filt(y)
    x2, y2, xy = _filt(x * x), _filt(y * y), _filt(x * y)
    sx2 = x2 - mx * mx
    sy2 = y2 - my * my
    sxy = xy - mx * my
    n1 = 2 * mx * my + SSIM_C1
    d1 = mx * mx + my * my + SSIM_C1
    n2 = 2 * sxy + SSIM_C2
    d2 = sx2 + sy2 + SSIM_C2
    return (n1 * n2) / (d1 * d2), (mx, my, x2, y2, xy, n1, d1, n2, d2)


def ssim(a: np.ndarray, b: np.ndarray):
    """Windowed SSIM over the valid (un-padded) region, channel-averaged.

    Returns (scalar, per-pixel map of shape (H-10, W-10)).
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError("image smaller than the SSIM window")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    maps = [_ssim_channel(a[:, :, c], b[:, :, c])[0] for c in range(a.shape[2])]
    m = np.mean(maps, axis=0)
    return float(m.mean()), m


def _ssim_channel_backward(x, y, u, terms):
    """d(sum_p u_p ssim_p)/dx for one channel; u lives on the valid grid."""
    mx, my, x2, y2, xy, n1, d1, n2, d2 = terms
    l = n1 / d1
    cs = n2 / d2
    ds_dmx = cs * (2 * my * d1 - 2 * mx * n1) / d1**2 + l * (-2 * my * d2 + 2 * mx * n2) / d2**2
    ds_dx2 = l * (-n2) / d2**2
    ds_dxy = l * 2.0 / d2
    b1 = _filt_full(u * ds_dmx)
    b2 = _filt_full(u * ds_dx2)
    b3 = _filt_full(u * ds_dxy)
    return b1 + 2.0 * x * b2 + y * b3


def photometric_loss(render: np.ndarray, gt: np.ndarray, mask: np.ndarray,
                     lambda_dssim: float):
    """Masked Eq.-style photometric objective: (1-l) L1 + l D-SSIM.

    The mask (static confidence) multiplies both per-pixel terms before
    spatial averaging and is treated as a constant. Returns
    (loss, d_loss/d_render).
    """
    if render.shape != gt.shape or mask.shape != render.shape[:2]:
        raise ValueError("photometric_loss shape mismatch")
    H, W, C = render.shape
    diff = render - gt
    n_px = H * W * C
    l1 = (mask[:, :, None] * np.abs(diff)).sum() / n_px
    grad = (1.0 - lambda_dssim) * mask[:, :, None] * np.sign(diff) / n_px

    if lambda_dssim > 0.0:
        r = SSIM_WINDOW // 2
        mv = mask[r:-r, r:-r]
        nv = mv.shape[0] * mv.shape[1] * C
        dssim_sum = 0.0
        for c in range(C):
            smap, terms = _ssim_channel(render[:, :, c], gt[:, :, c])
            dssim_sum += (mv * (1.0 - smap) * 0.5).sum()
            u = lambda_dssim * mv * (-0.5) / nv
            grad[:, :, c] += _ssim_channel_backward(render[:, :, c], gt[:, :, c],
                                                    u, terms)
        loss = (1.0 - lambda_dssim) * l1 + lambda_dssim * dssim_sum / nv
    else:
        loss = l1
    return float(loss), grad


@dataclass
class ResidualBounds:
    b_low: np.ndarray   # strict-inlier indicator (1 = static)
    b_high: np.ndarray  # loose-inlier indicator (1 = static)


def residual_bounds(residual: np.ndarray, tau_u: float, tau_l: float) -> ResidualBounds:
    """Quantile-thresholded inlier maps of a smoothed residual image."""
    if residual.size == 0:
        raise ValueError("empty residual map")
    if not (0.0 < tau_u <= tau_l < 1.0):
        raise ValueError("require 0 < tau_u <= tau_l < 1")
    r = box_blur3(residual)
    q_u = np.quantile(r, tau_u)
    q_l = np.quantile(r, tau_l)
    return ResidualBounds(b_low=(r <= q_u).astype(np.float64),
                          b_high=(r <= q_l).astype(np.float64))


def loss_residual(M: np.ndarray, bounds: ResidualBounds):
    """mean(max(b_low - M, 0) + max(M - b_high, 0)); zero iff M sits in the band."""
    if M.shape != bounds.b_low.shape:
        raise ValueError("mask/bounds shape mismatch")
    lo = bounds.b_low - M
    hi = M - bounds.b_high
    val = (np.maximum(lo, 0) + np.maximum(hi, 0)).mean()
    grad = (-(lo > 0).astype(np.float64) + (hi > 0).astype(np.float64)) / M.size
    return float(val), grad


def loss_cos(M: np.ndarray, m_cos: np.ndarray):
    """Elementwise mean absolute difference to the feature-similarity target."""
    if M.shape != m_cos.shape:
        raise ValueError("mask/cosine-map shape mismatch")
    d = M - m_cos
    return float(np.abs(d).mean()), np.sign(d) / M.size


def loss_reg(M: np.ndarray, i: int, beta_reg: float):
    """exp(-i/beta) * mean|1 - M|: early pull toward the all-static mask."""
    w = np.exp(-i / beta_reg)
    d = 1.0 - M
    return float(w * np.abs(d).mean()), -w * np.sign(d) / M.size


def loss_mlp(residual_term: float, cos_term: float, reg_term: float, cfg) -> float:
    return (cfg.lambda_residual * residual_term + cfg.lambda_cos * cos_term
            + cfg.lambda_reg * reg_term)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) on the [0, 1] range, capped at 99 dB."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)
