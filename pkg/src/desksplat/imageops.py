"""Small deterministic image operations shared across modules.

Bilinear resizing is expressed as dense separable matrices so the exact
adjoint (needed when gradients flow through an upsampled mask) is a
transpose, and repeated runs are bitwise reproducible.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.ndimage import minimum_filter


@lru_cache(maxsize=256)
def _resize_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Row-stochastic (n_dst, n_src) bilinear interpolation matrix.

    Uses the half-pixel-center convention: dst pixel i samples source
    coordinate (i + 0.5) * n_src / n_dst - 0.5, clamped to the edges.
    """
    W = np.zeros((n_dst, n_src), dtype=np.float64)
    scale = n_src / n_dst
    for i in range(n_dst):
        s = (i + 0.5) * scale - 0.5
        s = min(max(s, 0.0), n_src - 1.0)
        lo = int(np.floor(s))
        hi = min(lo + 1, n_src - 1)
        f = s - lo
        W[i, lo] += 1.0 - f
        W[i, hi] += f
    return W


def bilinear_resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Resize (H, W) or (H, W, C) to (h, w)."""
    Wr = _resize_matrix(img.shape[0], h)
    Wc = _resize_matrix(img.shape[1], w)
    if img.ndim == 2:
        return Wr @ img @ Wc.T
    tmp = np.tensordot(Wr, img, axes=(1, 0))          # (h, W, C)
    return np.tensordot(tmp, Wc, axes=(1, 1)).transpose(0, 2, 1)


def bilinear_resize_adjoint(grad: np.ndarray, h_src: int, w_src: int) -> np.ndarray:
    """Adjoint of bilinear_resize: maps (h, w[, C]) gradients back to source."""
    Wr = _resize_matrix(h_src, grad.shape[0])
    Wc = _resize_matrix(w_src, grad.shape[1])
    if grad.ndim == 2:
        return Wr.T @ grad @ Wc
    tmp = np.tensordot(Wr, grad, axes=(0, 0))         # (H_src, w, C)
    return np.tensordot(tmp, Wc, axes=(1, 0)).transpose(0, 2, 1)


def box_blur3(img: np.ndarray) -> np.ndarray:
    """3x3 box blur with edge replication."""
    p = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += p[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out / 9.0


def grayscale_erode(img: np.ndarray, kernel: int) -> np.ndarray:
    """Min-filter with a kernel x kernel window (edge replication)."""
    if kernel % 2 == 0 or kernel < 1:
        raise ValueError("erosion kernel must be odd and >= 1")
    if kernel == 1:
        return img.copy()
    return minimum_filter(img, size=kernel, mode="nearest")


def avg_pool(img: np.ndarray, gh: int, gw: int) -> np.ndarray:
    """Average-pool an (H, W) map to (gh, gw); H, W must divide evenly."""
    H, W = img.shape[:2]
    if H % gh or W % gw:
        raise ValueError(f"cannot pool {img.shape[:2]} to ({gh}, {gw}) evenly")
    return img.reshape(gh, H // gh, gw, W // gw, *img.shape[2:]).mean(axis=(1, 3))


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """[0,1] float image to uint8 with round-half-away behavior of np.rint."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def dequantize_u8(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 255.0
