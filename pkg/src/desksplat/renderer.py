"""Differentiable software rasterizer for 3D Gaussians.

Forward: activate -> project (EWA affine approximation) -> depth sort ->
tile-binned alpha blending. Backward: exact analytic reverse pass that
replays each tile's blend from stored splat lists and chains gradients to
every raw Gaussian parameter.

Pixel (row i, col j) has center coordinates (x=j, y=i). Blending follows
front-to-back compositing with per-splat alpha capped at 0.99 and a
transmittance cutoff of 1e-4; the remaining transmittance multiplies the
background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import (ActivatedGaussians, Camera, GaussianSet, activate_parameters,
                   build_covariance, quat_to_rotation)

ALPHA_CAP = 0.99
T_CUTOFF = 1e-4
LOWPASS_FLOOR = 0.3  # px^2, isotropic anti-aliasing floor on cov2d diagonal
SINGULAR_DET = 1e-12
TILE = 16

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199


@dataclass
class Splat2D:
    """Batch of projected 2D Gaussian footprints, one row per splat."""

    mean2d: np.ndarray       # (M, 2)
    cov2d: np.ndarray        # (M, 2, 2), low-pass floor applied
    depth: np.ndarray        # (M,) camera-frame z
    color: np.ndarray        # (M, 3)
    opacity: np.ndarray      # (M,)
    source_index: np.ndarray # (M,) index into the originating GaussianSet
    radius: np.ndarray       # (M,) conservative pixel radius (inf = uncullable)

    @property
    def count(self) -> int:
        return self.mean2d.shape[0]


@dataclass
class ProjCache:
    """Intermediates retained from projection for the analytic backward."""

    act: ActivatedGaussians
    cam: Camera
    visible: np.ndarray     # (N,) bool, in front of near plane
    p_cam: np.ndarray       # (M, 3) camera-frame centers of visible Gaussians
    J: np.ndarray           # (M, 2, 3) projection Jacobians
    Mcov: np.ndarray        # (M, 3, 3) W Sigma W^T
    Sigma: np.ndarray       # (M, 3, 3)
    dir_world: np.ndarray | None   # (M, 3) unit view directions (SH degree 1)
    dir_norm: np.ndarray | None    # (M,) pre-normalization lengths
    color_clamped: np.ndarray      # (M, 3) bool, SH output hit the [0,1] clamp
    raw: GaussianSet


@dataclass
class RenderAux:
    """Replay data for the exact backward pass."""

    splats: Splat2D
    order: np.ndarray               # depth permutation applied before binning
    conic: np.ndarray               # (M, 3): A, B, C of inv cov2d, sorted order
    ok: np.ndarray                  # (M,) bool, non-singular, sorted order
    tile_indices: list              # per tile: int array into sorted splats
    tile_bounds: list               # per tile: (y0, y1, x0, x1)
    background: np.ndarray
    transmittance: np.ndarray       # (H, W) final background weight per pixel
    width: int
    height: int
    n_singular: int
    n_culled_behind: int
    contributed: np.ndarray         # (M,) bool, sorted order
    qcut: np.ndarray | None = None  # (M,) q-space contribution floor
    proj: ProjCache | None = None


@dataclass
class ParamGradients:
    """Gradients w.r.t. the raw GaussianSet parameterization."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    screen_grad_norm: np.ndarray  # (N,) ndc-normalized |dL/dmean2d| per Gaussian
    visible: np.ndarray           # (N,) bool, contributed to some pixel
    radii: np.ndarray             # (N,) projected pixel radius (0 if culled)


def eval_sh_colors(sh: np.ndarray, directions: np.ndarray | None):
    """Evaluate SH coefficients (M, n_sh, 3) to RGB, clamped to [0, 1].

    Returns (colors, clamped_mask). Degree-1 uses the (y, z, x) band order.
    """
    c = 0.5 + SH_C0 * sh[:, 0, :]
    if sh.shape[1] == 4:
        if directions is None:
            raise ValueError("degree-1 SH requires view directions")
        dx, dy, dz = directions[:, 0:1], directions[:, 1:2], directions[:, 2:3]
        c = c - SH_C1 * dy * sh[:, 1, :] + SH_C1 * dz * sh[:, 2, :] - SH_C1 * dx * sh[:, 3, :]
    clamped = (c < 0.0) | (c > 1.0)
    return np.clip(c, 0.0, 1.0), clamped


def project_gaussians(raw: GaussianSet, cam: Camera, z_near: float = 0.01,
                      cull_sigma: float | None = None):
    """Project all Gaussians into screen space. Returns (Splat2D, ProjCache)."""
    act = activate_parameters(raw)
    W = cam.rotation
    p_cam_all = act.positions @ W.T + cam.translation
    visible = p_cam_all[:, 2] > z_near

    p = p_cam_all[visible]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    mean2d = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], axis=1)

    m = p.shape[0]
    J = np.zeros((m, 2, 3), dtype=np.float64)
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / z**2
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / z**2

    Sigma = build_covariance(act.scales[visible], act.quaternions[visible])
    Mcov = np.einsum("ij,njk,lk->nil", W, Sigma, W)
    cov2d = np.einsum("nij,njk,nlk->nil", J, Mcov, J)
    cov2d[:, 0, 0] += LOWPASS_FLOOR
    cov2d[:, 1, 1] += LOWPASS_FLOOR

    if raw.sh_bands == 4:
        d = act.positions[visible] - cam.center
        dn = np.linalg.norm(d, axis=1)
        dirs = d / dn[:, None]
    else:
        dirs, dn = None, None
    colors, clamped = eval_sh_colors(act.colors[visible], dirs)

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid**2 - (a * c - b**2), 0.0))
    if cull_sigma is None:
        radius = np.full(m, np.inf)
    else:
        # The fast path also drops contributions below the 1/255 alpha
        # floor, so a splat's visible extent is the smaller of cull_sigma
        # and the opacity-dependent floor radius sqrt(2 ln(opacity/floor)).
        opac = act.opacities[visible]
        q_floor = 2.0 * np.log(np.maximum(opac / _kernels.ALPHA_MIN, 1.0))
        sig = np.minimum(cull_sigma, np.sqrt(q_floor))
        radius = np.ceil(sig * np.sqrt(lam_max))

    splats = Splat2D(mean2d=mean2d, cov2d=cov2d, depth=z.copy(), color=colors,
                     opacity=act.opacities[visible],
                     source_index=np.nonzero(visible)[0], radius=radius)
    cache = ProjCache(act=act, cam=cam, visible=visible, p_cam=p, J=J, Mcov=Mcov,
                      Sigma=Sigma, dir_world=dirs, dir_norm=dn,
                      color_clamped=clamped, raw=raw)
    return splats, cache


def project(raw: GaussianSet, cam: Camera, index: int = 0, z_near: float = 0.01):
    """Single-Gaussian convenience wrapper; returns None if culled."""
    splats, _ = project_gaussians(raw, cam, z_near=z_near)
    where = np.nonzero(splats.source_index == index)[0]
    if where.size == 0:
        return None
    k = int(where[0])
    return Splat2D(splats.mean2d[k:k + 1], splats.cov2d[k:k + 1], splats.depth[k:k + 1],
                   splats.color[k:k + 1], splats.opacity[k:k + 1],
                   splats.source_index[k:k + 1], splats.radius[k:k + 1])


def depth_sort(splats: Splat2D) -> np.ndarray:
    """Stable ascending depth order; ties broken by source_index."""
    if not np.all(np.isfinite(splats.depth)):
        raise ValueError("non-finite depths")
    return np.lexsort((splats.source_index, splats.depth))


def _sorted_view(splats: Splat2D, order: np.ndarray) -> Splat2D:
    return Splat2D(splats.mean2d[order], splats.cov2d[order], splats.depth[order],
                   splats.color[order], splats.opacity[order],
                   splats.source_index[order], splats.radius[order])


def _tile_layout(height: int, width: int):
    bounds = []
    for y0 in range(0, height, TILE):
        for x0 in range(0, width, TILE):
            bounds.append((y0, min(y0 + TILE, height), x0, min(x0 + TILE, width)))
    return bounds


def _bin_splats(splats: Splat2D, ok: np.ndarray, bounds):
    mu, r = splats.mean2d, splats.radius
    x0 = mu[:, 0] - r
    x1 = mu[:, 0] + r
    y0 = mu[:, 1] - r
    y1 = mu[:, 1] + r
    tiles = []
    for (ty0, ty1, tx0, tx1) in bounds:
        hit = ok & (x1 >= tx0 - 0.5) & (x0 <= tx1 - 0.5) & (y1 >= ty0 - 0.5) & (y0 <= ty1 - 0.5)
        tiles.append(np.nonzero(hit)[0])
    return tiles


def _tile_blend(splats: Splat2D, conic: np.ndarray, qcut: np.ndarray,
                idx: np.ndarray, bound):
    """Alpha/transmittance stack for one tile. Returns per-splat-per-pixel data."""
    y0, y1, x0, x1 = bound
    ys, xs = np.meshgrid(np.arange(y0, y1, dtype=np.float64),
                         np.arange(x0, x1, dtype=np.float64), indexing="ij")
    px = xs.ravel()
    py = ys.ravel()
    mu = splats.mean2d[idx]
    dx = px[None, :] - mu[:, 0:1]
    dy = py[None, :] - mu[:, 1:2]
    A, B, C = conic[idx, 0:1], conic[idx, 1:2], conic[idx, 2:3]
    q = A * dx * dx + 2.0 * B * dx * dy + C * dy * dy
    G = np.exp(-0.5 * q)
    # contribution floor: pairs past the q cutoff blend as exact zero and
    # carry zero gradient
    G[q > qcut[idx, None]] = 0.0
    raw_alpha = splats.opacity[idx, None] * G
    alpha = np.minimum(raw_alpha, ALPHA_CAP)
    T_after = np.cumprod(1.0 - alpha, axis=0)
    T_before = np.empty_like(T_after)
    T_before[0] = 1.0
    if alpha.shape[0] > 1:
        T_before[1:] = T_after[:-1]
    active = T_before >= T_CUTOFF
    w = alpha * T_before * active
    # Background weight: transmittance at termination (first T below cutoff)
    any_cut = ~active.all(axis=0)
    T_bg = T_after[-1].copy()
    if np.any(any_cut):
        first = np.argmax(~active, axis=0)
        cols = np.nonzero(any_cut)[0]
        T_bg[cols] = T_before[first[cols], cols]
    return dx, dy, G, raw_alpha, alpha, T_before, active, w, T_bg


def rasterize(splats: Splat2D, cam: Camera, background, proj: ProjCache | None = None,
              n_culled_behind: int = 0, alpha_floor: float | None = None):
    """Blend depth-sorted splats into an image. Returns (image, RenderAux).

    alpha_floor, when set, drops per-pixel contributions below that alpha
    (the standard rasterizer speed floor); None keeps the blend exact.
    """
    if not (np.all(np.isfinite(splats.mean2d)) and np.all(np.isfinite(splats.cov2d))):
        raise ValueError("non-finite splat parameters")
    bg = np.asarray(background, dtype=np.float64)
    H, W = cam.height, cam.width
    order = depth_sort(splats)
    s = _sorted_view(splats, order)

    a, b, c = s.cov2d[:, 0, 0], s.cov2d[:, 0, 1], s.cov2d[:, 1, 1]
    det = a * c - b * b
    ok = det > SINGULAR_DET
    conic = np.zeros((s.count, 3), dtype=np.float64)
    conic[ok, 0] = c[ok] / det[ok]
    conic[ok, 1] = -b[ok] / det[ok]
    conic[ok, 2] = a[ok] / det[ok]

    # q-space contribution floor: alpha = opacity * exp(-q/2) < alpha_floor
    # is dropped.  Precomputed once so every blend path classifies identically.
    # Disabled (floor None -> qcut inf) the blend is exact, which the
    # finite-difference gradient checks rely on.
    if alpha_floor is None:
        qcut = np.full(s.count, np.inf)
    else:
        qcut = np.where(s.opacity > alpha_floor,
                        2.0 * np.log(s.opacity / alpha_floor), -1.0)

    bounds = _tile_layout(H, W)
    tiles = _bin_splats(s, ok, bounds)

    image = np.empty((H, W, 3), dtype=np.float64)
    transmittance = np.ones((H, W), dtype=np.float64)
    contributed = np.zeros(s.count, dtype=bool)
    for bound, idx in zip(bounds, tiles):
        y0, y1, x0, x1 = bound
        if idx.size == 0:
            image[y0:y1, x0:x1] = bg
            continue
        if _kernels.HAVE_NUMBA:
            tile_img, T_bg, contrib = _kernels.blend_forward(
                s.mean2d[idx], conic[idx], s.opacity[idx], s.color[idx],
                qcut[idx], y0, x0, y1 - y0, x1 - x0, bg)
            image[y0:y1, x0:x1] = tile_img
            transmittance[y0:y1, x0:x1] = T_bg
            contributed[idx] |= contrib
        else:
            _, _, _, _, _, _, _, w, T_bg = _tile_blend(s, conic, qcut, idx, bound)
            tile_img = w.T @ s.color[idx] + T_bg[:, None] * bg
            image[y0:y1, x0:x1] = tile_img.reshape(y1 - y0, x1 - x0, 3)
            transmittance[y0:y1, x0:x1] = T_bg.reshape(y1 - y0, x1 - x0)
            contributed[idx] |= (w > 0).any(axis=1)

    aux = RenderAux(splats=s, order=order, conic=conic, ok=ok, tile_indices=tiles, qcut=qcut,
                    tile_bounds=bounds, background=bg, transmittance=transmittance,
                    width=W, height=H, n_singular=int(s.count - ok.sum()),
                    n_culled_behind=n_culled_behind, contributed=contributed, proj=proj)
    return image, aux


def render(raw: GaussianSet, cam: Camera, background=(0.0, 0.0, 0.0),
           z_near: float = 0.01, cull_sigma: float | None = None):
    """Full differentiable forward pass from raw parameters to an image.

    cull_sigma selects the fast production path: splats are culled beyond
    that many standard deviations AND per-pixel contributions below the
    1/255 alpha floor are skipped.  With cull_sigma=None the blend is exact.
    """
    splats, cache = project_gaussians(raw, cam, z_near=z_near, cull_sigma=cull_sigma)
    n_behind = int(raw.count - splats.count)
    floor = None if cull_sigma is None else _kernels.ALPHA_MIN
    return rasterize(splats, cam, background, proj=cache, n_culled_behind=n_behind,
                     alpha_floor=floor)


def _blend_backward(aux: RenderAux, d_image: np.ndarray):
    """Gradients w.r.t. sorted-splat mean2d, cov2d, opacity, color."""
    s = aux.splats
    m = s.count
    d_mean2d = np.zeros((m, 2))
    d_conic_mat = np.zeros((m, 3))  # dL/d[[A,B],[B,C]] as (00, 01, 11)
    d_opacity = np.zeros(m)
    d_color = np.zeros((m, 3))
    bg = aux.background

    for bound, idx in zip(aux.tile_bounds, aux.tile_indices):
        if idx.size == 0:
            continue
        y0, y1, x0, x1 = bound
        g_img = d_image[y0:y1, x0:x1]
        if not g_img.any():
            continue
        if _kernels.HAVE_NUMBA:
            dmu_t, dcon_t, dop_t, dcol_t = _kernels.blend_backward(
                s.mean2d[idx], aux.conic[idx], s.opacity[idx], s.color[idx],
                aux.qcut[idx], y0, x0, y1 - y0, x1 - x0, bg,
                np.ascontiguousarray(g_img))
            d_mean2d[idx] += dmu_t
            d_conic_mat[idx] += dcon_t
            d_opacity[idx] += dop_t
            d_color[idx] += dcol_t
            continue
        g = g_img.reshape(-1, 3)  # (P, 3)
        dx, dy, G, raw_alpha, alpha, T_before, active, w, T_bg = \
            _tile_blend(s, aux.conic, aux.qcut, idx, bound)
        col = s.color[idx]  # (n, 3)

        d_color[idx] += w @ g

        # S_i = sum over later active splats of w_j c_j, plus background term
        contrib = w[:, :, None] * col[:, None, :]            # (n, P, 3)
        Scum = np.cumsum(contrib[::-1], axis=0)[::-1]        # inclusive from rear
        S = Scum - contrib                                   # exclusive
        R = S + T_bg[None, :, None] * bg[None, None, :]
        cg = col @ g.T                                       # (n, P) color . g
        Rg = np.einsum("npk,pk->np", R, g)
        with np.errstate(divide="ignore", invalid="ignore"):
            d_alpha = (cg * T_before - Rg / (1.0 - alpha)) * active
        d_alpha = np.where(active, d_alpha, 0.0)
        # chain through the 0.99 cap
        d_raw = d_alpha * (raw_alpha < ALPHA_CAP)

        d_opacity[idx] += (d_raw * G).sum(axis=1)
        d_G = d_raw * s.opacity[idx, None]
        d_q = -0.5 * G * d_G
        A, B, C = aux.conic[idx, 0:1], aux.conic[idx, 1:2], aux.conic[idx, 2:3]
        d_mean2d[idx, 0] += (d_q * (-2.0) * (A * dx + B * dy)).sum(axis=1)
        d_mean2d[idx, 1] += (d_q * (-2.0) * (B * dx + C * dy)).sum(axis=1)
        d_conic_mat[idx, 0] += (d_q * dx * dx).sum(axis=1)
        d_conic_mat[idx, 1] += (d_q * dx * dy).sum(axis=1)
        d_conic_mat[idx, 2] += (d_q * dy * dy).sum(axis=1)

    # dL/dcov = -Conic dL/dConic Conic (all symmetric 2x2)
    A, B, C = aux.conic[:, 0], aux.conic[:, 1], aux.conic[:, 2]
    Cm = np.zeros((m, 2, 2))
    Cm[:, 0, 0], Cm[:, 0, 1] = d_conic_mat[:, 0], d_conic_mat[:, 1]
    Cm[:, 1, 0], Cm[:, 1, 1] = d_conic_mat[:, 1], d_conic_mat[:, 2]
    Con = np.zeros((m, 2, 2))
    Con[:, 0, 0], Con[:, 0, 1] = A, B
    Con[:, 1, 0], Con[:, 1, 1] = B, C
    d_cov2d = -np.einsum("nij,njk,nkl->nil", Con, Cm, Con)
    return d_mean2d, d_cov2d, d_opacity, d_color


def _quat_rotation_backward(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """dL/dq for unit quaternions given dL/dR, before normalization chain."""
    r, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = dR
    dr = 2 * (z * (g[:, 1, 0] - g[:, 0, 1]) + y * (g[:, 0, 2] - g[:, 2, 0])
              + x * (g[:, 2, 1] - g[:, 1, 2]))
    dx = 2 * (y * (g[:, 1, 0] + g[:, 0, 1]) + z * (g[:, 2, 0] + g[:, 0, 2])
              + r * (g[:, 2, 1] - g[:, 1, 2])) - 4 * x * (g[:, 1, 1] + g[:, 2, 2])
    dy = 2 * (x * (g[:, 1, 0] + g[:, 0, 1]) + r * (g[:, 0, 2] - g[:, 2, 0])
              + z * (g[:, 2, 1] + g[:, 1, 2])) - 4 * y * (g[:, 0, 0] + g[:, 2, 2])
    dz = 2 * (r * (g[:, 1, 0] - g[:, 0, 1]) + x * (g[:, 2, 0] + g[:, 0, 2])
              + y * (g[:, 2, 1] + g[:, 1, 2])) - 4 * z * (g[:, 0, 0] + g[:, 1, 1])
    return np.stack([dr, dx, dy, dz], axis=1)


def rasterize_backward(aux: RenderAux, d_image: np.ndarray,
                       pixel_weights: np.ndarray | None = None) -> ParamGradients:
    """Analytic gradients of a weighted image loss w.r.t. all raw parameters.

    d_image is the (H, W, 3) upstream gradient; pixel_weights (H, W), when
    given, multiplies it pointwise (weight-0 pixels contribute exactly zero).
    """
    if d_image.shape != (aux.height, aux.width, 3):
        raise ValueError(f"d_image shape {d_image.shape} does not match render "
                         f"({aux.height}, {aux.width}, 3)")
    if pixel_weights is not None:
        if pixel_weights.shape != (aux.height, aux.width):
            raise ValueError("pixel_weights shape mismatch")
        d_image = d_image * pixel_weights[:, :, None]

    cache = aux.proj
    if cache is None:
        raise ValueError("RenderAux lacks projection cache; use render() for "
                         "parameter gradients")
    d_mean2d_s, d_cov2d_s, d_opacity_s, d_color_s = _blend_backward(aux, d_image)

    # Undo the depth sort back to projected (visible-splat) order.
    m = aux.splats.count
    inv = np.empty(m, dtype=np.int64)
    inv[aux.order] = np.arange(m)
    d_mean2d = d_mean2d_s[inv]
    d_cov2d = d_cov2d_s[inv]
    d_opacity_act = d_opacity_s[inv]
    d_color_rgb = d_color_s[inv]

    raw = cache.raw
    n = raw.count
    vis_idx = np.nonzero(cache.visible)[0]
    cam = cache.cam
    W = cam.rotation
    p = cache.p_cam
    x, y, z = p[:, 0], p[:, 1], p[:, 2]

    # --- covariance chain: cov2d = J Mcov J^T (+ floor, identity gradient)
    Gc = d_cov2d  # symmetric by construction
    J = cache.J
    dM = np.einsum("nji,njk,nkl->nil", J, Gc, J)           # J^T Gc J
    dJ = 2.0 * np.einsum("nij,njk,nkl->nil", Gc, J, cache.Mcov)
    dSigma = np.einsum("ji,njk,kl->nil", W, dM, W)         # W^T dM W

    # --- Jacobian entries depend on camera-frame x, y, z
    d_p_cam = np.zeros_like(p)
    d_p_cam[:, 0] += dJ[:, 0, 2] * (-cam.fx / z**2)
    d_p_cam[:, 1] += dJ[:, 1, 2] * (-cam.fy / z**2)
    d_p_cam[:, 2] += (dJ[:, 0, 0] * (-cam.fx / z**2)
                      + dJ[:, 0, 2] * (2.0 * cam.fx * x / z**3)
                      + dJ[:, 1, 1] * (-cam.fy / z**2)
                      + dJ[:, 1, 2] * (2.0 * cam.fy * y / z**3))
    # --- mean2d = (fx x / z + cx, fy y / z + cy)
    d_p_cam[:, 0] += d_mean2d[:, 0] * cam.fx / z
    d_p_cam[:, 1] += d_mean2d[:, 1] * cam.fy / z
    d_p_cam[:, 2] += (d_mean2d[:, 0] * (-cam.fx * x / z**2)
                      + d_mean2d[:, 1] * (-cam.fy * y / z**2))
    d_pos_vis = d_p_cam @ W

    # --- Sigma = R diag(s^2) R^T
    act = cache.act
    qn = act.quaternions[cache.visible]
    s_act = act.scales[cache.visible]
    Rm = quat_to_rotation(qn)
    GS = dSigma  # symmetric
    RtGR = np.einsum("nji,njk,nkl->nil", Rm, GS, Rm)
    d_scale = 2.0 * s_act * np.einsum("nii->ni", RtGR)
    d_log_scale_vis = d_scale * s_act
    D = np.square(s_act)
    dRm = 2.0 * np.einsum("nij,njk,nk->nik", GS, Rm, D)
    d_qn = _quat_rotation_backward(qn, dRm)
    # through normalization q_hat = q / |q|
    q_raw = raw.rotations[cache.visible]
    q_norm = np.linalg.norm(q_raw, axis=1, keepdims=True)
    d_q_raw = (d_qn - qn * (d_qn * qn).sum(axis=1, keepdims=True)) / q_norm

    # --- SH colors (clamp passes zero gradient outside [0, 1])
    d_c = d_color_rgb * (~cache.color_clamped)
    sh_vis = raw.colors[cache.visible]
    d_sh = np.zeros_like(sh_vis)
    d_sh[:, 0, :] = SH_C0 * d_c
    if raw.sh_bands == 4:
        dirs = cache.dir_world
        d_sh[:, 1, :] = -SH_C1 * dirs[:, 1:2] * d_c
        d_sh[:, 2, :] = SH_C1 * dirs[:, 2:3] * d_c
        d_sh[:, 3, :] = -SH_C1 * dirs[:, 0:1] * d_c
        d_dir = np.stack([
            (-SH_C1 * sh_vis[:, 3, :] * d_c).sum(axis=1),
            (-SH_C1 * sh_vis[:, 1, :] * d_c).sum(axis=1),
            (SH_C1 * sh_vis[:, 2, :] * d_c).sum(axis=1),
        ], axis=1)
        # dir = v / |v|, v = p_world - cam_center
        dn = cache.dir_norm[:, None]
        dirs_u = cache.dir_world
        d_v = (d_dir - dirs_u * (d_dir * dirs_u).sum(axis=1, keepdims=True)) / dn
        d_pos_vis = d_pos_vis + d_v

    # --- opacity through sigmoid
    o = act.opacities[cache.visible]
    d_logit_vis = d_opacity_act * o * (1.0 - o)

    grads = ParamGradients(
        positions=np.zeros((n, 3)),
        log_scales=np.zeros((n, 3)),
        rotations=np.zeros((n, 4)),
        opacity_logits=np.zeros(n),
        colors=np.zeros_like(raw.colors),
        screen_grad_norm=np.zeros(n),
        visible=np.zeros(n, dtype=bool),
        radii=np.zeros(n),
    )
    grads.positions[vis_idx] = d_pos_vis
    grads.log_scales[vis_idx] = d_log_scale_vis
    grads.rotations[vis_idx] = d_q_raw
    grads.opacity_logits[vis_idx] = d_logit_vis
    grads.colors[vis_idx] = d_sh
    # ndc-normalized screen gradient norm for densification statistics
    ndc = np.hypot(d_mean2d[:, 0] * aux.width * 0.5, d_mean2d[:, 1] * aux.height * 0.5)
    grads.screen_grad_norm[vis_idx] = ndc
    contributed = aux.contributed[inv]
    grads.visible[vis_idx] = contributed
    finite_r = np.where(np.isfinite(aux.splats.radius[inv]), aux.splats.radius[inv], 0.0)
    grads.radii[vis_idx] = finite_r
    return grads
