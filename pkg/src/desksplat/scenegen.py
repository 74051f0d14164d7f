"""Synthetic multi-view dataset generator with controllable transient
distractors and exact ground-truth transient masks.

The static scene is itself a Gaussian set, so a perfectly trained model can
reproduce test views bit-exactly. Distractors are opaque blob clusters with
colors far from the static palette, injected per training view; ground-truth
masks come from diffing the distracted render against the clean one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Camera, GaussianSet, logit
from .renderer import SH_C0, render

MASK_DIFF_THRESHOLD = 2.0 / 255.0
RENDER_CULL_SIGMA = 4.0


@dataclass
class SceneParams:
    n_static: int = 256
    n_train_views: int = 32
    n_test_views: int = 8
    image_size: int = 128
    occlusion: float = 0.2          # target mean fraction of distracted pixels
    occlusion_tol: float = 0.04
    cam_radius: float = 2.6
    box_half: float = 0.6
    focal_factor: float = 1.1       # fx = factor * image width
    clusters_per_view: tuple = (1, 3)
    gaussians_per_cluster: tuple = (5, 20)
    persistent_distractor: bool = False
    persistent_fraction: float = 0.3
    contaminate_init: bool = False
    contaminate_fraction: float = 0.25
    background: tuple = (0.0, 0.0, 0.0)

    def validate(self) -> None:
        if self.n_train_views < 8:
            raise ValueError("need at least 8 training cameras")
        if self.n_static < 50:
            raise ValueError("need at least 50 static Gaussians")
        if not 0.0 <= self.occlusion <= 1.0:
            raise ValueError("occlusion must lie in [0, 1]")


@dataclass
class DistractorCluster:
    positions: np.ndarray   # (k, 3) offsets around the cluster center
    center: np.ndarray      # (3,)
    base_scale: np.ndarray  # (k,) pre-sizing log-scale offsets
    colors: np.ndarray      # (k, 3) rgb far from the static palette


@dataclass
class SyntheticScene:
    params: SceneParams
    static: GaussianSet
    train_cameras: list
    test_cameras: list
    distractors: list       # per train view: list of DistractorCluster
    seed: int


@dataclass
class TrainView:
    camera: Camera
    image: np.ndarray       # distracted render (H, W, 3)
    gt_mask: np.ndarray     # (H, W), 1 = static
    features: dict = field(default_factory=dict)   # level -> FeatureMap cache


@dataclass
class TestView:
    camera: Camera
    image: np.ndarray       # clean render


@dataclass
class DatasetBundle:
    train_views: list
    test_views: list
    points_xyz: np.ndarray
    points_rgb: np.ndarray
    scene: SyntheticScene | None = None
    measured_occlusion: float = 0.0


def _look_at(eye: np.ndarray, target: np.ndarray, width: int, height: int,
             focal: float) -> Camera:
    up = np.array([0.0, 0.0, 1.0])
    f = target - eye
    f = f / np.linalg.norm(f)
    r = np.cross(f, up)
    r = r / np.linalg.norm(r)
    d = np.cross(f, r)
    R = np.stack([r, d, f])
    # re-orthonormalize against accumulated float error
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return Camera(fx=focal, fy=focal, cx=(width - 1) / 2, cy=(height - 1) / 2,
                  rotation=R, translation=-R @ eye, width=width, height=height)


def _ring_cameras(rng, n: int, params: SceneParams, phase: float) -> list:
    cams = []
    for k in range(n):
        az = 2 * np.pi * (k + phase) / n + rng.uniform(-0.04, 0.04)
        el = rng.uniform(0.35, 0.6)
        eye = params.cam_radius * np.array([
            np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)])
        cams.append(_look_at(eye, np.zeros(3), params.image_size,
                             params.image_size, params.focal_factor * params.image_size))
    return cams


def _palette_color(p: np.ndarray, rng) -> np.ndarray:
    """Smooth position-indexed static palette, muted range [0.15, 0.7]."""
    base = 0.42 + 0.27 * np.sin(3.1 * p + np.array([0.0, 2.1, 4.2]))
    return np.clip(base + rng.uniform(-0.08, 0.08, 3), 0.15, 0.7)


def _rgb_to_sh0(rgb: np.ndarray) -> np.ndarray:
    return (rgb - 0.5) / SH_C0


def _static_set(rng, params: SceneParams) -> GaussianSet:
    n = params.n_static
    pos = rng.uniform(-params.box_half, params.box_half, (n, 3))
    log_scales = rng.uniform(np.log(0.03), np.log(0.09), (n, 3))
    rot = rng.normal(0, 1, (n, 4))
    rot[np.linalg.norm(rot, axis=1) < 1e-6] = np.array([1.0, 0, 0, 0])
    opac = rng.uniform(1.5, 3.0, n)
    colors = np.zeros((n, 4, 3))
    for i in range(n):
        colors[i, 0] = _rgb_to_sh0(_palette_color(pos[i], rng))
    colors[:, 1:, :] = rng.uniform(-0.12, 0.12, (n, 3, 3))
    return GaussianSet(pos, log_scales, rot, opac, colors)


def _distractor_color(rng) -> np.ndarray:
    """Saturated extremes the static palette never reaches."""
    c = rng.uniform(0.88, 1.0, 3)
    off = rng.integers(0, 3)
    c[off] = rng.uniform(0.0, 0.1)
    return c


def _make_cluster(rng, params: SceneParams, cam: Camera) -> DistractorCluster:
    k = int(rng.integers(params.gaussians_per_cluster[0],
                         params.gaussians_per_cluster[1] + 1))
    # Float the cluster in the empty corridor between this view's camera and
    # the scene, like someone stepping in front of the lens: it occludes a big
    # patch of this training view while other viewpoints see it off to the
    # side, hanging in free space.
    eye = -cam.rotation.T @ cam.translation
    target = rng.uniform(-0.5 * params.box_half, 0.5 * params.box_half, 3)
    frac = rng.uniform(0.4, 0.6)
    center = eye + frac * (target - eye)
    center += rng.uniform(-0.15, 0.15, 3) * params.box_half
    offsets = rng.normal(0, 1.0, (k, 3))
    base_scale = rng.uniform(-0.3, 0.3, k)
    colors = np.stack([_distractor_color(rng) for _ in range(k)])
    return DistractorCluster(positions=offsets, center=center,
                             base_scale=base_scale, colors=colors)


def generate_scene(seed: int, params: SceneParams) -> SyntheticScene:
    """Deterministic scene: static Gaussians, camera rings, distractor specs."""
    params.validate()
    rng = np.random.default_rng(seed)
    static = _static_set(rng, params)
    train_cams = _ring_cameras(rng, params.n_train_views, params, phase=0.0)
    test_cams = _ring_cameras(rng, params.n_test_views, params, phase=0.5)

    distractors = [[] for _ in range(params.n_train_views)]
    if params.occlusion > 0.0:
        persistent = (_make_cluster(rng, params, train_cams[0])
                      if params.persistent_distractor else None)
        n_persist = int(round(params.persistent_fraction * params.n_train_views))
        for v in range(params.n_train_views):
            if persistent is not None and v < n_persist:
                distractors[v].append(persistent)
            n_cl = int(rng.integers(params.clusters_per_view[0],
                                    params.clusters_per_view[1] + 1))
            for _ in range(n_cl):
                distractors[v].append(_make_cluster(rng, params, train_cams[v]))
    return SyntheticScene(params=params, static=static, train_cameras=train_cams,
                          test_cameras=test_cams, distractors=distractors, seed=seed)


def _cluster_gaussians(cluster: DistractorCluster, size: float) -> GaussianSet:
    k = cluster.positions.shape[0]
    pos = cluster.center + cluster.positions * size * 1.5
    log_scales = np.tile((np.log(size) + cluster.base_scale)[:, None], (1, 3))
    rot = np.tile(np.array([1.0, 0, 0, 0]), (k, 1))
    opac = np.full(k, logit(0.985))
    colors = np.zeros((k, 4, 3))
    colors[:, 0, :] = _rgb_to_sh0(cluster.colors)
    return GaussianSet(pos, log_scales, rot, opac, colors)


def _concat_sets(a: GaussianSet, b: GaussianSet) -> GaussianSet:
    return GaussianSet(*[np.concatenate([getattr(a, f), getattr(b, f)])
                         for f in ("positions", "log_scales", "rotations",
                                   "opacity_logits", "colors")])


def render_dataset(scene: SyntheticScene, max_size_iters: int = 10) -> DatasetBundle:
    """Render all views, derive GT masks, and resize distractors until the
    measured occlusion fraction matches the requested level."""
    params = scene.params
    bg = params.background
    clean = [render(scene.static, cam, background=bg,
                    cull_sigma=RENDER_CULL_SIGMA)[0]
             for cam in scene.train_cameras]

    size = 0.12
    target = params.occlusion
    best = None
    for _ in range(max_size_iters):
        images, masks, fractions = [], [], []
        for v, cam in enumerate(scene.train_cameras):
            if scene.distractors[v]:
                g = scene.static
                for cl in scene.distractors[v]:
                    g = _concat_sets(g, _cluster_gaussians(cl, size))
                img = render(g, cam, background=bg, cull_sigma=RENDER_CULL_SIGMA)[0]
            else:
                img = clean[v]
            changed = (np.abs(img - clean[v]) > MASK_DIFF_THRESHOLD).any(axis=2)
            images.append(img)
            masks.append(1.0 - changed.astype(np.float64))
            fractions.append(changed.mean())
        rho = float(np.mean(fractions))
        if best is None or abs(rho - target) < abs(best[0] - target):
            best = (rho, images, masks)
        if target == 0.0 or abs(rho - target) <= params.occlusion_tol:
            break
        size *= np.sqrt(target / max(rho, 1e-4))
        size = float(np.clip(size, 0.01, 0.8))
    rho, images, masks = best

    train_views = [TrainView(camera=cam, image=img, gt_mask=mask)
                   for cam, img, mask in zip(scene.train_cameras, images, masks)]
    test_views = [TestView(camera=cam,
                           image=render(scene.static, cam, background=bg,
                                        cull_sigma=RENDER_CULL_SIGMA)[0])
                  for cam in scene.test_cameras]

    pts = scene.static.positions.copy()
    rgb = np.clip(0.5 + SH_C0 * scene.static.colors[:, 0, :], 0.0, 1.0)
    if params.contaminate_init and target > 0.0:
        n_views = max(1, int(round(params.contaminate_fraction * params.n_train_views)))
        extra_p, extra_c = [], []
        for v in range(n_views):
            for cl in scene.distractors[v]:
                extra_p.append(cl.center + cl.positions * size * 1.5)
                extra_c.append(cl.colors)
        if extra_p:
            pts = np.concatenate([pts] + extra_p)
            rgb = np.concatenate([rgb] + extra_c)

    return DatasetBundle(train_views=train_views, test_views=test_views,
                         points_xyz=pts, points_rgb=rgb, scene=scene,
                         measured_occlusion=rho)
