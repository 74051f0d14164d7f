"""The optimization loop: wires renderer, losses, mask MLP, densification
and the scale-cascaded supervision switch; owns the Gaussian-parameter Adam
optimizer and the ablation toggles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import GaussianSet, TrainConfig, logit
from .densify import (DensifyStats, GrowthSchedule, accumulate_stats,
                      densify_and_prune, opacity_reset)
from .evaluate import test_view_metrics, train_mask_metrics
from .features import cosine_mask, extract_features, level_edge
from .imageops import bilinear_resize, bilinear_resize_adjoint
from .losses import (loss_cos, loss_mlp, loss_reg, loss_residual,
                     photometric_loss, residual_bounds)
from .maskmlp import (init_mask_mlp, mlp_adam_step, predict_mask,
                      predict_mask_backward, refine_mask)
from .renderer import ParamGradients, render, rasterize_backward
from .scenegen import RENDER_CULL_SIGMA, DatasetBundle

log = logging.getLogger(__name__)

PAPER_TOTAL_ITERS = 30000
VANILLA_DENSIFY_START = 500   # paper-scale iterations, scaled by the schedule
VANILLA_OPACITY_RESET_START = 3000
ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-15  # vanilla 3DGS optimizer epsilon
SH_REST_LR_DIV = 20.0

CSV_HEADER = "iter,psnr,ssim,gauss_count,mask_mean,loss_photo,loss_mlp"

GAUSS_FIELDS = ("positions", "log_scales", "rotations", "opacity_logits", "colors")


@dataclass
class AblationFlags:
    enable_mask: bool = True
    enable_delayed_growth: bool = True
    enable_bootstrapping: bool = True
    enable_reg: bool = True
    enable_densification: bool = True

    TOKENS = ("mask", "dg", "mb", "reg", "densify")

    @classmethod
    def from_tokens(cls, tokens) -> "AblationFlags":
        toks = {t.strip() for t in tokens if t.strip()}
        unknown = toks - set(cls.TOKENS)
        if unknown:
            raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
        return cls(enable_mask="mask" in toks, enable_delayed_growth="dg" in toks,
                   enable_bootstrapping="mb" in toks, enable_reg="reg" in toks,
                   enable_densification="densify" in toks)


@dataclass
class TrainState:
    gaussians: GaussianSet
    adam_m: dict
    adam_v: dict
    adam_step: int
    mlp: object
    stats: DensifyStats | None
    iteration: int
    seed: int
    rng: np.random.Generator
    history: list = field(default_factory=list)
    nan_incidents: int = 0


def effective_schedule(cfg: TrainConfig, flags: AblationFlags) -> GrowthSchedule:
    scale = cfg.total_iters / PAPER_TOTAL_ITERS
    if flags.enable_delayed_growth:
        start = cfg.densify_start_iter
        prune = cfg.prune_start_iter
        reset = cfg.opacity_reset_start_iter
    else:
        start = max(1, round(VANILLA_DENSIFY_START * scale))
        prune = start
        reset = max(start, round(VANILLA_OPACITY_RESET_START * scale))
    end = max(cfg.densify_end_iter, start + 10 * cfg.densify_interval)
    return GrowthSchedule(densify_start_iter=start, densify_interval=cfg.densify_interval,
                          densify_end_iter=end, prune_start_iter=prune,
                          opacity_reset_start_iter=reset,
                          opacity_reset_interval=cfg.opacity_reset_interval)


def supervision_scale(i: int, cfg: TrainConfig, flags: AblationFlags,
                      sched: GrowthSchedule | None = None) -> str:
    """Low-resolution supervision before growth starts, high afterwards."""
    if not flags.enable_bootstrapping:
        return "high"
    start = sched.densify_start_iter if sched is not None else cfg.densify_start_iter
    return "low" if i < start else "high"


def scene_extent_from(bundle: DatasetBundle) -> float:
    centers = np.stack([v.camera.center for v in bundle.train_views])
    centroid = centers.mean(axis=0)
    return float(1.1 * np.linalg.norm(centers - centroid, axis=1).max())


def init_gaussians(points_xyz: np.ndarray, points_rgb: np.ndarray,
                   sh_degree: int) -> GaussianSet:
    """Vanilla-style initialization from a sparse colored point set."""
    from .renderer import SH_C0

    n = points_xyz.shape[0]
    if n < 4:
        raise ValueError("need at least 4 init points")
    tree = cKDTree(points_xyz)
    dist, _ = tree.query(points_xyz, k=4)
    mean_nn = np.maximum(dist[:, 1:].mean(axis=1), 1e-7)
    log_scales = np.tile(np.log(mean_nn)[:, None], (1, 3))
    rot = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
    opac = np.full(n, logit(0.1))
    bands = 1 if sh_degree == 0 else 4
    colors = np.zeros((n, bands, 3))
    colors[:, 0, :] = (np.clip(points_rgb, 0.0, 1.0) - 0.5) / SH_C0
    return GaussianSet(points_xyz.astype(np.float64).copy(), log_scales, rot,
                       opac, colors)


def init_state(bundle: DatasetBundle, cfg: TrainConfig) -> TrainState:
    g = init_gaussians(bundle.points_xyz, bundle.points_rgb, cfg.sh_degree)
    rng = np.random.default_rng(cfg.seed)
    mlp = init_mask_mlp(cfg.feature_dim, cfg.mlp_hidden_dim, rng)
    adam_m = {k: np.zeros_like(getattr(g, k)) for k in GAUSS_FIELDS}
    adam_v = {k: np.zeros_like(getattr(g, k)) for k in GAUSS_FIELDS}
    return TrainState(gaussians=g, adam_m=adam_m, adam_v=adam_v, adam_step=0,
                      mlp=mlp, stats=DensifyStats.zeros(g.count), iteration=0,
                      seed=cfg.seed, rng=rng)


def position_lr(i: int, cfg: TrainConfig) -> float:
    t = min(max(i / cfg.total_iters, 0.0), 1.0)
    return cfg.position_lr_init * (cfg.position_lr_final / cfg.position_lr_init) ** t


def _group_lrs(i: int, cfg: TrainConfig) -> dict:
    return {"positions": position_lr(i, cfg), "log_scales": cfg.scale_lr,
            "rotations": cfg.rotation_lr, "opacity_logits": cfg.opacity_lr,
            "colors": cfg.color_lr}


def gaussian_adam_step(state: TrainState, grads: ParamGradients,
                       cfg: TrainConfig) -> None:
    state.adam_step += 1
    t = state.adam_step
    bc1 = 1.0 - ADAM_B1**t
    bc2 = 1.0 - ADAM_B2**t
    lrs = _group_lrs(state.iteration, cfg)
    for name in GAUSS_FIELDS:
        p = getattr(state.gaussians, name)
        g = getattr(grads, name)
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= ADAM_B1
        m += (1 - ADAM_B1) * g
        v *= ADAM_B2
        v += (1 - ADAM_B2) * g * g
        upd = lrs[name] * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        if name == "colors" and p.shape[1] > 1:
            upd[:, 1:, :] /= SH_REST_LR_DIV
        p -= upd


def _cached_features(view, level: str, cfg: TrainConfig):
    f = view.features.get(level)
    if f is None:
        f = extract_features(view.image, level, cfg)
        view.features[level] = f
    return f


def _cached_level_image(view, level: str, cfg: TrainConfig):
    key = f"img_{level}"
    img = view.features.get(key)
    if img is None:
        edge = level_edge(level, cfg)
        img = bilinear_resize(view.image, edge, edge)
        view.features[key] = img
    return img


def _mask_supervision_step(state: TrainState, view, full_render: np.ndarray,
                           level: str, cfg: TrainConfig, flags: AblationFlags):
    """One Adam step on the mask MLP from residual + feature-similarity
    supervision at the current cascade level. Returns the combined loss."""
    edge = level_edge(level, cfg)
    f_gt = _cached_features(view, level, cfg)
    if level == "low":
        img_level = render(state.gaussians, view.camera.resized(edge, edge),
                           background=cfg.background_color, z_near=cfg.z_near,
                           cull_sigma=RENDER_CULL_SIGMA)[0]
    else:
        img_level = bilinear_resize(full_render, edge, edge)
    f_rend = extract_features(img_level, level, cfg)
    m_cos = cosine_mask(f_gt, f_rend)

    gt_level = _cached_level_image(view, level, cfg)
    residual = np.abs(img_level - gt_level).mean(axis=2)
    if level == "low":
        k = cfg.residual_extra_downsample
        residual = bilinear_resize(residual, edge // k, edge // k)
    bounds = residual_bounds(residual, cfg.tau_u, cfg.tau_l)

    mask_patch, cache = predict_mask(state.mlp, f_gt)
    gh, gw = mask_patch.shape
    m_up = bilinear_resize(mask_patch, *residual.shape)
    l_res, d_up = loss_residual(m_up, bounds)
    d_patch = bilinear_resize_adjoint(d_up, gh, gw)
    l_cos, d_cos = loss_cos(mask_patch, m_cos.values)
    if flags.enable_reg:
        l_reg, d_reg = loss_reg(mask_patch, state.iteration, cfg.beta_reg)
    else:
        l_reg, d_reg = 0.0, 0.0
    d_mask = (cfg.lambda_residual * d_patch + cfg.lambda_cos * d_cos
              + cfg.lambda_reg * d_reg)
    grads = predict_mask_backward(state.mlp, cache, d_mask)
    mlp_adam_step(state.mlp, grads, cfg.mlp_lr)
    return loss_mlp(l_res, l_cos, l_reg, cfg)


def train_step(state: TrainState, view, cfg: TrainConfig, flags: AblationFlags,
               sched: GrowthSchedule, scene_extent: float) -> dict:
    """One full optimization step on one training view."""
    i = state.iteration
    cam = view.camera
    img, aux = render(state.gaussians, cam, background=cfg.background_color,
                      z_near=cfg.z_near, cull_sigma=RENDER_CULL_SIGMA)

    mlp_loss = 0.0
    if flags.enable_mask:
        level = supervision_scale(i, cfg, flags, sched)
        mlp_loss = _mask_supervision_step(state, view, img, level, cfg, flags)
        f_gt = _cached_features(view, level, cfg)
        mask_patch, _ = predict_mask(state.mlp, f_gt)
        mask_px = refine_mask(mask_patch, cam.width, cam.height, cfg.dilation_kernel)
    else:
        mask_px = np.ones((cam.height, cam.width))

    loss_photo, d_img = photometric_loss(img, view.image, mask_px, cfg.lambda_dssim)
    grads = rasterize_backward(aux, d_img)

    finite = np.isfinite(loss_photo) and all(
        np.all(np.isfinite(getattr(grads, n))) for n in GAUSS_FIELDS)
    events = []
    if not finite:
        state.nan_incidents += 1
        events.append(f"{i},nan_incident,{state.gaussians.count},{state.gaussians.count}")
        log.warning("non-finite loss/gradients at iteration %d; step skipped", i)
    else:
        gaussian_adam_step(state, grads, cfg)
        accumulate_stats(state.stats, grads.screen_grad_norm, grads.positions,
                         grads.radii, grads.visible)

    if flags.enable_densification:
        n_before = state.gaussians.count
        new_g, new_stats, report = densify_and_prune(
            state.gaussians, state.stats, i, sched, cfg, scene_extent,
            max(cam.width, cam.height), state.rng)
        if report.changed:
            kept = report.kept_indices
            n_new = new_g.count - kept.shape[0]
            for name in GAUSS_FIELDS:
                for moments in (state.adam_m, state.adam_v):
                    old = moments[name]
                    fresh = np.zeros((new_g.count,) + old.shape[1:])
                    fresh[:kept.shape[0]] = old[kept]
                    moments[name] = fresh
            state.gaussians = new_g
            state.stats = new_stats
            events.append(f"{i},densify,{n_before},{new_g.count}")
        reset_g = opacity_reset(state.gaussians, i, sched, cfg.opacity_reset_cap)
        if reset_g is not state.gaussians:
            state.gaussians = reset_g
            state.adam_m["opacity_logits"][:] = 0.0
            state.adam_v["opacity_logits"][:] = 0.0
            events.append(f"{i},opacity_reset,{state.gaussians.count},{state.gaussians.count}")

    return {"loss_photo": loss_photo, "loss_mlp": mlp_loss,
            "mask_mean": float(mask_px.mean()), "events": events}


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng((seed + 1) * 7919 + epoch).permutation(n)


def train(bundle: DatasetBundle, cfg: TrainConfig, flags: AblationFlags,
          out_csv=None, out_checkpoint=None, state: TrainState | None = None,
          log_every: int | None = None):
    """Run the full schedule; returns (state, csv_rows). Writes the metrics
    CSV and final checkpoint when paths are given."""
    cfg.validate()
    if not bundle.train_views:
        raise ValueError("empty dataset")
    if state is None:
        state = init_state(bundle, cfg)
    if state.stats is None:  # resumed from a checkpoint
        state.stats = DensifyStats.zeros(state.gaussians.count)
    sched = effective_schedule(cfg, flags)
    extent = scene_extent_from(bundle)
    n_views = len(bundle.train_views)
    rows = list(state.history)

    while state.iteration < cfg.total_iters:
        i = state.iteration
        order = _epoch_order(cfg.seed, i // n_views, n_views)
        view = bundle.train_views[order[i % n_views]]
        info = train_step(state, view, cfg, flags, sched, extent)
        state.iteration += 1
        rows.extend(info["events"])
        i1 = state.iteration
        if i1 % cfg.eval_interval == 0 or i1 == cfg.total_iters:
            p, s = test_view_metrics(state.gaussians, bundle.test_views, cfg)
            rows.append(f"{i1},{p:.4f},{s:.6f},{state.gaussians.count},"
                        f"{info['mask_mean']:.6f},{info['loss_photo']:.8f},"
                        f"{info['loss_mlp']:.8f}")
            if log_every and (i1 % log_every == 0 or i1 == cfg.total_iters):
                log.info("iter %d psnr %.2f count %d", i1, p, state.gaussians.count)
    state.history = rows

    if out_csv is not None:
        Path(out_csv).write_text("\n".join([CSV_HEADER] + rows) + "\n")
    if out_checkpoint is not None:
        from .dataio import save_checkpoint
        save_checkpoint(state, out_checkpoint)
    return state, rows


ABLATION_CONFIGS = (
    ("3dgs", "densify"),
    ("3dgs_no_densify", ""),
    ("mask", "mask,reg,densify"),
    ("mask_dg", "mask,reg,dg,densify"),
    ("mask_mb", "mask,reg,mb,densify"),
    ("full", "mask,reg,dg,mb,densify"),
)


def _final_metrics(state: TrainState, bundle: DatasetBundle, cfg: TrainConfig,
                   flags: AblationFlags):
    p, s = test_view_metrics(state.gaussians, bundle.test_views, cfg)
    iou = train_mask_metrics(state.mlp, bundle.train_views, cfg) \
        if flags.enable_mask else 0.0
    return p, s, iou


def run_ablation_suite(bundle: DatasetBundle, cfg: TrainConfig,
                       seeds=(0, 1, 2)) -> dict:
    """Train every ablation row of the component study under each seed and
    assemble a comparison report with the directional checks."""
    results = {}
    csv_rows = ["config,seed,psnr,ssim,mask_iou"]
    for name, tokens in ABLATION_CONFIGS:
        per_seed = []
        for seed in seeds:
            c = cfg.replace(seed=seed)
            flags = AblationFlags.from_tokens(tokens.split(","))
            st, _ = train(bundle, c, flags)
            p, s, iou = _final_metrics(st, bundle, c, flags)
            per_seed.append({"seed": seed, "psnr": p, "ssim": s, "mask_iou": iou})
            csv_rows.append(f"{name},{seed},{p:.4f},{s:.6f},{iou:.4f}")
        results[name] = per_seed

    def mean(name, key):
        return float(np.mean([r[key] for r in results[name]]))

    def rng_(name, key):
        vals = [r[key] for r in results[name]]
        return float(max(vals) - min(vals))

    summary = {name: {"psnr_mean": mean(name, "psnr"), "psnr_range": rng_(name, "psnr"),
                      "ssim_mean": mean(name, "ssim"),
                      "iou_mean": mean(name, "mask_iou")}
               for name, _ in ABLATION_CONFIGS}
    checks = {
        "full_ge_mask_dg": summary["full"]["psnr_mean"] >= summary["mask_dg"]["psnr_mean"],
        "full_ge_mask_mb": summary["full"]["psnr_mean"] >= summary["mask_mb"]["psnr_mean"],
        "full_iou_ge_no_bootstrap":
            summary["full"]["iou_mean"] >= summary["mask_dg"]["iou_mean"],
    }
    return {"results": results, "summary": summary, "checks": checks,
            "csv_rows": csv_rows}


def sweep_densify_start(bundle: DatasetBundle, cfg: TrainConfig, starts,
                        with_mask: bool) -> dict:
    """PSNR-vs-iteration traces for a list of densification start iterations."""
    if not starts:
        raise ValueError("empty start list")
    tokens = "mask,reg,mb,dg,densify" if with_mask else "dg,densify"
    flags = AblationFlags.from_tokens(tokens.split(","))
    rows = ["iter,start,psnr"]
    finals = {}
    for start in starts:
        c = cfg.replace(densify_start_iter=start, prune_start_iter=start,
                        opacity_reset_start_iter=max(cfg.opacity_reset_start_iter,
                                                     start + 1000))
        st, hist = train(bundle, c, flags)
        for line in hist:
            parts = line.split(",")
            if len(parts) == 7:  # metric row, not an event row
                rows.append(f"{parts[0]},{start},{parts[1]}")
                finals[start] = float(parts[1])
    return {"csv_rows": rows, "final_psnr": finals}
