"""Adaptive density control: gradient statistics, clone/split, prune, and
the delayed opacity reset. All structural edits are gated by the growth
schedule so Gaussian count is invariant before the densify start."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GaussianSet, activate_parameters, build_covariance, logit

SPLIT_SCALE_DIV = 1.6
CLONE_STEP = 0.01          # times scene extent, along the descent direction
PRUNE_RADIUS_FRAC = 0.8    # of the image edge


@dataclass
class DensifyStats:
    grad_sum: np.ndarray      # (N,) accumulated ndc positional gradient norms
    grad3d_sum: np.ndarray    # (N, 3) accumulated 3D positional gradients
    count: np.ndarray         # (N,) observations
    max_radius: np.ndarray    # (N,) max projected pixel radius since reset

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros((n, 3)), np.zeros(n), np.zeros(n))

    def copy(self) -> "DensifyStats":
        return DensifyStats(self.grad_sum.copy(), self.grad3d_sum.copy(),
                            self.count.copy(), self.max_radius.copy())


@dataclass
class GrowthSchedule:
    densify_start_iter: int
    densify_interval: int
    densify_end_iter: int
    prune_start_iter: int
    opacity_reset_start_iter: int
    opacity_reset_interval: int

    @classmethod
    def from_config(cls, cfg) -> "GrowthSchedule":
        return cls(cfg.densify_start_iter, cfg.densify_interval, cfg.densify_end_iter,
                   cfg.prune_start_iter, cfg.opacity_reset_start_iter,
                   cfg.opacity_reset_interval)


def accumulate_stats(stats: DensifyStats, grad_norms: np.ndarray,
                     grad3d: np.ndarray, radii: np.ndarray,
                     visibility: np.ndarray) -> DensifyStats:
    n = stats.grad_sum.shape[0]
    if grad_norms.shape[0] != n or visibility.shape[0] != n:
        raise ValueError("stats/gradient size mismatch")
    stats.grad_sum[visibility] += grad_norms[visibility]
    stats.grad3d_sum[visibility] += grad3d[visibility]
    stats.count[visibility] += 1
    stats.max_radius[visibility] = np.maximum(stats.max_radius[visibility],
                                              radii[visibility])
    return stats


@dataclass
class DensifyReport:
    iteration: int
    count_before: int
    count_after: int
    n_cloned: int = 0
    n_split: int = 0
    n_pruned: int = 0
    changed: bool = False
    kept_indices: np.ndarray | None = None  # into the previous set; new rows follow


def densify_and_prune(gaussians: GaussianSet, stats: DensifyStats, i: int,
                      sched: GrowthSchedule, cfg, scene_extent: float,
                      image_edge: int, rng: np.random.Generator):
    """Clone/split over-gradient Gaussians and prune weak ones at schedule
    ticks. Returns (new set, fresh stats, DensifyReport)."""
    n = gaussians.count
    if stats.grad_sum.shape[0] != n:
        raise ValueError("stats inconsistent with gaussian count")
    report = DensifyReport(iteration=i, count_before=n, count_after=n)
    if i < sched.densify_start_iter or i % sched.densify_interval != 0 \
            or i > sched.densify_end_iter:
        return gaussians, stats, report

    mean_grad = np.where(stats.count > 0, stats.grad_sum / np.maximum(stats.count, 1), 0.0)
    over = mean_grad > cfg.grad_threshold
    act = activate_parameters(gaussians)
    max_scale = act.scales.max(axis=1)
    small = max_scale <= cfg.percent_dense * scene_extent
    clone_mask = over & small
    split_mask = over & ~small

    # prune on the surviving originals only
    prune = np.zeros(n, dtype=bool)
    if i >= sched.prune_start_iter:
        prune = (act.opacities < cfg.min_opacity) \
            | (stats.max_radius > PRUNE_RADIUS_FRAC * image_edge)
    keep = ~prune & ~split_mask

    parts = {name: [getattr(gaussians, name)[keep]]
             for name in ("positions", "log_scales", "rotations",
                          "opacity_logits", "colors")}

    clone_idx = np.nonzero(clone_mask & ~prune)[0]
    if clone_idx.size:
        g3 = stats.grad3d_sum[clone_idx]
        norms = np.linalg.norm(g3, axis=1, keepdims=True)
        step = np.where(norms > 0, -g3 / np.maximum(norms, 1e-30), 0.0) \
            * CLONE_STEP * scene_extent
        parts["positions"].append(gaussians.positions[clone_idx] + step)
        parts["log_scales"].append(gaussians.log_scales[clone_idx].copy())
        parts["rotations"].append(gaussians.rotations[clone_idx].copy())
        parts["opacity_logits"].append(gaussians.opacity_logits[clone_idx].copy())
        parts["colors"].append(gaussians.colors[clone_idx].copy())

    split_idx = np.nonzero(split_mask & ~prune)[0]
    if split_idx.size:
        cov = build_covariance(act.scales[split_idx], act.quaternions[split_idx])
        chol = np.linalg.cholesky(cov + 1e-18 * np.eye(3))
        for _ in range(2):
            eps = rng.standard_normal((split_idx.size, 3))
            pos = gaussians.positions[split_idx] + np.einsum("nij,nj->ni", chol, eps)
            parts["positions"].append(pos)
            parts["log_scales"].append(gaussians.log_scales[split_idx]
                                       - np.log(SPLIT_SCALE_DIV))
            parts["rotations"].append(gaussians.rotations[split_idx].copy())
            parts["opacity_logits"].append(gaussians.opacity_logits[split_idx].copy())
            parts["colors"].append(gaussians.colors[split_idx].copy())

    new = GaussianSet(**{k: np.concatenate(v, axis=0) for k, v in parts.items()})
    report.count_after = new.count
    report.n_cloned = int(clone_idx.size)
    report.n_split = int(split_idx.size)
    report.n_pruned = int(prune.sum())
    report.changed = True
    report.kept_indices = np.nonzero(keep)[0]
    return new, DensifyStats.zeros(new.count), report


def opacity_reset(gaussians: GaussianSet, i: int, sched: GrowthSchedule,
                  cap: float = 0.01) -> GaussianSet:
    """At reset ticks, clamp every opacity down to <= cap (on logits)."""
    if i < sched.opacity_reset_start_iter or i % sched.opacity_reset_interval != 0:
        return gaussians
    out = gaussians.copy()
    out.opacity_logits = np.minimum(out.opacity_logits, logit(cap))
    return out
