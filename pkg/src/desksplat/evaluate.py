"""Metrics over trained checkpoints: test-view PSNR/SSIM, mask quality
against ground truth, and CSV record assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import extract_features
from .imageops import dequantize_u8, quantize_u8
from .losses import psnr, ssim
from .maskmlp import predict_mask, refine_mask
from .renderer import render
from .scenegen import RENDER_CULL_SIGMA


def mask_iou(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> float:
    """IoU of the transient (value < threshold) regions; 1.0 when both empty."""
    if pred.shape != gt.shape:
        raise ValueError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    a = pred < threshold
    b = gt < threshold
    union = (a | b).sum()
    if union == 0:
        return 1.0
    return float((a & b).sum() / union)


def _quantized(img: np.ndarray) -> np.ndarray:
    # Metrics run on the 8-bit grid so a perfect model scores the PSNR cap
    # against PNG-quantized references.
    return dequantize_u8(quantize_u8(img))


@dataclass
class MetricsRecord:
    psnr: float
    ssim: float
    mask_iou: float

    def csv_row(self, config: str, seed: int) -> str:
        return f"{config},{seed},{self.psnr:.4f},{self.ssim:.6f},{self.mask_iou:.4f}"


def test_view_metrics(gaussians, test_views, cfg, gt_masks=None):
    """Mean PSNR/SSIM of renders against test images (both 8-bit quantized).

    gt_masks, when given, excludes transient pixels from the PSNR term
    (masked-metric protocol); test views of the synthetic sets are clean,
    so this is a no-op there.
    """
    ps, ss = [], []
    for k, view in enumerate(test_views):
        img, _ = render(gaussians, view.camera, background=cfg.background_color,
                        z_near=cfg.z_near, cull_sigma=RENDER_CULL_SIGMA)
        a = _quantized(img)
        b = _quantized(view.image)
        if gt_masks is not None:
            keep = gt_masks[k] >= 0.5
            ps.append(psnr(a[keep], b[keep]))
        else:
            ps.append(psnr(a, b))
        ss.append(ssim(a, b)[0])
    return float(np.mean(ps)), float(np.mean(ss))


def train_mask_metrics(mlp, train_views, cfg, level: str = "high") -> float:
    """Mean IoU of predicted transient masks against ground truth."""
    ious = []
    for view in train_views:
        f = view.features.get(level)
        if f is None:
            f = extract_features(view.image, level, cfg)
            view.features[level] = f
        m, _ = predict_mask(mlp, f)
        m_px = refine_mask(m, view.camera.width, view.camera.height,
                           cfg.dilation_kernel)
        ious.append(mask_iou(m_px, view.gt_mask))
    return float(np.mean(ious))


def evaluate_checkpoint(checkpoint_path, dataset, cfg, masked_metrics: bool = False):
    """Metrics record for a saved checkpoint; never mutates the file."""
    from .dataio import load_checkpoint

    state = load_checkpoint(checkpoint_path)
    gt_masks = None
    if masked_metrics and all(getattr(v, "gt_mask", None) is not None
                              for v in dataset.test_views):
        gt_masks = [v.gt_mask for v in dataset.test_views]
    p, s = test_view_metrics(state.gaussians, dataset.test_views, cfg, gt_masks)
    iou = train_mask_metrics(state.mlp, dataset.train_views, cfg)
    return MetricsRecord(psnr=p, ssim=s, mask_iou=iou)
