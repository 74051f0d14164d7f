"""Patch-feature maps and the feature-similarity mask target.

The built-in extractor replaces a pretrained backbone with 16 hand-crafted
per-patch statistics; externally produced features enter through the FMAP
binary format and are interchangeable downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import TrainConfig
from .imageops import bilinear_resize

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1

LUMA = np.array([0.299, 0.587, 0.114])


class FeatureFormatError(ValueError):
    pass


@dataclass
class FeatureMap:
    values: np.ndarray  # (grid_h, grid_w, dim)
    level: str          # "low" | "high"
    source: str = "builtin"

    @property
    def grid_h(self) -> int:
        return self.values.shape[0]

    @property
    def grid_w(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


@dataclass
class CosineMap:
    values: np.ndarray  # (grid_h, grid_w) in [0, 1]
    zero_norm_count: int = 0

    @property
    def grid_h(self) -> int:
        return self.values.shape[0]

    @property
    def grid_w(self) -> int:
        return self.values.shape[1]


def level_edge(level: str, cfg: TrainConfig) -> int:
    if level == "low":
        return cfg.low_res_edge
    if level == "high":
        return cfg.high_res_edge
    raise ValueError(f"unknown resolution level {level!r}")


def extract_features(img: np.ndarray, level: str, cfg: TrainConfig) -> FeatureMap:
    """Built-in extractor: 16-dim per-patch statistics at a resolution level.

    Per patch: mean RGB (3), std RGB (3), mean |dx| and |dy| of luminance
    (2), and an 8-bin luminance histogram.
    """
    p = cfg.patch_size
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("empty image")
    edge = level_edge(level, cfg)
    if edge < p:
        raise ValueError(f"level edge {edge} smaller than one patch ({p})")
    im = bilinear_resize(img, edge, edge)
    g = edge // p
    patches = im.reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4)  # (g, g, p, p, 3)

    mean_rgb = patches.mean(axis=(2, 3))
    std_rgb = patches.std(axis=(2, 3))
    lum = patches @ LUMA                                           # (g, g, p, p)
    gx = np.abs(np.diff(lum, axis=3)).mean(axis=(2, 3))
    gy = np.abs(np.diff(lum, axis=2)).mean(axis=(2, 3))
    bins = np.clip((lum * 8).astype(np.int64), 0, 7)
    hist = np.zeros((g, g, 8), dtype=np.float64)
    flat = bins.reshape(g, g, -1)
    for b in range(8):
        hist[:, :, b] = (flat == b).mean(axis=2)

    values = np.concatenate([mean_rgb, std_rgb, gx[..., None], gy[..., None], hist],
                            axis=2)
    return FeatureMap(values=values, level=level, source="builtin")


def cosine_mask(f_gt: FeatureMap, f_render: FeatureMap) -> CosineMap:
    """max(2 cos(f_gt, f_render) - 1, 0) per patch; zero-norm patches map to 0."""
    a, b = f_gt.values, f_render.values
    if a.shape != b.shape:
        raise ValueError(f"feature grids disagree: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=2)
    nb = np.linalg.norm(b, axis=2)
    bad = (na == 0) | (nb == 0)
    denom = np.where(bad, 1.0, na * nb)
    cos = (a * b).sum(axis=2) / denom
    cos = np.where(bad, 0.0, cos)
    return CosineMap(values=np.maximum(2.0 * cos - 1.0, 0.0),
                     zero_norm_count=int(bad.sum()))


def write_feature_map(fm: FeatureMap, path) -> None:
    gh, gw, d = fm.values.shape
    with open(path, "wb") as f:
        f.write(FMAP_MAGIC)
        f.write(struct.pack("<IIII", FMAP_VERSION, gh, gw, d))
        f.write(np.ascontiguousarray(fm.values, dtype="<f4").tobytes())


def load_feature_map(path, level: str = "low") -> FeatureMap:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != FMAP_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 20:
        raise FeatureFormatError(f"{path}: truncated header")
    version, gh, gw, d = struct.unpack("<IIII", blob[4:20])
    if version != FMAP_VERSION:
        raise FeatureFormatError(f"{path}: unsupported FMAP version {version}")
    payload = np.frombuffer(blob, dtype="<f4", offset=20)
    if payload.size != gh * gw * d:
        raise FeatureFormatError(
            f"{path}: payload has {payload.size} floats, header declares {gh * gw * d}")
    values = payload.reshape(gh, gw, d).astype(np.float64)
    return FeatureMap(values=values, level=level, source="external")
