"""Per-image transient-mask predictor: two linear layers over patch features,
sigmoid output, with its own Adam state and manual backward."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import sigmoid
from .features import FeatureMap
from .imageops import bilinear_resize, grayscale_erode

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8

# Output bias starts positive so initial masks lean static (~0.88), which
# cooperates with the decaying keep-everything regularizer.
INIT_OUT_BIAS = 2.0


@dataclass
class MaskMLP:
    w1: np.ndarray  # (dim_in, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    m: dict = field(default_factory=dict)  # Adam first moments
    v: dict = field(default_factory=dict)  # Adam second moments
    step: int = 0
    skipped_steps: int = 0

    @property
    def dim_in(self) -> int:
        return self.w1.shape[0]

    def param_items(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2),
                ("b2", np.atleast_1d(np.float64(self.b2)))]

    def copy(self) -> "MaskMLP":
        return MaskMLP(self.w1.copy(), self.b1.copy(), self.w2.copy(), float(self.b2),
                       {k: v.copy() for k, v in self.m.items()},
                       {k: v.copy() for k, v in self.v.items()},
                       self.step, self.skipped_steps)


def init_mask_mlp(dim_in: int, hidden: int, rng: np.random.Generator) -> MaskMLP:
    lim1 = 1.0 / np.sqrt(dim_in)
    lim2 = 1.0 / np.sqrt(hidden)
    mlp = MaskMLP(
        w1=rng.uniform(-lim1, lim1, (dim_in, hidden)),
        b1=rng.uniform(-lim1, lim1, hidden),
        w2=rng.uniform(-lim2, lim2, hidden),
        b2=INIT_OUT_BIAS,
    )
    for name, p in mlp.param_items():
        mlp.m[name] = np.zeros_like(p)
        mlp.v[name] = np.zeros_like(p)
    return mlp


def predict_mask(mlp: MaskMLP, f: FeatureMap):
    """Patch-resolution static-confidence mask plus backward cache."""
    x = f.values
    if x.shape[2] != mlp.dim_in:
        raise ValueError(f"feature dim {x.shape[2]} != MLP input dim {mlp.dim_in}")
    pre = x @ mlp.w1 + mlp.b1       # (gh, gw, hidden)
    h = np.maximum(pre, 0.0)
    z = h @ mlp.w2 + mlp.b2
    mask = sigmoid(z)
    cache = (x, pre, h, mask)
    return mask, cache


def predict_mask_backward(mlp: MaskMLP, cache, d_mask: np.ndarray) -> dict:
    """Gradients of a scalar loss w.r.t. the MLP weights, given dL/dmask."""
    x, pre, h, mask = cache
    dz = d_mask * mask * (1.0 - mask)
    dh = dz[..., None] * mlp.w2
    dpre = dh * (pre > 0)
    return {
        "w1": np.einsum("ijd,ijh->dh", x, dpre),
        "b1": dpre.sum(axis=(0, 1)),
        "w2": np.einsum("ijh,ij->h", h, dz),
        "b2": np.atleast_1d(dz.sum()),
    }


def refine_mask(patch_mask: np.ndarray, target_w: int, target_h: int,
                kernel: int) -> np.ndarray:
    """Bilinear upsample to pixel resolution, then erode static confidence so
    transient regions expand (= dilation of the transient indicator)."""
    if kernel % 2 == 0:
        raise ValueError("refinement kernel must be odd")
    up = bilinear_resize(patch_mask, target_h, target_w)
    return grayscale_erode(up, kernel)


def mlp_adam_step(mlp: MaskMLP, grads: dict, lr: float) -> MaskMLP:
    """Standard Adam update; skips (and counts) steps with non-finite grads."""
    for name, _ in mlp.param_items():
        if name not in grads:
            raise ValueError(f"missing gradient for {name}")
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        mlp.skipped_steps += 1
        return mlp
    mlp.step += 1
    t = mlp.step
    bc1 = 1.0 - ADAM_B1**t
    bc2 = 1.0 - ADAM_B2**t
    for name, p in mlp.param_items():
        g = np.asarray(grads[name], dtype=np.float64).reshape(p.shape)
        mlp.m[name] = ADAM_B1 * mlp.m[name] + (1 - ADAM_B1) * g
        mlp.v[name] = ADAM_B2 * mlp.v[name] + (1 - ADAM_B2) * g * g
        upd = lr * (mlp.m[name] / bc1) / (np.sqrt(mlp.v[name] / bc2) + ADAM_EPS)
        if name == "b2":
            mlp.b2 = float((p - upd)[0])
        else:
            p -= upd
    return mlp
