"""Runs a ViT-S/14 patch-feature backbone over dataset train images and
writes FMAP files the splatting trainer can load in external-feature mode.

Only precomputable captured-image features are exported; rendered-image
features change every training step and must come from the trainer's builtin
extractor indoors. The FMAP byte format is the bridge contract:
magic "FMAP", u32 LE version=1, u32 LE grid_h/grid_w/dim, then float32 LE
values with the channel index fastest.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
PATCH = 14
LEVEL_EDGE = {"low": 224, "high": 504}

# ImageNet channel statistics used by the backbone's released preprocessor.
IMAGE_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGE_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class WeightsMissingError(RuntimeError):
    pass


def write_fmap(path, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 3:
        raise ValueError(f"expected (grid_h, grid_w, dim), got {values.shape}")
    gh, gw, dim = values.shape
    with open(path, "wb") as f:
        f.write(FMAP_MAGIC)
        f.write(struct.pack("<IIII", FMAP_VERSION, gh, gw, dim))
        f.write(values.tobytes())


def load_backbone(weights_dir):
    import torch
    from transformers import Dinov2Model

    wd = Path(weights_dir)
    if not wd.is_dir() or not any(wd.glob("*.safetensors")) \
            and not any(wd.glob("*.bin")):
        raise WeightsMissingError(
            f"no backbone weights under {weights_dir}; download the ViT-S/14 "
            f"distilled checkpoint to that directory (config.json plus "
            f"model.safetensors), or create seeded test weights with "
            f"`featexport make-test-weights --out {weights_dir}`")
    model = Dinov2Model.from_pretrained(str(wd))
    model.eval()
    torch.set_grad_enabled(False)
    return model


def preprocess(image_path, edge: int) -> np.ndarray:
    img = Image.open(image_path).convert("RGB")
    img = img.resize((edge, edge), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - IMAGE_MEAN) / IMAGE_STD
    return arr.transpose(2, 0, 1)[None]  # (1, 3, edge, edge)


def extract_tokens(model, batch: np.ndarray) -> np.ndarray:
    import torch

    out = model(pixel_values=torch.from_numpy(batch)).last_hidden_state
    tokens = out[0, 1:].numpy()  # drop the CLS token
    grid = int(round(np.sqrt(tokens.shape[0])))
    if grid * grid != tokens.shape[0]:
        raise RuntimeError(f"non-square token count {tokens.shape[0]}")
    return tokens.reshape(grid, grid, -1)


def export(dataset_dir, level: str, out_dir, weights_dir) -> int:
    """Write one FMAP per train image; returns the number of skipped images."""
    if level not in LEVEL_EDGE:
        raise ValueError(f"level must be 'low' or 'high', got {level!r}")
    edge = LEVEL_EDGE[level]
    train = Path(dataset_dir) / "train"
    if not train.is_dir():
        raise FileNotFoundError(f"{train} is not a directory")
    images = sorted(train.glob("*.png"))
    if not images:
        raise FileNotFoundError(f"no PNG images under {train}")
    model = load_backbone(weights_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    skipped = 0
    for img_path in images:
        try:
            batch = preprocess(img_path, edge)
        except (OSError, ValueError) as e:
            log.warning("skipping unreadable image %s: %s", img_path, e)
            skipped += 1
            continue
        tokens = extract_tokens(model, batch)
        write_fmap(out / f"{img_path.stem}_{level}.fmap", tokens)
    return skipped


def make_test_weights(out_dir, seed: int = 0, hidden: int = 384,
                      layers: int = 2) -> None:
    """Create a small seeded random-init backbone for offline contract tests.

    The architecture matches ViT-S/14 token geometry (patch 14, width 384 by
    default) but with few layers and random weights — enough to exercise the
    full export path without downloading a checkpoint.
    """
    import torch
    from transformers import Dinov2Config, Dinov2Model

    torch.manual_seed(seed)
    cfg = Dinov2Config(hidden_size=hidden, num_hidden_layers=layers,
                       num_attention_heads=max(1, hidden // 64),
                       intermediate_size=hidden * 4, patch_size=PATCH,
                       image_size=LEVEL_EDGE["low"])
    model = Dinov2Model(cfg)
    model.eval()
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    model.save_pretrained(str(out_dir))
