"""Persistence: dataset directory layout, RSPL binary checkpoints, and the
plain-text config format. All multi-byte integers are little-endian; float
payloads are f64. Images are 8-bit PNG; quantization happens only here."""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .core import Camera, GaussianSet, TrainConfig, CONFIG_FIELD_NAMES
from .imageops import dequantize_u8, quantize_u8

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RSPL"
CHECKPOINT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


class CheckpointFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- dataset ---

def _camera_line(view_id: int, cam: Camera) -> str:
    vals = [cam.fx, cam.fy, cam.cx, cam.cy]
    fields = [str(view_id)] + [repr(float(v)) for v in vals]
    fields += [str(cam.width), str(cam.height)]
    fields += [repr(float(v)) for v in cam.rotation.ravel()]
    fields += [repr(float(v)) for v in cam.translation]
    return " ".join(fields)


def write_dataset(bundle, out_dir) -> None:
    """Write the ASCII + PNG dataset layout. View ids are global; a view's
    image lives in train/ or test/ under its zero-padded id."""
    out = Path(out_dir)
    for sub in ("train", "train_mask", "test"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    vid = 0
    for tv in bundle.train_views:
        lines.append(_camera_line(vid, tv.camera))
        Image.fromarray(quantize_u8(tv.image)).save(out / "train" / f"{vid:04d}.png")
        Image.fromarray(quantize_u8(tv.gt_mask)).save(out / "train_mask" / f"{vid:04d}.png")
        vid += 1
    for ev in bundle.test_views:
        lines.append(_camera_line(vid, ev.camera))
        Image.fromarray(quantize_u8(ev.image)).save(out / "test" / f"{vid:04d}.png")
        vid += 1
    (out / "cameras.txt").write_text("\n".join(lines) + "\n")
    pts = [" ".join(repr(float(v)) for v in (x, y, z, r, g, b))
           for (x, y, z), (r, g, b) in zip(bundle.points_xyz, bundle.points_rgb)]
    (out / "points.txt").write_text("\n".join(pts) + "\n")


def _parse_camera_line(line: str, lineno: int, path) -> tuple:
    parts = line.split()
    if len(parts) != 19:
        raise DatasetFormatError(
            f"{path}:{lineno}: expected 19 fields (id fx fy cx cy w h R[9] t[3]), "
            f"got {len(parts)}")
    try:
        vid = int(parts[0])
        fx, fy, cx, cy = map(float, parts[1:5])
        w, h = int(parts[5]), int(parts[6])
        R = np.array(list(map(float, parts[7:16]))).reshape(3, 3)
        t = np.array(list(map(float, parts[16:19])))
    except ValueError as e:
        raise DatasetFormatError(f"{path}:{lineno}: malformed value ({e})") from e
    drift = np.abs(R @ R.T - np.eye(3)).max()
    if drift > 1e-6:
        raise DatasetFormatError(f"{path}:{lineno}: rotation drift {drift:.3g} too large")
    if drift > 1e-9:
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        log.info("re-orthonormalized camera %d (drift %.3g)", vid, drift)
    return vid, Camera(fx, fy, cx, cy, R, t, w, h)


def _load_png(path, expect_hw=None, channels=3):
    arr = np.asarray(Image.open(path))
    if channels == 3 and (arr.ndim != 3 or arr.shape[2] != 3):
        raise DatasetFormatError(f"{path}: expected an RGB image, got shape {arr.shape}")
    if channels == 1 and arr.ndim != 2:
        raise DatasetFormatError(f"{path}: expected a grayscale mask, got shape {arr.shape}")
    if expect_hw is not None and arr.shape[:2] != expect_hw:
        raise DatasetFormatError(
            f"{path}: dimensions {arr.shape[:2]} do not match camera {expect_hw}")
    return dequantize_u8(arr)


def read_dataset(data_dir):
    """Read and validate the on-disk layout into a DatasetBundle."""
    from .scenegen import DatasetBundle, TestView, TrainView

    root = Path(data_dir)
    cam_file = root / "cameras.txt"
    if not cam_file.exists():
        raise DatasetFormatError(f"missing camera file: {cam_file}")
    cams = {}
    for lineno, line in enumerate(cam_file.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        vid, cam = _parse_camera_line(line, lineno, cam_file)
        if vid in cams:
            raise DatasetFormatError(f"{cam_file}:{lineno}: duplicate view id {vid}")
        cams[vid] = cam

    train_views, test_views = [], []
    for vid in sorted(cams):
        cam = cams[vid]
        hw = (cam.height, cam.width)
        train_png = root / "train" / f"{vid:04d}.png"
        test_png = root / "test" / f"{vid:04d}.png"
        if train_png.exists():
            img = _load_png(train_png, hw, 3)
            mask_png = root / "train_mask" / f"{vid:04d}.png"
            if not mask_png.exists():
                raise DatasetFormatError(f"missing mask for view {vid}: {mask_png}")
            mask = _load_png(mask_png, hw, 1)
            train_views.append(TrainView(camera=cam, image=img, gt_mask=mask))
        elif test_png.exists():
            test_views.append(TestView(camera=cam, image=_load_png(test_png, hw, 3)))
        else:
            raise DatasetFormatError(f"view {vid}: no image in train/ or test/")

    pts_file = root / "points.txt"
    if not pts_file.exists():
        raise DatasetFormatError(f"missing point file: {pts_file}")
    xyz, rgb = [], []
    for lineno, line in enumerate(pts_file.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DatasetFormatError(f"{pts_file}:{lineno}: expected 6 fields")
        vals = list(map(float, parts))
        xyz.append(vals[:3])
        rgb.append(vals[3:])
    if not train_views:
        raise DatasetFormatError(f"{data_dir}: no training views found")
    return DatasetBundle(train_views=train_views, test_views=test_views,
                         points_xyz=np.array(xyz), points_rgb=np.array(rgb))


# ------------------------------------------------------------- checkpoint ---

def _write_arr(f, arr: np.ndarray) -> None:
    flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
    f.write(struct.pack("<I", flat.size))
    f.write(flat.tobytes())


def _read_arr(buf, off, shape=None):
    if off + 4 > len(buf):
        raise CheckpointFormatError("truncated checkpoint (array header)")
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    end = off + 8 * n
    if end > len(buf):
        raise CheckpointFormatError("truncated checkpoint (array payload)")
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).copy()
    if shape is not None:
        arr = arr.reshape(shape)
    return arr, end


def _rng_state_words(rng: np.random.Generator):
    st = rng.bit_generator.state
    s = st["state"]["state"]
    inc = st["state"]["inc"]
    words = []
    for big in (s, inc):
        for k in range(4):
            words.append((big >> (32 * k)) & 0xFFFFFFFF)
    words.append(1 if st["has_uint32"] else 0)
    words.append(st["uinteger"])
    return words


def _rng_from_words(words):
    s = sum(int(words[k]) << (32 * k) for k in range(4))
    inc = sum(int(words[4 + k]) << (32 * k) for k in range(4))
    bg = np.random.PCG64()
    bg.state = {"bit_generator": "PCG64",
                "state": {"state": s, "inc": inc},
                "has_uint32": int(words[8]), "uinteger": int(words[9])}
    return np.random.Generator(bg)


GAUSS_FIELDS = ("positions", "log_scales", "rotations", "opacity_logits", "colors")


def save_checkpoint(state, path) -> None:
    g = state.gaussians
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<IIII", state.iteration, state.seed & 0xFFFFFFFF,
                            g.count, g.sh_bands))
        for name in GAUSS_FIELDS:
            _write_arr(f, getattr(g, name))
        f.write(struct.pack("<I", state.adam_step))
        for name in GAUSS_FIELDS:
            _write_arr(f, state.adam_m[name])
            _write_arr(f, state.adam_v[name])
        mlp = state.mlp
        f.write(struct.pack("<III", mlp.dim_in, mlp.w1.shape[1], mlp.step))
        f.write(struct.pack("<I", mlp.skipped_steps))
        for _, p in mlp.param_items():
            _write_arr(f, p)
        for name, _ in mlp.param_items():
            _write_arr(f, mlp.m[name])
            _write_arr(f, mlp.v[name])
        f.write(struct.pack("<10I", *_rng_state_words(state.rng)))


def load_checkpoint(path):
    from .maskmlp import MaskMLP
    from .trainer import TrainState

    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {buf[:4]!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"{path}: unsupported checkpoint version {version} (reader supports "
            f"{CHECKPOINT_VERSION})")
    iteration, seed, n, sh_bands = struct.unpack_from("<IIII", buf, 8)
    off = 24
    shapes = {"positions": (n, 3), "log_scales": (n, 3), "rotations": (n, 4),
              "opacity_logits": (n,), "colors": (n, sh_bands, 3)}
    arrays = {}
    for name in GAUSS_FIELDS:
        arrays[name], off = _read_arr(buf, off, shapes[name])
    g = GaussianSet(**arrays)
    (adam_step,) = struct.unpack_from("<I", buf, off)
    off += 4
    adam_m, adam_v = {}, {}
    for name in GAUSS_FIELDS:
        adam_m[name], off = _read_arr(buf, off, shapes[name])
        adam_v[name], off = _read_arr(buf, off, shapes[name])
    dim_in, hidden, mlp_step = struct.unpack_from("<III", buf, off)
    off += 12
    (skipped,) = struct.unpack_from("<I", buf, off)
    off += 4
    w1, off = _read_arr(buf, off, (dim_in, hidden))
    b1, off = _read_arr(buf, off, (hidden,))
    w2, off = _read_arr(buf, off, (hidden,))
    b2, off = _read_arr(buf, off, (1,))
    mlp = MaskMLP(w1, b1, w2, float(b2[0]), step=mlp_step, skipped_steps=skipped)
    mshapes = [("w1", (dim_in, hidden)), ("b1", (hidden,)), ("w2", (hidden,)),
               ("b2", (1,))]
    for name, shape in mshapes:
        mlp.m[name], off = _read_arr(buf, off, shape)
        mlp.v[name], off = _read_arr(buf, off, shape)
    if off + 40 > len(buf):
        raise CheckpointFormatError(f"{path}: truncated RNG state")
    words = struct.unpack_from("<10I", buf, off)
    rng = _rng_from_words(words)
    return TrainState(gaussians=g, adam_m=adam_m, adam_v=adam_v, adam_step=adam_step,
                      mlp=mlp, stats=None, iteration=iteration, seed=seed, rng=rng)


# ------------------------------------------------------------------ config ---

_TUPLE_KEYS = {"background_color", "clusters_per_view"}


def parse_config(path) -> TrainConfig:
    """Plain `key = value` lines; '#' starts a comment; unknown and duplicate
    keys are rejected; unset keys take their defaults."""
    text = Path(path).read_text()
    seen = {}
    values = {}
    defaults = TrainConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in CONFIG_FIELD_NAMES:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} "
                              f"(first set on line {seen[key]})")
        seen[key] = lineno
        default = getattr(defaults, key)
        try:
            if key in _TUPLE_KEYS:
                values[key] = tuple(float(x) for x in val.split(","))
            elif isinstance(default, bool):
                values[key] = val.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                values[key] = int(val)
            elif isinstance(default, float):
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: cannot parse value for {key!r}: {e}")
    cfg = TrainConfig(**values)
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(f"{path}: invalid configuration: {e}") from e
    return cfg
