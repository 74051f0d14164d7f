"""Command-line entry point.

Subcommands: gen, train, render, eval, ablate, sweep. Exit codes: 0 success,
1 runtime failure, 2 bad usage/configuration.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .core import TrainConfig
from .dataio import (ConfigError, DatasetFormatError, parse_config,
                     read_dataset, write_dataset)
from .scenegen import RENDER_CULL_SIGMA, SceneParams, generate_scene, render_dataset

log = logging.getLogger("desksplat")


def _setup(args) -> None:
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or os.environ.get("RSPL_THREADS")
    if threads and int(threads) != 1:
        log.info("requested %s threads; computation is single-threaded by "
                 "design for determinism", threads)


def _load_config(path, seed=None) -> TrainConfig:
    cfg = parse_config(path) if path else TrainConfig()
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    cfg.validate()
    return cfg


def cmd_gen(args) -> int:
    params = SceneParams(occlusion=args.occlusion, n_train_views=args.views,
                         image_size=args.size)
    scene = generate_scene(args.seed, params)
    bundle = render_dataset(scene)
    write_dataset(bundle, args.out)
    log.info("wrote dataset to %s (occlusion %.4f)", args.out,
             bundle.measured_occlusion)
    return 0


def cmd_train(args) -> int:
    from .trainer import AblationFlags, train

    cfg = _load_config(args.config, args.seed)
    flags = AblationFlags.from_tokens((args.flags or "mask,reg,mb,dg,densify").split(","))
    bundle = read_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train(bundle, cfg, flags, out_csv=out / "metrics.csv",
          out_checkpoint=out / "final.rspl", log_every=cfg.eval_interval)
    return 0


def cmd_render(args) -> int:
    from .dataio import load_checkpoint
    from .renderer import render

    state = load_checkpoint(args.checkpoint)
    bundle = read_dataset(args.data)
    cfg = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, view in enumerate(bundle.test_views):
        img, _ = render(state.gaussians, view.camera,
                        background=cfg.background_color, z_near=cfg.z_near,
                        cull_sigma=RENDER_CULL_SIGMA)
        arr = (np.clip(img, 0, 1) * 255.0).round().astype(np.uint8)
        Image.fromarray(arr).save(out / f"{k:04d}.png")
    log.info("rendered %d test views to %s", len(bundle.test_views), out)
    return 0


def cmd_eval(args) -> int:
    from .evaluate import evaluate_checkpoint

    cfg = _load_config(args.config)
    bundle = read_dataset(args.data)
    rec = evaluate_checkpoint(args.checkpoint, bundle, cfg,
                              masked_metrics=args.masked)
    print(f"psnr={rec.psnr:.4f} ssim={rec.ssim:.6f} mask_iou={rec.mask_iou:.4f}")
    return 0


def cmd_ablate(args) -> int:
    from .trainer import run_ablation_suite

    cfg = _load_config(args.config, args.seed)
    bundle = read_dataset(args.data)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    report = run_ablation_suite(bundle, cfg, seeds=seeds)
    Path(args.out).write_text("\n".join(report["csv_rows"]) + "\n")
    for name, row in report["summary"].items():
        print(f"{name}: psnr {row['psnr_mean']:.3f} (+-{row['psnr_range']/2:.3f}) "
              f"iou {row['iou_mean']:.3f}")
    for check, ok in report["checks"].items():
        print(f"check {check}: {'pass' if ok else 'FAIL'}")
    return 0 if all(report["checks"].values()) else 1


def cmd_sweep(args) -> int:
    from .trainer import sweep_densify_start

    cfg = _load_config(args.config, args.seed)
    bundle = read_dataset(args.data)
    starts = [int(s) for s in args.starts.split(",")]
    report = sweep_densify_start(bundle, cfg, starts, with_mask=args.mask)
    Path(args.out).write_text("\n".join(report["csv_rows"]) + "\n")
    for start, p in report["final_psnr"].items():
        print(f"start={start} final_psnr={p:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="desksplat",
                                 description="Transient-robust Gaussian "
                                 "splatting on synthetic desk-scale scenes")
    ap.add_argument("--verbose", action="store_true")
    ap.add_argument("--threads", type=int, default=None,
                    help="accepted for compatibility; execution is single-threaded")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--occlusion", type=float, default=0.2)
    g.add_argument("--views", type=int, default=32)
    g.add_argument("--size", type=int, default=128)
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--flags", default=None,
                   help="comma list of mask,dg,mb,reg,densify (default: all)")
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("render", help="render test views from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True,
                   help="dataset directory supplying the cameras")
    r.add_argument("--out", required=True)
    r.add_argument("--config", default=None)
    r.set_defaults(fn=cmd_render)

    e = sub.add_parser("eval", help="metrics for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--masked", action="store_true",
                   help="exclude transient pixels from PSNR when masks exist")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="run the component ablation suite")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--seeds", default="0,1,2")
    a.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("sweep", help="sweep densification start iterations")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--starts", required=True, help="comma list, e.g. 500,2000,4000")
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--mask", action="store_true",
                   help="train with the transient-mask machinery enabled")
    s.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    _setup(args)
    try:
        return args.fn(args)
    except (ConfigError, DatasetFormatError, ValueError) as e:
        log.error("%s", e)
        return 2
    except Exception as e:  # pragma: no cover - defensive
        log.error("failed: %s", e, exc_info=args.verbose)
        return 1


if __name__ == "__main__":
    sys.exit(main())
