#!/usr/bin/env python3
"""Densification-start sweep: trains with early/mid/late growth starts, with
and without the transient mask, and reports final clean-test PSNR per
configuration."""

import argparse

from desksplat.core import TrainConfig
from desksplat.scenegen import SceneParams, generate_scene, render_dataset
from desksplat.trainer import sweep_densify_start


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--starts", default="500,2000,4000")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--occlusion", type=float, default=0.2)
    ap.add_argument("--scene-seed", type=int, default=100)
    ap.add_argument("--out-prefix", default="start_sweep")
    args = ap.parse_args()

    bundle = render_dataset(generate_scene(
        args.scene_seed, SceneParams(occlusion=args.occlusion)))
    starts = [int(s) for s in args.starts.split(",")]
    cfg = TrainConfig(seed=args.seed)
    for with_mask in (False, True):
        tag = "mask" if with_mask else "nomask"
        report = sweep_densify_start(bundle, cfg, starts, with_mask=with_mask)
        with open(f"{args.out_prefix}_{tag}.csv", "w") as f:
            f.write("\n".join(report["csv_rows"]) + "\n")
        for start, p in sorted(report["final_psnr"].items()):
            print(f"{tag} start={start} final_psnr={p:.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
