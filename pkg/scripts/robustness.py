"""Train one model, then evaluate it with 0%, 75% and 87.5% of each test cloud removed by FPS.

    python3 scripts/robustness.py --mode full --epochs 40
"""
import argparse

import numpy as np

from vvnet import experiments as ex
from vvnet.segnet import MODES, TrainConfig
from vvnet.voxelizer import GridSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mode", default="full", choices=MODES)
    ap.add_argument("--n-per-kind", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--ratios", nargs="+", type=float, default=[0.0, 0.75, 0.875])
    args = ap.parse_args()

    grid = GridSpec(8, 8, 8, k=4)
    train, test = ex.split(ex.synth_dataset(args.n_per_kind, 512, 0.005, seed=0))
    vae = None
    if args.mode in ("full", "rbf_vae_only"):
        blocks = ex.collect_blocks(train.clouds, grid)
        blocks = blocks[np.random.default_rng(0).permutation(len(blocks))[:10_000]]
        vae = ex.fit_vae(blocks, blocks[:500], epochs=10).model
    cfg = ex.default_seg_config(args.mode, grid, gconv_channels=(4, 4))
    run = ex.fit_segmenter(train, test, cfg, TrainConfig(args.epochs), vae)
    print("missing_ratio\taccuracy\tinstance_miou")
    for r, rep in ex.robustness_sweep(run.model, test, args.ratios).items():
        print(f"{r:g}\t{rep.overall_accuracy:.4f}\t{rep.instance_miou:.4f}")


if __name__ == "__main__":
    main()
