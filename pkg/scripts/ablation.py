"""Train every voxel-branch mode on one synthetic split and print test metrics.

    python3 scripts/ablation.py --epochs 40 --seeds 0 1
"""
import argparse
import logging

import numpy as np

from vvnet import experiments as ex
from vvnet.segnet import MODES, TrainConfig
from vvnet.voxelizer import GridSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-per-kind", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--channels", default="4,4")
    ap.add_argument("--modes", nargs="+", default=list(MODES))
    ap.add_argument("--seeds", nargs="+", type=int, default=[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    grid = GridSpec(8, 8, 8, k=4)
    train, test = ex.split(ex.synth_dataset(args.n_per_kind, 512, 0.005, seed=0))
    blocks = ex.collect_blocks(train.clouds, grid)
    blocks = blocks[np.random.default_rng(0).permutation(len(blocks))[:10_000]]
    vae = ex.fit_vae(blocks, ex.collect_blocks(test.clouds, grid), epochs=10).model
    channels = tuple(int(c) for c in args.channels.split(","))
    print("mode\tseed\taccuracy\tinstance_miou\tseconds")
    for seed in args.seeds:
        for mode in args.modes:
            cfg = ex.default_seg_config(mode, grid, gconv_channels=channels)
            run = ex.fit_segmenter(train, test, cfg, TrainConfig(args.epochs, args.lr, 8, seed),
                                   vae, seed)
            print(f"{mode}\t{seed}\t{run.test.overall_accuracy:.4f}\t"
                  f"{run.test.instance_miou:.4f}\t{run.seconds:.0f}", flush=True)


if __name__ == "__main__":
    main()
