"""Twin runs that differ only in the RBF kernel.

    python3 scripts/kernel_compare.py --mode rbf_vae_only --epochs 40
"""
import argparse

from vvnet import experiments as ex
from vvnet.segnet import TrainConfig
from vvnet.voxelizer import GridSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mode", default="rbf_vae_only", choices=["full", "rbf_vae_only"])
    ap.add_argument("--n-per-kind", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    train, test = ex.split(ex.synth_dataset(args.n_per_kind, 512, 0.005, seed=0))
    cfg = ex.default_seg_config(args.mode, GridSpec(8, 8, 8, k=4, sigma=args.sigma))
    runs = ex.kernel_compare(train, test, cfg, TrainConfig(args.epochs, 1e-3, 8, args.seed),
                             seed=args.seed)
    print("kernel\taccuracy\tinstance_miou")
    for kern, run in runs.items():
        print(f"{kern}\t{run.test.overall_accuracy:.4f}\t{run.test.instance_miou:.4f}")


if __name__ == "__main__":
    main()
