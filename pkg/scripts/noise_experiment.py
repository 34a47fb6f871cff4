"""Train every variant for several seeds, then evaluate accuracy under Gaussian input noise.

Usage: python3 scripts/noise_experiment.py [--out runs] [--seeds 42,43,44,45,46] [--epochs 20]
"""

import argparse
from pathlib import Path

from sgdm import cli
from sgdm.nn import VARIANTS


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs")
    p.add_argument("--seeds", default="42,43,44,45,46")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--sigmas", default=cli.DEFAULT_SIGMAS)
    args = p.parse_args(argv)
    runs = []
    for seed in (int(s) for s in args.seeds.split(",")):
        for variant in VARIANTS:
            run = Path(args.out) / f"{variant}-seed{seed}"
            if not (run / "manifest.txt").exists():
                cli.main(["train", "--variant", variant, "--seed", str(seed), "--epochs", str(args.epochs),
                          "--out", args.out, "--quiet"])
            runs.append(str(run))
    return cli.main(["noise-eval", "--checkpoint", *runs, "--sigmas", args.sigmas, "--out", args.out])


if __name__ == "__main__":
    raise SystemExit(main())
