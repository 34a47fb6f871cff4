"""Print the three ablation sweeps (razor ratio, spatial kernel, split ratio) as cost tables.

Usage: python3 scripts/ablation_tables.py [--out DIR] [--train --epochs N]
"""

import sys

from sgdm import cli


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    for param in ("r_razor", "spatial_k", "r_split"):
        print(f"\n== {param} ==")
        cli.main(["sweep", "--param", param, *argv])


if __name__ == "__main__":
    main()
