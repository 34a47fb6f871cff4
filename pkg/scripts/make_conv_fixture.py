"""Freeze the loop-oracle convolution fixture used by tests/test_conv.py.

Only the test oracle is used here, never the package, so the stored output is
an independent reference.
"""

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))
from oracles import conv2d_ref  # noqa: E402


def main():
    rng = np.random.default_rng([2024, 0])
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    y = conv2d_ref(x, w, b, stride=1, pad=(1, 1))
    out = ROOT / "tests" / "fixtures" / "conv_2x3x8x8.npz"
    np.savez(out, x=x, w=w, b=b, y=y)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
