"""Checkpoints: a directory of ``<name>.t4`` tensors plus ``manifest.txt``.

Each manifest line is ``name<TAB>d0,d1,...`` with the parameter's true shape.
Tensors with fewer than four dims are stored left-padded with ones; five-dim
kernel banks (n, c_out, c_in, k, k) are stored as (n * c_out, c_in, k, k).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from sgdm.errors import ShapeError
from sgdm.tensor import load_t4, save_t4

MANIFEST = "manifest.txt"


def _as_4d(a: np.ndarray) -> np.ndarray:
    if a.ndim <= 4:
        return a.reshape((1,) * (4 - a.ndim) + a.shape)
    return a.reshape((-1,) + a.shape[-3:])


def save_checkpoint(directory: str | Path, arrays: dict[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype=np.float64)
        save_t4(directory / f"{name}.t4", _as_4d(a))
        lines.append(f"{name}\t{','.join(str(d) for d in a.shape)}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")


def read_manifest(directory: str | Path) -> dict[str, tuple[int, ...]]:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    shapes = {}
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, dims = line.split("\t")
        shapes[name] = tuple(int(d) for d in dims.split(",")) if dims else ()
    return shapes


def load_checkpoint(directory: str | Path) -> dict[str, np.ndarray]:
    directory = Path(directory)
    out = {}
    for name, shape in read_manifest(directory).items():
        out[name] = load_t4(directory / f"{name}.t4").reshape(shape)
    return out


def load_into(directory: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint values in place into the given (live) parameter arrays."""
    loaded = load_checkpoint(directory)
    if set(loaded) != set(arrays):
        missing, extra = set(arrays) - set(loaded), set(loaded) - set(arrays)
        raise ShapeError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, target in arrays.items():
        if target.shape != loaded[name].shape:
            raise ShapeError(f"{name}: checkpoint shape {loaded[name].shape} != model shape {target.shape}")
        target[...] = loaded[name]
