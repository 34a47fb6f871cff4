"""Dense (B, C, H, W) float64 tensors and the channel/pooling helpers built on them.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and ndim 4.  The
flat row-major layout of such an array is exactly the ``((b*C + c)*H + h)*W + w``
indexing used by the ``.t4`` file format below.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from sgdm.errors import InvalidConfigError, ShapeError

RATIO_TOL = 1e-9


def as_tensor(x, dims: Sequence[int] | None = None) -> np.ndarray:
    """Return ``x`` as a float64 4-D array, optionally reshaped to ``dims``."""
    arr = np.asarray(x, dtype=np.float64)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if arr.size != int(np.prod(dims)):
            raise ShapeError(f"data length {arr.size} does not match dims {dims}")
        arr = arr.reshape(dims)
    if arr.ndim != 4:
        raise ShapeError(f"expected a 4-D tensor, got shape {arr.shape}")
    return arr


def flat_index(dims: Sequence[int], b: int, c: int, h: int, w: int) -> int:
    _, C, H, W = dims
    return ((b * C + c) * H + h) * W + w


@dataclass
class TensorGrad:
    """A parameter value paired with its accumulated gradient.

    ``value`` is shared by reference with whatever owns the parameter, so an
    in-place optimizer step on ``value`` is visible to the owner.
    """

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ShapeError(f"grad shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def channel_sizes(channels: int, ratios: Sequence[float | Fraction]) -> list[int]:
    """Channel count per group: floor for all but the last group, remainder to the last."""
    if not ratios:
        raise InvalidConfigError("at least one ratio is required")
    if any(r < 0 for r in ratios):
        raise InvalidConfigError(f"negative ratio in {list(ratios)}")
    if abs(float(sum(ratios)) - 1.0) > RATIO_TOL:
        raise InvalidConfigError(f"ratios {list(ratios)} sum to {float(sum(ratios))}, not 1")
    # the small epsilon keeps e.g. 0.3 * 10 from flooring to 2
    sizes = [int(np.floor(float(r) * channels + RATIO_TOL)) for r in ratios[:-1]]
    sizes.append(channels - sum(sizes))
    if any(s <= 0 for s in sizes):
        raise InvalidConfigError(f"ratios {list(ratios)} leave an empty group for {channels} channels: {sizes}")
    return sizes


def split_sizes(x: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    """Split along channels into consecutive blocks of the given sizes (zero-size blocks allowed)."""
    x = as_tensor(x)
    if sum(sizes) != x.shape[1] or any(s < 0 for s in sizes):
        raise ShapeError(f"sizes {list(sizes)} do not partition {x.shape[1]} channels")
    bounds = np.cumsum([0, *sizes])
    return [x[:, bounds[i] : bounds[i + 1]] for i in range(len(sizes))]


def split_channels(x: np.ndarray, ratios: Sequence[float | Fraction]) -> list[np.ndarray]:
    x = as_tensor(x)
    return split_sizes(x, channel_sizes(x.shape[1], ratios))


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("nothing to concatenate")
    parts = [as_tensor(p) for p in parts]
    b, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (b, h, w):
            raise ShapeError(f"cannot concatenate {p.shape} with batch/spatial dims {(b, h, w)}")
    return np.concatenate(parts, axis=1)


def reshape_kernel(v, rows: int, cols: int) -> np.ndarray:
    """Row-major fold of a flat array into a ``rows x cols`` kernel."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if rows * cols != v.size:
        raise ShapeError(f"cannot reshape {v.size} values into {rows}x{cols}")
    return v.reshape(rows, cols).copy()


def fold_width_strip(v, k: int) -> np.ndarray:
    """Fold a 1 x k*k strip (values along width) row-major into k x k.

    Accepts leading batch dims: ``v`` of shape (..., k*k) maps to (..., k, k).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != k * k:
        raise ShapeError(f"strip of length {v.shape[-1]} cannot fold to {k}x{k}")
    return v.reshape(*v.shape[:-1], k, k)


def fold_height_strip(v, k: int) -> np.ndarray:
    """Fold a k*k x 1 strip (values along height) into k x k, column by column.

    Consecutive height taps run down a column, so the strip keeps its vertical
    orientation after folding.
    """
    return np.swapaxes(fold_width_strip(v, k), -1, -2)


def gap_height(x: np.ndarray) -> np.ndarray:
    """Mean over H: (B, C, H, W) -> (B, C, 1, W)."""
    x = as_tensor(x)
    if x.shape[2] < 1:
        raise ShapeError("cannot average over an empty height dimension")
    return x.mean(axis=2, keepdims=True)


def gap_width(x: np.ndarray) -> np.ndarray:
    """Mean over W: (B, C, H, W) -> (B, C, H, 1)."""
    x = as_tensor(x)
    if x.shape[3] < 1:
        raise ShapeError("cannot average over an empty width dimension")
    return x.mean(axis=3, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --- .t4 files -------------------------------------------------------------

_HEADER = struct.Struct("<4I")


def save_t4(path: str | Path, x: np.ndarray) -> None:
    x = as_tensor(x)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*x.shape))
        fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def load_t4(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ShapeError(f"{path}: truncated header")
    dims = _HEADER.unpack_from(raw)
    n = int(np.prod(dims))
    body = raw[_HEADER.size :]
    if len(body) != 8 * n:
        raise ShapeError(f"{path}: expected {n} float64 values for dims {dims}, found {len(body) / 8:g}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(dims)
