"""Static 2-D convolution: a direct-loop reference path, an im2col + matmul path, and backward passes.

Weights follow the (c_out, c_in // groups, k_h, k_w) layout.  Borders are zero padded.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from sgdm.errors import InvalidConfigError, ShapeError
from sgdm.tensor import as_tensor


@dataclass
class ConvKernel:
    weights: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4-D, got {self.weights.shape}")
        c_out, c_in_g, kh, kw = self.weights.shape
        if min(c_out, c_in_g, kh, kw) < 1:
            raise ShapeError(f"degenerate conv weights {self.weights.shape}")
        if self.groups < 1 or c_out % self.groups:
            raise InvalidConfigError(f"c_out={c_out} not divisible by groups={self.groups}")
        if self.stride < 1:
            raise InvalidConfigError(f"stride must be positive, got {self.stride}")
        self.padding = (int(self.padding[0]), int(self.padding[1]))
        if min(self.padding) < 0:
            raise InvalidConfigError(f"negative padding {self.padding}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (c_out,):
                raise ShapeError(f"bias shape {self.bias.shape} != ({c_out},)")

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1] * self.groups

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    @classmethod
    def same(cls, weights, bias=None, groups: int = 1) -> "ConvKernel":
        """Stride-1 kernel padded so odd kernels preserve spatial size."""
        weights = np.asarray(weights, dtype=np.float64)
        kh, kw = weights.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise InvalidConfigError(f"same-size padding needs odd kernel dims, got {kh}x{kw}")
        return cls(weights, bias, stride=1, padding=((kh - 1) // 2, (kw - 1) // 2), groups=groups)


def output_size(h: int, w: int, k: ConvKernel) -> tuple[int, int]:
    kh, kw = k.kernel_size
    ph, pw = k.padding
    num_h, num_w = h + 2 * ph - kh, w + 2 * pw - kw
    if num_h < 0 or num_w < 0 or num_h % k.stride or num_w % k.stride:
        raise ShapeError(f"input {h}x{w} with kernel {kh}x{kw}, padding {k.padding}, stride {k.stride} "
                         "does not give an integer output size")
    return num_h // k.stride + 1, num_w // k.stride + 1


def _check(x: np.ndarray, k: ConvKernel) -> tuple[np.ndarray, int, int]:
    x = as_tensor(x)
    if x.shape[1] != k.c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {k.c_in}")
    ho, wo = output_size(x.shape[2], x.shape[3], k)
    return x, ho, wo


def _pad(x: np.ndarray, padding: tuple[int, int]) -> np.ndarray:
    ph, pw = padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Read-only view of shape (B, C, kh, kw, Ho, Wo) over a padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return win.transpose(0, 1, 4, 5, 2, 3)


def _col2im(dcols: np.ndarray, padded_shape, padding, stride: int) -> np.ndarray:
    """Scatter-add (B, C, kh, kw, Ho, Wo) column gradients back onto the unpadded input."""
    _, _, kh, kw, ho, wo = dcols.shape
    dxp = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dcols[:, :, i, j]
    ph, pw = padding
    return dxp[:, :, ph : padded_shape[2] - ph, pw : padded_shape[3] - pw]


def conv2d_naive(x: np.ndarray, k: ConvKernel) -> np.ndarray:
    """Direct evaluation: one weighted window sum per output pixel."""
    x, ho, wo = _check(x, k)
    kh, kw = k.kernel_size
    s, g = k.stride, k.groups
    xp = _pad(x, k.padding)
    cg, og = k.c_in // g, k.c_out // g
    out = np.zeros((x.shape[0], k.c_out, ho, wo))
    for grp in range(g):
        w = k.weights[grp * og : (grp + 1) * og]
        xs = xp[:, grp * cg : (grp + 1) * cg]
        for oh in range(ho):
            for ow in range(wo):
                window = xs[:, :, oh * s : oh * s + kh, ow * s : ow * s + kw]
                out[:, grp * og : (grp + 1) * og, oh, ow] = np.einsum("bchw,ochw->bo", window, w)
    if k.bias is not None:
        out += k.bias[None, :, None, None]
    return out


def _im2col(x: np.ndarray, k: ConvKernel, ho: int, wo: int) -> np.ndarray:
    """Columns of shape (B, groups, c_in/groups * kh * kw, Ho * Wo)."""
    kh, kw = k.kernel_size
    cols = _windows(_pad(x, k.padding), kh, kw, k.stride, ho, wo)
    b = x.shape[0]
    return cols.reshape(b, k.groups, (k.c_in // k.groups) * kh * kw, ho * wo)


def conv2d_im2col(x: np.ndarray, k: ConvKernel) -> np.ndarray:
    x, ho, wo = _check(x, k)
    cols = _im2col(x, k, ho, wo)
    wmat = k.weights.reshape(k.groups, k.c_out // k.groups, -1)
    out = np.matmul(wmat[None], cols).reshape(x.shape[0], k.c_out, ho, wo)
    if k.bias is not None:
        out += k.bias[None, :, None, None]
    return out


def conv2d(x: np.ndarray, k: ConvKernel, path: str = "im2col") -> np.ndarray:
    if path == "im2col":
        return conv2d_im2col(x, k)
    if path == "naive":
        return conv2d_naive(x, k)
    raise ValueError(f"unknown conv path {path!r}")


def conv2d_backward(x: np.ndarray, k: ConvKernel, grad_out: np.ndarray):
    """Gradients of ``conv2d(x, k)`` w.r.t. input, weights and bias (``None`` without bias)."""
    x, ho, wo = _check(x, k)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    expected = (x.shape[0], k.c_out, ho, wo)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {expected}")
    b, g = x.shape[0], k.groups
    og = k.c_out // g
    cols = _im2col(x, k, ho, wo)
    dy = grad_out.reshape(b, g, og, ho * wo)
    grad_w = np.einsum("bgol,bgkl->gok", dy, cols).reshape(k.weights.shape)
    wmat = k.weights.reshape(g, og, -1)
    dcols = np.matmul(np.swapaxes(wmat, 1, 2)[None], dy)
    kh, kw = k.kernel_size
    dcols = dcols.reshape(b, k.c_in, kh, kw, ho, wo)
    ph, pw = k.padding
    padded = (b, k.c_in, x.shape[2] + 2 * ph, x.shape[3] + 2 * pw)
    grad_x = _col2im(dcols, padded, k.padding, k.stride)
    grad_b = grad_out.sum(axis=(0, 2, 3)) if k.bias is not None else None
    return grad_x, grad_w, grad_b


def _strip(k: ConvKernel) -> ConvKernel:
    kh, kw = k.kernel_size
    if (kh == 1) == (kw == 1) and not (kh == kw == 1):
        raise InvalidConfigError(f"strip kernels need exactly one unit dim, got {kh}x{kw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidConfigError(f"strip length must be odd for same-size output, got {kh}x{kw}")
    return replace(k, stride=1, padding=((kh - 1) // 2, (kw - 1) // 2))


def strip_conv(x: np.ndarray, k: ConvKernel, path: str = "im2col") -> np.ndarray:
    """Same-size convolution with a k x 1 or 1 x k kernel."""
    return conv2d(x, _strip(k), path)


def strip_conv_backward(x: np.ndarray, k: ConvKernel, grad_out: np.ndarray):
    return conv2d_backward(x, _strip(k), grad_out)


# --- per-sample kernels (dynamic convolution) ------------------------------


def _check_per_sample(x: np.ndarray, kernels: np.ndarray) -> None:
    if kernels.ndim != 5 or kernels.shape[0] != x.shape[0] or kernels.shape[2] != x.shape[1]:
        raise ShapeError(f"per-sample kernels {kernels.shape} do not match input {x.shape}")
    kh, kw = kernels.shape[3:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidConfigError(f"same-size dynamic conv needs odd kernels, got {kh}x{kw}")


def conv2d_per_sample(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Same-size stride-1 conv where batch item b uses its own kernel ``kernels[b]`` (c_out, c_in, kh, kw).

    Equivalent to a grouped convolution with one group per batch item.
    """
    x = as_tensor(x)
    _check_per_sample(x, kernels)
    b, c, h, w = x.shape
    kh, kw = kernels.shape[3:]
    cols = _windows(_pad(x, ((kh - 1) // 2, (kw - 1) // 2)), kh, kw, 1, h, w).reshape(b, c * kh * kw, h * w)
    out = np.matmul(kernels.reshape(b, kernels.shape[1], -1), cols)
    return out.reshape(b, kernels.shape[1], h, w)


def conv2d_per_sample_backward(x: np.ndarray, kernels: np.ndarray, grad_out: np.ndarray):
    x = as_tensor(x)
    _check_per_sample(x, kernels)
    b, c, h, w = x.shape
    o, _, kh, kw = kernels.shape[1:]
    if grad_out.shape != (b, o, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(b, o, h, w)}")
    pad = ((kh - 1) // 2, (kw - 1) // 2)
    cols = _windows(_pad(x, pad), kh, kw, 1, h, w).reshape(b, c * kh * kw, h * w)
    dy = grad_out.reshape(b, o, h * w)
    grad_k = np.matmul(dy, np.swapaxes(cols, 1, 2)).reshape(kernels.shape)
    dcols = np.matmul(np.swapaxes(kernels.reshape(b, o, -1), 1, 2), dy).reshape(b, c, kh, kw, h, w)
    grad_x = _col2im(dcols, (b, c, h + 2 * pad[0], w + 2 * pad[1]), pad, 1)
    return grad_x, grad_k
