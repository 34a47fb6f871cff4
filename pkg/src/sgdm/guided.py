"""The static-guided dynamic module.

Channels are split four ways with ratios [r, r, r, 1 - 3r]: a razor dynamic
convolution branch, a k_s x 1 static strip branch, a 1 x k_s static strip
branch and an identity branch.  The two static strips (k_s = k_d**2 taps) are
folded to k_d x k_d, summed, and multiplied elementwise into the dynamic
branch's assembled kernel on every forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sgdm.conv import ConvKernel, conv2d, strip_conv, strip_conv_backward
from sgdm.errors import InvalidConfigError, ShapeError
from sgdm.rdconv import (
    DynamicKernelBank,
    RdconvCache,
    RdconvConfig,
    RdconvGrads,
    SpatialBranch,
    rdconv_backward,
    rdconv_forward,
)
from sgdm.tensor import as_tensor, channel_sizes, concat_channels, fold_height_strip, fold_width_strip, sigmoid, split_sizes


@dataclass
class SgdmConfig:
    r_split: float = 0.25
    k_d: int = 3
    k_s: int = 9
    rdconv: RdconvConfig = field(default_factory=RdconvConfig)

    def __post_init__(self):
        if not 0 < self.r_split or 3 * self.r_split > 1 + 1e-12:
            raise InvalidConfigError(f"r_split must satisfy 0 < 3r <= 1, got r={self.r_split}")
        if self.k_s != self.k_d * self.k_d:
            raise InvalidConfigError(f"k_s must equal k_d**2 for the strip fold, got k_s={self.k_s}, k_d={self.k_d}")
        if self.rdconv.k_d != self.k_d:
            raise InvalidConfigError(f"rdconv.k_d={self.rdconv.k_d} disagrees with k_d={self.k_d}")

    def ratios(self) -> list[float]:
        r = self.r_split
        return [r, r, r, max(0.0, 1.0 - 3.0 * r)]

    def branch_widths(self, channels: int) -> list[int]:
        """[dynamic, height-strip, width-strip, identity] channel counts.

        At r_split = 1/3 the identity branch has no share and is zero-width.
        """
        if self.ratios()[3] <= 1e-9:
            r = self.r_split
            return channel_sizes(channels, [r, r, 1.0 - 2.0 * r]) + [0]
        return channel_sizes(channels, self.ratios())


@dataclass
class SgdmModule:
    channels: int
    cfg: SgdmConfig
    bank: DynamicKernelBank
    sb: SpatialBranch
    h_static: ConvKernel
    w_static: ConvKernel
    guided: bool = True

    def __post_init__(self):
        w_rd, w_h, w_w, _ = self.cfg.branch_widths(self.channels)
        c = self.cfg.rdconv.intrinsic_channels(w_rd)
        if self.bank.channels != c or self.bank.k != self.cfg.k_d:
            raise ShapeError(f"dynamic bank {self.bank.kernels.shape} does not fit {c} intrinsic channels")
        for name, k, w, shape in (("h_static", self.h_static, w_h, (self.cfg.k_s, 1)),
                                  ("w_static", self.w_static, w_w, (1, self.cfg.k_s))):
            if k.c_out != w or k.groups != w or k.kernel_size != shape:
                raise ShapeError(f"{name} must be a depthwise {shape} conv over {w} channels")
        if min(w_h, w_w) < c:
            raise ShapeError(f"static strips cover {min(w_h, w_w)} channels, guidance needs {c}")

    @property
    def widths(self) -> list[int]:
        return self.cfg.branch_widths(self.channels)

    @property
    def intrinsic(self) -> int:
        return self.bank.channels

    @classmethod
    def init(cls, channels: int, cfg: SgdmConfig | None = None, rng: np.random.Generator | None = None,
             guided: bool = True) -> "SgdmModule":
        """Fresh module.

        Static strip taps start at 1/sqrt(k_s) plus a little jitter: unit gain on
        white input for the static branches, and a positive (~2/k_d) guide.
        """
        cfg = SgdmConfig() if cfg is None else cfg
        rng = np.random.default_rng(0) if rng is None else rng
        w_rd, w_h, w_w, _ = cfg.branch_widths(channels)
        c = cfg.rdconv.intrinsic_channels(w_rd)
        bank = DynamicKernelBank.init(c, cfg.rdconv, rng)
        sb = SpatialBranch.init(c, cfg.rdconv.spatial_k)
        ks = cfg.k_s
        tap = 1.0 / np.sqrt(ks)
        h_taps = tap + 0.01 * rng.standard_normal((w_h, 1, ks, 1))
        w_taps = tap + 0.01 * rng.standard_normal((w_w, 1, 1, ks))
        h_static = ConvKernel.same(h_taps, np.zeros(w_h), groups=w_h)
        w_static = ConvKernel.same(w_taps, np.zeros(w_w), groups=w_w)
        return cls(channels, cfg, bank, sb, h_static, w_static, guided)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"rd.{k}": v for k, v in self.bank.arrays().items()}
        out.update({f"rd.spatial.{k}": v for k, v in self.sb.arrays().items()})
        out.update({"h_static.w": self.h_static.weights, "h_static.b": self.h_static.bias,
                    "w_static.w": self.w_static.weights, "w_static.b": self.w_static.bias})
        return out


def guide_weights(w_rd: np.ndarray, w_h: np.ndarray, w_w: np.ndarray) -> np.ndarray:
    """``w_rd * (fold(w_h) + fold(w_w))``.

    w_rd: (..., c_out, c_in, k, k) assembled dynamic kernel(s).
    w_h, w_w: strips of k*k taps, either a single (k*k,) strip shared by all
        output channels or one strip per output channel, (c_out, k*k).
    The folded pattern is broadcast over the input-channel axis.
    """
    w_rd = np.asarray(w_rd, dtype=np.float64)
    k = w_rd.shape[-1]
    if w_rd.ndim < 4 or w_rd.shape[-2] != k:
        raise ShapeError(f"dynamic kernel must be (..., c_out, c_in, k, k), got {w_rd.shape}")
    pattern = fold_height_strip(w_h, k) + fold_width_strip(w_w, k)
    if pattern.ndim == 2:
        return w_rd * pattern
    if pattern.shape[0] != w_rd.shape[-4]:
        raise ShapeError(f"{pattern.shape[0]} strip channels for {w_rd.shape[-4]} output channels")
    return w_rd * pattern[:, None]


def static_guide(m: SgdmModule) -> np.ndarray:
    """Per-output-channel (c, k_d, k_d) guide from the first c channels of each static strip bank."""
    c, k = m.intrinsic, m.cfg.k_d
    hs = m.h_static.weights[:c, 0, :, 0]
    ws = m.w_static.weights[:c, 0, 0, :]
    return fold_height_strip(hs, k) + fold_width_strip(ws, k)


@dataclass
class SgdmCache:
    parts: list[np.ndarray]
    rd: RdconvCache


@dataclass
class SgdmGrads:
    x: np.ndarray
    rd: RdconvGrads
    h_w: np.ndarray
    h_b: np.ndarray
    w_w: np.ndarray
    w_b: np.ndarray

    def params(self) -> dict[str, np.ndarray]:
        rd = self.rd
        out = {"rd.kernels": rd.kernels, "rd.proj_w": rd.proj_w, "rd.proj_b": rd.proj_b,
               "rd.fc_w": rd.fc_w, "rd.fc_b": rd.fc_b,
               "rd.spatial.h_w": rd.h_w, "rd.spatial.h_b": rd.h_b,
               "rd.spatial.w_w": rd.w_w, "rd.spatial.w_b": rd.w_b}
        out.update({"h_static.w": self.h_w, "h_static.b": self.h_b, "w_static.w": self.w_w, "w_static.b": self.w_b})
        return out


def sgdm_forward(x: np.ndarray, m: SgdmModule, return_cache: bool = False):
    x = as_tensor(x)
    if x.shape[1] != m.channels:
        raise ShapeError(f"input has {x.shape[1]} channels, module built for {m.channels}")
    parts = split_sizes(x, m.widths)
    x_rd, x_h, x_w, x_id = parts
    guide = static_guide(m) if m.guided else None
    y_rd, rd_cache = rdconv_forward(x_rd, m.cfg.rdconv, m.bank, m.sb, guide=guide, return_cache=True)
    y_h = strip_conv(x_h, m.h_static)
    y_w = strip_conv(x_w, m.w_static)
    out = concat_channels([y_rd, y_h, y_w, x_id])
    if return_cache:
        return out, SgdmCache(parts, rd_cache)
    return out


def sgdm_backward(grad_out: np.ndarray, m: SgdmModule, cache: SgdmCache) -> SgdmGrads:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    b, _, h, w = cache.parts[0].shape
    if grad_out.shape != (b, m.channels, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match module output")
    g_rd, g_h, g_w, g_id = split_sizes(grad_out, m.widths)
    _, x_h, x_w, _ = cache.parts
    rd = rdconv_backward(g_rd, m.cfg.rdconv, m.bank, m.sb, cache.rd)
    dx_h, dh_w, dh_b = strip_conv_backward(x_h, m.h_static, g_h)
    dx_w, dw_w, dw_b = strip_conv_backward(x_w, m.w_static, g_w)
    if rd.guide is not None:
        # the guide folds the first c strips; route its gradient back through the fold
        c, k = m.intrinsic, m.cfg.k_d
        dh_w[:c, 0, :, 0] += np.swapaxes(rd.guide, -1, -2).reshape(c, k * k)
        dw_w[:c, 0, 0, :] += rd.guide.reshape(c, k * k)
    dx = concat_channels([rd.x, dx_h, dx_w, g_id.copy()])
    return SgdmGrads(dx, rd, dh_w, dh_b, dw_w, dw_b)


def cbam_spatial_baseline(x: np.ndarray, k7: ConvKernel) -> np.ndarray:
    """Channel-mean/max pooled map -> 7x7 conv -> sigmoid, multiplied into ``x``."""
    x = as_tensor(x)
    if k7.c_in != 2 or k7.c_out != 1:
        raise ShapeError(f"spatial attention kernel must map 2 -> 1 channels, got {k7.weights.shape}")
    pooled = np.concatenate([x.mean(axis=1, keepdims=True), x.max(axis=1, keepdims=True)], axis=1)
    kh, kw = k7.kernel_size
    same = ConvKernel(k7.weights, k7.bias, stride=1, padding=((kh - 1) // 2, (kw - 1) // 2))
    att = sigmoid(conv2d(pooled, same))
    return x * att
