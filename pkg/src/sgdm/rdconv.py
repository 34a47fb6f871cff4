"""Razor dynamic convolution.

Only the first ``floor(r_razor * C)`` ("intrinsic") channels go through the
dynamic path; the remaining channels pass through untouched.  On the dynamic
path each batch item gets its own kernel ``sum_i alpha_i D_i``, where ``alpha``
comes from a sigmoid over a linear map of the pooled, 1x1-projected intrinsic
features.  The dynamic output is multiplied by a spatial gate built from
height/width average pools followed by long strip convolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sgdm.conv import (
    ConvKernel,
    conv2d_per_sample,
    conv2d_per_sample_backward,
    strip_conv,
    strip_conv_backward,
)
from sgdm.errors import InvalidConfigError, ShapeError
from sgdm.tensor import as_tensor, concat_channels, gap_height, gap_width, sigmoid, split_sizes


@dataclass
class RdconvConfig:
    r_razor: float = 0.5
    n_kernels: int = 4
    k_d: int = 3
    spatial_k: int = 15

    def __post_init__(self):
        if not 0 < self.r_razor <= 1:
            raise InvalidConfigError(f"r_razor must lie in (0, 1], got {self.r_razor}")
        if self.n_kernels < 1:
            raise InvalidConfigError(f"n_kernels must be >= 1, got {self.n_kernels}")
        for name in ("k_d", "spatial_k"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                raise InvalidConfigError(f"{name} must be a positive odd int, got {v}")

    def intrinsic_channels(self, channels: int) -> int:
        c = int(np.floor(self.r_razor * channels + 1e-9))
        if c < 1:
            raise InvalidConfigError(f"r_razor={self.r_razor} leaves no intrinsic channels out of {channels}")
        return c


@dataclass
class DynamicKernelBank:
    """Candidate kernels plus the attention sub-network that mixes them.

    kernels: (n, c, c, k_d, k_d), no bias.
    proj_w, proj_b: 1x1 razor projection c -> c_att, stored as (c_att, c) and (c_att,).
    fc_w, fc_b: linear map from the pooled projection to n logits.
    """

    kernels: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray

    def __post_init__(self):
        n, c_out, c_in, kh, kw = self.kernels.shape
        if c_out != c_in or kh != kw:
            raise ShapeError(f"dynamic kernels must be (n, c, c, k, k), got {self.kernels.shape}")
        c_att = self.proj_w.shape[0]
        if self.proj_w.shape != (c_att, c_in) or self.proj_b.shape != (c_att,):
            raise ShapeError("razor projection shape does not match kernel channels")
        if self.fc_w.shape != (n, c_att) or self.fc_b.shape != (n,):
            raise ShapeError("attention linear map does not match kernel count")

    @property
    def n(self) -> int:
        return self.kernels.shape[0]

    @property
    def channels(self) -> int:
        return self.kernels.shape[2]

    @property
    def k(self) -> int:
        return self.kernels.shape[3]

    @classmethod
    def init(cls, channels: int, cfg: RdconvConfig, rng: np.random.Generator, c_att: int | None = None):
        """Kaiming-uniform kernels and projection; zero attention map so alpha starts at 0.5."""
        c_att = channels if c_att is None else c_att
        k = cfg.k_d
        bound = np.sqrt(6.0 / (channels * k * k))
        kernels = rng.uniform(-bound, bound, size=(cfg.n_kernels, channels, channels, k, k))
        pb = np.sqrt(6.0 / channels)
        proj_w = rng.uniform(-pb, pb, size=(c_att, channels))
        return cls(
            kernels=kernels,
            proj_w=proj_w,
            proj_b=np.zeros(c_att),
            fc_w=np.zeros((cfg.n_kernels, c_att)),
            fc_b=np.zeros(cfg.n_kernels),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {"kernels": self.kernels, "proj_w": self.proj_w, "proj_b": self.proj_b,
                "fc_w": self.fc_w, "fc_b": self.fc_b}


@dataclass
class SpatialBranch:
    """Height path (spatial_k x 1) and width path (1 x spatial_k) strip convolutions."""

    h_conv: ConvKernel
    w_conv: ConvKernel

    def __post_init__(self):
        kh, kw = self.h_conv.kernel_size
        if kw != 1 or self.w_conv.kernel_size != (1, kh):
            raise ShapeError(f"spatial strips must be (k,1) and (1,k), got "
                             f"{self.h_conv.kernel_size} and {self.w_conv.kernel_size}")
        if kh % 2 == 0:
            raise InvalidConfigError(f"spatial_k must be odd, got {kh}")

    @property
    def spatial_k(self) -> int:
        return self.h_conv.kernel_size[0]

    @classmethod
    def init(cls, channels: int, spatial_k: int = 15):
        """Zero strips, so the gate starts at exactly 0.5."""
        return cls(
            h_conv=ConvKernel.same(np.zeros((channels, channels, spatial_k, 1)), np.zeros(channels)),
            w_conv=ConvKernel.same(np.zeros((channels, channels, 1, spatial_k)), np.zeros(channels)),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {"h_w": self.h_conv.weights, "h_b": self.h_conv.bias,
                "w_w": self.w_conv.weights, "w_b": self.w_conv.bias}


def razor_split(x: np.ndarray, r_razor: float) -> tuple[np.ndarray, np.ndarray]:
    """(intrinsic, remainder): the first floor(r * C) channels and the rest (possibly zero-width)."""
    x = as_tensor(x)
    c = RdconvConfig(r_razor=r_razor).intrinsic_channels(x.shape[1])
    intrinsic, remainder = split_sizes(x, [c, x.shape[1] - c])
    return intrinsic, remainder


def _attention(intrinsic: np.ndarray, bank: DynamicKernelBank):
    if intrinsic.shape[1] != bank.channels:
        raise ShapeError(f"intrinsic features have {intrinsic.shape[1]} channels, bank expects {bank.channels}")
    # 1x1 projection at full resolution, then global average pool
    proj = np.einsum("bchw,ac->bahw", intrinsic, bank.proj_w) + bank.proj_b[None, :, None, None]
    pooled = proj.mean(axis=(2, 3))
    logits = pooled @ bank.fc_w.T + bank.fc_b
    return sigmoid(logits), pooled


def attention_weights(intrinsic: np.ndarray, bank: DynamicKernelBank) -> np.ndarray:
    """Per-item mixing weights alpha, shape (B, n), each in (0, 1)."""
    return _attention(as_tensor(intrinsic), bank)[0]


def _gate_parts(intrinsic: np.ndarray, sb: SpatialBranch):
    c = intrinsic.shape[1]
    if sb.h_conv.c_in != c or sb.w_conv.c_in != c:
        raise ShapeError(f"spatial branch expects {sb.h_conv.c_in} channels, got {c}")
    if intrinsic.shape[2] < 1 or intrinsic.shape[3] < 1:
        raise ShapeError("spatial gate needs non-empty spatial dims")
    pooled_h = gap_width(intrinsic)  # (B, c, H, 1)
    pooled_w = gap_height(intrinsic)  # (B, c, 1, W)
    h_path = strip_conv(pooled_h, sb.h_conv)
    w_path = strip_conv(pooled_w, sb.w_conv)
    return sigmoid(h_path + w_path), pooled_h, pooled_w


def spatial_gate(intrinsic: np.ndarray, sb: SpatialBranch) -> np.ndarray:
    """sigmoid(Hconv(W-pool x) + Wconv(H-pool x)), broadcast back to x's dims."""
    return _gate_parts(as_tensor(intrinsic), sb)[0]


def assemble_kernels(alpha: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """(B, n) x (n, c, c, k, k) -> per-item kernels (B, c, c, k, k)."""
    return np.tensordot(alpha, kernels, axes=(1, 0))


@dataclass
class RdconvCache:
    x: np.ndarray
    c: int
    alpha: np.ndarray
    pooled: np.ndarray
    mixed: np.ndarray
    kernel: np.ndarray
    guide: np.ndarray | None
    dyn: np.ndarray
    gate: np.ndarray
    pooled_h: np.ndarray | None
    pooled_w: np.ndarray | None
    alpha_fixed: bool
    gate_fixed: bool


@dataclass
class RdconvGrads:
    x: np.ndarray
    kernels: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray
    h_w: np.ndarray
    h_b: np.ndarray
    w_w: np.ndarray
    w_b: np.ndarray
    guide: np.ndarray | None = field(default=None)

    def params(self) -> dict[str, np.ndarray]:
        return {"kernels": self.kernels, "proj_w": self.proj_w, "proj_b": self.proj_b,
                "fc_w": self.fc_w, "fc_b": self.fc_b,
                "h_w": self.h_w, "h_b": self.h_b, "w_w": self.w_w, "w_b": self.w_b}


def rdconv_forward(
    x: np.ndarray,
    cfg: RdconvConfig,
    bank: DynamicKernelBank,
    sb: SpatialBranch,
    guide: np.ndarray | None = None,
    alpha: np.ndarray | float | None = None,
    gate: np.ndarray | float | None = None,
    return_cache: bool = False,
):
    """Razor dynamic convolution of ``x``; output dims equal input dims.

    guide: optional (c, k_d, k_d) multiplier applied elementwise to every item's
        assembled kernel, broadcast over the kernel's input-channel axis.
    alpha, gate: optional fixed values replacing the computed attention weights
        or spatial gate (no gradient then flows into the corresponding branch).
    """
    x = as_tensor(x)
    c = cfg.intrinsic_channels(x.shape[1])
    if c != bank.channels:
        raise ShapeError(f"{x.shape[1]} channels at r_razor={cfg.r_razor} give {c} intrinsic, bank has {bank.channels}")
    intrinsic, remainder = split_sizes(x, [c, x.shape[1] - c])
    b = x.shape[0]

    if alpha is None:
        alpha_v, pooled = _attention(intrinsic, bank)
    else:
        alpha_v, pooled = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (b, bank.n)).copy(), None
    mixed = assemble_kernels(alpha_v, bank.kernels)
    if guide is not None:
        guide = np.asarray(guide, dtype=np.float64)
        if guide.shape != (c, bank.k, bank.k):
            raise ShapeError(f"guide shape {guide.shape} != {(c, bank.k, bank.k)}")
        kernel = mixed * guide[None, :, None]
    else:
        kernel = mixed
    dyn = conv2d_per_sample(intrinsic, kernel)

    if gate is None:
        gate_v, pooled_h, pooled_w = _gate_parts(intrinsic, sb)
    else:
        gate_v, pooled_h, pooled_w = np.broadcast_to(np.asarray(gate, dtype=np.float64), dyn.shape).copy(), None, None
    out = concat_channels([dyn * gate_v, remainder])
    if not return_cache:
        return out
    cache = RdconvCache(x, c, alpha_v, pooled, mixed, kernel, guide, dyn, gate_v, pooled_h, pooled_w,
                        alpha is not None, gate is not None)
    return out, cache


def rdconv_backward(grad_out: np.ndarray, cfg: RdconvConfig, bank: DynamicKernelBank, sb: SpatialBranch,
                    cache: RdconvCache) -> RdconvGrads:
    x, c = cache.x, cache.c
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {x.shape}")
    intrinsic = x[:, :c]
    b, _, h, w = x.shape
    d_gated, d_rem = grad_out[:, :c], grad_out[:, c:]

    d_dyn = d_gated * cache.gate
    grad_intr, d_kernel = conv2d_per_sample_backward(intrinsic, cache.kernel, d_dyn)

    # spatial gate
    zeros_like = np.zeros_like
    g_hw, g_hb = zeros_like(sb.h_conv.weights), zeros_like(sb.h_conv.bias)
    g_ww, g_wb = zeros_like(sb.w_conv.weights), zeros_like(sb.w_conv.bias)
    if not cache.gate_fixed:
        d_logit = d_gated * cache.dyn * cache.gate * (1.0 - cache.gate)
        d_hpath = d_logit.sum(axis=3, keepdims=True)
        d_wpath = d_logit.sum(axis=2, keepdims=True)
        d_ph, g_hw, g_hb = strip_conv_backward(cache.pooled_h, sb.h_conv, d_hpath)
        d_pw, g_ww, g_wb = strip_conv_backward(cache.pooled_w, sb.w_conv, d_wpath)
        grad_intr = grad_intr + d_ph / w + d_pw / h

    # guidance and kernel assembly
    if cache.guide is not None:
        d_guide = np.einsum("boikl,boikl->okl", d_kernel, cache.mixed)
        d_mixed = d_kernel * cache.guide[None, :, None]
    else:
        d_guide = None
        d_mixed = d_kernel
    g_kernels = np.tensordot(cache.alpha, d_mixed, axes=(0, 0))

    g_pw, g_pb = zeros_like(bank.proj_w), zeros_like(bank.proj_b)
    g_fw, g_fb = zeros_like(bank.fc_w), zeros_like(bank.fc_b)
    if not cache.alpha_fixed:
        d_alpha = np.einsum("boikl,noikl->bn", d_mixed, bank.kernels)
        d_logits = d_alpha * cache.alpha * (1.0 - cache.alpha)
        g_fw = d_logits.T @ cache.pooled
        g_fb = d_logits.sum(axis=0)
        d_pooled = d_logits @ bank.fc_w  # (B, c_att)
        # pooled = mean_hw(P x + p); gradient spreads uniformly over pixels
        mean_x = intrinsic.mean(axis=(2, 3))  # (B, c)
        g_pw = d_pooled.T @ mean_x
        g_pb = d_pooled.sum(axis=0)
        grad_intr = grad_intr + (d_pooled @ bank.proj_w)[:, :, None, None] / (h * w)

    return RdconvGrads(
        x=concat_channels([grad_intr, d_rem]),
        kernels=g_kernels, proj_w=g_pw, proj_b=g_pb, fc_w=g_fw, fc_b=g_fb,
        h_w=g_hw, h_b=g_hb, w_w=g_ww, w_b=g_wb, guide=d_guide,
    )


__all__ = [
    "DynamicKernelBank", "RdconvCache", "RdconvConfig", "RdconvGrads", "SpatialBranch",
    "assemble_kernels", "attention_weights", "razor_split", "rdconv_backward", "rdconv_forward",
    "spatial_gate",
]
