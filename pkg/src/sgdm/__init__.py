"""Razor dynamic convolution and the static-guided dynamic module in plain numpy."""

from sgdm.conv import ConvKernel, conv2d, conv2d_backward, conv2d_im2col, conv2d_naive, strip_conv
from sgdm.errors import InvalidConfigError, ShapeError
from sgdm.guided import SgdmConfig, SgdmModule, cbam_spatial_baseline, guide_weights, sgdm_backward, sgdm_forward
from sgdm.rdconv import (
    DynamicKernelBank,
    RdconvConfig,
    SpatialBranch,
    attention_weights,
    razor_split,
    rdconv_backward,
    rdconv_forward,
    spatial_gate,
)
from sgdm.stats import CostReport, count_flops, count_params
from sgdm.tensor import TensorGrad, concat_channels, gap_height, gap_width, reshape_kernel, split_channels

__all__ = [
    "ConvKernel",
    "CostReport",
    "DynamicKernelBank",
    "InvalidConfigError",
    "RdconvConfig",
    "SgdmConfig",
    "SgdmModule",
    "ShapeError",
    "SpatialBranch",
    "TensorGrad",
    "attention_weights",
    "cbam_spatial_baseline",
    "concat_channels",
    "conv2d",
    "conv2d_backward",
    "conv2d_im2col",
    "conv2d_naive",
    "count_flops",
    "count_params",
    "gap_height",
    "gap_width",
    "guide_weights",
    "razor_split",
    "rdconv_backward",
    "rdconv_forward",
    "reshape_kernel",
    "sgdm_backward",
    "sgdm_forward",
    "spatial_gate",
    "split_channels",
    "strip_conv",
]
