"""Parameter and FLOP accounting.

Conventions (also written into every CSV/table header):
  * one multiply-accumulate = 2 FLOPs;
  * sigmoid, pooling, elementwise add/multiply = 1 FLOP per output element;
  * FLOPs are totals over the whole input batch.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from sgdm.conv import ConvKernel, output_size
from sgdm.guided import SgdmConfig, SgdmModule
from sgdm.rdconv import DynamicKernelBank, RdconvConfig, SpatialBranch

CONVENTIONS = "1 MAC = 2 FLOPs; sigmoid/pool/elementwise = 1 FLOP per output element; FLOPs summed over the batch"


@dataclass(frozen=True)
class LayerCost:
    layer: str
    name: str
    params: int
    flops: int

    def __post_init__(self):
        if self.params < 0 or self.flops < 0:
            raise ValueError(f"negative cost in {self}")


@dataclass
class CostReport:
    entries: list[LayerCost] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.entries)

    def add(self, layer: str, name: str, params: int = 0, flops: int = 0) -> None:
        self.entries.append(LayerCost(layer, name, int(params), int(flops)))

    def extend(self, other: "CostReport", prefix: str = "") -> None:
        for e in other.entries:
            self.entries.append(LayerCost(e.layer, prefix + e.name, e.params, e.flops))

    def select(self, prefix: str) -> "CostReport":
        return CostReport([e for e in self.entries if e.name.startswith(prefix)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {CONVENTIONS}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "name", "params", "flops"])
        for e in self.entries:
            writer.writerow([e.layer, e.name, e.params, e.flops])
        writer.writerow(["total", "", self.total_params, self.total_flops])
        return buf.getvalue()

    def format_table(self) -> str:
        rows = [(e.layer, e.name, f"{e.params:,}", f"{e.flops:,}") for e in self.entries]
        rows.append(("total", "", f"{self.total_params:,}", f"{self.total_flops:,}"))
        head = ("layer", "name", "params", "flops")
        widths = [max(len(r[i]) for r in [head, *rows]) for i in range(4)]
        fmt = "{:<%d}  {:<%d}  {:>%d}  {:>%d}" % tuple(widths)
        out = [f"# {CONVENTIONS}", fmt.format(*head), "-" * (sum(widths) + 6)]
        out += [fmt.format(*r) for r in rows]
        return "\n".join(out)


def conv_cost(c_in: int, c_out: int, kh: int, kw: int, out_h: int, out_w: int, batch: int = 1,
              bias: bool = True, groups: int = 1) -> tuple[int, int]:
    """(params, flops) for a convolution producing ``batch x c_out x out_h x out_w``."""
    per_out = (c_in // groups) * kh * kw
    params = c_out * per_out + (c_out if bias else 0)
    flops = 2 * batch * c_out * per_out * out_h * out_w
    return params, flops


def razor_projection_flops(channels, h, w):
    """FLOPs of the 1x1 attention projection over ``channels`` features (square in channels).

    Plain arithmetic, so it also accepts ``Fraction`` or sympy symbols.
    """
    return 2 * channels * channels * h * w


def razor_flop_ratio(r_razor, channels=512, h=40, w=40):
    """Razored / unrazored projection FLOPs; exact (== r**2) for rational or symbolic ``r_razor``."""
    if isinstance(r_razor, float):
        r_razor = Fraction(r_razor)
    return razor_projection_flops(r_razor * channels, h, w) / razor_projection_flops(channels, h, w)


def rdconv_cost(channels: int, cfg: RdconvConfig, dims, guided: bool = False, c_att: int | None = None) -> CostReport:
    """Costs of a razor dynamic conv over ``channels`` inputs at (B, H, W) taken from ``dims``."""
    b, _, h, w = dims
    c = cfg.intrinsic_channels(channels)
    a = c if c_att is None else c_att
    n, k, sk = cfg.n_kernels, cfg.k_d, cfg.spatial_k
    rep = CostReport()
    rep.add("conv1x1", "razor_proj", a * c + a, 2 * b * a * c * h * w)
    rep.add("pool", "att_pool", 0, b * a)
    rep.add("linear", "att_fc", n * a + n, 2 * b * n * a)
    rep.add("sigmoid", "att_sigmoid", 0, b * n)
    rep.add("kernel_bank", "dynamic_kernels", n * c * c * k * k, 2 * b * n * c * c * k * k)
    if guided:
        rep.add("elementwise", "guide_fuse", 0, b * c * c * k * k)
    # weights belong to the kernel bank; only the per-item assembled kernel is convolved
    rep.add("dynamic_conv", "dynamic_conv", 0, conv_cost(c, c, k, k, h, w, b, bias=False)[1])
    rep.add("pool", "h_gap", 0, b * c * h)
    rep.add("pool", "w_gap", 0, b * c * w)
    rep.add("strip_conv", "h_conv", *conv_cost(c, c, sk, 1, h, 1, b))
    rep.add("strip_conv", "w_conv", *conv_cost(c, c, 1, sk, 1, w, b))
    rep.add("sigmoid", "gate", 0, 2 * b * c * h * w)
    rep.add("elementwise", "gate_mul", 0, b * c * h * w)
    rep.add("identity", "remainder", 0, 0)
    return rep


def sgdm_cost(channels: int, cfg: SgdmConfig, dims, guided: bool = True) -> CostReport:
    b, _, h, w = dims
    w_rd, w_h, w_w, _ = cfg.branch_widths(channels)
    ks = cfg.k_s
    rep = CostReport()
    rep.extend(rdconv_cost(w_rd, cfg.rdconv, dims, guided=guided), prefix="rd.")
    if guided:
        c, k = cfg.rdconv.intrinsic_channels(w_rd), cfg.k_d
        rep.add("elementwise", "rd.guide_fold", 0, c * k * k)
    rep.add("strip_conv", "h_static", *conv_cost(w_h, w_h, ks, 1, h, w, b, groups=w_h))
    rep.add("strip_conv", "w_static", *conv_cost(w_w, w_w, 1, ks, h, w, b, groups=w_w))
    rep.add("identity", "identity", 0, 0)
    return rep


def _conv_report(k: ConvKernel, dims) -> CostReport:
    ho, wo = output_size(dims[2], dims[3], k) if dims[2] and dims[3] else (0, 0)
    kh, kw = k.kernel_size
    rep = CostReport()
    rep.add("conv", "conv", *conv_cost(k.c_in, k.c_out, kh, kw, ho, wo, dims[0], k.bias is not None, k.groups))
    return rep


def cost_report(module, dims) -> CostReport:
    """Cost report for a configured module at input ``dims`` (B, C, H, W)."""
    dims = tuple(int(d) for d in dims)
    if module is None:
        return CostReport([LayerCost("identity", "identity", 0, 0)])
    if isinstance(module, ConvKernel):
        return _conv_report(module, dims)
    if isinstance(module, SgdmModule):
        return sgdm_cost(module.channels, module.cfg, dims, guided=module.guided)
    if isinstance(module, DynamicKernelBank):
        b, _, h, w = dims
        n, c, k, a = module.n, module.channels, module.k, module.proj_w.shape[0]
        rep = CostReport()
        rep.add("conv1x1", "razor_proj", module.proj_w.size + module.proj_b.size, 2 * b * a * c * h * w)
        rep.add("linear", "att_fc", module.fc_w.size + module.fc_b.size, 2 * b * n * a)
        rep.add("kernel_bank", "dynamic_kernels", module.kernels.size, 2 * b * n * c * c * k * k)
        return rep
    if isinstance(module, SpatialBranch):
        b, _, h, w = dims
        rep = CostReport()
        rep.extend(_conv_report(module.h_conv, (b, module.h_conv.c_in, h, 1)), "h_")
        rep.extend(_conv_report(module.w_conv, (b, module.w_conv.c_in, 1, w)), "w_")
        return rep
    if hasattr(module, "cost_report"):
        return module.cost_report(dims)
    raise TypeError(f"no cost model for {type(module).__name__}")


def count_params(module) -> int:
    """Learnable scalar count; independent of the input's spatial size."""
    if isinstance(module, ConvKernel):
        kh, kw = module.kernel_size
        return conv_cost(module.c_in, module.c_out, kh, kw, 0, 0, 0, module.bias is not None, module.groups)[0]
    channels = getattr(module, "channels", 1)
    return cost_report(module, (1, channels, 1, 1)).total_params


def count_flops(module, dims) -> int:
    if np.prod(dims) == 0:
        return 0
    return cost_report(module, dims).total_flops
