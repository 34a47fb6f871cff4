"""Central finite-difference checks of every analytic backward pass.

Each check builds a small random problem, takes the scalar loss
``sum(forward(...) * U)`` for a fixed random ``U``, and compares the analytic
gradient of every parameter group against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from sgdm.conv import ConvKernel, conv2d_backward, conv2d_im2col, strip_conv, strip_conv_backward
from sgdm.guided import SgdmConfig, SgdmModule, sgdm_backward, sgdm_forward
from sgdm.rdconv import DynamicKernelBank, RdconvConfig, SpatialBranch, rdconv_backward, rdconv_forward

EPS = 1e-5
# entries whose true gradient is below this are compared on an absolute scale
MAGNITUDE_FLOOR = 1e-6


@dataclass
class GroupResult:
    group: str
    size: int
    max_rel_error: float | None  # None: nothing to check
    passed: bool

    @property
    def status(self) -> str:
        if self.max_rel_error is None:
            return "skipped"
        return "pass" if self.passed else "FAIL"


def numeric_grad(loss: Callable[[], float], arr: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences of ``loss()`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss()
        flat[i] = orig - eps
        down = loss()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = MAGNITUDE_FLOOR) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def compare(prefix: str, loss: Callable[[], float], arrays: dict[str, np.ndarray],
            analytic: dict[str, np.ndarray], tol: float, eps: float = EPS) -> list[GroupResult]:
    out = []
    for name, arr in arrays.items():
        if arr.size == 0:
            out.append(GroupResult(f"{prefix}.{name}", 0, None, True))
            continue
        err = relative_error(analytic[name], numeric_grad(loss, arr, eps))
        out.append(GroupResult(f"{prefix}.{name}", arr.size, err, err <= tol))
    return out


def _u(rng, shape):
    return rng.uniform(-1, 1, shape)


def check_conv(rng: np.random.Generator, tol: float) -> list[GroupResult]:
    results = []
    for tag, (shape, wshape, stride, pad, groups) in {
        "conv": ((2, 3, 7, 7), (4, 3, 3, 3), 2, (1, 1), 1),
        "conv_grouped": ((2, 4, 5, 6), (4, 2, 3, 1), 1, (1, 0), 2),
    }.items():
        x = _u(rng, shape)
        k = ConvKernel(_u(rng, wshape), _u(rng, wshape[0]), stride=stride, padding=pad, groups=groups)
        up = _u(rng, conv2d_im2col(x, k).shape)
        dx, dw, db = conv2d_backward(x, k, up)
        loss = lambda: float(np.sum(conv2d_im2col(x, k) * up))  # noqa: E731
        results += compare(f"conv_engine.{tag}", loss, {"x": x, "w": k.weights, "b": k.bias},
                           {"x": dx, "w": dw, "b": db}, tol)
    x = _u(rng, (1, 2, 6, 5))
    k = ConvKernel(_u(rng, (3, 2, 1, 5)), _u(rng, 3))
    up = _u(rng, (1, 3, 6, 5))
    dx, dw, db = strip_conv_backward(x, k, up)
    loss = lambda: float(np.sum(strip_conv(x, k) * up))  # noqa: E731
    results += compare("conv_engine.strip", loss, {"x": x, "w": k.weights, "b": k.bias},
                       {"x": dx, "w": dw, "b": db}, tol)
    return results


def random_bank(c: int, cfg: RdconvConfig, rng: np.random.Generator) -> tuple[DynamicKernelBank, SpatialBranch]:
    """A bank and spatial branch with every parameter non-zero (unlike the training init)."""
    n, k, sk = cfg.n_kernels, cfg.k_d, cfg.spatial_k
    bank = DynamicKernelBank(
        kernels=0.5 * _u(rng, (n, c, c, k, k)),
        proj_w=_u(rng, (c, c)), proj_b=0.5 * _u(rng, c),
        fc_w=_u(rng, (n, c)), fc_b=0.5 * _u(rng, n),
    )
    sb = SpatialBranch(
        ConvKernel.same(0.3 * _u(rng, (c, c, sk, 1)), 0.3 * _u(rng, c)),
        ConvKernel.same(0.3 * _u(rng, (c, c, 1, sk)), 0.3 * _u(rng, c)),
    )
    return bank, sb


def check_rdconv(rng: np.random.Generator, tol: float) -> list[GroupResult]:
    cfg = RdconvConfig(r_razor=0.5, n_kernels=2, k_d=3, spatial_k=5)
    x = _u(rng, (2, 8, 5, 5))
    bank, sb = random_bank(cfg.intrinsic_channels(8), cfg, rng)
    guide = _u(rng, (bank.channels, 3, 3))
    up = _u(rng, x.shape)
    results = []
    for tag, g in (("rdconv", None), ("rdconv_guided", guide)):
        _, cache = rdconv_forward(x, cfg, bank, sb, guide=g, return_cache=True)
        grads = rdconv_backward(up, cfg, bank, sb, cache)
        loss = lambda: float(np.sum(rdconv_forward(x, cfg, bank, sb, guide=g) * up))  # noqa: E731
        arrays = {"x": x, **bank.arrays(), **sb.arrays()}
        analytic = {"x": grads.x, **grads.params()}
        if g is not None:
            arrays["guide"], analytic["guide"] = g, grads.guide
        results += compare(tag, loss, arrays, analytic, tol)
    return results


def random_sgdm(channels: int, rng: np.random.Generator, cfg: SgdmConfig | None = None) -> SgdmModule:
    cfg = SgdmConfig(rdconv=RdconvConfig(n_kernels=2, spatial_k=5)) if cfg is None else cfg
    m = SgdmModule.init(channels, cfg, rng)
    bank, sb = random_bank(m.intrinsic, cfg.rdconv, rng)
    m.bank, m.sb = bank, sb
    for conv in (m.h_static, m.w_static):
        conv.weights[...] = 0.6 * _u(rng, conv.weights.shape)
        conv.bias[...] = 0.3 * _u(rng, conv.bias.shape)
    return m


def check_sgdm(rng: np.random.Generator, tol: float) -> list[GroupResult]:
    m = random_sgdm(16, rng)
    x = _u(rng, (2, 16, 6, 6))
    up = _u(rng, x.shape)
    _, cache = sgdm_forward(x, m, return_cache=True)
    grads = sgdm_backward(up, m, cache)
    loss = lambda: float(np.sum(sgdm_forward(x, m) * up))  # noqa: E731
    arrays = {"x": x, **m.arrays()}
    results = compare("sgdm", loss, arrays, {"x": grads.x, **grads.params()}, tol)

    # guidance path alone: no upstream gradient on the static branches' own outputs
    w_rd, w_h, w_w, _ = m.widths
    up_guide = up.copy()
    up_guide[:, w_rd : w_rd + w_h + w_w] = 0.0
    grads = sgdm_backward(up_guide, m, cache)
    loss = lambda: float(np.sum(sgdm_forward(x, m) * up_guide))  # noqa: E731
    results += compare("sgdm.guide_only", loss, {"h_static.w": m.h_static.weights, "w_static.w": m.w_static.weights},
                       {"h_static.w": grads.h_w, "w_static.w": grads.w_w}, tol)
    results.append(GroupResult("sgdm.identity", 0, None, True))
    return results


def run_all(seed: int = 0, tol: float = 1e-4) -> list[GroupResult]:
    rng = np.random.default_rng(seed)
    return check_conv(rng, tol) + check_rdconv(rng, tol) + check_sgdm(rng, tol)


def format_results(results: list[GroupResult]) -> str:
    width = max(len(r.group) for r in results)
    lines = [f"{'group':<{width}}  {'size':>6}  {'max_rel_err':>12}  status"]
    for r in results:
        err = "-" if r.max_rel_error is None else f"{r.max_rel_error:.3e}"
        lines.append(f"{r.group:<{width}}  {r.size:>6}  {err:>12}  {r.status}")
    return "\n".join(lines)
