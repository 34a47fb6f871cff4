"""Minimal layers with explicit backward passes, and the small classifier used by the harness."""

from __future__ import annotations

import numpy as np

from sgdm.conv import ConvKernel, conv2d_backward, conv2d_im2col, output_size
from sgdm.guided import SgdmConfig, SgdmModule, sgdm_backward, sgdm_forward
from sgdm.rdconv import DynamicKernelBank, RdconvConfig, SpatialBranch, rdconv_backward, rdconv_forward
from sgdm.stats import CostReport, conv_cost, cost_report, rdconv_cost
from sgdm.tensor import TensorGrad

VARIANTS = ("baseline", "sgdm", "pure-dynamic")


class Layer:
    def parameters(self) -> dict[str, TensorGrad]:
        return {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cost_report(self, dims) -> tuple[CostReport, tuple]:
        return CostReport(), tuple(dims)


class Conv2d(Layer):
    def __init__(self, c_in, c_out, k=3, stride=1, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        bound = np.sqrt(6.0 / (c_in * k * k))
        self.kernel = ConvKernel(rng.uniform(-bound, bound, (c_out, c_in, k, k)), np.zeros(c_out),
                                 stride=stride, padding=((k - 1) // 2, (k - 1) // 2))
        self._params = {"weight": TensorGrad(self.kernel.weights), "bias": TensorGrad(self.kernel.bias)}

    def parameters(self):
        return self._params

    def forward(self, x):
        self._x = x
        return conv2d_im2col(x, self.kernel)

    def backward(self, dy):
        dx, dw, db = conv2d_backward(self._x, self.kernel, dy)
        self._params["weight"].grad += dw
        self._params["bias"].grad += db
        return dx

    def cost_report(self, dims):
        b, _, h, w = dims
        ho, wo = output_size(h, w, self.kernel)
        kh, kw = self.kernel.kernel_size
        rep = CostReport()
        rep.add("conv", "conv", *conv_cost(self.kernel.c_in, self.kernel.c_out, kh, kw, ho, wo, b))
        return rep, (b, self.kernel.c_out, ho, wo)


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask

    def cost_report(self, dims):
        rep = CostReport()
        rep.add("relu", "relu", 0, int(np.prod(dims)))
        return rep, tuple(dims)


class GlobalAvgPool(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        b, c, h, w = self._shape
        return np.broadcast_to(dy[:, :, None, None] / (h * w), self._shape).copy()

    def cost_report(self, dims):
        rep = CostReport()
        rep.add("pool", "gap", 0, dims[0] * dims[1])
        return rep, (dims[0], dims[1])


class Linear(Layer):
    def __init__(self, n_in, n_out, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        bound = np.sqrt(1.0 / n_in)
        self.w = rng.uniform(-bound, bound, (n_out, n_in))
        self.b = np.zeros(n_out)
        self._params = {"weight": TensorGrad(self.w), "bias": TensorGrad(self.b)}

    def parameters(self):
        return self._params

    def forward(self, x):
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy):
        self._params["weight"].grad += dy.T @ self._x
        self._params["bias"].grad += dy.sum(axis=0)
        return dy @ self.w

    def cost_report(self, dims):
        b, n_in = dims
        rep = CostReport()
        rep.add("linear", "fc", self.w.size + self.b.size, 2 * b * self.w.size)
        return rep, (b, self.w.shape[0])


class SgdmBlock(Layer):
    def __init__(self, channels, cfg: SgdmConfig | None = None, rng=None, guided=True):
        self.module = SgdmModule.init(channels, cfg, rng, guided=guided)
        self._params = {k: TensorGrad(v) for k, v in self.module.arrays().items()}

    def parameters(self):
        return self._params

    def forward(self, x):
        y, self._cache = sgdm_forward(x, self.module, return_cache=True)
        return y

    def backward(self, dy):
        g = sgdm_backward(dy, self.module, self._cache)
        for k, v in g.params().items():
            self._params[k].grad += v
        return g.x

    def cost_report(self, dims):
        return cost_report(self.module, dims), tuple(dims)


class RdconvBlock(Layer):
    """Unguided razor dynamic convolution over all channels."""

    def __init__(self, channels, cfg: RdconvConfig | None = None, rng=None):
        self.cfg = RdconvConfig() if cfg is None else cfg
        rng = np.random.default_rng(0) if rng is None else rng
        self.channels = channels
        c = self.cfg.intrinsic_channels(channels)
        self.bank = DynamicKernelBank.init(c, self.cfg, rng)
        self.sb = SpatialBranch.init(c, self.cfg.spatial_k)
        arrays = {**self.bank.arrays(), **{f"spatial.{k}": v for k, v in self.sb.arrays().items()}}
        self._params = {k: TensorGrad(v) for k, v in arrays.items()}

    def parameters(self):
        return self._params

    def forward(self, x):
        y, self._cache = rdconv_forward(x, self.cfg, self.bank, self.sb, return_cache=True)
        return y

    def backward(self, dy):
        g = rdconv_backward(dy, self.cfg, self.bank, self.sb, self._cache)
        for k, v in g.params().items():
            key = k if k in self._params else f"spatial.{k}"
            self._params[key].grad += v
        return g.x

    def cost_report(self, dims):
        return rdconv_cost(self.channels, self.cfg, dims), tuple(dims)


class Classifier:
    """Four learnable layers: a 3x3 conv, two 4x4 stride-2 convs, and a linear head.

    The optional block (SGDM or unguided RDConv) sits on the last feature map,
    right before global pooling and the head.
    """

    def __init__(self, variant: str = "baseline", in_channels: int = 1, n_classes: int = 3, width: int = 8,
                 rng: np.random.Generator | None = None, sgdm_cfg: SgdmConfig | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.variant = variant
        c1, c2, c3 = width, 2 * width, 4 * width
        layers: list[tuple[str, Layer]] = [
            ("conv1", Conv2d(in_channels, c1, 3, 1, rng)), ("relu1", ReLU()),
            ("conv2", Conv2d(c1, c2, 4, 2, rng)), ("relu2", ReLU()),
            ("conv3", Conv2d(c2, c3, 4, 2, rng)), ("relu3", ReLU()),
        ]
        if variant == "sgdm":
            layers.append(("block", SgdmBlock(c3, sgdm_cfg, rng)))
        elif variant == "pure-dynamic":
            cfg = sgdm_cfg.rdconv if sgdm_cfg is not None else None
            layers.append(("block", RdconvBlock(c3, cfg, rng)))
        layers += [("pool", GlobalAvgPool()), ("fc", Linear(c3, n_classes, rng))]
        self.layers = layers

    def parameters(self) -> dict[str, TensorGrad]:
        return {f"{name}.{k}": p for name, layer in self.layers for k, p in layer.parameters().items()}

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for _, layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def cost_report(self, dims) -> CostReport:
        rep = CostReport()
        for name, layer in self.layers:
            sub, dims = layer.cost_report(dims)
            rep.extend(sub, prefix=f"{name}.")
        return rep


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay folded into the gradient."""

    def __init__(self, params: dict[str, TensorGrad], lr=1e-2, momentum=0.937, weight_decay=5e-4):
        if lr <= 0 or not 0 <= momentum < 1:
            raise ValueError(f"need lr > 0 and 0 <= momentum < 1, got lr={lr}, momentum={momentum}")
        self.params = params
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self) -> None:
        for k, p in self.params.items():
            g = p.grad + self.weight_decay * p.value
            v = self.velocity[k]
            v *= self.momentum
            v += g
            p.value -= self.lr * v
