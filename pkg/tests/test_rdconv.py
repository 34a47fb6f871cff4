import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import attention_ref, gate_ref, rdconv_ref
from sgdm.conv import ConvKernel, conv2d_backward, conv2d_naive
from sgdm.errors import InvalidConfigError, ShapeError
from sgdm.gradcheck import numeric_grad, random_bank, relative_error
from sgdm.rdconv import (
    DynamicKernelBank,
    RdconvConfig,
    SpatialBranch,
    assemble_kernels,
    attention_weights,
    razor_split,
    rdconv_backward,
    rdconv_forward,
    spatial_gate,
)

CFG = RdconvConfig(r_razor=0.5, n_kernels=2, k_d=3, spatial_k=5)


def _setup(seed=0, c=8, cfg=CFG, shape=(2, 8, 5, 5)):
    rng = np.random.default_rng(seed)
    bank, sb = random_bank(cfg.intrinsic_channels(c), cfg, rng)
    return rng.standard_normal(shape), bank, sb


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        RdconvConfig(r_razor=0.0)
    with pytest.raises(InvalidConfigError):
        RdconvConfig(spatial_k=4)
    with pytest.raises(InvalidConfigError):
        RdconvConfig(r_razor=0.1).intrinsic_channels(8)


def test_razor_split():
    x = np.random.default_rng(0).standard_normal((1, 64, 2, 2))
    a, b = razor_split(x, 0.5)
    assert a.shape[1] == 32 and b.shape[1] == 32
    a, b = razor_split(x[:, :8], 1.0)
    assert a.shape[1] == 8 and b.shape == (1, 0, 2, 2)


def test_attention_zero_init_is_half():
    bank = DynamicKernelBank.init(4, RdconvConfig(n_kernels=3), np.random.default_rng(0))
    alpha = attention_weights(np.zeros((2, 4, 3, 3)), bank)
    assert np.array_equal(alpha, np.full((2, 3), 0.5))


def test_attention_matches_reference():
    x, bank, _ = _setup(1)
    xi = x[:, :4]
    ref = attention_ref(xi, bank.proj_w, bank.proj_b, bank.fc_w, bank.fc_b)
    assert np.allclose(attention_weights(xi, bank), ref, rtol=1e-12, atol=0)


def test_attention_batch_independence():
    x, bank, _ = _setup(2)
    xi = x[:, :4].copy()
    before = attention_weights(xi, bank)[0]
    xi[1] = np.random.default_rng(9).standard_normal(xi[1].shape)
    assert np.array_equal(attention_weights(xi, bank)[0], before)


def test_attention_channel_mismatch():
    _, bank, _ = _setup(0)
    with pytest.raises(ShapeError):
        attention_weights(np.zeros((1, 5, 3, 3)), bank)


def test_gate_constant_input_zero_strips():
    sb = SpatialBranch.init(3, 7)
    assert np.array_equal(spatial_gate(np.full((2, 3, 4, 5), 1.7), sb), np.full((2, 3, 4, 5), 0.5))


def test_gate_matches_reference():
    x, _, sb = _setup(3)
    xi = x[:, :4]
    ref = gate_ref(xi, sb.h_conv.weights, sb.h_conv.bias, sb.w_conv.weights, sb.w_conv.bias)
    gate = spatial_gate(xi, sb)
    assert gate.shape == xi.shape
    assert np.allclose(gate, ref, rtol=1e-12, atol=0)


def test_gate_empty_spatial():
    with pytest.raises(ShapeError):
        spatial_gate(np.zeros((1, 3, 0, 4)), SpatialBranch.init(3, 5))


def test_collapse_to_static_conv():
    rng = np.random.default_rng(4)
    cfg = RdconvConfig(r_razor=1.0, n_kernels=1, k_d=3, spatial_k=5)
    bank, sb = random_bank(6, cfg, rng)
    x = rng.standard_normal((2, 6, 7, 7))
    y = rdconv_forward(x, cfg, bank, sb, alpha=1.0, gate=1.0)
    ref = conv2d_naive(x, ConvKernel.same(bank.kernels[0]))
    assert np.max(np.abs(y - ref)) < 1e-12


def test_collapse_gradients_reduce_to_static():
    rng = np.random.default_rng(5)
    cfg = RdconvConfig(r_razor=1.0, n_kernels=1, k_d=3, spatial_k=5)
    bank, sb = random_bank(3, cfg, rng)
    x = rng.standard_normal((2, 3, 5, 5))
    up = rng.standard_normal(x.shape)
    _, cache = rdconv_forward(x, cfg, bank, sb, alpha=1.0, gate=1.0, return_cache=True)
    g = rdconv_backward(up, cfg, bank, sb, cache)
    dx, dw, _ = conv2d_backward(x, ConvKernel.same(bank.kernels[0]), up)
    assert np.allclose(g.x, dx, atol=1e-12) and np.allclose(g.kernels[0], dw, atol=1e-12)
    for name in ("proj_w", "fc_w", "h_w", "w_w"):
        assert not getattr(g, name).any()


def test_zero_kernels_pass_remainder():
    x, bank, sb = _setup(6)
    bank.kernels[...] = 0.0
    y = rdconv_forward(x, CFG, bank, sb)
    assert not y[:, :4].any()
    assert np.array_equal(y[:, 4:], x[:, 4:])


@pytest.mark.parametrize("guided", [False, True])
def test_matches_per_item_brute_force(guided):
    x, bank, sb = _setup(7)
    guide = np.random.default_rng(70).standard_normal((4, 3, 3)) if guided else None
    y = rdconv_forward(x, CFG, bank, sb, guide=guide)
    ref = rdconv_ref(x, CFG.r_razor, bank.kernels, bank.proj_w, bank.proj_b, bank.fc_w, bank.fc_b,
                     sb.h_conv.weights, sb.h_conv.bias, sb.w_conv.weights, sb.w_conv.bias, guide)
    assert np.max(np.abs(y - ref)) / np.max(np.abs(ref)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_batch_permutation_equivariance(seed):
    x, bank, sb = _setup(seed, shape=(3, 8, 4, 4))
    perm = np.random.default_rng(seed).permutation(3)
    y = rdconv_forward(x, CFG, bank, sb)
    assert np.allclose(rdconv_forward(x[perm], CFG, bank, sb), y[perm], atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_assembled_kernel_bounded_by_candidates(seed):
    rng = np.random.default_rng(seed)
    kernels = rng.standard_normal((3, 2, 2, 3, 3))
    alpha = rng.uniform(0, 1, (4, 3))
    mixed = assemble_kernels(alpha, kernels)
    assert np.all(np.abs(mixed) <= np.abs(kernels).sum(axis=0) + 1e-12)


def test_backward_zero_upstream():
    x, bank, sb = _setup(8)
    _, cache = rdconv_forward(x, CFG, bank, sb, return_cache=True)
    g = rdconv_backward(np.zeros_like(x), CFG, bank, sb, cache)
    assert not g.x.any() and not any(v.any() for v in g.params().values())


def test_backward_shape_error():
    x, bank, sb = _setup(8)
    _, cache = rdconv_forward(x, CFG, bank, sb, return_cache=True)
    with pytest.raises(ShapeError):
        rdconv_backward(np.zeros((2, 8, 5, 4)), CFG, bank, sb, cache)


def test_backward_finite_differences():
    x, bank, sb = _setup(9, shape=(2, 8, 4, 4))
    up = np.random.default_rng(90).standard_normal(x.shape)
    _, cache = rdconv_forward(x, CFG, bank, sb, return_cache=True)
    g = rdconv_backward(up, CFG, bank, sb, cache)
    loss = lambda: float(np.sum(rdconv_forward(x, CFG, bank, sb) * up))  # noqa: E731
    arrays = {"x": x, **bank.arrays(), **sb.arrays()}
    analytic = {"x": g.x, **g.params()}
    for name, arr in arrays.items():
        assert relative_error(analytic[name], numeric_grad(loss, arr)) < 1e-4, name
