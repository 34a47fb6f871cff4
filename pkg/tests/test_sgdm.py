import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from oracles import cbam_ref, conv2d_ref, fold_ref, guide_ref, rdconv_ref
from sgdm.conv import ConvKernel
from sgdm.errors import InvalidConfigError, ShapeError
from sgdm.gradcheck import numeric_grad, random_sgdm, relative_error
from sgdm.guided import (
    SgdmConfig,
    SgdmModule,
    cbam_spatial_baseline,
    guide_weights,
    sgdm_backward,
    sgdm_forward,
    static_guide,
)
from sgdm.rdconv import RdconvConfig

SMALL = SgdmConfig(rdconv=RdconvConfig(n_kernels=2, spatial_k=5))


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        SgdmConfig(r_split=0.4)
    with pytest.raises(InvalidConfigError):
        SgdmConfig(k_s=7)
    with pytest.raises(InvalidConfigError):
        SgdmConfig(k_d=5, k_s=25)  # rdconv still at k_d=3


def test_default_widths():
    assert SgdmConfig().branch_widths(64) == [16, 16, 16, 16]
    assert SgdmConfig(r_split=1 / 3).branch_widths(9) == [3, 3, 3, 0]
    assert SgdmConfig(r_split=0.3).branch_widths(10) == [3, 3, 3, 1]


def test_zero_parameters():
    m = SgdmModule.init(64, SMALL, np.random.default_rng(0))
    for arr in m.arrays().values():
        arr[...] = 0.0
    x = np.random.default_rng(1).standard_normal((2, 64, 5, 5))
    y = sgdm_forward(x, m)
    c = m.intrinsic
    assert not y[:, :c].any()
    # the razor remainder of the dynamic block is a passthrough, parameters or not
    assert np.array_equal(y[:, c:16], x[:, c:16])
    assert not y[:, 16:48].any()
    assert np.array_equal(y[:, 48:], x[:, 48:])


def test_compositional_oracle():
    m = random_sgdm(32, np.random.default_rng(2), SMALL)
    x = np.random.default_rng(3).standard_normal((2, 32, 10, 10))
    xr, xh, xw, xid = x[:, :8], x[:, 8:16], x[:, 16:24], x[:, 24:]
    c, k = m.intrinsic, 3
    hs, ws = m.h_static.weights, m.w_static.weights
    guide = np.stack([fold_ref(hs[o, 0, :, 0], k, transpose=True) + fold_ref(ws[o, 0, 0, :], k) for o in range(c)])
    bank, sb = m.bank, m.sb
    ref = np.concatenate([
        rdconv_ref(xr, 0.5, bank.kernels, bank.proj_w, bank.proj_b, bank.fc_w, bank.fc_b,
                   sb.h_conv.weights, sb.h_conv.bias, sb.w_conv.weights, sb.w_conv.bias, guide),
        conv2d_ref(xh, hs, m.h_static.bias, pad=(4, 0), groups=8),
        conv2d_ref(xw, ws, m.w_static.bias, pad=(0, 4), groups=8),
        xid,
    ], axis=1)
    y = sgdm_forward(x, m)
    assert np.max(np.abs(y - ref)) / np.max(np.abs(ref)) < 1e-12


def test_channel_mismatch():
    m = SgdmModule.init(16, SMALL)
    with pytest.raises(ShapeError):
        sgdm_forward(np.zeros((1, 12, 4, 4)), m)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 48), st.sampled_from([0.1, 0.2, 0.25, 0.3, 1 / 3]), st.sampled_from([0.25, 0.5, 1.0]),
       st.integers(1, 2), st.integers(1, 6), st.integers(1, 6))
def test_dims_preserved_and_identity_bit_exact(c, r_split, r_razor, b, h, w):
    try:
        cfg = SgdmConfig(r_split=r_split, rdconv=RdconvConfig(r_razor=r_razor, n_kernels=2, spatial_k=3))
        m = random_sgdm(c, np.random.default_rng(c), cfg)
    except (InvalidConfigError, ShapeError):
        assume(False)
    x = np.random.default_rng(h * 7 + w).standard_normal((b, c, h, w))
    y = sgdm_forward(x, m)
    assert y.shape == x.shape
    n_id = m.widths[3]
    assert np.array_equal(y[:, c - n_id :], x[:, c - n_id :])
    assert y[:, c - n_id :].tobytes() == x[:, c - n_id :].tobytes()


def test_guide_closed_and_neutral():
    w_rd = np.random.default_rng(4).standard_normal((2, 3, 3, 3))
    assert not guide_weights(w_rd, np.zeros(9), np.zeros(9)).any()
    assert np.array_equal(guide_weights(w_rd, np.full(9, 0.5), np.full(9, 0.5)), w_rd)


def test_guide_matches_entrywise_reference():
    rng = np.random.default_rng(5)
    w_rd = rng.standard_normal((3, 2, 3, 3))
    hs, ws = rng.standard_normal((3, 9)), rng.standard_normal((3, 9))
    assert np.allclose(guide_weights(w_rd, hs, ws), guide_ref(w_rd, hs, ws), rtol=1e-14, atol=0)
    shared = guide_weights(w_rd, hs[0], ws[0])
    assert np.allclose(shared, guide_ref(w_rd, np.tile(hs[0], (3, 1)), np.tile(ws[0], (3, 1))), atol=0)


def test_guide_shape_errors():
    with pytest.raises(ShapeError):
        guide_weights(np.zeros((2, 2, 3, 3)), np.zeros(8), np.zeros(9))
    with pytest.raises(ShapeError):
        guide_weights(np.zeros((2, 2, 3, 3)), np.zeros((3, 9)), np.zeros((3, 9)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_guided_magnitude_bound(seed):
    rng = np.random.default_rng(seed)
    w_rd = rng.standard_normal((2, 2, 3, 3))
    hs, ws = rng.standard_normal(9), rng.standard_normal(9)
    bound = np.abs(w_rd) * (np.abs(hs.reshape(3, 3).T) + np.abs(ws.reshape(3, 3)))
    assert np.all(np.abs(guide_weights(w_rd, hs, ws)) <= bound + 1e-12)


def test_static_guide_uses_leading_strips():
    m = random_sgdm(32, np.random.default_rng(6), SMALL)
    g = static_guide(m)
    assert g.shape == (m.intrinsic, 3, 3)
    assert np.array_equal(g[1], m.h_static.weights[1, 0, :, 0].reshape(3, 3).T + m.w_static.weights[1, 0, 0, :].reshape(3, 3))


def test_guidance_coupling():
    m = random_sgdm(32, np.random.default_rng(7), SMALL)
    x = np.random.default_rng(8).standard_normal((2, 32, 6, 6))
    up = np.random.default_rng(9).standard_normal(x.shape)
    w_rd, w_h, w_w, _ = m.widths
    up[:, w_rd : w_rd + w_h + w_w] = 0.0
    _, cache = sgdm_forward(x, m, return_cache=True)
    g = sgdm_backward(up, m, cache)
    c = m.intrinsic
    assert np.abs(g.rd.x).max() > 0
    assert np.all(np.abs(g.h_w[:c]).reshape(c, -1).max(axis=1) > 0)
    assert np.all(np.abs(g.w_w[:c]).reshape(c, -1).max(axis=1) > 0)
    # strips outside the guide get nothing, and biases never feed the guide
    assert not g.h_w[c:].any() and not g.w_w[c:].any()
    assert not g.h_b.any() and not g.w_b.any()


def test_unguided_has_no_coupling():
    m = random_sgdm(32, np.random.default_rng(7), SMALL)
    m.guided = False
    x = np.random.default_rng(8).standard_normal((2, 32, 6, 6))
    up = np.random.default_rng(9).standard_normal(x.shape)
    up[:, 8:24] = 0.0
    _, cache = sgdm_forward(x, m, return_cache=True)
    g = sgdm_backward(up, m, cache)
    assert not g.h_w.any() and not g.w_w.any()


def test_backward_zero_upstream():
    m = random_sgdm(16, np.random.default_rng(10), SMALL)
    x = np.random.default_rng(11).standard_normal((1, 16, 4, 4))
    _, cache = sgdm_forward(x, m, return_cache=True)
    g = sgdm_backward(np.zeros_like(x), m, cache)
    assert not g.x.any() and not any(v.any() for v in g.params().values())
    with pytest.raises(ShapeError):
        sgdm_backward(np.zeros((1, 16, 4, 3)), m, cache)


def test_backward_finite_differences():
    m = random_sgdm(16, np.random.default_rng(12), SMALL)
    x = np.random.default_rng(13).standard_normal((2, 16, 5, 5))
    up = np.random.default_rng(14).standard_normal(x.shape)
    _, cache = sgdm_forward(x, m, return_cache=True)
    g = sgdm_backward(up, m, cache)
    loss = lambda: float(np.sum(sgdm_forward(x, m) * up))  # noqa: E731
    analytic = {"x": g.x, **g.params()}
    for name, arr in {"x": x, **m.arrays()}.items():
        assert relative_error(analytic[name], numeric_grad(loss, arr)) < 1e-4, name


def test_cbam_constant_and_reference():
    k7 = ConvKernel(np.zeros((1, 2, 7, 7)), np.zeros(1))
    x = np.full((1, 3, 5, 5), 4.0)
    assert np.array_equal(cbam_spatial_baseline(x, k7), x / 2)
    rng = np.random.default_rng(15)
    k7 = ConvKernel(0.2 * rng.standard_normal((1, 2, 7, 7)), rng.standard_normal(1))
    x = rng.standard_normal((2, 4, 6, 5))
    ref = cbam_ref(x, k7.weights, k7.bias)
    assert np.allclose(cbam_spatial_baseline(x, k7), ref, rtol=1e-12, atol=1e-14)
    with pytest.raises(ShapeError):
        cbam_spatial_baseline(x, ConvKernel(np.zeros((1, 3, 7, 7))))
