import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from latentdepth import codec
from latentdepth.codec import DepthMap, TransformedDepth


def dm(values):
    return DepthMap.from_array(np.atleast_2d(np.asarray(values, dtype=float)),
                               valid=np.ones(np.atleast_2d(values).shape, bool))


def td(rho, alpha=1.0):
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    return TransformedDepth(rho, alpha, np.ones(rho.shape, bool))


def test_encode_examples():
    a = 2.5
    t = codec.encode(dm([a, 0.0, 3 * a]), a)
    np.testing.assert_allclose(t.rho, [[0.5, 1.0, 0.25]])


def test_decode_examples():
    np.testing.assert_allclose(codec.decode(td([0.5], 2.0)).d, [[2.0]])
    assert codec.decode(td([1.0], 3.0)).d[0, 0] == 0.0


def test_invalid_pixels_carry_sentinel():
    d = DepthMap.from_array(np.array([[1.0, np.nan, -2.0, 4.0]]))
    assert d.valid.tolist() == [[True, False, False, True]]
    t = codec.encode(d, 2.0)
    assert t.rho[0, 1] == 1.0 and t.rho[0, 2] == 1.0
    assert not t.valid[0, 1]
    back = codec.decode(t)
    assert back.d[0, 1] == 0.0 and not back.valid[0, 1]


@pytest.mark.parametrize("alpha", [0.0, -1.0, np.nan])
def test_bad_alpha_rejected(alpha):
    with pytest.raises(ValueError):
        codec.encode(dm([1.0]), alpha)


def test_negative_depth_rejected():
    with pytest.raises(ValueError):
        codec.encode(dm([-1.0]), 1.0)


def test_decode_clamps_tiny_rho():
    d = codec.decode(td([0.0, 1e-9], 1.0)).d
    assert np.all(np.isfinite(d))
    np.testing.assert_allclose(d, (1 - codec.RHO_MIN) / codec.RHO_MIN)


def test_random_rho_round_trip():
    rng = np.random.default_rng(0)
    rho = rng.uniform(codec.RHO_MIN, 1.0, size=(40, 50))
    back = codec.encode(codec.decode(td(rho, 1.7)), 1.7).rho
    np.testing.assert_allclose(back, rho, rtol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (6, 7), elements=st.floats(0.01, 1e3)), st.floats(0.05, 50.0))
def test_depth_round_trip(d, alpha):
    # identity holds on the unclamped range rho >= RHO_MIN
    assume(alpha / (d.max() + alpha) >= codec.RHO_MIN)
    back = codec.decode(codec.encode(dm(d), alpha)).d
    np.testing.assert_allclose(back, d, rtol=1e-9)


def test_monotonic():
    D = np.linspace(0, 100, 1001)
    rho = codec.encode(dm(D), 3.0).rho[0]
    assert np.all(np.diff(rho) < 0)
    back = codec.decode(td(np.linspace(codec.RHO_MIN, 1, 1001), 3.0)).d[0]
    assert np.all(np.diff(back) < 0)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (4, 5), elements=st.floats(1e-3, 1.0)), st.floats(0.1, 10.0),
       st.floats(0.01, 100.0))
def test_scale_equivariance(rho, alpha, c):
    a = codec.decode(td(rho, c * alpha)).d
    b = c * codec.decode(td(rho, alpha)).d
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


def test_alpha_loss_examples():
    assert codec.alpha_loss(td(np.full((3, 3), 0.5))) == 0.0
    assert codec.alpha_loss(td(np.full((3, 3), 2 / 3))) == pytest.approx(0.25, abs=1e-15)


def test_alpha_loss_matches_decode_oracle():
    rng = np.random.default_rng(3)
    rho = rng.uniform(0.1, 0.9, size=(10, 12))
    alpha = 2.0
    depth = alpha * (1 - rho) / rho
    oracle = (1 - depth.mean() / alpha) ** 2
    assert codec.alpha_loss(td(rho, alpha)) == pytest.approx(oracle, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(float, (5, 6), elements=st.floats(0.05, 200.0)))
def test_alpha_loss_zero_at_mean(d):
    assert codec.alpha_loss(codec.encode(dm(d), float(d.mean()))) <= 1e-12


def test_alpha_loss_ignores_invalid_and_rejects_empty():
    rho = np.array([[0.5, 0.01]])
    t = TransformedDepth(rho, 1.0, np.array([[True, False]]))
    assert codec.alpha_loss(t) == 0.0
    with pytest.raises(ValueError):
        codec.alpha_loss(TransformedDepth(rho, 1.0, np.zeros((1, 2), bool)))


def test_alpha_loss_grad_matches_finite_differences():
    rng = np.random.default_rng(1)
    rho = rng.uniform(0.2, 0.8, size=12)
    loss, g = codec.alpha_loss_grad(rho)
    assert loss == pytest.approx(codec.alpha_loss(td(rho)))
    h = 1e-6
    for k in range(rho.size):
        e = np.zeros_like(rho)
        e[k] = h
        fd = (codec.alpha_loss_grad(rho + e)[0] - codec.alpha_loss_grad(rho - e)[0]) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-5, abs=1e-10)
