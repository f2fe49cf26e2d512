import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oseenflow.kernels import (f_homog, gaussian, k_homog, oseen_f, oseen_k,
                               psi_remainders, q_poly)


def _pts(d, seed=0, n=6, lo=0.5, hi=3.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    r = np.linalg.norm(x, axis=1, keepdims=True)
    return x / r * rng.uniform(lo, hi, size=(n, 1))


@pytest.mark.parametrize("d", [2, 3])
def test_gaussian_normalization(d):
    # int g_t = 1 via tensor-product Gauss-Hermite
    gh_x, gh_w = np.polynomial.hermite_e.hermegauss(40)
    t = 0.7
    pts = np.stack(np.meshgrid(*([gh_x * np.sqrt(2 * t)] * d),
                               indexing="ij"), axis=-1).reshape(-1, d)
    wts = np.prod(np.stack(np.meshgrid(*([gh_w] * d), indexing="ij"),
                           axis=-1).reshape(-1, d), axis=1)
    r2 = np.sum(pts ** 2, axis=1)
    vals = gaussian(pts, t) * np.exp(r2 / (4 * t)) * (2 * t) ** (d / 2)
    assert abs(np.sum(wts * vals) - 1.0) < 1e-12


@pytest.mark.parametrize("d", [2, 3, 4])
def test_k_homog_homogeneity_and_symmetry(d):
    x = _pts(d, seed=1)
    k1 = k_homog(x)
    k2 = k_homog(2.5 * x)
    assert np.allclose(k2, k1 / 2.5 ** d, rtol=1e-13)
    assert np.allclose(k1, np.swapaxes(k1, -1, -2), atol=1e-14)


@pytest.mark.parametrize("d", [2, 3])
def test_q_poly_structure(d):
    x = _pts(d, seed=2)
    q = q_poly(x)
    # cubic homogeneity
    assert np.allclose(q_poly(3.0 * x), 27.0 * q, rtol=1e-13)
    # symmetric in the last two slots
    assert np.allclose(q, np.swapaxes(q, -1, -2), atol=1e-14)
    # trace over the last pair vanishes (harmonic polynomial family)
    tr = np.trace(q, axis1=-2, axis2=-1)
    assert np.max(np.abs(tr)) < 1e-13


@pytest.mark.parametrize("d", [2, 3])
def test_f_homog_is_gradient_scale(d):
    x = _pts(d, seed=3)
    f1 = f_homog(x)
    f2 = f_homog(2.0 * x)
    assert np.allclose(f2, f1 / 2.0 ** (d + 1), rtol=1e-13)


@pytest.mark.parametrize("d", [2, 3])
def test_oseen_k_divergence_free(d):
    # columns of the evolved projection kernel are divergence free
    x = _pts(d, seed=4, lo=0.8, hi=2.0)
    h = 1e-5
    t = 0.9
    div = np.zeros((len(x), d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        div += (oseen_k(x + e, t)[:, j, :] - oseen_k(x - e, t)[:, j, :]) / (2 * h)
    assert np.max(np.abs(div)) < 1e-8


@pytest.mark.parametrize("d", [2, 3])
def test_oseen_k_parabolic_scaling(d):
    x = _pts(d, seed=5)
    lam = 1.7
    k1 = oseen_k(lam * x, lam ** 2 * 1.0)
    k2 = oseen_k(x, 1.0) / lam ** d
    assert np.allclose(k1, k2, rtol=1e-11, atol=1e-14)


@pytest.mark.parametrize("d", [2, 3])
def test_oseen_f_parabolic_scaling(d):
    x = _pts(d, seed=6)
    lam = 1.3
    f1 = oseen_f(lam * x, lam ** 2 * 0.8)
    f2 = oseen_f(x, 0.8) / lam ** (d + 1)
    assert np.allclose(f1, f2, rtol=1e-10, atol=1e-13)


@pytest.mark.parametrize("d", [2, 3])
def test_oseen_f_approaches_homogeneous_profile(d):
    # K(x,t) -> K0(x) and F(x,t) -> F0(x) as t -> 0 at fixed x
    x = _pts(d, seed=7, lo=2.0, hi=3.0)
    rel = (np.abs(oseen_f(x, 1e-4) - f_homog(x))
           / np.max(np.abs(f_homog(x))))
    assert np.max(rel) < 1e-10
    relk = (np.abs(oseen_k(x, 1e-4) - k_homog(x))
            / np.max(np.abs(k_homog(x))))
    assert np.max(relk) < 1e-10


@pytest.mark.parametrize("d", [2, 3])
def test_kernel_remainder_gaussian_envelope(d):
    # |K(x,1) - K0(x)| decays like a Gaussian in |x|: the log-residual
    # against |x|^2 has strongly negative slope
    rs = np.linspace(2.0, 6.0, 9)
    x = np.zeros((len(rs), d))
    x[:, 0] = rs * 0.8
    x[:, 1] = rs * 0.6
    resid = np.max(np.abs(oseen_k(x, 1.0) - k_homog(x)), axis=(1, 2))
    slope = np.polyfit(rs ** 2, np.log(resid * rs ** d), 1)[0]
    assert slope < -0.15


@pytest.mark.parametrize("d", [2, 3])
def test_psi_remainders_decay(d):
    xi = _pts(d, seed=8, lo=4.0, hi=8.0)
    pk, pf = psi_remainders(xi)
    r = np.linalg.norm(xi, axis=1)
    # remainders fall off faster than any power near the wings
    assert np.max(np.max(np.abs(pk), axis=(1, 2)) * r ** (d + 2)) < 1.0
    assert np.max(np.max(np.abs(pf), axis=(1, 2, 3)) * r ** (d + 3)) < 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 4), st.floats(0.3, 3.0), st.floats(0.1, 4.0))
def test_k_homog_bounded_by_radius_power(d, r, t):
    x = np.zeros((1, d))
    x[0, 0] = r
    assert np.all(np.isfinite(oseen_k(x, t)))
    assert np.max(np.abs(k_homog(x))) <= 10.0 / r ** d
