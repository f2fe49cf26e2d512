import numpy as np
import pytest

from oseenflow.bilinear import (MomentMatrix, TensorFieldW, apply_L,
                                _far_consts, _oseen_contract, _oseen_fast,
                                compute_A, tensor_product_field,
                                time_integral_field, weighted_L)
from oseenflow.fields import GridField, make_datum
from oseenflow.kernels import f_homog, oseen_f


def _gaussian_moment_w(d, m, shift=1.0):
    """w(y, s) = g_{shift+s}(y) M: its space-time smoothing has the closed
    form t F(x, t+shift) : M, an exact oracle for the integral operator."""
    def fn(y, s):
        tt = shift + np.asarray(s, float)
        r2 = np.sum(np.asarray(y, float) ** 2, axis=-1)
        g = (4 * np.pi * tt) ** (-d / 2) * np.exp(-r2 / (4 * tt))
        return g[..., None, None] * m
    return TensorFieldW.from_function(fn, d)


@pytest.mark.parametrize("d", [2, 3])
def test_smoothing_matches_closed_form_cheap(d):
    rng = np.random.default_rng(3)
    m = rng.normal(size=(d, d))
    w = _gaussian_moment_w(d, m)
    t = 1.0
    radii = [0.05, 0.7, 2.0, 8.0, 40.0]
    x = np.zeros((len(radii), d))
    x[:, 0] = np.asarray(radii) * 0.8
    x[:, 1] = np.asarray(radii) * 0.6
    got = apply_L(w, x, t, order="cheap")
    want = t * np.einsum("njhk,hk->nj", oseen_f(x, t + 1.0), m)
    err = np.max(np.abs(got - want)) / np.max(np.abs(want))
    assert err < 5e-2


def test_smoothing_fine_accuracy_3d():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(3, 3))
    w = _gaussian_moment_w(3, m)
    x = np.array([[1.0, 0.3, 0.0]])
    got = apply_L(w, x, 1.0, order="fine")
    want = np.einsum("njhk,hk->nj", oseen_f(x, 2.0), m)
    err = np.max(np.abs(got - want)) / np.max(np.abs(want))
    assert err < 5e-3


def test_weighted_smoothing_closed_form():
    # weight s gives t^2/2 F(x, t+shift) : M for the Gaussian moment field
    rng = np.random.default_rng(4)
    m = rng.normal(size=(3, 3))
    w = _gaussian_moment_w(3, m)
    x = np.array([[6.0, 2.0, 1.0]])
    t = 1.0
    got = weighted_L(w, x, t, "s", order="cheap")
    want = t ** 2 / 2 * np.einsum("njhk,hk->nj", oseen_f(x, t + 1.0), m)
    err = np.max(np.abs(got - want)) / np.max(np.abs(want))
    assert err < 5e-2


@pytest.mark.parametrize("d", [2, 3])
def test_kernel_profile_tables_match_direct(d):
    rng = np.random.default_rng(0)
    z = rng.normal(size=(40, d)) * rng.uniform(0.2, 8.0, size=(40, 1))
    ft = _oseen_fast(z, 1.3)
    fd = oseen_f(z, 1.3)
    assert np.max(np.abs(ft - fd)) < 1e-7 * np.max(np.abs(fd))


@pytest.mark.parametrize("d", [2, 3])
def test_profile_contraction_matches_assembled(d):
    rng = np.random.default_rng(1)
    z = rng.normal(size=(25, d)) * rng.uniform(0.1, 20.0, size=(25, 1))
    wv = rng.normal(size=(25, d, d))
    sig = 0.8
    got = _oseen_contract(z, sig, wv)
    want = np.einsum("njhk,nhk->nj", _oseen_fast(z, sig), wv)
    assert np.max(np.abs(got - want)) < 1e-13 * np.max(np.abs(want))


@pytest.mark.parametrize("d", [2, 3])
def test_far_profile_constants(d):
    # the four radial profiles reduce to the homogeneous tensor at sigma=0
    c = _far_consts(d)
    z = np.array([[1.7] + [0.0] * (d - 1)])
    f0 = f_homog(z)[0]
    r = 1.7
    assert abs(c[1] / r ** (d + 1) - f0[1, 0, 1]) < 1e-12
    assert abs(c[2] / r ** (d + 1) - f0[1, 1, 0]) < 1e-12
    assert abs((c[0] + c[1] + c[2] + c[3]) / r ** (d + 1)
               - f0[0, 0, 0]) < 1e-12


def test_moment_matrix_provenance_guard():
    with pytest.raises(ValueError):
        MomentMatrix(np.eye(2), "guessed")


def test_compute_A_rotational_is_isotropic():
    a = make_datum("rotational2d", 0.05)
    A = compute_A(a)
    assert A.provenance == "A_from_datum"
    want = 0.05 ** 2 * np.pi * np.eye(2)
    assert np.max(np.abs(A.entries - want)) < 1e-10


def test_compute_A_anisotropic_diag():
    a = make_datum("anisotropic2d", 0.05)
    A = compute_A(a)
    want = 0.05 ** 2 * np.pi / 4 * np.diag([3.0, 1.0])
    assert np.max(np.abs(A.entries - want)) < 1e-10


def test_compute_A_quadratic_in_eps():
    A1 = compute_A(make_datum("anisotropic2d", 0.02))
    A2 = compute_A(make_datum("anisotropic2d", 0.04))
    assert np.allclose(A2.entries, 4.0 * A1.entries, rtol=1e-12)


def test_tensor_product_field_values():
    a = make_datum("anisotropic2d", 0.05)
    g = GridField.from_function(a.value, 2, n_radial=12, n_angular=8,
                                r_min=0.1, r_max=10.0, far_field=a)
    uv = tensor_product_field(g, g)
    v = g.values
    assert np.allclose(uv.values, v[..., :, None] * v[..., None, :])
    assert uv.kind == "tensor"


def test_profile_slice_self_similar_scaling():
    a = make_datum("rotational3d", 0.05)
    prof = GridField.from_homogeneous(a, n_radial=24, n_angular=8,
                                      r_min=0.05, r_max=50.0)
    w = TensorFieldW.from_profile(tensor_product_field(prof, prof))
    y = np.array([[1.0, 0.5, 0.2]])
    # degree -2 profile with s_power -1: w(y, s) = s^{-1} W(y / sqrt(s))
    v1 = w.slice(y, 1.0)
    v4 = w.slice(2.0 * y, 4.0)
    assert np.allclose(v4, v1 / 4.0, rtol=1e-10)


def test_time_integral_field_of_moment_data():
    # int_0^t ds g_{1+s}(y) M evaluated against a numeric s-quadrature
    m = np.array([[1.0, 0.2], [0.1, 0.5]])
    w = _gaussian_moment_w(2, m)
    t = 0.8
    g = time_integral_field(w, t, order="cheap")
    pts = np.array([[0.5, 0.2], [2.0, -1.0], [5.0, 4.0]])
    ss, sw = np.polynomial.legendre.leggauss(40)
    ss = (ss + 1) / 2 * t
    sw = sw / 2 * t
    r2 = np.sum(pts ** 2, axis=-1)
    tt = 1.0 + ss[:, None]
    want = np.einsum("s,sn->n", sw,
                     (4 * np.pi * tt) ** -1 * np.exp(-r2[None] / (4 * tt)))
    got = g.eval(pts)
    assert np.allclose(got, want[:, None, None] * m, rtol=1e-5, atol=1e-12)
