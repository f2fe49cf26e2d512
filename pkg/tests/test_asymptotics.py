import numpy as np
import pytest

from oseenflow.asymptotics import (DecayReport, fit_decay,
                                   log_moment_integral, predict_2d,
                                   predict_3d)
from oseenflow.bilinear import MomentMatrix
from oseenflow.fields import make_datum


def _samples(rs, fn):
    return [(r, fn(r)) for r in rs]


def test_fit_recovers_pure_power():
    rs = np.geomspace(10, 300, 14)
    rep = fit_decay(_samples(rs, lambda r: np.array([2.0 / r ** 3, 0.0])))
    assert abs(rep.exponent + 3.0) < 1e-10
    assert not rep.log_factor
    assert rep.max_rel_dev < 1e-12


def test_fit_detects_log_factor():
    rs = np.geomspace(10, 300, 14)
    rep = fit_decay(_samples(rs, lambda r: np.array([np.log(r) / r ** 3])))
    assert rep.log_factor
    assert abs(rep.exponent + 3.0) < 1e-10


def test_fit_noisy_power():
    rng = np.random.default_rng(5)
    rs = np.geomspace(5, 500, 20)
    noise = 1.0 + 0.02 * rng.standard_normal(len(rs))
    rep = fit_decay([(r, np.array([n / r ** 4]))
                     for r, n in zip(rs, noise)])
    assert abs(rep.exponent + 4.0) < 0.05
    assert not rep.log_factor


def test_fit_requires_enough_samples():
    rs = np.geomspace(10, 100, 5)
    with pytest.raises(ValueError):
        fit_decay(_samples(rs, lambda r: np.array([1 / r])))


def test_fit_requires_decade_span():
    rs = np.linspace(10, 30, 12)
    with pytest.raises(ValueError):
        fit_decay(_samples(rs, lambda r: np.array([1 / r])))


def test_report_window_validation():
    with pytest.raises(ValueError):
        DecayReport(window=(50.0, 20.0), exponent=-3.0, log_factor=False,
                    max_rel_dev=0.1, per_direction=[])


def test_2d_prediction_rotational_has_no_correction():
    # isotropic moment matrix contracts to zero against the odd kernel jet
    a = make_datum("rotational2d", 0.05)
    A = MomentMatrix(np.eye(2) * 0.05 ** 2 * np.pi, "A_from_datum")
    x = np.array([[30.0, 10.0], [-5.0, 45.0]])
    assert np.allclose(predict_2d(a, A, x), a.value(x), atol=1e-18)


def test_2d_prediction_anisotropic_correction_scaling():
    a = make_datum("anisotropic2d", 0.05)
    A = MomentMatrix(np.diag([3.0, 1.0]) * 0.05 ** 2 * np.pi / 4,
                     "A_from_datum")
    x = np.array([[20.0, 15.0]])
    corr1 = predict_2d(a, A, x) - a.value(x)
    corr2 = predict_2d(a, A, 2.0 * x) - a.value(2.0 * x)
    # log(r)/r^3 structure: corr(2x) = (corr(x)/8) * log(2r)/log(r)
    r = 25.0
    want = corr1 / 8.0 * np.log(2 * r) / np.log(r)
    assert np.allclose(corr2, want, rtol=1e-10)


def test_log_moment_scaling_in_time():
    a = make_datum("anisotropic2d", 0.05)
    x = np.array([[40.0, 10.0]])
    v1 = log_moment_integral(a, x, 1.0)
    # at fixed x the leading piece grows like t log(|x|/sqrt(t)) + t/2
    r = np.linalg.norm(x)
    t = 4.0
    s1 = np.log(r) + 0.5
    st = t * np.log(r / np.sqrt(t)) + t / 2
    assert np.allclose(log_moment_integral(a, x, t), v1 * st / s1,
                       rtol=1e-12)


def test_log_moment_rejects_near_points():
    a = make_datum("anisotropic2d", 0.05)
    with pytest.raises(ValueError):
        log_moment_integral(a, np.array([[1.0, 0.5]]), 1.0)


def test_3d_prediction_reduces_to_datum_when_moments_vanish():
    a = make_datum("rotational3d", 0.0)
    B = MomentMatrix(np.zeros((3, 3)), "B_from_Ws")
    x = np.array([[25.0, 0.0, 10.0]])
    pred = predict_3d(a, B, x, order="cheap")
    assert np.max(np.abs(pred)) < 1e-14
