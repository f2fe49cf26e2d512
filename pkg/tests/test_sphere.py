import numpy as np
import pytest

from oseenflow.sphere import (SphereRule, angular_average, build_rule,
                              surface_measure, verify_cancellations)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_total_weight_is_surface_measure(d):
    rule = build_rule(d, 30)
    assert abs(np.sum(rule.weights) - surface_measure(d)) < 1e-12


@pytest.mark.parametrize("d", [2, 3, 4])
def test_quadratic_moments(d):
    # int omega_j^2 = |S^{d-1}| / d
    rule = build_rule(d, 30)
    sd = surface_measure(d)
    for j in range(d):
        val = np.sum(rule.weights * rule.nodes[:, j] ** 2)
        assert abs(val - sd / d) < 1e-12


@pytest.mark.parametrize("d", [2, 3, 4])
def test_quartic_moments(d):
    # int omega_j^4 = 3|S^{d-1}|/(d(d+2)); int omega_j^2 omega_k^2 with j != k
    # carries the same normalization without the factor 3
    rule = build_rule(d, 30)
    sd = surface_measure(d)
    quart = np.sum(rule.weights * rule.nodes[:, 0] ** 4)
    cross = np.sum(rule.weights * rule.nodes[:, 0] ** 2
                   * rule.nodes[:, 1] ** 2)
    assert abs(quart - 3 * sd / (d * (d + 2))) < 1e-12
    assert abs(cross - sd / (d * (d + 2))) < 1e-12


@pytest.mark.parametrize("d", [2, 3, 4])
def test_odd_moments_vanish(d):
    rule = build_rule(d, 30)
    for j in range(d):
        assert abs(np.sum(rule.weights * rule.nodes[:, j])) < 1e-13
        assert abs(np.sum(rule.weights * rule.nodes[:, j] ** 3)) < 1e-13


@pytest.mark.parametrize("d", [2, 3, 4])
def test_kernel_cancellations(d):
    vals = verify_cancellations(build_rule(d, 32))
    assert set(vals) == {"int_K", "int_omega_K", "int_F", "int_omega_F",
                         "int_omega_omega_F"}
    for name, v in vals.items():
        assert v <= 1e-11, name


def test_angular_average_of_constant():
    rule = build_rule(3, 20)
    avg = angular_average(lambda om: np.ones(len(om)), rule)
    assert abs(avg - surface_measure(3)) < 1e-12


def test_nodes_on_unit_sphere():
    for d in (2, 3, 4):
        rule = build_rule(d, 24)
        r = np.linalg.norm(rule.nodes, axis=1)
        assert np.max(np.abs(r - 1.0)) < 1e-13
