"""Quadrature on the unit sphere and the cancellation / moment identities
of the homogeneous kernel tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .kernels import f_homog, k_homog

__all__ = [
    "SphereRule",
    "surface_measure",
    "build_rule",
    "angular_average",
    "verify_cancellations",
]


def surface_measure(d: int) -> float:
    """|S^{d-1}| for d in {2, 3, 4}."""
    return {2: 2 * np.pi, 3: 4 * np.pi, 4: 2 * np.pi**2}[d]


@dataclass(frozen=True)
class SphereRule:
    d: int
    nodes: np.ndarray  # (n, d) unit vectors
    weights: np.ndarray  # (n,) positive
    exactness_degree: int

    @property
    def n(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Weighted sum of per-node values (first axis = node index)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def build_rule(d: int, order: int) -> SphereRule:
    """Deterministic product rule exact for spherical polynomials up to
    degree >= order.

    d=2: equispaced trapezoid; d=3: Gauss-Legendre in the polar cosine x
    equispaced azimuth; d=4: Gauss-Jacobi (Gegenbauer weight) in the first
    polar cosine x d=3 rule.
    """
    if order < 4:
        raise ValueError("order must be >= 4")
    if d == 2:
        n = 2 * order + 2
        theta = 2 * np.pi * np.arange(n) / n
        nodes = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        weights = np.full(n, 2 * np.pi / n)
        return SphereRule(2, nodes, weights, n - 1)
    if d == 3:
        n_pol = order // 2 + 2
        n_az = 2 * order + 2
        u, wu = roots_legendre(n_pol)
        phi = 2 * np.pi * np.arange(n_az) / n_az
        s = np.sqrt(1 - u**2)
        nodes = np.stack(
            [
                np.outer(s, np.cos(phi)).ravel(),
                np.outer(s, np.sin(phi)).ravel(),
                np.outer(u, np.ones(n_az)).ravel(),
            ],
            axis=-1,
        )
        weights = np.outer(wu, np.full(n_az, 2 * np.pi / n_az)).ravel()
        return SphereRule(3, nodes, weights, min(2 * n_pol - 1, n_az - 1))
    if d == 4:
        # omega = (u, sqrt(1-u^2) w), w in S^2; measure (1-u^2)^{1/2} du dS^2
        n_chi = order // 2 + 2
        u, wu = roots_jacobi(n_chi, 0.5, 0.5)
        sub = build_rule(3, order)
        s = np.sqrt(1 - u**2)
        nodes = np.concatenate(
            [
                np.repeat(u, sub.n)[:, None],
                (s[:, None, None] * sub.nodes[None, :, :]).reshape(-1, 3),
            ],
            axis=-1,
        )
        weights = np.outer(wu, sub.weights).ravel()
        return SphereRule(4, nodes, weights, min(2 * n_chi - 1, sub.exactness_degree))
    raise ValueError(f"unsupported dimension {d}")


def angular_average(f, rule: SphereRule):
    """Quadrature of f over the sphere; f maps node arrays to values."""
    values = f(rule.nodes) if callable(f) else np.asarray(f)
    return rule.integrate(np.asarray(values, dtype=float))


def verify_cancellations(rule: SphereRule) -> dict[str, float]:
    """Max absolute value of each vanishing spherical integral family of
    the homogeneous kernel tensors."""
    kk = k_homog(rule.nodes)  # (n, d, d)
    ff = f_homog(rule.nodes)  # (n, d, d, d)
    w = rule.weights
    om = rule.nodes
    int_k = np.einsum("n,njk->jk", w, kk)
    int_om_k = np.einsum("n,nl,njk->ljk", w, om, kk)
    int_f = np.einsum("n,njhk->jhk", w, ff)
    int_om_f = np.einsum("n,nl,njhk->ljhk", w, om, ff)
    int_om2_f = np.einsum("n,nl,nm,njhk->lmjhk", w, om, om, ff)
    return {
        "int_K": float(np.max(np.abs(int_k))),
        "int_omega_K": float(np.max(np.abs(int_om_k))),
        "int_F": float(np.max(np.abs(int_f))),
        "int_omega_F": float(np.max(np.abs(int_om_f))),
        "int_omega_omega_F": float(np.max(np.abs(int_om2_f))),
    }
