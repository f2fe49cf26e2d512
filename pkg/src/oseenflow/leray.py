"""Nonlinear correction terms for d >= 3 far-field expansions.

The filtered Leray term e^{Delta} P div(a (x) a) is a plain convolution with
the third-order kernel at unit time; the optional exact projection
P div(a (x) a) solves the pressure problem spectrally on the sphere.  Both
are homogeneous of degree -3 in the far field and differ by O(|x|^{-5}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .convolution import _iterated_laplacian_unit, _smoothstep
from .fields import GridField, HomogeneousField
from .kernels import f_homog, oseen_f
from .sphere import build_rule

__all__ = ["CorrectionField", "filtered_leray_term", "homog_leray_term",
           "laplacian_of_datum"]


@dataclass
class CorrectionField:
    """Correction-term values sampled on a grid, tagged by construction."""

    grid: GridField
    flag: str  # "filtered" or "homogeneous"

    def __post_init__(self):
        if self.flag not in ("filtered", "homogeneous"):
            raise ValueError(f"unknown flag {self.flag!r}")


def laplacian_of_datum(a: HomogeneousField, x) -> np.ndarray:
    """Delta a, homogeneous of degree -3; analytic when the datum carries a
    Laplacian closure, spherical finite differences otherwise."""
    x = np.atleast_2d(np.asarray(x, float))
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise ValueError("Laplacian of a degree -1 field is singular at 0")
    if a._laplacian is not None:
        out = np.asarray(a.laplacian(x), float)
    else:
        hat = x / r[:, None]
        unit = np.stack([_iterated_laplacian_unit(a.value, a.d, w)
                         for w in hat])
        out = unit * r[:, None] ** -3
    return out if out.shape[0] > 1 else out[0]


def _tensor_aa(a: HomogeneousField, y: np.ndarray) -> np.ndarray:
    v = np.asarray(a.value(y.reshape(-1, a.d)), float).reshape(y.shape)
    return v[..., :, None] * v[..., None, :]


def filtered_leray_term(a: HomogeneousField, x, order: str = "fine") -> np.ndarray:
    """e^{Delta} P div(a (x) a)(x) = int F(x-y, 1) : (a (x) a)(y) dy.

    The |y|^{-2} singularity of the datum product sits on its own
    origin-centered chart; the rest is integrated on a log-radial grid
    around x where the kernel lives.
    """
    if a.d < 3:
        raise ValueError("the Leray term of a degree -2 product needs d >= 3")
    d = a.d
    x = np.atleast_2d(np.asarray(x, float))
    fine = order == "fine"
    per_dec, gl = (5.0, 4) if fine else (3.0, 3)
    ang = 12 if fine else 8
    rule = build_rule(d, ang)
    # kernel chart shared by every target: z = x - y on log shells
    rz, wz = _log_shells(1e-3, 1.5e3, per_dec, gl)
    zpts = rz[:, None, None] * rule.nodes[None, :, :]
    ker = oseen_f(zpts, 1.0)  # (nr, na, d, d, d)
    wk = (wz * rz ** (d - 1))[:, None] * rule.weights[None, :]
    out = np.empty((len(x), d))
    for i, xi in enumerate(x):
        big_r = float(np.linalg.norm(xi))
        y = xi[None, None, :] - zpts
        ay = np.sqrt(np.sum(y * y, axis=-1))
        if big_r > 0:
            zeta = _smoothstep(ay, big_r / 4, big_r / 2)
        else:
            zeta = np.ones_like(ay)
        aa = _tensor_aa(a, np.where(ay[..., None] > 0, y, 1.0))
        aa[ay == 0] = 0.0
        val = np.einsum("ra,ra,rajhk,rahk->j", wk, zeta, ker, aa)
        if big_r > 0:
            ry, wy = _log_shells(1e-5 * big_r, big_r / 2, per_dec, gl)
            cut = 1.0 - _smoothstep(ry, big_r / 4, big_r / 2)
            y0 = ry[:, None, None] * rule.nodes[None, :, :]
            k0 = oseen_f(xi[None, None, :] - y0, 1.0)
            aa0 = _tensor_aa(a, y0)
            val += np.einsum("r,a,rajhk,rahk->j", wy * ry ** (d - 1) * cut,
                             rule.weights, k0, aa0)
        out[i] = val
    return out if out.shape[0] > 1 else out[0]


def _log_shells(lo: float, hi: float, per_dec: float, gl: int):
    from .bilinear import _log_gl
    return _log_gl(lo, hi, per_dec, gl)


# ---------------------------------------------------------------------------
# exact homogeneous projection via the pressure problem on the sphere


_LMAX = 16


def _sph_coeffs(fn, lmax: int = _LMAX):
    """Spherical-harmonic coefficients of a scalar function on S^2."""
    from scipy.special import sph_harm_y
    rule = build_rule(3, 40)
    th = np.arccos(np.clip(rule.nodes[:, 2], -1.0, 1.0))
    ph = np.arctan2(rule.nodes[:, 1], rule.nodes[:, 0])
    f = np.asarray(fn(rule.nodes), float)
    coef = {}
    for ell in range(lmax + 1):
        for m in range(-ell, ell + 1):
            y = sph_harm_y(ell, m, th, ph)
            coef[(ell, m)] = np.sum(rule.weights * np.conj(y) * f)
    return coef


def _div_aa(a: HomogeneousField, pts: np.ndarray,
            h_rel: float = 1e-5) -> np.ndarray:
    """div(a (x) a), central differences (degree -3, smooth off the origin)."""
    d = a.d
    pts = np.atleast_2d(pts)
    h = h_rel * np.linalg.norm(pts, axis=-1, keepdims=True)
    out = np.zeros(pts.shape)
    for k in range(d):
        e = np.zeros((1, d))
        e[0, k] = 1.0
        out += (_tensor_aa(a, pts + h * e)[..., :, k]
                - _tensor_aa(a, pts - h * e)[..., :, k]) / (2 * h)
    return out


def homog_leray_term(a: HomogeneousField, x, lmax: int = _LMAX) -> np.ndarray:
    """P div(a (x) a) for d = 3 by the spectral pressure solve.

    The pressure is homogeneous of degree -2, q = sum q_lm r^{-2} Y_lm with
    (2 - l(l+1)) q_lm = (div g)_lm; the degree-1 harmonic mode is resonant
    and raises a diagnostic when excited.
    """
    if a.d != 3:
        raise ValueError("spectral pressure solve implemented for d = 3")
    x = np.atleast_2d(np.asarray(x, float))
    # div g on the sphere, g = div(a (x) a); its components feed both the
    # projected field and the pressure right-hand side
    def divg_unit(w):
        h = 1e-4
        g = np.zeros(len(w))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            g += (_div_aa(a, w + e)[:, k] - _div_aa(a, w - e)[:, k]) / (2 * h)
        return g

    coef = _sph_coeffs(divg_unit, lmax)
    scale = max(abs(v) for v in coef.values()) or 1.0
    q_coef = {}
    for (ell, m), c in coef.items():
        if ell == 1:
            if abs(c) > 1e-6 * scale:
                raise ValueError(
                    f"resonant pressure mode (l=1, m={m}): the degree -2 "
                    "pressure problem has no homogeneous solution")
            continue
        q_coef[(ell, m)] = c / (2.0 - ell * (ell + 1))

    from scipy.special import sph_harm_y

    def q(pts):
        pts = np.atleast_2d(pts)
        r = np.linalg.norm(pts, axis=-1)
        th = np.arccos(np.clip(pts[:, 2] / r, -1.0, 1.0))
        ph = np.arctan2(pts[:, 1], pts[:, 0])
        val = np.zeros(len(pts), complex)
        for (ell, m), c in q_coef.items():
            val += c * sph_harm_y(ell, m, th, ph)
        return val.real * r ** -2

    out = _div_aa(a, x)
    for k in range(3):
        e = np.zeros(3)
        h = 1e-4 * np.linalg.norm(x, axis=-1, keepdims=True)
        ek = np.zeros((1, 3))
        ek[0, k] = 1.0
        out[:, k] -= (q(x + h * ek) - q(x - h * ek)) / (2 * h[:, 0])
    return out if out.shape[0] > 1 else out[0]
