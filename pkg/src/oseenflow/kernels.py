"""Closed-form evaluation of the heat kernel, the Oseen kernel and its
homogeneous / Gaussian-remainder decomposition.

Conventions: points are arrays of shape (..., d).  Matrix kernels return
shape (..., d, d) indexed [j, k]; third-order kernels return
(..., d, d, d) indexed [j, h, k].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc

__all__ = [
    "OseenTensors",
    "gaussian",
    "oseen_k",
    "oseen_f",
    "k_homog",
    "f_homog",
    "q_poly",
    "psi_remainders",
]

# below this |x|/sqrt(t) the kernel is evaluated by its smooth limit at x=0
_SMALL_RATIO = 1e-8


@dataclass(frozen=True)
class OseenTensors:
    """Prefactors of the homogeneous tensors for a fixed dimension."""

    d: int

    def __post_init__(self):
        if self.d not in (2, 3, 4):
            raise ValueError(f"unsupported dimension {self.d}")

    @property
    def kk_prefactor(self) -> float:
        """Prefactor of the degree -d matrix tensor."""
        return gamma_fn(self.d / 2) / (2 * np.pi ** (self.d / 2))

    @property
    def gamma_d(self) -> float:
        """Prefactor of the degree -(d+1) third-order tensor."""
        return gamma_fn((self.d + 2) / 2) / np.pi ** (self.d / 2)


def _check_t(t: float) -> float:
    t = float(t)
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")
    return t


def _as_points(x, d=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or (d is not None and x.shape[-1] != d):
        raise ValueError("points must have shape (..., d)")
    if not np.all(np.isfinite(x)):
        raise ValueError("point coordinates must be finite")
    return x


def gaussian(x, t: float) -> np.ndarray:
    """Heat kernel (4 pi t)^{-d/2} exp(-|x|^2 / 4t)."""
    t = _check_t(t)
    x = _as_points(x)
    d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    return (4 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (4 * t))


def _lower_moment(alpha: float, r2) -> np.ndarray:
    """int_0^r lam^alpha exp(-lam^2) dlam with r = sqrt(r2)."""
    a = (alpha + 1) / 2
    return 0.5 * gamma_fn(a) * gammainc(a, r2)


def k_homog(x) -> np.ndarray:
    """Homogeneous degree -d part of the Oseen kernel."""
    x = _as_points(x)
    d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 == 0):
        raise ValueError("homogeneous kernel is singular at x = 0")
    pref = OseenTensors(d).kk_prefactor
    eye = np.eye(d)
    num = -eye * r2[..., None, None] + d * x[..., :, None] * x[..., None, :]
    return pref * num / (r2 ** ((d + 2) / 2))[..., None, None]


def q_poly(x) -> np.ndarray:
    """Degree-3 homogeneous polynomial tensor, |x|^{d+4} times f_homog."""
    x = _as_points(x)
    d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    gd = OseenTensors(d).gamma_d
    eye = np.eye(d)
    sig = (
        eye[:, None, :] * x[..., None, :, None]   # delta_{j,h} x_k
        + eye[None, :, :] * x[..., :, None, None]  # delta_{h,k} x_j
        + eye[:, :, None] * x[..., None, None, :]  # delta_{k,j} x_h
    )
    xxx = x[..., :, None, None] * x[..., None, :, None] * x[..., None, None, :]
    return gd * (sig * r2[..., None, None, None] - (d + 2) * xxx)


def f_homog(x) -> np.ndarray:
    """Homogeneous degree -(d+1) part of the third-order kernel."""
    x = _as_points(x)
    d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 == 0):
        raise ValueError("homogeneous kernel is singular at x = 0")
    return q_poly(x) / (r2 ** ((d + 4) / 2))[..., None, None, None]


def oseen_k(x, t: float) -> np.ndarray:
    """Matrix kernel of the heat semigroup composed with the Leray projector.

    Closed form via lower incomplete gamma functions; smooth at x = 0.
    """
    t = _check_t(t)
    x = _as_points(x)
    d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    eye = np.eye(d)
    g = gaussian(x, t)

    small = r2 < (_SMALL_RATIO**2) * t
    r2_safe = np.where(small, 1.0, r2)
    z = r2_safe / (4 * t)  # (|x| / 2 sqrt(t))^2
    i_lo = _lower_moment(d - 1, z)
    i_hi = _lower_moment(d + 1, z)

    pref = np.pi ** (-d / 2) / r2_safe ** (d / 2)
    tail = pref[..., None, None] * (
        -eye * i_lo[..., None, None]
        + 2
        * (x[..., :, None] * x[..., None, :] / r2_safe[..., None, None])
        * i_hi[..., None, None]
    )
    out = eye * g[..., None, None] + tail
    if np.any(small):
        # K(0, t) = ((d-1)/d) g_t(0) Id, the smooth Fourier-side limit
        limit = eye * ((d - 1) / d * g)[..., None, None]
        out = np.where(small[..., None, None], limit, out)
    return out


def oseen_f(x, t: float) -> np.ndarray:
    """Third-order kernel of the projected divergence under the heat flow.

    Componentwise gradient (in h) of the matrix kernel, in closed form.
    """
    t = _check_t(t)
    x = _as_points(x)
    d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    eye = np.eye(d)
    g = gaussian(x, t)

    small = r2 < (_SMALL_RATIO**2) * t
    r2_safe = np.where(small, 1.0, r2)
    z = r2_safe / (4 * t)
    i_lo = _lower_moment(d - 1, z)
    i_hi = _lower_moment(d + 1, z)
    ez = np.exp(-z)
    pref = np.pi ** (-d / 2) / r2_safe ** ((d + 2) / 2)

    xj = x[..., :, None, None]
    xh = x[..., None, :, None]
    xk = x[..., None, None, :]
    jk = eye[:, None, :]
    jh = eye[:, :, None]
    hk = eye[None, :, :]

    # delta_{j,k} d_h g_t
    term1 = jk * (-x / (2 * t) * g[..., None])[..., None, :, None]
    # gradient of -delta_{j,k} |x|^{-d} I_{d-1}
    term2 = (
        -pref[..., None, None, None]
        * jk
        * xh
        * (-d * i_lo + z ** (d / 2) * ez)[..., None, None, None]
    )
    # gradient of 2 x_j x_k |x|^{-d-2} I_{d+1}
    term3 = (
        2
        * pref[..., None, None, None]
        * (
            (jh * xk + hk * xj) * i_hi[..., None, None, None]
            + xj
            * xh
            * xk
            / r2_safe[..., None, None, None]
            * (-(d + 2) * i_hi + z ** ((d + 2) / 2) * ez)[..., None, None, None]
        )
    )
    out = term1 + term2 + term3
    if np.any(small):
        out = np.where(small[..., None, None, None], 0.0, out)
    return out


def psi_remainders(xi) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-rate remainders of both kernels in the scaled variable.

    Returns the matrix |xi|^d (K(xi,1) - K0(xi)) and the tensor
    |xi|^{d+1} (F(xi,1) - F0(xi)); both depend on xi = x / sqrt(t) only.
    """
    xi = _as_points(xi)
    d = xi.shape[-1]
    r = np.sqrt(np.sum(xi * xi, axis=-1))
    if np.any(r == 0):
        raise ValueError("remainder functions are singular at xi = 0")
    psi = (r**d)[..., None, None] * (oseen_k(xi, 1.0) - k_homog(xi))
    psi_t = (r ** (d + 1))[..., None, None, None] * (oseen_f(xi, 1.0) - f_homog(xi))
    return psi, psi_t
