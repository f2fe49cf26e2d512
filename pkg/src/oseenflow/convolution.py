"""Convolution with Gaussian weights: the moment expansion of f*g_t, a
brute-force quadrature oracle, heat-semigroup evaluation of slowly decaying
data, and the product-of-heat-flows identity check.

The heat evolution of a degree -1 datum splits at |x| = 8 sqrt(t): outside,
the moment expansion (whose even terms collapse to a + t*Lap a + t^2/2 Lap^2 a)
is accurate to O(t^3 |x|^{-7}); inside, the convolution is done by direct
quadrature with a smooth partition of unity isolating the origin singularity
of the datum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .fields import GridField, HomogeneousField
from .sphere import build_rule

__all__ = [
    "MomentTable",
    "gaussian_moments",
    "gaussian_weight",
    "field_derivative",
    "conv_expansion",
    "conv_oracle",
    "conv_expansion_residual",
    "heat_point",
    "heat_evolve",
    "heat_expansion_residual",
    "product_heat_identity_check",
]


# ---------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class MomentTable:
    """Moments int y^gamma w(y) dy of a weight function for |gamma| <= m-1."""

    t: float
    m: int
    d: int
    weight: str
    _table: dict

    def moment(self, gamma) -> float:
        return self._table[tuple(gamma)]

    def multi_indices(self):
        return sorted(self._table)


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def gaussian_moments(t: float, m: int, d: int) -> MomentTable:
    """Exact moments of the heat kernel g_t: int y^{2b} g_t = 2^b (2b-1)!! t^b
    componentwise, odd moments zero."""
    if t <= 0:
        raise ValueError("t must be positive")
    if m < 1:
        raise ValueError("m must be >= 1")
    table = {}
    for gamma in itertools.product(range(m), repeat=d):
        if sum(gamma) > m - 1:
            continue
        if any(g % 2 for g in gamma):
            table[gamma] = 0.0
        else:
            val = 1.0
            for g in gamma:
                b = g // 2
                val *= 2.0**b * _double_factorial(2 * b - 1) * t**b
            table[gamma] = val
    return MomentTable(t, m, d, "gaussian", table)


def gaussian_weight(t: float, d: int):
    """The heat kernel g_t as a callable with a recorded length scale."""

    def g(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return (4 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (4 * t))

    g.t = t
    g.scale = 2.0 * math.sqrt(t)
    g.d = d
    return g


# ---------------------------------------------------------------------------
# finite-difference derivatives of a callable field

_STENCILS = {
    1: (np.arange(-2, 3), np.array([1.0, -8, 0, 8, -1]) / 12.0),
    2: (np.arange(-2, 3), np.array([-1.0, 16, -30, 16, -1]) / 12.0),
    3: (np.arange(-3, 4), np.array([1.0, -8, 13, 0, -13, 8, -1]) / 8.0),
}


def field_derivative(f: Callable, x, gamma, h: float | None = None) -> np.ndarray:
    """Partial derivative d^gamma f(x) by composed 4th-order differences.

    Works for any vectorized callable; the step defaults to 5% of |x| so
    that homogeneous fields are differentiated scale-invariantly.
    """
    x = np.asarray(x, dtype=float)
    gamma = tuple(gamma)
    if sum(gamma) == 0:
        return f(x)
    if h is None:
        r = np.sqrt(np.sum(x * x, axis=-1))
        h = 0.05 * max(float(np.min(r)), 0.2)
    pts = [x]
    coefs = [1.0]
    for axis, g in enumerate(gamma):
        if g == 0:
            continue
        if g > 3:
            raise ValueError("derivative order > 3 per axis unsupported")
        offs, wts = _STENCILS[g]
        e = np.zeros(x.shape[-1])
        e[axis] = h
        new_pts, new_coefs = [], []
        for p, c in zip(pts, coefs):
            for o, w in zip(offs, wts):
                if w == 0.0:
                    continue
                new_pts.append(p + o * e)
                new_coefs.append(c * w / h**g)
        pts, coefs = new_pts, new_coefs
    out = coefs[0] * f(pts[0])
    for p, c in zip(pts[1:], coefs[1:]):
        out = out + c * f(p)
    return out


# ---------------------------------------------------------------------------
# the moment expansion


def conv_expansion(f, moments: MomentTable, x, m: int, theta: float = 1.0,
                   norm: float | None = None, derivative=None):
    """Moment expansion of f*g at x through order m, with a remainder bound.

    Returns (value, bound): value = sum_{|gamma|<=m-1} ((-1)^|gamma|/gamma!)
    moment(gamma) d^gamma f(x); bound = C t^{m/2} |x|^{-theta-m} scaled by
    the supplied norm of f (calibration constant from the registry).
    """
    from .calibration import get_constant

    d = moments.d
    if not 0 <= theta < d:
        raise ValueError("weight exponent must satisfy 0 <= theta < d")
    x = np.asarray(x, dtype=float)
    if np.any(np.sum(x * x, axis=-1) == 0):
        raise ValueError("expansion point must be nonzero")
    fn = f.value if isinstance(f, HomogeneousField) else f
    deriv = derivative or (lambda gamma, pts: field_derivative(fn, pts, gamma))
    value = None
    for gamma in moments.multi_indices():
        k = sum(gamma)
        if k > m - 1:
            continue
        mom = moments.moment(gamma)
        if mom == 0.0:
            continue
        fact = math.prod(math.factorial(g) for g in gamma)
        term = ((-1) ** k / fact) * mom * deriv(gamma, x)
        value = term if value is None else value + term
    r = np.sqrt(np.sum(x * x, axis=-1))
    c = get_constant("conv_remainder", 1.0) * (norm if norm is not None else 1.0)
    bound = c * moments.t ** (m / 2) * r ** (-theta - m)
    return value, bound


# ---------------------------------------------------------------------------
# quadrature helpers


def _gl_panels(boundaries: np.ndarray, order: int):
    """Gauss-Legendre nodes/weights on consecutive panels."""
    un, uw = leggauss(order)
    a = boundaries[:-1][:, None]
    b = boundaries[1:][:, None]
    nodes = (a + b) / 2 + (b - a) / 2 * un[None, :]
    wts = (b - a) / 2 * uw[None, :]
    return nodes.ravel(), wts.ravel()


def _smoothstep(r, a, b):
    """C^2 ramp from 0 at r<=a to 1 at r>=b."""
    s = np.clip((np.asarray(r, dtype=float) - a) / (b - a), 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s**2)


def _polar_nodes(d: int, radii, rad_w, ang_order: int):
    """Tensor polar quadrature: points (n_r*n_ang, d), volume weights."""
    rule = build_rule(d, ang_order)
    pts = radii[:, None, None] * rule.nodes[None, :, :]
    w = (rad_w * radii ** (d - 1))[:, None] * rule.weights[None, :]
    return pts.reshape(-1, d), w.ravel()


# ---------------------------------------------------------------------------
# brute-force oracle


def _probe_scale(g, d: int) -> float:
    """e-folding radius of a weight function centered at the origin."""
    if hasattr(g, "scale"):
        return float(g.scale)

    def mag(r):
        p = np.zeros((1, d))
        p[0, 0] = r
        return float(np.max(np.abs(np.asarray(g(p), dtype=float))))

    radii = np.geomspace(1e-3, 1e3, 121)
    vals = np.array([mag(r) for r in radii])
    if not np.any(np.isfinite(vals) & (vals > 0)):
        raise ValueError("cannot probe the weight's length scale")
    peak = int(np.nanargmax(vals))
    below = np.nonzero(vals[peak:] < vals[peak] * math.exp(-2.0))[0]
    if len(below) == 0:
        raise ValueError("weight does not appear to decay")
    return float(radii[peak + below[0]])


def conv_oracle(f, g, x, d: int | None = None, g_scale: float | None = None,
                f_singular: bool = False, tol: float = 1e-9,
                max_refine: int = 4):
    """Brute-force (f*g)(x) = int f(y) g(x-y) dy by adaptive polar quadrature.

    The grid is origin-centered with a radial band refined around |y| = |x|
    where the weight peaks; angular resolution is doubled until two successive
    levels agree within tol.  f may carry an integrable singularity at 0
    (flag f_singular), resolved by geometric radial panels.
    """
    x = np.asarray(x, dtype=float)
    if d is None:
        d = x.shape[-1]
    if g_scale is None:
        g_scale = _probe_scale(g, d)
    r_x = float(np.sqrt(np.sum(x * x)))
    s_f = _probe_scale(f, d) if not f_singular else 0.0
    r_out = r_x + 10 * g_scale + 3 * s_f
    # radial panels: geometric (singularity) or uniform core, plus a band of
    # width-scale panels around the weight's peak radius
    if f_singular:
        bnds = list(np.geomspace(1e-8 * r_out, r_out, 48))
    else:
        bnds = list(np.linspace(0.0, r_out, 25))
    lo = max(r_x - 8 * g_scale, 0.0)
    hi = min(r_x + 8 * g_scale, r_out)
    band = np.arange(lo, hi + g_scale / 2, g_scale / 2)
    bnds = np.unique(np.concatenate([bnds, band]))
    bnds = bnds[bnds <= r_out * (1 + 1e-12)]

    ang = max(24, int(3 * r_x / g_scale))
    prev = None
    for _ in range(max_refine + 1):
        radii, rw = _gl_panels(bnds, 8)
        pts, w = _polar_nodes(d, radii, rw, ang)
        fv = np.asarray(f(pts), dtype=float)
        gv = np.asarray(g(x[None, :] - pts), dtype=float)
        if fv.ndim == 1:
            val = float(np.sum(w * fv * gv))
        else:
            val = np.tensordot(w * gv, fv, axes=(0, 0))
        if prev is not None and np.max(np.abs(val - prev)) < tol:
            return val
        prev = val
        ang = int(ang * 2)
        mid = (np.asarray(bnds[:-1]) + np.asarray(bnds[1:])) / 2
        bnds = np.unique(np.concatenate([bnds, mid]))
    return prev


def conv_expansion_residual(f, t: float, x, m: int, d: int,
                            derivative=None, ang_order: int = 48) -> np.ndarray:
    """Remainder f*g_t(x) - expansion, computed as a single subtracted
    integral int g_t(y) [f(x-y) - T_{m-1}f(x; -y)] dy.

    Accurate in relative terms even when the remainder is tiny, because the
    Taylor polynomial is subtracted inside the integrand.  Requires the
    points x to be farther than 9 sqrt(t) from any singularity of f.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    fn = f.value if isinstance(f, HomogeneousField) else f
    deriv = derivative or (lambda gamma, pts: field_derivative(fn, pts, gamma))
    radius = 9.0 * math.sqrt(t)
    bnds = np.linspace(0.0, radius, 13)
    radii, rw = _gl_panels(bnds, 8)
    y, w = _polar_nodes(d, radii, rw, ang_order)
    gw = w * (4 * np.pi * t) ** (-d / 2) * np.exp(-np.sum(y * y, axis=-1) / (4 * t))
    shift = x[:, None, :] - y[None, :, :]
    vals = np.asarray(fn(shift), dtype=float)
    taylor = np.zeros_like(vals)
    for gamma in itertools.product(range(m), repeat=d):
        if sum(gamma) > m - 1:
            continue
        k = sum(gamma)
        fact = math.prod(math.factorial(g) for g in gamma)
        mono = np.prod((-y[None, :, :]) ** np.array(gamma)[None, None, :], axis=-1)
        dfx = np.asarray(deriv(gamma, x), dtype=float)
        if vals.ndim == 3:
            taylor += ((1.0 / fact) * mono)[..., None] * dfx[:, None, :]
        else:
            taylor += (1.0 / fact) * mono * dfx[:, None]
    diff = vals - taylor
    if diff.ndim == 3:
        return np.einsum("q,pqj->pj", gw, diff)
    return diff @ gw


# ---------------------------------------------------------------------------
# heat evolution


def _heat_near_batch(fn, t: float, targets: np.ndarray, d: int,
                     ang_order: int = 36, singular: bool = True) -> np.ndarray:
    """(g_t * f)(x) for a batch of targets with |x| = O(sqrt t), for f with
    an integrable singularity at the origin.

    Partition of unity at radius ~ sigma = 2 sqrt(t): the inner part is
    integrated on a shared origin-centered geometric grid, the outer part on
    per-target polar grids centered at the weight's peak.
    """
    sigma = 2.0 * math.sqrt(t)
    a_cut, b_cut = sigma / 2, 2 * sigma
    r_t = np.sqrt(np.sum(targets * targets, axis=-1))
    radius = 8 * sigma

    # inner piece: shared grid, per-target Gaussian weights
    bnds = np.geomspace(1e-8 * sigma, b_cut, 36)
    radii, rw = _gl_panels(bnds, 6)
    y_in, w_in = _polar_nodes(d, radii, rw, 20)
    f_in = np.asarray(fn(y_in), dtype=float)
    chi_in = (1.0 - _smoothstep(np.sqrt(np.sum(y_in * y_in, axis=-1)), a_cut, b_cut))
    pref = (4 * np.pi * t) ** (-d / 2)
    out = np.empty((len(targets),) + f_in.shape[1:])
    for i0 in range(0, len(targets), 64):
        chunk = targets[i0:i0 + 64]
        z = chunk[:, None, :] - y_in[None, :, :]
        gz = pref * np.exp(-np.sum(z * z, axis=-1) / (4 * t))
        out[i0:i0 + 64] = np.tensordot(gz * (w_in * chi_in)[None, :], f_in, axes=(1, 0))

    if d == 2:
        # outer piece, 2D: peak-centered polar panels; the angular trapezoid
        # rule is spectral for the smooth cut-off integrand
        bnds2 = np.linspace(0.0, 8 * sigma, 33)
        rho, rho_w = _gl_panels(bnds2, 6)
        n_th = 128
        th = 2 * np.pi * np.arange(n_th) / n_th
        om = np.stack([np.cos(th), np.sin(th)], axis=-1)
        y_rel = (rho[:, None, None] * om[None, :, :]).reshape(-1, 2)
        w_rel = ((rho_w * rho)[:, None] * np.full(n_th, 2 * np.pi / n_th)[None, :]).ravel()
        gauss = pref * np.exp(-np.sum(y_rel * y_rel, axis=-1) / (4 * t))
        for i0 in range(0, len(targets), 32):
            chunk = targets[i0:i0 + 32]
            y = chunk[:, None, :] + y_rel[None, :, :]
            r_y = np.sqrt(np.sum(y * y, axis=-1))
            chi = _smoothstep(r_y, a_cut, b_cut)
            y_safe = np.where((chi > 0)[..., None], y, a_cut)
            fv = np.asarray(fn(y_safe.reshape(-1, 2)), dtype=float)
            fv = fv.reshape(y.shape[:2] + fv.shape[1:])
            if fv.ndim == 3:
                out[i0:i0 + 32] += np.einsum("q,pq,pqj->pj", w_rel * gauss, chi, fv)
            else:
                out[i0:i0 + 32] += np.einsum("q,pq,pq->p", w_rel * gauss, chi, fv)
        return out

    # outer piece, d >= 3: the cut-off datum chi*f is smooth on the O(sigma)
    # scale, so tensor Gauss-Hermite in u (y = x - 2 sqrt(t) u) converges fast
    un, uw = np.polynomial.hermite.hermgauss(24)
    grids = np.meshgrid(*([un] * d), indexing="ij")
    u = np.stack([g.ravel() for g in grids], axis=-1)
    wu = np.prod(np.stack(np.meshgrid(*([uw] * d), indexing="ij"), axis=-1)
                 .reshape(-1, d), axis=-1) / math.pi ** (d / 2)
    shift = 2.0 * math.sqrt(t) * u
    for i0 in range(0, len(targets), 32):
        chunk = targets[i0:i0 + 32]
        y = chunk[:, None, :] - shift[None, :, :]
        r_y = np.sqrt(np.sum(y * y, axis=-1))
        chi = _smoothstep(r_y, a_cut, b_cut)
        # keep singular evaluations away from where the cutoff vanishes
        y_safe = np.where((chi > 0)[..., None], y, a_cut)
        fv = np.asarray(fn(y_safe.reshape(-1, d)), dtype=float)
        fv = fv.reshape(y.shape[:2] + fv.shape[1:])
        if fv.ndim == 3:
            out[i0:i0 + 32] += np.einsum("q,pq,pqj->pj", wu, chi, fv)
        else:
            out[i0:i0 + 32] += np.einsum("q,pq,pq->p", wu, chi, fv)
    return out


def _bilaplacian(a: HomogeneousField, x: np.ndarray) -> np.ndarray:
    """Lap^2 a for degree -1 homogeneous a: differentiate the analytic
    laplacian on the unit sphere, then rescale by homogeneity (degree -5)."""
    r = np.sqrt(np.sum(x * x, axis=-1))
    omega = x / r[..., None]
    h = 5e-3
    lap2 = None
    for axis in range(a.d):
        e = np.zeros(a.d)
        e[axis] = h
        term = (-a.laplacian(omega + 2 * e) + 16 * a.laplacian(omega + e)
                - 30 * a.laplacian(omega) + 16 * a.laplacian(omega - e)
                - a.laplacian(omega - 2 * e)) / (12 * h**2)
        lap2 = term if lap2 is None else lap2 + term
    return lap2 / (r**5)[..., None]


def _iterated_laplacian_unit(fn, d: int, omega: np.ndarray, h: float = 5e-3):
    """Lap of a vectorized callable at unit-sphere points (4th-order FD)."""
    out = None
    for axis in range(d):
        e = np.zeros(d)
        e[axis] = h
        term = (-fn(omega + 2 * e) + 16 * fn(omega + e) - 30 * fn(omega)
                + 16 * fn(omega - e) - fn(omega - 2 * e)) / (12 * h**2)
        out = term if out is None else out + term
    return out


def _trilaplacian(a: HomogeneousField, x: np.ndarray) -> np.ndarray:
    """Lap^3 a for degree -1 homogeneous a (degree -7 by homogeneity)."""
    r = np.sqrt(np.sum(x * x, axis=-1))
    omega = x / r[..., None]
    lap3 = _iterated_laplacian_unit(lambda p: _bilaplacian(a, p), a.d, omega, h=1e-2)
    return lap3 / (r**7)[..., None]


def homogeneous_hessian(a: HomogeneousField, x: np.ndarray) -> np.ndarray:
    """Second derivatives d_h d_k a_j, shape (..., h, k, j), computed on
    the unit sphere from the analytic gradient and rescaled by degree -3."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    omega = x / r[..., None]
    h = 5e-3
    second = np.empty(x.shape[:-1] + (a.d, a.d, a.d))
    for axis in range(a.d):
        e = np.zeros(a.d)
        e[axis] = h
        second[..., axis, :, :] = (
            -a.gradient(omega + 2 * e) + 8 * a.gradient(omega + e)
            - 8 * a.gradient(omega - e) + a.gradient(omega - 2 * e)
        ) / (12 * h)
    return second / (r**3)[..., None, None, None]


def _heat_far(a: HomogeneousField, t: float, x: np.ndarray) -> np.ndarray:
    """Moment expansion of e^{t Lap} a for |x| >> sqrt(t): the odd moments
    vanish and the even ones collapse to the heat series sum_k (t^k/k!) Lap^k a,
    kept through k = 3 (remainder O(t^4 |x|^{-9}))."""
    return (a.value(x) + t * a.laplacian(x) + 0.5 * t**2 * _bilaplacian(a, x)
            + t**3 / 6.0 * _trilaplacian(a, x))


def heat_point(a, t: float, x, method: str = "auto") -> np.ndarray:
    """e^{t Lap} a at points x: moment expansion for |x| >= 8 sqrt(t),
    direct quadrature otherwise (or force one branch via ``method``)."""
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(a, HomogeneousField):
        fn, d = a.value, a.d
    elif isinstance(a, GridField):
        fn, d = (lambda p: a.eval(p, clamp=True)), a.d
    else:
        raise TypeError("expected a HomogeneousField or GridField")
    r = np.sqrt(np.sum(x * x, axis=-1))
    out = np.empty_like(x)
    if method == "expansion" or (method == "auto" and isinstance(a, HomogeneousField)):
        far = r >= 8 * math.sqrt(t) if method == "auto" else np.ones(len(x), bool)
    else:
        far = np.zeros(len(x), bool)
    if np.any(far):
        if not isinstance(a, HomogeneousField):
            raise ValueError("expansion branch needs analytic derivatives")
        out[far] = _heat_far(a, t, x[far])
    if np.any(~far):
        out[~far] = _heat_near_batch(fn, t, x[~far], d)
    return out


def heat_evolve(a, t: float, **grid_kw) -> GridField:
    """The heat evolution e^{t Lap} a as a GridField.

    The far-field closure is the datum itself (the evolution differs from it
    by O(|x|^{-3}) beyond the grid).  Linear in a; semigroup and branch
    agreement hold to quadrature tolerance.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if isinstance(a, HomogeneousField):
        template = GridField.from_homogeneous(a, **grid_kw)
        far = a
    else:
        template = a.like(a.values)
        far = a.far_field
    nodes = template.nodes()
    shape = nodes.shape
    vals = heat_point(a, t, nodes.reshape(-1, shape[-1]))
    return template.like(vals.reshape(shape), far_field=far)


def heat_expansion_residual(a: HomogeneousField, t: float, x,
                            ang_order: int = 48) -> np.ndarray:
    """e^{t Lap} a - a - t Lap a evaluated directly as the subtracted
    integral int g_t(y) [a(x-y) - a(x) + y.grad a(x) - (y.grad)^2 a(x)/2] dy,
    an oracle independent of the far-branch expansion."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = a.d
    radius = 9.0 * math.sqrt(t)
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r <= radius):
        raise ValueError("points must lie outside the weight's support radius")
    bnds = np.linspace(0.0, radius, 13)
    radii, rw = _gl_panels(bnds, 8)
    y, w = _polar_nodes(d, radii, rw, ang_order)
    gw = w * (4 * np.pi * t) ** (-d / 2) * np.exp(-np.sum(y * y, axis=-1) / (4 * t))
    val0 = a.value(x)
    grad = a.gradient(x)  # [p, h, j]
    second = homogeneous_hessian(a, x)  # [p, h, k, j]
    shift = x[:, None, :] - y[None, :, :]
    taylor = (
        val0[:, None, :]
        - np.einsum("qh,phj->pqj", y, grad)
        + 0.5 * np.einsum("qh,qk,phkj->pqj", y, y, second)
    )
    diff = a.value(shift) - taylor
    return np.einsum("q,pqj->pj", gw, diff)


# ---------------------------------------------------------------------------
# product of heat flows (Lemma-style identity, d >= 3)


def _scalar_heat(fn, t: float, x: np.ndarray, d: int) -> np.ndarray:
    """(g_t * fn)(x) for a scalar fn with integrable origin singularity."""
    return _heat_near_batch(fn, t, np.atleast_2d(x), d)


def product_heat_identity_check(a: HomogeneousField, b: HomogeneousField,
                                t: float, x, i: int = 0, j: int = 1,
                                n_s: int = 12) -> float:
    """Residual of (e^{t L}a_i)(e^{t L}b_j) = e^{t L}(a_i b_j)
    - 2 int_0^t e^{(t-s) L}[grad e^{s L}a_i . grad e^{s L}b_j] ds.

    Only meaningful for d >= 3 where the product a_i b_j is locally
    integrable.  Both sides are evaluated by quadrature at the point x.
    """
    if a.d < 3:
        raise ValueError("the product identity requires d >= 3")
    d = a.d
    x = np.asarray(x, dtype=float).reshape(1, d)

    fa = lambda p: a.value(p)[..., i]
    fb = lambda p: b.value(p)[..., j]
    lhs = float(_scalar_heat(fa, t, x, d)[0] * _scalar_heat(fb, t, x, d)[0])
    fab = lambda p: a.value(p)[..., i] * b.value(p)[..., j]
    term1 = float(_scalar_heat(fab, t, x, d)[0])

    # s-integral with the substitution s = t tau^2
    un, uw = leggauss(n_s)
    tau = (un + 1) / 2
    tw = uw / 2
    corr = 0.0
    ga = a.gradient  # [.., h, j]
    gb = b.gradient
    for tk, wk in zip(tau, tw):
        s = t * tk**2
        ds = 2 * t * tk * wk

        def w_s(y, s=s):
            cut = 8 * math.sqrt(s)
            r = np.sqrt(np.sum(y * y, axis=-1))
            out = np.zeros(len(y))
            far = r >= cut
            if np.any(far):
                p = y[far]
                # e^{s L} d_h a_i by the collapsed moment expansion
                da = ga(p)[..., i]
                db = gb(p)[..., j]
                lap_a = _vector_laplacian_of(ga, p, i)
                lap_b = _vector_laplacian_of(gb, p, j)
                out[far] = np.sum((da + s * lap_a) * (db + s * lap_b), axis=-1)
            if np.any(~far):
                p = y[~far]
                va = np.stack(
                    [_scalar_heat(lambda q, h=h: ga(q)[..., h, i], s, p, d)
                     for h in range(d)], axis=-1)
                vb = np.stack(
                    [_scalar_heat(lambda q, h=h: gb(q)[..., h, j], s, p, d)
                     for h in range(d)], axis=-1)
                out[~far] = np.sum(va * vb, axis=-1)
            return out

        val = float(_heat_near_batch(w_s, t - s, x, d, singular=False)[0]) \
            if t - s > 1e-12 * t else float(w_s(x)[0])
        corr += ds * val
    rhs = term1 - 2 * corr
    return abs(lhs - rhs)


def _vector_laplacian_of(grad_fn, p: np.ndarray, comp: int) -> np.ndarray:
    """Laplacian of each component of grad a_comp by 2nd differences."""
    r = np.sqrt(np.sum(p * p, axis=-1))
    h = 0.02 * max(float(np.min(r)), 0.05)
    d = p.shape[-1]
    out = None
    for axis in range(d):
        e = np.zeros(d)
        e[axis] = h
        term = (grad_fn(p + e)[..., comp] - 2 * grad_fn(p)[..., comp]
                + grad_fn(p - e)[..., comp]) / h**2
        out = term if out is None else out + term
    return out
