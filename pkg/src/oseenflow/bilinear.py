"""Space-time convolution against the third-order kernel.

The operator L(w)(x,t) = int_0^t int F(x-y,t-s) w(y,s) dy ds, the
Navier-Stokes bilinear form B(u,v) = L(u (x) v), the time-weighted variants
of L, and the moment matrices A, Lambda(t), B entering the far-field
expansions of the velocity profile.

Quadrature layout.  Two regimes, dispatched on |x| / sqrt(t).

Far targets (|x| >= 3 sqrt(t)) use the kernel split F(z,s) = F0(z) +
remainder, with F0 homogeneous of degree -(d+1) and the remainder
Gaussian-small beyond a few parabolic lengths.  The F0 part is
s-independent, so its time integral collapses onto the field Omega(y) =
int_0^t phi(s) w(y,s) ds and the space integral is done once, partitioned
by |y|: shells around x (the sphere rules annihilate the divergent moments
of F0 exactly) plus an origin-centered log-radial chart where Omega is
log-singular.  The remainder part keeps the time variable: a main chart in
the similarity variable u = (x-y)/sqrt(t-s) with the substitution
t-s = t v^2, and an origin chart where the remainder kernel is first
integrated in s (which smooths it) and the y integral then lives on a
log-polar grid that resolves the parabolic core of w.

Near targets integrate the full kernel directly: for each sigma = t - s
node, the space integral runs in u = (x-y)/sqrt(sigma), where the kernel is
a fixed profile evaluated once per target, plus an origin-centered chart
for the core of w.  Splitting would be ill-conditioned here: both split
pieces grow like sqrt(t)/|x| against a bounded sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .convolution import (_gl_panels, _heat_near_batch,
                          _iterated_laplacian_unit, _smoothstep, heat_evolve)
from .fields import GridField, HomogeneousField
from .kernels import f_homog, oseen_f
from .sphere import build_rule

__all__ = [
    "MomentMatrix", "TensorFieldW", "ORDERS", "apply_L", "bilinear_B",
    "weighted_L", "time_integral_field", "tensor_product_field", "compute_A",
    "compute_W", "compute_B_matrix", "lambda_matrix", "power_law_closure",
]


# Quadrature presets: "cheap" for inner fixed-point sweeps, "fine" for final
# evaluations, "oracle" for refinement cross-checks (roughly half steps).
ORDERS = {
    "cheap": dict(rad_per_dec=2.5, rad_gl=3, ang2=12, ang3=6, pk_lo=1e-3,
                  ups=16, u_per_dec=2.5, u_gl=3, u_ang2=10, u_ang3=6,
                  u_lo=1e-2, om_per_dec=2.5, om_gl=4, om_grid_per_dec=14,
                  om_ang2=32, om_ang3=24, sig_per_dec=2.0, sig_gl=3,
                  oy_per_dec=2.0, oy_gl=3, oy_ang2=14, oy_ang3=8,
                  sig_lo=1e-10, u_cap=2e5),
    "fine": dict(rad_per_dec=4.0, rad_gl=4, ang2=20, ang3=10, pk_lo=1e-3,
                 ups=28, u_per_dec=5.0, u_gl=4, u_ang2=32, u_ang3=9,
                 u_lo=1e-2, om_per_dec=4.0, om_gl=6, om_grid_per_dec=22,
                 om_ang2=48, om_ang3=36, sig_per_dec=4.0, sig_gl=4,
                 oy_per_dec=3.0, oy_gl=4, oy_ang2=20, oy_ang3=12,
                 sig_lo=1e-12, u_cap=4e5),
    "oracle": dict(rad_per_dec=6.0, rad_gl=5, ang2=32, ang3=14, pk_lo=3e-4,
                   ups=44, u_per_dec=8.0, u_gl=5, u_ang2=48, u_ang3=12,
                   u_lo=3e-3, om_per_dec=6.0, om_gl=8, om_grid_per_dec=30,
                   om_ang2=64, om_ang3=44, sig_per_dec=6.0, sig_gl=6,
                   oy_per_dec=6.0, oy_gl=5, oy_ang2=48, oy_ang3=16,
                   sig_lo=1e-13, u_cap=8e5),
}

_WEIGHTS = ("one", "t_minus_tau", "tau")


def _orders(order) -> dict:
    if isinstance(order, str):
        return ORDERS[order]
    return order


def _log_gl(a: float, b: float, per_decade: float, gl_order: int):
    """Gauss-Legendre panels geometric in [a, b]; returns nodes and
    dr-weights."""
    span = math.log10(b / a)
    n_pan = max(1, int(math.ceil(per_decade * span)))
    bnd = np.linspace(math.log(a), math.log(b), n_pan + 1)
    u, w = _gl_panels(bnd, gl_order)
    r = np.exp(u)
    return r, r * w


@dataclass(frozen=True)
class MomentMatrix:
    """d x d moment matrix with a provenance tag."""

    entries: np.ndarray
    provenance: str

    def __post_init__(self):
        object.__setattr__(self, "entries", np.asarray(self.entries, float))
        if self.provenance not in ("A_from_datum", "B_from_Ws", "Lambda_at_t"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def as_dict(self) -> dict:
        return {"provenance": self.provenance,
                "entries": self.entries.tolist()}


@dataclass
class TensorFieldW:
    """Time-dependent d x d tensor field w(y, s).

    Either a self-similar closure w(y,s) = s^p W(y/sqrt s) around a tensor
    GridField profile (p = -1 for w = u (x) v with u, v self-similar), or an
    explicit callable w(y, s) broadcasting over y and s.
    """

    d: int
    profile: GridField | None = None
    func: Callable | None = None
    s_power: float = -1.0
    far: Callable | None = None  # instantaneous s->0 spatial closure
    symmetry: str | None = None

    @classmethod
    def from_profile(cls, profile: GridField, s_power: float = -1.0):
        far = profile.far_field
        fn = far.value if hasattr(far, "value") else far
        return cls(profile.d, profile=profile, s_power=s_power, far=fn,
                   symmetry=profile.symmetry)

    @classmethod
    def from_function(cls, fn: Callable, d: int, far: Callable | None = None,
                      symmetry: str | None = None):
        return cls(d, func=fn, far=far, symmetry=symmetry)

    def slice(self, y: np.ndarray, s) -> np.ndarray:
        """w(y, s); s is a scalar or broadcastable against y[..., 0]."""
        s = np.asarray(s, float)
        if self.profile is not None:
            z = y / np.sqrt(s)[..., None]
            vals = self.profile.eval(z.reshape(-1, self.d), clamp=True)
            vals = vals.reshape(y.shape[:-1] + (self.d, self.d))
            return s[..., None, None] ** self.s_power * vals
        return np.asarray(self.func(y, s), float)

    def far_decay_exponent(self, t: float) -> float | None:
        """Decay rate of the instantaneous far field; None when it vanishes."""
        probe = np.zeros((2, self.d))
        probe[0, 0], probe[1, 0] = 300.0 * max(1, math.sqrt(t)), 1200.0 * max(1, math.sqrt(t))
        if self.far is not None:
            v = np.asarray(self.far(probe), float)
        elif self.func is not None:
            v = np.asarray(self.func(probe, t / 2), float)
        else:
            return 2.0
        m = np.max(np.abs(v.reshape(2, -1)), axis=1)
        if m[0] == 0.0 and m[1] == 0.0:
            return None
        if m[1] == 0.0:
            return np.inf
        return float(np.log(m[0] / m[1]) / np.log(4.0))


def tensor_product_field(u: GridField, v: GridField) -> GridField:
    """Nodewise tensor product u (x) v as a tensor-kind GridField."""
    if u.d != v.d or u.values.shape != v.values.shape:
        raise ValueError("profiles must share a grid")
    vals = u.values[..., :, None] * v.values[..., None, :]
    fu, fv = u.far_field, v.far_field
    far = None
    if fu is not None and fv is not None:
        gu = fu.value if hasattr(fu, "value") else fu
        gv = fv.value if hasattr(fv, "value") else fv

        def far(y, gu=gu, gv=gv):
            return np.asarray(gu(y))[..., :, None] * np.asarray(gv(y))[..., None, :]

    sym = u.symmetry if u.symmetry == v.symmetry else None
    return GridField(u.d, u.r_nodes, u.ang_nodes, vals, far, sym, "tensor")


def power_law_closure(g: GridField, p: float) -> Callable:
    """Far closure scaling the outer-ring values of g like |y|^{-p}."""
    r_max = g.r_max

    def closure(y):
        y = np.asarray(y, float)
        r = np.sqrt(np.sum(y * y, axis=-1))
        ring = g.eval(y * (r_max / r)[..., None] * (1 - 1e-12))
        sh = (...,) + (None,) * (ring.ndim - y.ndim + 1)
        return ring * (r_max / r)[sh] ** p

    return closure


# ---------------------------------------------------------------------------
# the time-collapsed field Omega


def _weight_values(weight: str, s, t: float):
    if weight == "one":
        return np.ones_like(np.asarray(s, float))
    if weight == "t_minus_tau":
        return t - np.asarray(s, float)
    if weight == "tau":
        return np.asarray(s, float)
    raise ValueError(f"unknown weight {weight!r}")


class _OmegaEval:
    """On-demand Omega for fields without a grid-compatible symmetry."""

    def __init__(self, w, t, weight, o):
        self.w, self.t, self.weight, self.o = w, t, weight, o
        self.d = w.d

    def eval(self, pts, clamp=True):
        pts = np.atleast_2d(np.asarray(pts, float))
        if self.w.profile is not None:
            return _omega_selfsim(self.w, self.t, self.weight, pts, self.o)
        return _omega_slices(self.w, self.t, self.weight, pts, self.o)


def time_integral_field(w: TensorFieldW, t: float, weight: str = "one",
                        order="fine") -> GridField:
    """Omega(y) = int_0^t phi(s) w(y, s) ds on a wide log-radial grid.

    For the self-similar closure the substitution xi = |y|/sqrt(s) turns the
    node integrals into ray integrals of the profile, with the analytic tail
    of the far closure appended.
    """
    o = _orders(order)
    if weight not in _WEIGHTS:
        raise ValueError(f"unknown weight {weight!r}")
    d = w.d
    st = math.sqrt(t)
    r_lo, r_hi = 1e-7 * min(1.0, st), 2e3 * max(1.0, st)
    n_rad = int(math.ceil(o["om_grid_per_dec"] * math.log10(r_hi / r_lo)))
    if d == 2:
        sym = "rotational" if w.symmetry == "rotational" else None
        n_ang = 1 if sym else 64
    else:
        if w.symmetry != "axisymmetric":
            return _OmegaEval(w, t, weight, o)
        sym, n_ang = "axisymmetric", 48
    shell = GridField.from_function(
        lambda p: np.zeros(p.shape[:-1] + (d, d)), d, r_min=r_lo, r_max=r_hi,
        n_radial=n_rad, n_angular=n_ang, symmetry=sym, kind="tensor")
    pts = shell.nodes().reshape(-1, d)

    if w.profile is not None:
        vals = _omega_selfsim(w, t, weight, pts, o)
        cphi = t if weight == "one" else t * t / 2.0
        wfar = w.far

        def far(y, c=cphi, wf=wfar):
            return c * np.asarray(wf(y), float)
    else:
        vals = _omega_slices(w, t, weight, pts, o)

        def far(y):
            return _omega_slices(w, t, weight, np.atleast_2d(y), o)

    shell.values = vals.reshape(shell.values.shape)
    shell.far_field = far
    shell._fft = None
    return shell


def _omega_selfsim(w, t, weight, pts, o):
    d = w.d
    r = np.sqrt(np.sum(pts * pts, axis=-1))
    hat = pts / r[:, None]
    xi0 = r / math.sqrt(t)
    xi_hi = np.maximum(8 * xi0, 300.0)
    n_pan = max(1, int(math.ceil(o["om_per_dec"] * np.max(np.log10(xi_hi / xi0)))))
    un, uw = leggauss(o["om_gl"])
    lo, hi = np.log(xi0)[:, None], np.log(xi_hi)[:, None]
    frac = np.linspace(0.0, 1.0, n_pan + 1)
    bnd = lo + (hi - lo) * frac[None, :]
    a_, b_ = bnd[:, :-1, None], bnd[:, 1:, None]
    lx = (a_ + b_) / 2 + (b_ - a_) / 2 * un  # (P, n_pan, g) log xi
    lw = (b_ - a_) / 2 * uw
    xi = np.exp(lx)
    z = xi[..., None] * hat[:, None, None, :]
    prof = w.profile.eval(z.reshape(-1, d), clamp=True)
    prof = prof.reshape(xi.shape + (d, d))
    s_val = (r[:, None, None] / xi) ** 2
    ray = 2.0 * s_val ** (w.s_power + 1.0)
    phi = _weight_values(weight, s_val, t)
    vals = np.einsum("pig,pighk->phk", lw * phi * ray, prof)
    if w.s_power != -1.0:
        # the analytic tail below assumes the u (x) v closure
        raise NotImplementedError("time-collapsed field needs s_power = -1")
    # analytic tail of the ray beyond xi_hi from the degree -2 far closure
    wfar = np.asarray(w.far(pts), float)
    if weight == "one":
        coef = r**2 / xi_hi**2
    elif weight == "t_minus_tau":
        coef = r**2 * (t / xi_hi**2 - 0.5 * r**2 / xi_hi**4)
    else:
        coef = 0.5 * r**4 / xi_hi**4
    return vals + wfar * coef[:, None, None]


def _omega_slices(w, t, weight, pts, o):
    d = w.d
    s_nodes, s_w = _log_gl(1e-10 * t, t, o["om_per_dec"], o["om_gl"])
    out = np.zeros(pts.shape[:-1] + (d, d))
    for s, ds in zip(s_nodes, s_w):
        out += ds * _weight_values(weight, s, t) * w.slice(pts, s)
    return out


# ---------------------------------------------------------------------------
# the three spatial charts


def _fo_piece(omega: GridField, x: np.ndarray, t: float, o: dict) -> np.ndarray:
    """int F0(x-y) Omega(y) dy, partitioned by |y|.

    The ball |y| <= R/2 (which holds the log singularity of Omega, where the
    kernel is smooth) goes on an origin-centered log-polar grid; everything
    else goes on log shells around x, where the sphere rule kills the
    divergent moments of F0 shell by shell.
    """
    d = omega.d
    rule = build_rule(d, o["ang2"] if d == 2 else o["ang3"])
    fk = f_homog(rule.nodes)  # (n, d, d, d) on the unit sphere
    st = math.sqrt(t)
    out = np.empty((len(x), d))
    for i, xi in enumerate(x):
        big_r = float(np.linalg.norm(xi))
        # origin chart: |y| <= R/2, kernel at distance >= R/2 from its peak
        ry, wy = _log_gl(1e-4 * min(st, big_r), big_r / 2,
                         o["rad_per_dec"], o["rad_gl"])
        cut = 1.0 - _smoothstep(ry, big_r / 4, big_r / 2)
        y0 = ry[:, None, None] * rule.nodes[None, :, :]
        fo = f_homog(xi[None, None, :] - y0)
        ov = omega.eval(y0.reshape(-1, d), clamp=True).reshape(
            len(ry), rule.n, d, d)
        val = np.einsum("r,a,rajhk,rahk->j", wy * ry ** (d - 1) * cut,
                        rule.weights, fo, ov, optimize=True)
        # shells around x carry the rest, including the far tail
        rho, wr = _log_gl(o["pk_lo"] * big_r, 100.0 * (big_r + st),
                          o["rad_per_dec"], o["rad_gl"])
        pts = xi[None, None, :] + rho[:, None, None] * rule.nodes[None, :, :]
        ay = np.sqrt(np.sum(pts * pts, axis=-1))
        zeta = _smoothstep(ay, big_r / 4, big_r / 2)
        ov = omega.eval(pts.reshape(-1, d), clamp=True).reshape(
            len(rho), rule.n, d, d)
        val -= np.einsum("r,a,ra,ajhk,rahk->j", wr * rho**-2,
                         rule.weights, zeta, fk, ov, optimize=True)
        out[i] = val
    return out


def _psi_main(w: TensorFieldW, x: np.ndarray, t: float, o: dict,
              weight: str) -> np.ndarray:
    """Remainder-kernel main chart in u = (x-y)/sqrt(t-s), with t-s = t v^2
    and the origin ball of y removed by the partition of unity."""
    d = w.d
    st = math.sqrt(t)
    ru, wru = _log_gl(o["u_lo"], 10.0, o["u_per_dec"], o["u_gl"])
    rule = build_rule(d, o["u_ang2"] if d == 2 else o["u_ang3"])
    upts = ru[:, None, None] * rule.nodes[None, :, :]
    psi = oseen_f(upts, 1.0) - f_homog(upts)  # (nu, na, d, d, d)
    wq = (wru * ru ** (d - 1))[:, None] * rule.weights[None, :]
    vn, vw = leggauss(o["ups"])
    v = 0.5 * (vn + 1.0)
    vw = 0.5 * vw
    s_val = t * (1.0 - v**2)
    phi = _weight_values(weight, s_val, t)
    out = np.empty((len(x), d))
    for i, xi in enumerate(x):
        big_r = float(np.linalg.norm(xi))
        y = xi[None, None, None, :] - (st * v)[:, None, None, None] * upts[None]
        wv = w.slice(y, s_val[:, None, None])
        ry = np.sqrt(np.sum(y * y, axis=-1))
        cut = _smoothstep(ry, big_r / 4, big_r / 2)  # 1 - chi_origin
        out[i] = 2.0 * st * np.einsum(
            "i,ua,iua,uajhk,iuahk->j", vw * phi, wq, cut, psi, wv,
            optimize=True)
    return out


def _psi_origin(w: TensorFieldW, x: np.ndarray, t: float, o: dict,
                weight: str) -> np.ndarray:
    """Remainder-kernel origin chart: the kernel is integrated in s first
    (log panels clustered at both endpoints), the y integral then runs on a
    log-polar grid that resolves the parabolic core of w."""
    d = w.d
    st = math.sqrt(t)
    rule = build_rule(d, o["oy_ang2"] if d == 2 else o["oy_ang3"])
    out = np.zeros((len(x), d))
    r_all = np.sqrt(np.sum(x * x, axis=1))
    # same-radius targets (grid rings) share the chart and the w slices
    groups: list[list[int]] = []
    for i in np.argsort(r_all, kind="stable"):
        if groups and abs(r_all[i] - r_all[groups[-1][0]]) \
                <= 1e-12 * (1.0 + r_all[i]):
            groups[-1].append(int(i))
        else:
            groups.append([int(i)])
    for grp in groups:
        big_r = float(r_all[grp[0]])
        if big_r >= 24.0 * st:
            continue  # kernel argument >= 12 parabolic lengths everywhere
        sig_lo = (big_r / 2) ** 2 / 200.0
        if sig_lo >= t:
            continue
        delta0 = 1e-5 * min(st, big_r)
        ry, wy = _log_gl(delta0, big_r / 2, o["oy_per_dec"], o["oy_gl"])
        y = ry[:, None, None] * rule.nodes[None, :, :]
        chi = 1.0 - _smoothstep(ry, big_r / 4, big_r / 2)
        wts = (wy * ry ** (d - 1) * chi)[:, None] * rule.weights[None, :]
        z = x[grp][:, None, None, :] - y[None]
        # sigma = t - s panels at the small-sigma end, s panels at the
        # small-s end (w has an integrable log there in 2D)
        sig_a, wsig_a = _log_gl(min(sig_lo, t / 4), t / 2,
                                o["sig_per_dec"], o["sig_gl"])
        s_b, ws_b = _log_gl(1e-8 * t * min(1.0, (big_r / st) ** 2), t / 2,
                            o["sig_per_dec"], o["sig_gl"])
        sig = np.concatenate([sig_a, t - s_b])
        wsig = np.concatenate([wsig_a, ws_b])
        val = np.zeros((len(grp), d))
        wphi = wsig * _weight_values(weight, t - sig, t)
        blk = max(1, 64 // len(grp))
        for lo in range(0, len(sig), blk):
            sl = slice(lo, lo + blk)
            m = sig[sl].size
            wv = w.slice(np.broadcast_to(y, (m,) + y.shape),
                         (t - sig[sl])[:, None, None])
            contr = _oseen_contract(z[:, None], sig[sl][None, :, None, None],
                                    wv[None], remainder=True)
            val += np.einsum("m,ra,gmraj->gj", wphi[sl], wts, contr,
                             optimize=True)
        out[grp] = val
    return out


# ---------------------------------------------------------------------------
# fast kernel evaluation via radial profiles
#
# F(z,1) = d_jk zh_h P1 + d_jh zh_k P2 + d_hk zh_j P3 + zh_j zh_h zh_k P4
# with four radial profiles P(|z|); interpolating these (cubic in log |z|)
# replaces per-point erf/gamma evaluations in the inner sigma loops.

_KTAB: dict[int, tuple] = {}
_KTAB_LO, _KTAB_HI = 1e-6, 60.0


def _kernel_table(d: int):
    if d not in _KTAB:
        from scipy.interpolate import CubicSpline
        zg = np.geomspace(_KTAB_LO, _KTAB_HI, 2000)
        pts = np.zeros((len(zg), d))
        pts[:, 0] = zg
        fv = oseen_f(pts, 1.0)
        p1 = fv[:, 1, 0, 1]
        p2 = fv[:, 1, 1, 0]
        p3 = fv[:, 0, 1, 1]
        p4 = fv[:, 0, 0, 0] - p1 - p2 - p3
        _KTAB[d] = CubicSpline(np.log(zg), np.stack([p1, p2, p3, p4], -1))
    return _KTAB[d]


_FCON: dict[int, np.ndarray] = {}


def _far_consts(d: int) -> np.ndarray:
    """Radial-profile constants of the homogeneous kernel at |z| = 1."""
    if d not in _FCON:
        e1 = np.zeros((1, d))
        e1[0, 0] = 1.0
        fv = f_homog(e1)[0]
        c1, c2, c3 = fv[1, 0, 1], fv[1, 1, 0], fv[0, 1, 1]
        _FCON[d] = np.array([c1, c2, c3, fv[0, 0, 0] - c1 - c2 - c3])
    return _FCON[d]


def _oseen_profiles(z: np.ndarray, sig, remainder: bool = False):
    """Sigma-scaled radial profiles and unit directions for F(z, sig).

    Returns (prof, zh) with prof of shape (..., 4) such that
    F(z, sig)_{jhk} = d_jk zh_h p0 + d_jh zh_k p1 + d_hk zh_j p2
                      + zh_j zh_h zh_k p3.
    With remainder=True the homogeneous part is subtracted, so prof
    vanishes identically beyond the table range.
    """
    d = z.shape[-1]
    spl = _kernel_table(d)
    sig = np.asarray(sig, float)
    if sig.ndim:
        shp = np.broadcast_shapes(z.shape[:-1], sig.shape)
        z = np.broadcast_to(z, shp + (d,))
        sig = np.broadcast_to(sig, shp)
    r = np.sqrt(np.sum(z * z, axis=-1))
    rs = np.where(r > 0, r, 1.0)
    zeta = rs / np.sqrt(sig)
    zh = z / rs[..., None]
    prof = spl(np.log(np.clip(zeta, _KTAB_LO, _KTAB_HI)))  # (..., 4)
    small = zeta < _KTAB_LO
    if small.any():  # F(z, 1) vanishes linearly at z = 0
        prof[small] *= (zeta[small] / _KTAB_LO)[:, None]
    prof *= np.asarray(sig ** (-(d + 1) / 2))[..., None]
    far = _far_consts(d) * rs[..., None] ** (-(d + 1))
    big = zeta > _KTAB_HI
    if remainder:
        prof -= far
        prof[big] = 0.0
    elif big.any():
        prof[big] = far[big]
    prof[r == 0] = 0.0
    return prof, zh


def _oseen_contract(z: np.ndarray, sig, wv: np.ndarray,
                    remainder: bool = False) -> np.ndarray:
    """F(z, sig) : wv contracted over the last two tensor slots.

    Works from the radial profiles directly, skipping assembly of the
    full rank-3 kernel."""
    prof, zh = _oseen_profiles(z, sig, remainder=remainder)
    wtz = np.einsum("...hj,...h->...j", wv, zh)
    wz = np.einsum("...jk,...k->...j", wv, zh)
    tr = np.trace(wv, axis1=-2, axis2=-1)
    zwz = np.einsum("...j,...j->...", zh, wz)
    return (prof[..., 0, None] * wtz + prof[..., 1, None] * wz
            + (prof[..., 2] * tr + prof[..., 3] * zwz)[..., None] * zh)


def _oseen_fast(z: np.ndarray, sig, fh: np.ndarray | None = None) -> np.ndarray:
    """oseen_f(z, sig) by tabulated radial profiles; z has shape (..., d)
    and sig is a scalar or an array broadcastable against z[..., 0].

    fh, when given, is f_homog(z) (same broadcast shape) and avoids
    recomputing the homogeneous limit for points beyond the table."""
    d = z.shape[-1]
    spl = _kernel_table(d)
    sig = np.asarray(sig, float)
    if sig.ndim:
        shp = np.broadcast_shapes(z.shape[:-1], sig.shape)
        z = np.broadcast_to(z, shp + (d,))
        sig = np.broadcast_to(sig, shp)
        if fh is not None:
            fh = np.broadcast_to(fh, shp + (d,) * 3)
    r = np.sqrt(np.sum(z * z, axis=-1))
    rs = np.where(r > 0, r, 1.0)
    zeta = rs / np.sqrt(sig)
    zh = z / rs[..., None]
    prof = spl(np.log(np.clip(zeta, _KTAB_LO, _KTAB_HI)))  # (..., 4)
    small = zeta < _KTAB_LO
    if small.any():  # F(z,1) vanishes linearly at z = 0
        prof[small] *= (zeta[small] / _KTAB_LO)[:, None]
    scale = np.asarray(sig ** (-(d + 1) / 2))[..., None, None, None]
    eye = np.eye(d)
    out = np.einsum("jk,...h->...jhk", eye, zh * prof[..., 0:1])
    out += np.einsum("jh,...k->...jhk", eye, zh * prof[..., 1:2])
    out += np.einsum("hk,...j->...jhk", eye, zh * prof[..., 2:3])
    out += (prof[..., 3, None, None, None] * zh[..., :, None, None]
            * zh[..., None, :, None] * zh[..., None, None, :])
    out *= scale
    big = zeta > _KTAB_HI
    if big.any():  # pure homogeneous part beyond the table
        out[big] = fh[big] if fh is not None else f_homog(z[big])
    out[r == 0] = 0.0
    return out


def _sigma_nodes(t: float, o: dict):
    """sigma = t - s panels clustered at both endpoints."""
    sig_a, wsig_a = _log_gl(o["sig_lo"] * t, t / 2, o["sig_per_dec"],
                            o["sig_gl"])
    s_b, ws_b = _log_gl(1e-10 * t, t / 2, o["sig_per_dec"], o["sig_gl"])
    sig = np.concatenate([sig_a, t - s_b])
    wsig = np.concatenate([wsig_a, ws_b])
    return sig, wsig


def _direct(w: TensorFieldW, x: np.ndarray, t: float, o: dict,
            weight: str) -> np.ndarray:
    """Full-kernel evaluation for targets inside the parabolic region.

    Per sigma node the space integral runs in u = (x - y)/sqrt(sigma) on a
    fixed log-radial grid (the kernel profile is frozen there), except for
    the ball |y| <= R/2 holding the core of w, which keeps its own
    origin-centered log-polar grid.  The u grid extent grows like
    sqrt(sqrt(t)/R) so the homogeneous tail truncation stays negligible.
    """
    d = w.d
    st = math.sqrt(t)
    rule_u = build_rule(d, o["u_ang2"] if d == 2 else o["u_ang3"])
    rule_y = build_rule(d, o["oy_ang2"] if d == 2 else o["oy_ang3"])
    sig, wsig = _sigma_nodes(t, o)
    s_all = t - sig
    phi = _weight_values(weight, s_all, t)
    wm = wsig * phi / np.sqrt(sig)
    wphi = wsig * phi
    out = np.empty((len(x), d))
    # targets on a common radius share the u grid, the frozen kernel table
    # and the origin-chart radii; sweep them together so the w evaluations
    # and contractions run on one large block per radius
    radii = np.linalg.norm(x, axis=-1)
    order_ix = np.argsort(radii, kind="stable")
    groups: list[list[int]] = []
    for i in order_ix:
        if groups and abs(radii[groups[-1][0]] - radii[i]) <= 1e-12 * (1 + radii[i]):
            groups[-1].append(i)
        else:
            groups.append([i])
    for grp in groups:
        big_r = float(radii[grp[0]])
        xg = x[grp]  # (g, d)
        g = len(grp)
        u_hi = min(o["u_cap"] ** 0.5,
                   max(40.0, math.sqrt(o["u_cap"] * st / max(big_r, 1e-3 * st))))
        ru, wru = _log_gl(o["u_lo"], u_hi, o["u_per_dec"], o["u_gl"])
        upts = ru[:, None, None] * rule_u.nodes[None, :, :]
        ker = oseen_f(upts, 1.0)
        wq = (wru * ru ** (d - 1))[:, None] * rule_u.weights[None, :]
        val = np.zeros((g, d))
        blk = max(1, 32 // g)
        for lo in range(0, len(sig), blk):
            sl = slice(lo, lo + blk)
            c = np.sqrt(sig[sl])
            y = (xg[:, None, None, None, :]
                 - c[None, :, None, None, None] * upts[None, None])
            wv = w.slice(y, s_all[sl][None, :, None, None])
            if big_r > 0:
                ay = np.sqrt(np.sum(y * y, axis=-1))
                zeta = _smoothstep(ay, big_r / 4, big_r / 2)
                val += np.einsum("m,ua,gmua,uajhk,gmuahk->gj",
                                 wm[sl], wq, zeta, ker, wv, optimize=True)
            else:
                val += np.einsum("m,ua,uajhk,gmuahk->gj", wm[sl], wq, ker, wv, optimize=True)
        if big_r > 0:
            ry, wy = _log_gl(1e-5 * min(st, big_r), big_r / 2,
                             o["oy_per_dec"], o["oy_gl"])
            cut = 1.0 - _smoothstep(ry, big_r / 4, big_r / 2)
            y0 = ry[:, None, None] * rule_y.nodes[None, :, :]
            z0 = xg[:, None, None, :] - y0[None]  # (g, nr, na, d)
            wts = (wy * ry ** (d - 1) * cut)[:, None] * rule_y.weights[None, :]
            for lo in range(0, len(sig), blk2 := max(1, 256 // g)):
                sl = slice(lo, lo + blk2)
                m = sig[sl].size
                wv = w.slice(np.broadcast_to(y0, (m,) + y0.shape),
                             s_all[sl][:, None, None])
                contr = _oseen_contract(z0[:, None],
                                        sig[sl][None, :, None, None],
                                        wv[None])
                val += np.einsum("m,ra,gmraj->gj",
                                 wphi[sl], wts, contr, optimize=True)
        out[grp] = val
    return out


# ---------------------------------------------------------------------------
# public operators


def apply_L(w: TensorFieldW, x, t: float, order="fine", weight: str = "one",
            omega: GridField | None = None,
            split_radius: float = 3.0) -> np.ndarray:
    """L(w)(x, t) (or a time-weighted variant), vectorized over targets.

    Targets with |x| >= split_radius sqrt(t) use the F0/remainder split
    (conditioned like |x|/sqrt(t) against the direct route there); nearer
    targets use the direct similarity-variable quadrature.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    o = _orders(order)
    x = np.atleast_2d(np.asarray(x, float))
    if x.shape[-1] != w.d:
        raise ValueError("target dimension mismatch")
    p = w.far_decay_exponent(t)
    if p is not None and p < 1.0:
        raise ValueError("far-tail decay too slow: the kernel integral "
                         "does not converge")
    big = np.linalg.norm(x, axis=-1) >= split_radius * math.sqrt(t)
    out = np.empty_like(x)
    if big.any():
        if omega is None:
            omega = time_integral_field(w, t, weight, order)
        xb = x[big]
        out[big] = (_fo_piece(omega, xb, t, o)
                    + _psi_main(w, xb, t, o, weight)
                    + _psi_origin(w, xb, t, o, weight))
    if (~big).any():
        out[~big] = _direct(w, x[~big], t, o, weight)
    return out if out.shape[0] > 1 else out[0]


def bilinear_B(u: GridField, v: GridField, x, t: float, order="fine",
               **kw) -> np.ndarray:
    """B(u, v)(x, t) = L(u (x) v) for self-similar u, v given by profiles."""
    w = TensorFieldW.from_profile(tensor_product_field(u, v))
    return apply_L(w, x, t, order=order, **kw)


def weighted_L(w: TensorFieldW, x, t: float, weight: str,
               order="fine", **kw) -> np.ndarray:
    """The variants with scalar weight (t - tau) or tau under the integral."""
    if weight not in ("t_minus_tau", "tau"):
        raise ValueError("weight must be 't_minus_tau' or 'tau'")
    return apply_L(w, x, t, order=order, weight=weight, **kw)


# ---------------------------------------------------------------------------
# moment matrices


def compute_A(a: HomogeneousField) -> MomentMatrix:
    """A_{h,k} = int_{S^1} a_h a_k, by circle quadrature."""
    if a.d != 2:
        raise ValueError("the matrix A is defined for planar data")
    rule = build_rule(2, 64)
    av = a.value(rule.nodes)
    entries = np.einsum("n,nh,nk->hk", rule.weights, av, av)
    return MomentMatrix(entries, "A_from_datum")


def _heat_gradient(a: HomogeneousField, t: float, pts: np.ndarray) -> np.ndarray:
    """e^{t Lap} (grad (x) a) at pts, shape (..., i, h) with entries
    d_i a_h heat-evolved; far branch by the homogeneous moment expansion."""
    d = a.d
    grad = a.gradient  # (..., i, h)
    r = np.sqrt(np.sum(pts * pts, axis=-1))
    far = r >= 8.0 * math.sqrt(t)
    out = np.empty(pts.shape[:-1] + (d, d))
    if np.any(far):
        xf = pts[far]
        rf = r[far]
        om = xf / rf[:, None]
        l1u = _iterated_laplacian_unit(grad, d, om)

        def lap1(p):
            rr = np.sqrt(np.sum(p * p, axis=-1))
            o = p / rr[..., None]
            return (_iterated_laplacian_unit(grad, d, o)
                    * (rr ** -4.0)[..., None, None])

        l2u = _iterated_laplacian_unit(lap1, d, om, h=1e-2)

        def lap2(p):
            rr = np.sqrt(np.sum(p * p, axis=-1))
            o = p / rr[..., None]
            return (_iterated_laplacian_unit(lap1, d, o, h=1e-2)
                    * (rr ** -6.0)[..., None, None])

        l3u = _iterated_laplacian_unit(lap2, d, om, h=2e-2)
        out[far] = (grad(xf)
                    + t * l1u * (rf ** -4.0)[:, None, None]
                    + t**2 / 2 * l2u * (rf ** -6.0)[:, None, None]
                    + t**3 / 6 * l3u * (rf ** -8.0)[:, None, None])
    if np.any(~far):
        xn = pts[~far]
        flat = _heat_near_batch(lambda p: grad(p).reshape(p.shape[:-1] + (d * d,)),
                                t, xn, d)
        out[~far] = flat.reshape(xn.shape[:-1] + (d, d))
    return out


def compute_W(U: GridField, a: HomogeneousField,
              V: GridField | None = None) -> tuple:
    """The three tensors W_j(y) = w_j(y, 1) of the 3D matrix B.

    w1 = (grad (x) e^{s Lap} a)^T (grad (x) e^{s Lap} a), w2 = (1/s)
    e^{s Lap} a (x) B(u,u), w3 = (1/s) B(u,u) (x) B(u,u), all at s = 1,
    using B(u,u)(., 1) = e^{Lap} a - U from the fixed-point identity.
    """
    if a.d != 3 or U.d != 3:
        raise ValueError("the matrix B is defined for d = 3")
    if U.far_field is None:
        raise ValueError("profile lacks a far-field closure; "
                         "pass a converged solver output")
    if V is None:
        V = heat_evolve(a, 1.0, r_min=U.r_min, r_max=U.r_max,
                        n_radial=len(U.r_nodes), n_angular=len(U.ang_nodes))
    g_vals = V.values - U.values
    nodes = U.nodes()
    h = _heat_gradient(a, 1.0, nodes.reshape(-1, 3)).reshape(nodes.shape[:2] + (3, 3))
    w1_vals = np.einsum("...ih,...ik->...hk", h, h)

    def w1_far(y):
        g = a.gradient(np.asarray(y, float))
        return np.einsum("...ih,...ik->...hk", g, g)

    w1 = GridField(3, U.r_nodes, U.ang_nodes, w1_vals, w1_far,
                   U.symmetry, "tensor")
    w2_vals = V.values[..., :, None] * g_vals[..., None, :]
    w3_vals = g_vals[..., :, None] * g_vals[..., None, :]
    w2 = GridField(3, U.r_nodes, U.ang_nodes, w2_vals, None, U.symmetry, "tensor")
    w3 = GridField(3, U.r_nodes, U.ang_nodes, w3_vals, None, U.symmetry, "tensor")
    w2.far_field = power_law_closure(w2, 4.0)
    w3.far_field = power_law_closure(w3, 6.0)
    return (TensorFieldW.from_profile(w1, s_power=-2.0),
            TensorFieldW.from_profile(w2, s_power=-2.0),
            TensorFieldW.from_profile(w3, s_power=-2.0))


def _azimuthal_conjugation(m: np.ndarray) -> np.ndarray:
    """int_0^{2pi} R M R^T dzeta for meridian tensor values M (..., 3, 3)."""
    out = np.zeros_like(m)
    trace2 = m[..., 0, 0] + m[..., 1, 1]
    skew = m[..., 0, 1] - m[..., 1, 0]
    out[..., 0, 0] = out[..., 1, 1] = np.pi * trace2
    out[..., 0, 1] = np.pi * skew
    out[..., 1, 0] = -np.pi * skew
    out[..., 2, 2] = 2 * np.pi * m[..., 2, 2]
    return out


def _w_integral(wf: TensorFieldW) -> tuple[np.ndarray, float]:
    """int W dy over R^3 from the meridian grid; returns the integral and a
    bound on the neglected inner-disc plus outer-tail mass."""
    from scipy.integrate import simpson

    g = wf.profile
    n_ang = len(g.ang_nodes)
    conj = _azimuthal_conjugation(g.values)  # (n_r, n_ang, 3, 3)
    sin_w = np.sin(g.ang_nodes) * (np.pi / n_ang)
    merid = np.einsum("m,rmhk->rhk", sin_w, conj)
    integrand = merid * (g.r_nodes ** 3)[:, None, None]
    entries = simpson(integrand, x=np.log(g.r_nodes), axis=0)
    # |W| <= C |y|^{-4} tail from the outer ring; smooth inner disc
    outer = np.max(np.abs(g.values[-1]))
    tail = 4 * np.pi * (outer * g.r_max**4) / g.r_max
    inner = 4 * np.pi / 3 * g.r_min**3 * np.max(np.abs(g.values[0]))
    return entries, tail + inner


def compute_B_matrix(w1: TensorFieldW, w2: TensorFieldW,
                     w3: TensorFieldW) -> MomentMatrix:
    """B = (1/3) int (-8 W1 - 4 W2 + 2 W3)(y) dy."""
    coefs = (-8.0, -4.0, 2.0)
    entries = np.zeros((3, 3))
    bound = 0.0
    for c, wf in zip(coefs, (w1, w2, w3)):
        val, err = _w_integral(wf)
        entries += c / 3.0 * val
        bound += abs(c) / 3.0 * err
    norm = np.max(np.abs(entries))
    if norm > 0 and bound > 0.05 * norm:
        raise ValueError("tail bound exceeds 5% of the grid integral; "
                         "extend the profile grid")
    return MomentMatrix(entries, "B_from_Ws")


def lambda_matrix(w1: TensorFieldW, w2: TensorFieldW, w3: TensorFieldW,
                  t: float) -> MomentMatrix:
    """Lambda(t) = int_0^t int [-2(t-s) w1 - 2s w2 + s w3] dy ds, computed
    by explicit time quadrature of the self-similar slices."""
    i1, _ = _w_integral(w1)
    i2, _ = _w_integral(w2)
    i3, _ = _w_integral(w3)
    # int w_j(., s) dy = s^{-1/2} int W_j for the closure w_j = s^{-2} W_j(./sqrt s)
    tau, wt = leggauss(48)
    tau = 0.5 * (tau + 1.0)
    wt = 0.5 * wt
    s = t * tau**2
    ds = 2 * t * tau * wt  # includes the substitution jacobian
    coef = (-2.0 * (t - s) * s**-0.5 * ds,
            -2.0 * s * s**-0.5 * ds,
            s * s**-0.5 * ds)
    entries = (np.sum(coef[0]) * i1 + np.sum(coef[1]) * i2
               + np.sum(coef[2]) * i3)
    return MomentMatrix(entries, "Lambda_at_t")
