"""Vector-field representations: homogeneous degree -1 data given by their
angular trace, log-radial x angular grid fields, and the weighted sup norms.

Grid conventions: values have shape (n_r, n_ang, d).  In 2D the angular
nodes are equispaced angles; in 3D the grid stores the meridian half-plane
(azimuth 0) of a rotation-equivariant field, values at general points being
recovered by rotation about the x3 axis.  Grid fields are treated as
immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "HomogeneousField",
    "GridField",
    "WeightedNorm",
    "make_datum",
    "custom_datum",
    "weighted_norm",
    "weak_divergence",
]


@dataclass(frozen=True)
class HomogeneousField:
    """Degree -1 homogeneous vector field with analytic closures.

    ``symmetry`` records the rotation group under which the field is
    equivariant: "rotational" (any 2D rotation), "axisymmetric" (3D
    rotations about the x3 axis), or None.
    """

    d: int
    eps: float
    kind: str
    _value: Callable[[np.ndarray], np.ndarray]
    _gradient: Callable[[np.ndarray], np.ndarray]  # [..., h, j] = d_h a_j
    _laplacian: Callable[[np.ndarray], np.ndarray]
    symmetry: str | None = None

    degree: int = -1

    def value(self, x) -> np.ndarray:
        return self._value(np.asarray(x, dtype=float))

    def gradient(self, x) -> np.ndarray:
        return self._gradient(np.asarray(x, dtype=float))

    def laplacian(self, x) -> np.ndarray:
        return self._laplacian(np.asarray(x, dtype=float))

    def trace(self, omega) -> np.ndarray:
        """Angular trace: the value on the unit sphere."""
        return self.value(omega)

    def component(self, j: int) -> Callable[[np.ndarray], np.ndarray]:
        return lambda x: self.value(x)[..., j]

    def scaled(self, factor: float) -> "HomogeneousField":
        return HomogeneousField(
            self.d,
            self.eps * factor,
            self.kind,
            lambda x: factor * self._value(x),
            lambda x: factor * self._gradient(x),
            lambda x: factor * self._laplacian(x),
            self.symmetry,
        )


def _r2(x):
    return np.sum(x * x, axis=-1)


def make_datum(kind: str, eps: float) -> HomogeneousField:
    """Construct one of the built-in divergence-free degree -1 data.

    rotational3d: eps (-x2, x1, 0)/|x|^2;  rotational2d: the 2D analogue.
    anisotropic2d: -eps x1 x/|x|^3 (the perpendicular gradient of the
    degree-0 stream function -eps x1/|x|), whose second angular moments
    are unequal so the logarithmic far-field term is active.
    """
    if eps <= 0:
        raise ValueError("datum amplitude must be positive")
    if kind == "rotational3d":

        def val(x):
            r2 = _r2(x)[..., None]
            out = np.stack([-x[..., 1], x[..., 0], np.zeros_like(x[..., 0])], axis=-1)
            return eps * out / r2

        mat = np.array([[0.0, 1, 0], [-1, 0, 0], [0, 0, 0]])

        def grad(x):
            r2 = _r2(x)
            p = np.stack([-x[..., 1], x[..., 0], np.zeros_like(x[..., 0])], axis=-1)
            return eps * (
                mat / r2[..., None, None]
                - 2 * x[..., :, None] * p[..., None, :] / (r2**2)[..., None, None]
            )

        def lap(x):
            return -2 * val(x) / _r2(x)[..., None]

        return HomogeneousField(3, eps, kind, val, grad, lap, symmetry="axisymmetric")

    if kind == "rotational2d":

        def val(x):
            r2 = _r2(x)[..., None]
            return eps * np.stack([-x[..., 1], x[..., 0]], axis=-1) / r2

        mat2 = np.array([[0.0, 1], [-1, 0]])

        def grad(x):
            r2 = _r2(x)
            p = np.stack([-x[..., 1], x[..., 0]], axis=-1)
            return eps * (
                mat2 / r2[..., None, None]
                - 2 * x[..., :, None] * p[..., None, :] / (r2**2)[..., None, None]
            )

        def lap(x):
            return np.zeros_like(x)  # the rotational trace is harmonic off 0

        return HomogeneousField(2, eps, kind, val, grad, lap, symmetry="rotational")

    if kind == "anisotropic2d":
        eye = np.eye(2)

        def val(x):
            r = np.sqrt(_r2(x))[..., None]
            return -eps * x[..., :1] * x / r**3

        def grad(x):
            r2 = _r2(x)
            r3 = (r2**1.5)[..., None, None]
            xj = x[..., None, :]
            xh = x[..., :, None]
            x1 = x[..., 0, None, None]
            d1h = np.zeros((2, 2))
            d1h[0, :] = 1.0  # delta_{h,1} in both j slots
            return -eps * (d1h * xj + eye * x1 - 3 * x1 * xh * xj / r2[..., None, None]) / r3

        def lap(x):
            r2 = _r2(x)
            r3 = (r2**1.5)[..., None]
            c2 = (x[..., 0] ** 2 - x[..., 1] ** 2) / r2
            s2 = 2 * x[..., 0] * x[..., 1] / r2
            return eps * np.stack([-0.5 + 1.5 * c2, 1.5 * s2], axis=-1) / r3

        return HomogeneousField(2, eps, kind, val, grad, lap, symmetry=None)

    raise ValueError(f"unknown datum kind {kind!r}")


def custom_datum(d, eps, value, gradient, laplacian, symmetry=None) -> HomogeneousField:
    return HomogeneousField(d, eps, "custom", value, gradient, laplacian, symmetry)


# ---------------------------------------------------------------------------
# grid fields


@dataclass
class GridField:
    """Field sampled on a geometric-radial x angular grid.

    2D: ``ang_nodes`` are equispaced angles on [0, 2pi); ``symmetry`` may be
    "rotational" (single stored angle, values elsewhere by rotation).
    3D: ``ang_nodes`` are polar angles of the meridian half-plane and
    ``symmetry`` must be "axisymmetric".

    ``kind`` fixes how components transform under the rotations used by the
    symmetry closures: "vector" (d components, v -> Rv), "tensor" (d x d,
    M -> R M R^T) or "scalar" (any trailing shape, invariant).
    """

    d: int
    r_nodes: np.ndarray
    ang_nodes: np.ndarray
    values: np.ndarray  # (n_r, n_ang, *comp_shape)
    far_field: HomogeneousField | None = None
    symmetry: str | None = None
    kind: str = "vector"
    _fft: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def comp_shape(self) -> tuple:
        return tuple(self.values.shape[2:])

    def _flat_values(self) -> np.ndarray:
        return self.values.reshape(self.values.shape[0], self.values.shape[1], -1)

    def _rotated(self, vals: np.ndarray, c: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Apply per-point rotation (angle with cos c, sin s; about x3 in 3D)
        to flattened component vectors."""
        if self.kind == "scalar":
            return vals
        if self.kind == "vector":
            out = vals.copy()
            out[:, 0] = c * vals[:, 0] - s * vals[:, 1]
            out[:, 1] = s * vals[:, 0] + c * vals[:, 1]
            return out
        if self.kind == "tensor":
            d = self.d
            m = vals.reshape(-1, d, d)
            rot = np.zeros((len(vals), d, d))
            rot[:, 0, 0] = c
            rot[:, 0, 1] = -s
            rot[:, 1, 0] = s
            rot[:, 1, 1] = c
            for k in range(2, d):
                rot[:, k, k] = 1.0
            out = np.einsum("pab,pbc,pdc->pad", rot, m, rot)
            return out.reshape(len(vals), -1)
        raise ValueError(f"unknown component kind {self.kind!r}")

    def _reflection_signs(self) -> np.ndarray:
        """Componentwise signs of the transform under diag(-1,-1,1) (the 3D
        pole reflection)."""
        s = np.array([-1.0, -1.0, 1.0])
        if self.kind == "scalar":
            return np.ones(int(np.prod(self.comp_shape) or 1))
        if self.kind == "vector":
            return s
        if self.kind == "tensor":
            return np.outer(s, s).ravel()
        raise ValueError(f"unknown component kind {self.kind!r}")

    @property
    def r_min(self) -> float:
        return float(self.r_nodes[0])

    @property
    def r_max(self) -> float:
        return float(self.r_nodes[-1])

    @property
    def log_r(self) -> np.ndarray:
        return np.log(self.r_nodes)

    def nodes(self) -> np.ndarray:
        """Cartesian coordinates of all grid nodes, shape (n_r, n_ang, d)."""
        r = self.r_nodes[:, None]
        if self.d == 2:
            c, s = np.cos(self.ang_nodes), np.sin(self.ang_nodes)
            return np.stack([r * c[None, :], r * s[None, :]], axis=-1)
        c, s = np.cos(self.ang_nodes), np.sin(self.ang_nodes)
        zero = np.zeros_like(s)
        return np.stack([r * s[None, :], r * zero[None, :], r * c[None, :]], axis=-1)

    @classmethod
    def from_function(
        cls,
        fn,
        d: int,
        r_min: float = 0.05,
        r_max: float = 400.0,
        n_radial: int = 96,
        n_angular: int = 64,
        far_field: HomogeneousField | None = None,
        symmetry: str | None = None,
        kind: str = "vector",
    ) -> "GridField":
        r = np.geomspace(r_min, r_max, n_radial)
        if symmetry == "rotational":
            n_angular = 1
        if d == 2:
            ang = 2 * np.pi * np.arange(n_angular) / n_angular
        elif d == 3:
            if symmetry != "axisymmetric":
                raise ValueError("3D grid fields require axisymmetric symmetry")
            ang = np.pi * (np.arange(n_angular) + 0.5) / n_angular
        else:
            raise ValueError(f"unsupported dimension {d}")
        obj = cls(d, r, ang, np.zeros((n_radial, len(ang), d)), far_field, symmetry,
                  kind)
        vals = np.asarray(fn(obj.nodes()) if callable(fn) else fn, dtype=float)
        comp = {"vector": (d,), "tensor": (d, d)}.get(kind, vals.shape[2:])
        obj.values = vals.reshape(n_radial, len(ang), *comp)
        return obj

    @classmethod
    def from_homogeneous(cls, a: HomogeneousField, **kw) -> "GridField":
        kw.setdefault("far_field", a)
        kw.setdefault("symmetry", a.symmetry)
        return cls.from_function(a.value, a.d, **kw)

    def like(self, values: np.ndarray, far_field=...) -> "GridField":
        if far_field is ...:
            far_field = self.far_field
        return GridField(
            self.d, self.r_nodes, self.ang_nodes, np.asarray(values, float),
            far_field, self.symmetry, self.kind,
        )

    def to_full_angular(self, n_angular: int = 32) -> "GridField":
        """Expand a rotationally symmetric 2D field onto a full angular grid."""
        if self.symmetry != "rotational":
            return self
        ang = 2 * np.pi * np.arange(n_angular) / n_angular
        n_r = len(self.r_nodes)
        v0 = self._flat_values()[:, 0, :]
        flat = np.empty((n_r, n_angular, v0.shape[1]))
        for k, th in enumerate(ang):
            c = np.full(n_r, np.cos(th))
            s = np.full(n_r, np.sin(th))
            flat[:, k, :] = self._rotated(v0, c, s)
        vals = flat.reshape(n_r, n_angular, *self.comp_shape)
        return GridField(2, self.r_nodes, ang, vals, self.far_field, None, self.kind)

    # -- evaluation ---------------------------------------------------------

    def _angular_fft(self):
        # scaled rfft coefficients, truncated to the modes the field
        # actually carries; synthesis cost scales with the retained count
        if self._fft is None:
            co = np.fft.rfft(self._flat_values(), axis=1)
            n = self.values.shape[1]
            scale = np.full(co.shape[1], 2.0)
            scale[0] = 1.0
            if n % 2 == 0:
                scale[-1] = 1.0
            co *= scale[None, :, None] / n
            amp = np.max(np.abs(co), axis=(0, 2))
            top = float(np.max(amp))
            keep = (np.flatnonzero(amp > 1e-13 * top) if top > 0
                    else np.array([0]))
            self._fft = (np.ascontiguousarray(co[:, keep].real),
                         np.ascontiguousarray(co[:, keep].imag),
                         keep.astype(float))
        return self._fft

    def _interp_radial(self, r):
        """Cubic Lagrange interpolation stencil in log r: indices (p, 4)
        and weights (p, 4), clamped to the grid."""
        lr = self.log_r
        h = lr[1] - lr[0]
        u = np.log(np.clip(r, self.r_min, self.r_max))
        idx = np.clip(np.floor((u - lr[0]) / h).astype(int), 1, len(lr) - 3)
        t = (u - lr[idx]) / h
        sten = idx[:, None] + np.arange(-1, 3)[None, :]
        w = np.stack(
            [
                -t * (t - 1) * (t - 2) / 6,
                (t + 1) * (t - 1) * (t - 2) / 2,
                -(t + 1) * t * (t - 2) / 2,
                (t + 1) * t * (t - 1) / 6,
            ],
            axis=-1,
        )
        return sten, w

    def _eval_2d_inner(self, r, theta):
        sten, w = self._interp_radial(r)
        if self.symmetry == "rotational":
            base = self._flat_values()[:, 0, :]
            v0 = np.einsum("ps,psj->pj", w, base[sten])
            return self._rotated(v0, np.cos(theta), np.sin(theta))
        # trigonometric synthesis in the angle, cubic in log r
        cre, cim, k = self._angular_fft()
        tk = theta[:, None] * k[None, :]
        c_r = np.einsum("ps,psmj->pmj", w, cre[sten])
        c_i = np.einsum("ps,psmj->pmj", w, cim[sten])
        return (np.einsum("pm,pmj->pj", np.cos(tk), c_r)
                - np.einsum("pm,pmj->pj", np.sin(tk), c_i))

    def _eval_3d_inner(self, pts):
        rho = np.hypot(pts[:, 0], pts[:, 1])
        zeta = np.arctan2(pts[:, 1], pts[:, 0])
        r = np.sqrt(np.sum(pts * pts, axis=1))
        phi = np.arctan2(rho, pts[:, 2])
        sten_r, w_r = self._interp_radial(r)
        # cubic Lagrange in the polar angle with reflection across the poles
        ang = self.ang_nodes
        n = len(ang)
        h = np.pi / n
        j = np.clip(np.floor(phi / h - 0.5).astype(int), -1, n - 1)
        stencil = (j - 1)[:, None] + np.arange(4)[None, :]
        refl_lo = stencil < 0
        refl_hi = stencil >= n
        refl = np.where(refl_lo, -1 - stencil, stencil)
        refl = np.where(refl >= n, 2 * n - 1 - refl, refl)
        phis = np.where(refl_lo, -ang[refl], np.where(refl_hi, 2 * np.pi - ang[refl], ang[refl]))
        wts = np.ones_like(phis)
        for a in range(4):
            for b in range(4):
                if a != b:
                    wts[:, a] *= (phi - phis[:, b]) / (phis[:, a] - phis[:, b])
        vgrid = self._flat_values()[sten_r[:, :, None], refl[:, None, :], :]
        vr = np.einsum("ps,psaj->paj", w_r, vgrid)  # (p, 4 ang, comps)
        # meridian values reflected across a pole pick up componentwise signs
        # from the diag(-1,-1,1) reflection
        sg = self._reflection_signs()
        vr = vr * np.where((refl_lo | refl_hi)[:, :, None], sg[None, None, :], 1.0)
        vm = np.einsum("pa,paj->pj", wts, vr)
        return self._rotated(vm, np.cos(zeta), np.sin(zeta))

    def eval(self, x, clamp: bool = False) -> np.ndarray:
        """Field value at points x, shape (..., *comp_shape).

        Inside the grid: interpolation (cubic in log r; spectral in the 2D
        angle, cubic with pole reflection in the 3D polar angle).  Beyond
        r_max: the far-field closure.  Below r_min: error unless ``clamp``.
        """
        x = np.asarray(x, dtype=float)
        shape = x.shape
        pts = x.reshape(-1, self.d)
        r = np.sqrt(np.sum(pts * pts, axis=1))
        if not clamp and np.any(r < self.r_min * (1 - 1e-12)):
            raise ValueError("point below the inner grid radius")
        ncomp = self._flat_values().shape[-1]
        out = np.empty((len(pts), ncomp))
        far = r > self.r_max
        inner = ~far
        if np.any(inner):
            p = pts[inner]
            if self.d == 2:
                out[inner] = self._eval_2d_inner(r[inner], np.arctan2(p[:, 1], p[:, 0]))
            else:
                out[inner] = self._eval_3d_inner(p)
        if np.any(far):
            if self.far_field is None:
                raise ValueError("no far-field closure")
            fv = (self.far_field.value if hasattr(self.far_field, "value")
                  else self.far_field)
            out[far] = np.asarray(fv(pts[far])).reshape(int(np.sum(far)), ncomp)
        return out.reshape(shape[:-1] + self.comp_shape)

    # -- derivatives on the grid -------------------------------------------

    def radial_derivative(self, arr: np.ndarray) -> np.ndarray:
        """d/dr of node values via 4th-order differences in log r."""
        u = self.log_r
        h = u[1] - u[0]
        du = np.empty_like(arr)
        du[2:-2] = (arr[:-4] - 8 * arr[1:-3] + 8 * arr[3:-1] - arr[4:]) / (12 * h)
        for i in (0, 1):
            du[i] = (-25 * arr[i] + 48 * arr[i + 1] - 36 * arr[i + 2]
                     + 16 * arr[i + 3] - 3 * arr[i + 4]) / (12 * h)
        for i in (-2, -1):
            du[i] = (25 * arr[i] - 48 * arr[i - 1] + 36 * arr[i - 2]
                     - 16 * arr[i - 3] + 3 * arr[i - 4]) / (12 * h)
        shape = (-1,) + (1,) * (arr.ndim - 1)
        return du / self.r_nodes.reshape(shape)

    def angular_derivative(self, arr: np.ndarray) -> np.ndarray:
        """d/dtheta of node values, spectral (2D full grid only)."""
        n = arr.shape[1]
        coef = np.fft.rfft(arr, axis=1)
        k = np.arange(coef.shape[1], dtype=float)
        if n % 2 == 0:
            k[-1] = 0.0  # Nyquist mode has no odd derivative
        kshape = (1, -1) + (1,) * (arr.ndim - 2)
        return np.fft.irfft(1j * k.reshape(kshape) * coef, n=n, axis=1)

    def cartesian_derivative(self, arr: np.ndarray) -> np.ndarray:
        """Cartesian gradient of node values: (n_r, n_ang, ...) -> adds a
        leading component axis after the angular one (2D full grid)."""
        if self.d != 2 or self.symmetry is not None:
            raise NotImplementedError("cartesian derivatives need a full 2D grid")
        dr = self.radial_derivative(arr)
        dth = self.angular_derivative(arr)
        sh = (1, -1) + (1,) * (arr.ndim - 2)
        c = np.cos(self.ang_nodes).reshape(sh)
        s = np.sin(self.ang_nodes).reshape(sh)
        rr = self.r_nodes.reshape((-1,) + (1,) * (arr.ndim - 1))
        gx = c * dr - s * dth / rr
        gy = s * dr + c * dth / rr
        return np.stack([gx, gy], axis=2)

    def gradient_nodes(self) -> np.ndarray:
        """Cartesian gradient d_h U_j at every node, shape (n_r, n_ang, d, d)."""
        if self.d == 2 and self.symmetry == "rotational":
            return self.to_full_angular().gradient_nodes()[:, :1]
        return self.cartesian_derivative(self.values)


# ---------------------------------------------------------------------------
# norms


@dataclass(frozen=True)
class WeightedNorm:
    m: int
    theta: float
    flavor: str  # "dotE", "E" or "X"
    value: float


def _homogeneous_derivative_sup(f: HomogeneousField, order: int) -> float:
    """Sup over the unit sphere of |d^alpha f|, |alpha| = order (orders
    above 1 by finite differences of the analytic gradient)."""
    from .sphere import build_rule

    pts = build_rule(f.d, 24).nodes
    if order == 0:
        return float(np.max(np.abs(f.value(pts))))
    if order == 1:
        return float(np.max(np.abs(f.gradient(pts))))
    h = 1e-4
    best = 0.0
    for axis in range(f.d):
        e = np.zeros(f.d)
        e[axis] = h
        if order == 2:
            g = (f.gradient(pts + e) - f.gradient(pts - e)) / (2 * h)
        else:
            g = (f.gradient(pts + e) - 2 * f.gradient(pts) + f.gradient(pts - e)) / h**2
        best = max(best, float(np.max(np.abs(g))))
    return best


def weighted_norm(f, m: int, theta: float, flavor: str = "dotE") -> WeightedNorm:
    """Discrete weighted sup norm of a field.

    Grid fields: sup over grid nodes, derivatives by the grid scheme.
    Homogeneous fields: sup over unit directions (homogeneity fixes the
    radial dependence; finite only for theta = 1 in the homogeneous flavor).
    """
    if m > 3:
        raise ValueError("derivative order > 3 unsupported")
    if flavor not in ("dotE", "E", "X"):
        raise ValueError(f"unknown norm flavor {flavor!r}")
    if isinstance(f, HomogeneousField):
        if flavor == "dotE" and theta != 1:
            raise ValueError("degree -1 homogeneous fields have finite "
                             "homogeneous norms only for theta = 1")
        best = max(_homogeneous_derivative_sup(f, k) for k in range(m + 1))
        return WeightedNorm(m, theta, flavor, best)
    if not isinstance(f, GridField):
        raise TypeError("expected a GridField or HomogeneousField")
    g = f.to_full_angular() if f.symmetry == "rotational" else f
    pts = g.nodes()
    r = np.sqrt(np.sum(pts * pts, axis=-1))
    weight = r if flavor == "dotE" else 1 + r
    best = 0.0
    arr = g.values
    for order in range(m + 1):
        mag = np.max(np.abs(arr.reshape(arr.shape[:2] + (-1,))), axis=-1)
        best = max(best, float(np.max(weight ** (theta + order) * mag)))
        if order < m:
            arr = g.cartesian_derivative(arr)
    return WeightedNorm(m, theta, flavor, best)


def weak_divergence(value_fn, d: int, centers=None, widths=None) -> float:
    """Max over bump test functions of |int a . grad(phi)| by quadrature.

    Test functions are Gaussian bumps exp(-|x-c|^2/w^2); each integral is
    computed on a polar grid around its center.
    """
    from numpy.polynomial.legendre import leggauss

    from .sphere import build_rule

    if centers is None:
        base = [(1.5, 0.0), (-0.7, 2.0), (0.9, -1.6), (3.0, 1.0)]
        centers = [np.r_[c, np.zeros(d - 2)] for c in base]
    if widths is None:
        widths = [0.3] * len(centers)
    rule = build_rule(d, 24)
    un, uw = leggauss(48)
    worst = 0.0
    for c, w0 in zip(centers, widths):
        rad = 4.0 * w0 * (un + 1) / 2
        rw = 4.0 * w0 * uw / 2
        pts = c[None, None, :] + rad[:, None, None] * rule.nodes[None, :, :]
        vol_w = (rw * rad ** (d - 1))[:, None] * rule.weights[None, :]
        z = pts - c[None, None, :]
        phi_grad = -2 * z / w0**2 * np.exp(-np.sum(z * z, axis=-1) / w0**2)[..., None]
        integrand = np.sum(value_fn(pts) * phi_grad, axis=-1)
        worst = max(worst, float(abs(np.sum(vol_w * integrand))))
    return worst
