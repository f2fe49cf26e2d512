"""Far-field profile predictions and decay-slope fitting.

The profile U of a small self-similar solution agrees with its datum a at
infinity up to explicit corrections: in 2D a log-weighted degree -3 term
driven by the angular moment matrix A, in higher dimensions the Laplacian
of the datum, a Leray commutator term, and (d = 3) a degree -4 term driven
by the space-time moment matrix B.  This module evaluates those predictions
pointwise and quantifies how well a computed profile matches them through
least-squares decay fits with log-factor model selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bilinear import MomentMatrix
from .fields import GridField, HomogeneousField
from .kernels import q_poly
from .leray import filtered_leray_term, laplacian_of_datum
from .sphere import build_rule

__all__ = ["DecayReport", "predict_2d", "predict_3d", "predict_highd",
           "log_moment_integral", "fit_decay", "compare_profiles"]


@dataclass
class DecayReport:
    """Outcome of a decay fit over a radial window."""

    window: tuple[float, float]
    exponent: float
    log_factor: bool
    max_rel_dev: float
    per_direction: list[dict] = field(default_factory=list)

    def __post_init__(self):
        r1, r2 = self.window
        if not r1 < r2:
            raise ValueError("window must satisfy R1 < R2")
        if not math.isfinite(self.exponent):
            raise ValueError("fitted exponent must be finite")

    def as_dict(self) -> dict:
        return {"window": list(self.window), "exponent": self.exponent,
                "log_factor": self.log_factor,
                "max_rel_dev": self.max_rel_dev,
                "per_direction": self.per_direction}


def _q_contract(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Q(x) : M over the last two kernel slots."""
    return np.einsum("...jhk,hk->...j", q_poly(x), m)


def predict_2d(a: HomogeneousField, A: MomentMatrix, x) -> np.ndarray:
    """Leading 2D far-field profile a(x) - log|x| (Q(x):A) / |x|^6."""
    if a.d != 2:
        raise ValueError("2D prediction needs a planar datum")
    x = np.atleast_2d(np.asarray(x, float))
    r = np.linalg.norm(x, axis=-1)
    corr = np.log(r)[..., None] * _q_contract(x, A.entries) / (r ** 6)[..., None]
    return a.value(x) - corr


def log_moment_integral(a: HomogeneousField, x, t: float) -> np.ndarray:
    """Closed form of the annular space-time moment of a (x) a in 2D.

    int_0^t int_{sqrt s <= |y| <= |x|} (a (x) a)(y) dy ds
        = (int_{S^1} a (x) a) (t log(|x|/sqrt t) + t/2),
    valid in the far region |x| >= e sqrt(t).
    """
    if a.d != 2:
        raise ValueError("closed-form moment integral is planar")
    x = np.atleast_2d(np.asarray(x, float))
    r = np.linalg.norm(x, axis=-1)
    if np.any(r < math.e * math.sqrt(t)):
        raise ValueError("moment integral requires |x| >= e sqrt(t)")
    rule = build_rule(2, 40)
    av = a.value(rule.nodes)
    ang = np.einsum("n,nh,nk->hk", rule.weights, av, av)
    scale = t * np.log(r / math.sqrt(t)) + t / 2
    return scale[..., None, None] * ang


def predict_3d(a: HomogeneousField, B: MomentMatrix, x,
               order: str = "fine") -> np.ndarray:
    """3D far-field profile a + Delta a - e^Delta P div(a (x) a) - Q(x):B/|x|^7."""
    if a.d != 3:
        raise ValueError("3D prediction needs a spatial datum")
    x = np.atleast_2d(np.asarray(x, float))
    r = np.linalg.norm(x, axis=-1)
    out = a.value(x) + laplacian_of_datum(a, x)
    out -= filtered_leray_term(a, x, order=order)
    out -= _q_contract(x, B.entries) / (r ** 7)[..., None]
    return out


def predict_highd(a: HomogeneousField, x, order: str = "fine") -> np.ndarray:
    """d >= 4 far-field profile a + Delta a - e^Delta P div(a (x) a)."""
    if a.d < 4:
        raise ValueError("high-dimensional prediction needs d >= 4")
    x = np.atleast_2d(np.asarray(x, float))
    out = a.value(x) + laplacian_of_datum(a, x)
    return out - filtered_leray_term(a, x, order=order)


def _power_fit(lr: np.ndarray, lv: np.ndarray, extra: np.ndarray | None):
    """Least squares of lv against [1, lr] (+ optional fixed column)."""
    cols = [np.ones_like(lr), lr]
    if extra is not None:
        cols.append(extra)
    mat = np.stack(cols, axis=-1)
    coef, *_ = np.linalg.lstsq(mat, lv, rcond=None)
    resid = lv - mat @ coef
    return coef, float(np.sum(resid ** 2))


def fit_decay(samples, with_log: bool = True) -> DecayReport:
    """Fit |value| ~ C |x|^p (optionally times log|x|) on log-log axes.

    The log-factor variant keeps the same parameter count (its extra
    column has fixed unit weight), so plain residual comparison acts as
    the AIC criterion.  Requires >= 8 samples spanning a decade.
    """
    r = np.asarray([s[0] for s in samples], float)
    v = np.asarray([np.linalg.norm(np.atleast_1d(s[1])) for s in samples])
    if len(r) < 8:
        raise ValueError("need at least 8 samples for a decay fit")
    if np.max(r) < 10 * np.min(r):
        raise ValueError("samples must span at least one decade")
    if np.any(v <= 0) or np.any(~np.isfinite(v)):
        raise ValueError("degenerate sample magnitudes")
    lr, lv = np.log(r), np.log(v)
    coef_p, rss_p = _power_fit(lr, lv, None)
    use_log = False
    coef = coef_p
    if with_log:
        llr = np.log(np.maximum(lr, 1e-12))
        coef_l, rss_l = _power_fit(lr, lv - llr, None)
        if rss_l < rss_p:
            use_log, coef = True, coef_l
            rss_p = rss_l
    model = coef[0] + coef[1] * lr + (np.log(np.maximum(lr, 1e-12))
                                      if use_log else 0.0)
    dev = float(np.max(np.abs(np.exp(lv - model) - 1.0)))
    return DecayReport(window=(float(np.min(r)), float(np.max(r))),
                       exponent=float(coef[1]), log_factor=use_log,
                       max_rel_dev=dev)


def _directions(d: int, n: int) -> np.ndarray:
    if d == 2:
        th = 2 * np.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    # meridian fan; axisymmetric grids are exact there and full grids
    # lose nothing by symmetry of the data considered
    th = np.pi * (np.arange(n) + 0.5) / n
    return np.stack([np.sin(th), np.zeros(n), np.cos(th)], axis=-1)


def compare_profiles(U: GridField, prediction, window=(20.0, 200.0),
                     n_radii: int = 12, n_directions: int = 16,
                     with_log: bool = True) -> DecayReport:
    """Residual decay of a computed profile against a pointwise prediction.

    ``prediction`` maps an (n, d) point array to predicted values; the
    residual U - prediction is sampled on log-spaced radii along several
    directions, fitted globally and per direction.
    """
    r1, r2 = float(window[0]), float(window[1])
    if not (U.r_min <= r1 < r2 <= U.r_max):
        raise ValueError("window must lie inside the grid support")
    radii = np.geomspace(r1, r2, n_radii)
    dirs = _directions(U.d, n_directions)
    pts = radii[:, None, None] * dirs[None, :, :]
    flat = pts.reshape(-1, U.d)
    resid = U.eval(flat) - np.asarray(prediction(flat), float)
    resid = resid.reshape(n_radii, n_directions, U.d)
    mags = np.linalg.norm(resid, axis=-1)
    rep = fit_decay(list(zip(np.repeat(radii, n_directions),
                             resid.reshape(-1, U.d))), with_log=with_log)
    per_dir = []
    for j in range(n_directions):
        sub = fit_decay(list(zip(radii, mags[:, j])), with_log=with_log)
        # amplitude of the fitted model at the window midpoint
        rm = math.sqrt(r1 * r2)
        amp = float(np.exp(np.interp(math.log(rm), np.log(radii),
                                     np.log(mags[:, j]))))
        per_dir.append({"direction": dirs[j].tolist(),
                        "exponent": sub.exponent,
                        "log_factor": sub.log_factor,
                        "mid_amplitude": amp})
    rep.per_direction = per_dir
    return rep
