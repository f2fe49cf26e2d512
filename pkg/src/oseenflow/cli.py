"""Command-line front end: verification suites, solves, comparisons, reports.

Exit codes: 0 all checks pass, 1 check failure, 2 iteration divergence,
3 iteration timeout, 64 usage error.  All numeric output is written with
17 significant digits so identical configurations regenerate byte-identical
CSV files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

USAGE_ERROR = 64

_DEFAULTS = {
    "dim": 2,
    "datum": "rotational",
    "epsilon": 0.05,
    "order": "cheap",
    "polish": "",
    "n_radial": 96,
    "n_angular": 64,
    "r_min": 0.05,
    "r_max": 400.0,
    "tol": 1e-8,
    "max_iter": 20,
    "window": "20:200",
    "threads": 0,
}


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _read_config(path: str) -> dict:
    """Plain key=value file; '#' starts a comment."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = val
    return out


def _coerce(key: str, val):
    base = _DEFAULTS.get(key)
    if isinstance(base, bool):
        return str(val).lower() in ("1", "true", "yes")
    if isinstance(base, int):
        return int(val)
    if isinstance(base, float):
        return float(val)
    return val


def _settings(args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        for k, v in _read_config(args.config).items():
            if k not in cfg:
                raise ValueError(f"unknown config key {k!r}")
            cfg[k] = _coerce(k, v)
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if not cfg["threads"]:
        cfg["threads"] = int(os.environ.get("OSEEN_THREADS", "0")) or 1
    return cfg


def _apply_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _manifest(command: str, cfg: dict, outputs: list[str],
              timings: dict) -> dict:
    snapshot = json.dumps(cfg, sort_keys=True)
    return {
        "command": command,
        "config": cfg,
        "determinism_hash": hashlib.sha256(snapshot.encode()).hexdigest(),
        "outputs": outputs,
        "timings": timings,
    }


# ---------------------------------------------------------------------------
# SVG output (no plotting dependency; trivially deterministic)


def _svg_loglog(path: Path, r, v, fit=None, title: str = "") -> None:
    import numpy as np
    r = np.asarray(r, float)
    v = np.asarray(v, float)
    keep = (r > 0) & (v > 0)
    lx, ly = np.log10(r[keep]), np.log10(v[keep])
    x0, x1 = float(lx.min()), float(lx.max())
    y0, y1 = float(ly.min()), float(ly.max())
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    w, h, m = 480, 360, 50

    def sx(x):
        return m + (x - x0) / (x1 - x0) * (w - 2 * m)

    def sy(y):
        return h - m - (y - y0) / (y1 - y0) * (h - 2 * m)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" '
             f'height="{h}" viewBox="0 0 {w} {h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<text x="{w//2}" y="20" text-anchor="middle" '
             f'font-size="13">{title}</text>',
             f'<line x1="{m}" y1="{h-m}" x2="{w-m}" y2="{h-m}" '
             f'stroke="black"/>',
             f'<line x1="{m}" y1="{m}" x2="{m}" y2="{h-m}" stroke="black"/>']
    pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(lx, ly))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="none"/>')
    for a, b in zip(lx, ly):
        parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" '
                     f'fill="steelblue"/>')
    if fit is not None:
        c0, p, logf = fit
        import numpy as np
        xs = np.linspace(x0, x1, 50)
        ln10 = np.log(10.0)
        ys = (c0 + p * xs * ln10
              + (np.log(np.maximum(xs * ln10, 1e-12)) if logf else 0.0)) / ln10
        good = (ys >= y0) & (ys <= y1)
        line = " ".join(f"{sx(a):.2f},{sy(b):.2f}"
                        for a, b in zip(xs[good], ys[good]))
        parts.append(f'<polyline points="{line}" fill="none" '
                     f'stroke="firebrick" stroke-width="1.5"/>')
    parts.append(f'<text x="{w//2}" y="{h-12}" text-anchor="middle" '
                 f'font-size="11">log10 |x|</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts))


# ---------------------------------------------------------------------------
# verify suites


def _report_lines(checks: list[tuple[str, bool, str]]) -> int:
    ok = True
    for name, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= passed
    return 0 if ok else 1


def _verify_sphere(dim: int, order: int) -> int:
    from .sphere import build_rule, verify_cancellations
    rule = build_rule(dim, max(order, 30))
    vals = verify_cancellations(rule)
    return _report_lines([(k, v <= 1e-11, f"max |integral| = {v:.3e}")
                          for k, v in vals.items()])


def _verify_kernels(dim: int) -> int:
    import numpy as np
    from .kernels import k_homog, oseen_k
    checks = []
    # Gaussian-rate envelope of the kernel split at t = 1
    r = np.linspace(2.0, 6.0, 9)
    pts = np.zeros((len(r), 3))
    pts[:, 0] = r
    diff = oseen_k(pts, 1.0) - k_homog(pts)
    env = np.log(r ** 3 * np.max(np.abs(diff), axis=(1, 2)))
    slope = np.polyfit(r ** 2, env, 1)[0]
    checks.append(("kernel_split_envelope", slope < -0.15,
                   f"envelope rate {slope:.4f} per |x|^2"))
    # homogeneity of the degree -d part
    x = np.array([[0.3, -1.2] + [0.7] * (dim - 2)])[:, :dim]
    ratio = k_homog(2 * x) * 2 ** dim / k_homog(x)
    checks.append(("k_homog_degree", np.allclose(ratio, 1.0, atol=1e-12),
                   f"scaling deviation {np.max(np.abs(ratio-1)):.2e}"))
    return _report_lines(checks)


def _verify_convolution(dim: int) -> int:
    from .convolution import conv_expansion_residual, heat_expansion_residual
    from .fields import make_datum
    import numpy as np
    checks = []
    slope = conv_expansion_residual_slope(dim)
    checks.append(("convolution_remainder_slope", abs(slope + 3.0) <= 0.25,
                   f"fitted slope {slope:.3f} (expect -3)"))
    a = make_datum("rotational2d" if dim == 2 else "rotational3d", 0.05)
    r = np.geomspace(10, 100, 10)
    x = np.zeros((len(r), dim))
    x[:, 0] = r
    res = heat_expansion_residual(a, 1.0, x)
    mags = np.linalg.norm(np.atleast_2d(res), axis=-1)
    p = np.polyfit(np.log(r), np.log(mags), 1)[0]
    checks.append(("heat_expansion_slope", abs(p + 5.0) <= 0.3,
                   f"fitted slope {p:.3f} (expect -5)"))
    return _report_lines(checks)


def conv_expansion_residual_slope(dim: int) -> float:
    import numpy as np
    from .convolution import conv_expansion_residual

    def f(y):
        r2 = np.sum(y * y, axis=-1)
        return 1.0 / (1.0 + r2)

    r = np.geomspace(10, 100, 8)
    x = np.zeros((len(r), dim))
    x[:, 0] = r
    res = np.abs([conv_expansion_residual(f, 1.0, xi, 1, dim) for xi in x])
    return float(np.polyfit(np.log(r), np.log(res), 1)[0])


def _verify_bilinear(dim: int) -> int:
    import numpy as np
    from .bilinear import TensorFieldW, apply_L
    from .kernels import oseen_f
    m = (np.arange(dim * dim, dtype=float) + 1.0).reshape(dim, dim)
    m /= np.linalg.norm(m)

    def wfn(y, s):
        s = np.asarray(s, float)
        tt = 1.0 + s
        r2 = np.sum(y * y, axis=-1)
        g = (4 * np.pi * tt) ** (-dim / 2) * np.exp(-r2 / (4 * tt))
        return g[..., None, None] * m

    w = TensorFieldW.from_function(wfn, d=dim)
    xs = np.zeros((3, dim))
    xs[:, 0] = [0.7, 8.0, 40.0]
    exact = np.einsum("njhk,hk->nj", oseen_f(xs, 2.0), m)
    got = apply_L(w, xs, 1.0, order="cheap")
    rel = np.max(np.abs(got - exact)) / np.max(np.abs(exact))
    return _report_lines([("gaussian_moment_identity", rel <= 0.05,
                           f"relative deviation {rel:.2e}")])


# ---------------------------------------------------------------------------
# solve / compare / report


def _grid_to_csv(path: Path, grid) -> None:
    import numpy as np
    vals = grid.values
    nodes = grid.nodes()
    with path.open("w") as fh:
        fh.write("r,angle," + ",".join(f"v{j}" for j in range(grid.d)) + "\n")
        for i, r in enumerate(grid.r_nodes):
            for j, th in enumerate(np.atleast_1d(grid.ang_nodes)):
                row = [_fmt(r), _fmt(float(th))]
                row += [_fmt(v) for v in vals[i, j]]
                fh.write(",".join(row) + "\n")
    del nodes


def _datum_from_summary(summary: dict):
    from .fields import make_datum
    return make_datum(summary["datum_kind"], summary["epsilon"])


def _grid_from_csv(path: Path, summary: dict):
    import numpy as np
    from .fields import GridField
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    r = np.unique(rows[:, 0])
    d = rows.shape[1] - 2
    na = len(rows) // len(r)
    vals = rows[:, 2:].reshape(len(r), na, d)
    ang = rows[:na, 1]
    a = _datum_from_summary(summary)
    return GridField(d=d, r_nodes=r, ang_nodes=ang, values=vals,
                     far_field=a, symmetry=summary.get("symmetry"),
                     kind="vector")


def _cmd_solve(args) -> int:
    cfg = _settings(args)
    _apply_threads(cfg["threads"])
    import numpy as np
    from .fields import make_datum
    from .solver import (SolverConfig, SolverDivergence, SolverTimeout,
                         picard_solve, x_norm)
    kind = {2: {"rotational": "rotational2d",
                "anisotropic": "anisotropic2d"},
            3: {"rotational": "rotational3d",
                "rotational3d": "rotational3d"}}.get(cfg["dim"], {}).get(
                    cfg["datum"], cfg["datum"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    a = make_datum(kind, cfg["epsilon"])
    scfg = SolverConfig(eps=cfg["epsilon"], tol=cfg["tol"],
                        max_iter=cfg["max_iter"], r_min=cfg["r_min"],
                        r_max=cfg["r_max"], n_radial=cfg["n_radial"],
                        n_angular=cfg["n_angular"], order=cfg["order"],
                        polish_order=cfg["polish"] or None)
    t0 = time.time()
    try:
        U, trace = picard_solve(a, scfg)
    except SolverDivergence as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 2
    except SolverTimeout as exc:
        print(f"timeout: {exc}", file=sys.stderr)
        return 3
    wall = time.time() - t0
    _grid_to_csv(out / "U.csv", U)
    with (out / "trace.csv").open("w") as fh:
        fh.write("iteration,residual,norm,ratio,seconds\n")
        for i, (res, nrm, rat, sec) in enumerate(zip(
                trace.residual, trace.norm, trace.ratio, trace.seconds)):
            fh.write(f"{i},{_fmt(res)},{_fmt(nrm)},{_fmt(rat)},"
                     f"{_fmt(sec)}\n")
    summary = {
        "datum_kind": kind, "epsilon": cfg["epsilon"], "dim": a.d,
        "symmetry": U.symmetry, "iterations": len(trace.residual),
        "final_residual": trace.residual[-1], "x_norm": float(x_norm(U)),
        "wall_seconds": wall,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    man = _manifest("solve", cfg, ["U.csv", "trace.csv", "summary.json"],
                    {"solve": wall})
    (out / "manifest.json").write_text(json.dumps(man, indent=2))
    print(f"converged in {summary['iterations']} iterations, "
          f"residual {summary['final_residual']:.3e}")
    return 0


def _cmd_compare(args) -> int:
    cfg = _settings(args)
    _apply_threads(cfg["threads"])
    import numpy as np
    from . import asymptotics
    from .bilinear import compute_A, compute_B_matrix, compute_W
    profile = Path(args.profile)
    summary = json.loads((profile.parent / "summary.json").read_text())
    U = _grid_from_csv(profile, summary)
    a = _datum_from_summary(summary)
    r1, r2 = (float(s) for s in cfg["window"].split(":"))
    if args.prediction == "2d":
        A = compute_A(a)
        fn = lambda pts: asymptotics.predict_2d(a, A, pts)
    elif args.prediction == "3d":
        ws = compute_W(U, a)
        B = compute_B_matrix(*ws)
        fn = lambda pts: asymptotics.predict_3d(a, B, pts)
    elif args.prediction == "highd":
        fn = lambda pts: asymptotics.predict_highd(a, pts)
    elif args.prediction == "none":
        fn = lambda pts: a.value(pts)
    else:
        print(f"unknown prediction {args.prediction!r}", file=sys.stderr)
        return USAGE_ERROR
    t0 = time.time()
    rep = asymptotics.compare_profiles(U, fn, window=(r1, r2))
    wall = time.time() - t0
    out = Path(args.out or profile.parent)
    out.mkdir(parents=True, exist_ok=True)
    (out / "decay_report.json").write_text(json.dumps(rep.as_dict(),
                                                      indent=2))
    radii = np.geomspace(r1, r2, 12)
    dirs = np.asarray([pd["direction"] for pd in rep.per_direction])
    pts = (radii[:, None, None] * dirs[None]).reshape(-1, U.d)
    resid = np.linalg.norm(U.eval(pts) - np.asarray(fn(pts)), axis=-1)
    _svg_loglog(out / "decay_report.svg", np.repeat(radii, len(dirs)),
                resid, title=f"residual decay, slope {rep.exponent:.2f}")
    man = _manifest("compare", {**cfg, "prediction": args.prediction},
                    ["decay_report.json", "decay_report.svg"],
                    {"compare": wall})
    (out / "compare_manifest.json").write_text(json.dumps(man, indent=2))
    print(f"exponent {rep.exponent:.3f}, log factor "
          f"{'yes' if rep.log_factor else 'no'}, "
          f"max rel dev {rep.max_rel_dev:.2e}")
    return 0


def _cmd_report(args) -> int:
    base = Path(args.dir)
    if not base.is_dir():
        print(f"no such directory: {base}", file=sys.stderr)
        return 1
    reports = sorted(base.rglob("decay_report.json"))
    summaries = sorted(base.rglob("summary.json"))
    if not reports and not summaries:
        print("no completed runs found", file=sys.stderr)
        return 1
    lines = ["# Far-field verification report", ""]
    if summaries:
        lines += ["## Solver runs", "",
                  "| run | datum | dim | iterations | residual | X-norm |",
                  "|---|---|---|---|---|---|"]
        for s in summaries:
            js = json.loads(s.read_text())
            lines.append(
                f"| {s.parent.name} | {js['datum_kind']} | {js['dim']} "
                f"| {js['iterations']} | {js['final_residual']:.3e} "
                f"| {js['x_norm']:.4f} |")
        lines.append("")
    if reports:
        lines += ["## Decay fits", "",
                  "| run | window | exponent | log factor | max rel dev |",
                  "|---|---|---|---|---|"]
        for rpt in reports:
            js = json.loads(rpt.read_text())
            w = js["window"]
            lines.append(
                f"| {rpt.parent.name} | [{w[0]:g}, {w[1]:g}] "
                f"| {js['exponent']:.3f} | {js['log_factor']} "
                f"| {js['max_rel_dev']:.3e} |")
        lines.append("")
    out = base / "report.md"
    out.write_text("\n".join(lines))
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oseenflow",
                                description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (fallback: OSEEN_THREADS)")
    sub = p.add_subparsers(dest="command")

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite",
                   choices=["kernels", "sphere", "convolution", "bilinear"])
    v.add_argument("--dim", type=int, default=None)
    v.add_argument("--order", type=int, default=30)

    s = sub.add_parser("solve", help="run the Picard iteration")
    s.add_argument("--dim", type=int, default=None)
    s.add_argument("--datum", default=None)
    s.add_argument("--epsilon", dest="epsilon", type=float, default=None)
    s.add_argument("--order", default=None)
    s.add_argument("--polish", default=None)
    s.add_argument("--n-radial", dest="n_radial", type=int, default=None)
    s.add_argument("--n-angular", dest="n_angular", type=int, default=None)
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    s.add_argument("--out", default="out/solve")

    c = sub.add_parser("compare", help="compare a profile to a prediction")
    c.add_argument("--profile", required=True, help="U.csv from a solve run")
    c.add_argument("--prediction", required=True,
                   choices=["2d", "3d", "highd", "none"])
    c.add_argument("--window", default=None, help="R1:R2")
    c.add_argument("--out", default=None)

    r = sub.add_parser("report", help="aggregate run artifacts")
    r.add_argument("--dir", default="out")
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        if args.command == "verify":
            cfg = _settings(args)
            _apply_threads(cfg["threads"])
            dim = args.dim or (3 if args.suite == "sphere" else 2)
            if args.suite == "sphere":
                return _verify_sphere(dim, args.order)
            if args.suite == "kernels":
                return _verify_kernels(dim)
            if args.suite == "convolution":
                return _verify_convolution(dim)
            return _verify_bilinear(dim)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_report(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
