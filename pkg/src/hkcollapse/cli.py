"""Command-line front end: ``python -m hkcollapse <subcommand>``.

Exit codes: 0 all checks pass, 1 a check failed, 2 bad config or usage.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import calibration as cal
from .collapse_sweep import (DEFAULT_EPS, QuadratureSpec, RegionError, exclusion_radius,
                             fit_linear, fit_power, read_csv, summarize, sweep, write_csv)
from .forms4 import is_su2
from .gibbons_hawking import calibration_residual
from .torus_green import (ConfigError, EwaldParams, PoleConfig, demo_config, eval_h, green,
                          green_direct, laplacian_probe, regular_value, sample_points)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CHUNK = 100_000


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    poles: PoleConfig
    ewald: EwaldParams | None = None
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    eps: tuple = DEFAULT_EPS
    seed: int = 0
    output: str | None = None

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        unknown = set(data) - {"poles", "ewald", "quadrature", "eps", "seed", "output"}
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown config field")
        if "poles" not in data:
            raise ConfigError("poles: missing")
        poles = PoleConfig.from_dict(data["poles"])
        ewald = None
        if data.get("ewald") is not None:
            ew = data["ewald"]
            if not isinstance(ew, dict) or not isinstance(ew.get("alpha"), (int, float)) \
                    or ew["alpha"] <= 0:
                raise ConfigError("ewald.alpha: expected a positive number")
            ewald = EwaldParams.default(poles.spec, alpha=float(ew["alpha"]))
        q = data.get("quadrature", {})
        if not isinstance(q, dict):
            raise ConfigError("quadrature: expected an object")
        try:
            qspec = QuadratureSpec(**q)
        except TypeError as exc:
            raise ConfigError(f"quadrature: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"quadrature.{exc}") from None
        eps = data.get("eps", list(DEFAULT_EPS))
        if not isinstance(eps, list) or not eps or \
                not all(isinstance(e, (int, float)) and e > 0 for e in eps):
            raise ConfigError("eps: expected a non-empty list of positive numbers")
        eps = tuple(float(e) for e in eps)
        if any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps: must be sorted in descending order")
        bad = [e for e in eps if exclusion_radius(e) >= poles.delta0]
        if bad:
            raise ConfigError(f"eps: exclusion radius 2*eps^(2/5) >= delta0 = {poles.delta0:.4g} "
                              f"for eps = {bad[0]:g}")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed: expected an integer")
        out = data.get("output")
        if out is not None and not isinstance(out, str):
            raise ConfigError("output: expected a path string")
        return cls(poles, ewald, qspec, eps, seed, out)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(data)

    @classmethod
    def demo(cls, name):
        from importlib import resources

        if name not in ("a", "b", "c"):
            raise ConfigError(f"demo: unknown demo config {name!r}")
        text = resources.files("hkcollapse.configs").joinpath(f"demo_{name}.json").read_text()
        return cls.from_dict(json.loads(text))


def _g(x):
    return f"{x:.17g}"


def _load_run(args) -> RunConfig:
    if getattr(args, "demo", None) and getattr(args, "config", None):
        raise UsageError("give either a config path or --demo, not both")
    if getattr(args, "demo", None):
        run = RunConfig.demo(args.demo)
    elif getattr(args, "config", None):
        run = RunConfig.load(args.config)
    else:
        raise UsageError("a config path or --demo is required")
    if getattr(args, "seed", None) is not None:
        run.seed = args.seed
    return run


# --- check-calibration -------------------------------------------------------------------

def cmd_check_calibration(args, out):
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    rng = np.random.default_rng(args.seed)
    worst_ineq = -math.inf
    worst_gap = worst_wedge = 0.0
    failures = []
    done = 0
    while done < args.samples:
        n = min(CHUNK, args.samples - done)
        A = rng.normal(size=(n, 3, 4))
        t = cal.tau(A)
        en = cal.energy_density(A)
        ineq = t - en
        gap_rel = np.abs((en - t) - cal.gap_half_squares(A)) / np.maximum(en, 1.0)
        wedge = np.abs(t - cal.tau_wedge(A))
        worst_ineq = max(worst_ineq, float(ineq.max()))
        worst_gap = max(worst_gap, float(gap_rel.max()))
        worst_wedge = max(worst_wedge, float(wedge.max()))
        for name, arr, tol in (("tau <= tr(A*A)", ineq, 1e-12), ("gap expansion", gap_rel, 1e-10),
                               ("wedge oracle", wedge, 1e-12)):
            bad = np.nonzero(arr > tol)[0]
            if bad.size:
                failures.append((name, A[bad[0]], float(arr[bad[0]])))
        done += n
    print(f"samples: {args.samples}  seed: {args.seed}", file=out)
    print(f"max tau - tr(A*A): {_g(worst_ineq)}", file=out)
    print(f"max gap-expansion error (relative): {_g(worst_gap)}", file=out)
    print(f"max |tau - wedge oracle|: {_g(worst_wedge)}", file=out)

    # calibrated maps: reconstruction and the constant D
    n_rec = min(args.samples, args.reconstruct)
    params = rng.normal(size=(n_rec, 4))
    verdicts = {}
    worst_res = 0.0
    for row in params:
        A = cal.calibrated_map(*row)
        rec = cal.reconstruct(A)
        worst_res = max(worst_res, rec.residual)
        verdicts[rec.matches] = verdicts.get(rec.matches, 0) + 1
        if rec.residual > 1e-10 or not is_su2(rec.triple, tol=1e-9):
            failures.append(("reconstruction", A.a, rec.residual))
    print(f"calibrated samples: {n_rec}  max reconstruction residual: {_g(worst_res)}", file=out)
    print("D formula: " + ", ".join(f"{k}={v}" for k, v in sorted(verdicts.items())), file=out)
    if set(verdicts) <= {"proof", "both"}:
        print("D formula verdict: D = 3/tr(A*A) holds; D = sqrt(tr(A*A)/3) only where tr = 3",
              file=out)
    else:
        print("D formula verdict: inconsistent", file=out)
        failures.append(("D formula", np.zeros((3, 4)), float("nan")))
    for name, A, val in failures[:5]:
        print(f"FAIL {name}: value {_g(val)} for A =", file=out)
        print(np.array2string(np.asarray(A), precision=17), file=out)
    print("PASS" if not failures else "FAIL", file=out)
    return EXIT_OK if not failures else EXIT_FAIL


# --- green-eval --------------------------------------------------------------------------

def _parse_point(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--point: cannot parse {text!r}") from None
    if len(vals) != 3:
        raise UsageError(f"--point: expected x,y,z, got {text!r}")
    return vals


def cmd_green_eval(args, out):
    run = _load_run(args)
    cfg = run.poles
    rng = np.random.default_rng(run.seed)
    if args.point:
        X = np.array([_parse_point(p) for p in args.point])
    else:
        X = sample_points(rng, cfg.spec, args.samples, cfg.poles, 0.05)
    H = np.atleast_1d(eval_h(X, cfg, run.ewald))
    print("x,y,z,h", file=out)
    for x, h in zip(X, H):
        print(",".join(_g(v) for v in (*x, h)), file=out)
    if not args.oracle:
        return EXIT_OK
    spec = cfg.spec
    worst = 0.0
    for _ in range(args.oracle):
        x = rng.uniform(size=3) * spec.L
        p = rng.uniform(size=3) * spec.L
        worst = max(worst, abs(green(x, p, spec, run.ewald) - green_direct(x, p, spec)))
    ok = worst <= 1e-6
    print(f"oracle pairs: {args.oracle}  max |Ewald - direct|: {_g(worst)}  "
          f"{'PASS' if ok else 'FAIL'}", file=out)
    return EXIT_OK if ok else EXIT_FAIL


# --- verify-gh ---------------------------------------------------------------------------

def cmd_verify_gh(args, out):
    run = _load_run(args)
    cfg = run.poles
    rng = np.random.default_rng(run.seed)
    spec = cfg.spec
    checks = []
    if not np.any(cfg.charges):
        X = sample_points(rng, spec, 64, cfg.poles, 0.05)
        dev = float(np.max(np.abs(np.atleast_1d(eval_h(X, cfg, run.ewald)) - cfg.c0)))
        print(f"all charges vanish: h == c0 = {_g(cfg.c0)} (max deviation {_g(dev)})", file=out)
        checks.append(("h constant", dev, 1e-12))
    # harmonicity away from the poles
    X = sample_points(rng, spec, args.probes, cfg.poles, 0.25)
    lap = max(abs(laplacian_probe(lambda y: eval_h(y, cfg, run.ewald), x)) for x in X)
    checks.append(("laplacian of h", lap, 1e-3))
    # calibration identity
    X = sample_points(rng, spec, args.points, cfg.poles, 0.05)
    worst = 0.0
    for eps in run.eps[:3]:
        for x in X:
            worst = max(worst, calibration_residual(x, cfg, eps, run.ewald))
    checks.append(("calibration residual", worst, 1e-12))
    # pole asymptotics: h - q/rho -> regular value
    rho = 1e-4
    worst_pole = 0.0
    for s, q in zip(cfg.poles, cfg.charges):
        if q == 0:
            continue
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        hv = float(eval_h(s + rho * u, cfg, run.ewald))
        worst_pole = max(worst_pole, abs(hv - q / rho - regular_value(s, cfg, run.ewald)))
    checks.append(("pole asymptotics", worst_pole, 1e-2))
    failed = 0
    for name, val, tol in checks:
        ok = val <= tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {_g(val)} (tol {tol:g})", file=out)
    return EXIT_OK if not failed else EXIT_FAIL


# --- sweep / fit -------------------------------------------------------------------------

def _print_summary(summary, out):
    print("# summary", file=out)
    for key in sorted(summary):
        val = summary[key]
        print(f"{key}: {_g(val) if isinstance(val, float) else val}", file=out)


def cmd_sweep(args, out):
    run = _load_run(args)
    cfg = run.poles if args.c0 is None else run.poles.with_c0(args.c0)
    path = args.output or run.output
    if not path:
        raise UsageError("sweep needs --output or an 'output' config field")
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot write CSV ({exc.strerror})") from None
    with fh:
        rows = sweep(run.eps, cfg, run.quadrature, run.ewald)
        write_csv(rows, fh)
    summary = summarize(rows, cfg)
    print(f"wrote {len(rows)} rows to {path}", file=out)
    _print_summary(summary, out)
    print("# GH-region ratios only; corrections from the glued regions are not modelled",
          file=out)
    checks = [("ratio_E_trI", max(abs(r.ratio_E_over_trI - 1) for r in rows), 1e-6)]
    if "num_exponent" in summary:
        checks.append(("deficit exponent", abs(summary["num_exponent"] - 1.2), 0.02))
        checks.append(("deficit coefficient", abs(summary["num_coefficient"]
                                                  / summary["expected_coefficient"] - 1), 0.02))
    failed = 0
    for name, val, tol in checks:
        ok = val <= tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {_g(val)} (tol {tol:g})", file=out)
    return EXIT_OK if not failed else EXIT_FAIL


def cmd_fit(args, out):
    try:
        rows = read_csv(args.csv)
    except OSError as exc:
        raise ConfigError(f"{args.csv}: cannot read CSV ({exc.strerror})") from None
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{args.csv}: malformed CSV ({exc})") from None
    if len(rows) < 4:
        raise ConfigError(f"{args.csv}: need at least 4 rows to fit")
    run = _load_run(args)
    cfg = run.poles
    V = cfg.spec.volume
    eps = np.array([r["eps"] for r in rows])
    res = {"expected_exponent": 1.2, "expected_coefficient": 64 * math.pi ** 2 * (cfg.n + 4)}
    for tag, col in (("closed", "E_closed"), ("num", "E_num")):
        y = 3 * math.pi * V - np.array([r[col] for r in rows]) / eps
        if np.all(y > 0):
            res[f"{tag}_exponent"], res[f"{tag}_coefficient"], res[f"{tag}_r2"] = fit_power(eps, y)
    ratio = np.array([r["ratio_vol_trI"] for r in rows])
    res["vol_ratio_slope"], res["vol_ratio_intercept"] = fit_linear(eps, ratio - 1 / 3)
    _print_summary(res, out)
    return EXIT_OK


# --- entry point -------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hkcollapse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check-calibration", help="random-matrix calibration suite")
    c.add_argument("--samples", type=int, default=100_000)
    c.add_argument("--seed", type=int, default=42)
    c.add_argument("--reconstruct", type=int, default=10_000,
                   help="number of calibrated maps to reconstruct (capped by --samples)")

    def add_cfg(sp):
        sp.add_argument("config", nargs="?", help="JSON run config")
        sp.add_argument("--demo", choices=("a", "b", "c"), help="use a bundled demo config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")

    g = sub.add_parser("green-eval", help="evaluate h at points")
    add_cfg(g)
    g.add_argument("--point", action="append", help="x,y,z (repeatable)")
    g.add_argument("--samples", type=int, default=8, help="random points when no --point")
    g.add_argument("--oracle", type=int, default=0, help="also compare N random pairs "
                   "against the direct lattice sum")

    v = sub.add_parser("verify-gh", help="harmonicity, calibration and pole checks")
    add_cfg(v)
    v.add_argument("--points", type=int, default=100)
    v.add_argument("--probes", type=int, default=20)

    s = sub.add_parser("sweep", help="eps sweep to CSV")
    add_cfg(s)
    s.add_argument("--output", "-o")
    s.add_argument("--c0", type=float, default=None, help="override the constant term")

    f = sub.add_parser("fit", help="power-law fits from a sweep CSV")
    f.add_argument("csv")
    add_cfg(f)
    return p


COMMANDS = {"check-calibration": cmd_check_calibration, "green-eval": cmd_green_eval,
            "verify-gh": cmd_verify_gh, "sweep": cmd_sweep, "fit": cmd_fit}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args, out)
    except (UsageError, ConfigError, RegionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
