"""Command-line front end: every run writes CSV with a ``#`` metadata header.

Exit codes: 0 success, 1 a numerical check failed (the report is still
written), 2 invalid arguments.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import drift as drifts
from .errors import ConvergenceError, DomainError, ConfigurationError, InversionAccuracyError, SingularParameterError

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def count(text: str) -> int:
    """Integer that also accepts ``1e6``."""
    value = float(text)
    if value != int(value):
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    return int(value)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Output:
    """Collects named CSV tables and writes them with a shared metadata header."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.tables: list[tuple[str, list[str], list[tuple], list[str]]] = []
        self.lines: list[str] = []

    def header(self, extra: list[str]) -> str:
        params = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func", "json_config", "out", "command", "command_path", "action")}
        out = [f"# reflectdiff {__version__}", f"# command: {self.args.command_path}"]
        out += [f"# {k} = {_fmt(v)}" for k, v in params.items()]
        out += [f"# {line}" for line in extra]
        return "\n".join(out) + "\n"

    def table(self, name: str, columns: list[str], rows, notes: list[str] | None = None):
        self.tables.append((name, columns, list(rows), notes or []))

    def render(self, name, columns, rows, notes) -> str:
        buf = io.StringIO()
        buf.write(self.header(notes + self.lines))
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def flush(self, stdout) -> None:
        out_dir = getattr(self.args, "out", None)
        if out_dir:
            path = Path(out_dir)
            path.mkdir(parents=True, exist_ok=True)
            for name, columns, rows, notes in self.tables:
                (path / f"{name}.csv").write_text(self.render(name, columns, rows, notes))
            if self.lines:
                (path / "report.txt").write_text("\n".join(self.lines) + "\n")
            for line in self.lines:
                stdout.write(line + "\n")
        else:
            for name, columns, rows, notes in self.tables:
                stdout.write(self.render(name, columns, rows, notes))


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


# ---------------------------------------------------------------------------
# commands


def cmd_density(args, out: Output) -> int:
    from .closed_form import reflected_drift_density, reflected_heat_kernel

    _require(args, "beta", "t", "x0")
    if args.nz < 2 or not args.zmax > 0:
        raise UsageError("need --nz >= 2 and --zmax > 0")
    z = np.linspace(0.0, args.zmax, args.nz)
    q = reflected_drift_density(args.beta, args.t, args.x0, z)
    heat = reflected_heat_kernel(args.t, args.x0, z)
    mass = float(np.trapezoid(q, z))
    out.table("density", ["z", "density", "reflected_heat"], zip(z, q, heat), [f"trapezoid mass = {mass!r}"])
    return EXIT_OK


def cmd_bounds(args, out: Output) -> int:
    from .closed_form import optimal_bounds
    from .montecarlo import hjb_bounds

    _require(args, "kappa", "t", "y")
    x = np.linspace(0.0, args.xmax, args.nx)
    if args.y == 0:
        lower, upper = optimal_bounds(args.kappa, args.t, x, 0.0)
        source = "closed form"
    else:
        pairs = [hjb_bounds(args.kappa, args.t, float(v), args.y, h=args.h) for v in x]
        lower, upper = np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
        source = "HJB solver"
    out.table("bounds", ["x", "lower", "upper"], zip(x, lower, upper), [f"bounds source: {source}"])
    return EXIT_OK


def cmd_hjb(args, out: Output) -> int:
    from .hjb import Grid1D, extract_free_boundary, solve_hjb

    _require(args, "beta", "y", "T")
    grid = Grid1D.for_problem(args.beta, args.y, args.T, h=args.h, x_max=args.x_max, t0=args.t0)
    sol = solve_hjb(args.beta, args.y, grid, scheme=args.scheme, init=args.init, n_save=args.n_save)
    curve = extract_free_boundary(sol)
    stride = max(1, (grid.nx - 1) // args.nx_out)
    cols = np.arange(0, grid.nx, stride)
    grid_note = [f"grid: h = {grid.h!r}, dt = {grid.dt!r}, x_max = {grid.x_max!r}, t0 = {grid.t0!r}"]
    out.table(
        "w", ["t", "x", "w"], ((t, sol.x[j], sol.w[k, j]) for k, t in enumerate(sol.times) for j in cols), grid_note
    )
    out.table(
        "wx", ["t", "x", "wx"], ((t, sol.x[j], sol.wx[k, j]) for k, t in enumerate(sol.times) for j in cols), grid_note
    )
    if curve.tau is None:
        tau_line = f"tau = none (no extinction up to T = {args.T!r})" if curve.times.size else "tau = none"
    else:
        tau_line = f"tau = {curve.tau!r}"
    out.table("free_boundary", ["t", "s"], curve.samples)
    out.lines.append(tau_line)
    if curve.note:
        out.lines.append(f"note: {curve.note}")
    return EXIT_OK


def cmd_resolvent(args, out: Output) -> int:
    from .closed_form import q_kappa_explicit
    from .resolvent import bangbang_suboptimality_check, reflected_bangbang_density, resolvent_coefficients

    if args.action == "invert":
        _require(args, "beta", "y", "t", "x")
        res = reflected_bangbang_density(
            args.beta, args.y, args.t, args.x, method=args.method, terms=args.terms, tol=None, detailed=True
        )
        row = [args.x, res.value, res.error_estimate]
        cols = ["x", "density", "error_estimate"]
        status = EXIT_OK
        if args.y == 0 and args.beta >= 0:
            exact = float(q_kappa_explicit(args.beta, args.t, args.x, 0.0))
            ok = abs(res.value - exact) <= 1e-5
            cols += ["closed_form", "abs_difference"]
            row += [exact, abs(res.value - exact)]
            out.lines.append(f"{'PASS' if ok else 'FAIL'} inversion {res.value:.10f} vs closed form {exact:.10f}")
            status = EXIT_OK if ok else EXIT_NUMERIC
        out.table("resolvent_invert", cols, [row])
        return status
    if args.action == "coeffs":
        _require(args, "beta", "y", "lam")
        c = resolvent_coefficients(args.beta, args.lam, args.y)
        out.table(
            "resolvent_coeffs",
            ["beta_bar", "c1", "c2", "c3", "neumann_residual", "knot_residual"],
            [(c.beta_bar, c.c1, c.c2, c.c3, c.neumann_residual(), c.knot_residual())],
        )
        return EXIT_OK
    _require(args, "beta", "y", "t")
    rep = bangbang_suboptimality_check(args.beta, args.y, args.t, np.linspace(0.0, args.xmax, args.nx), h=args.h)
    out.table("suboptimality", ["x", "hjb", "bangbang", "gap", "tolerance"], rep.rows())
    out.lines.append(
        f"INFO max gap {float(np.max(rep.gap)):.3e}, max tolerance {float(np.max(rep.tolerance)):.3e}, "
        f"exceeds 5x tolerance: {rep.exceeds()}, agrees within tolerance: {rep.agrees()}"
    )
    return EXIT_OK


def _parse_drift(spec: str, kappa: float):
    """``zero``, ``sine``, ``const:<b>``, or ``bang:<beta>:<center>``."""
    name, *rest = spec.split(":")
    if name == "zero":
        return drifts.constant(0.0, kappa)
    if name == "sine":
        return drifts.clamped_sine(kappa)
    if name == "const":
        return drifts.constant(float(rest[0]), max(kappa, abs(float(rest[0]))))
    if name == "bang":
        return drifts.bang_bang(float(rest[0]), float(rest[1]))
    raise UsageError(f"unknown drift {spec!r}")


def cmd_verify(args, out: Output) -> int:
    from .montecarlo import verify_bounds, verify_representation

    if args.action == "bounds":
        _require(args, "kappa", "y")
        drift_list = [_parse_drift(s, args.kappa) for s in (args.drifts or ["zero", "sine", f"const:{-args.kappa}"])]
        rep = verify_bounds(args.kappa, drift_list, args.x0, args.T, args.y, args.n, args.seed, dt=args.dt)
        out.table(
            "verify_bounds",
            ["drift", "estimate", "std_error", "lower", "upper", "passed"],
            [
                (r.drift, *(("", "") if r.estimate is None else (r.estimate.mean, r.estimate.std_error)), r.lower, r.upper, r.passed)
                for r in rep.rows
            ],
        )
    else:
        _require(args, "b", "c")
        b = drifts.constant(args.b)
        c = drifts.constant(args.c)
        rep = verify_representation(b, c, args.x0, args.T, args.y, args.n, args.seed, dt=args.dt)
        out.table(
            "verify_representation",
            ["lhs", "lhs_se", "rhs", "rhs_se", "q_b", "q_bc_closed", "passed"],
            [(rep.lhs.mean, rep.lhs.std_error, rep.rhs.mean, rep.rhs.std_error, rep.q_b, rep.q_bc_closed, rep.passed)],
        )
    out.lines += [f"seed = {args.seed}", f"n = {args.n}"] + rep.lines()
    return EXIT_OK if rep.passed else EXIT_NUMERIC


def cmd_control(args, out: Output) -> int:
    from .control import ControlProblem, solve_value_ode, validate_optimality, value_closed_form

    _require(args, "f", "kappa", "lam")
    problem = getattr(ControlProblem, args.f)(args.kappa, args.lam)
    if args.action == "value":
        vf = solve_value_ode(problem, x_max=args.x_max, n=args.n_grid)
        exact = value_closed_form(args.f, args.kappa, args.lam, vf.x)
        stride = max(1, (vf.x.size - 1) // args.nx_out)
        rows = ((vf.x[i], exact[i], vf.v[i], vf.dv[i]) for i in range(0, vf.x.size, stride))
        out.table(
            "control_value",
            ["x", "v_closed_form", "v_ode", "dv_ode"],
            rows,
            [f"newton iterations = {vf.iterations}", f"max residual = {vf.residual!r}"],
        )
        return EXIT_OK
    competitors = [drifts.constant(0.0, args.kappa), drifts.constant(args.kappa, args.kappa)]
    rep = validate_optimality(problem, args.x0, competitors, n=args.n, seed=args.seed, dt=args.dt)
    out.table(
        "control_validate",
        ["control", "cost", "std_error", "horizon", "tail_bound", "value", "passed"],
        [(r.name, r.estimate.mean, r.estimate.std_error, r.horizon, r.tail_bound, rep.value, r.passed) for r in rep.rows],
    )
    out.lines += [f"seed = {args.seed}", f"n = {args.n}"] + rep.lines()
    return EXIT_OK if rep.passed else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser):
    p.add_argument("--out", help="output directory (default: CSV to standard output)")
    p.add_argument("--json-config", help="JSON file of option values; command-line flags win")


def _mc(p: argparse.ArgumentParser, n_default: int):
    p.add_argument("--n", type=count, default=n_default, help="number of paths (accepts 1e6)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--threads", type=int, help="worker threads (default from REFLECTDIFF_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reflectdiff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"reflectdiff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("density", help="closed-form density of the reflected constant-drift process")
    p.add_argument("--beta", type=float, help="constant drift (negative pulls towards 0)")
    p.add_argument("--t", type=float)
    p.add_argument("--x0", type=float)
    p.add_argument("--zmax", type=float, default=5.0)
    p.add_argument("--nz", type=int, default=200)
    _common(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("bounds", help="lower and upper density bounds over |b| <= kappa")
    p.add_argument("--kappa", type=float)
    p.add_argument("--t", type=float)
    p.add_argument("--y", type=float, default=0.0)
    p.add_argument("--xmax", type=float, default=4.0)
    p.add_argument("--nx", type=int, default=81)
    p.add_argument("--h", type=float, default=0.02, help="HJB grid spacing when y > 0")
    _common(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("hjb", help="HJB solve with nodal-curve extraction")
    p.add_argument("--beta", type=float)
    p.add_argument("--y", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--h", type=float, default=0.02)
    p.add_argument("--x-max", type=float)
    p.add_argument("--t0", type=float, default=1e-2)
    p.add_argument("--scheme", choices=["central", "godunov", "regularized"], default="central")
    p.add_argument("--init", choices=["bang-bang", "heat"], default="bang-bang")
    p.add_argument("--n-save", type=int, default=200)
    p.add_argument("--nx-out", type=int, default=200, help="approximate number of x columns written")
    _common(p)
    p.set_defaults(func=cmd_hjb)

    p = sub.add_parser("resolvent", help="resolvent coefficients and Laplace inversion")
    p.add_argument("action", choices=["invert", "coeffs", "compare"])
    p.add_argument("--beta", type=float)
    p.add_argument("--y", type=float)
    p.add_argument("--t", type=float)
    p.add_argument("--x", type=float)
    p.add_argument("--lam", "--lambda", dest="lam", type=float)
    p.add_argument("--method", choices=["gaver-stehfest", "euler"], default="gaver-stehfest")
    p.add_argument("--terms", type=int)
    p.add_argument("--xmax", type=float, default=3.0)
    p.add_argument("--nx", type=int, default=13)
    p.add_argument("--h", type=float, default=0.01)
    _common(p)
    p.set_defaults(func=cmd_resolvent)

    p = sub.add_parser("verify", help="Monte Carlo checks of the comparison theorem and perturbation identity")
    p.add_argument("action", choices=["bounds", "representation"])
    p.add_argument("--kappa", type=float)
    p.add_argument("--y", type=float, default=0.0)
    p.add_argument("--x0", type=float, default=0.5)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--b", type=float, help="constant base drift (representation)")
    p.add_argument("--c", type=float, help="constant perturbation (representation)")
    p.add_argument("--drifts", nargs="+", help="zero, sine, const:<b>, bang:<beta>:<center>")
    _mc(p, 1_000_000)
    _common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("control", help="discounted control: value function and optimality check")
    p.add_argument("action", choices=["value", "validate"])
    p.add_argument("--f", choices=["linear", "quadratic", "constant"])
    p.add_argument("--kappa", type=float)
    p.add_argument("--lam", "--lambda", dest="lam", type=float)
    p.add_argument("--x0", type=float, default=0.5)
    p.add_argument("--x-max", type=float)
    p.add_argument("--n-grid", type=int, default=8001)
    p.add_argument("--nx-out", type=int, default=400)
    _mc(p, 200_000)
    p.set_defaults(dt=1e-2)
    _common(p)
    p.set_defaults(func=cmd_control)
    return parser


def _merge_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.json_config:
        return args
    try:
        config = json.loads(Path(args.json_config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read --json-config: {exc}")
    if not isinstance(config, dict):
        parser.error("--json-config must hold a JSON object")
    # Re-parse with the file's values as defaults so explicit flags win.
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices[args.command]
    known = {a.dest for a in sp._actions}
    config = {k.replace("-", "_"): v for k, v in config.items()}
    unknown = sorted(set(config) - known)
    if unknown:
        parser.error(f"unknown keys in --json-config: {', '.join(unknown)}")
    sp.set_defaults(**config)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _merge_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.command_path = args.command + (f" {args.action}" if hasattr(args, "action") else "")
    if getattr(args, "threads", None):
        os.environ["REFLECTDIFF_THREADS"] = str(args.threads)
    out = Output(args)
    try:
        status = args.func(args, out)
    except (UsageError, DomainError, ConfigurationError) as exc:
        parser.print_usage(stderr)
        stderr.write(f"reflectdiff: error: {exc}\n")
        return EXIT_USAGE
    except (ConvergenceError, InversionAccuracyError, SingularParameterError) as exc:
        stderr.write(f"reflectdiff: numerical failure: {exc}\n")
        out.lines.append(f"FAIL {exc}")
        out.flush(stdout)
        return EXIT_NUMERIC
    out.flush(stdout)
    return status


if __name__ == "__main__":
    raise SystemExit(main())
