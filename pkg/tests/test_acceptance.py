"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line with the
measured quantities and wall time, then asserts the verdict and the runtime
budget.
"""

import io
import math
import time

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import quad

from reflectdiff import drift as drifts
from reflectdiff.cli import main as cli_main
from reflectdiff.closed_form import (
    BangBangParams,
    bang_bang_density,
    heat_kernel,
    q_kappa_explicit,
    reflected_drift_density,
)
from reflectdiff.control import (
    ControlProblem,
    solve_value_ode,
    validate_optimality,
    value_closed_form,
)
from reflectdiff.hjb import Grid1D, extract_free_boundary, solve_hjb
from reflectdiff.laplace import invert_laplace
from reflectdiff.montecarlo import verify_representation
from reflectdiff.resolvent import (
    bangbang_suboptimality_check,
    reflected_bangbang_density,
    resolvent_coefficients,
    resolvent_value,
)

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n, ok, seconds, budget, detail):
        verdict = "PASS" if ok and seconds < budget else "FAIL"
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {verdict}: {detail} [{seconds:.1f} s, budget {budget:g} s]")
        assert ok, detail
        assert seconds < budget, f"runtime {seconds:.1f} s over budget {budget:g} s"

    return emit


def _mass(density, split):
    pts = [0.0] + ([split] if split > 0 else []) + [np.inf]
    return sum(quad(density, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0] for a, b in zip(pts[:-1], pts[1:]))


def test_1_closed_form_consistency(report):
    start = time.perf_counter()
    t = np.linspace(0.1, 5.0, 5)
    x = np.linspace(0.0, 4.0, 5)
    z = np.linspace(0.0, 4.0, 5)
    T, X, Z = np.meshgrid(t, x, z, indexing="ij")
    worst = 0.0
    for kappa in (0.5, 1.0, 2.0):
        diff = np.abs(q_kappa_explicit(kappa, T, X, Z) - reflected_drift_density(-kappa, T, X, Z))
        worst = max(worst, float(np.max(diff)))
    report(1, worst <= 1e-10, time.perf_counter() - start, 1, f"max |q_kappa - q_(-kappa)| = {worst:.2e} on 5x5x5")


def test_2_normalization(report):
    start = time.perf_counter()
    worst = 0.0
    for beta in (-2.0, -1.0, 0.0, 1.0, 2.0):
        for t in (0.1, 1.0, 5.0):
            for x in (0.0, 0.5, 3.0):
                masses = [_mass(lambda z: reflected_drift_density(beta, t, x, z), x)]
                if beta >= 0:
                    masses.append(_mass(lambda z: q_kappa_explicit(beta, t, x, z), x))
                p = BangBangParams(beta)
                masses.append(
                    sum(
                        quad(lambda z: bang_bang_density(p, x, t, z), a, b, epsabs=1e-13, limit=200)[0]
                        for a, b in [(-np.inf, 0.0), (0.0, max(x, 1e-9)), (max(x, 1e-9), np.inf)]
                    )
                )
                worst = max(worst, max(abs(m - 1.0) for m in masses))
    report(2, worst <= 1e-8, time.perf_counter() - start, 10, f"max |mass - 1| = {worst:.2e} over 45 parameter sets")


def test_3_laplace_round_trip(report):
    start = time.perf_counter()
    pairs = [
        (lambda s: 1 / (s + 2), 1.0, math.exp(-2)),
        (lambda s: 1 / s**2, 3.0, 3.0),
        (lambda s: 1 / s, 0.7, 1.0),
    ]
    textbook = max(abs(invert_laplace(f, t) - exact) for f, t, exact in pairs)
    heat = abs(invert_laplace(lambda s: mp.exp(-mp.sqrt(2 * s)) / mp.sqrt(2 * s), 1.0) - heat_kernel(1.0, 1.0, 0.0))
    barrier = max(
        abs(reflected_bangbang_density(1.0, 0.0, t, x) - q_kappa_explicit(1.0, t, x, 0.0))
        for t in (0.5, 1.0, 2.0)
        for x in (0.0, 0.5, 1.5)
    )
    ok = textbook <= 1e-8 and heat <= 1e-6 and barrier <= 1e-5
    report(
        3,
        ok,
        time.perf_counter() - start,
        10,
        f"textbook {textbook:.1e}, heat pair {heat:.1e}, y=0 density at 9 points {barrier:.1e}",
    )


def test_4_resolvent_structure(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for beta, lam, y in zip(rng.uniform(-3, 3, 1000), rng.uniform(1e-3, 10, 1000), rng.uniform(0, 5, 1000)):
        c = resolvent_coefficients(beta, lam, y)
        worst = max(worst, c.neumann_residual(), c.knot_residual())
    lam = 1e-6
    target = 2.0 / (2.0 - math.exp(-2.0))
    xs = np.linspace(0.0, 4.0, 9)
    abel = float(np.max(np.abs(lam * resolvent_value(resolvent_coefficients(1.0, lam, 1.0), xs) - target)))
    ok = worst <= 1e-12 and abel <= 1e-3
    report(
        4,
        ok,
        time.perf_counter() - start,
        5,
        f"max identity residual {worst:.1e} over 1000 draws, |lam V - {target:.7f}| = {abel:.1e}",
    )


def _barrier_error(h):
    grid = Grid1D.for_problem(1.0, 0.0, 1.0, h=h, x_max=10.0)
    sol = solve_hjb(1.0, 0.0, grid)
    return float(np.max(np.abs(sol.w[-1] - q_kappa_explicit(1.0, 1.0, sol.x, 0.0))))


def test_5_hjb_against_closed_form(report):
    start = time.perf_counter()
    coarse, fine = _barrier_error(0.02), _barrier_error(0.01)
    ok = fine <= 1e-2 and coarse / fine >= 1.8
    report(
        5,
        ok,
        time.perf_counter() - start,
        120,
        f"L-inf error {coarse:.2e} (h=0.02), {fine:.2e} (h=0.01), ratio {coarse / fine:.2f}",
    )


def test_6_free_boundary(report):
    start = time.perf_counter()
    h = 0.1
    taus, problems = [], []
    for y, T in [(1.0, 3.0), (5.0, 60.0), (10.0, 320.0)]:
        grid = Grid1D.for_problem(1.0, y, T, h=h, x_max=90.0)
        sol = solve_hjb(1.0, y, grid, n_save=400)
        fb = extract_free_boundary(sol)
        if fb.tau is None:
            problems.append(f"y={y:g}: no extinction before T={T:g}")
            continue
        before = sol.times < fb.tau
        if fb.multi_root_times:
            problems.append(f"y={y:g}: {len(fb.multi_root_times)} slices with several zeros")
        if not np.array_equal(fb.times, sol.times[before]):
            problems.append(f"y={y:g}: a slice before tau lacks a zero")
        # the first two cells are the exclusion radius around the Neumann zero at x = 0
        if not np.all(sol.wx[~before][:, 2:-1] <= 0):
            problems.append(f"y={y:g}: sign change after tau")
        if abs(fb.s[0] - y) > 2 * grid.h:
            problems.append(f"y={y:g}: s(t0) = {fb.s[0]:.3f}")
        taus.append(fb.tau)
    if len(taus) == 3 and not taus[0] < taus[1] < taus[2]:
        problems.append("tau not increasing in y")
    measured = ", ".join(f"{t:.2f}" for t in taus)
    report(
        6,
        not problems,
        time.perf_counter() - start,
        300,
        f"measured tau for y = 1, 5, 10: {measured}" + ("; " + "; ".join(problems) if problems else ""),
    )


def test_7_comparison_theorem(report):
    start = time.perf_counter()
    out, err = io.StringIO(), io.StringIO()
    code = cli_main(["verify", "bounds", "--kappa", "1", "--y", "0", "--n", "1e6", "--seed", "7"], out, err)
    verdicts = [line[2:] for line in out.getvalue().splitlines() if line.startswith(("# PASS", "# FAIL"))]
    ok = code == 0 and len(verdicts) == 3 and all(v.startswith("PASS") for v in verdicts)
    report(7, ok, time.perf_counter() - start, 180, "n = 10^6, seed 7: " + " | ".join(verdicts))


def test_8_representation_formula(report):
    start = time.perf_counter()
    details, ok = [], True
    for b, c in [(-1.0, 1.0), (0.0, -1.0)]:
        rep = verify_representation(drifts.constant(b), drifts.constant(c), 0.5, 1.0, 0.0, n=200_000, seed=8)
        gap = abs(rep.lhs.mean - rep.rhs.mean) / rep.combined_se
        ok &= rep.passed
        details.append(f"b={b:g}, c={c:g}: lhs {rep.lhs.mean:.5f}, rhs {rep.rhs.mean:.5f}, {gap:.2f} combined SE")
    report(8, ok, time.perf_counter() - start, 180, "; ".join(details))


def test_9_bang_bang_suboptimality(report):
    start = time.perf_counter()
    grid = np.arange(0.0, 4.0 + 1e-9, 0.5)
    away = bangbang_suboptimality_check(1.0, 1.0, 1.0, grid)
    barrier = bangbang_suboptimality_check(1.0, 0.0, 1.0, grid)
    ok = away.exceeds(5.0) and barrier.agrees()
    ratio = float(np.max(away.gap / away.tolerance))
    report(
        9,
        ok,
        time.perf_counter() - start,
        300,
        f"y=1: max gap {float(np.max(away.gap)):.2e} = {ratio:.1f}x tolerance; y=0 agrees: {barrier.agrees()}",
    )


def test_10_control(report):
    start = time.perf_counter()
    errors = {}
    for kind in ("linear", "quadratic"):
        sol = solve_value_ode(getattr(ControlProblem, kind)(1.0, 1.0))
        half = sol.x <= sol.x[-1] / 2
        errors[kind] = float(np.max(np.abs(sol.v[half] - value_closed_form(kind, 1.0, 1.0, sol.x[half]))))
        if kind == "linear":
            v0_ode = float(sol.v[0])
    v0 = value_closed_form("linear", 1.0, 1.0, 0.0)
    problem = ControlProblem.linear(1.0, 1.0)
    rep = validate_optimality(problem, 0.5, [drifts.constant(0.0), drifts.constant(1.0)], n=100_000, seed=10)
    opt, up = rep.rows[0].estimate, rep.rows[2].estimate
    strict = up.mean - opt.mean > 3 * math.hypot(up.std_error, opt.std_error)
    ok = (
        max(errors.values()) <= 1e-4
        and abs(v0 - (math.sqrt(3) - 1) / 2) <= 1e-14
        and abs(v0_ode - v0) <= 1e-4
        and rep.passed
        and strict
    )
    costs = ", ".join(f"{r.estimate.mean:.4f}" for r in rep.rows)
    report(
        10,
        ok,
        time.perf_counter() - start,
        180,
        f"ODE error linear {errors['linear']:.1e}, quadratic {errors['quadratic']:.1e}; v(0) = {v0:.7f}; "
        f"J(u*), J(0), J(+1) = {costs} vs v(0.5) = {rep.value:.5f}",
    )
