"""Discounted infinite-horizon control of a reflecting diffusion.

Minimize ``J(u) = E_x int_0^inf exp(-lam t) f(X_t) dt`` over drifts
``|u| <= kappa`` for ``dX = u dt + dB + dL`` on [0, inf).  The value function
solves

    v''/2 + f = kappa |v'| + lam v,   v'(0+) = 0,

among functions of polynomial growth, and ``u* = -kappa sgn(v')`` is optimal.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from . import drift as drifts
from .closed_form import q_kappa_explicit
from .drift import DriftField
from .errors import ConfigurationError, ConvergenceError, DomainError
from .montecarlo import McEstimate, mean_estimate, simulate_reflected

F_KINDS = ("linear", "quadratic", "constant")
SIGN_DEADBAND = 1e-12


@dataclass(frozen=True)
class ControlProblem:
    """Control bound, discount rate and running cost ``f`` with growth ``f >= -M (1 + x^d)``."""

    kappa: float
    lam: float
    f: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    growth: tuple[float, float] = (1.0, 1.0)
    kind: str = "user"
    far_field: Callable[[float], float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError("discount rate must be positive")
        if not self.kappa >= 0:
            raise DomainError("control bound must be non-negative")

    @classmethod
    def linear(cls, kappa: float, lam: float) -> "ControlProblem":
        return cls(kappa, lam, lambda x: np.asarray(x, dtype=float), (1.0, 1.0), "linear")

    @classmethod
    def quadratic(cls, kappa: float, lam: float) -> "ControlProblem":
        return cls(kappa, lam, lambda x: np.asarray(x, dtype=float) ** 2, (1.0, 2.0), "quadratic")

    @classmethod
    def constant(cls, kappa: float, lam: float, level: float = 1.0) -> "ControlProblem":
        return cls(kappa, lam, lambda x: np.full(np.shape(x), float(level)), (abs(level), 0.0), "constant")

    def check_growth(self, x_max: float = 100.0, n: int = 1001) -> bool:
        """Sample ``f`` on [0, x_max] against the declared lower growth bound."""
        m, d = self.growth
        x = np.linspace(0.0, x_max, n)
        return bool(np.all(self.f(x) >= -m * (1.0 + x**d) - 1e-12))

    def far_field_slope(self, x: float) -> float:
        """Derivative of the polynomial particular solution at ``x``."""
        if self.far_field is not None:
            return float(self.far_field(x))
        k, lam = self.kappa, self.lam
        if self.kind == "linear":
            return 1.0 / lam
        if self.kind == "quadratic":
            return 2.0 * x / lam - 2.0 * k / lam**2
        if self.kind == "constant":
            return 0.0
        # v ~ f/lam - kappa f'/lam^2 + ... for slowly varying increasing f
        eps = 1e-4 * max(1.0, x)
        f1 = float((self.f(np.array([x + eps])) - self.f(np.array([x - eps])))[0]) / (2 * eps)
        f2 = float((self.f(np.array([x + eps])) - 2 * self.f(np.array([x])) + self.f(np.array([x - eps])))[0]) / eps**2
        return f1 / lam - k * f2 / lam**2


def _rate(kappa, lam):
    # decaying root kappa - sqrt(kappa^2 + 2 lam) < 0
    return kappa - math.sqrt(kappa * kappa + 2.0 * lam)


def value_closed_form(f_kind: str, kappa: float, lam: float, x):
    """Exact value function for ``f(x) = x`` (``"linear"``), ``x^2`` (``"quadratic"``) or ``1``."""
    if not lam > 0:
        raise DomainError("discount rate must be positive")
    if not kappa >= 0:
        raise DomainError("control bound must be non-negative")
    xs = np.asarray(x, dtype=float)
    if np.any(~(xs >= 0)):
        raise DomainError("state must be non-negative")
    r = _rate(kappa, lam)
    if f_kind == "linear":
        out = np.exp(r * xs) / (lam * (-r)) + xs / lam - kappa / lam**2
    elif f_kind == "quadratic":
        out = 2 * kappa * np.exp(r * xs) / (lam**2 * r) + xs**2 / lam - 2 * kappa * xs / lam**2 + (2 * kappa**2 + lam) / lam**3
    elif f_kind == "constant":
        out = np.full(xs.shape, 1.0 / lam)
    else:
        raise ConfigurationError(f"unknown cost {f_kind!r}; choose from {F_KINDS}")
    return float(out) if out.ndim == 0 else out


def value_closed_form_derivative(f_kind: str, kappa: float, lam: float, x):
    """``v'`` of :func:`value_closed_form`."""
    xs = np.asarray(x, dtype=float)
    r = _rate(kappa, lam)
    if f_kind == "linear":
        out = (1.0 - np.exp(r * xs)) / lam
    elif f_kind == "quadratic":
        out = 2 * kappa * np.exp(r * xs) / lam**2 + 2 * xs / lam - 2 * kappa / lam**2
    elif f_kind == "constant":
        out = np.zeros(xs.shape)
    else:
        raise ConfigurationError(f"unknown cost {f_kind!r}; choose from {F_KINDS}")
    return float(out) if out.ndim == 0 else out


@dataclass
class ValueFunction:
    x: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    kappa: float
    lam: float
    tag: str = "grid"
    iterations: int = 0
    residual: float = 0.0

    def __call__(self, x):
        return np.interp(x, self.x, self.v)

    def derivative(self, x):
        return np.interp(x, self.x, self.dv)

    def hjb_residual(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """``v''/2 + f - kappa |v'| - lam v`` at interior nodes (central differences)."""
        h = self.x[1] - self.x[0]
        v = self.v
        d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
        d1 = (v[2:] - v[:-2]) / (2 * h)
        return 0.5 * d2 + f(self.x[1:-1]) - self.kappa * np.abs(d1) - self.lam * v[1:-1]


def closed_form_value_function(f_kind: str, kappa: float, lam: float, x_grid) -> ValueFunction:
    x = np.asarray(x_grid, dtype=float)
    return ValueFunction(
        x=x,
        v=np.asarray(value_closed_form(f_kind, kappa, lam, x)),
        dv=np.asarray(value_closed_form_derivative(f_kind, kappa, lam, x)),
        kappa=kappa,
        lam=lam,
        tag=f"closed-form {f_kind}",
    )


def default_x_max(problem: ControlProblem) -> float:
    """Far enough that the decaying mode ``exp((kappa - sqrt(kappa^2 + 2 lam)) x)`` is below 1e-16."""
    return max(10.0, 37.0 / -_rate(problem.kappa, problem.lam))


def solve_value_ode(
    problem: ControlProblem,
    x_max: float | None = None,
    n: int = 8001,
    *,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> ValueFunction:
    """Solve the value-function ODE on [0, x_max] by semismooth Newton.

    Second-order central differences; ``v'(0) = 0`` through a mirror ghost
    node; at ``x_max`` the slope of the polynomial particular solution is
    imposed, which removes the growing exponential mode.  ``|v'|`` is
    linearized with the sign of the current iterate (zero inside a
    ``1e-12`` deadband).
    """
    if n < 3:
        raise ConfigurationError("need at least three grid points")
    x_max = default_x_max(problem) if x_max is None else float(x_max)
    if not x_max > 0:
        raise ConfigurationError("x_max must be positive")
    x = np.linspace(0.0, x_max, n)
    h = x[1] - x[0]
    k, lam = problem.kappa, problem.lam
    fx = np.asarray(problem.f(x), dtype=float)
    g = problem.far_field_slope(x_max)

    def slopes(v):
        d = np.empty(n)
        d[0] = 0.0
        d[1:-1] = (v[2:] - v[:-2]) / (2 * h)
        d[-1] = g
        return d

    def residual(v):
        r = np.empty(n)
        r[0] = (v[1] - v[0]) / h**2 + fx[0] - lam * v[0]
        r[1:-1] = 0.5 * (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2 + fx[1:-1] - k * np.abs(slopes(v)[1:-1]) - lam * v[1:-1]
        r[-1] = (v[-2] - v[-1] + h * g) / h**2 + fx[-1] - k * abs(g) - lam * v[-1]
        return r

    def jacobian(v):
        s = slopes(v)
        sg = np.where(np.abs(s) > SIGN_DEADBAND, np.sign(s), 0.0)
        ab = np.zeros((3, n))  # rows: super, main, sub
        ab[1, :] = -1.0 / h**2 - lam
        ab[0, 1] = 1.0 / h**2
        ab[2, n - 2] = 1.0 / h**2
        ab[0, 2:] = 0.5 / h**2 - k * sg[1:-1] / (2 * h)
        ab[2, :-2] = 0.5 / h**2 + k * sg[1:-1] / (2 * h)
        return ab

    v = fx / lam
    res = residual(v)
    scale = max(1.0, float(np.max(np.abs(fx))))
    for it in range(1, max_iter + 1):
        step = solve_banded((1, 1), jacobian(v), -res)
        norm0 = np.max(np.abs(res))
        damp = 1.0
        while True:
            trial = v + damp * step
            res_t = residual(trial)
            if np.max(np.abs(res_t)) <= (1 - 1e-4 * damp) * norm0 or damp < 1e-6:
                break
            damp *= 0.5
        v, res = trial, res_t
        if np.max(np.abs(res)) <= tol * scale:
            break
    else:
        raise ConvergenceError("value-function Newton iteration did not converge", max_iter, float(np.max(np.abs(res))))
    dv = slopes(v)
    one_sided = (v[-1] - v[-2]) / h
    if abs(one_sided - g) > 1e-3 * max(1.0, abs(g)) + 10 * h * max(1.0, abs(g)):
        warnings.warn(f"far-field slope mismatch at x_max: {one_sided:.3e} vs {g:.3e}", RuntimeWarning, stacklevel=2)
    return ValueFunction(
        x=x, v=v, dv=dv, kappa=k, lam=lam, tag=f"ode {problem.kind}", iterations=it, residual=float(np.max(np.abs(res)))
    )


def optimal_feedback(value: ValueFunction, kappa: float | None = None) -> DriftField:
    """``u*(x) = -kappa sgn(v'(x))`` with ``sgn(0) = 0``."""
    kappa = value.kappa if kappa is None else float(kappa)
    scale = max(1.0, float(np.max(np.abs(value.dv))))

    def u(x):
        d = value.derivative(x)
        return -kappa * np.where(np.abs(d) > SIGN_DEADBAND * scale, np.sign(d), 0.0)

    return drifts.feedback(u, kappa, description=f"u* = -{kappa:g} sgn(v') [{value.tag}]")


def optimal_process_density(kappa: float, t, x, z):
    """Transition density of the optimally controlled process (drift ``-kappa``)."""
    return q_kappa_explicit(kappa, t, x, z)


@dataclass
class CostRow:
    name: str
    estimate: McEstimate | None
    horizon: float
    tail_bound: float
    passed: bool
    note: str = ""


@dataclass
class OptimalityReport:
    kappa: float
    lam: float
    x0: float
    value: float
    n_paths: int
    seed: int | None
    rows: list[CostRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def optimal(self) -> CostRow:
        return self.rows[0]

    def lines(self) -> list[str]:
        out = []
        for r in self.rows:
            verdict = "PASS" if r.passed else "FAIL"
            if r.estimate is None:
                out.append(f"{verdict} {r.name}: {r.note}")
            else:
                out.append(
                    f"{verdict} {r.name}: J={r.estimate.mean:.6f} +- {r.estimate.std_error:.2e} "
                    f"(T={r.horizon:g}, tail<={r.tail_bound:.1e}) vs v(x0)={self.value:.6f} {r.note}".rstrip()
                )
        return out


def discounted_cost(
    problem: ControlProblem,
    u: DriftField,
    x0: float,
    n: int,
    seed: int | None,
    *,
    dt: float = 1e-2,
    horizon: float | None = None,
) -> tuple[McEstimate, float, float]:
    """MC estimate of the discounted cost truncated at a horizon, with the tail bound used.

    The horizon is chosen so that the tail bound
    ``M E[1 + X_T^d] exp(-lam T) / lam`` is below a tenth of the standard
    error.  A pilot run with a tenth of the paths at ``T = 10 / lam`` sets
    the first guess; the horizon is extended until the bound holds on the
    full run.  Time integration is the trapezoid rule.
    """
    lam = problem.lam
    m, d = problem.growth

    def integrand(t, x):
        return math.exp(-lam * t) * problem.f(x)

    def run(T, paths):
        bundle = simulate_reflected(u, x0, T, dt, paths, seed, integrand=integrand, rule="trapezoid")
        est = mean_estimate(bundle.integral, horizon=T, dt=bundle.dt)
        tail = m * float(np.mean(1.0 + bundle.x_terminal**d)) * math.exp(-lam * T) / lam
        return est, tail

    if horizon is not None:
        est, tail = run(float(horizon), n)
        return est, float(horizon), tail
    T = 10.0 / lam
    pilot_n = max(2, n // 10)
    est, tail = run(T, pilot_n)
    target = 0.05 * est.std_error * math.sqrt(pilot_n / n)
    while True:
        if tail > target:
            # the tail bound decays roughly like exp(-lam T)
            T = math.ceil(T + math.log(tail / target) / lam)
        est, tail = run(T, n)
        if tail < 0.1 * est.std_error:
            return est, T, tail
        target = 0.05 * est.std_error


def validate_optimality(
    problem: ControlProblem,
    x0: float,
    competitors: list[DriftField],
    *,
    value: ValueFunction | None = None,
    n: int = 200_000,
    seed: int | None = 0,
    dt: float = 1e-2,
    n_sigma: float = 3.0,
) -> OptimalityReport:
    """Compare ``J(u*)`` with ``v(x0)`` and check ``J(u) >= v(x0) - 3 sigma`` for competitors."""
    if not x0 >= 0:
        raise DomainError("start point must be non-negative")
    exact = value is None and problem.kind in F_KINDS
    if value is None:
        if exact:
            grid = np.linspace(0.0, default_x_max(problem), 8001)
            value = closed_form_value_function(problem.kind, problem.kappa, problem.lam, grid)
        else:
            value = solve_value_ode(problem)
    v0 = value_closed_form(problem.kind, problem.kappa, problem.lam, x0) if exact else float(value(x0))
    u_star = optimal_feedback(value, problem.kappa)
    seeds = np.random.SeedSequence(seed).generate_state(len(competitors) + 1)
    rows = []
    est, T, tail = discounted_cost(problem, u_star, x0, n, int(seeds[0]), dt=dt)
    ok = abs(est.mean - v0) <= n_sigma * est.std_error + tail
    rows.append(CostRow(u_star.description, est, T, tail, ok, "(optimal)"))
    for u, s in zip(competitors, seeds[1:]):
        name = u.description or u.kind
        if u.kappa > problem.kappa * (1 + 1e-12):
            rows.append(CostRow(name, None, 0.0, 0.0, False, f"rejected: declared bound {u.kappa} > {problem.kappa}"))
            continue
        c_est, c_T, c_tail = discounted_cost(problem, u, x0, n, int(s), dt=dt)
        ok = c_est.mean >= v0 - n_sigma * c_est.std_error
        gap = (c_est.mean - est.mean) / math.hypot(c_est.std_error, est.std_error)
        rows.append(CostRow(name, c_est, c_T, c_tail, ok, f"(J - J(u*) = {gap:.1f} combined SE)"))
    return OptimalityReport(problem.kappa, problem.lam, x0, v0, n, seed, rows)
