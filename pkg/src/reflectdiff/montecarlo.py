"""Monte Carlo for reflecting diffusions on [0, inf) via the Skorohod fold.

Two step rules are available.

* ``"bridge"`` (default): within a step the drift is frozen at its left
  value and the Skorohod map is applied to the free Gaussian path exactly.
  The minimum ``m`` of the free path from ``X`` to ``Z = X + b dt + dB`` is
  drawn from its Brownian-bridge law, ``m = (X + Z - sqrt((Z - X)^2 +
  2 dt E)) / 2`` with ``E`` standard exponential, and then ``dL = max(0, -m)``, ``X' = Z + dL``.  The
  martingale part of ``X`` moves by ``dB``.  There is no boundary bias
  beyond the freezing of the drift.

* ``"fold"``: Euler-Maruyama for ``dY = b(t, |Y|) sgn(Y) dt + dB`` followed
  by ``X = |Y|``.  The local-time increment is the folding correction
  ``|Y'| - |Y| - s (Y' - Y)`` and the martingale part of ``X`` moves by
  ``s dB`` with ``s = sgn(Y)`` (``+1`` at ``Y = 0``).  Crossings inside a
  step go unseen, which biases the density near 0 by ``O(sqrt(dt))``.

Both rules produce the law of the same reflected process as ``dt -> 0``.

Simulation is split into fixed-size chunks with independent seed streams
spawned from one :class:`numpy.random.SeedSequence`.  Chunks may run on a
thread pool; results are merged in chunk order, so estimates depend only on
``(seed, n, chunk_size)`` and never on the number of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from . import drift as drifts
from .closed_form import grad_reflected_drift_density, optimal_bounds, reflected_drift_density
from .drift import DriftField
from .errors import ConfigurationError, DomainError

THREADS_ENV = "REFLECTDIFF_THREADS"
DEFAULT_DT = 1e-3
DEFAULT_CHUNK = 1 << 16


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class PathBundle:
    """Terminal states and per-path accumulators of a batch of reflected paths."""

    x_terminal: np.ndarray
    local_time: np.ndarray
    log_weight: np.ndarray | None
    integral: np.ndarray | None
    n_paths: int
    dt: float
    horizon: float
    x0: float
    seed: int | None
    drift: str
    violations: int = 0
    scheme: str = "bridge"

    @property
    def weight(self) -> np.ndarray:
        if self.log_weight is None:
            raise ConfigurationError("bundle was simulated without a change-of-measure drift")
        return np.exp(self.log_weight)

    def merge(self, other: "PathBundle") -> "PathBundle":
        def cat(a, b):
            return None if a is None else np.concatenate([a, b])

        return PathBundle(
            x_terminal=np.concatenate([self.x_terminal, other.x_terminal]),
            local_time=np.concatenate([self.local_time, other.local_time]),
            log_weight=cat(self.log_weight, other.log_weight),
            integral=cat(self.integral, other.integral),
            n_paths=self.n_paths + other.n_paths,
            dt=self.dt,
            horizon=self.horizon,
            x0=self.x0,
            seed=self.seed,
            drift=self.drift,
            violations=self.violations + other.violations,
            scheme=self.scheme,
        )


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    meta: dict = field(default_factory=dict)

    def z_score(self, target: float) -> float:
        return (self.mean - target) / self.std_error if self.std_error > 0 else math.inf * np.sign(self.mean - target)


def mean_estimate(samples: np.ndarray, **meta) -> McEstimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n == 0:
        raise ConfigurationError("no samples")
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return McEstimate(mean=float(samples.mean()), std_error=se, n_paths=n, meta=meta)


def _steps(T: float, dt: float) -> tuple[int, float]:
    if not (T > 0 and dt > 0):
        raise ConfigurationError("horizon and time step must be positive")
    if dt > T:
        raise ConfigurationError(f"time step {dt} exceeds the horizon {T}")
    n = math.ceil(T / dt - 1e-9)
    return n, T / n


SCHEMES = ("bridge", "fold")
RULES = ("left", "trapezoid", "singular-end")
# Riemann zeta(1/2): the left-point sum of A s^(-1/2) over s = dt, 2 dt, ...
# overshoots the integral by zeta(1/2) A sqrt(dt).
_ZETA_HALF = -1.4603545088095868


def _node_weight(rule, k, n_steps):
    if rule == "trapezoid" and k == 0:
        return 0.5
    if rule == "singular-end" and k == n_steps - 1:
        return 1.0 - _ZETA_HALF
    return 1.0


def _simulate_chunk(b, x0, n_steps, dt, n, rng, weight_drift, integrand, rule, scheme):
    if scheme == "bridge":
        return _bridge_chunk(b, x0, n_steps, dt, n, rng, weight_drift, integrand, rule)
    y = np.full(n, float(x0))
    local = np.zeros(n)
    log_w = np.zeros(n) if weight_drift is not None else None
    acc = np.zeros(n) if integrand is not None else None
    violations = 0
    sqdt = math.sqrt(dt)
    for k in range(n_steps):
        t = k * dt
        x = np.abs(y)
        s = np.where(y >= 0, 1.0, -1.0)
        raw = b.raw(t, x)
        bx = np.clip(raw, -b.kappa, b.kappa)
        violations += int(np.count_nonzero(np.abs(raw) > b.kappa * (1 + 1e-12)))
        if acc is not None:
            weight = 1.0 if log_w is None else np.exp(log_w)
            acc += _node_weight(rule, k, n_steps) * dt * weight * integrand(t, x)
        db = rng.standard_normal(n) * sqdt
        if log_w is not None:
            c = weight_drift(t, x)
            log_w += c * s * db - 0.5 * c * c * dt
        dy = bx * np.sign(y) * dt + db
        y_new = y + dy
        local += np.abs(y_new) - x - s * dy
        y = y_new
    if acc is not None and rule == "trapezoid":
        weight = 1.0 if log_w is None else np.exp(log_w)
        acc += 0.5 * dt * weight * integrand(n_steps * dt, np.abs(y))
    return np.abs(y), local, log_w, acc, violations


def _drift_step(b, t, x, dt):
    # drift * dt with clipping and a count of bound violations
    if b.is_constant:
        return b.constant_value * dt, 0
    raw = b.raw(t, x)
    bad = int(np.count_nonzero(np.abs(raw) > b.kappa * (1 + 1e-12)))
    return np.clip(raw, -b.kappa, b.kappa) * dt, bad


def _barrier_bridge(x, z, dt, rng, local, near_cut):
    # Skorohod push at 0 for the free Gaussian step x -> z, on paths close to 0.
    low = np.minimum(x, z)
    near = np.flatnonzero(low < near_cut)
    if near.size:
        xn, zn = x[near], z[near]
        e = rng.standard_exponential(near.size)
        m = 0.5 * (xn + zn - np.sqrt((zn - xn) ** 2 + 2.0 * dt * e))
        push = np.maximum(0.0, -m)
        local[near] += push
        z[near] = zn + push
    return z


def _switch_step(beta, center, x, db, dt, rng, near_cut):
    # Exact step of dZ = -beta sgn(Z - center) dt + dB ignoring the barrier:
    # |Z - center| is Brownian motion with drift -beta reflected at 0, and
    # after touching the center the side is a fair coin.
    d = x - center
    side = np.where(d >= 0, 1.0, -1.0)
    a = np.abs(d)
    a_new = a - beta * dt + side * db
    near = np.flatnonzero(np.minimum(a, a_new) < near_cut)
    if near.size:
        an, bn = a[near], a_new[near]
        e = rng.standard_exponential(near.size)
        m = 0.5 * (an + bn - np.sqrt((bn - an) ** 2 + 2.0 * dt * e))
        touched = m <= 0
        a_new[near] = bn + np.maximum(0.0, -m)
        coin = np.where(rng.random(near.size) < 0.5, 1.0, -1.0)
        side[near] = np.where(touched, coin, side[near])
    return center + side * a_new


def _bridge_chunk(b, x0, n_steps, dt, n, rng, weight_drift, integrand, rule):
    x = np.full(n, float(x0))
    near_cut = 6.0 * math.sqrt(dt)
    local = np.zeros(n)
    log_w = np.zeros(n) if weight_drift is not None else None
    acc = np.zeros(n) if integrand is not None else None
    db = np.empty(n)
    z = np.empty(n)
    violations = 0
    sqdt = math.sqrt(dt)
    switch = b.switch if (b.switch is not None and b.switch[1] > 2.0 * near_cut) else None
    for k in range(n_steps):
        t = k * dt
        step, bad = _drift_step(b, t, x, dt)
        violations += bad
        if acc is not None:
            weight = 1.0 if log_w is None else np.exp(log_w)
            acc += _node_weight(rule, k, n_steps) * dt * weight * integrand(t, x)
        rng.standard_normal(out=db)
        db *= sqdt
        if log_w is not None:
            c = weight_drift(t, x)
            log_w += c * db - 0.5 * c * c * dt
        if switch is None:
            np.add(x, db, out=z)
            z += step
        else:
            # exact switching step away from the barrier, frozen drift next to it
            z = _switch_step(switch[0], switch[1], x, db, dt, rng, near_cut)
            close = x < near_cut
            z[close] = x[close] + step[close] + db[close]
        z = _barrier_bridge(x, z, dt, rng, local, near_cut)
        x, z = z, x
    if acc is not None and rule == "trapezoid":
        weight = 1.0 if log_w is None else np.exp(log_w)
        acc += 0.5 * dt * weight * integrand(n_steps * dt, x)
    return x, local, log_w, acc, violations


def simulate_reflected(
    b: DriftField,
    x0: float,
    T: float,
    dt: float = DEFAULT_DT,
    n: int = 100_000,
    seed: int | None = 0,
    *,
    weight_drift: DriftField | None = None,
    integrand: Callable[[float, np.ndarray], np.ndarray] | None = None,
    rule: str = "left",
    scheme: str = "bridge",
    chunk_size: int = DEFAULT_CHUNK,
    workers: int | None = None,
) -> PathBundle:
    """Simulate ``n`` paths of ``dX = b(t, X) dt + dB + dL`` from ``x0`` up to ``T``.

    ``weight_drift`` ``c`` adds the log Cameron-Martin weight
    ``int c dW - 1/2 int c^2 dt`` per path.  ``integrand`` ``g`` adds
    ``int_0^T R_t g(t, X_t) dt`` per path (``R = 1`` without ``weight_drift``)
    by the left-point or trapezoid rule.  ``rule="singular-end"`` is the
    left-point rule for integrands that blow up like ``(T - t)^(-1/2)``: the
    last node gets weight ``(1 - zeta(1/2)) dt``, which cancels the leading
    ``sqrt(dt)`` quadrature error.
    """
    if not x0 >= 0:
        raise DomainError("start point must be non-negative")
    if n < 1:
        raise ConfigurationError("need at least one path")
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown step rule {scheme!r}; choose from {SCHEMES}")
    if rule not in RULES:
        raise ConfigurationError(f"unknown quadrature rule {rule!r}")
    n_steps, dt = _steps(T, dt)
    n = int(n)
    sizes = [chunk_size] * (n // chunk_size) + ([n % chunk_size] if n % chunk_size else [])
    streams = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(i):
        rng = np.random.default_rng(streams[i])
        return _simulate_chunk(b, x0, n_steps, dt, sizes[i], rng, weight_drift, integrand, rule, scheme)

    workers = default_workers() if workers is None else workers
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]

    def cat(j):
        return None if parts[0][j] is None else np.concatenate([p[j] for p in parts])

    return PathBundle(
        x_terminal=cat(0),
        local_time=cat(1),
        log_weight=cat(2),
        integral=cat(3),
        n_paths=n,
        dt=dt,
        horizon=float(T),
        x0=float(x0),
        seed=seed,
        drift=b.description or b.kind,
        violations=sum(p[4] for p in parts),
        scheme=scheme,
    )


def silverman_bandwidth(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=float)
    std = samples.std(ddof=1)
    q75, q25 = np.percentile(samples, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    return 0.9 * spread * samples.size ** (-0.2)


_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _phi(u):
    return np.exp(-0.5 * u * u) * _INV_SQRT2PI


def estimate_density(
    bundle: PathBundle,
    z: float,
    bandwidth: str | float = "silverman",
    boundary: str = "reflection",
) -> McEstimate:
    """Kernel estimate of the terminal density at ``z >= 0`` with a standard error.

    ``boundary="reflection"`` mirrors kernel mass at 0 (consistent, but with
    an ``O(h)`` bias near 0 when the density has non-zero slope there).
    ``boundary="linear"`` uses the Gaussian local-linear boundary kernel,
    whose bias is ``O(h^2)`` up to and including ``z = 0``.
    ``boundary="split"`` averages one-sided local-linear estimates from the
    samples above and below ``z``.  It keeps the ``O(h^2)`` bias at points
    where the density has a kink, such as the center of a bang-bang drift.
    Below ``z = h`` only the upper side is used.
    """
    if bundle.n_paths < 2:
        raise ConfigurationError("density estimation needs at least two paths")
    if not z >= 0:
        raise DomainError("evaluation point must be non-negative")
    xs = bundle.x_terminal
    h = silverman_bandwidth(xs) if bandwidth == "silverman" else float(bandwidth)
    if not h > 0:
        raise ConfigurationError("bandwidth must be positive")
    u = (z - xs) / h
    p = z / h
    if boundary == "reflection":
        contrib = (_phi(u) + _phi((z + xs) / h)) / h
    elif boundary == "linear":
        a0 = ndtr(p)
        a1 = -_phi(p)
        a2 = a0 - p * _phi(p)
        contrib = (a2 - a1 * u) * _phi(u) / ((a0 * a2 - a1 * a1) * h)
    elif boundary == "split":
        # upper side: u <= 0, moments over (-inf, 0]
        phi0 = _phi(0.0)
        upper = np.where(u <= 0, (0.5 + phi0 * u) * _phi(u), 0.0) / ((0.25 - phi0 * phi0) * h)
        if p >= 1.0:
            # lower side: 0 < u <= p, moments over (0, p]
            a0 = ndtr(p) - 0.5
            a1 = phi0 - _phi(p)
            a2 = a0 - p * _phi(p)
            lower = np.where(u > 0, (a2 - a1 * u) * _phi(u), 0.0) / ((a0 * a2 - a1 * a1) * h)
            contrib = 0.5 * (upper + lower)
        else:
            contrib = upper
    else:
        raise ConfigurationError(f"unknown boundary correction {boundary!r}")
    return mean_estimate(contrib, z=z, bandwidth=h, boundary=boundary, dt=bundle.dt, scheme=bundle.scheme)


def histogram_density(bundle: PathBundle, edges: np.ndarray) -> np.ndarray:
    """Fraction of paths per bin divided by bin width."""
    counts, edges = np.histogram(bundle.x_terminal, bins=edges)
    return counts / (bundle.n_paths * np.diff(edges))


# ---------------------------------------------------------------------------
# verification reports


@dataclass
class BoundsRow:
    drift: str
    estimate: McEstimate | None
    lower: float
    upper: float
    passed: bool
    reason: str = ""


@dataclass
class BoundsReport:
    kappa: float
    x0: float
    horizon: float
    y: float
    n_paths: int
    seed: int | None
    source: str
    rows: list[BoundsRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def lines(self) -> list[str]:
        out = []
        for r in self.rows:
            verdict = "PASS" if r.passed else "FAIL"
            if r.estimate is None:
                out.append(f"{verdict} {r.drift}: {r.reason}")
            else:
                out.append(
                    f"{verdict} {r.drift}: q={r.estimate.mean:.6f} +- {r.estimate.std_error:.2e} "
                    f"in [{r.lower:.6f}, {r.upper:.6f}] ({self.source})"
                )
        return out


def hjb_bounds(kappa: float, T: float, x0: float, y: float, h: float = 0.02) -> tuple[float, float]:
    """Extremal densities ``w(T, x0)`` for ``beta = -kappa`` and ``+kappa`` from the HJB solver."""
    from .hjb import Grid1D, solve_hjb

    vals = []
    for beta in (-kappa, kappa):
        grid = Grid1D.for_problem(beta, y, T, h=h)
        vals.append(solve_hjb(beta, y, grid, n_save=1).value(T, x0))
    return vals[0], vals[1]


def verify_bounds(
    kappa: float,
    drift_list: list[DriftField],
    x0: float,
    T: float,
    y: float,
    n: int = 1_000_000,
    seed: int | None = 0,
    *,
    dt: float = DEFAULT_DT,
    n_sigma: float = 3.0,
    boundary: str | None = None,
    hjb_h: float = 0.02,
) -> BoundsReport:
    """Check ``q_{b-} <= q_b <= q_{b+}`` at ``(x0, T, y)`` for every admissible drift.

    Bounds come from the closed form when ``y = 0`` and from the HJB solver
    otherwise.  Each drift gets its own seed stream.
    """
    if y == 0:
        lower, upper = optimal_bounds(kappa, T, x0, 0.0)
        source = "closed-form bounds"
    else:
        lower, upper = hjb_bounds(kappa, T, x0, y, h=hjb_h)
        source = "HJB bounds"
    if boundary is None:
        boundary = "linear" if y == 0 else "split"
    seeds = np.random.SeedSequence(seed).generate_state(len(drift_list))
    rows = []
    for b, s in zip(drift_list, seeds):
        name = b.description or b.kind
        if b.kappa > kappa * (1 + 1e-12):
            rows.append(BoundsRow(name, None, lower, upper, False, f"rejected: declared bound {b.kappa} > {kappa}"))
            continue
        bundle = simulate_reflected(b, x0, T, dt, n, int(s))
        if bundle.violations:
            rows.append(BoundsRow(name, None, lower, upper, False, f"rejected: {bundle.violations} bound violations"))
            continue
        est = estimate_density(bundle, y, boundary=boundary)
        ok = lower - n_sigma * est.std_error <= est.mean <= upper + n_sigma * est.std_error
        rows.append(BoundsRow(name, est, lower, upper, ok))
    return BoundsReport(kappa, x0, T, y, n, seed, source, rows)


@dataclass
class RepresentationReport:
    b: float
    c: str
    x0: float
    horizon: float
    y: float
    n_paths: int
    seed: int | None
    lhs: McEstimate
    rhs: McEstimate
    q_b: float
    q_bc_closed: float | None
    weight_mean: McEstimate
    n_sigma: float = 3.0

    @property
    def combined_se(self) -> float:
        return math.hypot(self.lhs.std_error, self.rhs.std_error)

    @property
    def passed(self) -> bool:
        return abs(self.lhs.mean - self.rhs.mean) <= self.n_sigma * self.combined_se

    def lines(self) -> list[str]:
        verdict = "PASS" if self.passed else "FAIL"
        out = [
            f"{verdict} representation: lhs={self.lhs.mean:.6f} +- {self.lhs.std_error:.2e}, "
            f"rhs={self.rhs.mean:.6f} +- {self.rhs.std_error:.2e}, |diff|/se="
            f"{abs(self.lhs.mean - self.rhs.mean) / self.combined_se:.2f}"
        ]
        if self.q_bc_closed is not None:
            out.append(f"INFO closed-form q_(b+c) = {self.q_bc_closed:.6f}")
        out.append(f"INFO mean Cameron-Martin weight = {self.weight_mean.mean:.5f} +- {self.weight_mean.std_error:.1e}")
        return out


def verify_representation(
    b: DriftField,
    c: DriftField,
    x0: float,
    T: float,
    y: float,
    n: int = 1_000_000,
    seed: int | None = 0,
    *,
    dt: float = DEFAULT_DT,
    boundary: str | None = None,
    n_sigma: float = 3.0,
) -> RepresentationReport:
    """Estimate both sides of the perturbation identity

        q_{b+c}(0, x0; T, y) = q_b(0, x0; T, y) + int_0^T E[R_r c(r, X_r) d/dx q_b(r, X_r; T, y)] dr.

    The left side simulates drift ``b + c`` directly.  The right side
    simulates drift ``b`` with the Cameron-Martin weight of ``c``; ``q_b`` and
    its gradient come from the closed form, so ``b`` must be constant.
    """
    if not b.is_constant:
        raise ConfigurationError("the representation check needs a constant base drift (closed-form gradient)")
    beta = b.constant_value
    total = b + c
    seeds = np.random.SeedSequence(seed).generate_state(2)
    if boundary is None:
        boundary = "linear" if y == 0 else "split"
    lhs_bundle = simulate_reflected(total, x0, T, dt, n, int(seeds[0]))
    lhs = estimate_density(lhs_bundle, y, boundary=boundary)

    def integrand(t, x):
        return c(t, x) * grad_reflected_drift_density(beta, T - t, x, y)

    rhs_bundle = simulate_reflected(
        b, x0, T, dt, n, int(seeds[1]), weight_drift=c, integrand=integrand, rule="singular-end"
    )
    q_b = float(reflected_drift_density(beta, T, x0, y))
    rhs = mean_estimate(q_b + rhs_bundle.integral, part="rhs")
    q_bc = float(reflected_drift_density(total.constant_value, T, x0, y)) if total.is_constant else None
    return RepresentationReport(
        b=beta,
        c=c.description or c.kind,
        x0=x0,
        horizon=T,
        y=y,
        n_paths=n,
        seed=seed,
        lhs=lhs,
        rhs=rhs,
        q_b=q_b,
        q_bc_closed=q_bc,
        weight_mean=mean_estimate(rhs_bundle.weight),
        n_sigma=n_sigma,
    )


__all__ = [
    "PathBundle",
    "McEstimate",
    "mean_estimate",
    "silverman_bandwidth",
    "SCHEMES",
    "simulate_reflected",
    "estimate_density",
    "histogram_density",
    "verify_bounds",
    "verify_representation",
    "drifts",
]
