"""Explicit finite-difference solver for the extremal-density HJB equation.

Solves

    w_t = w_xx / 2 + beta |w_x|,   x in [0, x_max],  t in [t0, t_final],
    w_x(t, 0) = 0,  w(t, x_max) = 0,
    w(t0, x) = initial profile,

where the Dirac initial datum at ``y`` is replaced by a profile at a small
offset time ``t0``.  The default ``"bang-bang"`` profile is the folded pair
of free-space extremal bang-bang densities (exact when ``y = 0``); the
``"heat"`` profile is the reflected heat kernel, which ignores the drift on
``[0, t0]`` and so carries an ``O(sqrt(t0))`` error when ``beta != 0``.  For ``beta = +kappa`` the
solution is the largest transition density into ``y`` over drifts bounded
by ``kappa``; for ``beta = -kappa`` the smallest.  ``w(T - t, x)`` is the
density from ``(t, x)`` to ``(T, y)`` and the optimal feedback drift is
``beta * sgn(w_x)``.

Three discretizations of ``beta |w_x|`` are available:

``"central"`` (default)
    ``beta |D0 w|``.  Monotone whenever ``|beta| h <= 1`` because the
    diffusion term dominates, and second order where ``w_x`` keeps its sign.
``"godunov"``
    One-sided differences picked by the sign that realizes the sup (inf)
    over drifts in ``[-|beta|, |beta|]``.  Monotone for any ``h`` but only
    first order: it adds numerical diffusion ``|beta| h / 2``.
``"regularized"``
    ``beta sqrt((D0 w)^2 + eps^2)``, the smoothed flux used in the
    existence argument; ``eps`` defaults to ``h``.

All three are explicit and stable under the CFL bound enforced by
:class:`Grid1D`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .closed_form import extremal_kernel, reflected_heat_kernel
from .errors import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_T0 = 1e-2
DEFAULT_CFL = 0.45


@dataclass(frozen=True)
class Grid1D:
    x_max: float
    nx: int
    dt: float
    t_final: float
    t0: float = DEFAULT_T0
    cfl_safety: float = DEFAULT_CFL

    @property
    def h(self) -> float:
        return self.x_max / (self.nx - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.nx)

    @property
    def n_steps(self) -> int:
        return int(round((self.t_final - self.t0) / self.dt))

    def max_stable_dt(self, beta: float) -> float:
        h = self.h
        return self.cfl_safety * h * h / (1.0 + abs(beta) * h)

    def validate(self, beta: float, scheme: str = "central") -> None:
        if self.nx < 3:
            raise ConfigurationError("need at least 3 grid points")
        if not (self.x_max > 0 and self.dt > 0 and self.t_final > 0):
            raise ConfigurationError("x_max, dt and t_final must be positive")
        if not 0 < self.t0 < self.t_final:
            raise ConfigurationError("initialization offset must lie in (0, t_final)")
        if self.cfl_safety > 0.5:
            raise ConfigurationError("cfl_safety above 0.5 breaks monotonicity")
        if self.dt > self.max_stable_dt(beta) * (1 + 1e-12):
            raise ConfigurationError(
                f"dt={self.dt:.3e} violates the CFL bound {self.max_stable_dt(beta):.3e} for beta={beta}"
            )
        if scheme != "godunov" and abs(beta) * self.h > 1.0:
            raise ConfigurationError(f"centered fluxes need |beta| h <= 1, got {abs(beta) * self.h:.3f}")
        steps = (self.t_final - self.t0) / self.dt
        if abs(steps - round(steps)) > 1e-6:
            raise ConfigurationError("dt must divide t_final - t0")

    @classmethod
    def for_problem(
        cls,
        beta: float,
        y: float,
        t_final: float,
        *,
        h: float = 0.01,
        x_max: float | None = None,
        t0: float = DEFAULT_T0,
        cfl_safety: float = DEFAULT_CFL,
    ) -> "Grid1D":
        """Grid with spacing close to ``h`` and the largest admissible time step."""
        if x_max is None:
            x_max = max(10.0, y + 8.0 * math.sqrt(t_final))
        nx = int(round(x_max / h)) + 1
        h_actual = x_max / (nx - 1)
        dt_max = cfl_safety * h_actual**2 / (1.0 + abs(beta) * h_actual)
        n_steps = max(1, math.ceil((t_final - t0) / dt_max))
        return cls(x_max=x_max, nx=nx, dt=(t_final - t0) / n_steps, t_final=t_final, t0=t0, cfl_safety=cfl_safety)


@dataclass
class HjbSolution:
    """Stored time slices of ``w`` and of its derivative ``wx``.

    ``wx`` is the centered difference inside, exactly zero at the reflecting
    end and one-sided at ``x_max``.  ``leakage[k]`` is the mass lost through
    the Dirichlet end up to ``times[k]``.
    """

    beta: float
    y: float
    grid: Grid1D
    times: np.ndarray
    w: np.ndarray
    wx: np.ndarray
    scheme: str
    init: str = "bang-bang"
    epsilon: float | None = None
    leakage: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def w_at(self, t: float) -> np.ndarray:
        """Slice at time ``t``, linearly interpolated between stored slices."""
        if not self.times[0] - 1e-12 <= t <= self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside solved range [{self.times[0]}, {self.times[-1]}]")
        k = int(np.searchsorted(self.times, t))
        if k < len(self.times) and abs(self.times[k] - t) < 1e-12:
            return self.w[k]
        k = min(max(k, 1), len(self.times) - 1)
        a = (t - self.times[k - 1]) / (self.times[k] - self.times[k - 1])
        return (1 - a) * self.w[k - 1] + a * self.w[k]

    def value(self, t: float, x) -> np.ndarray | float:
        out = np.interp(x, self.x, self.w_at(t))
        return float(out) if np.ndim(out) == 0 else out

    def mass(self) -> np.ndarray:
        """Trapezoidal integral of ``w`` over [0, x_max] for every stored slice."""
        return np.trapezoid(self.w, dx=self.grid.h, axis=1)


INIT_PROFILES = ("bang-bang", "heat")
SCHEMES = ("central", "godunov", "regularized")


def initial_profile(grid: Grid1D, y: float, beta: float = 0.0, init: str = "bang-bang") -> np.ndarray:
    if init == "bang-bang":
        w0 = np.asarray(extremal_kernel(beta, grid.t0, grid.x, y), dtype=float).copy()
    elif init == "heat":
        w0 = np.asarray(reflected_heat_kernel(grid.t0, grid.x, y), dtype=float).copy()
    else:
        raise ConfigurationError(f"unknown initial profile {init!r}; choose from {INIT_PROFILES}")
    w0[-1] = 0.0
    return w0


def solve_hjb(
    beta: float,
    y: float,
    grid: Grid1D,
    *,
    scheme: str = "central",
    epsilon: float | None = None,
    init: str = "bang-bang",
    n_save: int = 200,
) -> HjbSolution:
    """March ``w_t = w_xx/2 + beta |w_x|`` from ``t0`` to ``t_final``.

    ``n_save + 1`` evenly spaced slices (in step count) are kept, always
    including the first and last.
    """
    if not y >= 0:
        raise ConfigurationError("target point must be non-negative")
    if y >= grid.x_max:
        raise ConfigurationError(f"target y={y} must lie inside [0, x_max={grid.x_max})")
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    grid.validate(beta, scheme)
    h, dt = grid.h, grid.dt
    n_steps = grid.n_steps
    if scheme == "regularized" and epsilon is None:
        epsilon = h
    save_steps = np.unique(np.round(np.linspace(0, n_steps, min(n_save, n_steps) + 1)).astype(int))

    w0 = initial_profile(grid, y, beta, init)
    # March the node differences d_i = w_{i+1} - w_i rather than w: the update
    # is the differenced w-scheme, so the nodal set is unchanged, but small
    # derivatives on a nearly flat profile keep full relative precision.
    # Centered and Godunov fluxes are positively homogeneous in d, which
    # permits rescaling d to avoid underflow on long horizons.
    d = np.diff(w0)
    log_scale = 0.0
    homogeneous = scheme != "regularized"
    inc = np.zeros(grid.nx)  # w increments; the Dirichlet node stays zero
    d_ext = np.empty(grid.nx)  # d_{-1} = -d_0 (mirror), d_0..d_{nx-2}
    saved_w, saved_wx, leak = [], [], []
    leaked = 0.0
    lam = dt / (h * h)
    mu = dt * abs(beta) / h
    pick = np.maximum if beta >= 0 else np.minimum

    def record(w=None):
        scale = math.exp(log_scale)
        if w is None:
            w = np.zeros(grid.nx)
            w[:-1] = -np.cumsum(d[::-1])[::-1]
            w *= scale
        saved_w.append(w)
        wx = np.empty(grid.nx)
        wx[0] = 0.0
        wx[1:-1] = (d[1:] + d[:-1]) / (2 * h)
        wx[-1] = d[-1] / h
        saved_wx.append(scale * wx)
        leak.append(leaked)

    record(w0.copy())
    k_save = 1
    for step in range(1, n_steps + 1):
        d_ext[0] = -d[0]
        d_ext[1:] = d
        fwd = d_ext[1:]
        bwd = d_ext[:-1]
        if scheme == "central":
            ham = (0.5 * mu) * np.abs(fwd + bwd)
            if beta < 0:
                ham = -ham
        elif scheme == "godunov":
            ham = pick(pick(fwd, -bwd), 0.0) * mu
        else:
            grad = 0.5 * (fwd + bwd) / h
            ham = dt * beta * np.sqrt(grad * grad + epsilon * epsilon)
        inc[:-1] = 0.5 * lam * (fwd - bwd) + ham
        leaked += -0.5 * dt * d[-1] / h * math.exp(log_scale)
        d += np.diff(inc)
        if homogeneous:
            peak = np.max(np.abs(d))
            if peak and not 1e-100 < peak < 1e100:
                d /= peak
                log_scale += math.log(peak)
        if step == save_steps[k_save]:
            record()
            k_save += 1
    times = grid.t0 + save_steps * dt
    logger.debug("HJB solve beta=%s y=%s: %d steps, leakage %.3e", beta, y, n_steps, leaked)
    return HjbSolution(
        beta=float(beta),
        y=float(y),
        grid=grid,
        times=times,
        w=np.array(saved_w),
        wx=np.array(saved_wx),
        scheme=scheme,
        init=init,
        epsilon=epsilon,
        leakage=np.array(leak),
    )


@dataclass
class FreeBoundaryCurve:
    """Interior zeros ``s(t)`` of ``w_x`` and the time ``tau`` after which none remain.

    ``tau`` is ``None`` when a sign change persists up to the horizon.
    ``multi_root_times`` lists slices with more than one interior zero.
    """

    times: np.ndarray
    s: np.ndarray
    tau: float | None
    multi_root_times: list[float] = field(default_factory=list)
    note: str = ""

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.s.tolist()))


def interior_roots(wx: np.ndarray, x: np.ndarray, exclude_cells: int = 2, floor: float = 0.0) -> list[float]:
    """Sign changes of ``wx`` away from the reflecting end, located by linear interpolation.

    Values with ``|wx| <= floor`` (underflow far from the mass, round-off on a
    flat profile) carry no sign and are skipped; a change is recorded between
    consecutive signed nodes of opposite sign.  The Dirichlet node at
    ``x_max`` is ignored.
    """
    idx = np.flatnonzero(np.abs(wx[exclude_cells:-1]) > floor) + exclude_cells
    if idx.size < 2:
        return []
    signs = np.sign(wx[idx])
    flips = np.flatnonzero(signs[1:] != signs[:-1])
    roots = []
    for k in flips:
        i, j = idx[k], idx[k + 1]
        a, b = wx[i], wx[j]
        roots.append(float(x[i] + (x[j] - x[i]) * a / (a - b)))
    return roots


def extract_free_boundary(sol: HjbSolution, exclude_cells: int = 2, noise_floor: float = 0.0) -> FreeBoundaryCurve:
    """Track the nodal curve of ``w_x`` across stored slices.

    Derivative values with ``|wx| <= noise_floor * max|wx|`` in a slice are
    treated as unsigned.  ``tau`` is the first stored time after the last
    slice that still shows a sign change.
    """
    if sol.y == 0:
        return FreeBoundaryCurve(
            times=np.zeros(0), s=np.zeros(0), tau=None, note="no interior nodal curve: target at the barrier"
        )
    wx = sol.wx
    x = sol.x
    times, s, multi = [], [], []
    last_with_root = None
    for k, t in enumerate(sol.times):
        floor = noise_floor * float(np.max(np.abs(wx[k])))
        roots = interior_roots(wx[k], x, exclude_cells, floor)
        if roots:
            last_with_root = k
            times.append(t)
            s.append(roots[0])
            if len(roots) > 1:
                multi.append(float(t))
    if last_with_root is None:
        tau, note = float(sol.times[0]), "no interior sign change in any stored slice"
    elif last_with_root == len(sol.times) - 1:
        tau, note = None, "nodal curve persists to the horizon"
    else:
        tau, note = float(sol.times[last_with_root + 1]), ""
    if multi:
        note = (note + "; " if note else "") + f"{len(multi)} slices with several interior zeros"
    return FreeBoundaryCurve(times=np.array(times), s=np.array(s), tau=tau, multi_root_times=multi, note=note)


@dataclass
class TabulatedDrift:
    """Feedback drift ``b(t, x)`` stored on the HJB grid, in forward time ``t`` of the process."""

    horizon: float
    times: np.ndarray
    x: np.ndarray
    values: np.ndarray
    kappa: float


def optimal_drift_field(sol: HjbSolution, horizon: float | None = None) -> TabulatedDrift:
    """Table of ``beta * sgn(w_x(T - t, x))`` for process times ``t`` in ``[0, T - t0]``.

    ``T`` defaults to the solved horizon ``t_final``.  Row ``k`` corresponds
    to ``times[k]``, increasing.
    """
    T = sol.grid.t_final if horizon is None else horizon
    if T > sol.grid.t_final + 1e-12:
        raise ConfigurationError("horizon exceeds the solved time range")
    remaining = sol.times[(sol.times <= T + 1e-12)]
    wx = sol.wx[: len(remaining)]
    values = sol.beta * np.sign(wx)
    order = np.argsort(T - remaining)
    return TabulatedDrift(
        horizon=T, times=(T - remaining)[order], x=sol.x.copy(), values=values[order], kappa=abs(sol.beta)
    )
