"""Laplace-domain solution for the reflecting bang-bang diffusion.

The process is ``dX = -beta sgn(X - y) dt + dB + dL`` on [0, inf).  Its
transition density ``q(t, x, y)`` into the switching point ``y`` has the
Laplace transform ``V(x) = int_0^inf exp(-lam t) q(t, x, y) dt``, which solves

    V''/2 + beta sgn(y - x) V' - lam V = -delta_y,   V'(0+) = 0,

and is a sum of exponentials with coefficients ``C1, C2`` on [0, y] and
``C3`` on [y, inf).  Only the target ``z = y`` has a closed form here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np

from .errors import DomainError, SingularParameterError
from .laplace import invert_laplace_detailed

_EXP_CLAMP = 700.0


def _clamped_exp(arg: float) -> float:
    return math.exp(min(max(arg, -_EXP_CLAMP), _EXP_CLAMP))


@dataclass(frozen=True)
class ResolventCoefficients:
    beta: float
    lam: float
    y: float
    beta_bar: float
    c1: float
    c2: float
    c3: float

    def neumann_residual(self) -> float:
        """Relative residual of ``V'(0+) = 0``."""
        b, bb = self.beta, self.beta_bar
        lhs = -(b + bb) * self.c1 - (b - bb) * self.c2
        scale = abs((b + bb) * self.c1) + abs((b - bb) * self.c2)
        return abs(lhs) / scale if scale else abs(lhs)

    def knot_residual(self) -> float:
        """Relative mismatch of the two branches at ``x = y``."""
        left = self.c1 * _clamped_exp(-(self.beta + self.beta_bar) * self.y) + self.c2 * _clamped_exp(
            -(self.beta - self.beta_bar) * self.y
        )
        right = self.c3 * _clamped_exp((self.beta - self.beta_bar) * self.y)
        return abs(left - right) / max(abs(left), abs(right))


def _beta_bar_parts(beta, lam, lib):
    # beta_bar - beta and beta_bar + beta without cancellation for small lam
    beta_bar = lib.sqrt(beta * beta + 2 * lam)
    if beta >= 0:
        plus = beta_bar + beta
        minus = 2 * lam / plus
    else:
        minus = beta_bar - beta
        plus = 2 * lam / minus
    return beta_bar, minus, plus


def resolvent_coefficients(beta: float, lam: float, y: float) -> ResolventCoefficients:
    """Coefficients ``C1, C2, C3`` of the piecewise-exponential resolvent."""
    if not lam > 0:
        raise DomainError("Laplace variable must be positive")
    if not y >= 0:
        raise DomainError("switching point must be non-negative")
    beta, lam, y = float(beta), float(lam), float(y)
    beta_bar, minus, plus = _beta_bar_parts(beta, lam, math)
    e_minus = _clamped_exp(minus * y)  # exp(-(beta - beta_bar) y)
    e_plus = _clamped_exp(-plus * y)  # exp(-(beta + beta_bar) y)
    den1 = plus * e_minus - beta * e_plus
    den = 2.0 * lam * e_minus - minus * beta * e_plus
    if den1 == 0.0 or den == 0.0:
        raise SingularParameterError(f"vanishing denominator at beta={beta}, lam={lam}, y={y}")
    c1 = 1.0 / den1
    c2 = plus / den
    c3 = (minus * _clamped_exp(-2.0 * beta * y) + plus * _clamped_exp(2.0 * minus * y)) / den
    return ResolventCoefficients(beta=beta, lam=lam, y=y, beta_bar=beta_bar, c1=c1, c2=c2, c3=c3)


def _resolvent(beta, lam, y, x, lib):
    # Same function as C1 e^{-(b+bb)x} + C2 e^{(bb-b)x} / C3 e^{(b-bb)x}, rescaled so
    # every exponent is non-positive.
    beta_bar, minus, plus = _beta_bar_parts(beta, lam, lib)
    den = plus - beta * lib.exp(-2 * beta_bar * y)
    if x <= y:
        return (lib.exp(-plus * x - minus * y) + plus / minus * lib.exp(-minus * (y - x))) / den
    return (minus * lib.exp(-plus * y - minus * x) + plus * lib.exp(-minus * (x - y))) / (minus * den)


def resolvent_value(coeffs: ResolventCoefficients, x):
    """Evaluate ``V_y(x)`` for the parameters stored in ``coeffs``."""
    xs = np.asarray(x, dtype=float)
    if np.any(~(xs >= 0)):
        raise DomainError("start point must be non-negative")
    out = np.array([_resolvent(coeffs.beta, coeffs.lam, coeffs.y, float(v), math) for v in xs.ravel()])
    out = out.reshape(xs.shape)
    return float(out) if out.ndim == 0 else out


def laplace_transform(beta: float, y: float, x: float):
    """Return ``lam -> V_y(x)`` accepting floats or mpmath numbers (real or complex)."""
    beta, y, x = float(beta), float(y), float(x)
    if x < 0 or y < 0:
        raise DomainError("start and switching points must be non-negative")

    def transform(lam):
        if isinstance(lam, (mp.mpf, mp.mpc)):
            return _resolvent(mp.mpf(beta), lam, mp.mpf(y), mp.mpf(x), mp)
        return _resolvent(beta, lam, y, x, math)

    return transform


def reflected_bangbang_density(
    beta: float,
    y: float,
    t: float,
    x: float,
    *,
    method: str = "gaver-stehfest",
    terms: int | None = None,
    tol: float | None = 1e-6,
    detailed: bool = False,
):
    """Density at ``y`` after time ``t`` of ``dX = -beta sgn(X - y) dt + dB + dL`` from ``x``.

    Obtained by numerically inverting the resolvent.  With ``detailed=True``
    the :class:`~reflectdiff.laplace.InversionResult` is returned instead of
    the bare value.
    """
    if not t > 0:
        raise DomainError("elapsed time must be positive")
    result = invert_laplace_detailed(laplace_transform(beta, y, x), t, method=method, terms=terms, tol=tol)
    return result if detailed else result.value


def stationary_density_at_center(beta: float, y: float) -> float:
    """Limit of ``q(t, x, y)`` as ``t -> inf`` for ``beta > 0``."""
    if not beta > 0:
        raise DomainError("a stationary law exists only for attracting drift (beta > 0)")
    return 2.0 * beta / (2.0 - math.exp(-2.0 * beta * y))


def phi_y(x, y):
    """Distance of ``|x|`` from ``y``; the Ito-Tanaka step uses this folded distance."""
    return np.abs(np.abs(x) - y)


@dataclass
class SuboptimalityReport:
    """HJB-optimal versus reflecting bang-bang densities into ``y`` on a grid of start points.

    The per-point tolerance adds the HJB discretization error, estimated by
    the change under halving of ``h``, to the Laplace-inversion error
    estimate.
    """

    beta: float
    y: float
    t: float
    x: np.ndarray
    hjb: np.ndarray
    bangbang: np.ndarray
    hjb_error: np.ndarray
    inversion_error: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.hjb - self.bangbang

    @property
    def tolerance(self) -> np.ndarray:
        return self.hjb_error + self.inversion_error

    def exceeds(self, factor: float = 5.0) -> bool:
        """True when the optimum beats bang-bang by more than ``factor`` tolerances somewhere."""
        return bool(np.any(self.gap > factor * self.tolerance))

    def agrees(self) -> bool:
        return bool(np.all(np.abs(self.gap) <= self.tolerance))

    def rows(self):
        for i in range(self.x.size):
            yield (self.x[i], self.hjb[i], self.bangbang[i], self.gap[i], self.tolerance[i])


def bangbang_suboptimality_check(
    beta: float,
    y: float,
    t: float,
    x_grid,
    *,
    h: float = 0.01,
    method: str = "gaver-stehfest",
    terms: int | None = None,
) -> SuboptimalityReport:
    """Compare the HJB extremal density with the reflecting bang-bang density at time ``t``.

    Away from ``y = 0`` the optimal drift is not bang-bang about ``y`` because
    of the barrier, so the HJB value should be strictly larger somewhere.
    """
    from .hjb import Grid1D, solve_hjb

    if not beta >= 0:
        raise DomainError("the comparison concerns the maximal density (beta >= 0)")
    xs = np.atleast_1d(np.asarray(x_grid, dtype=float))
    if np.any(~(xs >= 0)):
        raise DomainError("start points must be non-negative")
    values = {}
    for step in (2 * h, h):
        grid = Grid1D.for_problem(beta, y, t, h=step)
        values[step] = np.asarray(solve_hjb(beta, y, grid, n_save=2).value(t, xs), dtype=float)
    inv = [reflected_bangbang_density(beta, y, t, float(x), method=method, terms=terms, detailed=True) for x in xs]
    return SuboptimalityReport(
        beta=float(beta),
        y=float(y),
        t=float(t),
        x=xs,
        hjb=values[h],
        bangbang=np.array([r.value for r in inv]),
        hjb_error=np.abs(values[h] - values[2 * h]),
        inversion_error=np.array([r.error_estimate for r in inv]),
    )
