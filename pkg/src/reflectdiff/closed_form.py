"""Exact transition densities for constant-drift and bang-bang diffusions.

Sign conventions used throughout:

* ``bang_bang_density`` with parameters ``(beta, center)`` is the density of

      dZ = beta * sgn(Z - center) dt + dB,

  so ``beta > 0`` pushes away from the center and ``beta < 0`` attracts.
  For ``center = 0`` this is the classical Cameron-Martin closed form

      p(x, t, z) = h(t, x, z) exp(beta (|z| - |x|) - beta^2 t / 2)
                   - beta exp(2 beta |z|) P(N(0, t) > |x| + |z| + beta t).

* ``reflected_drift_density(beta, ...)`` is the density of the reflected
  process dX = beta dt + dB + dL on [0, inf), obtained by folding the
  centered bang-bang density (X = |Y|).  ``beta`` is the signed drift
  towards +inf.

* ``q_kappa_explicit(kappa, ...)`` is the same reflected process with drift
  ``-kappa`` (pulled towards the barrier), written as a three-term formula.

Gaussian tails are evaluated through ``erfcx`` so that products like
``exp(2 beta z) * P(N > u)`` stay finite for large arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcx

from .errors import DomainError

_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class BangBangParams:
    """Drift magnitude and switching point of ``dZ = beta sgn(Z - center) dt + dB``."""

    beta: float
    center: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.beta) and np.isfinite(self.center)):
            raise DomainError("bang-bang parameters must be finite")


def _out(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("elapsed time must be positive")
    return t


def _check_nonneg(name, v):
    v = np.asarray(v, dtype=float)
    if np.any(~(v >= 0)):
        raise DomainError(f"{name} must be non-negative")
    return v


def sgn(x):
    """Sign function with ``sgn(0) = 0``."""
    return np.sign(x)


def scaled_gaussian_tail(u, log_scale=0.0):
    """Return ``exp(log_scale) * P(N(0,1) > u)`` without overflow or underflow."""
    u = np.asarray(u, dtype=float)
    log_scale = np.asarray(log_scale, dtype=float)
    u, log_scale = np.broadcast_arrays(u, log_scale)
    out = np.empty(u.shape)
    pos = u >= 0
    # erfcx(v) = exp(v^2) erfc(v); fold the Gaussian factor into the exponent.
    out[pos] = 0.5 * erfcx(u[pos] / _SQRT2) * np.exp(log_scale[pos] - 0.5 * u[pos] ** 2)
    out[~pos] = 0.5 * erfc(u[~pos] / _SQRT2) * np.exp(log_scale[~pos])
    return out if out.ndim else float(out)


def heat_kernel(t, x, z):
    """Gaussian transition density of standard Brownian motion."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    return _out(np.exp(-((x - z) ** 2) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t))


def reflected_heat_kernel(t, x, z):
    """Transition density of Brownian motion reflected at 0."""
    return _out(np.asarray(heat_kernel(t, x, z)) + np.asarray(heat_kernel(t, x, -np.asarray(z, dtype=float))))


def _centered_bang_bang(beta, x, t, z):
    ax, az = np.abs(x), np.abs(z)
    sqt = np.sqrt(t)
    gauss = np.exp(-((x - z) ** 2) / (2.0 * t) + beta * (az - ax) - 0.5 * beta**2 * t) / (_SQRT2PI * sqt)
    tail = scaled_gaussian_tail((ax + az + beta * t) / sqt, 2.0 * beta * az)
    return gauss - beta * tail


def bang_bang_density(params: BangBangParams, x, t, z):
    """Density at ``z`` after time ``t`` of the bang-bang diffusion started at ``x``.

    The process is ``dZ = beta sgn(Z - center) dt + dB``; a non-zero center is
    handled by translating the centered formula.
    """
    t = _check_time(t)
    x = np.asarray(x, dtype=float) - params.center
    z = np.asarray(z, dtype=float) - params.center
    return _out(_centered_bang_bang(float(params.beta), x, t, z))


def reflected_drift_density(beta, t, x, z):
    """Density of ``dX = beta dt + dB + dL`` on [0, inf) from ``x`` to ``z`` in time ``t``."""
    t = _check_time(t)
    x = _check_nonneg("start point", x)
    z = _check_nonneg("end point", z)
    return _out(_centered_bang_bang(float(beta), x, t, z) + _centered_bang_bang(float(beta), x, t, -z))


def q_kappa_explicit(kappa, t, x, z):
    """Density of ``dX = -kappa dt + dB + dL`` written as two Gaussian images plus a tail.

    q(t,x,z) = h(x - z - kappa t) + h(x + z + kappa t) exp(2 kappa x)
               + 2 kappa exp(-2 kappa z) P(N(0, t) > x + z - kappa t)
    """
    if not kappa >= 0:
        raise DomainError("kappa must be non-negative")
    t = _check_time(t)
    x = _check_nonneg("start point", x)
    z = _check_nonneg("end point", z)
    sqt = np.sqrt(t)
    img1 = np.exp(-((x - z - kappa * t) ** 2) / (2.0 * t))
    img2 = np.exp(-((x + z + kappa * t) ** 2) / (2.0 * t) + 2.0 * kappa * x)
    tail = scaled_gaussian_tail((x + z - kappa * t) / sqt, -2.0 * kappa * z)
    return _out((img1 + img2) / (_SQRT2PI * sqt) + 2.0 * kappa * tail)


def _attracted_value_at_center(strength, t, dist):
    # Density at the center of dZ = -strength sgn(Z - c) dt + dB from distance `dist`:
    # (2 pi t)^(-1/2) int_{dist/sqrt t}^inf z exp(-(z - strength sqrt t)^2 / 2) dz
    sqt = np.sqrt(t)
    u = (dist - strength * t) / sqt
    return np.exp(-0.5 * u**2) / (_SQRT2PI * sqt) + strength * scaled_gaussian_tail(u)


def optimal_bounds(kappa, t, x, y):
    """Lower and upper bounds on ``q_b(0, x; t, y)`` over drifts with ``|b| <= kappa``.

    Each bound folds two free-space bang-bang densities: one centered at
    ``y`` evaluated at ``y`` and one centered at ``-y`` evaluated at ``-y``.
    The upper bound attracts towards the target, the lower bound repels.
    Both are optimal when ``y = 0``.
    """
    if not kappa >= 0:
        raise DomainError("kappa must be non-negative")
    t = _check_time(t)
    x = _check_nonneg("start point", x)
    y = _check_nonneg("target point", y)
    return extremal_kernel(-kappa, t, x, y), extremal_kernel(kappa, t, x, y)


def extremal_kernel(strength, t, x, y):
    """Folded pair of bang-bang densities at their own centers ``y`` and ``-y``.

    ``strength > 0`` attracts towards the centers (upper bound),
    ``strength < 0`` repels (lower bound).  As a function of ``x`` with
    ``y = 0`` this is the exact extremal density; for ``y > 0`` it differs
    from it only through paths that feel the barrier.
    """
    t = _check_time(t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return _out(
        _attracted_value_at_center(strength, t, np.abs(x - y)) + _attracted_value_at_center(strength, t, np.abs(x + y))
    )


def grad_reflected_drift_density(beta, t, x, y):
    """Derivative in the start point ``x`` of ``reflected_drift_density(beta, t, x, y)``.

    ``t`` is the remaining time.  For ``y = 0`` the value is never positive;
    for ``y > 0`` it changes sign once in ``x``.
    """
    t = _check_time(t)
    x = _check_nonneg("start point", x)
    y = _check_nonneg("target point", y)
    a = x - y + beta * t
    lead = np.exp(-(a**2) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t**3)
    return _out(-lead * (a + np.exp(-2.0 * x * y / t) * (x + y - beta * t)))
