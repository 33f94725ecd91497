"""Bounded drift fields ``b(t, x)`` on ``[0, inf) x [0, inf)``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError

Evaluator = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DriftField:
    """A drift with a declared bound ``kappa``.

    Calling the field clips values to ``[-kappa, kappa]``; :meth:`raw`
    returns the unclipped values so simulators can count violations.
    """

    kind: str
    kappa: float
    evaluator: Evaluator = field(repr=False)
    description: str = ""
    switch: tuple[float, float] | None = None  # (beta, center) for bang-bang fields

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ConfigurationError("drift bound must be non-negative")

    def raw(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.evaluator(t, x), dtype=float), np.shape(x))

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.clip(self.raw(t, x), -self.kappa, self.kappa)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def constant_value(self) -> float:
        if not self.is_constant:
            raise ConfigurationError(f"{self.kind} drift is not constant")
        return float(self.evaluator(0.0, np.zeros(1))[0])

    def __add__(self, other: "DriftField") -> "DriftField":
        if self.is_constant and other.is_constant:
            return constant(self.constant_value + other.constant_value)
        return DriftField(
            kind="user",
            kappa=self.kappa + other.kappa,
            evaluator=lambda t, x: self(t, x) + other(t, x),
            description=f"({self.description}) + ({other.description})",
        )


def constant(b: float, kappa: float | None = None) -> DriftField:
    b = float(b)
    return DriftField(
        kind="constant",
        kappa=abs(b) if kappa is None else float(kappa),
        evaluator=lambda t, x: np.full(np.shape(x), b),
        description=f"b = {b:g}",
    )


def bang_bang(beta: float, center: float) -> DriftField:
    """``b(x) = -beta sgn(x - center)``: attracts to ``center`` when ``beta > 0``."""
    beta, center = float(beta), float(center)
    return DriftField(
        kind="bang-bang",
        kappa=abs(beta),
        evaluator=lambda t, x: -beta * np.sign(np.asarray(x) - center),
        description=f"b = -{beta:g} sgn(x - {center:g})",
        switch=(beta, center),
    )


def clamped_sine(kappa: float, amplitude: float = 1.5, wavenumber: float = 3.0, frequency: float = 1.0) -> DriftField:
    """A rough admissible competitor: ``clip(amplitude sin(wavenumber x + frequency t), -kappa, kappa)``."""
    kappa = float(kappa)
    return DriftField(
        kind="user",
        kappa=kappa,
        evaluator=lambda t, x: np.clip(amplitude * np.sin(wavenumber * np.asarray(x) + frequency * t), -kappa, kappa),
        description=f"clip({amplitude:g} sin({wavenumber:g} x + {frequency:g} t), +-{kappa:g})",
    )


def tabulated(
    times: np.ndarray, x: np.ndarray, values: np.ndarray, kappa: float, *, kind: str = "user-table", horizon=None
) -> DriftField:
    """Piecewise-constant lookup: latest row with ``times[k] <= t``, nearest ``x`` node.

    Beyond ``horizon`` (if given) the drift is zero.
    """
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (times.size, x.size):
        raise ConfigurationError("table shape must be (len(times), len(x))")
    h = x[1] - x[0]

    def evaluate(t, xs):
        if horizon is not None and t >= horizon:
            return np.zeros(np.shape(xs))
        k = max(int(np.searchsorted(times, t, side="right")) - 1, 0)
        j = np.clip(np.rint((np.asarray(xs) - x[0]) / h).astype(int), 0, x.size - 1)
        return values[k, j]

    return DriftField(kind=kind, kappa=float(kappa), evaluator=evaluate, description=f"{kind} {values.shape}")


def from_hjb(table) -> DriftField:
    """Drift from :func:`reflectdiff.hjb.optimal_drift_field`, zero after its horizon."""
    return tabulated(table.times, table.x, table.values, table.kappa, kind="hjb-table", horizon=table.horizon)


def feedback(func: Callable[[np.ndarray], np.ndarray], kappa: float, description: str = "") -> DriftField:
    """Stationary feedback ``b(t, x) = func(x)``."""
    return DriftField(kind="user", kappa=float(kappa), evaluator=lambda t, x: func(np.asarray(x)), description=description)
