"""Pulse envelopes: truncated Gaussians, DRAG quadratures, adiabatic ramps.

Times are in ns and amplitudes in GHz.  Every envelope exposes ``value``,
``deriv`` and ``deriv2`` methods accepting scalars or arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("pulse envelopes are defined for t >= 0")
    return t


def _smoothstep(u):
    """Quintic ``10u³ - 15u⁴ + 6u⁵`` and its first two derivatives in ``u``."""
    s = u**3 * (10 - 15 * u + 6 * u**2)
    ds = 30 * u**2 * (1 - u) ** 2
    d2s = 60 * u * (1 - u) * (1 - 2 * u)
    return s, ds, d2s


def _cubic_step(u):
    return 3 * u**2 - 2 * u**3, 6 * u * (1 - u), 6 - 12 * u


@dataclass(frozen=True)
class TruncatedGaussian:
    """Gaussian centred in ``[0, duration]``; ``duration`` defaults to ``4 sigma``.

    With ``lifted`` the edge value is subtracted and the result rescaled so the
    envelope starts and ends at exactly zero while keeping its peak.
    """

    peak: float
    sigma: float
    duration: float | None = None
    lifted: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.duration is None:
            object.__setattr__(self, "duration", 4.0 * self.sigma)
        if not self.duration > 0:
            raise ValueError("duration must be positive")

    @property
    def _edge(self):
        return math.exp(-((0.5 * self.duration) ** 2) / (2 * self.sigma**2)) if self.lifted else 0.0

    def _parts(self, t):
        t = _check_time(t)
        x = t - 0.5 * self.duration
        g = np.exp(-(x**2) / (2 * self.sigma**2))
        inside = (t <= self.duration).astype(float)
        scale = self.peak / (1.0 - self._edge)
        return x, g, inside, scale

    def value(self, t):
        x, g, inside, scale = self._parts(t)
        return scale * (g - self._edge) * inside

    def deriv(self, t):
        x, g, inside, scale = self._parts(t)
        return -scale * x / self.sigma**2 * g * inside

    def deriv2(self, t):
        x, g, inside, scale = self._parts(t)
        return scale * (x**2 / self.sigma**4 - 1 / self.sigma**2) * g * inside

    def area(self) -> float:
        """Integral of the envelope over its support."""
        s, h = self.sigma, 0.5 * self.duration
        full = s * math.sqrt(2 * math.pi) * math.erf(h / (s * math.sqrt(2)))
        return self.peak * (full - self._edge * self.duration) / (1.0 - self._edge)


@dataclass(frozen=True)
class AdiabaticPoly:
    """``2ⁿ D0 [s(t/T) - 1/2]ⁿ`` with the quintic smoothstep ``s``.

    For even ``n`` this starts and ends at ``D0``, passes through zero at
    ``T/2``, and its first and second derivatives vanish at both ends.
    """

    base: float
    exponent: int
    duration: float

    def __post_init__(self):
        if self.exponent < 2 or self.exponent % 2:
            raise ValueError("exponent must be an even integer >= 2")
        if not self.duration > 0:
            raise ValueError("duration must be positive")

    def _parts(self, t):
        t = _check_time(t)
        u = np.clip(t / self.duration, 0.0, 1.0)
        s, ds, d2s = _smoothstep(u)
        inside = (t <= self.duration).astype(float)
        return s - 0.5, ds / self.duration, d2s / self.duration**2, inside

    def value(self, t):
        b, _, _, inside = self._parts(t)
        n = self.exponent
        return 2.0**n * self.base * b**n * inside

    def deriv(self, t):
        b, db, _, inside = self._parts(t)
        n = self.exponent
        return 2.0**n * self.base * n * b ** (n - 1) * db * inside

    def deriv2(self, t):
        b, db, d2b, inside = self._parts(t)
        n = self.exponent
        return 2.0**n * self.base * n * (
            (n - 1) * b ** (n - 2) * db**2 + b ** (n - 1) * d2b
        ) * inside


@dataclass(frozen=True)
class Constant:
    level: float

    def value(self, t):
        t = _check_time(t)
        return np.full_like(t, self.level)

    def deriv(self, t):
        return np.zeros_like(_check_time(t))

    def deriv2(self, t):
        return np.zeros_like(_check_time(t))


@dataclass(frozen=True)
class RampUp:
    """Smoothstep rise from 0 to ``target`` over ``ramp_time``.

    If ``hold`` is given, the level is kept for ``hold`` ns after the rise and
    then ramped back down symmetrically; otherwise it stays at ``target``.
    """

    target: float
    ramp_time: float
    order: int = 5
    hold: float | None = None

    def __post_init__(self):
        if not self.ramp_time > 0:
            raise ValueError("ramp_time must be positive")
        if self.order not in (3, 5):
            raise ValueError("order must be 3 (cubic) or 5 (quintic)")
        if self.hold is not None and self.hold < 0:
            raise ValueError("hold must be non-negative")

    @property
    def duration(self) -> float:
        return math.inf if self.hold is None else 2 * self.ramp_time + self.hold

    def _shape(self, t):
        t = _check_time(t)
        step = _smoothstep if self.order == 5 else _cubic_step
        r = self.ramp_time
        up = np.clip(t / r, 0.0, 1.0)
        s, ds, d2s = step(up)
        rising = (t < r).astype(float)
        ds, d2s = ds * rising / r, d2s * rising / r**2
        if self.hold is not None:
            start_down = r + self.hold
            down = np.clip((t - start_down) / r, 0.0, 1.0)
            s2, ds2, d2s2 = step(down)
            falling = ((t > start_down) & (t < start_down + r)).astype(float)
            s = s - s2
            ds = ds - ds2 * falling / r
            d2s = d2s - d2s2 * falling / r**2
        return s, ds, d2s

    def value(self, t):
        return self.target * self._shape(t)[0]

    def deriv(self, t):
        return self.target * self._shape(t)[1]

    def deriv2(self, t):
        return self.target * self._shape(t)[2]


@dataclass(frozen=True)
class Scaled:
    """``scale`` times the time derivative of ``base`` (a DRAG quadrature)."""

    base: object
    scale: float

    @property
    def duration(self):
        return getattr(self.base, "duration", math.inf)

    def value(self, t):
        return self.scale * self.base.deriv(t)

    def deriv(self, t):
        return self.scale * self.base.deriv2(t)

    def deriv2(self, t):
        raise NotImplementedError("third derivatives are not provided")


class DragPair(NamedTuple):
    in_phase: object
    quadrature: object


def evaluate(env, t):
    """Envelope value at ``t``; scalars in, scalars out."""
    out = env.value(t)
    return float(out) if np.ndim(out) == 0 else out


def derivative(env, t):
    out = env.deriv(t)
    return float(out) if np.ndim(out) == 0 else out


def drag_pair(base, anharmonicity: float) -> DragPair:
    """First-order DRAG: quadrature ``-(d/dt base) / (2π η)``, applied at phase +π/2."""
    if anharmonicity == 0:
        raise ZeroDivisionError("DRAG needs a nonzero anharmonicity")
    return DragPair(base, Scaled(base, -1.0 / (2 * math.pi * anharmonicity)))


def envelope_from_dict(data: dict):
    """Build an envelope from a ``{"kind": ..., **fields}`` mapping."""
    kinds = {
        "gaussian": TruncatedGaussian,
        "truncated-gaussian": TruncatedGaussian,
        "adiabatic-poly": AdiabaticPoly,
        "constant": Constant,
        "ramp-up": RampUp,
    }
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in kinds:
        raise ValueError(f"unknown envelope kind {kind!r}; expected one of {sorted(kinds)}")
    return kinds[kind](**data)
