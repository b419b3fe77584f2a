"""Closed-form resonator-induced-phase (RIP) quantities of a driven coupler.

A coherent drive of amplitude ``D`` detuned by ``Δ_d = ω_C^d - ω_C`` from the
coupler displaces it by an amount that depends on the qubit occupations.  The
resulting zero-point shift ``E_zp(j_L, j_R) = D² / (Δ_d - j_L χ_L - j_R χ_R)``
supplies a dynamical ZZ term that can cancel the static one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NoCancellationPointError, NumericalFailure, SingularityError

POLE_GUARD = 1e-9
ZZ_TOLERANCE = 1e-7
FOUR_WAVE_THRESHOLD = 0.1
# Bracket upper end expressed as a steady-state photon number.
MAX_PHOTONS = 1000.0


class FourWaveWarning(UserWarning):
    """The drive-induced four-wave-mixing coefficient is not small."""


@dataclass(frozen=True)
class DriveParams:
    """Constant coupler drive; ``detuning`` is ``ω_C^d - ω_C`` in GHz."""

    amplitude: float
    detuning: float

    def __post_init__(self):
        if not np.isfinite(self.amplitude) or not np.isfinite(self.detuning):
            raise ValueError("drive parameters must be finite")
        if self.detuning == 0:
            raise ValueError("detuning must be nonzero")

    @property
    def alpha(self) -> float:
        return self.amplitude / self.detuning

    @property
    def photons(self) -> float:
        return self.alpha**2

    def check_against(self, chi_l: float, chi_r: float) -> None:
        if max(abs(chi_l), abs(chi_r)) >= abs(self.detuning):
            raise SingularityError(
                f"|chi| must stay below |detuning| = {abs(self.detuning):g} GHz"
            )


@dataclass(frozen=True)
class CancellationPoint:
    amplitude: float
    leading_order: float
    residual: float
    detuning: float

    def __float__(self):
        return self.amplitude


def _denominator(detuning, chi_l, chi_r, j_l, j_r):
    den = detuning - j_l * chi_l - j_r * chi_r
    if abs(den) < POLE_GUARD:
        raise SingularityError(
            f"E_zp pole at occupations ({j_l}, {j_r}): denominator {den:.3g} GHz"
        )
    return den


def ezp(drive: DriveParams, chi_l: float, chi_r: float, j_l: int, j_r: int) -> float:
    """Zero-point energy shift of the displaced coupler for occupations ``(j_l, j_r)``."""
    return drive.amplitude**2 / _denominator(drive.detuning, chi_l, chi_r, j_l, j_r)


def _ezp_curvature(detuning, chi_l, chi_r):
    """Coefficient ``S`` such that the dynamical ZZ equals ``S·D²``."""
    inv = {
        (jl, jr): 1.0 / _denominator(detuning, chi_l, chi_r, jl, jr)
        for jl in (0, 1) for jr in (0, 1)
    }
    return inv[1, 1] + inv[0, 0] - inv[1, 0] - inv[0, 1]


def zz_dynamic_leading(drive: DriveParams, chi_l: float, chi_r: float) -> float:
    """Leading-order dynamical ZZ ``-2 D² χ_L χ_R / Δ_d³``."""
    _denominator(drive.detuning, chi_l, chi_r, 1, 1)
    return -2.0 * drive.amplitude**2 * chi_l * chi_r / drive.detuning**3


def zz_pair(amplitude: float, detuning: float, chi_a: float, chi_b: float, zz: float) -> float:
    return amplitude**2 * _ezp_curvature(detuning, chi_a, chi_b) + zz


def zz_total(drive: DriveParams, model) -> float:
    """Residual ZZ at this drive: the E_zp combination plus the static ZZ."""
    return zz_pair(drive.amplitude, drive.detuning, model.chi_left, model.chi_right,
                   model.zz_static)


def zz_total_leading(drive: DriveParams, model) -> float:
    """Static ZZ plus the leading-order dynamical term, signed like the E_zp combination."""
    dyn = abs(zz_dynamic_leading(drive, model.chi_left, model.chi_right))
    sign = np.sign(_ezp_curvature(drive.detuning, model.chi_left, model.chi_right))
    return model.zz_static + sign * dyn


def leading_order_amplitude(detuning: float, chi_a: float, chi_b: float, zz: float) -> float:
    """Amplitude balancing ``|2 χ_a χ_b D² / Δ³| = |χ'|``; infinite if either χ vanishes.

    Only magnitudes enter: the second-order expansion fixes the size of the
    dynamical ZZ, while its sign is taken from the full E_zp combination.
    """
    if zz == 0:
        return 0.0
    if chi_a * chi_b == 0:
        return float("inf")
    return float(np.sqrt(abs(zz * detuning**3 / (2.0 * chi_a * chi_b))))


def solve_pair_cancellation(detuning: float, chi_a: float, chi_b: float, zz: float,
                            max_photons: float = MAX_PHOTONS,
                            tol: float = ZZ_TOLERANCE) -> CancellationPoint:
    """Bracketed root of the E_zp cancellation condition for one coupler.

    The E_zp denominators do not depend on ``D``, so the bracket is bounded by
    a maximal steady-state photon number instead of a pole.
    """
    seed = leading_order_amplitude(detuning, chi_a, chi_b, zz)
    if zz == 0:
        return CancellationPoint(0.0, 0.0, 0.0, detuning)
    d_max = abs(detuning) * np.sqrt(max_photons)

    def f(d):
        return zz_pair(d, detuning, chi_a, chi_b, zz)

    if np.sign(f(0.0)) == np.sign(f(d_max)):
        raise NoCancellationPointError(
            f"residual ZZ keeps the sign of the static ZZ on [0, {d_max:.3g}] GHz; "
            "check the sign of the detuning relative to the static ZZ"
        )
    # brentq combines bisection with secant/inverse-quadratic steps
    root = brentq(f, 0.0, d_max, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    res = f(root)
    if abs(res) >= tol:
        raise NumericalFailure(f"cancellation residual {res:.3g} GHz above tolerance")
    return CancellationPoint(float(root), seed, float(res), detuning)


def solve_cancellation(model, detuning: float, **kwargs) -> CancellationPoint:
    """Drive amplitude at which the dynamical ZZ cancels the static ZZ."""
    DriveParams(0.0, detuning).check_against(model.chi_left, model.chi_right)
    return solve_pair_cancellation(detuning, model.chi_left, model.chi_right,
                                   model.zz_static, **kwargs)


def stark_shifts(drive: DriveParams, model) -> tuple[float, float]:
    """Drive-induced shifts of the two qubit 0-1 frequencies."""
    e00 = ezp(drive, model.chi_left, model.chi_right, 0, 0)
    return (ezp(drive, model.chi_left, model.chi_right, 1, 0) - e00,
            ezp(drive, model.chi_left, model.chi_right, 0, 1) - e00)


def sizzle_crosscheck(model, drive: DriveParams) -> float:
    """Two-body term of ``-(α²/Δ_d)(χ_L n_L + χ_R n_R)²`` from the displaced-frame expansion.

    Raises if it disagrees with :func:`zz_dynamic_leading`.
    """
    a2 = drive.alpha**2
    value = -2.0 * a2 * model.chi_left * model.chi_right / drive.detuning
    ref = zz_dynamic_leading(drive, model.chi_left, model.chi_right)
    # absolute floor only guards against subnormal underflow at vanishing drive
    if not np.isclose(value, ref, rtol=1e-12, atol=1e-290):
        raise NumericalFailure(f"displaced-frame expansion {value} != leading order {ref}")
    return value


def four_wave_coefficient(model, drive: DriveParams) -> tuple[float, float]:
    """Coefficients ``D χ / Δ_d²`` of the drive-induced four-wave-mixing term."""
    scale = drive.amplitude / drive.detuning**2
    left, right = scale * model.chi_left, scale * model.chi_right
    big = max(abs(left), abs(right))
    if big > FOUR_WAVE_THRESHOLD:
        warnings.warn(
            f"four-wave-mixing coefficient {big:.3f} exceeds {FOUR_WAVE_THRESHOLD}",
            FourWaveWarning, stacklevel=2,
        )
    return left, right
