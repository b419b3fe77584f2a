"""Cross-resonance CNOT and adiabatic CZ gates on top of the ZZ-free working point."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from .dynamics import (
    COMPUTATIONAL, FrameSpec, KerrSystem, NoiseSpec, QubitTone, ResonatorDrive, SimConfig,
    exact_stark_shifts, propagate_channel, propagate_subspace_map, solve_exact_cancellation,
)
from .effective import DriveParams
from .errors import CalibrationError, DegenerateDriveError
from .fidelity import (
    CNOT_ONE, CNOT_ZERO, CZ, average_gate_fidelity, channel_average_fidelity, dressed_target,
)
from .pulses import AdiabaticPoly, TruncatedGaussian, drag_pair

TWO_PI = 2.0 * math.pi
FLAVORS = {"zero": CNOT_ZERO, "one": CNOT_ONE}
CR_SIM = SimConfig(dt=0.05, qubit_levels=3, res_dim=6)
CZ_SIM = SimConfig(dt=0.05, qubit_levels=2, res_dim=8)


def _flavor(value) -> str:
    aliases = {"0": "zero", "1": "one", "zero-controlled": "zero", "one-controlled": "one"}
    key = aliases.get(str(value), str(value))
    if key not in FLAVORS:
        raise ValueError(f"unknown CNOT flavor {value!r}")
    return key


def cancellation_amplitude(model, detuning: float) -> float:
    """Working-point amplitude: exact (self-Kerr inclusive) cancellation of the static ZZ."""
    return solve_exact_cancellation(model, detuning)


@dataclass(frozen=True)
class CRGateSpec:
    flavor: str
    drive_freq: float
    cr_peak: float
    cancel_peak: float
    cancel_phase: float
    duration: float
    rip_drive: DriveParams
    drag_enabled: bool = True
    drag_on: str = "cancel"
    rip_locked: bool = True

    def __post_init__(self):
        object.__setattr__(self, "flavor", _flavor(self.flavor))
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.drag_on not in ("cancel", "both"):
            raise ValueError("drag_on must be 'cancel' or 'both'")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.drive_freq, self.cr_peak, self.cancel_peak, self.cancel_phase])

    def with_params(self, x) -> "CRGateSpec":
        return dataclasses.replace(self, drive_freq=float(x[0]), cr_peak=float(x[1]),
                                   cancel_peak=float(x[2]), cancel_phase=float(x[3]))

    def validate(self, model, tol: float = 1e-6) -> None:
        if abs(self.drive_freq - model.omega_right) > 0.2:
            raise ValueError("drive frequency must lie within 0.2 GHz of the target qubit")
        if self.rip_locked:
            d0 = cancellation_amplitude(model, self.rip_drive.detuning)
            if abs(self.rip_drive.amplitude - d0) > tol:
                raise ValueError(
                    f"coupler drive {self.rip_drive.amplitude:.9f} GHz is not at the ZZ-free "
                    f"point {d0:.9f} GHz"
                )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["rip_drive"] = dataclasses.asdict(self.rip_drive)
        return out


@dataclass(frozen=True)
class CZGateSpec:
    exponent: int
    duration: float
    rip_drive: DriveParams

    def __post_init__(self):
        if self.exponent not in range(2, 33, 2):
            raise ValueError("exponent must be an even integer in [2, 32]")
        if not self.duration > 0:
            raise ValueError("duration must be positive")

    @property
    def envelope(self) -> AdiabaticPoly:
        return AdiabaticPoly(self.rip_drive.amplitude, self.exponent, self.duration)


@dataclass
class GateResult:
    map: np.ndarray
    avg_fidelity: float
    coherent_error: float
    leakage: float
    phase_errors: np.ndarray
    local_z: np.ndarray
    diabatic_error: float = 0.0
    total_error: float | None = None
    conditional_phase: float | None = None
    times: np.ndarray | None = None
    populations: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "avg_fidelity": self.avg_fidelity,
            "coherent_error": self.coherent_error,
            "leakage": self.leakage,
            "diabatic_error": self.diabatic_error,
            "phase_errors": [float(x) for x in self.phase_errors],
            "local_z": [float(x) for x in self.local_z],
            "map": [[[float(z.real), float(z.imag)] for z in row] for row in self.map],
        }
        if self.total_error is not None:
            out["total_error"] = self.total_error
        if self.conditional_phase is not None:
            out["conditional_phase"] = self.conditional_phase
        return out


def _phase_errors(m, target, phases):
    tgt = dressed_target(target, phases)
    rows = np.argmax(np.abs(tgt), axis=0)
    diff = np.angle(m[rows, range(4)] * np.conj(tgt[rows, range(4)]))
    diff = diff - np.angle(np.sum(np.exp(1j * diff)))
    return np.angle(np.exp(1j * diff))


def _gate_result(m, leakage, target, res=None, **extra) -> GateResult:
    fid, phases = average_gate_fidelity(m, target, optimize_local_z=True, return_phases=True)
    fid = min(fid, 1.0)
    out = GateResult(
        map=m, avg_fidelity=fid, coherent_error=max(1.0 - fid, 0.0), leakage=leakage,
        phase_errors=_phase_errors(m, target, phases), local_z=phases, **extra,
    )
    if res is not None:
        out.times = res.times
        out.populations = res.populations
    return out


# ---------------------------------------------------------------------------
# cross-resonance gate
# ---------------------------------------------------------------------------


def cr_drives(model, spec: CRGateSpec):
    """Coupler drive, control CR tone and target cancellation tone."""
    sigma = spec.duration / 4.0
    cr_env = TruncatedGaussian(spec.cr_peak, sigma, spec.duration)
    cancel_env = TruncatedGaussian(spec.cancel_peak, sigma, spec.duration)
    cr_quad = cancel_quad = None
    if spec.drag_enabled:
        cancel_quad = drag_pair(cancel_env, model.eta_right).quadrature
        if spec.drag_on == "both":
            cr_quad = drag_pair(cr_env, model.eta_right).quadrature
    return [
        ResonatorDrive.constant(spec.rip_drive),
        QubitTone("n_L", cr_env, spec.drive_freq, 0.0, cr_quad),
        QubitTone("n_R", cancel_env, spec.drive_freq, spec.cancel_phase, cancel_quad),
    ]


def simulate_cr_gate(model, spec: CRGateSpec, sim: SimConfig = CR_SIM,
                     noise: NoiseSpec | None = None, validate: bool = True) -> GateResult:
    """Propagate the CR pulse pair and score it against the flavor's CNOT."""
    if validate:
        spec.validate(model)
    drives = cr_drives(model, spec)
    frame = FrameSpec("displaced")
    system = KerrSystem(model, drives, frame, sim)
    m, leak, res = propagate_subspace_map(model, drives, frame, sim, spec.duration, system=system)
    target = FLAVORS[spec.flavor]
    out = _gate_result(m, leak, target, res)
    if noise is not None:
        process = propagate_channel(model, drives, frame, sim, noise, spec.duration, system=system)
        out.total_error = 1.0 - channel_average_fidelity(process, target, out.local_z)
    return out


def cr_seed(model, duration: float, flavor, rip: DriveParams) -> np.ndarray:
    """Analytic starting point ``(ω_d, ε_CR, ε_cancel, phase)``.

    The drive sits on the Stark-shifted target frequency, the CR amplitude
    gives a π conditional rotation with rate ``A_CX ε_CR``, and the
    cancellation tone nulls the target rotation in the non-flipping branch.
    """
    flavor = _flavor(flavor)
    a_r = model.drive_coefficient("n_L", "A_R")
    a_cx = model.drive_coefficient("n_L", "A_CX")
    c_r = model.drive_coefficient("n_R", "b_R") or 1.0
    if a_cx == 0:
        raise DegenerateDriveError("A_CX vanishes; the CR drive cannot entangle")
    _, shift_r = exact_stark_shifts(model, rip)
    area = TruncatedGaussian(1.0, duration / 4.0, duration).area()
    eps = 1.0 / (4.0 * abs(a_cx) * area)
    # target rate of the branch that must stay idle
    idle = a_r + a_cx if flavor == "zero" else a_r
    cancel = eps * idle / c_r
    phase = 0.0 if cancel <= 0 else math.pi
    return np.array([model.omega_right + shift_r, eps, abs(cancel), phase])


_CR_SCALE = np.array([0.003, 0.02, 0.003, 0.3])


def optimize_cr_gate(model, duration: float, flavor, sim: SimConfig = CR_SIM,
                     detuning: float = 0.1, seed: int = 0, restarts: int = 3,
                     max_evals: int = 400, start=None, stall_threshold: float = 1e-3,
                     drag_enabled: bool = True):
    """Nelder-Mead search over ``(ω_d, ε_CR, ε_cancel, phase)`` minimizing coherent error.

    The first restart starts from ``start`` (or the analytic seed); later
    restarts start from the best point so far with a seeded random
    perturbation.  Returns the best spec and its result.
    """
    if not 30.0 <= duration <= 60.0:
        raise ValueError("supported CR durations are 30-60 ns")
    rip = DriveParams(cancellation_amplitude(model, detuning), detuning)
    flavor = _flavor(flavor)
    base = CRGateSpec(flavor, 0.0, 0.0, 0.0, 0.0, duration, rip, drag_enabled=drag_enabled)
    x0 = np.asarray(start if start is not None else cr_seed(model, duration, flavor, rip), float)
    rng = np.random.default_rng(seed)
    trace = []

    def cost(x):
        r = simulate_cr_gate(model, base.with_params(x), sim, validate=False)
        trace.append((x.tolist(), r.coherent_error))
        return math.log10(max(r.coherent_error, 1e-16))

    best_x, best_f = x0, cost(x0)
    for k in range(restarts):
        start_x = best_x if k == 0 else best_x + rng.normal(0.0, 0.3, 4) * _CR_SCALE
        simplex = np.vstack([np.zeros(4), np.eye(4)])
        sol = minimize(lambda y: cost(start_x + y * _CR_SCALE), np.zeros(4),
                       method="Nelder-Mead",
                       options={"maxfev": max_evals, "xatol": 1e-4, "fatol": 1e-4,
                                "initial_simplex": simplex})
        if sol.fun < best_f:
            best_f, best_x = sol.fun, start_x + sol.x * _CR_SCALE
    best_spec = base.with_params(best_x)
    result = simulate_cr_gate(model, best_spec, sim, validate=False)
    if result.coherent_error > stall_threshold:
        raise CalibrationError(
            f"CR optimization stalled at coherent error {result.coherent_error:.2e}",
            best=best_spec, residual=result.coherent_error, trace=trace,
        )
    return best_spec, result


# ---------------------------------------------------------------------------
# adiabatic CZ gate
# ---------------------------------------------------------------------------


def minimum_cz_duration(model) -> float:
    """Time for the static ZZ alone to accumulate a π conditional phase."""
    return 1.0 / (2.0 * abs(model.zz_static))


def simulate_cz_gate(model, spec: CZGateSpec, sim: SimConfig = CZ_SIM,
                     noise: NoiseSpec | None = None) -> GateResult:
    """Ramp the coupler drive from the working point to zero and back."""
    drives = [ResonatorDrive(spec.envelope, spec.rip_drive.detuning)]
    frame = FrameSpec("displaced")
    system = KerrSystem(model, drives, frame, sim)
    m, leak, res = propagate_subspace_map(model, drives, frame, sim, spec.duration, system=system)
    p = {lab: res.phase(lab)[-1] for lab in COMPUTATIONAL}
    cphase = p[1, 0] + p[0, 1] - p[0, 0] - p[1, 1]
    nq, f, _ = system.dims
    # coupler population left outside the frame vacuum once the drive is back at D0
    pops = (np.abs(res.states) ** 2).reshape(nq, f, nq, -1)
    diabatic = float(pops[:, 1:].sum(axis=(0, 1, 2)).mean())
    out = _gate_result(m, leak, CZ, res, diabatic_error=diabatic, conditional_phase=float(cphase))
    if noise is not None:
        process = propagate_channel(model, drives, frame, sim, noise, spec.duration, system=system)
        out.total_error = 1.0 - channel_average_fidelity(process, CZ, out.local_z)
    return out


def cz_conditional_phase(model, exponent: int, duration: float, detuning: float = 0.1,
                         sim: SimConfig = CZ_SIM, amplitude: float | None = None) -> float:
    if amplitude is None:
        amplitude = cancellation_amplitude(model, detuning)
    spec = CZGateSpec(exponent, duration, DriveParams(amplitude, detuning))
    drives = [ResonatorDrive(spec.envelope, detuning)]
    res = propagate_subspace_map(model, drives, FrameSpec("displaced"), sim, duration)[2]
    p = {lab: res.phase(lab)[-1] for lab in COMPUTATIONAL}
    return float(p[1, 0] + p[0, 1] - p[0, 0] - p[1, 1])


def optimize_cz_duration(model, exponent: int, sim: SimConfig = CZ_SIM, detuning: float = 0.1,
                         max_duration: float = 1000.0, error_threshold: float = 5e-4):
    """Shortest duration whose accumulated conditional phase reaches π.

    Durations are scanned in 1 ns steps from the static-ZZ bound and the
    crossing is refined by bracketed root finding.
    """
    amp = cancellation_amplitude(model, detuning)
    t_min = minimum_cz_duration(model)

    def excess(t):
        return abs(cz_conditional_phase(model, exponent, t, detuning, sim, amp)) - math.pi

    t_prev = t_min
    f_prev = excess(t_prev)
    t = math.floor(t_min) + 1.0
    while f_prev < 0:
        if t > max_duration:
            raise CalibrationError(f"no π conditional phase below {max_duration} ns")
        f_t = excess(t)
        if f_t >= 0:
            t_g = brentq(excess, t_prev, t, xtol=1e-6)
            break
        t_prev, f_prev = t, f_t
        t += 1.0
    else:
        t_g = t_prev
    result = simulate_cz_gate(model, CZGateSpec(exponent, t_g, DriveParams(amp, detuning)), sim)
    if result.coherent_error >= error_threshold:
        raise CalibrationError(
            f"CZ at {t_g:.2f} ns has coherent error {result.coherent_error:.2e}",
            best=t_g, residual=result.coherent_error,
        )
    return t_g, result


# ---------------------------------------------------------------------------
# analytic error budget
# ---------------------------------------------------------------------------


def measurement_dephasing(chi: float, detuning: float, kappa: float, photons: float) -> float:
    """Resonator-photon-noise dephasing rate in 1/μs.

    ``chi`` and ``detuning`` in GHz (linear), ``kappa`` in 1/μs.
    """
    chi_w = TWO_PI * chi * 1e3
    det_w = TWO_PI * detuning * 1e3
    return 2 * photons * kappa * chi_w**2 / (kappa**2 + chi_w**2 + 4 * det_w**2)


def measurement_dephasing_limit(chi: float, detuning: float, kappa: float,
                                photons: float) -> float:
    """Large-detuning limit ``n̄ χ² κ / (2 Δ_d²)`` in 1/μs."""
    return photons * chi**2 * kappa / (2 * detuning**2)


def error_budget(model, spec: CRGateSpec | None, noise: NoiseSpec, detuning: float = 0.1,
                 circuit=None) -> dict:
    """Closed-form error estimates of a CR gate at the ZZ-free point.

    Rates are in GHz (linear) unless the key says otherwise.  The exchange and
    CR-coefficient estimates need the bare ``circuit``; without it they use
    the dressed exchange and omit the charge-element prefactor.
    """
    out = {}
    delta, eta = model.detuning_lr, 0.5 * (model.eta_left + model.eta_right)
    j = model.j_eff
    prefactor = 1.0
    if circuit is not None:
        from .circuit import exchange_estimate
        j = exchange_estimate(circuit)
        prefactor = circuit.left.asymptotic_charge_element
        out["j_estimate"] = j
    if np.isfinite(j):
        out["zz_estimate"] = 4 * j**2 * eta / ((delta + eta) * (delta - eta))
        out["a_cx_estimate"] = prefactor * 2 * j * eta / (delta * (eta + delta))
    if spec is not None:
        eps_cx = model.drive_coefficient("n_L", "A_CX") * spec.cr_peak
        if eps_cx == 0:
            raise DegenerateDriveError("effective CX rate A_CX·ε_CR vanishes")
        rates = [1e-3 / t for t in (noise.t1_left, noise.t1_right, noise.t2_left, noise.t2_right)]
        gamma = float(np.mean(rates))
        out["eps_cx"] = eps_cx
        out["gamma_per_ns"] = gamma
        out["err_noise"] = noise_error_estimate(gamma, eps_cx)
        out["err_zz_ratio"] = abs(model.zz_static / eps_cx) ** 2
    photons = noise.photons
    if photons == 0 and spec is not None:
        photons = spec.rip_drive.photons
    for side, chi in (("left", model.chi_left), ("right", model.chi_right)):
        gm = measurement_dephasing(chi, detuning, noise.kappa, photons)
        lim = measurement_dephasing_limit(chi, detuning, noise.kappa, photons)
        out[f"gamma_m_{side}_per_us"] = gm
        out[f"gamma_m_{side}_limit_per_us"] = lim
        out[f"coherence_limit_{side}_us"] = 1.0 / gm if gm > 0 else math.inf
    return out


def noise_error_estimate(gamma: float, eps_cx: float) -> float:
    """``4πγ / (5|ε_CX|)`` with ``γ`` in 1/ns and ``ε_CX`` in GHz (converted to angular)."""
    if eps_cx == 0:
        raise DegenerateDriveError("effective CX rate vanishes")
    return 4 * math.pi * gamma / (5 * abs(TWO_PI * eps_cx))
