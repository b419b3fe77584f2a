"""Time-domain propagation of the dressed Kerr model with coupler and qubit drives.

The model Hamiltonian (GHz) on the product space ``(j_L, n_C, j_R)`` is

    ω_L n_L + η_L/2 n_L(n_L-1) + ω_R n_R + η_R/2 n_R(n_R-1)
    + ω_C n_C + η_C/2 n_C(n_C-1) + χ_L n_L n_C + χ_R n_R n_C + χ' n_L n_R

and is multiplied by 2π before exponentiation.  Three frames are supported:

* ``lab``: no frame change, full carriers.
* ``rotating``: each mode rotates at its frame frequency; drives may be
  treated in the rotating-wave approximation.
* ``displaced``: the rotating frame followed by a qubit-state-dependent
  displacement of the coupler by ``β_j = D / (Δ_d - j_L χ_L - j_R χ_R)``, so
  that the driven steady state is the coupler vacuum.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import brentq

from .circuit import DRIVE_PATTERNS
from .effective import DriveParams, solve_cancellation
from .errors import (
    IntegratorError, LeakageError, NoCancellationPointError, ResourceError, TruncationError,
)
from .pulses import Constant

TWO_PI = 2.0 * math.pi
COMPUTATIONAL = ((0, 0), (0, 1), (1, 0), (1, 1))
_MAX_DENSITY_DIM = 400


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResonatorDrive:
    """Coupler drive ``2 D(t) cos(ω_C^d t)(a + a†)`` with ``ω_C^d = ω_C + detuning``."""

    envelope: object
    detuning: float

    @classmethod
    def constant(cls, drive: DriveParams) -> "ResonatorDrive":
        return cls(Constant(drive.amplitude), drive.detuning)

    @property
    def is_constant(self) -> bool:
        return isinstance(self.envelope, Constant)

    def amplitude(self, t):
        return self.envelope.value(t)

    def slope(self, t):
        return self.envelope.deriv(t)


@dataclass(frozen=True)
class QubitTone:
    """Charge drive ``2[I(t) cos(ωt+φ) + Q(t) sin(ωt+φ)] n_X`` on one transmon.

    ``operator`` is ``"n_L"`` or ``"n_R"``.  The dressed charge operator is
    expanded with the model's drive coefficients.
    """

    operator: str
    envelope: object
    frequency: float
    phase: float = 0.0
    quadrature: object | None = None

    def __post_init__(self):
        if self.operator not in ("n_L", "n_R"):
            raise ValueError("operator must be 'n_L' or 'n_R'")

    def complex_envelope(self, t):
        out = np.asarray(self.envelope.value(t), dtype=complex)
        if self.quadrature is not None:
            out = out + 1j * np.asarray(self.quadrature.value(t))
        return out


@dataclass(frozen=True)
class FrameSpec:
    kind: str = "displaced"
    rwa: bool = True
    qubit_left: float | None = None
    qubit_right: float | None = None
    resonator: float | None = None

    def __post_init__(self):
        if self.kind not in ("lab", "rotating", "displaced"):
            raise ValueError("frame kind must be 'lab', 'rotating' or 'displaced'")
        if self.kind == "displaced" and not self.rwa:
            raise ValueError("the displaced frame is defined with the rotating-wave approximation")
        if self.kind == "lab" and self.rwa:
            object.__setattr__(self, "rwa", False)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.02
    integrator: str = "magnus4"
    qubit_levels: int = 3
    res_dim: int = 6
    norm_tolerance: float = 1e-8
    truncation_tolerance: float = 1e-6
    check_truncation: bool = True
    rtol: float = 1e-10
    atol: float = 1e-12
    chunk: int = 512

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.integrator not in ("magnus2", "magnus4", "rk"):
            raise ValueError("integrator must be 'magnus2', 'magnus4' or 'rk'")
        if self.qubit_levels < 2:
            raise ValueError("qubit_levels must be at least 2")
        if self.res_dim < 2:
            raise ValueError("res_dim must be at least 2")

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class NoiseSpec:
    """Markovian decoherence; times in μs, ``kappa`` in 1/μs."""

    t1_left: float = math.inf
    t1_right: float = math.inf
    t2_left: float = math.inf
    t2_right: float = math.inf
    kappa: float = 0.0
    photons: float = 0.0

    def __post_init__(self):
        for t1, t2, name in ((self.t1_left, self.t2_left, "left"),
                             (self.t1_right, self.t2_right, "right")):
            if not (t1 > 0 and t2 > 0):
                raise ValueError(f"{name} T1 and T2 must be positive")
            if t2 > 2 * t1 * (1 + 1e-12):
                raise ValueError(f"{name} T2 must not exceed 2 T1")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")

    @classmethod
    def uniform(cls, t1: float, t2: float, **kw) -> "NoiseSpec":
        return cls(t1, t1, t2, t2, **kw)

    def rates(self, side: str) -> tuple[float, float]:
        """Relaxation rate and pure-dephasing rate in 1/ns."""
        t1 = self.t1_left if side == "left" else self.t1_right
        t2 = self.t2_left if side == "left" else self.t2_right
        gamma1 = 1e-3 / t1
        gamma_phi = max(1e-3 / t2 - 0.5 * gamma1, 0.0)
        return gamma1, gamma_phi


@dataclass
class PropagationResult:
    times: np.ndarray
    states: np.ndarray
    phases: np.ndarray
    populations: np.ndarray
    leakage: np.ndarray
    labels: tuple
    boundary_population: float
    norm_drift: float

    def phase(self, label) -> np.ndarray:
        return self.phases[self.labels.index(tuple(label))]


@dataclass
class DensityResult:
    times: np.ndarray
    states: np.ndarray
    trace_error: float
    populations: np.ndarray


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------


def _lower(dim):
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1)


def displacement_matrix(beta: float, dim: int, pad: int = 30) -> np.ndarray:
    """``exp(β(a† - a))`` computed in a padded space and truncated to ``dim``."""
    big = dim + pad
    a = _lower(big)
    return expm(beta * (a.T - a))[:dim, :dim]


def steady_displacement(amplitude, detuning: float, kerr: float):
    """Classical steady-state displacement solving ``detuning·β = D + kerr·β³``.

    Reduces to ``D / detuning`` without self-Kerr; the root continuously
    connected to it is found by Newton iteration.
    """
    amplitude = np.asarray(amplitude, dtype=float)
    beta = amplitude / detuning
    if kerr == 0:
        return beta
    for _ in range(50):
        f = detuning * beta - amplitude - kerr * beta**3
        step = f / (detuning - 3 * kerr * beta**2)
        beta = beta - step
        if np.all(np.abs(step) <= 1e-15 * (1 + np.abs(beta))):
            break
    return beta


def coherent_state(beta: complex, dim: int) -> np.ndarray:
    n = np.arange(dim)
    logfac = np.array([math.lgamma(k + 1) for k in n])
    amp = np.zeros(dim, dtype=complex)
    if beta == 0:
        amp[0] = 1.0
        return amp
    amp = np.exp(-0.5 * abs(beta) ** 2 + n * np.log(abs(beta)) - 0.5 * logfac) * np.exp(
        1j * np.angle(beta) * n)
    return amp / np.linalg.norm(amp)


class KerrSystem:
    """Operators and time-dependent Hamiltonian of one simulation setup."""

    def __init__(self, model, drives, frame: FrameSpec, sim: SimConfig):
        self.model = model
        self.frame = frame
        self.sim = sim
        self.res_drive = None
        self.tones = []
        for d in drives or ():
            if isinstance(d, ResonatorDrive):
                if self.res_drive is not None:
                    raise ValueError("only one coupler drive is supported")
                self.res_drive = d
            elif isinstance(d, QubitTone):
                self.tones.append(d)
            else:
                raise TypeError(f"unsupported drive {d!r}")
        nq, f = sim.qubit_levels, sim.res_dim
        self.dims = (nq, f, nq)
        self.dim = nq * f * nq
        q_ids = np.eye(nq)
        c_id = np.eye(f)
        b = _lower(nq)
        a = _lower(f)
        self.bl = np.kron(np.kron(b, c_id), q_ids)
        self.br = np.kron(np.kron(q_ids, c_id), b)
        self.a = np.kron(np.kron(q_ids, a), q_ids)
        self.nl = np.diag(np.kron(np.kron(np.arange(nq), np.ones(f)), np.ones(nq)))
        self.nr = np.diag(np.kron(np.kron(np.ones(nq), np.ones(f)), np.arange(nq)))
        self.nc = np.diag(np.kron(np.kron(np.ones(nq), np.arange(f)), np.ones(nq)))
        self.qubit_blocks = [(jl, jr) for jl in range(nq) for jr in range(nq)]

        wf_c = frame.resonator
        if wf_c is None:
            wf_c = (model.omega_res + self.res_drive.detuning) if self.res_drive else model.omega_res
        if frame.kind == "lab":
            self.frame_freqs = (0.0, 0.0, 0.0)
        else:
            self.frame_freqs = (
                model.omega_left if frame.qubit_left is None else frame.qubit_left,
                wf_c,
                model.omega_right if frame.qubit_right is None else frame.qubit_right,
            )
        if frame.kind == "displaced":
            if self.res_drive is None:
                raise ValueError("the displaced frame needs a coupler drive (amplitude may be 0)")
            if abs(self.frame_freqs[1] - (model.omega_res + self.res_drive.detuning)) > 1e-12:
                raise ValueError("the displaced frame must rotate at the coupler drive frequency")
            if self.tones and not self.res_drive.is_constant:
                raise ValueError(
                    "qubit tones in the displaced frame require a constant coupler drive"
                )
        if frame.kind == "lab" and self.res_drive is not None:
            amp = float(np.max(np.abs(self.res_drive.amplitude(np.linspace(
                0, min(getattr(self.res_drive.envelope, "duration", 1.0), 1e4), 64)))))
            nbar = (amp / self.res_drive.detuning) ** 2
            need = nbar + 6 * math.sqrt(nbar) + 5
            if f < need:
                raise ValueError(
                    f"lab frame needs res_dim >= {need:.1f} for {nbar:.2f} photons, got {f}"
                )
        self._build_static()
        self._build_terms()

    # -- geometry ----------------------------------------------------------
    def index(self, jl, n, jr):
        nq, f, _ = self.dims
        return (jl * f + n) * nq + jr

    def _block_detuning(self, jl, jr):
        return self.res_drive.detuning - jl * self.model.chi_left - jr * self.model.chi_right

    def betas(self, amplitude):
        """Displacement per qubit block for a coupler amplitude."""
        if self.res_drive is None:
            return {blk: 0.0 for blk in self.qubit_blocks}
        return {blk: float(steady_displacement(amplitude, self._block_detuning(*blk),
                                               self.model.eta_res))
                for blk in self.qubit_blocks}

    def _block_diag(self, mats):
        """Assemble a block-diagonal operator from per-qubit-block coupler matrices."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        _, f, _ = self.dims
        for (jl, jr), m in mats.items():
            idx = [self.index(jl, n, jr) for n in range(f)]
            out[np.ix_(idx, idx)] = m
        return out

    def _displaced_qubit_op(self, op_q, beta):
        """Displaced-frame image of a qubit operator ``op_q ⊗ 1_C``."""
        nq, f, _ = self.dims
        out = np.zeros((self.dim, self.dim), dtype=complex)
        cache = {}
        for tgt in self.qubit_blocks:
            for src in self.qubit_blocks:
                amp = op_q[tgt[0] * nq + tgt[1], src[0] * nq + src[1]]
                if amp == 0:
                    continue
                delta = beta[src] - beta[tgt]
                key = round(delta, 15)
                if key not in cache:
                    cache[key] = displacement_matrix(delta, f) if delta else np.eye(f)
                rows = [self.index(tgt[0], n, tgt[1]) for n in range(f)]
                cols = [self.index(src[0], n, src[1]) for n in range(f)]
                out[np.ix_(rows, cols)] += amp * cache[key]
        return out

    def _qubit_part(self, op):
        """Reduce a full operator that acts as ``op_q ⊗ 1_C`` to ``op_q``."""
        nq, f, _ = self.dims
        sel = [self.index(jl, 0, jr) for jl in range(nq) for jr in range(nq)]
        return op[np.ix_(sel, sel)]

    # -- Hamiltonian -------------------------------------------------------
    def _build_static(self):
        m = self.model
        wl, wc, wr = self.frame_freqs
        nl, nr, nc = self.nl, self.nr, self.nc
        eye = np.eye(self.dim)
        h = (m.omega_left - wl) * nl + 0.5 * m.eta_left * nl @ (nl - eye)
        h = h + (m.omega_right - wr) * nr + 0.5 * m.eta_right * nr @ (nr - eye)
        h = h + m.zz_static * nl @ nr
        if self.frame.kind != "displaced":
            h = h + (m.omega_res - wc) * nc + 0.5 * m.eta_res * nc @ (nc - eye)
            h = h + m.chi_left * nl @ nc + m.chi_right * nr @ nc
            self.h_static = h.astype(complex)

            return
        # displaced frame: per-block coupler operators with time-dependent weights
        _, f, _ = self.dims
        a = _lower(f)
        ad = a.T
        num = ad @ a
        kerr_c = m.eta_res
        blocks0 = {}
        for blk in self.qubit_blocks:
            blocks0[blk] = -self._block_detuning(*blk) * num + 0.5 * kerr_c * ad @ ad @ a @ a
        self.h_static = h.astype(complex) + self._block_diag(blocks0)
        self._block_ops = (
            kerr_c * (ad @ ad @ a + ad @ a @ a),                  # × β
            0.5 * kerr_c * (ad @ ad + a @ a + 4 * num),           # × β²
            a + ad,                                               # × linear residual
            np.eye(f),                                            # × constant shift
            -1j * (ad - a),                                       # × dβ/dt
        )
        nq = self.dims[0]
        self._block_index = {
            blk: np.array([self.index(blk[0], n, blk[1]) for n in range(f)])
            for blk in self.qubit_blocks
        }

    def _displaced_block_weights(self, ts):
        """Scalar weights of the per-block coupler operators at times ``ts``."""
        amp = np.asarray(self.res_drive.amplitude(ts), dtype=float)
        slope = np.asarray(self.res_drive.slope(ts), dtype=float)
        kerr = self.model.eta_res
        out = {}
        for blk in self.qubit_blocks:
            det = self._block_detuning(*blk)
            beta = steady_displacement(amp, det, kerr)
            # frame motion enters as an angular rate; the Hamiltonian is in linear GHz
            dbeta = slope / (det - 3 * kerr * beta**2) / TWO_PI
            linear = -det * beta + amp + kerr * beta**3
            const = -det * beta**2 + 2 * amp * beta + 0.5 * kerr * beta**4
            out[blk] = (beta, beta**2, linear, const, dbeta)
        return out

    def _tone_operators(self, tone: QubitTone):
        """List of ``(coefficient, lowering operator, lowered mode)`` for a tone."""
        coeffs = self.model.drive_expansion(tone.operator) if hasattr(
            self.model, "drive_expansion") else {}
        if not coeffs:
            coeffs = {"b_L" if tone.operator == "n_L" else "b_R": 1.0}
        out = []
        for pattern, c in sorted(coeffs.items()):
            if c == 0:
                continue
            use_l, use_r, mode = DRIVE_PATTERNS[pattern]
            op = self.bl if mode == "L" else self.br
            if use_r:
                op = self.nr @ op
            if use_l:
                op = self.nl @ op
            out.append((c, op, mode))
        return out

    def _build_terms(self):
        """Collect drive terms ``f(t)·O + h.c.`` with scalar time functions."""
        self.terms = []
        wl, wc, wr = self.frame_freqs
        rwa = self.frame.rwa
        displaced = self.frame.kind == "displaced"
        beta0 = None
        if displaced:
            beta0 = self.betas(float(self.res_drive.amplitude(0.0)))
        for tone in self.tones:
            grouped = {}
            for c, op, mode in self._tone_operators(tone):
                grouped.setdefault(mode, 0)
                grouped[mode] = grouped[mode] + c * op
            for mode, op in grouped.items():
                if displaced:
                    op = self._displaced_qubit_op(self._qubit_part(op), beta0)
                wf = wl if mode == "L" else wr
                self.terms.append((self._tone_function(tone, wf, rwa), op))
        if self.res_drive is not None and not displaced:
            self.terms.append((self._resonator_function(wc, rwa), self.a.astype(complex)))

    @staticmethod
    def _tone_function(tone: QubitTone, wf: float, rwa: bool):
        w, phi = tone.frequency, tone.phase

        def fn(t):
            t = np.asarray(t, dtype=float)
            eps = tone.complex_envelope(t)
            co = np.conj(eps) * np.exp(1j * (TWO_PI * (w - wf) * t + phi))
            if rwa:
                return co
            counter = eps * np.exp(-1j * (TWO_PI * (w + wf) * t + phi))
            return co + counter

        return fn

    def _resonator_function(self, wf: float, rwa: bool):
        drive = self.res_drive
        wd = self.model.omega_res + drive.detuning

        def fn(t):
            t = np.asarray(t, dtype=float)
            amp = drive.amplitude(t)
            out = amp * np.exp(1j * TWO_PI * (wd - wf) * t)
            if not rwa:
                out = out + amp * np.exp(-1j * TWO_PI * (wd + wf) * t)
            return out

        return fn

    @property
    def time_dependent(self) -> bool:
        if self.terms:
            return True
        if self.frame.kind == "displaced" and not self.res_drive.is_constant:
            return True
        return False

    def hamiltonian(self, ts) -> np.ndarray:
        """Hamiltonian in GHz at each time in ``ts``; shape ``(len(ts), d, d)``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        h = np.broadcast_to(self.h_static, (len(ts), self.dim, self.dim)).copy()
        if self.frame.kind == "displaced":
            for blk, weights in self._displaced_block_weights(ts).items():
                idx = self._block_index[blk]
                block = sum(np.asarray(w)[:, None, None] * op
                            for w, op in zip(weights, self._block_ops))
                h[:, idx[:, None], idx[None, :]] += block
        for fn, op in self.terms:
            c = fn(ts)[:, None, None]
            h += c * op + np.conj(c) * op.T.conj()
        return h

    # -- frame vacuum ------------------------------------------------------
    def frame_vacuum(self, label, t: float = 0.0) -> np.ndarray:
        """Computational state ``|j_L, j_R>`` with the coupler in the frame vacuum."""
        jl, jr = label
        nq, f, _ = self.dims
        psi = np.zeros(self.dim, dtype=complex)
        if self.frame.kind == "displaced" or self.res_drive is None:
            psi[self.index(jl, 0, jr)] = 1.0
            return psi
        amp = float(self.res_drive.amplitude(t))
        beta = float(steady_displacement(amp, self._block_detuning(jl, jr), self.model.eta_res))
        if self.frame.kind == "lab":
            wd = self.model.omega_res + self.res_drive.detuning
            beta = beta * np.exp(-1j * TWO_PI * wd * t)
        coh = coherent_state(beta, f)
        for n in range(f):
            psi[self.index(jl, n, jr)] = coh[n]
        return psi

    def vacuum_is_static(self) -> bool:
        if self.frame.kind == "displaced" or self.res_drive is None:
            return True
        return self.frame.kind == "rotating" and self.res_drive.is_constant

    # -- dissipation -------------------------------------------------------
    def collapse_operators(self, noise: NoiseSpec):
        ops = []
        displaced = self.frame.kind == "displaced"
        beta = self.betas(float(self.res_drive.amplitude(0.0))) if displaced else None
        for side, b, n in (("left", self.bl, self.nl), ("right", self.br, self.nr)):
            g1, gphi = noise.rates(side)
            if g1 > 0:
                op = self._displaced_qubit_op(self._qubit_part(b), beta) if displaced else b
                ops.append(math.sqrt(g1) * op.astype(complex))
            if gphi > 0:
                ops.append(math.sqrt(2 * gphi) * n.astype(complex))
        if noise.kappa > 0:
            kappa = noise.kappa * 1e-3
            op = self.a.astype(complex)
            if displaced:
                op = op + self._block_diag({blk: bv * np.eye(self.dims[1])
                                            for blk, bv in beta.items()})
            ops.append(math.sqrt(kappa) * op)
        return ops


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------

_GL = math.sqrt(3.0) / 6.0


def _step_generators(system: KerrSystem, t0: np.ndarray, h: float, order: int) -> np.ndarray:
    """Hermitian step generators ``K`` (GHz·ns) with ``U = exp(-2πi K)``."""
    if order == 2:
        return h * system.hamiltonian(t0 + 0.5 * h)
    h1 = system.hamiltonian(t0 + (0.5 - _GL) * h)
    h2 = system.hamiltonian(t0 + (0.5 + _GL) * h)
    comm = h2 @ h1 - h1 @ h2
    return 0.5 * h * (h1 + h2) - 1j * (math.sqrt(3.0) / 12.0) * h**2 * TWO_PI * comm


def _unitaries(k: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(k)
    return (v * np.exp(-1j * TWO_PI * w)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def step_unitaries(system: KerrSystem, times: np.ndarray, sim: SimConfig):
    """Yield ``(start index, step unitaries)`` chunks covering the time grid."""
    hs = np.diff(times)
    order = 2 if sim.integrator == "magnus2" else 4
    if not system.time_dependent:
        h_const = system.hamiltonian([0.0])[0]
        u_cache = {}
        for start in range(0, len(hs), sim.chunk):
            hh = hs[start:start + sim.chunk]
            out = np.empty((len(hh), system.dim, system.dim), dtype=complex)
            for i, h in enumerate(hh):
                key = round(h, 14)
                if key not in u_cache:
                    u_cache[key] = _unitaries(h * h_const)
                out[i] = u_cache[key]
            yield start, out
        return
    for start in range(0, len(hs), sim.chunk):
        hh = hs[start:start + sim.chunk]
        t0 = times[start:start + len(hh)]
        if np.allclose(hh, hh[0]):
            k = _step_generators(system, t0, hh[0], order)
        else:
            k = np.stack([_step_generators(system, t0[i:i + 1], h, order)[0]
                          for i, h in enumerate(hh)])
        yield start, _unitaries(k)


def _time_grid(T: float, dt: float) -> np.ndarray:
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    return np.linspace(0.0, T, n + 1)


def _rk_solve(system: KerrSystem, psi0: np.ndarray, times: np.ndarray, sim: SimConfig):
    d, k = psi0.shape

    def rhs(t, y):
        h = system.hamiltonian([t])[0]
        return (-1j * TWO_PI * (h @ y.reshape(d, k))).ravel()

    sol = solve_ivp(rhs, (times[0], times[-1]), psi0.ravel(), method="DOP853",
                    t_eval=times, rtol=sim.rtol, atol=sim.atol)
    if not sol.success:
        raise IntegratorError(f"adaptive integrator failed: {sol.message}")
    return sol.y.T.reshape(len(times), d, k)


# ---------------------------------------------------------------------------
# state propagation
# ---------------------------------------------------------------------------


def _initial_states(system: KerrSystem, initial):
    if initial is None:
        initial = COMPUTATIONAL
    if isinstance(initial, np.ndarray):
        psi = initial.reshape(system.dim, -1).astype(complex)
        norms = np.linalg.norm(psi, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-10):
            raise ValueError("initial states must be normalized")
        return psi, tuple(range(psi.shape[1])), None
    labels = tuple(tuple(int(x) for x in lab) for lab in initial)
    psi = np.stack([system.frame_vacuum(lab) for lab in labels], axis=1)
    return psi, labels, labels


def _references(system: KerrSystem, labels, psi0, t):
    if labels is None:
        return psi0
    if system.vacuum_is_static():
        return psi0
    return np.stack([system.frame_vacuum(lab, t) for lab in labels], axis=1)


def _qubit_populations(system: KerrSystem, psi: np.ndarray) -> np.ndarray:
    nq, f, _ = system.dims
    p = (np.abs(psi) ** 2).reshape(nq, f, nq, -1)
    return np.moveaxis(p.sum(axis=1).reshape(nq * nq, -1), 0, -1)


def _boundary_population(system: KerrSystem, psi: np.ndarray) -> float:
    nq, f, _ = system.dims
    p = (np.abs(psi) ** 2).reshape(nq, f, nq, -1)
    return float(p[:, -1].sum(axis=(0, 1)).max())


def propagate_state(model, drives, frame: FrameSpec, sim: SimConfig, initial=None,
                    T: float = 0.0, system: KerrSystem | None = None) -> PropagationResult:
    """Solve the Schrödinger equation for one or more initial states.

    ``initial`` is a list of computational labels ``(j_L, j_R)`` (coupler in
    the frame vacuum) or an array of state vectors.  Phases are
    ``arg <ref_k(t)|ψ_k(t)>`` unwrapped along the trajectory, with
    ``ref_k(t)`` the frame vacuum of the initial label.
    """
    if system is None:
        system = KerrSystem(model, drives, frame, sim)
    psi0, labels, ref_labels = _initial_states(system, initial)
    times = _time_grid(T, sim.dt) if T > 0 else np.array([0.0])
    k = psi0.shape[1]
    nt = len(times)
    overlaps = np.empty((nt, k), dtype=complex)
    pops = np.empty((nt, k, system.dims[0] ** 2))
    leak = np.empty((nt, k))
    boundary = 0.0
    comp_idx = [system.dims[0] * jl + jr for jl, jr in COMPUTATIONAL]

    def record(i, psi):
        nonlocal boundary
        ref = _references(system, ref_labels, psi0, times[i])
        overlaps[i] = np.einsum("dk,dk->k", np.conj(ref), psi)
        pops[i] = _qubit_populations(system, psi)
        if ref_labels is not None:
            refs = np.stack([system.frame_vacuum(lab, times[i]) for lab in COMPUTATIONAL], 1) \
                if not system.vacuum_is_static() else _comp_refs(system)
            leak[i] = 1.0 - (np.abs(np.conj(refs).T @ psi) ** 2).sum(axis=0)
        else:
            leak[i] = 1.0 - pops[i][:, comp_idx].sum(axis=1)
        boundary = max(boundary, _boundary_population(system, psi))

    psi = psi0.copy()
    record(0, psi)
    if nt > 1:
        if sim.integrator == "rk":
            traj = _rk_solve(system, psi0, times, sim)
            for i in range(1, nt):
                record(i, traj[i])
            psi = traj[-1]
        else:
            for start, us in step_unitaries(system, times, sim):
                for j, u in enumerate(us):
                    psi = u @ psi
                    record(start + j + 1, psi)
    drift = float(np.max(np.abs(np.linalg.norm(psi, axis=0) - 1.0)))
    if drift > sim.norm_tolerance:
        raise IntegratorError(f"norm drift {drift:.2e} exceeds {sim.norm_tolerance:.1e}")
    if sim.check_truncation and boundary > sim.truncation_tolerance:
        raise TruncationError(
            f"population {boundary:.2e} reached the highest coupler level; increase res_dim"
        )
    phases = np.unwrap(np.angle(overlaps), axis=0).T
    return PropagationResult(times, psi, phases, pops, leak.T, labels, boundary, drift)


def _comp_refs(system: KerrSystem) -> np.ndarray:
    return np.stack([system.frame_vacuum(lab) for lab in COMPUTATIONAL], axis=1)


def controlled_phase(model, drive, frame: FrameSpec, sim: SimConfig, tau: float,
                     leakage_limit: float = 1e-3) -> float:
    """``φ_10 + φ_01 - φ_00 - φ_11`` after time ``tau`` (radians, e^{-iEt} convention).

    ``drive`` is a :class:`DriveParams` (constant coupler drive) or a
    :class:`ResonatorDrive`.
    """
    return controlled_phase_trace(model, drive, frame, sim, tau, leakage_limit)[1][-1]


def controlled_phase_trace(model, drive, frame, sim, tau, leakage_limit=1e-3):
    """Times and the unwrapped controlled phase along the trajectory."""
    if isinstance(drive, DriveParams):
        drive = ResonatorDrive.constant(drive)
    drives = [drive] if drive is not None else []
    if tau == 0:
        return np.array([0.0]), np.array([0.0])
    res = propagate_state(model, drives, frame, sim, COMPUTATIONAL, tau)
    worst = float(res.leakage[:, -1].max())
    if worst > leakage_limit:
        raise LeakageError(f"leakage {worst:.2e} invalidates the phase reading")
    p = {lab: res.phase(lab) for lab in COMPUTATIONAL}
    return res.times, p[1, 0] + p[0, 1] - p[0, 0] - p[1, 1]


def propagate_subspace_map(model, drives, frame: FrameSpec, sim: SimConfig, T: float,
                           system: KerrSystem | None = None):
    """Projected 4x4 map on the computational x frame-vacuum subspace and its leakage.

    Also returns the propagation result for access to population traces.
    """
    if system is None:
        system = KerrSystem(model, drives, frame, sim)
    res = propagate_state(model, drives, frame, sim, COMPUTATIONAL, T, system=system)
    if system.vacuum_is_static():
        refs = _comp_refs(system)
    else:
        refs = np.stack([system.frame_vacuum(lab, res.times[-1]) for lab in COMPUTATIONAL], 1)
    m = np.conj(refs).T @ res.states
    leakage = float(1.0 - np.mean((np.abs(m) ** 2).sum(axis=0)))
    return m, max(leakage, 0.0), res


# ---------------------------------------------------------------------------
# open-system propagation
# ---------------------------------------------------------------------------


def _dissipator(rho, ops, opsdag_ops):
    out = np.zeros_like(rho)
    for c, cdc in zip(ops, opsdag_ops):
        out += c @ rho @ c.conj().T - 0.5 * (cdc @ rho + rho @ cdc)
    return out


def _dissipate(rho, ops, cdcs, h):
    if not ops:
        return rho
    k1 = _dissipator(rho, ops, cdcs)
    k2 = _dissipator(rho + 0.5 * h * k1, ops, cdcs)
    k3 = _dissipator(rho + 0.5 * h * k2, ops, cdcs)
    k4 = _dissipator(rho + h * k3, ops, cdcs)
    return rho + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def lindblad_propagate(model, drives, frame: FrameSpec, sim: SimConfig, noise: NoiseSpec,
                       T: float, initial=None, system: KerrSystem | None = None) -> DensityResult:
    """Lindblad evolution by Strang splitting of unitary and dissipative parts.

    ``initial`` is a density matrix, a stack of operators ``(k, d, d)``
    (propagated linearly), or a list of computational labels.
    """
    if system is None:
        system = KerrSystem(model, drives, frame, sim)
    if system.dim > _MAX_DENSITY_DIM:
        raise ResourceError(
            f"density-matrix dimension {system.dim} exceeds the cap {_MAX_DENSITY_DIM}"
        )
    if initial is None:
        initial = [(0, 0)]
    if isinstance(initial, np.ndarray):
        rho = initial.astype(complex)
        if rho.ndim == 2:
            rho = rho[None]
    else:
        vecs = [system.frame_vacuum(tuple(lab)) for lab in initial]
        rho = np.stack([np.outer(v, v.conj()) for v in vecs])
    ops = system.collapse_operators(noise)
    cdcs = [c.conj().T @ c for c in ops]
    times = _time_grid(T, sim.dt) if T > 0 else np.array([0.0])
    nq = system.dims[0]
    pops = [np.real(np.einsum("kii->ki", rho))]
    tr0 = np.einsum("kii->k", rho)
    for start, us in step_unitaries(system, times, sim):
        for j, u in enumerate(us):
            h = times[start + j + 1] - times[start + j]
            rho = _dissipate(rho, ops, cdcs, 0.5 * h)
            rho = u @ rho @ u.conj().T
            rho = _dissipate(rho, ops, cdcs, 0.5 * h)
            pops.append(np.real(np.einsum("kii->ki", rho)))
    tr_err = float(np.max(np.abs(np.einsum("kii->k", rho) - tr0)))
    if tr_err > 1e-8:
        raise IntegratorError(f"trace drift {tr_err:.2e} exceeds 1e-8")
    diag = np.stack(pops, axis=1)
    _, f, _ = system.dims
    qpops = diag.reshape(diag.shape[0], diag.shape[1], nq, f, nq).sum(axis=3)
    return DensityResult(times, rho, tr_err, qpops.reshape(*qpops.shape[:2], nq * nq))


def propagate_channel(model, drives, frame, sim, noise, T, system=None) -> np.ndarray:
    """Process tensor ``S[a, b, i, j] = <a| E(|i><j|) |b>`` on the computational subspace."""
    if system is None:
        system = KerrSystem(model, drives, frame, sim)
    refs = _comp_refs(system)
    basis = np.stack([np.outer(refs[:, i], refs[:, j].conj())
                      for i in range(4) for j in range(4)])
    out = lindblad_propagate(model, drives, frame, sim, noise, T, basis, system=system)
    if system.vacuum_is_static():
        refs_t = refs
    else:
        refs_t = np.stack([system.frame_vacuum(lab, out.times[-1]) for lab in COMPUTATIONAL], 1)
    proj = np.einsum("da,kde,eb->kab", refs_t.conj(), out.states, refs_t)
    return proj.reshape(4, 4, 4, 4).transpose(2, 3, 0, 1)


# ---------------------------------------------------------------------------
# exact (self-Kerr inclusive) static spectrum of the driven coupler
# ---------------------------------------------------------------------------


def _driven_block_energy(det: float, kerr: float, amplitude: float, dim: int) -> float:
    """Lowest-displacement eigenvalue of ``-det a†a + kerr/2 a†²a² + D(a + a†)``.

    Built in the frame displaced by ``D/det`` so the relevant eigenstate is
    close to the vacuum; it is chosen by maximal vacuum overlap.
    """
    a = _lower(dim)
    ad = a.T
    beta = amplitude / det
    h = (-det * ad @ a
         + 0.5 * kerr * (ad @ ad @ a @ a + 2 * beta * (ad @ ad @ a + ad @ a @ a)
                         + beta**2 * (ad @ ad + a @ a + 4 * ad @ a)
                         + 2 * beta**3 * (a + ad))
         + (amplitude**2 / det + 0.5 * kerr * beta**4) * np.eye(dim))
    w, v = np.linalg.eigh(h)
    k = int(np.argmax(np.abs(v[0]) ** 2))
    return float(w[k])


def exact_zz(model, drive: DriveParams, res_dim: int = 30) -> float:
    """Residual ZZ from the exact driven-coupler spectrum including the self-Kerr."""
    e = {}
    for jl in (0, 1):
        for jr in (0, 1):
            det = drive.detuning - jl * model.chi_left - jr * model.chi_right
            e[jl, jr] = _driven_block_energy(det, model.eta_res, drive.amplitude, res_dim)
    return e[1, 1] + e[0, 0] - e[1, 0] - e[0, 1] + model.zz_static


def exact_stark_shifts(model, drive: DriveParams, res_dim: int = 30) -> tuple[float, float]:
    e = {}
    for jl, jr in ((0, 0), (1, 0), (0, 1)):
        det = drive.detuning - jl * model.chi_left - jr * model.chi_right
        e[jl, jr] = _driven_block_energy(det, model.eta_res, drive.amplitude, res_dim)
    return e[1, 0] - e[0, 0], e[0, 1] - e[0, 0]


def solve_exact_cancellation(model, detuning: float, res_dim: int = 30,
                             tol: float = 1e-10) -> float:
    """Cancellation amplitude of :func:`exact_zz`, bracketed around the E_zp root."""
    d0 = solve_cancellation(model, detuning).amplitude
    if d0 == 0:
        return 0.0

    def f(d):
        return exact_zz(model, DriveParams(d, detuning), res_dim)

    lo, hi = 0.5 * d0, 1.5 * d0
    for _ in range(8):
        if np.sign(f(lo)) != np.sign(f(hi)):
            break
        lo, hi = 0.5 * lo, hi * 1.25
    else:
        raise NoCancellationPointError("exact residual ZZ has no sign change near the E_zp root")
    return float(brentq(f, lo, hi, xtol=tol))


def solve_time_domain_cancellation(model, detuning: float, tau: float = 300.0,
                                   sim: SimConfig | None = None, frame: FrameSpec | None = None,
                                   tol: float = 1e-9) -> float:
    """Drive amplitude at which the simulated controlled phase after ``tau`` vanishes.

    Bracketed around the E_zp root and refined with ``brentq``; independent
    of the exact-spectrum route in :func:`solve_exact_cancellation`.
    """
    sim = sim or SimConfig(dt=0.05, qubit_levels=2, res_dim=6)
    frame = frame or FrameSpec("displaced")
    d0 = solve_cancellation(model, detuning).amplitude
    if d0 == 0:
        return 0.0

    def f(d):
        return controlled_phase(model, DriveParams(d, detuning), frame, sim, tau)

    lo, hi = 0.9 * d0, 1.1 * d0
    for _ in range(8):
        if np.sign(f(lo)) != np.sign(f(hi)):
            break
        lo, hi = 0.8 * lo, 1.2 * hi
    else:
        raise NoCancellationPointError("controlled phase keeps its sign near the E_zp root")
    return float(brentq(f, lo, hi, xtol=tol))
