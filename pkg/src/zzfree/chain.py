"""Chains of N transmons linked by N-1 driven resonators.

Qubit ``k`` couples dispersively to resonator ``j`` with shift ``chi[j][k]``;
in a clean chain only ``chi[j][j]`` and ``chi[j][j+1]`` are nonzero, while
small distant entries produce residual long-range couplings once the
resonators are driven.  Qubit indices in :class:`ResidualCouplings` are
1-based to match the usual ``χ̃′_12`` naming.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import root

from .dynamics import _driven_block_energy, _lower, coherent_state
from .effective import POLE_GUARD, solve_pair_cancellation
from .errors import NoCancellationPointError, SingularityError

TWO_PI = 2.0 * math.pi
SPECTRAL_RES_DIM = 30
TIME_DOMAIN_RES_DIM = 8


class CrosstalkWarning(UserWarning):
    """Two resonator drives share a frequency offset and may cross-talk."""


@dataclass(frozen=True)
class ChainSpec:
    """Dressed parameters of an N-qubit, (N-1)-resonator chain.

    ``chi[j][k]`` couples resonator ``j`` to qubit ``k`` (0-based).
    ``zz_static`` maps 0-based qubit pairs to static ZZ strengths.
    """

    qubits: tuple
    resonators: tuple
    chi: tuple
    zz_static: dict
    detunings: tuple
    amplitudes: tuple | None = None
    resonator_kerr: tuple | None = None

    def __post_init__(self):
        n = len(self.qubits)
        if n < 2:
            raise ValueError("a chain needs at least two qubits")
        object.__setattr__(self, "qubits", tuple(tuple(map(float, q)) for q in self.qubits))
        object.__setattr__(self, "resonators", tuple(map(float, self.resonators)))
        object.__setattr__(self, "chi", tuple(tuple(map(float, row)) for row in self.chi))
        object.__setattr__(self, "detunings", tuple(map(float, self.detunings)))
        zz = {}
        for key, value in dict(self.zz_static).items():
            i, j = sorted(int(x) for x in key)
            if i == j or not 0 <= i < j < n:
                raise ValueError(f"invalid static ZZ pair {key!r}")
            zz[i, j] = float(value)
        object.__setattr__(self, "zz_static", zz)
        m = n - 1
        amps = (0.0,) * m if self.amplitudes is None else tuple(map(float, self.amplitudes))
        kerr = (0.0,) * m if self.resonator_kerr is None else tuple(map(float, self.resonator_kerr))
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "resonator_kerr", kerr)
        if len(self.resonators) != m or len(self.detunings) != m or len(amps) != m \
                or len(kerr) != m:
            raise ValueError(f"{n} qubits need {m} resonators, detunings and amplitudes")
        if len(self.chi) != m or any(len(row) != n for row in self.chi):
            raise ValueError(f"chi must be a {m}x{n} matrix (resonator x qubit)")
        for j in range(m):
            if self.chi[j][j] == 0 or self.chi[j][j + 1] == 0:
                raise ValueError(f"resonator {j} must couple to both adjacent qubits")
        self.check_poles()
        if len(set(self.detunings)) < m:
            warnings.warn("equal drive detunings on different resonators", CrosstalkWarning,
                          stacklevel=3)

    @property
    def n_qubits(self) -> int:
        return len(self.qubits)

    @property
    def n_resonators(self) -> int:
        return len(self.resonators)

    def adjacent_zz(self, j: int) -> float:
        return self.zz_static.get((j, j + 1), 0.0)

    def with_amplitudes(self, amplitudes) -> "ChainSpec":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CrosstalkWarning)
            return ChainSpec(self.qubits, self.resonators, self.chi, self.zz_static,
                             self.detunings, tuple(amplitudes), self.resonator_kerr)

    def block_detuning(self, j: int, occupation) -> float:
        return self.detunings[j] - float(np.dot(self.chi[j], occupation))

    def check_poles(self) -> None:
        for j in range(self.n_resonators):
            for occ in itertools.product((0, 1), repeat=self.n_qubits):
                if abs(self.block_detuning(j, occ)) < POLE_GUARD:
                    raise SingularityError(
                        f"resonator {j} is resonant for qubit occupations {occ}"
                    )

    def static_energy(self, occupation) -> float:
        return sum(v * occupation[i] * occupation[k] for (i, k), v in self.zz_static.items())

    def to_dict(self) -> dict:
        return {
            "qubits": [list(q) for q in self.qubits],
            "resonators": list(self.resonators),
            "chi": [list(r) for r in self.chi],
            "zz_static": [[i, k, v] for (i, k), v in sorted(self.zz_static.items())],
            "detunings": list(self.detunings),
            "amplitudes": list(self.amplitudes),
            "resonator_kerr": list(self.resonator_kerr),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChainSpec":
        zz = data["zz_static"]
        if isinstance(zz, dict):
            zz = {tuple(int(x) for x in k.split(",")) if isinstance(k, str) else k: v
                  for k, v in zz.items()}
        else:
            zz = {(int(i), int(k)): v for i, k, v in zz}
        return cls(data["qubits"], data["resonators"], data["chi"], zz, data["detunings"],
                   data.get("amplitudes"), data.get("resonator_kerr"))


@dataclass
class ResidualCouplings:
    """Residual couplings in GHz keyed by sorted 1-based qubit tuples."""

    two_body: dict = field(default_factory=dict)
    three_body: dict = field(default_factory=dict)

    def zz(self, i: int, j: int) -> float:
        return self.two_body[tuple(sorted((i, j)))]

    def zzz(self, i: int, j: int, k: int) -> float:
        return self.three_body[tuple(sorted((i, j, k)))]

    def to_dict(self) -> dict:
        return {
            "two_body": {"".join(map(str, k)): v for k, v in sorted(self.two_body.items())},
            "three_body": {"".join(map(str, k)): v for k, v in sorted(self.three_body.items())},
        }


# ---------------------------------------------------------------------------
# cancellation
# ---------------------------------------------------------------------------


def solve_chain_cancellation(spec: ChainSpec) -> list[float]:
    """Per-resonator amplitudes cancelling each adjacent static ZZ independently.

    Only the two adjacent dispersive shifts of each resonator enter; distant
    entries are left to :func:`joint_zero`.
    """
    out, failed = [], []
    for j in range(spec.n_resonators):
        try:
            point = solve_pair_cancellation(spec.detunings[j], spec.chi[j][j], spec.chi[j][j + 1],
                                            spec.adjacent_zz(j))
            out.append(point.amplitude)
        except NoCancellationPointError as exc:
            failed.append(f"resonator {j}: {exc}")
    if failed:
        raise NoCancellationPointError("; ".join(failed))
    return out


# ---------------------------------------------------------------------------
# residual couplings
# ---------------------------------------------------------------------------


def _combination(energy, members, n):
    """Alternating-sign sum of ``energy(occ)`` over occupations of ``members``."""
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(members)):
        occ = [0] * n
        for m, b in zip(members, bits):
            occ[m] = b
        sign = (-1) ** (len(members) - sum(bits))
        total += sign * energy(tuple(occ))
    return total


def _couplings_from(energy, n) -> ResidualCouplings:
    out = ResidualCouplings()
    for pair in itertools.combinations(range(n), 2):
        out.two_body[tuple(p + 1 for p in pair)] = _combination(energy, pair, n)
    for triple in itertools.combinations(range(n), 3):
        out.three_body[tuple(p + 1 for p in triple)] = _combination(energy, triple, n)
    return out


def spectral_energies(spec: ChainSpec, amplitudes=None, res_dim: int = SPECTRAL_RES_DIM):
    """Configuration energies (rotating frame, qubits in 0/1) from the driven spectrum.

    The chain Hamiltonian conserves every qubit number and the resonators only
    couple through them, so each configuration block is a product of driven
    oscillators diagonalized separately.
    """
    amps = spec.amplitudes if amplitudes is None else tuple(amplitudes)
    energies = {}
    for occ in itertools.product((0, 1), repeat=spec.n_qubits):
        e = spec.static_energy(occ)
        for j in range(spec.n_resonators):
            e += _driven_block_energy(spec.block_detuning(j, occ), spec.resonator_kerr[j],
                                      amps[j], res_dim)
        energies[occ] = e
    return energies


def _chain_operators(spec: ChainSpec, res_dim: int):
    n, m = spec.n_qubits, spec.n_resonators
    dims = [2] * n + [res_dim] * m
    eye = [np.eye(d) for d in dims]

    def embed(op, site):
        mats = list(eye)
        mats[site] = op
        out = mats[0]
        for mat in mats[1:]:
            out = np.kron(out, mat)
        return out

    nums = [embed(np.diag([0.0, 1.0]), k) for k in range(n)]
    lowers = [embed(_lower(res_dim), n + j) for j in range(m)]
    return nums, lowers, dims


def chain_hamiltonian(spec: ChainSpec, amplitudes, res_dim: int = TIME_DOMAIN_RES_DIM):
    """Full chain Hamiltonian (qubits truncated to 0/1) in the frame displaced by ``D_j/Δ_j``.

    Rotating at the qubit frequencies and at each drive frequency, with the
    rotating-wave approximation on the drives.
    """
    nums, lowers, dims = _chain_operators(spec, res_dim)
    dim = int(np.prod(dims))
    h = np.zeros((dim, dim))
    for (i, k), v in spec.zz_static.items():
        h += v * nums[i] @ nums[k]
    for j, a in enumerate(lowers):
        d, det, kerr = amplitudes[j], spec.detunings[j], spec.resonator_kerr[j]
        beta = d / det
        ad = a.T
        shift = sum(spec.chi[j][k] * nums[k] for k in range(spec.n_qubits))
        x = ad @ a + beta * (a + ad) + beta**2 * np.eye(dim)
        h += -det * x + d * (a + ad + 2 * beta * np.eye(dim)) + shift @ x
        if kerr:
            b = a + beta * np.eye(dim)
            h += 0.5 * kerr * b.T @ b.T @ b @ b
    return h, dims


def time_domain_overlaps(spec: ChainSpec, amplitudes=None, tau: float = 1000.0,
                         res_dim: int = TIME_DOMAIN_RES_DIM, step: float = 0.5):
    """Overlaps ``<ψ_occ(0)|ψ_occ(t)>`` of each configuration on a grid ``0 < t <= τ``.

    Each configuration starts with its resonators in the coherent state of
    their configuration-dependent steady displacement (relative to the frame).
    Returns ``(times, {occ: overlaps})``.
    """
    amps = spec.amplitudes if amplitudes is None else tuple(amplitudes)
    h, dims = chain_hamiltonian(spec, amps, res_dim)
    w, v = np.linalg.eigh(h)
    times = np.linspace(0.0, tau, int(np.ceil(tau / step)) + 1)[1:]
    phases = np.exp(-1j * TWO_PI * np.outer(w, times))
    n = spec.n_qubits
    overlaps = {}
    for occ in itertools.product((0, 1), repeat=n):
        psi = np.array([1.0 + 0j])
        for k in range(n):
            psi = np.kron(psi, np.eye(2)[occ[k]])
        for j in range(spec.n_resonators):
            rel = amps[j] / spec.block_detuning(j, occ) - amps[j] / spec.detunings[j]
            psi = np.kron(psi, coherent_state(rel, res_dim))
        weights = np.abs(v.conj().T @ psi) ** 2
        overlaps[occ] = weights @ phases
    return times, overlaps


def residual_couplings(spec: ChainSpec, amplitudes=None, method: str = "spectral",
                       tau: float = 1000.0, res_dim: int | None = None) -> ResidualCouplings:
    """Two- and three-body residual couplings of the driven chain in GHz.

    ``spectral`` combines configuration energies; ``time-domain`` combines
    the phases accumulated over ``tau`` ns, ``χ̃ = -arg(∏ overlap^±) / (2π τ)``,
    unwrapped along the trajectory so couplings above ``1/(2τ)`` are not aliased.
    """
    if method == "spectral":
        e = spectral_energies(spec, amplitudes, res_dim or SPECTRAL_RES_DIM)
        return _couplings_from(e.__getitem__, spec.n_qubits)
    if method == "time-domain":
        if spec.n_qubits > 4:
            raise ValueError("time-domain residuals are limited to four qubits")
        _, ov = time_domain_overlaps(spec, amplitudes, tau, res_dim or TIME_DOMAIN_RES_DIM)
        n = spec.n_qubits
        out = ResidualCouplings()
        for size, target in ((2, out.two_body), (3, out.three_body)):
            for members in itertools.combinations(range(n), size):
                prod = 1.0 + 0j
                for bits in itertools.product((0, 1), repeat=size):
                    occ = [0] * n
                    for mm, b in zip(members, bits):
                        occ[mm] = b
                    sign = (-1) ** (size - sum(bits))
                    z = ov[tuple(occ)] / np.abs(ov[tuple(occ)])
                    prod = prod * (z if sign > 0 else np.conj(z))
                phase = np.unwrap(np.concatenate([[0.0], np.angle(prod)]))[-1]
                target[tuple(mm + 1 for mm in members)] = float(-phase / (TWO_PI * tau))
        return out
    raise ValueError(f"unknown method {method!r}; use 'spectral' or 'time-domain'")


def joint_zero(spec: ChainSpec, start=None, tol: float = 1e-12) -> list[float]:
    """Amplitudes zeroing every adjacent residual simultaneously (spectral method)."""
    x0 = np.asarray(start if start is not None else solve_chain_cancellation(spec), float)
    n = spec.n_qubits

    def f(x):
        e = spectral_energies(spec, x)
        return [_combination(e.__getitem__, (j, j + 1), n) * 1e3 for j in range(n - 1)]

    sol = root(f, x0, method="hybr", tol=tol)
    if not sol.success or np.max(np.abs(sol.fun)) > 1e-7:
        raise NoCancellationPointError(f"joint zero refinement failed: {sol.message}")
    return [float(x) for x in sol.x]


@dataclass
class DriveMap:
    """Residual couplings on a grid over the first two resonator amplitudes."""

    d1: np.ndarray
    d2: np.ndarray
    couplings: dict
    joint_zero: list | None = None

    def rows(self):
        """Flat rows ``(D1, D2, value per coupling key)`` in grid order."""
        keys = sorted(self.couplings)
        for a in range(len(self.d1)):
            for b in range(len(self.d2)):
                yield [self.d1[a], self.d2[b]] + [self.couplings[k][a, b] for k in keys]

    @property
    def header(self):
        return ["D1", "D2"] + sorted(self.couplings)


def sweep_drive_map(spec: ChainSpec, d1_values, d2_values, find_zero: bool = True) -> DriveMap:
    """Spectral residuals over a grid of (D_1, D_2); other amplitudes keep the chain's values."""
    if spec.n_resonators < 2:
        raise ValueError("a drive map needs at least two resonators")
    d1, d2 = np.asarray(d1_values, float), np.asarray(d2_values, float)
    cols = {}
    base = list(spec.amplitudes)
    for a, x in enumerate(d1):
        for b, y in enumerate(d2):
            amps = [x, y] + base[2:]
            res = residual_couplings(spec, amps)
            for key, value in itertools.chain(res.two_body.items(), res.three_body.items()):
                name = ("zzz" if len(key) == 3 else "zz") + "".join(map(str, key))
                cols.setdefault(name, np.empty((len(d1), len(d2))))[a, b] = value
    zero = joint_zero(spec) if find_zero else None
    return DriveMap(d1, d2, cols, zero)
