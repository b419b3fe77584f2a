"""Average gate fidelity of projected two-qubit maps and channels."""

from __future__ import annotations

import numpy as np
from scipy.optimize import least_squares, minimize

D = 4
# (j_L, j_R) occupation of each computational basis index
_OCC = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)

CNOT_ONE = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
CNOT_ZERO = np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=complex)
CZ = np.diag([1, 1, 1, -1]).astype(complex)
IDENTITY = np.eye(4, dtype=complex)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)


def local_z(theta_l: float, theta_r: float) -> np.ndarray:
    """Diagonal ``exp(i(θ_L j_L + θ_R j_R))`` on the computational basis."""
    return np.diag(np.exp(1j * (_OCC @ np.array([theta_l, theta_r]))))


def dressed_target(target: np.ndarray, params) -> np.ndarray:
    pre = local_z(params[0], params[1])
    post = local_z(params[2], params[3])
    return post @ target @ pre


def unitary_fidelity(m: np.ndarray, target: np.ndarray) -> float:
    """``(Tr M†M + |Tr U†M|²) / (d(d+1))``; reduces to the unitary formula when M is unitary."""
    return float((np.real(np.trace(m.conj().T @ m)) + abs(np.trace(target.conj().T @ m)) ** 2)
                 / (D * (D + 1)))


def channel_fidelity(process: np.ndarray, target: np.ndarray) -> float:
    """Average fidelity of a projected channel ``S[a, b, i, j] = <a|E(|i><j|)|b>``."""
    entangle = np.real(np.einsum("ai,bj,abij->", target.conj(), target, process))
    trace = np.real(np.einsum("aaii->", process))
    return float((entangle + trace) / (D * (D + 1)))


def _phase_seed(m: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Least-squares Z phases aligning the dominant entries of ``m`` with ``target``."""
    rows = np.argmax(np.abs(target), axis=0)
    resid_phase = np.angle(m[rows, range(D)]) - np.angle(target[rows, range(D)])

    def res(x):
        pred = _OCC @ x[:2] + _OCC[rows] @ x[2:4] + x[4]
        diff = resid_phase - pred
        return np.concatenate([np.cos(diff) - 1.0, np.sin(diff)])

    best = None
    for start in (np.zeros(5), np.full(5, 0.5), np.full(5, -0.5)):
        sol = least_squares(res, start)
        if best is None or sol.cost < best.cost:
            best = sol
    return best.x[:4]


def _optimize_z(score, seed):
    best = minimize(lambda x: -score(x), seed, method="BFGS", options={"gtol": 1e-12})
    x = best.x
    for delta in (np.array([np.pi, 0, -np.pi, 0]), np.array([0, np.pi, 0, -np.pi])):
        alt = minimize(lambda y: -score(y), seed + delta, method="BFGS",
                       options={"gtol": 1e-12})
        if alt.fun < best.fun:
            best, x = alt, alt.x
    return float(-best.fun), np.mod(x, 2 * np.pi)


def average_gate_fidelity(m: np.ndarray, target: np.ndarray, optimize_local_z: bool = True,
                          return_phases: bool = False):
    """Average gate fidelity of the projected map ``m`` against ``target``.

    With ``optimize_local_z`` the target is dressed with single-qubit Z
    rotations before and after (four angles; the global phase drops out)
    and the fidelity is maximized over them.
    """
    m = np.asarray(m, dtype=complex)
    if not optimize_local_z:
        f = unitary_fidelity(m, target)
        return (f, np.zeros(4)) if return_phases else f
    f, x = _optimize_z(lambda p: unitary_fidelity(m, dressed_target(target, p)),
                       _phase_seed(m, target))
    return (f, x) if return_phases else f


def channel_average_fidelity(process: np.ndarray, target: np.ndarray, phases=None):
    """Channel fidelity, optionally with the target dressed by given Z phases."""
    if phases is not None:
        target = dressed_target(target, phases)
    return channel_fidelity(process, target)
