"""Bare transmon-resonator-transmon circuit and its dressed Kerr parameters.

The bare Hamiltonian is assembled in the product basis ``(j_L, n_C, j_R)`` of
transmon eigenstates and resonator Fock states.  All energies are linear
frequencies in GHz.
"""

from __future__ import annotations

import dataclasses
import itertools
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import LinAlgError, eigh, eigh_tridiagonal
from scipy.optimize import least_squares

from .errors import AmbiguousDressingError, CalibrationError, NumericalFailure, ResourceError

Label = tuple[int, int, int]

#: Normal-ordered patterns of the dressed charge-operator expansion.  Each
#: pattern is ``(uses n_L, uses n_R, lowered mode)``.
DRIVE_PATTERNS = {
    "b_L": (0, 0, "L"),
    "n_R b_L": (0, 1, "L"),
    "n_L b_L": (1, 0, "L"),
    "n_L n_R b_L": (1, 1, "L"),
    "b_R": (0, 0, "R"),
    "n_L b_R": (1, 0, "R"),
    "n_R b_R": (0, 1, "R"),
    "n_L n_R b_R": (1, 1, "R"),
}

#: Named coefficients of the control-charge expansion used by the CR gate.
CR_COEFFICIENTS = {
    "A_L": "b_L",
    "A_R": "b_R",
    "A_CX": "n_L b_R",
    "A'_R": "n_R b_R",
    "A'_CX": "n_L n_R b_R",
}

DEFAULT_MAX_DIM = 6000


@dataclass(frozen=True)
class TransmonSpec:
    ec: float
    ej: float
    charge_cutoff: int = 30
    kept_levels: int = 9

    def __post_init__(self):
        if not (np.isfinite(self.ec) and self.ec > 0):
            raise ValueError(f"ec must be positive, got {self.ec}")
        if not (np.isfinite(self.ej) and self.ej > 0):
            raise ValueError(f"ej must be positive, got {self.ej}")
        if self.charge_cutoff < 10:
            raise ValueError("charge_cutoff must be at least 10")
        if not 3 <= self.kept_levels <= 2 * self.charge_cutoff + 1:
            raise ValueError("kept_levels must lie in [3, 2*charge_cutoff+1]")
        if self.ej / self.ec < 20:
            warnings.warn(
                f"E_J/E_C = {self.ej / self.ec:.1f} < 20 is outside the transmon regime",
                stacklevel=2,
            )

    @property
    def asymptotic_charge_element(self) -> float:
        """Large-E_J/E_C limit of |<0|n|1>|, ``(E_J / 32 E_C)^(1/4)``."""
        return (self.ej / (32.0 * self.ec)) ** 0.25


@dataclass(frozen=True)
class ResonatorSpec:
    bare_freq: float
    fock_dim: int = 8

    def __post_init__(self):
        if not self.bare_freq > 0:
            raise ValueError("bare_freq must be positive")
        if self.fock_dim < 2:
            raise ValueError("fock_dim must be at least 2")


@dataclass(frozen=True)
class CouplingSpec:
    g_left: float
    g_right: float

    def __post_init__(self):
        if not (np.isfinite(self.g_left) and np.isfinite(self.g_right)):
            raise ValueError("coupling strengths must be finite")


@dataclass(frozen=True)
class CircuitSpec:
    """The complete bare parameter set of the two-qubit device."""

    left: TransmonSpec
    right: TransmonSpec
    resonator: ResonatorSpec
    coupling: CouplingSpec

    def __post_init__(self):
        for name, tm, g in (("left", self.left, self.coupling.g_left),
                            ("right", self.right, self.coupling.g_right)):
            w01 = transmon_spectrum(tm)[0][1]
            ratio = abs(g) / abs(w01 - self.resonator.bare_freq)
            if ratio >= 0.5:
                warnings.warn(
                    f"{name} coupling ratio |g|/|w_q - w_C| = {ratio:.2f} violates "
                    "the dispersive guard",
                    stacklevel=2,
                )

    def with_truncation(self, charge_cutoff=None, kept_levels=None, fock_dim=None):
        def tm(t):
            return dataclasses.replace(
                t,
                charge_cutoff=charge_cutoff or t.charge_cutoff,
                kept_levels=kept_levels or t.kept_levels,
            )

        res = dataclasses.replace(self.resonator, fock_dim=fock_dim or self.resonator.fock_dim)
        return CircuitSpec(tm(self.left), tm(self.right), res, self.coupling)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class LabeledSpectrum:
    """Dressed eigenstates keyed by the bare label they overlap most with."""

    labels: tuple[Label, ...]
    energies: np.ndarray
    overlaps: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise NumericalFailure("dressed labeling is not injective")

    @property
    def _index(self):
        return {lab: k for k, lab in enumerate(self.labels)}

    def __contains__(self, label):
        return tuple(label) in self._index

    def energy(self, *label) -> float:
        label = label[0] if len(label) == 1 else label
        return float(self.energies[self._index[tuple(label)]])

    def overlap(self, *label) -> float:
        label = label[0] if len(label) == 1 else label
        return float(self.overlaps[self._index[tuple(label)]])

    def vector(self, *label) -> np.ndarray:
        label = label[0] if len(label) == 1 else label
        return self.vectors[:, self._index[tuple(label)]]


@dataclass(frozen=True)
class DressedModel:
    """Parameters of the dressed Kerr model; all values in GHz."""

    omega_left: float
    omega_right: float
    omega_res: float
    eta_left: float
    eta_right: float
    eta_res: float
    chi_left: float
    chi_right: float
    zz_static: float
    j_eff: float = float("nan")
    drive_coeffs: tuple[tuple[str, float], ...] = ()
    gtilde_left: float = float("nan")
    gtilde_right: float = float("nan")

    @property
    def detuning_lr(self) -> float:
        return self.omega_left - self.omega_right

    def drive_coefficient(self, operator: str, pattern: str) -> float:
        """Coefficient of ``pattern`` in the dressed expansion of ``operator``.

        ``operator`` is ``"n_L"`` or ``"n_R"``; ``pattern`` is a key of
        :data:`DRIVE_PATTERNS` or one of the names in :data:`CR_COEFFICIENTS`.
        Missing entries are zero.
        """
        pattern = CR_COEFFICIENTS.get(pattern, pattern)
        return dict(self.drive_coeffs).get(f"{operator}:{pattern}", 0.0)

    def drive_expansion(self, operator: str) -> dict[str, float]:
        prefix = operator + ":"
        return {k[len(prefix):]: v for k, v in self.drive_coeffs if k.startswith(prefix)}

    def replace(self, **changes) -> "DressedModel":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "drive_coeffs":
                continue
            out[f.name] = float(getattr(self, f.name))
        out["detuning_lr"] = self.detuning_lr
        out["drive_coeffs"] = {k: float(v) for k, v in self.drive_coeffs}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DressedModel":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in data.items() if k in names and k != "drive_coeffs"}
        coeffs = data.get("drive_coeffs", {})
        if isinstance(coeffs, dict):
            coeffs = tuple(sorted((str(k), float(v)) for k, v in coeffs.items()))
        else:
            coeffs = tuple((str(k), float(v)) for k, v in coeffs)
        return cls(**{k: float(v) for k, v in kwargs.items()}, drive_coeffs=coeffs)


# ---------------------------------------------------------------------------
# single transmon
# ---------------------------------------------------------------------------


@lru_cache(maxsize=256)
def _transmon_cached(ec, ej, cutoff, kept):
    n = np.arange(-cutoff, cutoff + 1, dtype=float)
    try:
        w, v = eigh_tridiagonal(
            4.0 * ec * n**2, -0.5 * ej * np.ones(2 * cutoff), select="i",
            select_range=(0, kept - 1),
        )
    except LinAlgError as exc:
        raise NumericalFailure(f"transmon diagonalization failed: {exc}") from exc
    # sign convention: <k|n|k+1> > 0
    for k in range(kept - 1):
        if v[:, k] @ (n * v[:, k + 1]) < 0:
            v[:, k + 1] *= -1
    nmat = v.T @ (n[:, None] * v)
    w = w - w[0]
    w.setflags(write=False)
    nmat.setflags(write=False)
    return w, nmat


def transmon_spectrum(spec: TransmonSpec) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ground state at zero) and charge matrix in the eigenbasis."""
    return _transmon_cached(float(spec.ec), float(spec.ej), spec.charge_cutoff, spec.kept_levels)


# ---------------------------------------------------------------------------
# composite Hamiltonian
# ---------------------------------------------------------------------------


def bare_labels(left: TransmonSpec, right: TransmonSpec, res: ResonatorSpec) -> list[Label]:
    """Product-basis labels in the ordering used by :func:`build_full_hamiltonian`."""
    return list(itertools.product(range(left.kept_levels), range(res.fock_dim),
                                  range(right.kept_levels)))


def _annihilation(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1)


def build_full_hamiltonian(left: TransmonSpec, right: TransmonSpec, res: ResonatorSpec,
                           cpl: CouplingSpec, max_dim: int = DEFAULT_MAX_DIM) -> np.ndarray:
    """Bare Hamiltonian in GHz on the ``(j_L, n_C, j_R)`` product space."""
    kl, f, kr = left.kept_levels, res.fock_dim, right.kept_levels
    dim = kl * f * kr
    if dim > max_dim:
        raise ResourceError(f"Hilbert-space dimension {dim} exceeds the cap {max_dim}")
    el, nl = transmon_spectrum(left)
    er, nr = transmon_spectrum(right)
    a = _annihilation(f)
    il, ic, ir = np.eye(kl), np.eye(f), np.eye(kr)
    h = np.kron(np.kron(np.diag(el), ic), ir)
    h += np.kron(np.kron(il, res.bare_freq * (a.T @ a)), ir)
    h += np.kron(np.kron(il, ic), np.diag(er))
    x = a + a.T
    h += cpl.g_left * np.kron(np.kron(nl, x), ir)
    h += cpl.g_right * np.kron(np.kron(il, x), nr)
    return h


def charge_operators(spec: CircuitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Bare charge operators ``n_L`` and ``n_R`` on the full product space."""
    _, nl = transmon_spectrum(spec.left)
    _, nr = transmon_spectrum(spec.right)
    ic = np.eye(spec.resonator.fock_dim)
    big_l = np.kron(np.kron(nl, ic), np.eye(spec.right.kept_levels))
    big_r = np.kron(np.kron(np.eye(spec.left.kept_levels), ic), nr)
    return big_l, big_r


def diagonalize_and_label(h: np.ndarray, bare_basis, required=()) -> LabeledSpectrum:
    """Diagonalize ``h`` and attach to every eigenstate its dominant bare label.

    Eigenstates whose largest bare overlap does not exceed 0.5 carry no label.
    If any label in ``required`` ends up without an eigenstate an
    :class:`AmbiguousDressingError` is raised.  Eigenvector signs are fixed so
    that the amplitude on the assigned bare state is positive.
    """
    bare_basis = [tuple(int(i) for i in lab) for lab in bare_basis]
    try:
        w, v = eigh(h)
    except LinAlgError as exc:
        raise NumericalFailure(f"diagonalization failed: {exc}") from exc
    weights = np.abs(v) ** 2
    best = np.argmax(weights, axis=0)
    best_w = weights[best, np.arange(len(w))]
    keep = np.flatnonzero(best_w > 0.5)
    labels = tuple(bare_basis[best[k]] for k in keep)
    vecs = v[:, keep].copy()
    signs = np.sign(vecs[best[keep], np.arange(len(keep))])
    vecs *= signs
    spectrum = LabeledSpectrum(labels, w[keep].copy(), best_w[keep].copy(), vecs)
    for lab in required:
        lab = tuple(lab)
        if lab not in spectrum:
            idx = bare_basis.index(lab)
            raise AmbiguousDressingError(lab, float(weights[idx].max()))
    return spectrum


#: Labels needed to extract every field of :class:`DressedModel`.
REQUIRED_LABELS: tuple[Label, ...] = (
    (0, 0, 0), (1, 0, 0), (0, 0, 1), (1, 0, 1), (2, 0, 0), (0, 0, 2),
    (0, 1, 0), (0, 2, 0), (1, 1, 0), (0, 1, 1),
    (2, 0, 1), (1, 0, 2),
)


def labeled_spectrum(spec: CircuitSpec, required=REQUIRED_LABELS,
                     max_dim: int = DEFAULT_MAX_DIM) -> LabeledSpectrum:
    h = build_full_hamiltonian(spec.left, spec.right, spec.resonator, spec.coupling, max_dim)
    return diagonalize_and_label(h, bare_labels(spec.left, spec.right, spec.resonator), required)


def _basis_vector(spec: CircuitSpec, label: Label) -> np.ndarray:
    kl, f, kr = spec.left.kept_levels, spec.resonator.fock_dim, spec.right.kept_levels
    e = np.zeros(kl * f * kr)
    e[(label[0] * f + label[1]) * kr + label[2]] = 1.0
    return e


def effective_exchange(spec: CircuitSpec, spectrum: LabeledSpectrum) -> float:
    """Exchange coupling J from the block-diagonalized single-excitation sector.

    The dressed states labeled ``(1,0,0)`` and ``(0,0,1)`` are projected onto
    their bare counterparts and symmetrically orthonormalized; the
    off-diagonal element of the resulting 2x2 effective Hamiltonian is J.
    """
    labels = [(1, 0, 0), (0, 0, 1)]
    bare = np.stack([_basis_vector(spec, lab) for lab in labels], axis=1)
    dressed = np.stack([spectrum.vector(lab) for lab in labels], axis=1)
    energies = np.array([spectrum.energy(lab) for lab in labels])
    b = bare.T @ dressed
    s = b @ b.T
    sw, sv = np.linalg.eigh(s)
    s_inv_half = sv @ np.diag(sw ** -0.5) @ sv.T
    h_eff = s_inv_half @ b @ np.diag(energies) @ b.T @ s_inv_half
    return float(0.5 * (h_eff[0, 1] + h_eff[1, 0]))


def exchange_estimate(spec: CircuitSpec) -> float:
    """Perturbative resonator-mediated exchange J from bare frequencies."""
    wl = transmon_spectrum(spec.left)[0][1]
    wr = transmon_spectrum(spec.right)[0][1]
    wc = spec.resonator.bare_freq
    gl = spec.left.asymptotic_charge_element * spec.coupling.g_left
    gr = spec.right.asymptotic_charge_element * spec.coupling.g_right
    return gl * gr * (
        (wl + wr - 2 * wc) / (2 * (wl - wc) * (wr - wc))
        - (wl + wr + 2 * wc) / (2 * (wl + wc) * (wr + wc))
    )


def _pattern_coefficients(elem, lowered: str) -> dict[str, float]:
    """Invert the normal-ordered expansion from four ladder matrix elements.

    ``elem(jl, jr)`` returns the element lowering mode ``lowered`` out of the
    state ``(jl, jr)``.
    """
    if lowered == "R":
        # <jl, jr-1| O |jl, jr> = sqrt(jr) [c0 + cl*jl + cr*(jr-1) + clr*jl*(jr-1)]
        c0 = elem(0, 1)
        cl = elem(1, 1) - c0
        cr = elem(0, 2) / np.sqrt(2) - c0
        clr = elem(1, 2) / np.sqrt(2) - c0 - cl - cr
        return {"b_R": c0, "n_L b_R": cl, "n_R b_R": cr, "n_L n_R b_R": clr}
    c0 = elem(1, 0)
    cr = elem(1, 1) - c0
    cl = elem(2, 0) / np.sqrt(2) - c0
    clr = elem(2, 1) / np.sqrt(2) - c0 - cl - cr
    return {"b_L": c0, "n_R b_L": cr, "n_L b_L": cl, "n_L n_R b_L": clr}


def extract_drive_coefficients(spec: CircuitSpec, which: str = "left",
                               spectrum: LabeledSpectrum | None = None) -> dict[str, float]:
    """Dressed-basis expansion coefficients of the bare charge operator ``n_L`` or ``n_R``."""
    if which not in ("left", "right"):
        raise ValueError("which must be 'left' or 'right'")
    if spectrum is None:
        spectrum = labeled_spectrum(spec)
    nl, nr = charge_operators(spec)
    op = nl if which == "left" else nr

    def lower_r(jl, jr):
        return float(spectrum.vector(jl, 0, jr - 1) @ op @ spectrum.vector(jl, 0, jr))

    def lower_l(jl, jr):
        return float(spectrum.vector(jl - 1, 0, jr) @ op @ spectrum.vector(jl, 0, jr))

    coeffs = _pattern_coefficients(lower_l, "L")
    coeffs.update(_pattern_coefficients(lower_r, "R"))
    return coeffs


def extract_dressed_params(spec: CircuitSpec, spectrum: LabeledSpectrum | None = None,
                           with_drive: bool = True) -> DressedModel:
    """Read the dressed Kerr parameters off the labeled spectrum."""
    if spectrum is None:
        spectrum = labeled_spectrum(spec)
    e = spectrum.energy
    e0 = e(0, 0, 0)
    coeffs = ()
    if with_drive:
        entries = []
        for which, name in (("left", "n_L"), ("right", "n_R")):
            for k, v in extract_drive_coefficients(spec, which, spectrum).items():
                entries.append((f"{name}:{k}", float(v)))
        coeffs = tuple(sorted(entries))
    return DressedModel(
        omega_left=e(1, 0, 0) - e0,
        omega_right=e(0, 0, 1) - e0,
        omega_res=e(0, 1, 0) - e0,
        eta_left=e(2, 0, 0) - 2 * e(1, 0, 0) + e0,
        eta_right=e(0, 0, 2) - 2 * e(0, 0, 1) + e0,
        eta_res=e(0, 2, 0) - 2 * e(0, 1, 0) + e0,
        chi_left=e(1, 1, 0) - e(1, 0, 0) - e(0, 1, 0) + e0,
        chi_right=e(0, 1, 1) - e(0, 0, 1) - e(0, 1, 0) + e0,
        zz_static=e(1, 0, 1) - e(1, 0, 0) - e(0, 0, 1) + e0,
        j_eff=effective_exchange(spec, spectrum),
        drive_coeffs=coeffs,
        gtilde_left=spec.left.asymptotic_charge_element * spec.coupling.g_left,
        gtilde_right=spec.right.asymptotic_charge_element * spec.coupling.g_right,
    )


# ---------------------------------------------------------------------------
# inverse problem
# ---------------------------------------------------------------------------

_FREQUENCY_KEYS = ("omega_left", "omega_right", "omega_res", "eta_left", "eta_right")
_CHI_KEYS = ("chi_left", "chi_right", "zz_static")


def _initial_guess(targets: dict) -> CircuitSpec:
    wl, wr = targets["omega_left"], targets["omega_right"]
    eta_l = targets.get("eta_left", -0.3)
    eta_r = targets.get("eta_right", -0.3)
    ec_l, ec_r = -0.9 * eta_l, -0.9 * eta_r
    ej_l = (wl + ec_l) ** 2 / (8 * ec_l)
    ej_r = (wr + ec_r) ** 2 / (8 * ec_r)
    wc = targets.get("omega_res", 0.5 * (wl + wr) + 5.0)
    return CircuitSpec(
        TransmonSpec(ec_l, ej_l), TransmonSpec(ec_r, ej_r), ResonatorSpec(wc),
        CouplingSpec(0.3, 0.3),
    )


def calibrate_bare_to_dressed(targets: dict, initial: CircuitSpec | None = None,
                              max_nfev: int = 400, freq_tol: float = 0.01,
                              chi_tol: float = 0.05) -> CircuitSpec:
    """Find bare circuit parameters reproducing the requested dressed values.

    ``targets`` maps :class:`DressedModel` field names to GHz values and must
    contain the two qubit frequencies and anharmonicities plus at least one
    dispersive quantity.  The residual vector is minimized with a trust-region
    least-squares solver on finite-difference Jacobians.
    """
    need = {"omega_left", "omega_right", "eta_left", "eta_right"}
    if not need <= set(targets) or not (set(_CHI_KEYS) & set(targets)):
        raise ValueError(f"targets must contain {sorted(need)} and a chi value")
    keys = [k for k in (*_FREQUENCY_KEYS, *_CHI_KEYS) if k in targets]
    goal = np.array([targets[k] for k in keys], dtype=float)
    scale = np.abs(goal)
    if initial is None:
        initial = _initial_guess(targets)
    template = initial

    def unpack(x):
        return CircuitSpec(
            dataclasses.replace(template.left, ec=x[0], ej=x[1]),
            dataclasses.replace(template.right, ec=x[2], ej=x[3]),
            dataclasses.replace(template.resonator, bare_freq=x[6]),
            CouplingSpec(x[4], x[5]),
        )

    def residual(x):
        if np.any(x[[0, 1, 2, 3, 6]] <= 0):
            return np.full(len(keys), 1e3)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = extract_dressed_params(unpack(x), with_drive=False)
        except (AmbiguousDressingError, NumericalFailure):
            return np.full(len(keys), 1e3)
        got = np.array([getattr(model, k) for k in keys])
        return (got - goal) / scale

    x0 = np.array([
        initial.left.ec, initial.left.ej, initial.right.ec, initial.right.ej,
        initial.coupling.g_left, initial.coupling.g_right, initial.resonator.bare_freq,
    ])
    sol = least_squares(residual, x0, x_scale=np.abs(x0) * 0.1 + 1e-3, diff_step=1e-7,
                        max_nfev=max_nfev, xtol=1e-14, ftol=1e-14, gtol=1e-14)
    final = residual(sol.x)
    tol = np.array([freq_tol if k in _FREQUENCY_KEYS else chi_tol for k in keys])
    if not np.all(np.abs(final) <= tol):
        worst = keys[int(np.argmax(np.abs(final) / tol))]
        raise CalibrationError(
            f"calibration did not reach tolerance (worst: {worst})",
            best=unpack(sol.x), residual=dict(zip(keys, final.tolist())),
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return unpack(sol.x)
