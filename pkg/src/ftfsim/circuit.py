"""Single-circuit and composite Hamiltonians of the fluxonium-transmon-fluxonium device.

All energies are stored as frequencies E/h in GHz. Couplings are given in MHz
(g/2pi) and converted on assembly. Product states are ordered |F1 C F2>.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.linalg import eigh
from scipy.optimize import linear_sum_assignment

# convergence tolerance on kept levels under basis doubling, GHz (1 kHz)
CONVERGENCE_TOL = 1e-6


class ConvergenceError(RuntimeError):
    """Raised when a kept eigenvalue moves by more than the tolerance under basis doubling."""

    def __init__(self, circuit, level, shift):
        self.circuit = circuit
        self.level = level
        self.shift = shift
        super().__init__(
            f"{circuit}: level {level} shifted by {shift * 1e6:.3f} kHz when the basis was doubled"
        )


class LabelingError(RuntimeError):
    """Raised when a dressed state cannot be assigned a bare label unambiguously."""

    def __init__(self, label, contested):
        self.label = label
        self.contested = tuple(contested)
        super().__init__(f"ambiguous labeling of bare state {label}: dressed states {self.contested}")


@dataclass(frozen=True)
class FluxoniumParams:
    e_c: float
    e_l: float
    e_j: float
    phi_ext: float = np.pi

    def __post_init__(self):
        # e_j = 0 is the harmonic limit
        if not (self.e_c > 0 and self.e_l > 0 and self.e_j >= 0):
            raise ValueError(f"fluxonium energies must be positive (e_j may be zero), got {self}")


@dataclass(frozen=True)
class TransmonParams:
    e_c: float
    e_j_total: float
    flux_fraction: float = 0.0

    def __post_init__(self):
        if not (self.e_c > 0 and self.e_j_total > 0):
            raise ValueError(f"transmon energies must be positive, got {self}")
        if self.e_j_effective <= 1e-12 * self.e_j_total:
            raise ValueError(f"effective Josephson energy vanishes at flux_fraction={self.flux_fraction}")

    @property
    def e_j_effective(self) -> float:
        return self.e_j_total * abs(np.cos(np.pi * self.flux_fraction))


@dataclass(frozen=True)
class CouplingParams:
    """Charge couplings g/2pi in MHz."""

    g_12: float
    g_1c: float
    g_2c: float

    def __post_init__(self):
        if not all(np.isfinite([self.g_12, self.g_1c, self.g_2c])):
            raise ValueError(f"couplings must be finite, got {self}")


@dataclass(frozen=True)
class TruncationSpec:
    fluxonium_levels: int = 4
    transmon_levels: int = 3
    fluxonium_basis_size: int = 100
    charge_cutoff: int = 30

    def __post_init__(self):
        if self.fluxonium_levels < 2 or self.transmon_levels < 2:
            raise ValueError("need at least two levels per circuit")
        if self.fluxonium_basis_size < 4 * self.fluxonium_levels:
            raise ValueError("fluxonium_basis_size must be at least 4x fluxonium_levels")
        if 2 * self.charge_cutoff + 1 < 4 * self.transmon_levels or self.charge_cutoff < 10:
            raise ValueError("charge_cutoff must be >= 10 and cover 4x transmon_levels")


# Nominal device energies (GHz); fluxonia at half flux, coupler at 0.13 flux quanta.
DEVICE_F1 = FluxoniumParams(e_c=0.8805, e_l=0.5008, e_j=4.9928, phi_ext=np.pi)
DEVICE_F2 = FluxoniumParams(e_c=0.8829, e_l=0.4921, e_j=4.3350, phi_ext=np.pi)
DEVICE_COUPLER = TransmonParams(e_c=0.1861, e_j_total=16.87, flux_fraction=0.13)
# fitted, not measured: see README "Model choices"
DEVICE_COUPLINGS = CouplingParams(g_12=14.0, g_1c=180.0, g_2c=180.0)


def _fix_signs(vecs, charge):
    """Fix eigenvector signs so that consecutive charge matrix elements are positive.

    ``charge`` is the charge operator in the original basis. For a purely
    imaginary charge operator the imaginary part is made positive.
    """
    vecs = vecs.copy()
    k0 = np.argmax(np.abs(vecs[:, 0]))
    if vecs[k0, 0] < 0:
        vecs[:, 0] *= -1
    for k in range(1, vecs.shape[1]):
        elem = vecs[:, k - 1] @ charge @ vecs[:, k]
        value = elem.imag if abs(elem.imag) > abs(elem.real) else elem.real
        if abs(value) > 1e-12:
            if value < 0:
                vecs[:, k] *= -1
        else:
            kk = np.argmax(np.abs(vecs[:, k]))
            if vecs[kk, k] < 0:
                vecs[:, k] *= -1
    return vecs


def _fluxonium_raw(params: FluxoniumParams, basis_size: int, n_levels: int):
    phi_zpf = (8.0 * params.e_c / params.e_l) ** 0.25
    lower = np.diag(np.sqrt(np.arange(1, basis_size)), 1)
    phi = phi_zpf * (lower + lower.T) / np.sqrt(2.0)
    charge = 1j * (lower.T - lower) / (np.sqrt(2.0) * phi_zpf)
    # cos and sin of the phase operator through its eigendecomposition
    w, v = eigh(phi)
    cos_phi = (v * np.cos(w)) @ v.T
    sin_phi = (v * np.sin(w)) @ v.T
    omega = np.sqrt(8.0 * params.e_c * params.e_l)
    ham = np.diag(omega * (np.arange(basis_size) + 0.5))
    ham = ham - params.e_j * (cos_phi * np.cos(params.phi_ext) + sin_phi * np.sin(params.phi_ext))
    energies, vecs = eigh(ham)
    vecs = _fix_signs(vecs[:, :n_levels], charge)
    return energies[:n_levels], vecs, charge, phi


@lru_cache(maxsize=256)
def diagonalize_fluxonium(params: FluxoniumParams, basis_size: int = 100, n_levels: int = 4):
    """Lowest ``n_levels`` of a fluxonium in the harmonic-oscillator basis.

    Returns ``(energies, charge_matrix, phase_matrix)``; energies in GHz are
    measured from the ground state and the matrices are expressed in the
    eigenbasis. Raises :class:`ConvergenceError` if doubling the basis moves a
    kept level by more than 1 kHz.
    """
    if basis_size < 4 * n_levels:
        raise ValueError("basis_size must be at least 4 * n_levels")
    energies, vecs, charge, phi = _fluxonium_raw(params, basis_size, n_levels)
    check, *_ = _fluxonium_raw(params, 2 * basis_size, n_levels)
    _check_converged("fluxonium", energies, check)
    energies = energies - energies[0]
    n_mat = vecs.conj().T @ charge @ vecs
    phi_mat = vecs.conj().T @ phi @ vecs
    for m in (n_mat, phi_mat):
        m.setflags(write=False)
    energies.setflags(write=False)
    return energies, n_mat, phi_mat


def _check_converged(name, energies, check):
    shifts = np.abs((energies - energies[0]) - (check - check[0]))
    worst = int(np.argmax(shifts))
    if shifts[worst] > CONVERGENCE_TOL:
        raise ConvergenceError(name, worst, shifts[worst])


def _transmon_raw(params: TransmonParams, charge_cutoff: int, n_levels: int, josephson_sign: int):
    charges = np.arange(-charge_cutoff, charge_cutoff + 1, dtype=float)
    hop = np.ones(2 * charge_cutoff)
    # -E_J cos(phi) hops by one Cooper pair with amplitude -E_J/2
    ham = (
        np.diag(4.0 * params.e_c * charges**2)
        - josephson_sign * 0.5 * params.e_j_effective * (np.diag(hop, 1) + np.diag(hop, -1))
    )
    energies, vecs = eigh(ham)
    charge = np.diag(charges)
    vecs = _fix_signs(vecs[:, :n_levels], charge)
    return energies[:n_levels], vecs, charge


@lru_cache(maxsize=256)
def diagonalize_transmon(
    params: TransmonParams, charge_cutoff: int = 30, n_levels: int = 3, josephson_sign: int = 1
):
    """Lowest ``n_levels`` of the symmetric-SQUID transmon in the charge basis.

    ``josephson_sign=+1`` uses the conventional ``-E_J cos(phi)``; ``-1``
    flips the sign of the Josephson term, which is a gauge change
    (phi -> phi + pi) with an identical spectrum.
    Returns ``(energies, charge_matrix)``.
    """
    if charge_cutoff < 10:
        raise ValueError("charge_cutoff must be >= 10")
    if josephson_sign not in (1, -1):
        raise ValueError("josephson_sign must be +1 or -1")
    energies, vecs, charge = _transmon_raw(params, charge_cutoff, n_levels, josephson_sign)
    check, *_ = _transmon_raw(params, 2 * charge_cutoff, n_levels, josephson_sign)
    _check_converged("transmon", energies, check)
    energies = energies - energies[0]
    n_mat = vecs.T @ charge @ vecs
    energies.setflags(write=False)
    n_mat.setflags(write=False)
    return energies, n_mat


@dataclass(frozen=True, eq=False)
class CompositeSystem:
    """Diagonalized three-body Hamiltonian.

    ``eigenvectors[:, k]`` is dressed state ``k`` in the bare product basis;
    ``labels[k]`` is its bare label ``(i, c, j)``. ``charge_operators`` holds
    n_F1, n_C, n_F2 in the dressed basis.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    labels: tuple
    charge_operators: tuple
    bare_energies: np.ndarray
    bare_labels: tuple
    dims: tuple
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {lab: k for k, lab in enumerate(self.labels)})

    def index(self, label) -> int:
        try:
            return self._index[tuple(label)]
        except KeyError:
            raise KeyError(f"state |{''.join(map(str, label))}> is not among the kept labels") from None

    def energy(self, label) -> float:
        return float(self.eigenvalues[self.index(label)])

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def drive_operator(self, eta_c: float = 0.0, eta_f1: float = 0.0) -> np.ndarray:
        """n_F2 + eta_c n_C + eta_f1 n_F1 in the dressed basis."""
        n1, nc, n2 = self.charge_operators
        return n2 + eta_c * nc + eta_f1 * n1


def _kron3(a, b, c):
    return np.kron(np.kron(a, b), c)


# labels that must be unambiguous for the gate and spectroscopy
PROTECTED_LABELS = tuple((i, c, j) for i in (0, 1) for c in (0, 1) for j in (0, 1))


def build_composite(
    f1: FluxoniumParams = DEVICE_F1,
    f2: FluxoniumParams = DEVICE_F2,
    c: TransmonParams = DEVICE_COUPLER,
    g: CouplingParams = DEVICE_COUPLINGS,
    trunc: TruncationSpec = TruncationSpec(),
    josephson_sign: int = 1,
    protected=PROTECTED_LABELS,
) -> CompositeSystem:
    """Assemble and diagonalize the coupled Hamiltonian in the product of single-circuit eigenbases.

    Dressed states are labeled by a maximum-overlap assignment against bare
    product states. A :class:`LabelingError` is raised when one of the
    ``protected`` labels is shared by two strongly hybridized dressed states.
    """
    nf, nt = trunc.fluxonium_levels, trunc.transmon_levels
    e1, n1, _ = diagonalize_fluxonium(f1, trunc.fluxonium_basis_size, nf)
    e2, n2, _ = diagonalize_fluxonium(f2, trunc.fluxonium_basis_size, nf)
    ec, nc = diagonalize_transmon(c, trunc.charge_cutoff, nt, josephson_sign)
    i1, ic, i2 = np.eye(nf), np.eye(nt), np.eye(nf)

    bare = (e1[:, None, None] + ec[None, :, None] + e2[None, None, :]).ravel()
    ops_bare = (_kron3(n1, ic, i2), _kron3(i1, nc, i2), _kron3(i1, ic, n2))
    ham = np.diag(bare).astype(complex)
    ham += 1e-3 * (g.g_12 * ops_bare[0] @ ops_bare[2] + g.g_1c * ops_bare[0] @ ops_bare[1]
                   + g.g_2c * ops_bare[1] @ ops_bare[2])
    ham = 0.5 * (ham + ham.conj().T)
    energies, vecs = eigh(ham)

    bare_labels = tuple(itertools.product(range(nf), range(nt), range(nf)))
    labels = _assign_labels(vecs, energies, bare, bare_labels, set(protected))
    # fix dressed phases: overlap with own bare state real and positive
    for k, lab in enumerate(labels):
        b = bare_labels.index(lab)
        amp = vecs[b, k]
        vecs[:, k] *= np.conj(amp) / abs(amp)

    ops = tuple(vecs.conj().T @ op @ vecs for op in ops_bare)
    for arr in (energies, vecs, bare, *ops):
        arr.setflags(write=False)
    return CompositeSystem(
        eigenvalues=energies,
        eigenvectors=vecs,
        labels=labels,
        charge_operators=ops,
        bare_energies=bare,
        bare_labels=bare_labels,
        dims=(nf, nt, nf),
        params={"f1": f1, "f2": f2, "coupler": c, "couplings": g, "truncation": trunc},
    )


def _assign_labels(vecs, energies, bare, bare_labels, protected):
    overlap = np.abs(vecs) ** 2  # [bare, dressed]
    rows, cols = linear_sum_assignment(-overlap)
    labels = [None] * len(energies)
    for b, d in zip(rows, cols):
        labels[d] = bare_labels[b]
    for b, d in zip(rows, cols):
        col = overlap[b]
        order = np.argsort(col)[::-1]
        best, second = order[0], order[1]
        if abs(col[best] - col[second]) < 1e-9:
            # equal overlaps: lower bare energy gets lower dressed energy
            warnings.warn(f"tie in labeling of {bare_labels[b]} between dressed {best} and {second}")
        p = col[d]
        rival = max((col[k] for k in range(len(col)) if k != d), default=0.0)
        if p < 0.5 and rival > 0.5 * p:
            if bare_labels[b] in protected:
                raise LabelingError(bare_labels[b], (int(d), int(np.argmax(np.where(np.arange(len(col)) == d, -1, col)))))
    return tuple(labels)
