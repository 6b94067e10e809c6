"""Operator algebra and state representation for the spin register.

The register holds one electron qubit (two levels |0> and |m_s> picked out
of the ground-state triplet) and N spin-1/2 nuclei.  Basis ordering is
electron first, then nuclei in register order; the electron basis is
(|0>, |m_s>) and each nuclear basis is (|up>, |down>) along the static
field axis.

Conventions
-----------
* sigma_z = m_s (|m_s><m_s| - |0><0|), so its matrix depends on which
  m_s branch the register uses.  sigma_x, sigma_y complete a right-handed
  triple (sigma_x sigma_y = i sigma_z).
* Each nucleus's transverse basis phases are aligned with its own
  perpendicular hyperfine azimuth: ``site_operator(reg, j, "x")`` is the
  spin component along the local hyperfine direction, and azimuth axes
  are measured from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import reduce

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyRegister,
    NonHermitian,
    NoPairDesignated,
    NotNormalized,
    WeakFieldViolation,
)
from .lattice import HyperfineVector
from .constants import GAMMA_C13

__all__ = [
    "NuclearSpin",
    "SpinRegister",
    "Operator",
    "QuantumState",
    "build_register",
    "site_operator",
    "expectation",
]

UNITARY_TOL = 1e-9

_ID2 = np.eye(2, dtype=complex)
_SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_SY = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
_SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def _frozen(mat: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(mat)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class NuclearSpin:
    """One 13C nucleus: hyperfine vector plus its precession frequency."""

    hyperfine: HyperfineVector
    larmor: float  # rad/s
    pair_tag: str | None = None


@dataclass(frozen=True)
class Operator:
    """Dense operator over the register Hilbert space."""

    matrix: np.ndarray
    dim: int = 0

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionMismatch(f"operator must be square, got {mat.shape}")
        object.__setattr__(self, "matrix", _frozen(mat))
        object.__setattr__(self, "dim", mat.shape[0])

    @classmethod
    def hermitian(cls, matrix, tol: float = 1e-9) -> "Operator":
        op = cls(matrix)
        if not op.is_hermitian(tol):
            raise NonHermitian("matrix declared Hermitian is not")
        return op

    @classmethod
    def unitary(cls, matrix, tol: float = UNITARY_TOL) -> "Operator":
        op = cls(matrix)
        defect = op.unitarity_defect()
        if defect > tol:
            raise DimensionMismatch(
                f"matrix declared unitary has defect {defect:.2e} > {tol:.0e}"
            )
        return op

    def is_hermitian(self, tol: float = 1e-9) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T)) <= tol)

    def unitarity_defect(self) -> float:
        gram = self.matrix.conj().T @ self.matrix
        return float(np.max(np.abs(gram - np.eye(self.dim))))

    def dagger(self) -> "Operator":
        return Operator(self.matrix.conj().T)

    def __matmul__(self, other: "Operator") -> "Operator":
        if self.dim != other.dim:
            raise DimensionMismatch("operator dimensions differ")
        return Operator(self.matrix @ other.matrix)


@dataclass(frozen=True)
class QuantumState:
    """Pure state (vector) or mixed state (density matrix)."""

    kind: str  # "pure" | "mixed"
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=complex)
        if self.kind == "pure":
            arr = arr.reshape(-1)
            norm = np.linalg.norm(arr)
            if abs(norm - 1.0) > 1e-10:
                raise NotNormalized(f"pure state norm {norm}")
        elif self.kind == "mixed":
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise DimensionMismatch("density matrix must be square")
            if abs(np.trace(arr) - 1.0) > 1e-10:
                raise NotNormalized(f"density trace {np.trace(arr).real}")
            if np.max(np.abs(arr - arr.conj().T)) > 1e-10:
                raise NonHermitian("density matrix not Hermitian")
            if np.min(np.linalg.eigvalsh((arr + arr.conj().T) / 2)) < -1e-10:
                raise NotNormalized("density matrix has a negative eigenvalue")
        else:
            raise ValueError(f"unknown state kind {self.kind!r}")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @classmethod
    def pure(cls, vector) -> "QuantumState":
        vec = np.asarray(vector, dtype=complex).reshape(-1)
        return cls("pure", vec / np.linalg.norm(vec))

    @classmethod
    def mixed(cls, rho) -> "QuantumState":
        return cls("mixed", rho)

    def density(self) -> np.ndarray:
        if self.kind == "pure":
            return np.outer(self.data, self.data.conj())
        return np.asarray(self.data)


@dataclass(frozen=True)
class SpinRegister:
    """Electron two-level subspace plus an ordered list of nuclei.

    When a Larmor pair is designated, the pair occupies nuclear indices
    1 and 2 (1-based), index 1 being the selective-rotation target.
    """

    ms_branch: int
    nuclei: tuple[NuclearSpin, ...]
    b_field: float  # tesla
    gamma_n: float = GAMMA_C13  # rad/s/T

    def __post_init__(self):
        if self.ms_branch not in (+1, -1):
            raise ValueError("ms_branch must be +1 or -1")
        object.__setattr__(self, "nuclei", tuple(self.nuclei))

    @property
    def n_nuclei(self) -> int:
        return len(self.nuclei)

    @property
    def dim(self) -> int:
        return 2 ** (self.n_nuclei + 1)

    @property
    def pair_indices(self) -> tuple[int, int] | None:
        """1-based indices of the designated Larmor pair, or None."""
        tagged = [i + 1 for i, n in enumerate(self.nuclei) if n.pair_tag]
        if len(tagged) == 2:
            return tagged[0], tagged[1]
        return None

    def require_pair(self) -> tuple[int, int]:
        pair = self.pair_indices
        if pair is None:
            raise NoPairDesignated("register has no designated Larmor pair")
        return pair

    def designate_pair(self, i: int, j: int) -> "SpinRegister":
        """Return a register with nuclei i, j (1-based) moved to the front
        as (target, partner) and tagged as the Larmor pair."""
        if not self.nuclei:
            raise EmptyRegister("cannot designate a pair in an empty register")
        idx = [i - 1, j - 1]
        for k in idx:
            if not 0 <= k < self.n_nuclei:
                raise IndexError(f"nucleus index {k + 1} out of range")
        target = replace(self.nuclei[idx[0]], pair_tag="pair:target")
        partner = replace(self.nuclei[idx[1]], pair_tag="pair:partner")
        rest = [
            replace(n, pair_tag=None)
            for k, n in enumerate(self.nuclei)
            if k not in idx
        ]
        return replace(self, nuclei=tuple([target, partner] + rest))

    # -- electron Pauli matrices on the (|0>, |m_s>) basis ----------------

    def sigma_z2(self) -> np.ndarray:
        return self.ms_branch * np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)

    def sigma_x2(self) -> np.ndarray:
        return _SX.copy()

    def sigma_y2(self) -> np.ndarray:
        # right-handed completion: sigma_y = -i sigma_z sigma_x
        return -1j * self.sigma_z2() @ _SX


def build_register(
    nuclei_spec,
    b_field: float,
    ms_branch: int = -1,
    gamma_n: float = GAMMA_C13,
    weak_field_factor: float = 10.0,
) -> SpinRegister:
    """Assemble a register from hyperfine vectors and a static field.

    Nuclear precession frequencies follow the scalar strong-field form
    omega_j = gamma_n * B - (m_s / 2) * A_par.  Construction rejects
    fields violating gamma_n * B >= weak_field_factor * max(A_perp).

    Raises
    ------
    WeakFieldViolation
        If the static field is too weak for the secular approximation.
    """
    if b_field <= 0:
        raise ValueError("b_field must be positive")
    vectors = list(nuclei_spec)
    for hf in vectors:
        if hf.a_perp < 0:
            raise ValueError("a_perp must be non-negative")
    zeeman = gamma_n * b_field
    if vectors:
        worst = max(hf.a_perp for hf in vectors)
        if zeeman < weak_field_factor * worst:
            raise WeakFieldViolation(
                f"gamma_n*B = {zeeman:.3e} rad/s below {weak_field_factor:g} x "
                f"max(A_perp) = {weak_field_factor * worst:.3e} rad/s"
            )
    nuclei = tuple(
        NuclearSpin(hyperfine=hf, larmor=zeeman - 0.5 * ms_branch * hf.a_par)
        for hf in vectors
    )
    return SpinRegister(ms_branch=ms_branch, nuclei=nuclei, b_field=b_field, gamma_n=gamma_n)


def _embed(register: SpinRegister, slot: int, mat2: np.ndarray) -> np.ndarray:
    """Kron mat2 into tensor slot `slot` (0 = electron, 1..N = nuclei)."""
    factors = [_ID2] * (register.n_nuclei + 1)
    factors[slot] = mat2
    return reduce(np.kron, factors)


def site_operator(register: SpinRegister, site, axis) -> Operator:
    """Embedded single-site spin operator.

    Parameters
    ----------
    site : "electron" (or 0) for the electron, 1..N for nuclei.
    axis : "x", "y", "z", or a float azimuth (radians).  Nuclear axes are
        measured in the nucleus's local frame, whose x direction is the
        azimuth of its transverse hyperfine vector; a float gives
        I^phi = I^x cos(phi) + I^y sin(phi).

    Electron operators are the two-level Pauli matrices (eigenvalues +-1);
    nuclear operators are spin-1/2 (eigenvalues +-1/2).
    """
    electron = site in ("electron", "e", 0)
    if not electron:
        if register.n_nuclei == 0:
            raise EmptyRegister("register holds no nuclei")
        if not isinstance(site, (int, np.integer)) or not 1 <= site <= register.n_nuclei:
            raise IndexError(f"site {site!r} out of range 1..{register.n_nuclei}")

    if electron:
        if axis == "x":
            mat = register.sigma_x2()
        elif axis == "y":
            mat = register.sigma_y2()
        elif axis == "z":
            mat = register.sigma_z2()
        else:
            phi = float(axis)
            mat = np.cos(phi) * register.sigma_x2() + np.sin(phi) * register.sigma_y2()
        return Operator(_embed(register, 0, mat))

    if axis == "x":
        mat = 0.5 * _SX
    elif axis == "y":
        mat = 0.5 * _SY
    elif axis == "z":
        mat = 0.5 * _SZ
    else:
        phi = float(axis)
        mat = 0.5 * (np.cos(phi) * _SX + np.sin(phi) * _SY)
    return Operator(_embed(register, int(site), mat))


def expectation(state: QuantumState, op: Operator) -> float:
    """<psi|O|psi> or Tr(rho O) for a Hermitian O.

    The imaginary residual is checked against 1e-10 and discarded.
    """
    if state.dim != op.dim:
        raise DimensionMismatch(
            f"state dim {state.dim} != operator dim {op.dim}"
        )
    if not op.is_hermitian():
        raise NonHermitian("expectation requires a Hermitian operator")
    if state.kind == "pure":
        value = np.vdot(state.data, op.matrix @ state.data)
    else:
        value = np.trace(state.data @ op.matrix)
    if abs(value.imag) > 1e-10:
        raise NonHermitian(f"imaginary expectation residual {value.imag:.2e}")
    return float(value.real)


# -- convenience state builders used across protocols and tests ----------


def basis_ket(register: SpinRegister, electron: int, nuclear: str = "") -> np.ndarray:
    """Product basis vector; electron in {0, 1} (1 = |m_s>), nuclear a
    string of 'u'/'d' per nucleus in register order."""
    if len(nuclear) != register.n_nuclei:
        raise DimensionMismatch("nuclear pattern length != nucleus count")
    vecs = [np.eye(2, dtype=complex)[:, electron]]
    for ch in nuclear:
        vecs.append(np.eye(2, dtype=complex)[:, 0 if ch == "u" else 1])
    return reduce(np.kron, vecs)


def product_state(register: SpinRegister, electron_amps, nuclear: str) -> QuantumState:
    """Pure product state with arbitrary electron amplitudes (c0, c1)."""
    c0, c1 = electron_amps
    vec = c0 * basis_ket(register, 0, nuclear) + c1 * basis_ket(register, 1, nuclear)
    return QuantumState.pure(vec)
