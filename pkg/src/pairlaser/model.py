"""Hamiltonian, collapse operators and Liouvillian of the pair laser.

Three bosonic modes: ``a`` (cavity photons), ``b`` (atoms in the lowest
lattice band, the atom-laser mode) and ``c`` (atoms in the first excited
band, the source mode).  All rates are angular frequencies with hbar = 1.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import InvalidDimensionError, TruncationTooLargeError
from .fockspace import FockBasis, SparseOperator, mode_operators, unvec

__all__ = [
    "PhysicalParams",
    "Couplings",
    "ModelParams",
    "LindbladModel",
    "COLLAPSE_LABELS",
    "derive_couplings",
    "build_hamiltonian",
    "build_collapse_ops",
    "build_model",
    "build_liouvillian",
    "LiouvillianBlock",
    "build_liouvillian_block",
    "MAX_SUPEROPERATOR_DIM",
]

COLLAPSE_LABELS = ("loss_a", "loss_b", "loss_c", "heat_bc")

# Largest superoperator (or symmetry block) dimension we agree to assemble.
MAX_SUPEROPERATOR_DIM = 1_200_000


@dataclass(frozen=True)
class PhysicalParams:
    """Lattice and cavity quantities, hbar = 1."""

    V0: float
    U0: float
    delta_c: float
    k_wave: float
    mass: float
    lamb_dicke: float

    def __post_init__(self):
        for name in ("V0", "U0", "k_wave", "mass"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.lamb_dicke < 0.5:
            raise ValueError("lamb_dicke must lie in (0, 0.5)")
        if self.lamb_dicke > 0.2:
            warnings.warn(f"Lamb-Dicke parameter {self.lamb_dicke} is not small; "
                          "single-sideband couplings become unreliable", stacklevel=3)


class Couplings(NamedTuple):
    omega: float
    eta: float
    resonance_residual: float


def derive_couplings(p: PhysicalParams) -> Couplings:
    """Trap frequency, Raman gain coupling and detuning from the blue sideband.

    ``omega = k sqrt(2 V0 / m)``, ``eta = l sqrt(V0 U0)``, and the residual
    ``delta_c + U0 - omega`` vanishes when the cavity sits on the cooling
    sideband.
    """
    omega = p.k_wave * math.sqrt(2.0 * p.V0 / p.mass)
    eta = p.lamb_dicke * math.sqrt(p.V0 * p.U0)
    return Couplings(omega, eta, p.delta_c + p.U0 - omega)


@dataclass(frozen=True)
class ModelParams:
    """Rates of the three-mode model; defaults are the reference parameter set."""

    kappa_a: float = 1.0
    kappa_b: float = 1.0
    kappa_c: float = 10.0
    kappa_bc: float = 0.1
    eta: float = 5.0
    mu: float = 3.0
    has_threshold: bool = field(init=False)

    def __post_init__(self):
        for name in ("kappa_a", "kappa_b", "kappa_c", "kappa_bc", "eta", "mu"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float, np.floating, np.integer)) and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite real number")
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
            object.__setattr__(self, name, float(value))
        object.__setattr__(self, "has_threshold", self.eta**2 > self.kappa_a * self.kappa_bc)

    def replace(self, **changes) -> ModelParams:
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("kappa_a", "kappa_b", "kappa_c", "kappa_bc", "eta", "mu")}


def _three_mode(basis: FockBasis):
    if basis.n_modes != 3:
        raise InvalidDimensionError("the pair-laser model needs a three-mode basis")
    return mode_operators(basis)


def build_hamiltonian(params: ModelParams, basis: FockBasis) -> SparseOperator:
    """``H = i eta (a+ b+ c - a b c+) + i mu (c+ - c)`` on the truncated space."""
    a, b, c = _three_mode(basis)
    gain = a.dag() @ b.dag() @ c
    m = 1j * params.eta * (gain.matrix - gain.matrix.conj().T) + 1j * params.mu * (c.matrix.conj().T - c.matrix)
    return SparseOperator(basis, m, known_hermitian=True)


def build_collapse_ops(params: ModelParams, basis: FockBasis) -> list[SparseOperator]:
    """``[sqrt(2ka) a, sqrt(2kb) b, sqrt(2kc) c, sqrt(2kbc) b c+]`` (labels in COLLAPSE_LABELS).

    With the standard dissipator ``C rho C+ - {C+C, rho}/2`` these give
    loss at intensity rate ``2 kappa``, so output fluxes are ``2 kappa <n>``.
    """
    a, b, c = _three_mode(basis)
    return [
        math.sqrt(2 * params.kappa_a) * a,
        math.sqrt(2 * params.kappa_b) * b,
        math.sqrt(2 * params.kappa_c) * c,
        math.sqrt(2 * params.kappa_bc) * (b @ c.dag()),
    ]


@dataclass(frozen=True, eq=False)
class LindbladModel:
    basis: FockBasis
    hamiltonian: SparseOperator
    collapse_ops: tuple[SparseOperator, ...]
    params: ModelParams
    labels: tuple[str, ...] = COLLAPSE_LABELS

    def __post_init__(self):
        object.__setattr__(self, "collapse_ops", tuple(self.collapse_ops))
        if tuple(self.labels) != COLLAPSE_LABELS or len(self.collapse_ops) != 4:
            raise ValueError(f"expected collapse operators labelled {COLLAPSE_LABELS}")
        if self.hamiltonian.hermiticity_error() >= 1e-12:
            raise ValueError("Hamiltonian is not Hermitian")
        for op in (self.hamiltonian, *self.collapse_ops):
            if op.basis != self.basis:
                raise InvalidDimensionError("operators built on a different basis")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.basis.dims

    def collapse(self, label: str) -> SparseOperator:
        return self.collapse_ops[self.labels.index(label)]

    def effective_hamiltonian(self) -> sp.csr_matrix:
        """Non-Hermitian ``H - (i/2) sum_j C_j+ C_j`` used between jumps."""
        decay = sum((c.matrix.conj().T @ c.matrix for c in self.collapse_ops), sp.csr_matrix(self.hamiltonian.shape))
        return sp.csr_matrix(self.hamiltonian.matrix - 0.5j * decay)


def build_model(params: ModelParams, dims=(10, 10, 8)) -> LindbladModel:
    basis = dims if isinstance(dims, FockBasis) else FockBasis(tuple(dims))
    return LindbladModel(basis, build_hamiltonian(params, basis), tuple(build_collapse_ops(params, basis)), params)


def _superoperator_terms(model: LindbladModel):
    """Pairs ``(A, B)`` with ``L rho = sum A rho B``."""
    k = -1j * model.effective_hamiltonian()
    d = model.basis.total_dim
    eye = sp.identity(d, dtype=np.complex128, format="csr")
    terms = [(k, eye), (eye, sp.csr_matrix(k.conj().T))]
    for c in model.collapse_ops:
        if c.nnz:
            terms.append((c.matrix, sp.csr_matrix(c.matrix.conj().T)))
    return terms


def _assemble(model: LindbladModel, positions: np.ndarray) -> sp.csr_matrix:
    d = model.basis.total_dim
    n = len(positions)
    lookup = np.full(d * d, -1, dtype=np.int64)
    lookup[positions] = np.arange(n)
    rows, cols, vals = [], [], []
    for A, B in _superoperator_terms(model):
        # vec(A rho B) = kron(B^T, A) vec(rho): entry A[i,k] B[l,j] at (i + d j, k + d l)
        A, B = A.tocoo(), B.tocoo()
        i = np.repeat(A.row, B.nnz)
        kk = np.repeat(A.col, B.nnz)
        av = np.repeat(A.data, B.nnz)
        l = np.tile(B.row, A.nnz)
        j = np.tile(B.col, A.nnz)
        bv = np.tile(B.data, A.nnz)
        r = lookup[i + d * j]
        c = lookup[kk + d * l]
        keep = (r >= 0) & (c >= 0)
        rows.append(r[keep])
        cols.append(c[keep])
        vals.append((av * bv)[keep])
    L = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    L = L.tocsr()
    L.sum_duplicates()
    L.eliminate_zeros()
    L.sort_indices()
    return L


def build_liouvillian(model: LindbladModel, max_dim: int = MAX_SUPEROPERATOR_DIM) -> sp.csr_matrix:
    """Full Liouvillian acting on column-stacked density matrices."""
    d2 = model.basis.total_dim**2
    if d2 > max_dim:
        raise TruncationTooLargeError(f"superoperator dimension {d2} exceeds limit {max_dim}")
    return _assemble(model, np.arange(d2))


@dataclass(frozen=True, eq=False)
class LiouvillianBlock:
    """Liouvillian restricted to an invariant subspace of vectorized operators.

    ``positions`` are indices into the full column-stacked vector.  The block
    for the ``n_a - n_b`` difference sector contains the steady state and
    every operator needed for intensity correlations.
    """

    matrix: sp.csr_matrix
    positions: np.ndarray
    dim: int

    @property
    def size(self) -> int:
        return len(self.positions)

    @property
    def trace_weights(self) -> np.ndarray:
        """Row vector ``t`` with ``t @ v = tr(rho)``."""
        t = np.zeros(self.size)
        diag = np.arange(self.dim) * (self.dim + 1)
        t[np.searchsorted(self.positions, diag)] = 1.0
        return t

    @property
    def diagonal_slots(self) -> np.ndarray:
        return np.searchsorted(self.positions, np.arange(self.dim) * (self.dim + 1))

    def restrict(self, rho: np.ndarray) -> np.ndarray:
        return np.asarray(rho).reshape(-1, order="F")[self.positions]

    def expand(self, v: np.ndarray) -> np.ndarray:
        full = np.zeros(self.dim * self.dim, dtype=np.complex128)
        full[self.positions] = v
        return unvec(full, self.dim)

    def leakage(self, rho: np.ndarray) -> float:
        """Largest entry of ``rho`` that lies outside the block."""
        mask = np.ones(self.dim * self.dim, dtype=bool)
        mask[self.positions] = False
        out = np.asarray(rho).reshape(-1, order="F")[mask]
        return float(np.abs(out).max()) if out.size else 0.0


def _difference_labels(basis: FockBasis) -> np.ndarray:
    occ = basis.occupation_table
    return occ[:, 0] - occ[:, 1]


def difference_sector_size(basis: FockBasis) -> int:
    _, counts = np.unique(_difference_labels(basis), return_counts=True)
    return int((counts.astype(np.int64) ** 2).sum())


def difference_sector(basis: FockBasis) -> np.ndarray:
    """Positions ``i + d j`` with equal ``n_a - n_b`` on both sides of ``|i><j|``."""
    m = _difference_labels(basis)
    d = basis.total_dim
    parts = []
    for j in range(d):
        parts.append(np.flatnonzero(m == m[j]) + d * j)
    return np.concatenate(parts)


def build_liouvillian_block(model: LindbladModel, sector: bool = True,
                            max_dim: int = MAX_SUPEROPERATOR_DIM) -> LiouvillianBlock:
    """Liouvillian on the zero-difference sector (or the whole space)."""
    d = model.basis.total_dim
    size = difference_sector_size(model.basis) if sector else d * d
    if size > max_dim:
        raise TruncationTooLargeError(f"Liouvillian block dimension {size} exceeds limit {max_dim}")
    positions = difference_sector(model.basis) if sector else np.arange(d * d)
    return LiouvillianBlock(_assemble(model, positions), positions, d)
