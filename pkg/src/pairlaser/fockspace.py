"""Truncated bosonic Fock spaces and a small sparse operator algebra.

Conventions used throughout the package:

* A basis of up to three modes ``(a, b, c)`` with cutoffs ``dims``.  Mode ``k``
  holds occupations ``0 .. dims[k] - 1``.
* Product states are indexed row-major over the modes in order ``a, b, c``
  (``a`` slowest, ``c`` fastest), i.e. ``index = (n_a * N_b + n_b) * N_c + n_c``.
* Density matrices are vectorized by stacking columns:
  ``vec(rho)[i + d * j] = rho[i, j]``, so ``vec(A @ rho @ B) = kron(B.T, A) @ vec(rho)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .errors import InvalidDimensionError

__all__ = [
    "FockBasis",
    "SparseOperator",
    "StateVector",
    "DensityMatrix",
    "annihilation",
    "identity",
    "embed",
    "mode_operators",
    "number_operator",
    "commutator",
    "expectation",
    "fock_state",
    "coherent_state",
    "vec",
    "unvec",
    "dump_operator",
    "load_operator",
]

MODE_LABELS = ("a", "b", "c")


@dataclass(frozen=True)
class FockBasis:
    """Product basis of one to three truncated bosonic modes."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not 1 <= len(dims) <= 3:
            raise InvalidDimensionError(f"expected 1 to 3 modes, got {len(dims)}")
        if any(d < 2 for d in dims):
            raise InvalidDimensionError(f"every Fock cutoff must be >= 2, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def n_modes(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def index(self, occupations: Sequence[int]) -> int:
        """Basis index of the product state ``|n_a, n_b, n_c>``."""
        if len(occupations) != self.n_modes:
            raise InvalidDimensionError("occupation tuple has the wrong length")
        for n, d in zip(occupations, self.dims):
            if not 0 <= n < d:
                raise InvalidDimensionError(f"occupation {n} outside cutoff {d}")
        return int(np.ravel_multi_index(tuple(occupations), self.dims))

    def occupations(self, index: int) -> tuple[int, ...]:
        return tuple(int(n) for n in np.unravel_index(index, self.dims))

    @cached_property
    def occupation_table(self) -> np.ndarray:
        """Integer array of shape ``(total_dim, n_modes)``; row ``i`` is state ``i``."""
        table = np.indices(self.dims).reshape(self.n_modes, -1).T
        table.flags.writeable = False
        return table


def _canonical(matrix) -> sp.csr_matrix:
    m = sp.csr_matrix(matrix, dtype=np.complex128, copy=True)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    for arr in (m.data, m.indices, m.indptr):
        arr.flags.writeable = False
    return m


class SparseOperator:
    """Immutable sparse complex operator bound to a :class:`FockBasis`.

    The CSR storage is kept canonical (sorted indices, no duplicates or
    explicit zeros), which makes iteration order and floating-point
    summation reproducible.
    """

    __slots__ = ("basis", "matrix", "known_hermitian")

    def __init__(self, basis: FockBasis, matrix, known_hermitian: bool | None = None):
        m = _canonical(matrix)
        d = basis.total_dim
        if m.shape != (d, d):
            raise InvalidDimensionError(f"operator shape {m.shape} does not match basis dimension {d}")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "known_hermitian", known_hermitian)
        if known_hermitian:
            dev = self.hermiticity_error()
            if dev >= 1e-12:
                raise ValueError(f"operator flagged Hermitian but max|M - M^H| = {dev:.3e}")

    def __setattr__(self, name, value):
        raise AttributeError("SparseOperator is immutable")

    def __reduce__(self):
        return (SparseOperator, (self.basis, self.matrix, self.known_hermitian))

    def __repr__(self):
        return f"SparseOperator(dims={self.basis.dims}, nnz={self.nnz})"

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def hermiticity_error(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def dag(self) -> SparseOperator:
        """Hermitian conjugate."""
        return SparseOperator(self.basis, self.matrix.conj().T, self.known_hermitian)

    def entries(self) -> Iterator[tuple[int, int, complex]]:
        """Nonzero entries ``(row, col, value)`` in row-major order."""
        coo = self.matrix.tocoo()
        for r, c, v in zip(coo.row, coo.col, coo.data):
            yield int(r), int(c), complex(v)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def _check_basis(self, other):
        if other.basis != self.basis:
            raise InvalidDimensionError(f"basis mismatch: {self.basis.dims} vs {other.basis.dims}")

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            self._check_basis(other)
            return SparseOperator(self.basis, self.matrix @ other.matrix)
        if isinstance(other, StateVector):
            self._check_basis(other)
            return StateVector(self.basis, self.matrix @ other.amplitudes)
        return self.matrix @ other

    def __add__(self, other):
        if not isinstance(other, SparseOperator):
            return NotImplemented
        self._check_basis(other)
        herm = True if (self.known_hermitian and other.known_hermitian) else None
        return SparseOperator(self.basis, self.matrix + other.matrix, herm)

    def __sub__(self, other):
        if not isinstance(other, SparseOperator):
            return NotImplemented
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        herm = self.known_hermitian if np.isreal(scalar) else None
        return SparseOperator(self.basis, self.matrix * scalar, herm)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class StateVector:
    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.amplitudes, dtype=np.complex128)
        if psi.shape != (self.basis.total_dim,):
            raise InvalidDimensionError(f"state of length {psi.shape} does not match basis dimension {self.basis.total_dim}")
        norm = np.linalg.norm(psi)
        if not np.isfinite(norm) or norm <= 0:
            raise ValueError("state norm must be finite and positive")
        object.__setattr__(self, "amplitudes", psi)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> StateVector:
        return StateVector(self.basis, self.amplitudes / self.norm)

    def is_normalized(self, tol: float = 1e-10) -> bool:
        return abs(self.norm - 1.0) < tol


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    basis: FockBasis
    matrix: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.matrix, dtype=np.complex128)
        d = self.basis.total_dim
        if rho.shape != (d, d):
            raise InvalidDimensionError(f"density matrix shape {rho.shape} does not match basis dimension {d}")
        object.__setattr__(self, "matrix", rho)

    @classmethod
    def from_state(cls, psi: StateVector) -> DensityMatrix:
        v = psi.normalized().amplitudes
        return cls(psi.basis, np.outer(v, v.conj()))

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def hermiticity_error(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def populations(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()

    def validate(self, herm_tol=1e-10, trace_tol=1e-8, eig_floor=-1e-8) -> DensityMatrix:
        """Check Hermiticity, unit trace and positivity; return ``self``."""
        from .errors import PositivityError

        if self.hermiticity_error() >= herm_tol:
            raise ValueError(f"density matrix not Hermitian (max deviation {self.hermiticity_error():.3e})")
        if abs(self.trace - 1.0) >= trace_tol:
            raise ValueError(f"density matrix trace {self.trace} differs from 1")
        lam = self.min_eigenvalue()
        if lam <= eig_floor:
            raise PositivityError(f"minimum eigenvalue {lam:.3e} below floor {eig_floor:.1e}")
        return self


def annihilation(dim: int) -> SparseOperator:
    """Single-mode lowering operator with ``<n-1|a|n> = sqrt(n)``."""
    if int(dim) != dim or dim < 2:
        raise InvalidDimensionError(f"mode dimension must be an integer >= 2, got {dim}")
    dim = int(dim)
    m = sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), 1, shape=(dim, dim))
    return SparseOperator(FockBasis((dim,)), m)


def identity(basis: FockBasis | int) -> SparseOperator:
    if not isinstance(basis, FockBasis):
        basis = FockBasis((int(basis),))
    return SparseOperator(basis, sp.identity(basis.total_dim), known_hermitian=True)


def embed(op: SparseOperator, mode: int, basis: FockBasis) -> SparseOperator:
    """Lift a single-mode operator to act on ``mode`` of ``basis``."""
    if not 0 <= mode < basis.n_modes:
        raise InvalidDimensionError(f"mode index {mode} outside 0..{basis.n_modes - 1}")
    if op.shape[0] != basis.dims[mode]:
        raise InvalidDimensionError(
            f"operator dimension {op.shape[0]} does not match cutoff {basis.dims[mode]} of mode {mode}")
    left = int(np.prod(basis.dims[:mode]))
    right = int(np.prod(basis.dims[mode + 1:]))
    m = sp.kron(sp.kron(sp.identity(left), op.matrix), sp.identity(right))
    return SparseOperator(basis, m, op.known_hermitian)


def mode_operators(basis: FockBasis) -> tuple[SparseOperator, ...]:
    """Lowering operators of every mode, embedded in ``basis``."""
    return tuple(embed(annihilation(d), k, basis) for k, d in enumerate(basis.dims))


def number_operator(basis: FockBasis, mode: int) -> SparseOperator:
    n = basis.occupation_table[:, mode].astype(float)
    return SparseOperator(basis, sp.diags(n), known_hermitian=True)


def commutator(x: SparseOperator, y: SparseOperator) -> SparseOperator:
    return x @ y - y @ x


def expectation(op: SparseOperator, state: StateVector | DensityMatrix) -> complex:
    """``<psi|op|psi>`` for a (normalized) ket or ``tr(op rho)`` for a density matrix."""
    if state.basis != op.basis:
        raise InvalidDimensionError(f"basis mismatch: {op.basis.dims} vs {state.basis.dims}")
    if isinstance(state, StateVector):
        psi = state.amplitudes
        return complex(np.vdot(psi, op.matrix @ psi))
    return complex(op.matrix.multiply(state.matrix.T).sum())


def fock_state(basis: FockBasis, occupations: Sequence[int]) -> StateVector:
    psi = np.zeros(basis.total_dim, dtype=np.complex128)
    psi[basis.index(occupations)] = 1.0
    return StateVector(basis, psi)


def coherent_state(dim: int, alpha: complex) -> StateVector:
    """Coherent state truncated to ``dim`` levels and renormalized."""
    n = np.arange(dim)
    log_fact = np.cumsum(np.log(np.maximum(n, 1)))
    with np.errstate(divide="ignore"):
        amps = np.exp(n * np.log(complex(alpha)) - 0.5 * log_fact) if alpha != 0 else (n == 0).astype(complex)
    return StateVector(FockBasis((dim,)), amps).normalized()


def vec(matrix: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(matrix).reshape(-1, order="F")


def unvec(vector: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(vector).reshape((dim, dim), order="F")


def dump_operator(op: SparseOperator, fh: TextIO) -> None:
    """Write ``op`` as a ``dims`` header followed by ``row col re im`` triplets."""
    fh.write("dims " + " ".join(str(d) for d in op.basis.dims) + "\n")
    for r, c, v in op.entries():
        fh.write(f"{r} {c} {v.real!r} {v.imag!r}\n")


def load_operator(fh: TextIO) -> SparseOperator:
    header = fh.readline().split()
    if not header or header[0] != "dims":
        raise ValueError("operator dump must start with a 'dims' header line")
    basis = FockBasis(tuple(int(x) for x in header[1:]))
    rows, cols, vals = [], [], []
    for line in fh:
        if not line.strip():
            continue
        r, c, re_, im_ = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(complex(float(re_), float(im_)))
    d = basis.total_dim
    m = sp.coo_matrix((vals, (rows, cols)), shape=(d, d))
    return SparseOperator(basis, m)
