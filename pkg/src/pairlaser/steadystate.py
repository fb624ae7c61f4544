"""Stationary state of the master equation.

Two independent routes:

* :func:`solve_null_space` solves ``L v = 0`` with one balance equation
  replaced by the trace condition ``tr rho = 1`` (sparse LU for small
  blocks, ILU-preconditioned GMRES for large ones);
* :func:`solve_long_time` integrates ``d rho/dt = L rho`` from the vacuum
  with a fixed-step RK4 scheme until the state stops changing.

Both work on the zero ``n_a - n_b`` difference block of the Liouvillian,
which is invariant and contains the (unique) steady state.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotConvergedError, PositivityError, SolverFailedError
from .fockspace import DensityMatrix
from .model import LindbladModel, LiouvillianBlock, build_liouvillian_block

__all__ = [
    "SteadyStateResult",
    "BlockSolver",
    "solve_null_space",
    "solve_long_time",
    "estimate_norm",
]

log = logging.getLogger(__name__)

DIRECT_LIMIT = 4000  # block size above which ILU + GMRES replaces sparse LU
EIG_FLOOR = -1e-8
DEGENERACY_RESIDUAL = 1e-6


@dataclass(frozen=True, eq=False)
class SteadyStateResult:
    rho: DensityMatrix
    residual: float
    method: str
    info: dict = field(default_factory=dict)


class BlockSolver:
    """Linear solves with a Liouvillian block.

    Small blocks are factorized exactly (sparse LU, one factorization per
    block).  Large blocks use GMRES preconditioned by an incomplete LU of the
    trace-bordered matrix.  Passing ``reference`` pins the preconditioner to
    that block (typically a neighbouring parameter point); it is then reused
    for every block of the same size, so results do not depend on the order
    in which blocks are solved.  Without it, the first large block solved
    plays the reference role.  Whenever the cached preconditioner fails to
    converge within ``max_reuse_iterations``, a fresh ILU of the current
    block is used for that solve only.
    """

    def __init__(self, block: LiouvillianBlock | None = None, *, reference: LiouvillianBlock | None = None,
                 direct_limit: int = DIRECT_LIMIT, drop_tol: float = 1e-4, fill_factor: float = 20.0,
                 gmres_rtol: float = 1e-12, max_reuse_iterations: int = 120):
        self.direct_limit = direct_limit
        self.drop_tol = drop_tol
        self.fill_factor = fill_factor
        self.gmres_rtol = gmres_rtol
        self.max_reuse_iterations = max_reuse_iterations
        self.reference = reference
        self._lu = None
        self._ilu = None
        self.block = None
        self._bordered = None
        if block is not None:
            self.set_block(block)

    @staticmethod
    def _border(block: LiouvillianBlock):
        row = int(block.diagonal_slots[0])
        L = block.matrix.tolil(copy=True)
        L[row, :] = block.trace_weights
        return row, L.tocsc()

    def set_block(self, block: LiouvillianBlock) -> None:
        self.block = block
        self._row, self._bordered = self._border(block)
        self._lu = None
        if self._ilu is not None and self._ilu.shape != self._bordered.shape:
            self._ilu = None

    def _ilu_of(self, matrix):
        ilu = spla.spilu(matrix, drop_tol=self.drop_tol, fill_factor=self.fill_factor)
        log.debug("ILU factor of size %d, fill %d", matrix.shape[0], ilu.L.nnz + ilu.U.nnz)
        return ilu

    def _cached_ilu(self):
        if self._ilu is None:
            if self.reference is not None and self.reference.size == self.block.size:
                self._ilu = self._ilu_of(self._border(self.reference)[1])
            else:
                self._ilu = self._ilu_of(self._bordered)
        return self._ilu

    @property
    def uses_direct(self) -> bool:
        return self.block.size <= self.direct_limit

    def _factor_direct(self):
        if self._lu is None:
            self._lu = spla.splu(self._bordered, permc_spec="COLAMD")
        return self._lu

    def _gmres(self, rhs, ilu):
        M = spla.LinearOperator(self._bordered.shape, ilu.solve, dtype=np.complex128)
        count = [0]

        def tick(_):
            count[0] += 1

        x, status = spla.gmres(self._bordered, rhs, M=M, rtol=self.gmres_rtol, atol=0.0, restart=80,
                               maxiter=50, callback=tick, callback_type="pr_norm")
        return x, status, count[0]

    def solve_bordered(self, rhs: np.ndarray) -> np.ndarray:
        """Solve the bordered system ``[L with trace row] x = rhs``."""
        rhs = np.asarray(rhs, dtype=np.complex128)
        if self.uses_direct:
            return self._factor_direct().solve(rhs)
        x, status, its = self._gmres(rhs, self._cached_ilu())
        if status == 0 and its <= self.max_reuse_iterations:
            return x
        log.debug("cached ILU gave status %s after %d iterations; using a fresh factor", status, its)
        x, status, its = self._gmres(rhs, self._ilu_of(self._bordered))
        if status != 0:
            res = float(np.abs(self._bordered @ x - rhs).max())
            raise SolverFailedError(f"GMRES did not converge (status {status}, residual {res:.3e})", res)
        return x

    def steady_vector(self) -> np.ndarray:
        rhs = np.zeros(self.block.size, dtype=np.complex128)
        rhs[self._row] = 1.0
        return self.solve_bordered(rhs)

    def solve_traceless(self, rhs: np.ndarray) -> np.ndarray:
        """Traceless ``x`` with ``L x = rhs`` for a traceless right-hand side."""
        rhs = np.array(rhs, dtype=np.complex128)
        rhs[self._row] = 0.0
        return self.solve_bordered(rhs)


def _finalize(model: LindbladModel, block: LiouvillianBlock, v: np.ndarray, method: str,
              tol: float, info: dict) -> SteadyStateResult:
    rho = block.expand(v)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    residual = float(np.abs(block.matrix @ block.restrict(rho)).max())
    dm = DensityMatrix(model.basis, rho)
    lam = dm.min_eigenvalue()
    info = dict(info, min_eigenvalue=lam)
    if lam <= EIG_FLOOR:
        raise PositivityError(f"steady state has eigenvalue {lam:.3e} < {EIG_FLOOR:.0e}; "
                              "the Fock truncation is probably too small")
    if residual >= tol:
        raise SolverFailedError(f"steady-state residual {residual:.3e} exceeds tolerance {tol:.1e}", residual)
    return SteadyStateResult(dm, residual, method, info)


def solve_null_space(model: LindbladModel, tol: float = 1e-9, *, solver: BlockSolver | None = None,
                     sector: bool = True) -> SteadyStateResult:
    """Steady state from the null space of the Liouvillian.

    Pass a :class:`BlockSolver` to reuse its factorization across calls.
    If the null space is degenerate the bordered system is singular; the
    minimum-norm trace-one least-squares solution is returned instead and
    ``info["degenerate"]`` is set.
    """
    block = build_liouvillian_block(model, sector=sector)
    solver = solver or BlockSolver()
    solver.set_block(block)
    info = {"block_size": block.size, "degenerate": False}
    try:
        v = solver.steady_vector()
        # a singular bordered matrix (degenerate null space) shows up as a
        # factorization error or a grossly wrong solution
        if not np.all(np.isfinite(v)) or np.abs(block.matrix @ v).max() >= DEGENERACY_RESIDUAL:
            raise RuntimeError("singular bordered system")
    except (RuntimeError, SolverFailedError) as exc:
        log.debug("bordered solve failed (%s); falling back to least squares", exc)
        A = sp.vstack([block.matrix, sp.csr_matrix(block.trace_weights)]).tocsr()
        b = np.zeros(block.size + 1, dtype=np.complex128)
        b[-1] = 1.0
        v = spla.lsqr(A, b, atol=1e-15, btol=1e-15, iter_lim=20 * block.size)[0]
        warnings.warn("Liouvillian null space is degenerate; returning the minimum-norm "
                      "trace-one steady state", RuntimeWarning, stacklevel=2)
        info["degenerate"] = True
    return _finalize(model, block, v, "null_space", tol, info)


def estimate_norm(A: sp.spmatrix, iterations: int = 60, seed: int = 0) -> float:
    """Spectral-norm estimate of ``A`` by power iteration on ``A^H A``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.shape[1]) + 1j * rng.standard_normal(A.shape[1])
    x /= np.linalg.norm(x)
    AH = A.conj().T.tocsr()
    s = 0.0
    for _ in range(iterations):
        y = AH @ (A @ x)
        s = np.linalg.norm(y)
        if s == 0:
            return 0.0
        x = y / s
    return float(np.sqrt(s))


def solve_long_time(model: LindbladModel, t_max: float, dt: float | None = None, tol: float = 1e-10,
                    *, check_interval: float = 0.5, residual_tol: float = 1e-6,
                    sector: bool = True) -> SteadyStateResult:
    """Relax the vacuum under ``d rho/dt = L rho`` until ``max|rho(t + T) - rho(t)| < tol``.

    ``T`` is ``check_interval`` (rounded to whole steps).  ``dt`` defaults to
    ``0.05 / ||L||``; a user step needs ``||L|| dt < 0.1``.
    """
    block = build_liouvillian_block(model, sector=sector)
    L = block.matrix
    norm = estimate_norm(L)
    if dt is None:
        dt = 0.05 / max(norm, 1e-300)
    if norm * dt >= 0.1:
        raise ValueError(f"time step {dt:g} too large: ||L|| dt = {norm * dt:.3f} >= 0.1")
    t_weights = block.trace_weights
    v = np.zeros(block.size, dtype=np.complex128)
    v[block.diagonal_slots[0]] = 1.0
    steps_per_check = max(1, int(round(check_interval / dt)))
    n_checks = int(np.ceil(t_max / (steps_per_check * dt)))
    drift = 0.0
    change = np.inf
    for check in range(n_checks):
        previous = v.copy()
        for _ in range(steps_per_check):
            k1 = L @ v
            k2 = L @ (v + 0.5 * dt * k1)
            k3 = L @ (v + 0.5 * dt * k2)
            k4 = L @ (v + dt * k3)
            v = v + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        drift = max(drift, abs(t_weights @ v - 1.0))
        change = float(np.abs(v - previous).max())
        if change < tol:
            info = {"block_size": block.size, "t_final": (check + 1) * steps_per_check * dt, "dt": dt,
                    "trace_drift": drift, "norm_estimate": norm}
            return _finalize(model, block, v, "long_time_integration", residual_tol, info)
    raise NotConvergedError(f"not converged by t_max={t_max}: last change {change:.3e}", change)
