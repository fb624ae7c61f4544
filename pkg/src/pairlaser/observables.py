"""Occupations, photon statistics, g2(tau) and the twin-beam noise spectrum.

Two-time correlations use the quantum regression theorem on the
``n_a - n_b`` difference block of the Liouvillian: ``k rho k+`` stays in
that block for ``k = a, b``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverFailedError, UndefinedObservableError
from .fockspace import DensityMatrix, StateVector, mode_operators
from .model import LindbladModel, ModelParams, build_liouvillian_block
from .steadystate import BlockSolver, solve_null_space

__all__ = [
    "ObservableSeries",
    "SqueezingReport",
    "ConvergenceReport",
    "occupations_and_intensities",
    "mandel_q",
    "g2_zero",
    "g2_tau",
    "intensity_difference_spectrum",
    "truncation_convergence_check",
]


@dataclass(frozen=True, eq=False)
class ObservableSeries:
    label: str
    abscissa: np.ndarray
    values: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.abscissa, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("abscissa and values must be 1-d arrays of equal length")
        if np.any(np.diff(x) <= 0):
            raise ValueError("abscissa must be strictly increasing")
        if not np.all(np.isfinite(y)):
            raise ValueError("series values must be finite")
        object.__setattr__(self, "abscissa", x)
        object.__setattr__(self, "values", y)
        if self.errors is not None:
            object.__setattr__(self, "errors", np.asarray(self.errors, dtype=float))

    def to_csv(self, fh: TextIO, header: Sequence[str] = ()) -> None:
        """``# label=...`` and any extra ``#`` lines, then ``abscissa,value[,stderr]`` rows."""
        fh.write(f"# label={self.label}\n")
        for line in header:
            fh.write(f"# {line}\n")
        for i, (x, y) in enumerate(zip(self.abscissa, self.values)):
            row = f"{float(x)!r},{float(y)!r}"
            if self.errors is not None:
                row += f",{float(self.errors[i])!r}"
            fh.write(row + "\n")


@dataclass(frozen=True)
class SqueezingReport:
    V0_raw: float
    shot_level: float
    ratio: float
    squeezing_percent: float


def _populations(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return np.abs(state.normalized().amplitudes) ** 2
    return state.matrix.diagonal().real


def _mode_moments(state, mode: int) -> tuple[float, float]:
    p = _populations(state)
    n = state.basis.occupation_table[:, mode].astype(float)
    return float(p @ n), float(p @ n**2)


def occupations_and_intensities(rho: DensityMatrix, params: ModelParams) -> dict[str, float]:
    """Mean occupations and output fluxes ``I_k = 2 kappa_k <n_k>``."""
    n_a, n_b, n_c = (_mode_moments(rho, k)[0] for k in range(3))
    return {"n_a": n_a, "n_b": n_b, "n_c": n_c,
            "I_a": 2 * params.kappa_a * n_a, "I_b": 2 * params.kappa_b * n_b}


def mandel_q(rho: DensityMatrix | StateVector, mode: int) -> float:
    """``Q = Var(n) / <n> - 1``."""
    mean, second = _mode_moments(rho, mode)
    if mean <= 1e-14:
        raise UndefinedObservableError(f"Mandel Q undefined: <n> = {mean:.3e} in mode {mode}")
    return (second - mean**2) / mean - 1.0


def g2_zero(rho: DensityMatrix, mode: int) -> float:
    """Equal-time ``<k+ k+ k k> / <n>^2`` from the diagonal of ``rho``."""
    mean, second = _mode_moments(rho, mode)
    if mean <= 1e-14:
        raise UndefinedObservableError(f"g2 undefined: <n> = {mean:.3e} in mode {mode}")
    return (second - mean) / mean**2


def _check_stationary(block, rho, tol):
    residual = float(np.abs(block.matrix @ block.restrict(rho.matrix)).max())
    if residual >= tol:
        raise ValueError(f"rho is not stationary: residual {residual:.3e} >= {tol:.1e}")
    if block.leakage(rho.matrix) > tol:
        raise ValueError("rho has coherences outside the n_a - n_b difference block")


def _propagate(L: sp.csr_matrix, v0: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """``exp(L tau) v0`` for every ``tau`` in an increasing grid; rows are time points."""
    out = np.empty((len(taus), len(v0)), dtype=np.complex128)
    steps = np.diff(taus)
    uniform = len(taus) > 2 and np.allclose(steps, steps[0], rtol=1e-12, atol=0)
    if uniform:
        start = spla.expm_multiply(L * taus[0], v0) if taus[0] > 0 else v0
        out[:] = spla.expm_multiply(L, start, start=0.0, stop=float(taus[-1] - taus[0]), num=len(taus),
                                    endpoint=True)
        return out
    v, t = v0, 0.0
    for i, tau in enumerate(taus):
        if tau > t:
            v = spla.expm_multiply(L * (tau - t), v)
            t = tau
        out[i] = v
    return out


def g2_tau(model: LindbladModel, rho_ss: DensityMatrix, mode: int, tau_grid, *,
           stationarity_tol: float = 1e-8) -> ObservableSeries:
    """Normalized intensity correlation ``<k+(0) k+k(tau) k(0)> / <n>^2`` by quantum regression."""
    taus = np.asarray(tau_grid, dtype=float)
    if np.any(taus < 0) or np.any(np.diff(taus) <= 0):
        raise ValueError("tau_grid must be non-negative and strictly increasing")
    block = build_liouvillian_block(model)
    _check_stationary(block, rho_ss, stationarity_tol)
    mean = _mode_moments(rho_ss, mode)[0]
    if mean <= 1e-14:
        raise UndefinedObservableError(f"g2 undefined: <n> = {mean:.3e} in mode {mode}")
    k = _lowering(model, mode)
    sigma0 = block.restrict(k @ rho_ss.matrix @ k.conj().T)
    nk = block.restrict(np.diag(model.basis.occupation_table[:, mode].astype(complex)))
    evolved = _propagate(block.matrix, sigma0, taus)
    values = (evolved @ nk).real / mean**2
    return ObservableSeries(f"g2_{'abc'[mode]}", taus, values)


def _lowering(model: LindbladModel, mode: int) -> sp.csr_matrix:
    return mode_operators(model.basis)[mode].matrix


def intensity_difference_spectrum(model: LindbladModel, rho_ss: DensityMatrix, omega_grid, *,
                                  solver: BlockSolver | None = None, stationarity_tol: float = 1e-8
                                  ) -> tuple[ObservableSeries, SqueezingReport]:
    """Noise spectrum of ``Delta I = I_a - I_b`` and its zero-frequency squeezing.

    ``V(w) = S_shot + S_N(w)`` with ``S_shot = I_a + I_b`` and the normally
    ordered part::

        S_N(w) = 2 Re sum_jk s_j s_k (2 k_j)(2 k_k) tr[n_j (i w - L)^-1 (k rho k+ - <n_k> rho)]

    (``s_a = +1``, ``s_b = -1``), i.e. the one-sided Laplace transform of the
    regression correlations folded over ``+-tau`` so ``V`` is real and even.
    At ``w = 0`` the singular resolvent is replaced by the traceless inverse
    of ``L``.
    """
    omegas = np.asarray(omega_grid, dtype=float)
    p = model.params
    block = build_liouvillian_block(model)
    _check_stationary(block, rho_ss, stationarity_tol)
    if solver is None:
        solver = BlockSolver(block)
    elif solver.block is not block:
        solver.set_block(block)
    occ = model.basis.occupation_table
    rho = rho_ss.matrix
    v_rho = block.restrict(rho)
    kappas = (p.kappa_a, p.kappa_b)
    signs = (1.0, -1.0)
    n_diag = [block.restrict(np.diag(occ[:, m].astype(complex))) for m in (0, 1)]
    means = [float(_mode_moments(rho_ss, m)[0]) for m in (0, 1)]
    deltas = []
    for m in (0, 1):
        k = _lowering(model, m)
        deltas.append(block.restrict(k @ rho @ k.conj().T) - means[m] * v_rho)
    shot = 2 * kappas[0] * means[0] + 2 * kappas[1] * means[1]
    if shot < 1e-10:
        warnings.warn("output intensities vanish; the shot-noise level is degenerate", RuntimeWarning,
                      stacklevel=2)

    weights = [[signs[j] * signs[k] * 4 * kappas[j] * kappas[k] for k in (0, 1)] for j in (0, 1)]

    def normal_part(xs):
        total = 0.0
        for j in (0, 1):
            for k in (0, 1):
                total += weights[j][k] * 2.0 * float((n_diag[j] @ xs[k]).real)
        return total

    def resolvent_solutions(omega):
        if omega == 0.0:
            return [solver.solve_traceless(-d) for d in deltas]
        shifted = (1j * omega * sp.identity(block.size, format="csc") - block.matrix).tocsc()
        if block.size <= solver.direct_limit:
            lu = spla.splu(shifted)
            return [lu.solve(d) for d in deltas]
        ilu = spla.spilu(shifted, drop_tol=solver.drop_tol, fill_factor=solver.fill_factor)
        M = spla.LinearOperator(shifted.shape, ilu.solve, dtype=np.complex128)
        out = []
        for d in deltas:
            x, status = spla.gmres(shifted, d, M=M, rtol=solver.gmres_rtol, atol=0.0, restart=80, maxiter=50)
            if status != 0:
                raise SolverFailedError(f"GMRES failed for the resolvent at omega={omega:g}")
            out.append(x)
        return out

    v0 = shot + normal_part(resolvent_solutions(0.0))
    values = np.array([v0 if w == 0.0 else shot + normal_part(resolvent_solutions(w)) for w in omegas])
    ratio = v0 / shot if shot > 0 else math.nan
    report = SqueezingReport(v0, shot, ratio, 100.0 * (1.0 - ratio))
    return ObservableSeries("V", omegas, values), report


@dataclass(frozen=True)
class ConvergenceReport:
    base_dims: tuple[int, ...]
    enlarged_dims: tuple[int, ...]
    base_value: float
    enlarged_value: float
    relative_change: float
    passed: bool


def truncation_convergence_check(model_builder: Callable[[tuple[int, ...]], LindbladModel],
                                 base_dims: Sequence[int],
                                 observable: int | Callable[[LindbladModel, DensityMatrix], float],
                                 *, increment: int = 2, tolerance: float = 0.005,
                                 solver: Callable[[LindbladModel], object] = solve_null_space
                                 ) -> ConvergenceReport:
    """Compare a steady-state observable at ``base_dims`` and ``base_dims + increment``.

    ``observable`` is a mode index (mean occupation) or a callable
    ``(model, rho) -> float``.
    """
    if isinstance(observable, (int, np.integer)):
        mode = int(observable)

        def observable(model, rho):
            return _mode_moments(rho, mode)[0]

    base = tuple(int(d) for d in base_dims)
    bigger = tuple(d + increment for d in base)
    values = []
    for dims in (base, bigger):
        model = model_builder(dims)
        values.append(float(observable(model, solver(model).rho)))
    v0, v1 = values
    change = abs(v1 - v0)
    rel = 0.0 if change == 0.0 else change / max(abs(v0), abs(v1))
    return ConvergenceReport(base, bigger, v0, v1, rel, rel < tolerance)
