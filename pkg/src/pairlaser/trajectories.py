"""Monte Carlo wave-function (quantum jump) unraveling of the master equation.

Each trajectory evolves under ``H_eff = H - (i/2) sum_j C_j+ C_j``.  A jump
fires when the accumulated no-jump probability drops below a uniform random
threshold; the crossing is located by bisection of the time step down to
``dt / 2**bisection_depth`` (``dt / 128`` by default), the channel is drawn
with weights ``||C_j psi||^2``, and a fresh threshold is drawn.

Random numbers come from a Philox counter-based generator keyed by
``(master_seed, traj_index)``, so a trajectory does not depend on which
worker runs it or in which order.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, TextIO

import numpy as np
import scipy.linalg as la

from .errors import IncompatibleRecordsError, StepSizeTooLargeError
from .fockspace import SparseOperator, StateVector, fock_state, number_operator
from .model import LindbladModel
from .steadystate import estimate_norm

__all__ = [
    "TrajectoryConfig",
    "TrajectoryRecord",
    "EnsembleEstimate",
    "run_trajectory",
    "run_ensemble",
    "ensemble_average",
    "jump_rate",
    "dump_jump_log",
    "trajectory_rng",
]


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float = 0.01
    t_max: float = 20.0
    n_traj: int = 2000
    master_seed: int = 20080101
    record_stride: int = 50
    integrator: str = "expm"
    bisection_depth: int = 7

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_max > self.dt:
            raise ValueError("t_max must exceed dt")
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise ValueError("n_traj must be a positive integer")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")
        if self.integrator not in ("expm", "rk4"):
            raise ValueError("integrator must be 'expm' or 'rk4'")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if 2**self.bisection_depth < 100:
            raise ValueError("bisection_depth must resolve jump times to dt/100 or better")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def times(self) -> np.ndarray:
        steps = np.arange(0, self.n_steps + 1, self.record_stride)
        if steps[-1] != self.n_steps:
            steps = np.append(steps, self.n_steps)
        return steps * self.dt


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    times: np.ndarray
    expectations: dict[str, np.ndarray]
    jumps: list[tuple[float, str]]
    final_state: StateVector
    traj_index: int = 0


@dataclass(frozen=True, eq=False)
class EnsembleEstimate:
    times: np.ndarray
    mean: dict[str, np.ndarray]
    std_error: dict[str, np.ndarray]
    n_traj: int

    def at(self, label: str, index: int = -1) -> tuple[float, float]:
        """``(mean.real, std_error)`` of one observable at one time index."""
        return float(self.mean[label][index].real), float(self.std_error[label][index])


def trajectory_rng(master_seed: int, traj_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(master_seed) + (int(traj_index) << 64)))


def default_observables(model: LindbladModel) -> dict[str, SparseOperator]:
    return {f"n_{m}": number_operator(model.basis, k) for k, m in enumerate("abc")}


class _Stepper:
    """Sub-step propagators ``psi -> exp(-i H_eff dt / 2**k) psi`` for ``k = 0..depth``."""

    def __init__(self, model: LindbladModel, cfg: TrajectoryConfig):
        self.depth = cfg.bisection_depth
        heff = model.effective_hamiltonian()
        if cfg.integrator == "rk4":
            scale = estimate_norm(model.hamiltonian.matrix) + sum(
                estimate_norm(c.matrix.conj().T @ c.matrix) for c in model.collapse_ops) / 2
            if cfg.dt * scale >= 0.05:
                raise ValueError(f"dt = {cfg.dt:g} too large for RK4: dt * (||H|| + sum||C+C||/2) = "
                                 f"{cfg.dt * scale:.3f} >= 0.05")
            self._gen = (-1j * heff).tocsr()
            self._h = [cfg.dt / 2**k for k in range(self.depth + 1)]
            self.apply = self._rk4
        else:
            dense = -1j * heff.toarray()
            self._u = [la.expm(dense * (cfg.dt / 2**k)) for k in range(self.depth + 1)]
            self.apply = self._expm

    def _expm(self, psi, k):
        return self._u[k] @ psi

    def _rk4(self, psi, k):
        g, h = self._gen, self._h[k]
        k1 = g @ psi
        k2 = g @ (psi + 0.5 * h * k1)
        k3 = g @ (psi + 0.5 * h * k2)
        k4 = g @ (psi + h * k3)
        return psi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


class _Walker:
    """Mutable state of one trajectory while it is being integrated."""

    def __init__(self, stepper, jump_ops, labels, rng, psi, unit):
        self.stepper = stepper
        self.jump_ops = jump_ops
        self.labels = labels
        self.rng = rng
        self.psi = psi
        self.survival = 1.0
        self.threshold = rng.random()
        self.units = 0
        self.unit = unit
        self.jumps = []

    def advance(self, level: int) -> None:
        """Advance by ``dt / 2**level``, firing any jumps inside the interval."""
        phi = self.stepper.apply(self.psi, level)
        p = float(np.vdot(phi, phi).real)
        if level == 0 and p < 1e-12:
            raise StepSizeTooLargeError(f"norm fell to {p:.2e} within one step; reduce dt")
        depth = self.stepper.depth
        if self.survival * p > self.threshold:
            self.psi = phi / math.sqrt(p)
            self.survival *= p
            self.units += 2 ** (depth - level)
            return
        if level < depth:
            self.advance(level + 1)
            self.advance(level + 1)
            return
        # crossing within the finest sub-step: jump at its end
        self.psi = phi / math.sqrt(p)
        self.units += 1
        self._jump()

    def _jump(self) -> None:
        kicked = [op @ self.psi for op in self.jump_ops]
        weights = np.array([float(np.vdot(v, v).real) for v in kicked])
        total = math.fsum(weights)
        self.survival = 1.0
        self.threshold = self.rng.random()
        if total <= 0.0:
            return
        pick = self.rng.random() * total
        j = int(np.searchsorted(np.cumsum(weights), pick, side="right"))
        j = min(j, len(weights) - 1)
        while weights[j] == 0.0:
            j -= 1
        self.psi = kicked[j] / math.sqrt(weights[j])
        self.jumps.append((self.units * self.unit, self.labels[j]))


def run_trajectory(model: LindbladModel, cfg: TrajectoryConfig, traj_index: int,
                   psi0: StateVector | None = None,
                   observables: Mapping[str, SparseOperator] | None = None,
                   _stepper: _Stepper | None = None) -> TrajectoryRecord:
    """Integrate one quantum-jump trajectory (initial state: vacuum by default)."""
    if not 0 <= traj_index < cfg.n_traj:
        raise ValueError(f"traj_index {traj_index} outside 0..{cfg.n_traj - 1}")
    stepper = _stepper or _Stepper(model, cfg)
    obs = dict(observables) if observables is not None else default_observables(model)
    if psi0 is None:
        psi0 = fock_state(model.basis, (0,) * model.basis.n_modes)
    jump_ops = [c.matrix for c in model.collapse_ops]
    walker = _Walker(stepper, jump_ops, model.labels, trajectory_rng(cfg.master_seed, traj_index),
                     psi0.normalized().amplitudes.copy(), cfg.dt / 2**cfg.bisection_depth)
    obs_mats = [(label, op.matrix) for label, op in obs.items()]
    times = cfg.times
    record_steps = set(np.rint(times / cfg.dt).astype(int).tolist())
    values = {label: np.empty(len(times), dtype=np.complex128) for label in obs}
    slot = 0

    def record():
        nonlocal slot
        psi = walker.psi
        for label, m in obs_mats:
            values[label][slot] = np.vdot(psi, m @ psi)
        slot += 1

    record()
    for step in range(1, cfg.n_steps + 1):
        walker.advance(0)
        if step in record_steps:
            record()
    return TrajectoryRecord(times, values, walker.jumps, StateVector(model.basis, walker.psi), traj_index)


def _run_chunk(args):
    model, cfg, indices, psi0, observables = args
    stepper = _Stepper(model, cfg)
    return [run_trajectory(model, cfg, i, psi0, observables, _stepper=stepper) for i in indices]


def run_ensemble(model: LindbladModel, cfg: TrajectoryConfig, psi0: StateVector | None = None,
                 observables: Mapping[str, SparseOperator] | None = None, workers: int = 1,
                 chunk_size: int = 100) -> list[TrajectoryRecord]:
    """All ``cfg.n_traj`` trajectories, ordered by index; ``workers`` never changes the result."""
    chunks = [range(s, min(s + chunk_size, cfg.n_traj)) for s in range(0, cfg.n_traj, chunk_size)]
    jobs = [(model, cfg, list(c), psi0, observables) for c in chunks]
    if workers <= 1:
        results = [_run_chunk(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    return [rec for chunk in results for rec in chunk]


def _fsum_complex(values) -> complex:
    return complex(math.fsum(v.real for v in values), math.fsum(v.imag for v in values))


def ensemble_average(records: list[TrajectoryRecord]) -> EnsembleEstimate:
    """Pointwise mean and standard error (sample std / sqrt(n)) over trajectories.

    Sums are exactly rounded (``math.fsum``), so the result does not depend
    on the order of ``records``.
    """
    if len(records) < 2:
        raise IncompatibleRecordsError("need at least two records for an ensemble estimate")
    times = records[0].times
    labels = list(records[0].expectations)
    for rec in records[1:]:
        if rec.times.shape != times.shape or np.any(rec.times != times) or list(rec.expectations) != labels:
            raise IncompatibleRecordsError("records have different time grids or observables")
    n = len(records)
    mean, err = {}, {}
    for label in labels:
        stack = np.array([rec.expectations[label] for rec in records])
        m = np.array([_fsum_complex(col) / n for col in stack.T])
        dev2 = np.abs(stack - m) ** 2
        var = np.array([math.fsum(col) for col in dev2.T]) / (n - 1)
        mean[label] = m
        err[label] = np.sqrt(var / n)
    return EnsembleEstimate(times, mean, err, n)


def jump_rate(records: list[TrajectoryRecord], label: str, t_start: float, t_end: float | None = None
              ) -> tuple[float, float]:
    """Mean number of ``label`` jumps per unit time in ``[t_start, t_end]`` and its standard error."""
    t_end = records[0].times[-1] if t_end is None else t_end
    span = t_end - t_start
    counts = np.array([sum(1 for t, lab in rec.jumps if lab == label and t_start <= t <= t_end)
                       for rec in records], dtype=float)
    n = len(counts)
    mean = math.fsum(counts) / n
    std = math.sqrt(math.fsum((counts - mean) ** 2) / (n - 1)) if n > 1 else 0.0
    return mean / span, std / math.sqrt(n) / span


def dump_jump_log(record: TrajectoryRecord, fh: TextIO) -> None:
    """One line per jump: ``time channel_label``."""
    for t, label in record.jumps:
        fh.write(f"{t!r} {label}\n")
