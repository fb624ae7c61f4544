"""Batch front end: ``pairlaser <config.json> [--experiment ...] [--out DIR] [--seed N] [--solver ...]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, PairLaserError, UndefinedObservableError
from .model import ModelParams, build_liouvillian_block, build_model
from .observables import (
    g2_tau,
    intensity_difference_spectrum,
    mandel_q,
    occupations_and_intensities,
)
from .semiclassical import MeanFieldState, integrate_meanfield, steady_branch, threshold
from .steadystate import BlockSolver, solve_null_space
from .trajectories import TrajectoryConfig, ensemble_average, run_ensemble

log = logging.getLogger(__name__)

EXPERIMENTS = ("single", "sweep", "g2", "spectrum")
SOLVERS = ("steady", "traj", "meanfield")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


@dataclass(frozen=True)
class SweepGrid:
    start: float = 0.0
    stop: float = 5.0
    count: int = 26

    def __post_init__(self):
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "stop", float(self.stop))
        if int(self.count) != self.count:
            raise ValueError("count must be an integer")
        object.__setattr__(self, "count", int(self.count))

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.count)


@dataclass(frozen=True)
class G2Settings:
    tau_max: float = 20.0
    points: int = 81


@dataclass(frozen=True)
class SpectrumSettings:
    omega_max: float = 10.0
    points: int = 41


@dataclass(frozen=True)
class MeanFieldSettings:
    t_max: float = 200.0
    dt: float = 0.005
    seed_amplitude: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    dims: tuple[int, int, int] = (10, 10, 8)
    solver: str = "steady"
    experiment: str = "single"
    sweep: SweepGrid = field(default_factory=SweepGrid)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    g2: G2Settings = field(default_factory=G2Settings)
    spectrum: SpectrumSettings = field(default_factory=SpectrumSettings)
    meanfield: MeanFieldSettings = field(default_factory=MeanFieldSettings)
    output_dir: str = "pairlaser-out"
    master_seed: int = 20080101
    workers: int = 1

    def validate(self) -> RunConfig:
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver: expected one of {SOLVERS}, got {self.solver!r}")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: expected one of {EXPERIMENTS}, got {self.experiment!r}")
        if len(self.dims) != 3 or any(int(d) != d or d < 2 for d in self.dims):
            raise ConfigError("dims: expected three integers >= 2")
        if self.experiment == "sweep" and self.sweep.count < 2:
            raise ConfigError("sweep.count: must be >= 2")
        if self.experiment == "sweep" and not self.sweep.start >= 0:
            raise ConfigError("sweep.start: pump amplitudes must be non-negative")
        if self.experiment in ("g2", "spectrum") and self.solver != "steady":
            raise ConfigError(f"solver: experiment {self.experiment!r} needs the steady solver")
        if self.experiment == "g2" and (self.g2.tau_max <= 0 or self.g2.points < 2):
            raise ConfigError("g2: tau_max must be positive and points >= 2")
        if self.experiment == "spectrum" and (self.spectrum.omega_max <= 0 or self.spectrum.points < 2):
            raise ConfigError("spectrum: omega_max must be positive and points >= 2")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if self.solver == "traj" and self.trajectory.n_traj < 2:
            raise ConfigError("trajectory.n_traj: need at least two trajectories for error bars")
        return self


_SECTIONS = {
    "params": ModelParams,
    "sweep": SweepGrid,
    "trajectory": TrajectoryConfig,
    "g2": G2Settings,
    "spectrum": SpectrumSettings,
    "meanfield": MeanFieldSettings,
}


def _build_section(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object")
    allowed = {f.name for f in fields(cls) if f.init and f.name != "master_seed"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown key")
    for key, value in data.items():
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{name}.{key}: expected a number")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        bad = next((k for k in data if k in str(exc)), None)
        raise ConfigError(f"{name}.{bad or '?'}: {exc}") from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run configuration; unknown keys are rejected."""
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    top = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value)
        elif key == "dims":
            if not (isinstance(value, list) and len(value) == 3 and all(isinstance(d, int) for d in value)):
                raise ConfigError("dims: expected a list of three integers")
            kwargs[key] = tuple(value)
        elif key in ("master_seed", "workers"):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key}: expected an integer")
            kwargs[key] = value
        else:
            if not isinstance(value, str):
                raise ConfigError(f"{key}: expected a string")
            kwargs[key] = value
    return _finish(RunConfig(**kwargs))


def _finish(cfg: RunConfig) -> RunConfig:
    if isinstance(cfg.master_seed, bool) or not 0 <= cfg.master_seed < 2**64:
        raise ConfigError("master_seed: must be a 64-bit unsigned integer")
    # the trajectory stream seed always follows the run seed
    cfg = replace(cfg, trajectory=replace(cfg.trajectory, master_seed=cfg.master_seed))
    return cfg.validate()


def apply_overrides(cfg: RunConfig, experiment=None, out=None, seed=None, solver=None) -> RunConfig:
    changes = {}
    if experiment is not None:
        changes["experiment"] = experiment
    if out is not None:
        changes["output_dir"] = str(out)
    if seed is not None:
        changes["master_seed"] = seed
    if solver is not None:
        changes["solver"] = solver
    return _finish(replace(cfg, **changes))


def _header(cfg: RunConfig, extra=()) -> list[str]:
    echo = {
        "params": cfg.params.as_dict(),
        "dims": list(cfg.dims),
        "solver": cfg.solver,
        "experiment": cfg.experiment,
    }
    if cfg.experiment == "sweep":
        echo["sweep"] = asdict(cfg.sweep)
    if cfg.solver == "traj":
        traj = asdict(cfg.trajectory)
        traj.pop("master_seed")
        echo["trajectory"] = traj
    if cfg.experiment == "g2":
        echo["g2"] = asdict(cfg.g2)
    if cfg.experiment == "spectrum":
        echo["spectrum"] = asdict(cfg.spectrum)
    if cfg.solver == "meanfield":
        echo["meanfield"] = asdict(cfg.meanfield)
    lines = [
        f"pairlaser {__version__}",
        "units: rates in units of kappa_a, times in units of 1/kappa_a",
        f"master_seed={cfg.master_seed}",
        "config=" + json.dumps(echo, sort_keys=True),
    ]
    return lines + list(extra)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _csv(header_lines, columns, rows) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _steady_point(params, dims):
    model = build_model(params, dims)
    return model, solve_null_space(model)


class _SolverCache:
    """One :class:`BlockSolver` per (parameters, dims, reference pump) key."""

    def __init__(self):
        self._solvers = {}

    def get(self, params, dims, ref):
        key = (params.replace(mu=ref), tuple(dims))
        if key not in self._solvers:
            reference = build_liouvillian_block(build_model(key[0], dims))
            self._solvers[key] = BlockSolver(reference=reference)
        return self._solvers[key]


_WORKER_CACHE = _SolverCache()


def _sweep_worker(args, solver_cache=None):
    params, dims, ref = args
    cache = solver_cache or _WORKER_CACHE
    model = build_model(params, dims)
    result = solve_null_space(model, solver=cache.get(params, dims, ref))
    occ = occupations_and_intensities(result.rho, params)
    return occ["n_a"], occ["n_b"], occ["n_c"], None, None, None


def _sweep_steady(cfg: RunConfig, mus):
    # every point shares a preconditioner built at the middle of the sweep,
    # so the output does not depend on the worker count
    ref = float(np.median(mus))
    jobs = [(cfg.params.replace(mu=float(m)), cfg.dims, ref) for m in mus]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_sweep_worker, jobs))
    cache = _SolverCache()
    return [_sweep_worker(job, solver_cache=cache) for job in jobs]


def _traj_point(cfg: RunConfig, params) -> tuple:
    model = build_model(params, cfg.dims)
    records = run_ensemble(model, cfg.trajectory, workers=cfg.workers)
    est = ensemble_average(records)
    (na, ea), (nb, eb), (nc, ec) = (est.at(label) for label in ("n_a", "n_b", "n_c"))
    return na, nb, nc, ea, eb, ec


def _meanfield_point(cfg: RunConfig, params, index: int) -> tuple:
    rng = np.random.Generator(np.random.Philox(key=cfg.master_seed + (index << 64)))
    z = cfg.meanfield.seed_amplitude * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
    _, states = integrate_meanfield(MeanFieldState.from_array(z), params, cfg.meanfield.t_max, cfg.meanfield.dt,
                                    stride=max(1, int(round(cfg.meanfield.t_max / cfg.meanfield.dt))))
    na, nb, nc = np.abs(states[-1]) ** 2
    return float(na), float(nb), float(nc), None, None, None


def _run_sweep(cfg: RunConfig) -> dict[str, str]:
    mus = cfg.sweep.values()
    if cfg.solver == "steady":
        rows = _sweep_steady(cfg, mus)
    elif cfg.solver == "traj":
        rows = [_traj_point(cfg, cfg.params.replace(mu=float(m))) for m in mus]
    else:
        rows = [_meanfield_point(cfg, cfg.params.replace(mu=float(m)), i) for i, m in enumerate(mus)]
    files = {
        "sweep.csv": _csv(_header(cfg), ["mu", "n_a", "n_b", "n_c", "n_a_err", "n_b_err", "n_c_err"],
                          [(m, *r) for m, r in zip(mus, rows)]),
    }
    mu_th = threshold(cfg.params)
    semi_rows = []
    for m in mus:
        if mu_th is None:
            semi_rows.append((m, None, 0.0, 0.0, m / cfg.params.kappa_c))
        else:
            br = steady_branch(cfg.params, float(m))
            semi_rows.append((m, br.mu_th, br.alpha0, br.beta0, br.gamma0))
    semi_rows = [(*r, *(None if v is None else v**2 for v in r[2:])) for r in semi_rows]
    files["semiclassical.csv"] = _csv(
        _header(cfg, [f"mu_th={_fmt(mu_th) or 'none'}"]),
        ["mu", "mu_th", "alpha0", "beta0", "gamma0", "n_a", "n_b", "n_c"], semi_rows)
    return files


def _run_single(cfg: RunConfig) -> dict[str, str]:
    p = cfg.params
    if cfg.solver == "steady":
        model, result = _steady_point(p, cfg.dims)
        occ = occupations_and_intensities(result.rho, p)
        qs = []
        for mode in (0, 1):
            try:
                qs.append(mandel_q(result.rho, mode))
            except UndefinedObservableError:
                qs.append(None)
        row = (p.mu, occ["n_a"], occ["n_b"], occ["n_c"], None, None, None, occ["I_a"], occ["I_b"], *qs)
    else:
        vals = _traj_point(cfg, p) if cfg.solver == "traj" else _meanfield_point(cfg, p, 0)
        row = (p.mu, *vals, 2 * p.kappa_a * vals[0], 2 * p.kappa_b * vals[1], None, None)
    cols = ["mu", "n_a", "n_b", "n_c", "n_a_err", "n_b_err", "n_c_err", "I_a", "I_b", "Q_a", "Q_b"]
    return {"single.csv": _csv(_header(cfg), cols, [row])}


def _run_g2(cfg: RunConfig) -> dict[str, str]:
    model, result = _steady_point(cfg.params, cfg.dims)
    taus = np.linspace(0.0, cfg.g2.tau_max, cfg.g2.points)
    files = {}
    for mode, name in ((0, "a"), (1, "b")):
        series = g2_tau(model, result.rho, mode, taus)
        buf = io.StringIO()
        series.to_csv(buf, _header(cfg, [f"mode={name}", "columns=tau,g2"]))
        files[f"g2_{name}.csv"] = buf.getvalue()
    return files


def _run_spectrum(cfg: RunConfig) -> dict[str, str]:
    model, result = _steady_point(cfg.params, cfg.dims)
    omegas = np.linspace(0.0, cfg.spectrum.omega_max, cfg.spectrum.points)
    series, report = intensity_difference_spectrum(model, result.rho, omegas)
    summary = (f"V0={_fmt(report.V0_raw)} shot_level={_fmt(report.shot_level)} ratio={_fmt(report.ratio)} "
               f"squeezing_percent={_fmt(report.squeezing_percent)}")
    buf = io.StringIO()
    series.to_csv(buf, _header(cfg, ["columns=omega,V", summary]))
    return {"spectrum.csv": buf.getvalue(), "squeezing.txt": "\n".join(f"# {h}" for h in _header(cfg)) +
            "\n" + summary + "\n"}


def run_experiment(cfg: RunConfig) -> dict[str, Path]:
    """Run the configured experiment and write its files; returns name -> path.

    All numerical work finishes before anything is written, and a failed
    write removes the files already produced.
    """
    runner = {"single": _run_single, "sweep": _run_sweep, "g2": _run_g2, "spectrum": _run_spectrum}[cfg.experiment]
    files = runner(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    try:
        for name, text in files.items():
            path = out / name
            path.write_text(text)
            written[name] = path
    except OSError:
        for path in written.values():
            path.unlink(missing_ok=True)
        raise
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pairlaser", description=__doc__.splitlines()[0])
    parser.add_argument("config", help="JSON run configuration ('-' for stdin)")
    parser.add_argument("--experiment", choices=EXPERIMENTS)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--solver", choices=SOLVERS)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = sys.stdin.read() if args.config == "-" else Path(args.config).read_text()
        cfg = apply_overrides(parse_config(text), args.experiment, args.out, args.seed, args.solver)
    except OSError as exc:
        print(f"pairlaser: cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"pairlaser: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        written = run_experiment(cfg)
    except (PairLaserError, ValueError, RuntimeError, MemoryError) as exc:
        print(f"pairlaser: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in written.values():
        print(path)
    if cfg.experiment == "spectrum":
        print(written["squeezing.txt"].read_text().splitlines()[-1])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
