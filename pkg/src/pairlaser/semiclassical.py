"""Threshold, steady-state branches and noise-free mean-field dynamics.

The amplitude equations are the drift part of the Langevin equations for
``alpha`` (cavity), ``beta`` (atom laser) and ``gamma`` (source mode)::

    d alpha/dt = -ka alpha + eta conj(beta) gamma
    d beta/dt  = -[kb + kbc (|gamma|^2 + 1)] beta + eta conj(alpha) gamma
    d gamma/dt = -(kc - kbc |beta|^2) gamma - eta alpha beta + mu

The pump amplitude ``mu`` is taken real; its phase has no observable effect.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InstabilityError
from .model import ModelParams

__all__ = [
    "MeanFieldState",
    "SemiclassicalBranch",
    "threshold",
    "steady_branch",
    "drift",
    "integrate_meanfield",
    "locate_bifurcation",
]


@dataclass(frozen=True)
class MeanFieldState:
    alpha: complex = 0j
    beta: complex = 0j
    gamma: complex = 0j

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = complex(getattr(self, name))
            if not (math.isfinite(value.real) and math.isfinite(value.imag)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)

    def to_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma], dtype=np.complex128)

    @classmethod
    def from_array(cls, z) -> MeanFieldState:
        return cls(complex(z[0]), complex(z[1]), complex(z[2]))

    @property
    def moduli(self) -> np.ndarray:
        return np.abs(self.to_array())


@dataclass(frozen=True)
class SemiclassicalBranch:
    mu_th: float
    alpha0: float
    beta0: float
    gamma0: float
    epsilon: float

    @property
    def n_a(self) -> float:
        return self.alpha0**2

    @property
    def n_b(self) -> float:
        return self.beta0**2

    @property
    def n_c(self) -> float:
        return self.gamma0**2

    def as_state(self) -> MeanFieldState:
        return MeanFieldState(self.alpha0, self.beta0, self.gamma0)


def threshold(params: ModelParams) -> float | None:
    """Oscillation threshold ``mu_th``, or ``None`` when ``eta^2 <= ka kbc``."""
    p = params
    excess = p.eta**2 - p.kappa_a * p.kappa_bc
    if excess <= 0:
        return None
    return p.kappa_c * math.sqrt(p.kappa_a * (p.kappa_b + p.kappa_bc) / excess)


def steady_branch(params: ModelParams, mu: float | None = None) -> SemiclassicalBranch:
    """Stable stationary amplitudes (real, non-negative) at pump ``mu``.

    Below threshold only the source mode is populated, ``gamma0 = mu / kc``.
    Above it ``gamma0`` is clamped at ``mu_th / kc`` and the two laser modes
    grow as ``sqrt(mu / mu_th - 1)``.
    """
    p = params
    mu = p.mu if mu is None else float(mu)
    mu_th = threshold(p)
    if mu_th is None:
        raise ValueError("no oscillation threshold: eta^2 <= kappa_a * kappa_bc")
    eps = mu / mu_th
    if eps <= 1.0:
        return SemiclassicalBranch(mu_th, 0.0, 0.0, mu / p.kappa_c, eps)
    excess = p.eta**2 - p.kappa_a * p.kappa_bc
    root = math.sqrt(eps - 1.0)
    alpha0 = p.eta * math.sqrt(p.kappa_c * (p.kappa_b + p.kappa_bc)) / excess * root
    beta0 = math.sqrt(p.kappa_a * p.kappa_c / excess) * root
    return SemiclassicalBranch(mu_th, alpha0, beta0, mu_th / p.kappa_c, eps)


def _drift_array(z: np.ndarray, p: ModelParams) -> np.ndarray:
    al, be, ga = z
    return np.array([
        -p.kappa_a * al + p.eta * be.conjugate() * ga,
        -(p.kappa_b + p.kappa_bc * (abs(ga) ** 2 + 1.0)) * be + p.eta * al.conjugate() * ga,
        -(p.kappa_c - p.kappa_bc * abs(be) ** 2) * ga - p.eta * al * be + p.mu,
    ])


def drift(state: MeanFieldState, params: ModelParams) -> MeanFieldState:
    """Time derivative of the amplitudes with the noise forces set to zero."""
    return MeanFieldState.from_array(_drift_array(state.to_array(), params))


def _max_rate(z: np.ndarray, p: ModelParams) -> float:
    amp = float(np.abs(z).max())
    return max(p.kappa_a, p.kappa_b + p.kappa_bc * (1.0 + amp**2), p.kappa_c + p.kappa_bc * amp**2,
               p.eta * amp, 1e-300)


def integrate_meanfield(initial: MeanFieldState, params: ModelParams, t_max: float, dt: float,
                        stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-step RK4 integration of the mean-field equations.

    Returns ``(times, states)`` with ``states`` of shape ``(n, 3)`` holding
    ``alpha, beta, gamma``; every ``stride``-th step is kept, plus the
    initial and final points.
    """
    z = initial.to_array()
    if dt * _max_rate(z, params) >= 0.1:
        raise ValueError(f"time step {dt:g} too large for the fastest rate {_max_rate(z, params):g}")
    n_steps = int(round(t_max / dt))
    times, states = [0.0], [z.copy()]
    h = dt
    for step in range(1, n_steps + 1):
        k1 = _drift_array(z, params)
        k2 = _drift_array(z + 0.5 * h * k1, params)
        k3 = _drift_array(z + 0.5 * h * k2, params)
        k4 = _drift_array(z + h * k3, params)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        norm = float(np.abs(z).max())
        if not norm < 1e6:
            raise InstabilityError(f"mean-field amplitudes diverged at t = {step * dt:g}")
        if step % stride == 0 or step == n_steps:
            times.append(step * dt)
            states.append(z.copy())
    return np.array(times), np.array(states)


def locate_bifurcation(params: ModelParams, mu_lo: float, mu_hi: float, xtol: float = 1e-4,
                       t_probe: float = 120.0, dt: float = 0.005, seed_amplitude: float = 1e-6) -> float:
    """Bisect for the pump at which the zero-laser branch loses stability.

    For each trial pump the system starts on the below-threshold fixed
    point with a tiny laser seed; the laser amplitude ``|beta|`` is compared
    between ``t_probe / 2`` and ``t_probe`` to decide growth or decay.
    """

    def grows(mu):
        p = params.replace(mu=mu)
        z0 = MeanFieldState(seed_amplitude, seed_amplitude, mu / p.kappa_c)
        _, states = integrate_meanfield(z0, p, t_probe, dt, stride=int(round(t_probe / (2 * dt))))
        return abs(states[-1, 1]) > abs(states[-2, 1])

    if grows(mu_lo) or not grows(mu_hi):
        raise ValueError("bifurcation not bracketed by [mu_lo, mu_hi]")
    while mu_hi - mu_lo > xtol:
        mid = 0.5 * (mu_lo + mu_hi)
        if grows(mid):
            mu_hi = mid
        else:
            mu_lo = mid
    return 0.5 * (mu_lo + mu_hi)
