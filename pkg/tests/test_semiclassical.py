import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairlaser.errors import InstabilityError
from pairlaser.model import ModelParams
from pairlaser.semiclassical import (
    MeanFieldState,
    drift,
    integrate_meanfield,
    locate_bifurcation,
    steady_branch,
    threshold,
)

REF = ModelParams()


def _random_params(rng):
    while True:
        p = ModelParams(kappa_a=rng.uniform(0.2, 3), kappa_b=rng.uniform(0.2, 3), kappa_c=rng.uniform(1, 20),
                        kappa_bc=rng.uniform(0, 1), eta=rng.uniform(0.5, 8))
        if p.has_threshold:
            return p


def test_threshold_reference_value():
    assert threshold(REF) == pytest.approx(10 * math.sqrt(1.1 / 24.9), rel=1e-14)
    assert abs(threshold(REF) - 2.102) < 1e-3


def test_threshold_unit_rates():
    p = ModelParams(kappa_a=1, kappa_b=1, kappa_c=1, kappa_bc=0, eta=1)
    assert threshold(p) == pytest.approx(1.0)


def test_no_threshold_marker():
    p = ModelParams(kappa_a=1, kappa_bc=1, eta=0.1)
    assert threshold(p) is None
    with pytest.raises(ValueError):
        steady_branch(p, 1.0)


def test_branch_at_threshold():
    mu_th = threshold(REF)
    br = steady_branch(REF, mu_th)
    assert br.alpha0 == 0.0 and br.beta0 == 0.0
    assert br.gamma0 == pytest.approx(mu_th / REF.kappa_c)
    above = steady_branch(REF, mu_th * (1 + 1e-12))
    assert above.alpha0 < 1e-5 and above.gamma0 == pytest.approx(br.gamma0)


def test_branch_without_heating_matches_occupation_formula():
    p = ModelParams(kappa_bc=0.0)
    br = steady_branch(p, 2 * threshold(p))
    assert br.n_a == pytest.approx(0.4) and br.n_b == pytest.approx(0.4)


def test_branch_reference_beta_squared():
    br = steady_branch(REF, 2 * threshold(REF))
    assert br.n_b == pytest.approx(10 / 24.9, rel=1e-12)
    assert br.epsilon == pytest.approx(2.0)


def test_drift_examples():
    zero = MeanFieldState()
    assert np.all(drift(zero, REF.replace(mu=0.0)).to_array() == 0)
    below = steady_branch(REF, 1.5).as_state()
    assert np.abs(drift(below, REF.replace(mu=1.5)).to_array()).max() < 1e-14


def test_fixed_point_residual_on_random_parameter_sets():
    rng = np.random.default_rng(1234)
    for _ in range(50):
        p = _random_params(rng)
        mu_th = threshold(p)
        for eps in (rng.uniform(0, 1), rng.uniform(1, 4)):
            mu = eps * mu_th
            br = steady_branch(p, mu)
            assert np.abs(drift(br.as_state(), p.replace(mu=mu)).to_array()).max() < 1e-10


@given(st.floats(-math.pi, math.pi), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_drift_gauge_equivariance(phi, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=3) + 1j * rng.normal(size=3)
    g = np.array([cmath.exp(1j * phi), cmath.exp(-1j * phi), 1.0])
    lhs = drift(MeanFieldState.from_array(g * z), REF).to_array()
    rhs = g * drift(MeanFieldState.from_array(z), REF).to_array()
    assert np.abs(lhs - rhs).max() < 1e-12


def test_gauge_related_trajectories():
    phi = 0.7
    z = np.array([0.01 + 0.02j, -0.03j, 0.1])
    g = np.array([cmath.exp(1j * phi), cmath.exp(-1j * phi), 1.0])
    p = REF.replace(mu=3.0)
    _, s1 = integrate_meanfield(MeanFieldState.from_array(z), p, 20.0, 0.005, stride=100)
    _, s2 = integrate_meanfield(MeanFieldState.from_array(g * z), p, 20.0, 0.005, stride=100)
    assert np.abs(s2 - g * s1).max() < 1e-9


def test_no_pump_decays_to_origin():
    _, s = integrate_meanfield(MeanFieldState(0.01, 0.02j, 0.01), REF.replace(mu=0.0), 60.0, 0.005, stride=12000)
    assert np.abs(s[-1]).max() < 1e-6


def test_below_threshold_asymptote():
    p = REF.replace(mu=1.5)
    _, s = integrate_meanfield(MeanFieldState(1e-3, 1e-3j, 0), p, 150.0, 0.005, stride=30000)
    assert np.abs(np.abs(s[-1]) - [0.0, 0.0, 0.15]).max() < 1e-6


def test_above_threshold_asymptote():
    p = REF.replace(mu=4.0)
    br = steady_branch(p)
    _, s = integrate_meanfield(MeanFieldState(1e-3, 1e-3j, 0), p, 150.0, 0.005, stride=30000)
    assert abs(abs(s[-1, 1]) ** 2 - br.n_b) < 1e-6
    assert np.abs(np.abs(s[-1]) - [br.alpha0, br.beta0, br.gamma0]).max() < 1e-6


def test_step_size_precondition():
    with pytest.raises(ValueError, match="too large"):
        integrate_meanfield(MeanFieldState(), REF, 1.0, 0.02)


def test_divergence_raises():
    # the step is admissible for the tiny initial state but not once the pump has filled the modes
    p = ModelParams(kappa_a=0.1, kappa_b=0.1, kappa_c=0.1, kappa_bc=0.0, eta=5.0, mu=50.0)
    with pytest.raises(InstabilityError):
        integrate_meanfield(MeanFieldState(0.1, 0.1, 0), p, 50.0, 0.19)


def test_output_grid():
    t, s = integrate_meanfield(MeanFieldState(), REF, 1.0, 0.005, stride=60)
    np.testing.assert_allclose(t, [0.0, 0.3, 0.6, 0.9, 1.0])
    assert s.shape == (5, 3)


def test_bisection_locates_threshold():
    mu = locate_bifurcation(REF, 1.5, 3.0)
    assert abs(mu - threshold(REF)) < 1e-3


def test_bisection_requires_bracket():
    with pytest.raises(ValueError):
        locate_bifurcation(REF, 2.5, 3.0)
