import numpy as np
import pytest
import scipy.sparse as sp

from conftest import dense_steady_state
from pairlaser.errors import NotConvergedError, SolverFailedError
from pairlaser.fockspace import number_operator
from pairlaser.model import ModelParams, build_liouvillian_block, build_model
from pairlaser.observables import occupations_and_intensities, truncation_convergence_check
from pairlaser.steadystate import BlockSolver, estimate_norm, solve_long_time, solve_null_space

SMALL = (4, 4, 3)


def _occ(result, params):
    occ = occupations_and_intensities(result.rho, params)
    return np.array([occ["n_a"], occ["n_b"], occ["n_c"]])


@pytest.fixture(scope="module")
def reference_pair():
    p = ModelParams()
    model = build_model(p, SMALL)
    return p, solve_null_space(model), solve_long_time(model, t_max=60.0, tol=1e-11)


def test_vacuum_without_pump():
    p = ModelParams(mu=0.0)
    model = build_model(p, SMALL)
    for result in (solve_null_space(model), solve_long_time(model, t_max=10.0)):
        rho = result.rho.matrix
        assert abs(rho[0, 0] - 1) < 1e-12
        assert np.allclose(_occ(result, p), 0.0, atol=1e-12)


def test_driven_source_without_gain():
    p = ModelParams(eta=0.0, mu=3.0)
    model = build_model(p, (2, 2, 8))
    expected = (p.mu / p.kappa_c) ** 2
    for result in (solve_null_space(model), solve_long_time(model, t_max=10.0)):
        assert _occ(result, p)[2] == pytest.approx(expected, rel=1e-8)


def test_matches_dense_oracle(small_oracle):
    rho_dense, _ = small_oracle
    result = solve_null_space(build_model(ModelParams(), (4, 4, 3)))
    assert abs(result.rho.matrix - rho_dense).max() < 1e-10
    assert result.method == "null_space"
    assert result.residual < 1e-9


def test_methods_agree_elementwise(reference_pair):
    p, exact, relaxed = reference_pair
    assert relaxed.method == "long_time_integration"
    assert abs(exact.rho.matrix - relaxed.rho.matrix).max() < 1e-6
    n0, n1 = _occ(exact, p), _occ(relaxed, p)
    assert np.all(n0 > 0)
    np.testing.assert_allclose(n1, n0, rtol=1e-6)


def test_long_time_trace_drift(reference_pair):
    _, _, relaxed = reference_pair
    assert relaxed.info["trace_drift"] < 1e-8
    assert relaxed.info["norm_estimate"] * relaxed.info["dt"] < 0.1


def test_density_matrix_invariants(reference_pair):
    _, exact, _ = reference_pair
    exact.rho.validate()
    assert exact.info["min_eigenvalue"] > -1e-8


@pytest.mark.parametrize("params", [
    ModelParams(),
    ModelParams(kappa_bc=0.0, mu=4.0),
    ModelParams(kappa_a=0.5, kappa_b=1.5, kappa_c=4.0, kappa_bc=0.3, eta=2.0, mu=1.5),
])
def test_ci_parameter_sets_agree(params):
    model = build_model(params, (3, 3, 3))
    n0 = _occ(solve_null_space(model), params)
    n1 = _occ(solve_long_time(model, t_max=120.0, tol=1e-12), params)
    np.testing.assert_allclose(n1, n0, rtol=1e-6)


def test_pair_balance_without_heating():
    p = ModelParams(kappa_a=1.0, kappa_b=1.7, kappa_bc=0.0, mu=4.0)
    n = _occ(solve_null_space(build_model(p, (5, 5, 4))), p)
    assert abs(p.kappa_a * n[0] - p.kappa_b * n[1]) / (p.kappa_a * n[0]) < 1e-8


def test_heating_favours_cavity_output():
    p = ModelParams(kappa_bc=1.0, mu=4.0)
    occ = occupations_and_intensities(solve_null_space(build_model(p, (5, 5, 4))).rho, p)
    assert occ["I_a"] >= occ["I_b"]


def test_truncation_convergence_at_reference_point():
    p = ModelParams()
    for mode in range(3):
        report = truncation_convergence_check(lambda d: build_model(p, d), (6, 6, 4), mode)
        assert report.passed, report


def test_degenerate_null_space_is_flagged():
    p = ModelParams(kappa_a=0, kappa_b=0, kappa_c=0, kappa_bc=0, eta=0, mu=0)
    with pytest.warns(RuntimeWarning, match="degenerate"):
        result = solve_null_space(build_model(p, (2, 2, 2)))
    assert result.info["degenerate"]
    assert result.rho.trace == pytest.approx(1.0)


def test_residual_tolerance_failure_reports_residual():
    with pytest.raises(SolverFailedError) as info:
        solve_null_space(build_model(ModelParams(), (3, 3, 3)), tol=1e-30)
    assert info.value.residual >= 0


def test_long_time_not_converged():
    with pytest.raises(NotConvergedError):
        solve_long_time(build_model(ModelParams(), (3, 3, 3)), t_max=0.5)


def test_long_time_rejects_large_step():
    model = build_model(ModelParams(), (3, 3, 3))
    norm = estimate_norm(build_liouvillian_block(model).matrix)
    with pytest.raises(ValueError, match="too large"):
        solve_long_time(model, t_max=1.0, dt=0.2 / norm)


def test_power_iteration_norm():
    rng = np.random.default_rng(0)
    A = sp.csr_matrix(rng.normal(size=(30, 30)))
    assert estimate_norm(A, iterations=300) == pytest.approx(np.linalg.norm(A.toarray(), 2), rel=1e-6)


def test_full_space_and_sector_agree():
    model = build_model(ModelParams(), (3, 3, 3))
    a = solve_null_space(model).rho.matrix
    b = solve_null_space(model, sector=False).rho.matrix
    assert abs(a - b).max() < 1e-11


def test_iterative_path_matches_direct():
    model = build_model(ModelParams(), (5, 5, 4))
    direct = solve_null_space(model).rho.matrix
    iterative = solve_null_space(model, solver=BlockSolver(direct_limit=0)).rho.matrix
    assert abs(direct - iterative).max() < 1e-9


def test_pinned_preconditioner_is_order_independent():
    dims = (5, 5, 4)
    ref = build_liouvillian_block(build_model(ModelParams(mu=3.0), dims))
    models = [build_model(ModelParams(mu=m), dims) for m in (2.0, 4.0)]

    def run(order):
        solver = BlockSolver(reference=ref, direct_limit=0)
        return {i: solve_null_space(models[i], solver=solver).rho.matrix for i in order}

    forward, backward = run([0, 1]), run([1, 0])
    for i in (0, 1):
        assert np.array_equal(forward[i], backward[i])
