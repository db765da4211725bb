import numpy as np
import pytest
from scipy.optimize import bisect

from tsallis_lq.exact_solver import (IllPosedError, QuadraticValue, SolverConfig, SolverError,
                                     optimal_covariance, optimal_gain, q_blocks, riccati_residual,
                                     riccati_rhs, solve, value_at, value_constant,
                                     value_constant_from_entropy)
from tsallis_lq.lq_model import LqModel, NoiseChannel
from tsallis_lq.qcalc import alpha

from conftest import mc_discounted_cost, random_model, scalar_model


def scalar_riccati_map(P, A, B, W, D, Q, R, g):
    return Q + g * A * A * P - (g * A * B * P) ** 2 / (R + g * (B * B + W * D * D) * P)


def bisection_root(A=0.9, B=1.0, W=0.25, D=1.0, Q=1.0, R=1.0, g=0.9):
    return bisect(lambda P: scalar_riccati_map(P, A, B, W, D, Q, R, g) - P, Q, 1e6,
                  xtol=1e-14, rtol=1e-15, maxiter=500)


def test_scalar_matches_bisection():
    P_star = bisection_root()
    res = solve(scalar_model(tau=0.4, q=0.8))
    assert res.value.P[0, 0] == pytest.approx(P_star, abs=1e-10)
    K_oracle = 0.9 * 0.9 * P_star / (1 + 0.9 * 1.25 * P_star)
    assert res.policy.K[0, 0] == pytest.approx(K_oracle, abs=1e-10)


@pytest.mark.parametrize("A,W,g", [(1.05, 0.1, 0.8), (0.5, 1.0, 0.95), (0.99, 0.0, 0.5)])
def test_scalar_variants_match_bisection(A, W, g):
    res = solve(scalar_model(A=A, W=W, gamma=g))
    assert res.value.P[0, 0] == pytest.approx(bisection_root(A=A, W=W, g=g), abs=1e-10)


def test_scalar_iterates_monotone_bounded():
    model = scalar_model()
    P, seen = model.Q.copy(), []
    for _ in range(200):
        P = riccati_rhs(model, P)
        seen.append(P[0, 0])
    assert np.all(np.diff(seen) >= -1e-15)
    assert max(seen) <= bisection_root() + 1e-12


def test_optimal_gain_trivial_cases(bench_model):
    assert not np.any(optimal_gain(bench_model, np.zeros((1, 1))))
    mute = bench_model.replace(B=np.zeros((1, 3)),
                               channels=tuple(NoiseChannel([[0.3]], np.zeros((1, 3)))
                                              for _ in range(3)))
    assert not np.any(optimal_gain(mute, np.array([[2.0]])))


def test_ill_posed_inner_matrix():
    model = scalar_model()
    with pytest.raises(IllPosedError):
        optimal_gain(model, np.array([[-10.0]]))


def test_optimal_covariance_examples(bench_model, bench_solution):
    P = bench_solution.value.P
    _, _, _, inner = q_blocks(bench_model, P)
    shannon = optimal_covariance(bench_model.replace(q=1.0), P)
    assert np.allclose(shannon, 0.35 * np.linalg.inv(inner), rtol=1e-13, atol=0)
    doubled = optimal_covariance(bench_model.replace(tau=1.4), P)
    assert np.allclose(doubled, 2 * optimal_covariance(bench_model, P), rtol=1e-14, atol=0)
    S = bench_solution.policy.Sigma
    assert S.shape == (3, 3) and np.linalg.eigvalsh(S).min() > 0
    assert not np.any(optimal_covariance(bench_model.replace(tau=0.0), P))


def test_benchmark_reference(bench_model, bench_solution):
    P = bench_solution.value.P
    r = np.linalg.norm(riccati_residual(bench_model, P))
    assert r <= 1e-10 * (1 + np.linalg.norm(P))
    assert P[0, 0] == pytest.approx(7.12944914, abs=1e-7)
    assert np.allclose(bench_solution.policy.K.ravel(), [0.18823192, 0.25170746, 0.19656322],
                       atol=1e-7)


def test_random_instances_residual(rng):
    for _ in range(20):
        model = random_model(rng)
        res = solve(model)
        P = res.value.P
        assert np.linalg.norm(riccati_residual(model, P)) <= 1e-10 * (1 + np.linalg.norm(P))
        assert np.allclose(P, P.T, rtol=0, atol=1e-12 * np.abs(P).max())


def test_fixed_point_self_consistent(bench_model, bench_solution):
    P1 = riccati_rhs(bench_model, bench_solution.value.P)
    assert np.allclose(optimal_gain(bench_model, P1), bench_solution.policy.K, atol=1e-10)
    assert np.allclose(optimal_covariance(bench_model, P1), bench_solution.policy.Sigma, atol=1e-10)


def test_random_symmetric_p_is_not_fixed(bench_model):
    assert np.linalg.norm(riccati_residual(bench_model, np.array([[3.0]]))) > 1e-3


def test_static_and_myopic_problems():
    static = LqModel([[0.0]], [[0.0]], [[1.0]], [[1.0]], gamma=0.5)
    res = solve(static)
    assert res.value.P[0, 0] == 1.0 and res.value.c == 0.0 and not np.any(res.policy.K)
    myopic = LqModel(np.zeros((2, 2)), np.zeros((2, 1)), np.eye(2), [[1.0]], gamma=1e-9)
    assert not np.any(riccati_residual(myopic, np.eye(2)))


def test_c_zero_without_entropy_and_noise():
    model = LqModel([[0.9, 0.1], [0.0, 1.1]], [[0.0], [1.0]], np.eye(2), [[1.0]], gamma=0.9)
    assert solve(model).value.c == 0.0


def test_two_constant_paths_agree(rng):
    for q in (0.3, 0.8, 1.0):
        model = random_model(rng, q=q)
        res = solve(model)
        a = value_constant(model, res.value.P, res.policy.Sigma)
        b = value_constant_from_entropy(model, res.value.P, res.policy.Sigma)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_tighter_tolerance_more_iterations(bench_model):
    loose = solve(bench_model, SolverConfig(tol=1e-8))
    tight = solve(bench_model, SolverConfig(tol=1e-10))
    assert tight.iterations > loose.iterations and tight.residual < loose.residual


def test_damping_reaches_same_point(bench_model, bench_solution):
    res = solve(bench_model, SolverConfig(damping=0.5))
    assert np.allclose(res.value.P, bench_solution.value.P, atol=1e-9)


def test_non_convergence_reports_residual(bench_model):
    with pytest.raises(SolverError) as info:
        solve(bench_model, SolverConfig(max_iter=3))
    assert info.value.residual > 0 and info.value.iterations == 3


def test_unstabilisable_model_rejected():
    # control enters only through noise and the state explodes
    model = LqModel([[2.0]], [[0.0]], [[1.0]], [[1.0]], gamma=0.9)
    with pytest.raises(SolverError):
        solve(model, SolverConfig(max_iter=2000))


def test_solver_config_validation():
    for kw in ({"tol": 0}, {"max_iter": 0}, {"damping": 0.0}, {"damping": 1.5}):
        with pytest.raises(ValueError):
            SolverConfig(**kw)


def test_value_at_examples():
    v = QuadraticValue(np.eye(2), 0.0)
    assert value_at(v, [3.0, 4.0]) == 25.0
    assert value_at(QuadraticValue(np.eye(2), 1.5), [0.0, 0.0]) == 1.5
    assert v([3.0, 4.0]) == 25.0


@pytest.mark.slow
def test_value_at_monte_carlo():
    model = LqModel([[0.8, 0.2], [0.0, 0.9]], [[1.0], [0.5]], np.eye(2), [[0.5]], gamma=0.8,
                    channels=(NoiseChannel([[0.1, 0.0], [0.0, 0.1]], [[0.2], [0.1]]),),
                    channel_cov=[[1.0]], tau=0.6, q=0.7)
    res = solve(model)
    x0 = np.array([1.0, -2.0])
    mean, se = mc_discounted_cost(model, res.policy, x0, 10 ** 5, np.random.default_rng(11))
    assert abs(mean - res.value(x0)) < 3 * se
