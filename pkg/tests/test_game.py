import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfdk.benchmark import exact_mu_bar, minimal_gamma
from mfdk.exceptions import GammaInfeasibleError, InsufficientExcitationError
from mfdk.game import (
    ADVERSARY,
    PROTAGONIST,
    GameCost,
    QFunctionParams,
    RarlConfig,
    ScaledOutputCost,
    build_game_cost,
    exact_inner_maximizer,
    game_value,
    gauss_newton_step,
    inner_loop_maximize,
    lqr_gain,
    lstdq_fit,
    policy_improve,
    rarl_solve,
    riccati_game_oracle,
)
from mfdk.lti import PartitionedPlant
from mfdk.sim import LinearSimulator, rollout_with_policies


def scalar_game_plant(a=0.9):
    # x+ = a x + u + d ; e = (x, u) ; the w channel is inert
    return PartitionedPlant(
        A=[[a]], Bw=[[0.0]], Bd=[[1.0]], Bu=[[1.0]],
        Cv=[[0.0]], Ce=[[1.0], [0.0]], Duv=[[0.0]], Due=[[0.0], [1.0]],
    )


def shift_plant():
    # x+ = u with unit state and input weights
    n = 2
    return PartitionedPlant(
        A=np.zeros((n, n)), Bw=np.zeros((n, 1)), Bd=np.zeros((n, 1)), Bu=np.eye(n),
        Cv=np.zeros((1, n)), Ce=np.vstack([np.eye(n), np.zeros((n, n))]),
        Duv=np.zeros((1, n)), Due=np.vstack([np.zeros((n, n)), np.eye(n)]),
    )


@pytest.fixture(scope="module")
def nash(plant, gamma_star):
    d = np.array([-0.3, -0.4])
    gamma = 1.1 * minimal_gamma(plant, d)[0]
    return d, gamma, riccati_game_oracle(plant, d, gamma)


class TestCost:
    def test_weights_of_benchmark(self, plant):
        d = np.array([0.2, -0.5])
        c = build_game_cost(plant, d, 1.5)
        D2 = np.diag(np.exp(2 * d))
        np.testing.assert_allclose(c.Q, plant.Ce.T @ plant.Ce, atol=1e-15)
        np.testing.assert_allclose(c.Ru, plant.Due.T @ plant.Due + D2, atol=1e-15)
        np.testing.assert_allclose(c.Rv[:2, :2], 2.25 * D2, atol=1e-15)
        np.testing.assert_allclose(c.Rv[2:, 2:], 2.25 * np.eye(2), atol=1e-15)

    def test_rejects_indefinite_control_weight(self):
        with pytest.raises(ValueError, match="Ru"):
            GameCost(Q=np.eye(1), Ru=-np.eye(1), N=np.zeros((1, 1)), Rv=np.eye(1), gamma=1.0)

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            GameCost(Q=np.eye(1), Ru=np.eye(1), N=np.zeros((1, 1)), Rv=np.eye(1), gamma=0.0)
        with pytest.raises(ValueError):
            ScaledOutputCost([0.0], -1.0)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.5, 3.0), st.integers(0, 1000))
    def test_output_cost_equals_weights(self, d1, d2, gamma, seed):
        from mfdk.benchmark import build_spring_mass, initial_controller

        G = build_spring_mass()
        sim = LinearSimulator(G)
        traj = rollout_with_policies(sim, initial_controller(G), np.zeros((4, 4)), 30,
                                     noise_u=1.0, noise_h=1.0, n_rollouts=2, seed=seed)
        a = ScaledOutputCost([d1, d2], gamma).stage_cost(traj)
        b = build_game_cost(G, [d1, d2], gamma).stage_cost(traj)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)


class TestLstd:
    def test_shift_system_q_function(self):
        G = shift_plant()
        sim = LinearSimulator(G)
        traj = rollout_with_policies(sim, np.zeros((2, 2)), np.zeros((2, 2)), 20,
                                     noise_u=1.0, n_rollouts=5, seed=0)
        qf = lstdq_fit(traj, ScaledOutputCost([0.0], 1.0), PROTAGONIST, np.zeros((2, 2)))
        # Q(x, u) = |x|^2 + |u|^2 + V(u) and V(y) = |y|^2 under u = 0
        np.testing.assert_allclose(qf.H, np.diag([1.0, 1.0, 2.0, 2.0]), atol=1e-10)

    def test_nash_gains_are_fixed_points(self, plant, nash):
        d, gamma, star = nash
        sim = LinearSimulator(plant)
        cost = ScaledOutputCost(d, gamma)
        data = rollout_with_policies(sim, star.K, star.L, 200, noise_u=0.1, n_rollouts=20, seed=1)
        K = policy_improve(lstdq_fit(data, cost, PROTAGONIST, star.K), PROTAGONIST)
        np.testing.assert_allclose(K, star.K, atol=1e-7)
        data = rollout_with_policies(sim, star.K, star.L, 200, noise_h=0.1, n_rollouts=20, seed=2)
        L = policy_improve(lstdq_fit(data, cost, ADVERSARY, star.L), ADVERSARY)
        np.testing.assert_allclose(L, star.L, atol=1e-7)

    def test_seeded_fit_repeats(self, plant, nash):
        d, gamma, star = nash
        sim = LinearSimulator(plant)
        fits = [
            lstdq_fit(rollout_with_policies(sim, star.K, star.L, 100, noise_u=0.1, n_rollouts=5, seed=3),
                      ScaledOutputCost(d, gamma), PROTAGONIST, star.K).H
            for _ in range(2)
        ]
        np.testing.assert_array_equal(*fits)

    def test_no_excitation_detected(self, plant, nash):
        d, gamma, star = nash
        sim = LinearSimulator(plant)
        data = rollout_with_policies(sim, star.K, star.L, 100, n_rollouts=5, seed=4)
        with pytest.raises(InsufficientExcitationError):
            lstdq_fit(data, ScaledOutputCost(d, gamma), PROTAGONIST, star.K)

    def test_unknown_player(self, plant, nash):
        d, gamma, star = nash
        data = rollout_with_policies(LinearSimulator(plant), star.K, star.L, 10, noise_u=0.1, seed=0)
        with pytest.raises(ValueError):
            lstdq_fit(data, ScaledOutputCost(d, gamma), "referee", star.K)


class TestPolicyImprove:
    def test_zero_cross_term_gives_zero_gain(self):
        qf = QFunctionParams(np.diag([3.0, 2.0]), 1)
        assert policy_improve(qf, PROTAGONIST)[0, 0] == 0.0

    def test_two_by_two(self):
        qf = QFunctionParams(np.array([[2.0, 1.0], [1.0, 1.0]]), 1)
        assert policy_improve(qf, PROTAGONIST)[0, 0] == pytest.approx(1.0)

    def test_adversary_needs_concavity(self):
        qf = QFunctionParams(np.array([[2.0, 1.0], [1.0, 1.0]]), 1)
        with pytest.raises(GammaInfeasibleError):
            policy_improve(qf, ADVERSARY)
        qf = QFunctionParams(np.array([[2.0, 1.0], [1.0, -4.0]]), 1)
        assert policy_improve(qf, ADVERSARY)[0, 0] == pytest.approx(-0.25)

    def test_protagonist_needs_convexity(self):
        with pytest.raises(GammaInfeasibleError):
            policy_improve(QFunctionParams(np.array([[1.0, 0.0], [0.0, -1.0]]), 1), PROTAGONIST)


class TestInnerLoop:
    def test_huge_level_gives_passive_adversary(self, plant, lqr_gain_bench):
        L = inner_loop_maximize(LinearSimulator(plant), lqr_gain_bench,
                                ScaledOutputCost(np.zeros(2), 1e4), seed=0)
        assert np.abs(L).max() < 1e-6

    @pytest.mark.parametrize("K, gamma", [(0.3, 3.0), (0.5, 2.0), (0.0, 12.0)])
    def test_scalar_closed_form(self, K, gamma):
        G = scalar_game_plant(0.9)
        ac, c = 0.9 - K, 1.0 + K**2
        # p = c + ac^2 p gamma^2 / (gamma^2 - p); stabilizing root is the smaller one
        roots = np.roots([1.0, -(gamma**2 + c - ac**2 * gamma**2), c * gamma**2])
        assert np.all(np.isreal(roots))
        p = min(roots.real)
        L = inner_loop_maximize(LinearSimulator(G), [[K]], ScaledOutputCost([0.0], gamma), seed=1)
        assert L[0, 0] == pytest.approx(0.0, abs=1e-8)
        assert L[1, 0] == pytest.approx(-p * ac / (gamma**2 - p), rel=1e-6)

    def test_benchmark_matches_model(self, plant, nash):
        d, gamma, star = nash
        L = inner_loop_maximize(LinearSimulator(plant), star.K, ScaledOutputCost(d, gamma), seed=2)
        L_exact, _ = exact_inner_maximizer(plant, build_game_cost(plant, d, gamma), star.K)
        np.testing.assert_allclose(L, L_exact, atol=1e-4)
        np.testing.assert_allclose(L, star.L, atol=1e-4)

    def test_infeasible_level(self, plant, lqr_gain_bench):
        with pytest.raises(GammaInfeasibleError):
            inner_loop_maximize(LinearSimulator(plant), lqr_gain_bench, ScaledOutputCost(np.zeros(2), 1.0))


class TestRarl:
    def test_huge_level_gives_lqr(self, plant, lqr_gain_bench):
        d = np.zeros(2)
        cost = build_game_cost(plant, d, 1e4)
        res = rarl_solve(1e4, lqr_gain_bench, d, LinearSimulator(plant), seed=0)
        assert res.converged
        K_lqr = lqr_gain(plant.A, plant.Bu, cost.Q, cost.Ru, cost.N)
        np.testing.assert_allclose(res.K, K_lqr, atol=1e-5)

    def test_nash_start_stays(self, plant, nash):
        d, gamma, star = nash
        res = rarl_solve(gamma, star.K, d, LinearSimulator(plant), seed=3)
        assert res.converged and res.updates <= 2
        np.testing.assert_allclose(res.K, star.K, atol=1e-6)

    def test_admissible_result(self, plant, gamma_star):
        d = np.zeros(2)
        gamma = 1.05 * gamma_star
        K0 = riccati_game_oracle(plant, d, 1.02 * gamma_star).K
        updates = []
        res = rarl_solve(gamma, K0, d, LinearSimulator(plant), seed=4, callback=lambda K, L: updates.append(K))
        assert len(updates) == res.updates
        assert exact_mu_bar(plant, res.K, d) <= gamma
        np.testing.assert_allclose(res.K, riccati_game_oracle(plant, d, gamma).K, atol=1e-3)

    def test_inadmissible_start(self, plant, lqr_gain_bench, gamma_star):
        with pytest.raises(GammaInfeasibleError):
            rarl_solve(1.02 * gamma_star, lqr_gain_bench, np.zeros(2), LinearSimulator(plant))


class TestModelOracles:
    def test_large_level_is_lqr(self, plant):
        d = np.array([0.1, -0.2])
        cost = build_game_cost(plant, d, 1e5)
        pair = riccati_game_oracle(plant, d, 1e5)
        np.testing.assert_allclose(pair.K, lqr_gain(plant.A, plant.Bu, cost.Q, cost.Ru, cost.N), atol=1e-8)
        assert np.abs(pair.L).max() < 1e-8

    def test_below_optimal_level_infeasible(self, plant, gamma_star):
        with pytest.raises(GammaInfeasibleError):
            riccati_game_oracle(plant, np.zeros(2), 0.99 * gamma_star)

    def test_central_controller_attains_level(self, plant, gamma_star):
        K = riccati_game_oracle(plant, np.zeros(2), 1.05 * gamma_star).K
        assert gamma_star * (1 - 1e-5) <= exact_mu_bar(plant, K, np.zeros(2)) <= 1.05 * gamma_star

    def test_saddle_point(self, plant, nash):
        d, gamma, star = nash
        cost = build_game_cost(plant, d, gamma)
        J = game_value(plant, cost, star.K, star.L)
        rng = np.random.default_rng(0)
        for _ in range(20):
            dK, dL = rng.standard_normal(star.K.shape), rng.standard_normal(star.L.shape)
            dK *= 1e-2 / np.linalg.norm(dK)
            dL *= 1e-2 / np.linalg.norm(dL)
            assert game_value(plant, cost, star.K, star.L + dL) <= J + 1e-9 * abs(J)
            assert J <= game_value(plant, cost, star.K + dK, star.L) + 1e-9 * abs(J)

    def test_lspi_step_equals_gauss_newton(self, plant):
        d = np.array([-0.3, -0.4])
        gamma_opt = minimal_gamma(plant, d)[0]
        gamma = 1.1 * gamma_opt
        K = riccati_game_oracle(plant, d, 1.05 * gamma_opt).K
        cost = build_game_cost(plant, d, gamma)
        L, _ = exact_inner_maximizer(plant, cost, K)
        data = rollout_with_policies(LinearSimulator(plant), K, L, 200, noise_u=0.1, n_rollouts=20, seed=0)
        K_lspi = policy_improve(lstdq_fit(data, ScaledOutputCost(d, gamma), PROTAGONIST, K), PROTAGONIST)
        np.testing.assert_allclose(K_lspi, gauss_newton_step(plant, cost, K), atol=1e-6)

    def test_unstable_pair_has_infinite_value(self, plant):
        cost = build_game_cost(plant, np.zeros(2), 2.0)
        assert game_value(plant, cost, np.zeros((2, 4)), 100 * np.ones((4, 4))) == np.inf
