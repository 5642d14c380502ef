import csv
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mfdk.dk as dk
from mfdk.benchmark import exact_mu_bar
from mfdk.dk import (
    DminConfig,
    KminConfig,
    OracleObjective,
    SynthesisTrace,
    TraceRecord,
    approx_dmin,
    approx_kmin,
    central_diff_grad,
    dk_iterate,
    eval_H,
)
from mfdk.exceptions import GammaInfeasibleError, GradientEvaluationError, SynthesisAborted, UnstableLoopError
from mfdk.game import riccati_game_oracle
from mfdk.sim import LinearSimulator

# short schedule so that DK runs stay inside a few seconds
QUICK_K = KminConfig(t_iters=2, delta_schedule=(0.1, 0.05))
QUICK_D = DminConfig(t_iters=1)


@pytest.fixture(scope="module")
def central(plant):
    return riccati_game_oracle(plant, np.zeros(2), 1.2).K


def five_point(f, d, h):
    g = np.zeros_like(d)
    for j in range(d.size):
        e = np.zeros_like(d)
        e[j] = h
        g[j] = (-f(d + 2 * e) + 8 * f(d + e) - 8 * f(d - e) + f(d - 2 * e)) / (12 * h)
    return g


@pytest.fixture(scope="module")
def short_run(plant, lqr_gain_bench):
    monitor = lambda K, d: exact_mu_bar(plant, K, d)
    return dk_iterate(lqr_gain_bench, 2, LinearSimulator(plant), QUICK_K, QUICK_D, seed=5, monitor=monitor)


class TestEvalH:
    def test_identity_scaling(self, plant, lqr_gain_bench):
        sim = LinearSimulator(plant)
        exact = eval_H(np.zeros(2), lqr_gain_bench, sim, exact_plant=plant)
        assert exact == pytest.approx(1.307711436, rel=1e-8)
        est = eval_H(np.zeros(2), lqr_gain_bench, sim)
        assert 0.99 * exact <= est <= exact * (1 + 1e-9)

    @settings(max_examples=10, deadline=None)
    @given(st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4))
    def test_convex_along_lines(self, plant, central, pts):
        a, b = np.array(pts[:2]), np.array(pts[2:])
        f = lambda x: exact_mu_bar(plant, central, x)
        assert f(0.5 * (a + b)) <= 0.5 * (f(a) + f(b)) * (1 + 1e-7)


class TestGradient:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.floats(1e-3, 0.5))
    def test_exact_on_quadratics(self, d, eps):
        d = np.array(d)
        g = central_diff_grad(d, eps, lambda x: float(x @ x))
        np.testing.assert_allclose(g, 2 * d, atol=1e-9)

    def test_agrees_with_five_point_stencil(self, plant, central):
        f = lambda x: exact_mu_bar(plant, central, x)
        d = np.array([-0.4, -0.2])
        np.testing.assert_allclose(central_diff_grad(d, 1e-3, f), five_point(f, d, 1e-2), atol=1e-4)

    def test_executor_gives_same_result(self, plant, central):
        f = OracleObjective(LinearSimulator(plant), central, n_win=30)
        d = np.array([-0.1, 0.2])
        with ThreadPoolExecutor(4) as ex:
            np.testing.assert_array_equal(central_diff_grad(d, 0.05, f), central_diff_grad(d, 0.05, f, ex))

    def test_failure_names_coordinate(self):
        def f(x):
            if x[1] > 0.5:
                raise UnstableLoopError("boom")
            return 0.0

        with pytest.raises(GradientEvaluationError) as info:
            central_diff_grad(np.array([0.0, 0.49]), 0.05, f)
        assert info.value.coordinate == 1

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            central_diff_grad(np.zeros(2), 0.0, lambda x: 0.0)


class TestDmin:
    def test_flat_objective_leaves_d(self):
        D, history = approx_dmin([0.3, -0.2], DminConfig(), lambda x: 1.0)
        np.testing.assert_array_equal(D.d, [0.3, -0.2])
        assert all(h == 1.0 for h in history)

    def test_quadratic_converges_to_minimum(self):
        target = np.array([0.5, -1.0])
        D, _ = approx_dmin(np.zeros(2), DminConfig(t_iters=50, alpha=0.4),
                           lambda x: float((x - target) @ (x - target)))
        np.testing.assert_allclose(D.d, target, atol=1e-8)

    def test_exact_mode_nonincreasing(self, plant, central):
        _, history = approx_dmin(np.zeros(2), DminConfig(), lambda x: exact_mu_bar(plant, central, x))
        assert len(history) == 11
        assert np.all(np.diff(history) <= 0.0)

    def test_model_free_close_to_exact(self, plant, central):
        exact = lambda x: exact_mu_bar(plant, central, x)
        D_ex, _ = approx_dmin(np.zeros(2), DminConfig(), exact)
        obj = OracleObjective(LinearSimulator(plant), central, seed=3)
        D_mf, _ = approx_dmin(np.zeros(2), DminConfig(), obj, rel_noise=obj.noise)
        assert exact(D_mf.d) <= 1.02 * exact(D_ex.d)

    def test_config_validated(self):
        with pytest.raises(ValueError):
            DminConfig(alpha=0.0)
        with pytest.raises(ValueError):
            DminConfig(eps=-1.0)


class TestKmin:
    def test_first_iteration_is_central_controller(self, plant, lqr_gain_bench):
        levels = []
        K = approx_kmin(lqr_gain_bench, np.zeros(2), KminConfig(t_iters=1), LinearSimulator(plant),
                        rng=0, on_result=lambda level, res: levels.append(level))
        assert len(levels) == 1
        star = riccati_game_oracle(plant, np.zeros(2), levels[0])
        np.testing.assert_allclose(K, star.K, atol=1e-3)

    def test_level_estimates_decrease_up_to_offset(self, plant, lqr_gain_bench):
        cfg = KminConfig(t_iters=4, delta_schedule=(0.1, 0.02), stall=0.0)
        gammas = []
        approx_kmin(lqr_gain_bench, np.zeros(2), cfg, LinearSimulator(plant), rng=1,
                    on_level=lambda tau, K, g: gammas.append(g))
        assert len(gammas) == 5
        for tau in range(4):
            assert gammas[tau + 1] <= gammas[tau] + cfg.delta(tau)
        assert gammas[-1] < gammas[0]

    def test_delta_schedule_repeats_last(self):
        cfg = KminConfig(delta_schedule=(0.1, 0.01))
        assert [cfg.delta(t) for t in range(4)] == [0.1, 0.01, 0.01, 0.01]

    @pytest.mark.parametrize("bad", [dict(t_iters=0), dict(delta_schedule=()), dict(delta_schedule=(0.1, 0.0)),
                                     dict(theta=1.0), dict(stall=-1.0)])
    def test_config_validated(self, bad):
        with pytest.raises(ValueError):
            KminConfig(**bad)


class TestDkIterate:
    def test_zero_rounds(self, plant, lqr_gain_bench):
        K, D, trace = dk_iterate(lqr_gain_bench, 0, LinearSimulator(plant))
        np.testing.assert_array_equal(K, lqr_gain_bench)
        np.testing.assert_array_equal(D.d, np.zeros(2))
        assert len(trace) == 0

    def test_trace_well_formed(self, plant, short_run):
        K, D, trace = short_run
        assert trace.phases() == ["K", "D", "K", "D"]
        k_idx = [r.k_update_index for r in trace.records if r.phase == "K"]
        assert k_idx == list(range(1, len(k_idx) + 1))
        for i, r in enumerate(trace.records):
            if r.phase == "D":
                assert r.k_update_index == trace.records[i - 1].k_update_index
        last = trace.records[-1]
        np.testing.assert_array_equal(last.d, D.d)
        assert last.mu_bar_exact == pytest.approx(exact_mu_bar(plant, K, D.d), rel=1e-12)

    def test_recorded_gains_meet_their_level(self, plant, short_run):
        _, _, trace = short_run
        for r in trace.records:
            if r.phase == "K":
                assert exact_mu_bar(plant, r.K, r.d) <= r.level * (1 + 1e-9)

    def test_seeded_runs_repeat(self, plant, lqr_gain_bench, short_run, tmp_path):
        monitor = lambda K, d: exact_mu_bar(plant, K, d)
        with ThreadPoolExecutor(4) as ex:
            _, _, again = dk_iterate(lqr_gain_bench, 2, LinearSimulator(plant), QUICK_K, QUICK_D,
                                     seed=5, monitor=monitor, executor=ex)
        short_run[2].to_csv(tmp_path / "a.csv")
        again.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_abort_carries_state(self, plant, lqr_gain_bench, monkeypatch):
        def refuse(*args, **kwargs):
            raise GammaInfeasibleError("no")

        monkeypatch.setattr(dk, "rarl_solve", refuse)
        with pytest.raises(SynthesisAborted) as info:
            dk_iterate(lqr_gain_bench, 2, LinearSimulator(plant), QUICK_K, QUICK_D)
        np.testing.assert_array_equal(info.value.K, lqr_gain_bench)
        np.testing.assert_array_equal(info.value.d, np.zeros(2))
        assert info.value.trace is not None and len(info.value.trace) == 0

    def test_negative_rounds(self, plant, lqr_gain_bench):
        with pytest.raises(ValueError):
            dk_iterate(lqr_gain_bench, -1, LinearSimulator(plant))


class TestTraceExport:
    def sample(self):
        t = SynthesisTrace()
        t.append(TraceRecord(1, "K", 1.3, 1.31, (0.0, 0.0), 1.4, np.eye(2)))
        t.append(TraceRecord(1, "D", 1.2, 1.21, (-0.1, 0.05)))
        return t

    def test_csv_columns(self, tmp_path):
        self.sample().to_csv(tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["k_update_index", "phase", "gamma_est", "mu_bar_exact", "d1", "d2"]
        assert rows[2] == ["1", "D", "1.2", "1.21", "-0.1", "0.05"]

    def test_json_round_trip(self, tmp_path):
        self.sample().to_json(tmp_path / "t.json")
        data = json.load(open(tmp_path / "t.json"))["records"]
        assert data[0]["K"] == [[1.0, 0.0], [0.0, 1.0]] and data[0]["level"] == 1.4
        assert data[1]["K"] is None and data[1]["d"] == [-0.1, 0.05]

    def test_counts(self):
        t = self.sample()
        assert t.k_updates == 1 and len(t) == 2
        np.testing.assert_array_equal(t.mu_bar(), [1.31, 1.21])
