"""Cross-oracle invariant suites, runnable from the command line.

Each suite returns ``(passed, detail)``; `fault` inflates every power-iteration
result by a relative amount so the lower-bound checks can be exercised.
"""

from __future__ import annotations

import time

import numpy as np

from .benchmark import build_spring_mass, exact_mu_bar, initial_controller, minimal_gamma
from .dk import DminConfig, approx_dmin
from .game import (
    PROTAGONIST,
    RarlConfig,
    ScaledOutputCost,
    build_game_cost,
    exact_inner_maximizer,
    game_value,
    gauss_newton_step,
    lstdq_fit,
    policy_improve,
    rarl_solve,
    riccati_game_oracle,
)
from .hinf import PowerIterConfig, hinf_exact, hinf_oracle, markov_parameters, toeplitz_sigma
from .lti import DScaling, StateSpace, close_loop, plant_from_dict, scaled_loop
from .sim import LinearSimulator, ScaledLoop, SystemSimulator, rollout_with_policies


def random_stable_system(rng, n=None, m=None, p=None, radius=0.9) -> StateSpace:
    """Random discrete system with spectral radius `radius`."""
    n = int(rng.integers(1, 5)) if n is None else n
    m = int(rng.integers(1, 3)) if m is None else m
    p = int(rng.integers(1, 3)) if p is None else p
    A = rng.standard_normal((n, n))
    A *= radius / max(np.abs(np.linalg.eigvals(A)).max(), 1e-12)
    return StateSpace(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)), rng.standard_normal((p, m)))


def _oracle(op, cfg, fault):
    return hinf_oracle(op, cfg).value * (1.0 + fault)


def suite_toeplitz_cross_oracle(fault=0.0, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(10):
        ss = random_stable_system(rng)
        n_win = int(rng.integers(5, 21))
        exact = toeplitz_sigma(markov_parameters(ss, n_win), n_win)
        cfg = PowerIterConfig(n_win=n_win, tol=1e-13, max_iters=20000, seed=k)
        worst = max(worst, abs(_oracle(SystemSimulator(ss), cfg, fault) - exact))
    return worst <= 1e-6, {"max_abs_error": worst, "tolerance": 1e-6}


def suite_lower_bound(fault=0.0, seed=0):
    G = build_spring_mass()
    K = initial_controller(G)
    d = np.zeros(G.mv)
    op = ScaledLoop(LinearSimulator(G), K, d)
    est100 = _oracle(op, PowerIterConfig(n_win=100, seed=seed), fault)
    est5 = _oracle(op, PowerIterConfig(n_win=5, seed=seed), fault)
    ss = scaled_loop(G, K, d)
    exact = hinf_exact(ss)
    toe = toeplitz_sigma(markov_parameters(ss, 100), 100)
    checks = {
        "estimate_below_window_norm": est100 <= toe * (1 + 1e-6),
        "estimate_below_hinf": est100 <= exact * (1 + 1e-9),
        "window_monotone": est5 <= est100 * (1 + 1e-6),
        "gap_within_1pct": (exact - est100) / exact <= 0.01,
    }
    return all(checks.values()), {"estimate": est100, "window_norm": toe, "exact": exact, **checks}


def suite_game_cost_reduction(fault=0.0, seed=0):
    G = build_spring_mass()
    rng = np.random.default_rng(seed)
    d = rng.uniform(-1.5, 1.5, G.mv)
    gamma = 1.3
    c = build_game_cost(G, d, gamma)
    D2 = np.diag(np.exp(2 * d))
    R = G.Due.T @ G.Due
    Q = G.Ce.T @ G.Ce
    err = max(
        np.abs(c.Ru - (R + D2)).max(),
        np.abs(c.N).max(),
        np.abs(c.Q - Q).max(),
        np.abs(c.Rv - gamma**2 * np.diag(np.r_[np.exp(2 * d), np.ones(G.md)])).max(),
    )
    return err <= 1e-14, {"max_abs_error": float(err)}


def suite_lspi_gauss_newton(fault=0.0, seed=0):
    G = build_spring_mass()
    d = np.array([-0.3, -0.4])
    gamma_opt = minimal_gamma(G, d)[0]
    gamma = 1.1 * gamma_opt
    K = riccati_game_oracle(G, d, 1.05 * gamma_opt).K
    L, _ = exact_inner_maximizer(G, build_game_cost(G, d, gamma), K)
    cfg = RarlConfig()
    sim = LinearSimulator(G)
    data = rollout_with_policies(sim, K, L, cfg.horizon, noise_u=cfg.noise_std,
                                 n_rollouts=cfg.n_rollouts, seed=seed)
    K_lspi = policy_improve(lstdq_fit(data, ScaledOutputCost(d, gamma), PROTAGONIST, K), PROTAGONIST)
    K_gn = gauss_newton_step(G, build_game_cost(G, d, gamma), K)
    err = float(np.abs(K_lspi - K_gn).max())
    return err <= 1e-6, {"max_abs_error": err}


def suite_rarl_vs_riccati(fault=0.0, seed=0):
    G = build_spring_mass()
    d = np.zeros(G.mv)
    gamma_opt, _ = minimal_gamma(G, d)
    gamma = 1.05 * gamma_opt
    star = riccati_game_oracle(G, d, gamma)
    K0 = riccati_game_oracle(G, d, 1.02 * gamma_opt).K
    res = rarl_solve(gamma, K0, d, LinearSimulator(G), RarlConfig(), seed=seed)
    dist = float(np.abs(res.K - star.K).max())
    admissible = exact_mu_bar(G, res.K, d) <= gamma
    return dist <= 1e-3 and admissible, {"gain_distance": dist, "updates": res.updates, "admissible": admissible}


def suite_saddle(fault=0.0, seed=0):
    G = build_spring_mass()
    rng = np.random.default_rng(seed)
    d = np.array([-0.8, -0.8])
    gamma = 1.05 * minimal_gamma(G, d)[0]
    cost = build_game_cost(G, d, gamma)
    star = riccati_game_oracle(G, d, gamma)
    J = game_value(G, cost, star.K, star.L)
    ok = True
    for _ in range(20):
        dK = rng.standard_normal(star.K.shape)
        dL = rng.standard_normal(star.L.shape)
        dK *= 1e-2 / np.linalg.norm(dK)
        dL *= 1e-2 / np.linalg.norm(dL)
        tol = 1e-9 * abs(J)
        ok &= game_value(G, cost, star.K, star.L + dL) <= J + tol
        ok &= J <= game_value(G, cost, star.K + dK, star.L) + tol
    return bool(ok), {"value": J}


def suite_dmin_exact_descent(fault=0.0, seed=0):
    G = build_spring_mass()
    K = riccati_game_oracle(G, np.zeros(G.mv), 1.2).K
    _, history = approx_dmin(np.zeros(G.mv), DminConfig(), lambda x: exact_mu_bar(G, K, x))
    diffs = np.diff(history)
    return bool(np.all(diffs <= 0.0)), {"H": history}


def suite_lti_consistency(fault=0.0, seed=0):
    G = build_spring_mass()
    K = initial_controller(G)
    a = close_loop(G, K)
    b = scaled_loop(G, K, DScaling.identity(G.mv))
    round_trip = plant_from_dict(G.to_dict())
    ok = a.allclose(b, atol=0.0) and all(
        np.array_equal(getattr(G, k), getattr(round_trip, k)) for k in ("A", "Bw", "Bd", "Bu", "Cv", "Ce", "Duv", "Due")
    )
    return ok, {}


SUITES = {
    "lti_consistency": suite_lti_consistency,
    "toeplitz_cross_oracle": suite_toeplitz_cross_oracle,
    "lower_bound": suite_lower_bound,
    "game_cost_reduction": suite_game_cost_reduction,
    "lspi_gauss_newton": suite_lspi_gauss_newton,
    "rarl_vs_riccati": suite_rarl_vs_riccati,
    "saddle": suite_saddle,
    "dmin_exact_descent": suite_dmin_exact_descent,
}


def run_suites(fault: float = 0.0, seed: int = 0, names=None) -> dict:
    results = {}
    for name in names or SUITES:
        t0 = time.perf_counter()
        try:
            passed, detail = SUITES[name](fault=fault, seed=seed)
        except Exception as exc:  # a crashing suite is a failing suite
            passed, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
        results[name] = {"passed": bool(passed), "seconds": round(time.perf_counter() - t0, 3),
                         "detail": _jsonable(detail)}
    return {"passed": all(r["passed"] for r in results.values()), "fault": fault, "suites": results}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj
