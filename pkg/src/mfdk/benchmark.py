"""Uncertain coupled spring-mass benchmark and the model-based reference pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import GammaInfeasibleError
from .lti import DScaling, PartitionedPlant, is_stable, scaled_loop, zoh_discretize
from .game import build_game_cost, lqr_gain, riccati_game_oracle
from .hinf import hinf_exact

logger = logging.getLogger(__name__)

__all__ = [
    "SpringMassParams",
    "continuous_spring_mass",
    "build_spring_mass",
    "initial_controller",
    "exact_mu_bar",
    "minimal_gamma",
    "model_based_kstep",
    "model_based_dk",
    "ModelBasedResult",
    "run_case_study",
]


@dataclass(frozen=True)
class SpringMassParams:
    m1: float = 1.0
    m2: float = 0.5
    k: float = 1.0
    ts: float = 0.1
    alpha: float = 0.25
    q: float = 1.0
    r: float = 0.1

    def __post_init__(self):
        for name in ("m1", "m2", "k", "ts", "alpha", "q", "r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def continuous_spring_mass(p: SpringMassParams = SpringMassParams()):
    """Continuous-time (A, Bu) of the two-mass chain."""
    k, m1, m2 = p.k, p.m1, p.m2
    A = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [-k / m1, k / m1, 0.0, 0.0],
            [k / m2, -k / m2, 0.0, 0.0],
        ]
    )
    Bu = np.array([[0.0, 0.0], [0.0, 0.0], [1.0 / m1, 0.0], [0.0, 1.0 / m2]])
    return A, Bu


def build_spring_mass(p: SpringMassParams = SpringMassParams()) -> PartitionedPlant:
    """Discrete plant with input-multiplicative uncertainty.

    Disturbances and uncertainty outputs enter through the control channel;
    the uncertainty weight alpha sits on the w path (``Bw = alpha Bu``) and
    the uncertainty sees the control directly (``Cv = 0``, ``Duv = I``).
    Performance output ``e = (R^1/2 u, Q^1/2 x)``.
    """
    Ac, Bc = continuous_spring_mass(p)
    A, Bu = zoh_discretize(Ac, Bc, p.ts)
    n, mu = Bu.shape
    q_half = np.sqrt(p.q) * np.eye(n)
    r_half = np.sqrt(p.r) * np.eye(mu)
    return PartitionedPlant(
        A=A,
        Bw=p.alpha * Bu,
        Bd=Bu.copy(),
        Bu=Bu,
        Cv=np.zeros((mu, n)),
        Ce=np.vstack([np.zeros((mu, n)), q_half]),
        Duv=np.eye(mu),
        Due=np.vstack([r_half, np.zeros((n, mu))]),
    )


def initial_controller(G: PartitionedPlant) -> np.ndarray:
    """Nominal LQR gain for the performance channel (harness-side model knowledge)."""
    Q = G.Ce.T @ G.Ce
    R = G.Due.T @ G.Due
    N = G.Ce.T @ G.Due
    try:
        K = lqr_gain(G.A, G.Bu, Q, R, N)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ValueError(f"plant is not stabilizable: {exc}") from exc
    if not is_stable(G.A - G.Bu @ K):
        raise ValueError("LQR gain does not stabilize the plant")
    return K


def exact_mu_bar(G: PartitionedPlant, K, d) -> float:
    """H-infinity norm of the D-scaled closed loop (model based)."""
    return hinf_exact(scaled_loop(G, K, d))


def minimal_gamma(G: PartitionedPlant, d, tol: float = 1e-6, lo: float = 0.0, hi=None):
    """Smallest level (to `tol` relative) at which the scaled game is solvable.

    Returns ``(gamma, GainPair)`` evaluated at the feasible end of the bracket.
    """
    d = np.asarray(d, dtype=float)
    if hi is None:
        hi = 1.0
        while True:
            try:
                pair = riccati_game_oracle(G, d, hi)
                break
            except GammaInfeasibleError:
                lo, hi = hi, 2.0 * hi
                if hi > 1e8:
                    raise
    else:
        pair = riccati_game_oracle(G, d, hi)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        try:
            pair = riccati_game_oracle(G, d, mid)
            hi = mid
        except GammaInfeasibleError:
            lo = mid
    return hi, pair


def model_based_kstep(G: PartitionedPlant, d, tol: float = 1e-6) -> np.ndarray:
    """Central controller at the smallest feasible level for scaling `d`."""
    return minimal_gamma(G, d, tol)[1].K


@dataclass
class ModelBasedResult:
    K: np.ndarray
    d: np.ndarray
    mu_bar: list


def model_based_dk(G: PartitionedPlant, n_rounds: int = 5, dcfg=None, tol: float = 1e-6) -> ModelBasedResult:
    """DK-iteration with Riccati K-steps and exact-norm D-steps.

    ``mu_bar[r]`` is the exact upper bound after round r (K-step then D-step).
    """
    from .dk import DminConfig, approx_dmin

    dcfg = DminConfig() if dcfg is None else dcfg
    d = np.zeros(G.mv)
    K = None
    history = []
    for _ in range(n_rounds):
        K_new = model_based_kstep(G, d, tol)
        # keep the previous controller if the new one is not better (bisection tolerance)
        if K is None or exact_mu_bar(G, K_new, d) <= exact_mu_bar(G, K, d):
            K = K_new
        D, _ = approx_dmin(d, dcfg, lambda x: exact_mu_bar(G, K, x))
        d = np.array(D.d)
        history.append(exact_mu_bar(G, K, d))
    return ModelBasedResult(K=K, d=d, mu_bar=history)


def run_case_study(cfg=None, out_dir=None):
    """Five DK rounds on the spring-mass benchmark with the default schedule.

    Returns ``(summary, trace)``; see :func:`mfdk.pipeline.run_synthesis`.
    """
    from .pipeline import SynthesisConfig, run_synthesis

    cfg = SynthesisConfig() if cfg is None else cfg
    return run_synthesis(build_spring_mass(), cfg, out_dir)
