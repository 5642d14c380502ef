"""DK-iteration driver: alternating controller (K) and scaling (D) steps.

The K-step drives the game level down by repeatedly solving the scaled game
with RARL just above the current H-infinity estimate.  The D-step runs a
finite-difference gradient descent on ``log D``.  Both steps only see the
plant through the simulator; an optional ``monitor`` callable (model based,
harness side) is used purely for reporting the achieved upper bound.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import (
    DivergedError,
    GammaInfeasibleError,
    GradientEvaluationError,
    SynthesisAborted,
    UnstableLoopError,
)
from .game import RarlConfig, rarl_solve
from .hinf import PowerIterConfig, hinf_oracle
from .lti import DScaling
from .sim import LinearSimulator, ScaledLoop

logger = logging.getLogger(__name__)

__all__ = [
    "KminConfig",
    "DminConfig",
    "TraceRecord",
    "SynthesisTrace",
    "OracleObjective",
    "eval_H",
    "central_diff_grad",
    "approx_dmin",
    "approx_kmin",
    "dk_iterate",
]


@dataclass(frozen=True)
class KminConfig:
    """Settings of the K-step.

    ``delta_schedule[tau]`` is the level offset at iteration tau; the last
    entry repeats.  ``theta`` in [0, 1) smooths the level estimate.
    The loop stops once the estimate improves by less than ``stall`` relative
    between consecutive iterations (checked from the second iteration on).
    """

    t_iters: int = 100
    n_win: int = 100
    delta_schedule: tuple = (0.1, 5e-3)
    theta: float = 0.0
    stall: float = 1e-3

    def __post_init__(self):
        if self.t_iters < 1:
            raise ValueError("t_iters must be at least 1")
        if self.n_win < 1:
            raise ValueError("window length must be at least 1")
        if len(self.delta_schedule) == 0 or min(self.delta_schedule) <= 0:
            raise ValueError("delta schedule must be a non-empty sequence of positive offsets")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError("theta must lie in [0, 1)")
        if self.stall < 0:
            raise ValueError("stall threshold must be non-negative")

    def delta(self, tau: int) -> float:
        return float(self.delta_schedule[min(tau, len(self.delta_schedule) - 1)])


@dataclass(frozen=True)
class DminConfig:
    t_iters: int = 10
    alpha: float = 0.2
    eps: float = 0.05
    n_win: int = 100
    max_halvings: int = 20

    def __post_init__(self):
        if self.t_iters < 0:
            raise ValueError("t_iters must be non-negative")
        if not self.alpha > 0:
            raise ValueError("step size must be positive")
        if not self.eps > 0:
            raise ValueError("finite-difference step must be positive")
        if self.n_win < 1:
            raise ValueError("window length must be at least 1")


@dataclass
class TraceRecord:
    k_update_index: int
    phase: str
    gamma_est: float
    mu_bar_exact: float
    d: tuple
    level: float = float("nan")
    K: Optional[np.ndarray] = None


@dataclass
class SynthesisTrace:
    """Per-update log of a DK run.

    Every protagonist update appends one ``"K"`` record; every completed
    D-step appends one ``"D"`` record carrying the index of the last K-update.
    """

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def k_updates(self) -> int:
        return sum(1 for r in self.records if r.phase == "K")

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def phases(self) -> list:
        """Run-length encoded phase sequence, e.g. ``["K", "D", "K", "D"]``."""
        out = []
        for r in self.records:
            if not out or out[-1] != r.phase:
                out.append(r.phase)
        return out

    def mu_bar(self) -> np.ndarray:
        return np.array([r.mu_bar_exact for r in self.records], dtype=float)

    def _columns(self):
        m = max((len(r.d) for r in self.records), default=0)
        return ["k_update_index", "phase", "gamma_est", "mu_bar_exact"] + [f"d{i + 1}" for i in range(m)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self._columns())
            for r in self.records:
                w.writerow(
                    [r.k_update_index, r.phase, repr(float(r.gamma_est)), repr(float(r.mu_bar_exact))]
                    + [repr(float(x)) for x in r.d]
                )

    def to_json(self, path) -> None:
        rows = [
            {
                "k_update_index": r.k_update_index,
                "phase": r.phase,
                "gamma_est": float(r.gamma_est),
                "mu_bar_exact": float(r.mu_bar_exact),
                "d": [float(x) for x in r.d],
                "level": float(r.level),
                "K": None if r.K is None else np.asarray(r.K).tolist(),
            }
            for r in self.records
        ]
        with open(path, "w") as fh:
            json.dump({"records": rows}, fh, indent=1)


class OracleObjective:
    """``d -> estimated H-infinity norm of the scaled loop`` through the simulator."""

    def __init__(self, sim: LinearSimulator, K, n_win: int = 100, seed: int = 0, tol: float = 1e-6,
                 max_iters: int = 200):
        self.sim = sim
        self.K = np.array(K, dtype=float)
        self.cfg = PowerIterConfig(n_win=n_win, seed=seed, tol=tol, max_iters=max_iters)

    @property
    def noise(self) -> float:
        """Relative resolution of a single evaluation."""
        return self.cfg.tol

    def __call__(self, d) -> float:
        return hinf_oracle(ScaledLoop(self.sim, self.K, np.asarray(d, dtype=float)), self.cfg).value


def eval_H(d, K, sim: LinearSimulator, n_win: int = 100, seed: int = 0, exact_plant=None) -> float:
    """H-infinity norm of the D-scaled closed loop as a function of ``d``.

    Model free by default; passing `exact_plant` switches to the model-based
    value (verification mode).
    """
    if exact_plant is not None:
        from .hinf import hinf_exact
        from .lti import scaled_loop

        return hinf_exact(scaled_loop(exact_plant, K, np.asarray(d, dtype=float)))
    return OracleObjective(sim, K, n_win, seed=seed)(d)


def central_diff_grad(d, eps: float, objective: Callable, executor: Optional[Executor] = None) -> np.ndarray:
    """Central-difference gradient of `objective` at `d` (2m evaluations).

    With an executor the evaluations run concurrently; the result does not
    depend on scheduling because each evaluation is a pure function of its
    argument.
    """
    d = np.asarray(d, dtype=float)
    if not eps > 0:
        raise ValueError("eps must be positive")
    points = []
    for j in range(d.size):
        e = np.zeros_like(d)
        e[j] = eps
        points += [d + e, d - e]

    def evaluate(k):
        try:
            return float(objective(points[k]))
        except (UnstableLoopError, DivergedError, GammaInfeasibleError, np.linalg.LinAlgError) as exc:
            raise GradientEvaluationError(k // 2, str(exc)) from exc

    if executor is None:
        vals = [evaluate(k) for k in range(len(points))]
    else:
        vals = list(executor.map(evaluate, range(len(points))))
    vals = np.array(vals).reshape(d.size, 2)
    return (vals[:, 0] - vals[:, 1]) / (2.0 * eps)


def approx_dmin(d0, cfg: DminConfig, objective: Callable, rel_noise: float = 0.0,
                executor: Optional[Executor] = None):
    """Gradient descent on ``log D``.

    A step is halved while it raises the objective by more than twice
    `rel_noise` (relative).  Returns the final scaling and the objective
    values along the accepted iterates.
    """
    d = np.array(d0, dtype=float)
    value = float(objective(d))
    history = [value]
    for _ in range(cfg.t_iters):
        g = central_diff_grad(d, cfg.eps, objective, executor)
        step = cfg.alpha * g
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            cand = d - step
            try:
                cand_value = float(objective(cand))
            except (UnstableLoopError, DivergedError):
                cand_value = np.inf
            if cand_value <= value + 2.0 * rel_noise * value:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            logger.info("D-step: no descent along the gradient; stopping early")
            break
        d, value = cand, cand_value
        history.append(value)
    return DScaling(d), history


def _with_level(on_update, level):
    if on_update is None:
        return None
    return lambda K_new, L: on_update(K_new, L, level)


def approx_kmin(
    K0,
    d,
    cfg: KminConfig,
    sim: LinearSimulator,
    rarl_cfg: RarlConfig = RarlConfig(),
    rng=None,
    on_update: Optional[Callable] = None,
    on_level: Optional[Callable] = None,
    on_result: Optional[Callable] = None,
):
    """Reduce the game level for fixed scaling `d`.

    `on_level(tau, K, gamma_est)` is called after each norm estimate,
    `on_update(K_new, L, level)` after every protagonist update and
    `on_result(level, RarlResult)` after every completed RARL solve.  Returns
    the last gain.  An infeasible level is retried once with a doubled offset; a second
    failure raises :class:`SynthesisAborted` carrying the last good gain.
    """
    rng = np.random.default_rng(rng)
    d = np.asarray(d, dtype=float)
    K = np.array(K0, dtype=float)
    lam = None
    gamma_prev = None
    for tau in range(cfg.t_iters + 1):
        est = hinf_oracle(
            ScaledLoop(sim, K, d), PowerIterConfig(n_win=cfg.n_win, seed=int(rng.integers(2**31)))
        )
        gamma = est.value
        if on_level is not None:
            on_level(tau, K, gamma)
        if tau >= 2 and gamma_prev - gamma < cfg.stall * gamma_prev:
            logger.info("K-step stalled at tau=%d, gamma_est=%.6g", tau, gamma)
            break
        if tau == cfg.t_iters:
            break
        lam = gamma if lam is None else (1.0 - cfg.theta) * gamma + cfg.theta * lam
        delta = cfg.delta(tau)
        seed = int(rng.integers(2**31))
        level = lam + delta
        try:
            res = rarl_solve(level, K, d, sim, rarl_cfg, seed=seed,
                             callback=_with_level(on_update, level))
        except GammaInfeasibleError as exc:
            logger.info("level %.6g infeasible (%s); retrying with doubled offset", level, exc)
            level = lam + 2 * delta
            try:
                res = rarl_solve(level, K, d, sim, rarl_cfg, seed=seed + 1,
                                 callback=_with_level(on_update, level))
            except GammaInfeasibleError as exc2:
                raise SynthesisAborted(f"K-step aborted at tau={tau}: {exc2}", K=K, d=d) from exc2
        if on_result is not None:
            on_result(level, res)
        K = res.K
        gamma_prev = gamma
    return K


def dk_iterate(
    K_init,
    n_rounds: int,
    sim: LinearSimulator,
    kcfg: KminConfig = KminConfig(),
    dcfg: DminConfig = DminConfig(),
    rarl_cfg: RarlConfig = RarlConfig(),
    seed: int = 0,
    monitor: Optional[Callable] = None,
    executor: Optional[Executor] = None,
    d_init=None,
    on_result: Optional[Callable] = None,
):
    """Model-free DK-iteration.

    `monitor(K, d)` returns the exact upper bound for reporting (NaN when
    omitted).  `on_result(d, level, RarlResult)` sees every RARL solve.
    Returns ``(K, DScaling, SynthesisTrace)``.
    """
    if n_rounds < 0:
        raise ValueError("n_rounds must be non-negative")
    K = np.array(K_init, dtype=float)
    D = DScaling.identity(sim.mv) if d_init is None else DScaling(np.asarray(d_init, dtype=float))
    trace = SynthesisTrace()
    if n_rounds == 0:
        return K, D, trace
    rng = np.random.default_rng(seed)
    count = 0
    state = {"gamma": np.nan, "mu": np.nan}

    def measure(K_, d_):
        return float(monitor(K_, d_)) if monitor is not None else np.nan

    for rnd in range(n_rounds):
        d = np.array(D.d)

        def on_level(tau, K_, gamma):
            state["gamma"] = gamma
            state["mu"] = measure(K_, d)

        def on_update(K_new, L, level):
            nonlocal count
            count += 1
            trace.append(TraceRecord(count, "K", state["gamma"], state["mu"], tuple(d), level, K_new.copy()))

        def on_rarl(level, res):
            if on_result is not None:
                on_result(d, level, res)

        try:
            K = approx_kmin(K, d, kcfg, sim, rarl_cfg, rng=int(rng.integers(2**31)),
                            on_update=on_update, on_level=on_level, on_result=on_rarl)
        except SynthesisAborted as exc:
            exc.trace = trace
            raise
        objective = OracleObjective(sim, K, dcfg.n_win, seed=int(rng.integers(2**31)))
        try:
            D, history = approx_dmin(d, dcfg, objective, rel_noise=objective.noise, executor=executor)
        except GradientEvaluationError as exc:
            raise SynthesisAborted(f"D-step failed in round {rnd}: {exc}", K=K, d=d, trace=trace) from exc
        trace.append(TraceRecord(count, "D", history[-1], measure(K, D.d), tuple(D.d), K=K.copy()))
        logger.info("round %d: %d K-updates so far, gamma_est=%.6g", rnd, count, history[-1])
    return K, D, trace
