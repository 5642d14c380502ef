"""Zero-sum LQ game: costs, LSPI and the double-loop RARL solver.

The protagonist plays ``u = -K x`` and minimizes, the adversary plays
``h = -L x`` on the stacked disturbance channel ``h = (w, d)`` and maximizes

    J(K, L) = E sum_k  x'Q x + u'Ru u + 2 x'N u - h'Rv h.

The model-free path (:func:`lstdq_fit`, :func:`inner_loop_maximize`,
:func:`rarl_solve`) only touches a :class:`~mfdk.sim.LinearSimulator`.  The
remaining functions are model based and exist for initialization and
verification.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .exceptions import DimensionError, DivergedError, GammaInfeasibleError, InsufficientExcitationError
from .lti import DScaling, PartitionedPlant, is_stable
from .sim import LinearSimulator, Trajectory, rollout_with_policies

logger = logging.getLogger(__name__)

__all__ = [
    "GameCost",
    "ScaledOutputCost",
    "QFunctionParams",
    "GainPair",
    "RarlConfig",
    "RarlResult",
    "build_game_cost",
    "lstdq_fit",
    "policy_improve",
    "inner_loop_maximize",
    "rarl_solve",
    "riccati_game_oracle",
    "lqr_gain",
    "game_value",
    "exact_inner_maximizer",
    "gauss_newton_step",
]

PROTAGONIST = "protagonist"
ADVERSARY = "adversary"


def _is_pd(M: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        return False
    return True


def _sym(M):
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class GameCost:
    """Quadratic game weights; ``Rv`` already carries the factor gamma**2."""

    Q: np.ndarray
    Ru: np.ndarray
    N: np.ndarray
    Rv: np.ndarray
    gamma: float

    def __post_init__(self):
        for name in ("Q", "Ru", "Rv"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise ValueError(f"{name} must be symmetric")
            object.__setattr__(self, name, M)
        N = np.atleast_2d(np.asarray(self.N, dtype=float))
        if N.shape != (self.Q.shape[0], self.Ru.shape[0]):
            raise DimensionError("N must be n x mu")
        object.__setattr__(self, "N", N)
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not _is_pd(self.Ru):
            raise ValueError("Ru must be positive definite")
        if not _is_pd(self.Rv):
            raise ValueError("Rv must be positive definite")

    def stage(self, x, u, h) -> np.ndarray:
        return (
            np.einsum("...i,ij,...j->...", x, self.Q, x)
            + np.einsum("...i,ij,...j->...", u, self.Ru, u)
            + 2.0 * np.einsum("...i,ij,...j->...", x, self.N, u)
            - np.einsum("...i,ij,...j->...", h, self.Rv, h)
        )

    def stage_cost(self, traj: Trajectory) -> np.ndarray:
        return self.stage(traj.x, traj.u, traj.h)


class ScaledOutputCost:
    """Stage cost computed from measured outputs only.

    ``|e|^2 + |D v|^2 - gamma^2 (|D w|^2 + |d|^2)``; equal to
    :meth:`GameCost.stage` for the cost built from the same plant, D and gamma,
    but it never needs the plant matrices.
    """

    def __init__(self, d, gamma: float):
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        self.scale = np.exp(np.asarray(d, dtype=float).reshape(-1))
        self.gamma = float(gamma)

    def stage_cost(self, traj: Trajectory) -> np.ndarray:
        v = traj.v * self.scale
        w = traj.w * self.scale
        return (
            np.sum(traj.e**2, axis=-1)
            + np.sum(v**2, axis=-1)
            - self.gamma**2 * (np.sum(w**2, axis=-1) + np.sum(traj.d**2, axis=-1))
        )


def build_game_cost(G: PartitionedPlant, D, gamma: float) -> GameCost:
    """Game weights for the D-scaled robust-performance problem at level `gamma`."""
    D = D if isinstance(D, DScaling) else DScaling(D)
    if len(D) != G.mv:
        raise DimensionError(f"scaling must have {G.mv} entries")
    D2 = np.diag(np.exp(2.0 * D.d))
    Q = G.Cv.T @ D2 @ G.Cv + G.Ce.T @ G.Ce
    Ru = G.Duv.T @ D2 @ G.Duv + G.Due.T @ G.Due
    N = G.Cv.T @ D2 @ G.Duv + G.Ce.T @ G.Due
    Rv = gamma**2 * scipy.linalg.block_diag(D2, np.eye(G.md))
    return GameCost(_sym(Q), _sym(Ru), N, Rv, float(gamma))


@dataclass(frozen=True, eq=False)
class QFunctionParams:
    """Q(x, a) = [x; a]' H [x; a] for the acting player."""

    H: np.ndarray
    n: int

    @property
    def Hxx(self):
        return self.H[: self.n, : self.n]

    @property
    def Hxa(self):
        return self.H[: self.n, self.n :]

    @property
    def Hax(self):
        return self.H[self.n :, : self.n]

    @property
    def Haa(self):
        return self.H[self.n :, self.n :]


@dataclass(frozen=True, eq=False)
class GainPair:
    K: np.ndarray
    L: np.ndarray
    P: Optional[np.ndarray] = None


def _quad_features(z: np.ndarray) -> np.ndarray:
    k = z.shape[-1]
    iu, ju = np.triu_indices(k)
    return z[..., iu] * z[..., ju]


def _features_to_matrix(theta: np.ndarray, k: int) -> np.ndarray:
    iu, ju = np.triu_indices(k)
    H = np.zeros((k, k))
    H[iu, ju] = theta
    off = iu != ju
    H[iu[off], ju[off]] *= 0.5
    H[ju[off], iu[off]] = H[iu[off], ju[off]]
    return H


def lstdq_fit(traj: Trajectory, cost, player: str, gain, rcond: float = 1e-8) -> QFunctionParams:
    """LSTD-Q estimate of the acting player's quadratic action-value function.

    Evaluates the target policy ``a = -gain x`` off-policy from transitions in
    which the acting player explored and the opponent played its fixed gain.
    The Bellman residual ``Q(x_t, a_t) - Q(x_{t+1}, -gain x_{t+1}) = c_t`` is
    solved in the least-squares sense (undiscounted).  A regression whose
    singular values spread by more than ``1 / rcond`` is rejected as
    insufficiently excited.

    Parameters
    ----------
    traj : Trajectory
        Batched rollouts ``(B, T, .)``.
    cost : GameCost or ScaledOutputCost
        Anything with ``stage_cost(traj)``.
    player : {"protagonist", "adversary"}
    gain : array_like
        Target gain of the acting player.
    """
    if player not in (PROTAGONIST, ADVERSARY):
        raise ValueError(f"unknown player {player!r}")
    x = traj.x if traj.batched else traj.x[None]
    act = traj.u if player == PROTAGONIST else traj.h
    act = act if traj.batched else act[None]
    c = cost.stage_cost(traj)
    c = c if traj.batched else c[None]
    n = x.shape[-1]
    gain = np.asarray(gain, dtype=float).reshape(act.shape[-1], n)

    z = np.concatenate([x[:, :-1], act[:, :-1]], axis=-1)
    x_next = x[:, 1:]
    z_next = np.concatenate([x_next, -x_next @ gain.T], axis=-1)
    k = z.shape[-1]
    Psi = (_quad_features(z) - _quad_features(z_next)).reshape(-1, k * (k + 1) // 2)
    target = c[:, :-1].reshape(-1)

    U, s, Vt = np.linalg.svd(Psi, full_matrices=False)
    if s.size < Psi.shape[1] or s[-1] <= rcond * s[0]:
        raise InsufficientExcitationError(
            f"regression is rank deficient (smallest/largest singular value {s[-1] / s[0]:.2e})"
        )
    theta = Vt.T @ ((U.T @ target) / s)
    return QFunctionParams(_features_to_matrix(theta, k), n)


def policy_improve(qf: QFunctionParams, player: str = PROTAGONIST) -> np.ndarray:
    """Greedy gain ``Haa^-1 Hax`` (minimizer for the protagonist, maximizer for the adversary)."""
    Haa = _sym(qf.Haa)
    if player == ADVERSARY:
        if not _is_pd(-Haa):
            raise GammaInfeasibleError("adversary Q-function is not concave: level too small for this K")
    elif player == PROTAGONIST:
        if not _is_pd(Haa):
            raise GammaInfeasibleError("protagonist Q-function is not convex in the control")
    else:
        raise ValueError(f"unknown player {player!r}")
    return np.linalg.solve(Haa, qf.Hax)


@dataclass(frozen=True)
class RarlConfig:
    noise_std: float = 0.1
    n_rollouts: int = 20
    horizon: int = 200
    rcond: float = 1e-8
    inner_tol: float = 1e-6
    outer_tol: float = 1e-5
    max_inner: int = 100
    max_outer: int = 1000
    gain_limit: float = 1e6
    max_backtracks: int = 20


@dataclass(frozen=True, eq=False)
class RarlResult:
    K: np.ndarray
    L: np.ndarray
    updates: int
    converged: bool


def _draw_seed(rng) -> int:
    return int(rng.integers(2**63 - 1))


def _inner_solve(sim, K, cost, cfg, seed, L0=None):
    """Inner LSPI; returns the adversary gain and the value matrix of (K, L)."""
    K = np.asarray(K, dtype=float).reshape(sim.mu, sim.n)
    data = rollout_with_policies(
        sim, K, np.zeros((sim.mh, sim.n)), cfg.horizon,
        noise_h=cfg.noise_std, n_rollouts=cfg.n_rollouts, seed=seed,
    )
    L = np.zeros((sim.mh, sim.n)) if L0 is None else np.asarray(L0, dtype=float)
    for it in range(cfg.max_inner):
        try:
            qf = lstdq_fit(data, cost, ADVERSARY, L, cfg.rcond)
        except InsufficientExcitationError as exc:
            if it == 0:
                raise
            # ill-conditioning after the first improvement: the adversary is
            # running away, i.e. the level is at the admissibility boundary
            raise GammaInfeasibleError(f"adversary regression degenerated: {exc}") from exc
        L_new = policy_improve(qf, ADVERSARY)
        if not np.all(np.isfinite(L_new)) or np.abs(L_new).max() > cfg.gain_limit:
            raise GammaInfeasibleError("adversary gain is unbounded")
        if np.abs(L_new - L).max() < cfg.inner_tol:
            P = qf.Hxx - qf.Hxa @ L_new
            return L_new, _sym(P)
        L = L_new
    raise GammaInfeasibleError("inner maximization did not converge")


def inner_loop_maximize(
    sim: LinearSimulator, K, cost, cfg: RarlConfig = RarlConfig(), seed: int = 0, L0=None
) -> np.ndarray:
    """Worst-case adversary gain against a fixed protagonist gain `K`.

    One batch of data is sampled (u = -K x, h = exploration noise) and LSPI is
    iterated on it from ``L0`` (zero by default) until the gain moves by less
    than ``cfg.inner_tol``.
    """
    return _inner_solve(sim, K, cost, cfg, seed, L0)[0]


def rarl_solve(
    gamma: float,
    K_init,
    d,
    sim: LinearSimulator,
    cfg: RarlConfig = RarlConfig(),
    seed: int = 0,
    callback: Optional[Callable[[np.ndarray, np.ndarray], None]] = None,
) -> RarlResult:
    """Double-loop RARL for the D-scaled game at level `gamma`.

    Each outer round resamples data with the worst-case adversary of the
    current gain frozen and takes one LSPI step on the protagonist.  The step
    is accepted only if the inner maximization at the new gain stays feasible
    and the game value ``tr P`` does not increase; otherwise it is halved.
    The LSPI step is a descent direction for the game value, so this only
    bites near the admissibility boundary, where the full step can overshoot.
    There the plain iteration can also fall into a growing two-cycle around
    the saddle point; a relaxation factor (initially 1) is halved whenever the
    proposed step fails to shrink.  `callback` sees every accepted update.

    Raises :class:`GammaInfeasibleError` when `K_init` is not strictly inside
    the gamma-admissible set.
    """
    cost = ScaledOutputCost(d, gamma)
    rng = np.random.default_rng(seed)
    K = np.asarray(K_init, dtype=float).reshape(sim.mu, sim.n)

    def inner(K_):
        try:
            return _inner_solve(sim, K_, cost, cfg, _draw_seed(rng))
        except DivergedError as exc:
            raise GammaInfeasibleError(f"closed loop diverged at level {gamma:g}: {exc}") from exc

    L, P = inner(K)
    value = float(np.trace(P))
    updates = 0
    relax = 1.0
    prev_size = np.inf
    for _ in range(cfg.max_outer):
        try:
            data = rollout_with_policies(
                sim, K, L, cfg.horizon,
                noise_u=cfg.noise_std, n_rollouts=cfg.n_rollouts, seed=_draw_seed(rng),
            )
        except DivergedError as exc:
            raise GammaInfeasibleError(f"closed loop diverged at level {gamma:g}: {exc}") from exc
        K_prop = policy_improve(lstdq_fit(data, cost, PROTAGONIST, K, cfg.rcond), PROTAGONIST)
        full_step = K_prop - K
        size = np.abs(full_step).max()
        if size >= prev_size:
            relax *= 0.5
        prev_size = size
        step = relax * full_step
        for _ in range(cfg.max_backtracks + 1):
            K_try = K + step
            try:
                L_try, P_try = inner(K_try)
                value_try = float(np.trace(P_try))
                if value_try <= value + 1e-9 * abs(value):
                    break
            except GammaInfeasibleError:
                pass
            step = 0.5 * step
        else:
            raise GammaInfeasibleError(f"no admissible descent step at level {gamma:g}")
        K, L, value = K_try, L_try, value_try
        updates += 1
        if callback is not None:
            callback(K, L)
        if size < cfg.outer_tol:
            return RarlResult(K, L, updates, True)
    logger.warning("RARL outer loop hit max_outer=%d at gamma=%g", cfg.max_outer, gamma)
    return RarlResult(K, L, updates, False)


def _game_matrices(G: PartitionedPlant, cost: GameCost):
    B = np.hstack([G.Bu, G.Bh])
    R = scipy.linalg.block_diag(cost.Ru, -cost.Rv)
    S = np.hstack([cost.N, np.zeros((G.n, G.mw + G.md))])
    return B, R, S


def riccati_game_oracle(
    G: PartitionedPlant, D, gamma: float, cost: Optional[GameCost] = None,
    max_iter: int = 200_000, tol: float = 1e-13,
) -> GainPair:
    """Nash gains of the game from the stabilizing game Riccati solution.

    Fixed-point (value) iteration of the game Riccati map from ``P = 0``,
    cross terms included.  Raises :class:`GammaInfeasibleError` when the
    adversary's curvature ``Rv - Bh' P Bh`` loses definiteness, the iteration
    blows up, or the limit does not stabilize the loop; all signs that
    `gamma` is at or below the optimal level.
    """
    cost = build_game_cost(G, D, gamma) if cost is None else cost
    A, Bh = G.A, G.Bh
    B, R, S = _game_matrices(G, cost)
    mu = G.mu
    P = np.zeros((G.n, G.n))
    for _ in range(max_iter):
        if not _is_pd(cost.Rv - Bh.T @ P @ Bh):
            raise GammaInfeasibleError(f"level {gamma:g} is at or below the optimal level")
        F = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A + S.T)
        P_new = _sym(cost.Q + A.T @ P @ A - (A.T @ P @ B + S) @ F)
        if not np.all(np.isfinite(P_new)) or np.abs(P_new).max() > 1e12:
            raise GammaInfeasibleError(f"game Riccati iteration diverged at level {gamma:g}")
        delta = np.abs(P_new - P).max()
        P = P_new
        if delta <= tol * max(1.0, np.abs(P).max()):
            break
    else:
        raise GammaInfeasibleError(f"game Riccati iteration did not settle at level {gamma:g}")
    F = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A + S.T)
    K, L = F[:mu], F[mu:]
    if not (is_stable(A - G.Bu @ K - Bh @ L) and _is_pd(cost.Rv - Bh.T @ P @ Bh)):
        raise GammaInfeasibleError(f"no stabilizing game solution at level {gamma:g}")
    return GainPair(K, L, P)


def lqr_gain(A, B, Q, R, N=None) -> np.ndarray:
    """Discrete LQR gain for ``u = -K x`` (cross term ``2 x'N u`` allowed)."""
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    Q, R = np.atleast_2d(Q).astype(float), np.atleast_2d(R).astype(float)
    N = np.zeros((A.shape[0], B.shape[1])) if N is None else np.atleast_2d(N)
    P = scipy.linalg.solve_discrete_are(A, B, Q, R, s=N)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A + N.T)


def _closed_loop_value(Acl, Qcl):
    if not is_stable(Acl):
        return None
    return _sym(scipy.linalg.solve_discrete_lyapunov(Acl.T, Qcl))


def game_value(G: PartitionedPlant, cost: GameCost, K, L, sigma0=None) -> float:
    """J(K, L) = trace(P Sigma0) from the closed-loop Lyapunov equation (model based)."""
    K, L = np.atleast_2d(K), np.atleast_2d(L)
    Acl = G.A - G.Bu @ K - G.Bh @ L
    Qcl = cost.Q + K.T @ cost.Ru @ K - cost.N @ K - K.T @ cost.N.T - L.T @ cost.Rv @ L
    P = _closed_loop_value(Acl, Qcl)
    if P is None:
        return np.inf
    sigma0 = np.eye(G.n) if sigma0 is None else sigma0
    return float(np.trace(P @ sigma0))


def exact_inner_maximizer(G: PartitionedPlant, cost: GameCost, K, tol: float = 1e-12, max_iter: int = 500):
    """Model-based worst-case adversary for fixed K by policy iteration from L = 0.

    Returns ``(L, P)`` with P the value matrix of (K, L).
    """
    K = np.atleast_2d(K)
    A = G.A - G.Bu @ K
    Bh = G.Bh
    Qk = cost.Q + K.T @ cost.Ru @ K - cost.N @ K - K.T @ cost.N.T
    L = np.zeros((Bh.shape[1], G.n))
    for _ in range(max_iter):
        P = _closed_loop_value(A - Bh @ L, Qk - L.T @ cost.Rv @ L)
        if P is None:
            raise GammaInfeasibleError("adversary policy destabilized the loop")
        curv = cost.Rv - Bh.T @ P @ Bh
        if not _is_pd(curv):
            raise GammaInfeasibleError("level too small for this K")
        L_new = -np.linalg.solve(curv, Bh.T @ P @ A)
        if np.abs(L_new - L).max() < tol:
            L = L_new
            break
        L = L_new
    P = _closed_loop_value(A - Bh @ L, Qk - L.T @ cost.Rv @ L)
    return L, P


def gauss_newton_step(G: PartitionedPlant, cost: GameCost, K):
    """Model-based one-step outer update: exact inner solve, then exact policy improvement."""
    L, P = exact_inner_maximizer(G, cost, K)
    Ah = G.A - G.Bh @ L
    Bu = G.Bu
    return np.linalg.solve(cost.Ru + Bu.T @ P @ Bu, Bu.T @ P @ Ah + cost.N.T)
