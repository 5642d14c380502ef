"""Black-box simulators: trajectories in, trajectories out.

The synthesis path only ever sees objects from this module.  A
:class:`LinearSimulator` keeps the plant matrices inside a closure and exposes
nothing but channel dimensions, a seeded noise source and rollouts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, DivergedError
from .lti import PartitionedPlant, StateSpace

__all__ = [
    "Trajectory",
    "LinearSimulator",
    "SystemSimulator",
    "ScaledLoop",
    "rollout",
    "rollout_with_policies",
    "adjoint_pass",
    "DEFAULT_GUARD",
]

DEFAULT_GUARD = 1e12


def _check_guard(X: np.ndarray, guard: float) -> None:
    if not np.all(np.isfinite(X)) or (X.size and np.max(np.abs(X)) > guard):
        raise DivergedError(f"state norm exceeded {guard:g}: the interconnection is unstable")


def _make_plant_runner(G: PartitionedPlant):
    """Close over the plant matrices and return a batched rollout function."""
    A, Bw, Bd, Bu = (np.array(m) for m in (G.A, G.Bw, G.Bd, G.Bu))
    Cv, Ce, Duv, Due = (np.array(m) for m in (G.Cv, G.Ce, G.Duv, G.Due))
    Bh = np.hstack([Bw, Bd])
    mw = Bw.shape[1]

    def run(x0, u_ext, h_ext, K, L, guard):
        batch, horizon, _ = u_ext.shape
        Acl = A.copy()
        if K is not None:
            Acl = Acl - Bu @ K
        if L is not None:
            Acl = Acl - Bh @ L
        forcing = u_ext @ Bu.T + h_ext @ Bh.T
        X = np.empty((batch, horizon, A.shape[0]))
        x = x0
        AclT = Acl.T
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(horizon):
                X[:, t] = x
                x = x @ AclT + forcing[:, t]
        _check_guard(X, guard)
        U = u_ext if K is None else u_ext - X @ K.T
        H = h_ext if L is None else h_ext - X @ L.T
        V = X @ Cv.T + U @ Duv.T
        E = X @ Ce.T + U @ Due.T
        return (X, U, H[..., :mw], H[..., mw:], V, E), x

    return run


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-indexed signals of one rollout, or of a batch of rollouts.

    Arrays are ``(T, dim)`` for a single rollout and ``(B, T, dim)`` for a
    batch.
    """

    u: np.ndarray
    w: np.ndarray
    d: np.ndarray
    x: np.ndarray
    v: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        lengths = {a.shape[-2] for a in (self.u, self.w, self.d, self.x, self.v, self.e)}
        if len(lengths) != 1:
            raise DimensionError("trajectory sequences must share one length")

    @property
    def horizon(self) -> int:
        return self.x.shape[-2]

    @property
    def h(self) -> np.ndarray:
        return np.concatenate([self.w, self.d], axis=-1)

    @property
    def batched(self) -> bool:
        return self.x.ndim == 3

    def to_csv(self, path) -> None:
        if self.batched:
            raise ValueError("CSV export is for a single rollout")
        header = ["t"]
        cols = [np.arange(self.horizon)[:, None]]
        for name in ("u", "w", "d", "x", "v", "e"):
            arr = getattr(self, name)
            header += [f"{name}{i + 1}" for i in range(arr.shape[1])]
            cols.append(arr)
        table = np.hstack(cols)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, row in enumerate(table):
                writer.writerow([t] + [repr(float(x)) for x in row[1:]])


class LinearSimulator:
    """Steppable black box for a :class:`PartitionedPlant`.

    Parameters
    ----------
    plant : PartitionedPlant
        The hidden model.  It is captured in a closure and not stored on the
        instance.
    seed : int
        Seed of the exploration/initial-state noise source.
    sigma0 : array_like, optional
        Initial-state covariance (identity by default).
    guard : float
        State-norm threshold beyond which a rollout is declared diverged.
    """

    def __init__(self, plant: PartitionedPlant, seed: int = 0, sigma0=None, guard: float = DEFAULT_GUARD):
        self.n, self.mu, self.mw, self.md = plant.n, plant.mu, plant.mw, plant.md
        self.mv, self.me = plant.mv, plant.me
        self.guard = guard
        self.rng = np.random.default_rng(seed)
        if sigma0 is None:
            sigma0 = np.eye(self.n)
        sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
        if sigma0.shape != (self.n, self.n) or not np.allclose(sigma0, sigma0.T):
            raise ValueError("initial-state covariance must be symmetric n x n")
        evals, evecs = np.linalg.eigh(sigma0)
        if evals.min() < -1e-12 * max(1.0, evals.max()):
            raise ValueError("initial-state covariance must be positive semidefinite")
        self._x0_factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
        self._run = _make_plant_runner(plant)
        self.state = np.zeros(self.n)

    @property
    def mh(self) -> int:
        return self.mw + self.md

    def sample_x0(self, batch: int = 1, rng=None) -> np.ndarray:
        rng = self.rng if rng is None else rng
        return rng.standard_normal((batch, self.n)) @ self._x0_factor.T

    def reset(self, x0=None) -> np.ndarray:
        """Reset to `x0`, or to a draw from the initial-state distribution."""
        if x0 is None:
            self.state = self.sample_x0(1)[0]
        else:
            x0 = np.asarray(x0, dtype=float).reshape(self.n)
            self.state = x0.copy()
        return self.state.copy()

    def step(self, u, w, d):
        """Advance one sample from the current state; returns ``(x, v, e)`` at that step."""
        u = np.asarray(u, dtype=float).reshape(1, 1, self.mu)
        h = np.concatenate([np.ravel(w), np.ravel(d)]).reshape(1, 1, self.mh)
        (X, _, _, _, V, E), x_next = self._run(self.state[None, :], u, h, None, None, self.guard)
        _check_guard(x_next, self.guard)
        self.state = x_next[0].copy()
        return X[0, 0], V[0, 0], E[0, 0]

    def simulate(self, x0, u, h, K=None, L=None):
        """Batched rollout.  ``x0`` is ``(B, n)``; ``u``, ``h`` are ``(B, T, .)``.

        With gains given, the applied inputs are ``u - K x`` and ``h - L x``.
        """
        signals, _ = self._run(x0, u, h, K, L, self.guard)
        return signals


def _batchify(a, dim, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[2] != dim:
        raise DimensionError(f"{name} must be (T, {dim}) or (B, T, {dim}), got {a.shape}")
    return a


def rollout(sim: LinearSimulator, u, w, d, x0=None, K=None) -> Trajectory:
    """Drive the simulator with open-loop input sequences.

    ``x0=None`` starts from the origin, ``x0="sample"`` draws from the
    initial-state distribution, otherwise ``x0`` is used as given.  When a
    gain `K` is supplied the plant input is ``u - K x`` (policy hook).
    """
    single = np.asarray(u).ndim == 2
    U = _batchify(u, sim.mu, "u")
    W = _batchify(w, sim.mw, "w")
    Dd = _batchify(d, sim.md, "d")
    if not (U.shape[:2] == W.shape[:2] == Dd.shape[:2]):
        raise DimensionError("input sequences must share batch size and horizon")
    batch = U.shape[0]
    if x0 is None:
        X0 = np.zeros((batch, sim.n))
    elif isinstance(x0, str):
        if x0 != "sample":
            raise ValueError("x0 must be None, 'sample' or a state")
        X0 = sim.sample_x0(batch)
    else:
        X0 = np.broadcast_to(np.asarray(x0, dtype=float), (batch, sim.n)).copy()
    if K is not None:
        K = np.asarray(K, dtype=float).reshape(sim.mu, sim.n)
    X, U, W, Dd, V, E = sim.simulate(X0, U, np.concatenate([W, Dd], axis=2), K=K)
    traj = Trajectory(U, W, Dd, X, V, E)
    if single:
        traj = Trajectory(*(a[0] for a in (U, W, Dd, X, V, E)))
    return traj


def rollout_with_policies(
    sim: LinearSimulator,
    K,
    L,
    horizon: int,
    noise_u: float = 0.0,
    noise_h: float = 0.0,
    n_rollouts: int = 1,
    x0="sample",
    seed=None,
) -> Trajectory:
    """Closed-loop rollouts with ``u = -K x + noise`` and ``h = -L x + noise``.

    Returns a batched trajectory ``(n_rollouts, horizon, .)``.  With `seed`
    given the draw is reproducible; otherwise the simulator's own noise source
    is consumed.
    """
    rng = sim.rng if seed is None else np.random.default_rng(seed)
    K = np.asarray(K, dtype=float).reshape(sim.mu, sim.n)
    L = np.asarray(L, dtype=float).reshape(sim.mh, sim.n)
    if isinstance(x0, str):
        if x0 != "sample":
            raise ValueError("x0 must be 'sample', None or a state")
        X0 = sim.sample_x0(n_rollouts, rng)
    elif x0 is None:
        X0 = np.zeros((n_rollouts, sim.n))
    else:
        X0 = np.broadcast_to(np.asarray(x0, dtype=float), (n_rollouts, sim.n)).copy()
    U = noise_u * rng.standard_normal((n_rollouts, horizon, sim.mu))
    H = noise_h * rng.standard_normal((n_rollouts, horizon, sim.mh))
    X, U, W, Dd, V, E = sim.simulate(X0, U, H, K=K, L=L)
    return Trajectory(U, W, Dd, X, V, E)


class SystemSimulator:
    """Zero-initial-state input/output black box around a plain state-space system."""

    def __init__(self, ss: StateSpace, guard: float = DEFAULT_GUARD):
        self.n_in, self.n_out = ss.m, ss.p
        self.guard = guard
        A, B, C, Dff = (np.array(m) for m in (ss.A, ss.B, ss.C, ss.Dff))

        def respond(inputs):
            batch, horizon, _ = inputs.shape
            X = np.empty((batch, horizon, A.shape[0]))
            x = np.zeros((batch, A.shape[0]))
            forcing = inputs @ B.T
            with np.errstate(over="ignore", invalid="ignore"):
                for t in range(horizon):
                    X[:, t] = x
                    x = x @ A.T + forcing[:, t]
            _check_guard(X, guard)
            return X @ C.T + inputs @ Dff.T

        self._respond = respond

    def respond(self, inputs) -> np.ndarray:
        inputs = _batchify(inputs, self.n_in, "inputs")
        return self._respond(inputs)


class ScaledLoop:
    """diag(D, I) F_l(G, K) diag(D^-1, I) realized through simulator calls only.

    Inputs are the scaled disturbances ``(w~, d)``; outputs are ``(v~, e)``.
    The state starts at zero.
    """

    def __init__(self, sim: LinearSimulator, K, d):
        self.sim = sim
        self.K = np.asarray(K, dtype=float).reshape(sim.mu, sim.n)
        self.d = np.asarray(d, dtype=float).reshape(sim.mw)
        self.n_in = sim.mw + sim.md
        self.n_out = sim.mv + sim.me

    def respond(self, inputs) -> np.ndarray:
        inputs = _batchify(inputs, self.n_in, "inputs")
        batch, horizon, _ = inputs.shape
        h = inputs.copy()
        h[..., : self.sim.mw] *= np.exp(-self.d)
        X0 = np.zeros((batch, self.sim.n))
        U = np.zeros((batch, horizon, self.sim.mu))
        _, _, _, _, V, E = self.sim.simulate(X0, U, h, K=self.K)
        return np.concatenate([V * np.exp(self.d), E], axis=-1)


def adjoint_pass(op, y) -> np.ndarray:
    """Apply the transposed finite-window convolution operator to `y`.

    Uses time reversal per channel pair: the (j, i) block of the adjoint is
    ``R G_ij R``, so input channel j of the result collects, over output
    channels i, the time-reversed response of output i to the time-reversed
    ``y_i`` injected on input j.  All ``m * p`` experiments run as one batch
    from a zero initial state.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != op.n_out:
        raise DimensionError(f"y must be (T, {op.n_out}), got {y.shape}")
    horizon = y.shape[0]
    m, p = op.n_in, op.n_out
    rev = y[::-1]
    experiments = np.zeros((m * p, horizon, m))
    for j in range(m):
        experiments[j * p : (j + 1) * p, :, j] = rev.T
    out = op.respond(experiments)
    result = np.empty((horizon, m))
    idx = np.arange(p)
    for j in range(m):
        block = out[j * p : (j + 1) * p]
        result[:, j] = block[idx, :, idx].sum(axis=0)[::-1]
    return result
