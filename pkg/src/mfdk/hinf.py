"""H-infinity norm estimation.

Three routes to the same number:

* :func:`hinf_oracle`: model free.  Power iteration on ``G_N^T G_N`` where
  ``G_N`` is the N-step convolution operator, accessed only through rollouts
  and time-reversed adjoint rollouts.
* :func:`toeplitz_sigma`: brute force on the materialized block Toeplitz
  matrix built from Markov parameters.
* :func:`hinf_exact`: model based, with a Hamiltonian level-set certificate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, DivergedError, UnstableLoopError
from .lti import StateSpace, is_stable
from .sim import adjoint_pass

logger = logging.getLogger(__name__)

__all__ = [
    "PowerIterConfig",
    "HinfEstimate",
    "hinf_oracle",
    "markov_parameters",
    "toeplitz_matrix",
    "toeplitz_sigma",
    "hinf_exact",
    "peak_gain_grid",
    "TOEPLITZ_MAX_WINDOW",
]

TOEPLITZ_MAX_WINDOW = 512


@dataclass(frozen=True)
class PowerIterConfig:
    n_win: int = 100
    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_win < 1:
            raise ValueError("window length must be at least 1")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class HinfEstimate:
    value: float
    iterations: int
    converged: bool
    n_win: int


def _power_iterate(op, cfg: PowerIterConfig, seed: int):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((cfg.n_win, op.n_in))
    u /= np.linalg.norm(u)
    sigma_prev = None
    for it in range(1, cfg.max_iters + 1):
        y = op.respond(u)[0]
        sigma = float(np.linalg.norm(y))
        if sigma == 0.0:
            return 0.0, it, True
        if sigma_prev is not None and abs(sigma - sigma_prev) <= cfg.tol * sigma:
            return sigma, it, True
        sigma_prev = sigma
        z = adjoint_pass(op, y)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return sigma, it, True
        u = z / nz
    return sigma, cfg.max_iters, False


def hinf_oracle(op, cfg: PowerIterConfig = PowerIterConfig()) -> HinfEstimate:
    """Estimate the largest singular value of the N-window operator of `op`.

    `op` is any black-box map with ``n_in``, ``n_out`` and ``respond(inputs)``
    started from a zero state (e.g. :class:`~mfdk.sim.ScaledLoop`).  The
    result is a lower bound on the H-infinity norm that tightens as the window
    grows.  A run that does not converge is restarted once from a fresh random
    signal; if that also fails the better of the two values is returned with
    ``converged=False``.
    """
    try:
        value, iters, ok = _power_iterate(op, cfg, cfg.seed)
        if not ok:
            logger.debug("power iteration did not converge; restarting with a fresh seed")
            value2, iters2, ok = _power_iterate(op, cfg, cfg.seed + 1)
            iters += iters2
            value = value2 if ok else max(value, value2)
    except DivergedError as exc:
        raise UnstableLoopError(str(exc)) from exc
    return HinfEstimate(value=value, iterations=iters, converged=ok, n_win=cfg.n_win)


def markov_parameters(ss: StateSpace, count: int) -> list:
    """First `count` Markov parameters ``Dff, C B, C A B, ...``."""
    out = [np.array(ss.Dff)]
    if ss.n == 0:
        return out + [np.zeros_like(ss.Dff) for _ in range(count - 1)]
    AkB = np.array(ss.B)
    for _ in range(count - 1):
        out.append(ss.C @ AkB)
        AkB = ss.A @ AkB
    return out


def toeplitz_matrix(markov, n_win: int) -> np.ndarray:
    """Block lower-triangular Toeplitz matrix of the N-step convolution."""
    if n_win > TOEPLITZ_MAX_WINDOW:
        raise ValueError(f"window {n_win} exceeds the materialization guard {TOEPLITZ_MAX_WINDOW}")
    markov = [np.atleast_2d(np.asarray(g, dtype=float)) for g in markov]
    p, m = markov[0].shape
    T = np.zeros((p * n_win, m * n_win))
    for k, g in enumerate(markov[:n_win]):
        if g.shape != (p, m):
            raise DimensionError("Markov parameters must share one shape")
        for s in range(n_win - k):
            t = s + k
            T[t * p : (t + 1) * p, s * m : (s + 1) * m] = g
    return T


def toeplitz_sigma(markov, n_win: int) -> float:
    """Exact largest singular value of the materialized N-window operator."""
    T = toeplitz_matrix(markov, n_win)
    return float(np.linalg.svd(T, compute_uv=False)[0])


def peak_gain_grid(ss: StateSpace, npts: int = 10_000) -> float:
    """Largest singular value over `npts` equispaced points of the upper unit semicircle."""
    theta = np.linspace(0.0, np.pi, npts)
    G = ss.freqresp(np.exp(1j * theta))
    return float(np.max(np.linalg.svd(G, compute_uv=False)[:, 0]))


def _bilinear(ss: StateSpace):
    """Continuous-time system with the same frequency response (z = (1+s)/(1-s))."""
    n = ss.n
    M = np.linalg.inv(ss.A + np.eye(n))
    Ac = (ss.A - np.eye(n)) @ M
    Bc = np.sqrt(2.0) * M @ ss.B
    Cc = np.sqrt(2.0) * ss.C @ M
    Dc = ss.Dff - ss.C @ M @ ss.B
    return Ac, Bc, Cc, Dc


def _sigma_max_c(Ac, Bc, Cc, Dc, omega):
    n = Ac.shape[0]
    G = Cc @ np.linalg.solve(1j * omega * np.eye(n) - Ac, Bc) + Dc
    return float(np.linalg.svd(G, compute_uv=False)[0])


def _imaginary_axis_frequencies(Ac, Bc, Cc, Dc, gamma):
    """Frequencies where `gamma` is a singular value of the continuous response."""
    m = Bc.shape[1]
    R = gamma**2 * np.eye(m) - Dc.T @ Dc
    Rinv = np.linalg.inv(R)
    F = Ac + Bc @ Rinv @ Dc.T @ Cc
    Hm = np.block(
        [
            [F, Bc @ Rinv @ Bc.T],
            [-Cc.T @ (np.eye(Cc.shape[0]) + Dc @ Rinv @ Dc.T) @ Cc, -F.T],
        ]
    )
    eigs = np.linalg.eigvals(Hm)
    scale = max(1.0, float(np.max(np.abs(eigs)))) if eigs.size else 1.0
    imag = eigs[np.abs(eigs.real) < 1e-7 * scale]
    return np.unique(np.round(np.abs(imag.imag), 12))


def hinf_exact(ss: StateSpace, rtol: float = 1e-8) -> float:
    """H-infinity norm of a stable discrete-time system.

    A frequency sweep gives a starting lower bound.  Candidate levels are then
    bisected: at each level the Hamiltonian of the bilinear-equivalent
    continuous system is checked for imaginary-axis eigenvalues, and the
    singular values at those crossings (and at the midpoints between them) are
    evaluated directly, so every lower bound is an attained gain and every
    upper bound carries the no-crossing certificate.
    """
    if ss.n == 0:
        return float(np.linalg.svd(ss.Dff, compute_uv=False)[0])
    if not is_stable(ss.A):
        raise UnstableLoopError("hinf_exact needs a stable system")
    Ac, Bc, Cc, Dc = _bilinear(ss)

    def sig(omega):
        return _sigma_max_c(Ac, Bc, Cc, Dc, omega)

    # sweep: DC, Nyquist (Dc), pole angles and a log grid in tan(theta/2)
    poles = np.linalg.eigvals(ss.A)
    theta = np.concatenate([np.abs(np.angle(poles)), np.linspace(0, np.pi, 65)[1:-1]])
    freqs = np.unique(np.tan(np.clip(theta, 0, np.pi * (1 - 1e-9)) / 2.0))
    lb = max([float(np.linalg.svd(Dc, compute_uv=False)[0])] + [sig(w) for w in freqs])
    if lb == 0.0:
        return 0.0

    ub = 2.0 * lb
    while _imaginary_axis_frequencies(Ac, Bc, Cc, Dc, ub).size:
        lb = max(lb, ub)
        ub *= 2.0
        if ub > 1e15:
            raise UnstableLoopError("H-infinity norm is unbounded")

    for _ in range(200):
        if ub - lb <= rtol * lb:
            break
        level = 0.5 * (lb + ub)
        crossings = _imaginary_axis_frequencies(Ac, Bc, Cc, Dc, level)
        if crossings.size == 0:
            ub = level
            continue
        pts = list(crossings)
        pts += [0.5 * (a + b) for a, b in zip(crossings[:-1], crossings[1:])]
        attained = max(sig(w) for w in pts)
        if attained >= level * (1.0 - 1e-9):
            lb = max(lb, attained)
        else:
            # eigenvalues flagged near the axis but no gain reaches the level
            ub = level
    return 0.5 * (lb + ub)
