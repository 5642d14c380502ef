"""Discrete-time LTI state-space data, interconnections and discretization.

Everything in this module is exact and model based.  The synthesis path never
calls into it with the true plant; it is used to build plants, to drive the
black-box simulator, and by the verification oracles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .exceptions import DimensionError

__all__ = [
    "StateSpace",
    "PartitionedPlant",
    "DScaling",
    "zoh_discretize",
    "close_loop",
    "apply_d_scaling",
    "scaled_loop",
    "spectral_radius",
    "is_stable",
    "load_plant",
    "save_plant",
]


def _as_matrix(a, name: str, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1 and shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateSpace:
    """x[k+1] = A x[k] + B u[k],  y[k] = C x[k] + Dff u[k]."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Dff: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        A = A.reshape(0, 0) if A.size == 0 else np.atleast_2d(A)
        n = A.shape[0]
        A = _as_matrix(A, "A")
        if A.shape != (n, n):
            raise DimensionError("A must be square")
        Dff = _as_matrix(self.Dff, "Dff")
        p, m = Dff.shape
        B = _as_matrix(np.array(self.B, dtype=float).reshape(n, m), "B")
        C = _as_matrix(np.array(self.C, dtype=float).reshape(p, n), "C")
        if m < 1 or p < 1:
            raise DimensionError("StateSpace needs at least one input and one output")
        for name, val in zip("ABC", (A, B, C)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "Dff", Dff)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.Dff.shape[1]

    @property
    def p(self) -> int:
        return self.Dff.shape[0]

    def freqresp(self, z) -> np.ndarray:
        """Evaluate the transfer matrix at the complex points `z`; returns (len(z), p, m)."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        out = np.empty((z.size, self.p, self.m), dtype=complex)
        eye = np.eye(self.n)
        for i, zi in enumerate(z):
            if self.n:
                out[i] = self.C @ np.linalg.solve(zi * eye - self.A, self.B) + self.Dff
            else:
                out[i] = self.Dff
        return out

    def output_scaled(self, c: float) -> "StateSpace":
        return StateSpace(self.A, self.B, c * self.C, c * self.Dff)

    def allclose(self, other: "StateSpace", atol: float = 0.0) -> bool:
        return all(
            a.shape == b.shape and np.allclose(a, b, rtol=0.0, atol=atol)
            for a, b in zip(
                (self.A, self.B, self.C, self.Dff), (other.A, other.B, other.C, other.Dff)
            )
        )


@dataclass(frozen=True, eq=False)
class PartitionedPlant:
    """Uncertain plant with inputs (w, d, u) and outputs (v, e).

    There are no disturbance feedthrough blocks: w and d act only through the
    state.  The uncertainty channel is square (mv == mw).
    """

    A: np.ndarray
    Bw: np.ndarray
    Bd: np.ndarray
    Bu: np.ndarray
    Cv: np.ndarray
    Ce: np.ndarray
    Duv: np.ndarray
    Due: np.ndarray

    def __post_init__(self):
        mats = {}
        for name in ("A", "Bw", "Bd", "Bu", "Cv", "Ce", "Duv", "Due"):
            mats[name] = _as_matrix(getattr(self, name), name)
        n = mats["A"].shape[0]
        if mats["A"].shape != (n, n):
            raise DimensionError("A must be square")
        for name in ("Bw", "Bd", "Bu"):
            if mats[name].shape[0] != n:
                raise DimensionError(f"{name} must have {n} rows")
        for name in ("Cv", "Ce"):
            if mats[name].shape[1] != n:
                raise DimensionError(f"{name} must have {n} columns")
        mu = mats["Bu"].shape[1]
        if mats["Duv"].shape != (mats["Cv"].shape[0], mu):
            raise DimensionError("Duv must be mv x mu")
        if mats["Due"].shape != (mats["Ce"].shape[0], mu):
            raise DimensionError("Due must be me x mu")
        if mats["Cv"].shape[0] != mats["Bw"].shape[1]:
            raise DimensionError("uncertainty channel must be square (mv == mw)")
        for name, val in mats.items():
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def mw(self) -> int:
        return self.Bw.shape[1]

    @property
    def md(self) -> int:
        return self.Bd.shape[1]

    @property
    def mu(self) -> int:
        return self.Bu.shape[1]

    @property
    def mv(self) -> int:
        return self.Cv.shape[0]

    @property
    def me(self) -> int:
        return self.Ce.shape[0]

    @property
    def Bh(self) -> np.ndarray:
        """Stacked disturbance input matrix [Bw Bd] for h = (w, d)."""
        return np.hstack([self.Bw, self.Bd])

    def to_dict(self) -> dict:
        return {
            name: getattr(self, name).tolist()
            for name in ("A", "Bw", "Bd", "Bu", "Cv", "Ce", "Duv", "Due")
        }


class DScaling:
    """Static diagonal scaling D = exp(diag(d)), stored by its log-parameters."""

    def __init__(self, d):
        d = np.array(d, dtype=float).reshape(-1)
        if not np.all(np.isfinite(d)):
            raise ValueError("log-scaling parameters must be finite")
        d.setflags(write=False)
        self.d = d

    @classmethod
    def identity(cls, m: int) -> "DScaling":
        return cls(np.zeros(m))

    def __len__(self) -> int:
        return self.d.size

    def __repr__(self) -> str:
        return f"DScaling(d={self.d.tolist()})"

    @property
    def diag(self) -> np.ndarray:
        return np.exp(self.d)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(np.exp(self.d))

    @property
    def inverse(self) -> np.ndarray:
        return np.diag(np.exp(-self.d))


def _as_scaling(D) -> DScaling:
    return D if isinstance(D, DScaling) else DScaling(D)


def zoh_discretize(Ac, Bc, ts: float):
    """Zero-order-hold discretization via the augmented matrix exponential.

    Returns ``(Ad, Bd)`` with ``Ad = expm(Ac ts)`` and
    ``Bd = int_0^ts expm(Ac s) ds @ Bc``.
    """
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float)
    if Bc.ndim < 2:
        Bc = Bc.reshape(Ac.shape[0], -1)
    if not (np.all(np.isfinite(Ac)) and np.all(np.isfinite(Bc))):
        raise ValueError("non-finite entries in continuous-time matrices")
    if not ts > 0:
        raise ValueError("sample time must be positive")
    n, m = Bc.shape
    if Ac.shape != (n, n):
        raise DimensionError("Ac must be square with as many rows as Bc")
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = scipy.linalg.expm(M * ts)
    return E[:n, :n], E[:n, n:]


def close_loop(G: PartitionedPlant, K) -> StateSpace:
    """Lower LFT with static state feedback u = -K x: map (w, d) -> (v, e)."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (G.mu, G.n):
        raise DimensionError(f"gain must be {G.mu}x{G.n}, got {K.shape}")
    A = G.A - G.Bu @ K
    C = np.vstack([G.Cv - G.Duv @ K, G.Ce - G.Due @ K])
    return StateSpace(A, G.Bh, C, np.zeros((G.mv + G.me, G.mw + G.md)))


def apply_d_scaling(clp: StateSpace, D) -> StateSpace:
    """Return diag(D, I) * clp * diag(D^-1, I).

    The leading ``len(D)`` inputs and outputs of `clp` are the uncertainty
    channel.
    """
    D = _as_scaling(D)
    k = len(D)
    if k > clp.m or k > clp.p:
        raise DimensionError("scaling larger than the uncertainty channel")
    right = np.ones(clp.m)
    right[:k] = np.exp(-D.d)
    left = np.ones(clp.p)
    left[:k] = np.exp(D.d)
    return StateSpace(
        clp.A,
        clp.B * right[None, :],
        left[:, None] * clp.C,
        left[:, None] * clp.Dff * right[None, :],
    )


def scaled_loop(G: PartitionedPlant, K, D) -> StateSpace:
    D = _as_scaling(D)
    if len(D) != G.mw:
        raise DimensionError(f"scaling must have {G.mw} entries")
    return apply_d_scaling(close_loop(G, K), D)


def spectral_radius(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionError("spectral radius needs a square matrix")
    if A.size == 0:
        return 0.0
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigenvalue computation failed: {exc}") from exc
    return float(np.max(np.abs(eigs)))


def is_stable(A) -> bool:
    return spectral_radius(A) < 1.0


_PLANT_KEYS = ("A", "Bw", "Bd", "Bu", "Cv", "Ce", "Duv", "Due")
_FEEDTHROUGH_KEYS = ("Dwv", "Dwe", "Ddv", "Dde")


def plant_from_dict(data: dict) -> PartitionedPlant:
    """Build a plant from the JSON schema (row-major nested arrays).

    When ``ts`` is present the A and B matrices are continuous time and are
    discretized with a zero-order hold.
    """
    missing = [k for k in _PLANT_KEYS if k not in data]
    if missing:
        raise ValueError(f"plant file is missing keys: {missing}")
    for key in _FEEDTHROUGH_KEYS:
        if key in data and np.any(np.asarray(data[key], dtype=float) != 0):
            raise ValueError(f"disturbance feedthrough {key} must be zero")
    mats = {k: np.atleast_2d(np.asarray(data[k], dtype=float)) for k in _PLANT_KEYS}
    if "ts" in data:
        n = mats["A"].shape[0]
        widths = [mats[k].shape[1] for k in ("Bw", "Bd", "Bu")]
        Ad, Bd = zoh_discretize(mats["A"], np.hstack([mats["Bw"], mats["Bd"], mats["Bu"]]), float(data["ts"]))
        mats["A"] = Ad
        cuts = np.cumsum(widths)[:-1]
        mats["Bw"], mats["Bd"], mats["Bu"] = np.split(Bd.reshape(n, -1), cuts, axis=1)
    return PartitionedPlant(**mats)


def load_plant(path) -> PartitionedPlant:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("plant file must hold a JSON object")
    return plant_from_dict(data)


def save_plant(G: PartitionedPlant, path) -> None:
    Path(path).write_text(json.dumps(G.to_dict(), indent=2))
