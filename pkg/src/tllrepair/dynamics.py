"""Discrete-time input-affine systems ``x+ = f(x) + g(x) u``.

Models are plain records of two callables plus Lipschitz metadata.  The
callables of the built-in models broadcast over leading axes, so a batch
of states ``(P, n)`` can be stepped at once; user models that only accept
single vectors are looped over transparently.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError

__all__ = [
    "Box",
    "DynamicsModel",
    "Trajectory",
    "Sups",
    "LipschitzEstimate",
    "step",
    "simulate",
    "simulate_batch",
    "car_model",
    "linear_model",
    "model_from_config",
    "sampled_sups",
    "sampled_lipschitz",
    "LIPSCHITZ_INFLATION",
]

LIPSCHITZ_INFLATION = 1.05


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``{x : lower <= x <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).ravel()
        hi = np.array(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise InputError("box bounds must be non-empty vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InputError("box bounds must be finite")
        if np.any(lo > hi):
            raise InputError(f"box lower bound exceeds upper bound: {lo} > {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return self.lower.size

    @property
    def has_interior(self) -> bool:
        return bool(np.all(self.upper > self.lower))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def contains_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.all((X >= self.lower) & (X <= self.upper), axis=-1)

    def subset_of(self, other: "Box") -> bool:
        return bool(np.all(self.lower >= other.lower) and np.all(self.upper <= other.upper))

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)

    def axes(self, samples: int):
        """Per-axis sample points: ``samples`` evenly spaced values, endpoints included."""
        if samples < 1:
            raise InputError("samples must be positive")
        if samples == 1:
            return [np.array([0.5 * (a + b)]) for a, b in zip(self.lower, self.upper)]
        return [np.linspace(a, b, samples) for a, b in zip(self.lower, self.upper)]

    def grid(self, samples: int) -> np.ndarray:
        """Tensor grid in lexicographic order, shape ``(samples**n, n)``."""
        mesh = np.meshgrid(*self.axes(samples), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def max_norm(self) -> float:
        """Exact ``max ||x||`` over the box (attained at the farthest corner)."""
        far = np.maximum(np.abs(self.lower), np.abs(self.upper))
        return float(np.linalg.norm(far))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Box":
        try:
            return cls(d["lower"], d["upper"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed box: {exc}") from exc


@dataclass(frozen=True)
class DynamicsModel:
    """Input-affine system ``x+ = f(x) + g(x) u``.

    Parameters
    ----------
    n, m : int
        State and input dimensions.
    f_eval, g_eval : callable
        ``f_eval(x) -> (n,)`` and ``g_eval(x) -> (n, m)``.  When
        ``vectorized`` is true they must also accept ``(P, n)`` batches and
        return ``(P, n)`` and ``(P, n, m)``.
    L_f, L_g : float or None
        Lipschitz constants of ``f`` and ``g``.  ``None`` means unknown; the
        bounds module then falls back to :func:`sampled_lipschitz`.
    provenance : str
        Where ``L_f`` and ``L_g`` came from: ``"user"``, ``"analytic"`` or
        ``"sampled"``.
    config : dict
        Parameters sufficient to rebuild a built-in model, if any.
    """

    n: int
    m: int
    f_eval: Callable
    g_eval: Callable
    L_f: float | None = None
    L_g: float | None = None
    provenance: str = "user"
    vectorized: bool = False
    name: str = "custom"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in ("L_f", "L_g"):
            v = getattr(self, key)
            if v is not None and not (v >= 0 and math.isfinite(v)):
                raise InputError(f"{key} must be a finite nonnegative number")

    @property
    def lipschitz_known(self) -> bool:
        return self.L_f is not None and self.L_g is not None

    def with_lipschitz(self, L_f: float, L_g: float, provenance: str) -> "DynamicsModel":
        return DynamicsModel(
            self.n, self.m, self.f_eval, self.g_eval, float(L_f), float(L_g), provenance,
            self.vectorized, self.name, dict(self.config),
        )

    # batch helpers ---------------------------------------------------------

    def f_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.vectorized:
            return np.asarray(self.f_eval(X), dtype=float).reshape(X.shape[0], self.n)
        return np.array([np.asarray(self.f_eval(x), dtype=float).reshape(self.n) for x in X])

    def g_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.vectorized:
            G = np.asarray(self.g_eval(X), dtype=float)
            return np.broadcast_to(G, (X.shape[0], self.n, self.m))
        return np.array([np.asarray(self.g_eval(x), dtype=float).reshape(self.n, self.m) for x in X])


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop trajectory: ``steps + 1`` states and ``steps`` inputs."""

    states: np.ndarray
    inputs: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.inputs)

    def first_step_in(self, predicate) -> int | None:
        """Index of the first state (after the initial one) satisfying ``predicate``."""
        for i, x in enumerate(self.states[1:], start=1):
            if predicate(x):
                return i
        return None

    def reconstruction_error(self, model: DynamicsModel) -> float:
        err = 0.0
        for i in range(self.steps):
            nxt = step(model, self.states[i], self.inputs[i])
            err = max(err, float(np.max(np.abs(nxt - self.states[i + 1]))))
        return err

    def csv_rows(self):
        n = self.states.shape[1]
        m = self.inputs.shape[1] if self.inputs.ndim == 2 and self.inputs.size else 0
        header = ["step"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
        rows = [header]
        for k, x in enumerate(self.states):
            u = [repr(float(v)) for v in self.inputs[k]] if k < self.steps else [""] * m
            rows.append([str(k)] + [repr(float(v)) for v in x] + u)
        return rows

    def to_csv(self, path, extra: dict | None = None):
        """Write ``step,x1..xn,u1..um`` rows; ``extra`` adds constant columns."""
        rows = self.csv_rows()
        if extra:
            rows[0] += list(extra)
            for r in rows[1:]:
                r += [repr(float(v)) for v in extra.values()]
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)


def _check_vec(x, size, what):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (size,):
        raise InputError(f"{what} must have shape ({size},), got {x.shape}")
    return x


def step(model: DynamicsModel, x, u) -> np.ndarray:
    """One step ``f(x) + g(x) u``."""
    x = _check_vec(x, model.n, "state")
    u = _check_vec(u, model.m, "input")
    fx = np.asarray(model.f_eval(x), dtype=float).reshape(model.n)
    gx = np.asarray(model.g_eval(x), dtype=float).reshape(model.n, model.m)
    return fx + gx @ u


def simulate(model: DynamicsModel, controller, x0, steps: int) -> Trajectory:
    """Closed-loop rollout of ``steps`` steps from ``x0``."""
    if int(steps) != steps or steps < 1:
        raise InputError("steps must be a positive integer")
    x = _check_vec(x0, model.n, "initial state")
    states, inputs = [x], []
    for _ in range(int(steps)):
        u = _check_vec(controller(x), model.m, "controller output")
        x = step(model, x, u)
        states.append(x)
        inputs.append(u)
    return Trajectory(np.array(states), np.array(inputs))


def simulate_batch(model: DynamicsModel, controller_batch, X0, steps: int) -> np.ndarray:
    """Roll out many initial states at once; returns ``(steps + 1, P, n)``.

    ``controller_batch`` maps ``(P, n)`` states to ``(P, m)`` inputs.
    """
    X = np.asarray(X0, dtype=float)
    out = [X]
    for _ in range(int(steps)):
        U = np.asarray(controller_batch(X), dtype=float).reshape(X.shape[0], model.m)
        X = model.f_batch(X) + np.einsum("pij,pj->pi", model.g_batch(X), U)
        out.append(X)
    return np.array(out)


# -- built-in models -----------------------------------------------------------


def car_lipschitz_f(V: float, ts: float) -> float:
    """Exact Lipschitz constant of the car drift term.

    The Jacobian is ``I + a u e3^T`` with ``a = V ts`` and ``u`` a unit
    vector orthogonal to ``e3``; its spectral norm is the largest singular
    value of ``[[1, a], [0, 1]]``, independent of the state.
    """
    a = V * ts
    return 0.5 * (a + math.sqrt(a * a + 4.0))


def car_model(V: float = 0.3, ts: float = 0.01, L_f: float | None = None, L_g: float | None = None) -> DynamicsModel:
    """Kinematic car with state (px, py, yaw) and yaw-rate input.

    ``L_f`` defaults to the exact constant of :func:`car_lipschitz_f` and
    ``L_g`` to zero (``g`` is constant); passing either marks the
    provenance as user-supplied.
    """
    if not (V > 0 and ts > 0):
        raise InputError("car model needs V > 0 and ts > 0")
    V, ts = float(V), float(ts)

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.stack(
            [x[..., 0] + V * np.cos(x[..., 2]) * ts, x[..., 1] + V * np.sin(x[..., 2]) * ts, x[..., 2]],
            axis=-1,
        )

    g_col = np.array([[0.0], [0.0], [ts]])

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(g_col, x.shape[:-1] + (3, 1)).copy()

    provenance = "analytic" if L_f is None and L_g is None else "user"
    cfg = {"model": "car", "V": V, "ts": ts}
    if L_f is not None:
        cfg["Lf"] = float(L_f)
    if L_g is not None:
        cfg["Lg"] = float(L_g)
    return DynamicsModel(
        3, 1, f, g,
        L_f=car_lipschitz_f(V, ts) if L_f is None else float(L_f),
        L_g=0.0 if L_g is None else float(L_g),
        provenance=provenance, vectorized=True, name="car", config=cfg,
    )


def linear_model(A, c=None, G=None, L_f: float | None = None, L_g: float | None = None) -> DynamicsModel:
    """``f(x) = A x + c`` with constant input matrix ``G``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise InputError("A must be square")
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float).reshape(-1)
    G = np.eye(n) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    if c.shape != (n,) or G.shape[0] != n:
        raise InputError("c and G must have n rows")
    m = G.shape[1]

    def f(x):
        return np.asarray(x, dtype=float) @ A.T + c

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(G, x.shape[:-1] + (n, m)).copy()

    provenance = "analytic" if L_f is None and L_g is None else "user"
    cfg = {"model": "linear", "A": A.tolist(), "c": c.tolist(), "G": G.tolist()}
    return DynamicsModel(
        n, m, f, g,
        L_f=float(np.linalg.norm(A, 2)) if L_f is None else float(L_f),
        L_g=0.0 if L_g is None else float(L_g),
        provenance=provenance, vectorized=True, name="linear", config=cfg,
    )


def model_from_config(cfg: dict) -> DynamicsModel:
    """Build a registered model from its JSON description."""
    try:
        kind = cfg["model"]
        if kind == "car":
            return car_model(cfg.get("V", 0.3), cfg.get("ts", 0.01), cfg.get("Lf"), cfg.get("Lg"))
        if kind == "linear":
            return linear_model(cfg["A"], cfg.get("c"), cfg.get("G"), cfg.get("Lf"), cfg.get("Lg"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed dynamics config: {exc}") from exc
    raise InputError(f"unknown model {cfg.get('model')!r}; expected 'car' or 'linear'")


# -- sampled bounds --------------------------------------------------------------


@dataclass(frozen=True)
class Sups:
    sup_f_minus_x: float
    sup_g_norm: float
    sup_x_norm: float
    ext: float

    def to_dict(self):
        return dict(self.__dict__)


def _sample_points(box: Box, samples: int) -> np.ndarray:
    return np.vstack([box.grid(samples), box.corners()])


def sampled_sups(model: DynamicsModel, box: Box, samples: int, workspace: Box | None = None) -> Sups:
    """Grid estimates of ``sup ||f(x) - x||`` and ``sup ||g(x)||`` over ``box``.

    ``sup ||x||`` over ``box`` and ``ext`` (the same quantity over
    ``workspace``, defaulting to ``box``) are exact, from the corners.
    ``||g(x)||`` is the spectral norm.
    """
    if int(samples) != samples or samples < 1:
        raise InputError("samples must be a positive integer")
    if box.n != model.n:
        raise InputError("box dimension does not match the model")
    X = _sample_points(box, int(samples))
    F = model.f_batch(X)
    Gm = model.g_batch(X)
    sup_f = float(np.max(np.linalg.norm(F - X, axis=1)))
    if model.m == 1:
        sup_g = float(np.max(np.linalg.norm(Gm[:, :, 0], axis=1)))
    else:
        sup_g = float(np.max(np.linalg.norm(Gm, ord=2, axis=(1, 2))))
    ws = box if workspace is None else workspace
    return Sups(sup_f, sup_g, box.max_norm(), ws.max_norm())


@dataclass(frozen=True)
class LipschitzEstimate:
    L_f: float
    L_g: float
    provenance: str = "sampled"


def _max_quotient(X, Y, chunk=2048):
    """Max of ``||Y_i - Y_j|| / ||X_i - X_j||`` over distinct pairs."""
    P = X.shape[0]
    Y = Y.reshape(P, -1)
    best = 0.0
    for s in range(0, P, chunk):
        dx = np.linalg.norm(X[s : s + chunk, None, :] - X[None, :, :], axis=2)
        dy = np.linalg.norm(Y[s : s + chunk, None, :] - Y[None, :, :], axis=2)
        mask = dx > 0
        if np.any(mask):
            best = max(best, float(np.max(dy[mask] / dx[mask])))
    return best


def sampled_lipschitz(model: DynamicsModel, box: Box, samples: int) -> LipschitzEstimate:
    """Largest grid difference quotient of ``f`` and ``g``, inflated by 5%.

    Sampling under-estimates the true constant, hence the inflation.
    ``g`` quotients use the Frobenius norm of the difference, which bounds
    the spectral norm from above.
    """
    if int(samples) != samples or samples < 2:
        raise InputError("samples must be an integer >= 2")
    if not box.has_interior:
        raise InputError("Lipschitz sampling needs a box with non-empty interior")
    X = box.grid(int(samples))
    Lf = _max_quotient(X, model.f_batch(X))
    Lg = _max_quotient(X, model.g_batch(X))
    return LipschitzEstimate(LIPSCHITZ_INFLATION * Lf, LIPSCHITZ_INFLATION * Lg)
