"""Safety geometry and reach-set bounds.

The excursion of a closed-loop trajectory started in ``X_safe`` is bounded
through two affine functions of a controller's weight norm ``w`` and bias
magnitude ``b``:

* ``beta(w, b)``, the largest one-step displacement,
* ``L(w, b)``, a Lipschitz constant of the closed-loop map,

so that ``||x_T - x_0|| <= beta * sum_{k=0..T} L**k``.  Evaluated at the
largest row norms of a TLL network, these give the budget ``beta_max`` and
the growth cap ``L_max`` that any repaired row has to respect.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Box, DynamicsModel, Sups, sampled_lipschitz, sampled_sups, simulate_batch
from .errors import BudgetError, InputError
from .tll import TllNetwork, eval_lattice_batch

__all__ = [
    "Polytope",
    "BoundFn",
    "SafetySpec",
    "OmegaNorms",
    "Distance",
    "BoundCertificate",
    "BoundContext",
    "is_unsafe",
    "make_beta_fn",
    "make_L_fn",
    "omega_norms",
    "safe_distance",
    "solve_Lmax",
    "reach_bound",
    "check_original_bounds",
    "prepare_bounds",
    "find_counterexample",
]


@dataclass(frozen=True, eq=False)
class Polytope:
    """Closed polyhedron ``{x : G x >= h}``."""

    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.array(self.G, dtype=float))
        h = np.array(self.h, dtype=float).reshape(-1)
        if G.shape[0] != h.size or G.shape[0] == 0:
            raise InputError(f"G has {G.shape[0]} rows but h has {h.size} entries")
        G.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.G.shape[1]

    @property
    def rows(self) -> int:
        return self.G.shape[0]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise InputError(f"expected a point of dimension {self.n}")
        return bool(np.all(self.G @ x >= self.h))

    def contains_batch(self, X) -> np.ndarray:
        return np.all(np.asarray(X, dtype=float) @ self.G.T >= self.h, axis=-1)

    def to_dict(self):
        return {"G": self.G.tolist(), "h": self.h.tolist()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["G"], d["h"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed polytope: {exc}") from exc


def is_unsafe(P: Polytope, x) -> bool:
    """Membership in the unsafe set (every row of ``G x >= h`` holds)."""
    return P.contains(x)


@dataclass(frozen=True)
class BoundFn:
    """Affine form ``c0 + c_w * w + c_b * b`` with nonnegative coefficients."""

    c0: float
    c_w: float
    c_b: float

    def __post_init__(self):
        for k in ("c0", "c_w", "c_b"):
            v = getattr(self, k)
            if not (v >= 0 and math.isfinite(v)):
                raise InputError(f"BoundFn coefficient {k} must be finite and nonnegative, got {v}")

    def __call__(self, w: float, b: float) -> float:
        return self.c0 + self.c_w * w + self.c_b * b

    value = __call__

    def to_dict(self):
        return {"c0": self.c0, "c_w": self.c_w, "c_b": self.c_b}


@dataclass(frozen=True)
class SafetySpec:
    X_ws: Box
    X_safe: Box
    X_unsafe: Polytope
    T: int

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise InputError("T must be a positive integer")
        if not (self.X_ws.n == self.X_safe.n == self.X_unsafe.n):
            raise InputError("workspace, safe set and unsafe set disagree on dimension")
        if not self.X_ws.has_interior:
            raise InputError("workspace must have non-empty interior")
        if not self.X_safe.subset_of(self.X_ws):
            raise InputError("X_safe must lie inside X_ws")

    @property
    def n(self) -> int:
        return self.X_ws.n

    def to_dict(self):
        return {
            "X_ws": self.X_ws.to_dict(),
            "X_safe": self.X_safe.to_dict(),
            "X_unsafe": self.X_unsafe.to_dict(),
            "T": int(self.T),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(Box.from_dict(d["X_ws"]), Box.from_dict(d["X_safe"]), Polytope.from_dict(d["X_unsafe"]), d["T"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed safety spec: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read safety spec {path}: {exc}") from exc


def make_beta_fn(model: DynamicsModel, spec: SafetySpec, sups: Sups) -> BoundFn:
    """One-step displacement bound.  ``sups`` is taken over ``X_safe``, ``ext`` over ``X_ws``."""
    return BoundFn(sups.sup_f_minus_x, sups.sup_g_norm * sups.ext, sups.sup_g_norm)


def make_L_fn(model: DynamicsModel, spec: SafetySpec, sups: Sups) -> BoundFn:
    """Closed-loop Lipschitz bound for an affine controller ``w x + b``."""
    if not model.lipschitz_known:
        raise InputError("model has no Lipschitz constants; estimate them with sampled_lipschitz first")
    return BoundFn(model.L_f, model.L_g * sups.sup_x_norm + sups.sup_g_norm, model.L_g)


@dataclass(frozen=True)
class OmegaNorms:
    Omega_W: float
    Omega_b: float


def omega_norms(net: TllNetwork) -> OmegaNorms:
    """Largest Euclidean row norm of the linear layers and largest bias magnitude."""
    W = max(float(np.max(np.linalg.norm(o.W, axis=1))) for o in net.outputs)
    b = max(float(np.max(np.abs(o.b))) for o in net.outputs)
    return OmegaNorms(W, b)


@dataclass(frozen=True)
class Distance:
    """Distance between the safe box and the unsafe polytope.

    ``value`` is a certified lower bound, ``upper`` the length of an
    explicit (near-)feasible pair of points; ``gap = upper - value``.
    ``intersects`` flags overlapping sets, in which case ``value`` is 0.
    """

    value: float
    upper: float
    exact: bool
    intersects: bool

    @property
    def gap(self) -> float:
        return self.upper - self.value

    def __float__(self):
        return float(self.value)


def _box_to_halfspace(box: Box, a, h):
    """Distance from ``box`` to ``{a x >= h}``; ``None`` if ``a`` is zero."""
    na = float(np.linalg.norm(a))
    if na == 0.0:
        return None
    top = float(np.sum(np.where(a > 0, a * box.upper, a * box.lower)))
    return max(0.0, float((h - top) / na))


def safe_distance(X_safe: Box, X_unsafe: Polytope, tol: float = 1e-9) -> Distance:
    """``inf ||x_s - x_u||`` over the safe box and the unsafe polytope.

    A single halfspace has a closed form (the support function of the box).
    With several rows, any nonnegative combination of the rows defines a
    halfspace containing the polytope, so its distance to the box is a
    certified lower bound.  A cone program supplies both a near-optimal
    combination (its multipliers) and an explicit pair of points, whose
    distance is the upper bound.
    """
    if X_safe.n != X_unsafe.n:
        raise InputError("safe and unsafe sets disagree on dimension")
    G, h = X_unsafe.G, X_unsafe.h
    # rows with zero normal are either vacuous (h <= 0) or empty the set
    live = []
    for a, hi in zip(G, h):
        if not np.any(a):
            if hi > 0:
                return Distance(math.inf, math.inf, True, False)
            continue
        live.append((a, hi))
    if not live:
        return Distance(0.0, 0.0, True, True)
    lower = max(_box_to_halfspace(X_safe, a, hi) for a, hi in live)
    if len(live) == 1:
        return Distance(lower, lower, True, bool(lower == 0.0))

    from .socp import ConvexProgram

    prog = ConvexProgram()
    xs = prog.add_variable("xs", X_safe.n)
    xu = prog.add_variable("xu", X_safe.n)
    prog.add_ineq(X_safe.lower - xs)
    prog.add_ineq(xs - X_safe.upper)
    Ga = np.array([a for a, _ in live])
    ha = np.array([hi for _, hi in live])
    prog.add_ineq(ha - Ga @ xu)
    prog.add_norm_objective(xs - xu)
    sol = prog.solve(tol=tol)
    if sol.status == "infeasible":
        return Distance(math.inf, math.inf, True, False)
    upper = float(np.linalg.norm(sol.values["xs"] - sol.values["xu"])) if sol.values else math.inf
    if sol.ineq_duals:
        # any lam >= 0 aggregates the rows into one halfspace containing the
        # polytope, so its distance is again a valid lower bound
        lam = np.maximum(sol.ineq_duals[2], 0.0)
        agg = _box_to_halfspace(X_safe, lam @ Ga, float(lam @ ha))
        if agg is not None:
            lower = max(lower, agg)
    upper = max(upper, lower)
    intersects = upper <= 10 * tol
    if intersects:
        lower = 0.0
    return Distance(float(lower), float(upper), bool(upper - lower <= 10 * tol), bool(intersects))


def _geom_sum(L: float, T: int) -> float:
    s, p = 0.0, 1.0
    for _ in range(T + 1):
        s += p
        p *= L
    return s


def solve_Lmax(beta_max: float, d: float, T: int, tol: float = 1e-9) -> float:
    """Growth cap ``L`` solving ``beta_max * sum_{k=0..T} L**k = d``.

    The left side increases strictly in ``L >= 0`` and equals ``beta_max``
    at ``L = 0``, so a root exists exactly when ``d > beta_max``.  Found by
    bisection on ``[0, max(1, (d / beta_max)**(1/T)) + 1]``.

    Raises
    ------
    BudgetError
        If ``d <= beta_max``.
    """
    if not (beta_max > 0 and d > 0) or int(T) != T or T < 1:
        raise InputError("solve_Lmax needs beta_max > 0, d > 0 and an integer T >= 1")
    if d <= beta_max:
        raise BudgetError(f"safe distance {d:.6g} does not exceed beta_max {beta_max:.6g}")
    T = int(T)
    target = d / beta_max
    lo, hi = 0.0, max(1.0, target ** (1.0 / T)) + 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _geom_sum(mid, T) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def reach_bound(beta_max: float, L_max: float, T: int) -> float:
    """``beta_max * sum_{k=0..T} L_max**k``."""
    if int(T) != T or T < 0:
        raise InputError("T must be a nonnegative integer")
    return beta_max * _geom_sum(L_max, int(T))


def check_original_bounds(net: TllNetwork, betaF: BoundFn, LF: BoundFn, beta_max: float, L_max: float) -> bool:
    """Whether the network's worst-case row norms fit both budgets."""
    om = omega_norms(net)
    return betaF(om.Omega_W, om.Omega_b) <= beta_max and LF(om.Omega_W, om.Omega_b) <= L_max


@dataclass(frozen=True)
class BoundCertificate:
    beta_max: float
    L_max: float
    d_safe: float
    reach_radius: float
    original_net_ok: bool

    @property
    def valid(self) -> bool:
        return self.original_net_ok and self.reach_radius <= self.d_safe * (1 + 1e-12)

    def to_dict(self):
        return {
            "beta_max": self.beta_max,
            "L_max": self.L_max,
            "d_safe": self.d_safe,
            "reach_radius": self.reach_radius,
            "original_net_ok": self.original_net_ok,
        }


@dataclass(frozen=True)
class BoundContext:
    """Everything the repair pipeline needs from the bound computations."""

    model: DynamicsModel
    sups: Sups
    betaF: BoundFn
    LF: BoundFn
    omega: OmegaNorms
    distance: Distance
    certificate: BoundCertificate
    extra: dict = field(default_factory=dict)

    @property
    def beta_max(self):
        return self.certificate.beta_max

    @property
    def L_max(self):
        return self.certificate.L_max

    def to_dict(self):
        return {
            "sups": self.sups.to_dict(),
            "beta": self.betaF.to_dict(),
            "L": self.LF.to_dict(),
            "L_f": self.model.L_f,
            "L_g": self.model.L_g,
            "lipschitz_provenance": self.model.provenance,
            "Omega_W": self.omega.Omega_W,
            "Omega_b": self.omega.Omega_b,
            "beta_at_omega": self.betaF(self.omega.Omega_W, self.omega.Omega_b),
            "L_at_omega": self.LF(self.omega.Omega_W, self.omega.Omega_b),
            "distance": {
                "value": self.distance.value,
                "upper": self.distance.upper,
                "exact": self.distance.exact,
                "intersects": self.distance.intersects,
            },
            "certificate": self.certificate.to_dict(),
        }


def prepare_bounds(model: DynamicsModel, net: TllNetwork, spec: SafetySpec, samples: int = 21,
                   lipschitz_samples: int = 12) -> BoundContext:
    """Sups, bound functions, budgets and the original-network check.

    Unknown Lipschitz constants are estimated on ``X_ws`` first.

    Raises
    ------
    BudgetError
        If the safe distance does not exceed ``beta_max``.
    """
    if model.n != spec.n or net.n != spec.n or net.m != model.m:
        raise InputError("model, network and safety spec disagree on dimensions")
    if not model.lipschitz_known:
        est = sampled_lipschitz(model, spec.X_ws, lipschitz_samples)
        model = model.with_lipschitz(est.L_f, est.L_g, "sampled")
    sups = sampled_sups(model, spec.X_safe, samples, workspace=spec.X_ws)
    betaF = make_beta_fn(model, spec, sups)
    LF = make_L_fn(model, spec, sups)
    om = omega_norms(net)
    beta_max = betaF(om.Omega_W, om.Omega_b)
    dist = safe_distance(spec.X_safe, spec.X_unsafe)
    if dist.intersects:
        raise BudgetError("X_safe intersects X_unsafe")
    L_max = solve_Lmax(beta_max, dist.value, spec.T)
    cert = BoundCertificate(
        beta_max,
        L_max,
        dist.value,
        reach_bound(beta_max, L_max, spec.T),
        check_original_bounds(net, betaF, LF, beta_max, L_max),
    )
    return BoundContext(model, sups, betaF, LF, om, dist, cert)


def find_counterexample(model: DynamicsModel, net: TllNetwork, spec: SafetySpec, ce_horizon: int = 2,
                        grid: int = 11, region: Box | None = None):
    """First grid state whose closed-loop trajectory enters ``X_unsafe``.

    Candidates are the points of a ``grid``-per-axis tensor grid over
    ``region`` (default ``X_ws``) in lexicographic order, restricted to
    ``X_ws`` minus ``X_safe`` minus ``X_unsafe``.  A candidate is a
    counterexample if one of its next ``ce_horizon`` states is unsafe.
    Returns ``None`` when no grid point qualifies.
    """
    if int(ce_horizon) != ce_horizon or ce_horizon < 1:
        raise InputError("ce_horizon must be a positive integer")
    region = spec.X_ws if region is None else region
    if region.n != spec.n:
        raise InputError("search region has the wrong dimension")
    X = region.grid(int(grid))
    keep = spec.X_ws.contains_batch(X) & ~spec.X_safe.contains_batch(X) & ~spec.X_unsafe.contains_batch(X)
    X = X[keep]
    if X.shape[0] == 0:
        return None
    traj = simulate_batch(model, lambda Z: eval_lattice_batch(net, Z), X, int(ce_horizon))
    hit = np.zeros(X.shape[0], dtype=bool)
    for k in range(1, traj.shape[0]):
        hit |= spec.X_unsafe.contains_batch(traj[k])
    idx = np.flatnonzero(hit)
    return X[idx[0]].copy() if idx.size else None
