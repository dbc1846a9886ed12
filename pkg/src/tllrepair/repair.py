"""Counterexample repair for TLL controllers.

Repair runs in two convex stages.

``Local``
    Change the affine controller that is active at the counterexample as
    little as possible, so that the closed loop leaves the unsafe set
    there, while keeping its norms inside the ``beta_max`` / ``L_max``
    budgets that protect the verified safe set.
``Global``
    Change the rest of the linear layer as little as possible, so that the
    repaired row really is the network output at the counterexample: it
    must stay a minimum of its own selector group, and every other group
    must contain a row no larger than it.

The unsafe set ``{G x >= h}`` is a conjunction, so its complement is a
union of halfspaces; ``Local`` is solved once per row and the cheapest
feasible escape is kept.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bounds import (
    BoundCertificate,
    BoundContext,
    BoundFn,
    SafetySpec,
    omega_norms,
    prepare_bounds,
    reach_bound,
)
from .dynamics import DynamicsModel, simulate, simulate_batch
from .errors import BudgetError, InputError
from .socp import ConvexProgram, vstack
from .tll import (
    ActivationPattern,
    TllNetwork,
    active_indices,
    check_activation,
    eval_lattice,
    eval_lattice_batch,
    linear_values,
)

__all__ = [
    "RepairConfig",
    "LocalRepair",
    "GlobalRepair",
    "RepairResult",
    "build_local_program",
    "solve_local",
    "choose_iota",
    "build_global_program",
    "solve_global",
    "repair_tll",
    "validate_repair",
]


@dataclass(frozen=True)
class RepairConfig:
    """Tuning knobs of the repair pipeline.

    Parameters
    ----------
    margin_eps : float
        Required clearance from the unsafe set's boundary.
    ce_horizon : int
        Steps within which a counterexample reaches the unsafe set.
    enforce_global_safety_caps : bool
        Also impose the ``beta``/``L`` budgets on rows altered by ``Global``.
    solver_tol : float
        Cone-solver tolerance.
    repair_horizon : int
        Number of closed-loop steps from the counterexample that ``Local``
        constrains.  With 1 the constraint is the exact one-step, linear
        condition.  Larger values roll the repaired affine controller
        forward and are handled by sequential linearization.
    activation_margin : float
        Strict-inequality slack used by ``Global`` so that the activation
        check holds exactly after rounding.
    """

    margin_eps: float = 1e-3
    ce_horizon: int = 2
    enforce_global_safety_caps: bool = True
    solver_tol: float = 1e-8
    repair_horizon: int = 1
    activation_margin: float = 1e-6
    samples: int = 21
    lipschitz_samples: int = 12
    max_iter: int = 100
    scp_max_iter: int = 30
    validation_grid: int = 6
    validation_steps: int = 50

    def __post_init__(self):
        if not self.margin_eps > 0:
            raise InputError("margin_eps must be positive")
        if not self.solver_tol > 0:
            raise InputError("solver_tol must be positive")
        if self.activation_margin < 0:
            raise InputError("activation_margin must be nonnegative")
        for k in ("ce_horizon", "repair_horizon", "samples", "lipschitz_samples", "max_iter",
                  "scp_max_iter", "validation_grid", "validation_steps"):
            v = getattr(self, k)
            if int(v) != v or v < 1:
                raise InputError(f"{k} must be a positive integer")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class LocalRepair:
    """Outcome of the ``Local`` stage.

    ``w`` is ``(m, n)`` and ``b`` is ``(m,)``: the repaired active row of
    each output.  ``halfspace_index`` is the zero-based unsafe-set row the
    repair escapes through.  ``rows`` holds per-row diagnostics.
    """

    feasible: bool
    w: np.ndarray | None
    b: np.ndarray | None
    halfspace_index: int | None
    objective: float
    rows: list = field(default_factory=list)
    unchanged: bool = False

    def to_dict(self):
        return {
            "feasible": self.feasible,
            "w": None if self.w is None else self.w.tolist(),
            "b": None if self.b is None else self.b.tolist(),
            "halfspace_index": None if self.halfspace_index is None else self.halfspace_index + 1,
            "objective": self.objective,
            "unchanged": self.unchanged,
            "rows": self.rows,
        }


@dataclass
class GlobalRepair:
    feasible: bool
    network: TllNetwork | None
    objective: float
    status: str
    iterations: int = 0


@dataclass
class RepairResult:
    status: str  # repaired | budget_infeasible | local_infeasible | global_infeasible
    original: TllNetwork
    repaired: TllNetwork | None = None
    pattern: ActivationPattern | None = None
    local: LocalRepair | None = None
    iota: tuple | None = None
    global_objective: float | None = None
    certificates: BoundCertificate | None = None
    bounds: BoundContext | None = None
    stage: str | None = None
    message: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "repaired"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "stage": self.stage,
            "message": self.message,
            "pattern": None if self.pattern is None else self.pattern.to_dict(),
            "chosen_halfspace": None if self.local is None or self.local.halfspace_index is None
            else self.local.halfspace_index + 1,
            "local": None if self.local is None else self.local.to_dict(),
            "local_objective": None if self.local is None else self.local.objective,
            "global_objective": self.global_objective,
            "iota": None if self.iota is None else [
                {str(j + 1): i + 1 for j, i in d.items()} for d in self.iota
            ],
            "certificates": None if self.certificates is None else self.certificates.to_dict(),
            "bounds": None if self.bounds is None else self.bounds.to_dict(),
            "diagnostics": self.diagnostics,
        }


# -- Local ---------------------------------------------------------------------


def _check_pattern(net: TllNetwork, pattern: ActivationPattern):
    if len(pattern.act) != net.m or len(pattern.sel) != net.m:
        raise InputError("activation pattern does not match the network outputs")
    for o, a, s in zip(net.outputs, pattern.act, pattern.sel):
        if not (0 <= a < o.N and 0 <= s < o.M) or a not in o.selectors[s]:
            raise InputError("activation pattern is inconsistent with the network")


def _act_rows(net: TllNetwork, pattern: ActivationPattern):
    W = np.array([o.W[a] for o, a in zip(net.outputs, pattern.act)])
    b = np.array([o.b[a] for o, a in zip(net.outputs, pattern.act)])
    return W, b


def _rollout(model: DynamicsModel, x_ce, W, b, steps):
    """States 1..steps under the affine controller ``u(x) = W x + b``."""
    xs = []
    x = np.asarray(x_ce, dtype=float)
    for _ in range(steps):
        u = W @ x + b
        x = model.f_batch(x[None])[0] + model.g_batch(x[None])[0] @ u
        xs.append(x)
    return np.array(xs)


def _escape_values(model, spec, x_ce, W, b, row, margin, steps):
    """``G_row x_k - h_row + margin`` for k = 1..steps (feasible when all <= 0)."""
    xs = _rollout(model, x_ce, W, b, steps)
    return xs @ spec.X_unsafe.G[row] - spec.X_unsafe.h[row] + margin


def _theta(W, b):
    return np.concatenate([np.concatenate([w, [bb]]) for w, bb in zip(W, b)])


def _unpack(theta, m, n):
    T = theta.reshape(m, n + 1)
    return T[:, :n].copy(), T[:, n].copy()


def _add_caps(prog, w, bvar, betaF, LF, beta_max, L_max, tag):
    """Exact encoding of beta(|w|, |b|) <= beta_max and L(|w|, |b|) <= L_max."""
    tw = prog.add_variable(f"tw_{tag}", 1)
    tb = prog.add_variable(f"tb_{tag}", 1)
    prog.add_cone(w, tw)
    prog.add_cone(bvar, tb)
    prog.add_ineq(betaF.c0 + betaF.c_w * tw + betaF.c_b * tb - beta_max)
    prog.add_ineq(LF.c0 + LF.c_w * tw + LF.c_b * tb - L_max)


def build_local_program(model: DynamicsModel, net: TllNetwork, spec: SafetySpec, x_ce, pattern: ActivationPattern,
                        betaF: BoundFn, LF: BoundFn, beta_max: float, L_max: float, halfspace_index: int,
                        margin_eps: float, repair_horizon: int = 1, linearize_at=None,
                        fd_step: float = 1e-6) -> ConvexProgram:
    """Cone program for the ``Local`` stage escaping through one unsafe row.

    Variables ``w{k}`` (n-vector) and ``b{k}`` (scalar) are the repaired
    active row of output ``k``.  The objective sums ``||w{k} - w_act||``
    and ``|b{k} - b_act|``.  With ``repair_horizon == 1`` the escape
    condition ``G_i (f(x) + g(x) (W x + b)) <= h_i - margin_eps`` is
    linear and exact.  For longer horizons the rolled-out condition is
    linearized at ``linearize_at`` (a pair ``(W, b)``, default the original
    rows) by central differences.
    """
    x_ce = np.asarray(x_ce, dtype=float)
    if x_ce.shape != (net.n,) or model.n != net.n or model.m != net.m:
        raise InputError("x_ce, model and network dimensions disagree")
    _check_pattern(net, pattern)
    i = int(halfspace_index)
    if not 0 <= i < spec.X_unsafe.rows:
        raise InputError("halfspace_index out of range")
    if not margin_eps > 0:
        raise InputError("margin_eps must be positive")

    W0, b0 = _act_rows(net, pattern)
    m, n = net.m, net.n
    prog = ConvexProgram()
    ws, bs = [], []
    for k in range(m):
        ws.append(prog.add_variable(f"w{k}", n))
        bs.append(prog.add_variable(f"b{k}", 1))
    for k in range(m):
        prog.add_norm_objective(ws[k] - W0[k])
        prog.add_norm_objective(bs[k] - b0[k])
        _add_caps(prog, ws[k], bs[k], betaF, LF, beta_max, L_max, str(k))

    Gi, hi = spec.X_unsafe.G[i], spec.X_unsafe.h[i]
    if repair_horizon == 1:
        fx = model.f_batch(x_ce[None])[0]
        gx = model.g_batch(x_ce[None])[0]
        coeff = Gi @ gx  # (m,)
        expr = float(Gi @ fx - hi + margin_eps)
        for k in range(m):
            expr = expr + float(coeff[k]) * (x_ce @ ws[k] + bs[k])
        prog.add_ineq(expr)
        return prog

    Wl, bl = (W0, b0) if linearize_at is None else linearize_at
    th0 = _theta(np.asarray(Wl, float), np.asarray(bl, float))
    c0 = _escape_values(model, spec, x_ce, Wl, bl, i, margin_eps, repair_horizon)
    J = np.empty((repair_horizon, th0.size))
    for j in range(th0.size):
        e = np.zeros_like(th0)
        e[j] = fd_step
        cp = _escape_values(model, spec, x_ce, *_unpack(th0 + e, m, n), i, margin_eps, repair_horizon)
        cm = _escape_values(model, spec, x_ce, *_unpack(th0 - e, m, n), i, margin_eps, repair_horizon)
        J[:, j] = (cp - cm) / (2 * fd_step)
    theta = vstack([e for k in range(m) for e in (ws[k], bs[k])])
    for s in range(repair_horizon):
        if not np.any(np.abs(J[s]) > 1e-13) and c0[s] <= 0:
            continue  # this step is out of the controller's reach and already clear
        prog.add_ineq(J[s] @ (theta - th0) + float(c0[s]))
    return prog


def _solution_rows(sol, m):
    W = np.array([sol.values[f"w{k}"] for k in range(m)])
    b = np.array([sol.values[f"b{k}"][0] for k in range(m)])
    return W, b


def _local_objective(W, b, W0, b0):
    return float(sum(np.linalg.norm(W[k] - W0[k]) + abs(b[k] - b0[k]) for k in range(len(b))))


def _caps_ok(W, b, betaF, LF, beta_max, L_max, tol):
    for w, bb in zip(W, b):
        nw, nb = float(np.linalg.norm(w)), abs(float(bb))
        if betaF(nw, nb) > beta_max + tol or LF(nw, nb) > L_max + tol:
            return False
    return True


def _solve_local_row(model, net, spec, x_ce, pattern, betaF, LF, beta_max, L_max, row, config):
    W0, b0 = _act_rows(net, pattern)
    m, H, tol = net.m, config.repair_horizon, config.solver_tol
    diag = {"halfspace_index": row + 1}
    if H == 1:
        prog = build_local_program(model, net, spec, x_ce, pattern, betaF, LF, beta_max, L_max, row,
                                   config.margin_eps)
        sol = prog.solve(tol=tol, max_iter=config.max_iter)
        diag.update(status=sol.status, iterations=sol.iterations)
        if not sol.optimal:
            return None, diag
        W, b = _solution_rows(sol, m)
        diag["objective"] = _local_objective(W, b, W0, b0)
        diag["escape"] = float(np.max(_escape_values(model, spec, x_ce, W, b, row, config.margin_eps, 1)))
        return (W, b), diag

    # Sequential linearization: re-linearize at the last solution until it
    # stops moving, then confirm on the true rollout.  If the converged
    # point misses the margin, tighten the linearized margin and repeat.
    extra, total_iters = 0.0, 0
    for _ in range(5):
        Wc, bc = W0, b0
        status, prev_obj = "max_iter", math.inf
        for _it in range(config.scp_max_iter):
            prog = build_local_program(model, net, spec, x_ce, pattern, betaF, LF, beta_max, L_max, row,
                                       config.margin_eps + extra, H, linearize_at=(Wc, bc))
            sol = prog.solve(tol=tol, max_iter=config.max_iter)
            total_iters += 1
            if not sol.optimal:
                status = sol.status
                break
            Wc, bc = _solution_rows(sol, m)
            obj = _local_objective(Wc, bc, W0, b0)
            viol = float(np.max(_escape_values(model, spec, x_ce, Wc, bc, row, config.margin_eps + extra, H)))
            if abs(obj - prev_obj) <= tol * (1 + obj) and viol <= tol:
                status = "optimal"
                break
            prev_obj = obj
        diag.update(status=status, scp_iterations=total_iters)
        if status != "optimal":
            return None, diag
        viol = float(np.max(_escape_values(model, spec, x_ce, Wc, bc, row, config.margin_eps, H)))
        diag["escape"] = viol
        if viol <= tol:
            diag["objective"] = _local_objective(Wc, bc, W0, b0)
            return (Wc, bc), diag
        extra += viol + tol
    diag["status"] = "margin_not_met"
    return None, diag


def solve_local(model: DynamicsModel, net: TllNetwork, spec: SafetySpec, x_ce, pattern: ActivationPattern,
                betaF: BoundFn, LF: BoundFn, beta_max: float, L_max: float,
                config: RepairConfig | None = None) -> LocalRepair:
    """Run ``Local`` for every unsafe-set row and keep the cheapest feasible repair.

    If the original active rows already clear the margin over the whole
    repair horizon (and fit the budgets), they are returned unchanged
    with objective 0.
    """
    config = config or RepairConfig()
    x_ce = np.asarray(x_ce, dtype=float)
    _check_pattern(net, pattern)
    W0, b0 = _act_rows(net, pattern)
    H = config.repair_horizon
    if _caps_ok(W0, b0, betaF, LF, beta_max, L_max, 0.0):
        for row in range(spec.X_unsafe.rows):
            if np.all(_escape_values(model, spec, x_ce, W0, b0, row, config.margin_eps, H) <= 0):
                return LocalRepair(True, W0.copy(), b0.copy(), row, 0.0,
                                   [{"halfspace_index": row + 1, "status": "already_safe", "objective": 0.0}],
                                   unchanged=True)

    rows = range(spec.X_unsafe.rows)
    work = lambda r: _solve_local_row(model, net, spec, x_ce, pattern, betaF, LF, beta_max, L_max, r, config)
    if spec.X_unsafe.rows > 1:
        with ThreadPoolExecutor(max_workers=min(8, spec.X_unsafe.rows)) as pool:
            outcomes = list(pool.map(work, rows))
    else:
        outcomes = [work(0)]

    best, diags = None, []
    for row, (sol, diag) in zip(rows, outcomes):
        diags.append(diag)
        if sol is None:
            continue
        obj = diag["objective"]
        if best is None or obj < best[0]:
            best = (obj, row, sol)
    if best is None:
        return LocalRepair(False, None, None, None, math.inf, diags)
    obj, row, (W, b) = best
    return LocalRepair(True, W, b, row, obj, diags)


# -- Global --------------------------------------------------------------------


def choose_iota(net: TllNetwork, x_ce, pattern: ActivationPattern) -> tuple:
    """Per output, map each non-selected group to its smallest row at ``x_ce``.

    Ties go to the lowest row index.  Values come from the original network.
    """
    _check_pattern(net, pattern)
    X = np.asarray(x_ce, dtype=float)[None]
    out = []
    for o, s in zip(net.outputs, pattern.sel):
        v = linear_values(o.W, o.b, X)[0]
        out.append({j: g[int(np.argmin(v[list(g)]))] for j, g in enumerate(o.selectors) if j != s})
    return tuple(out)


def _active_value(local: LocalRepair, k: int, x_ce) -> float:
    return float(linear_values(local.w[k][None], local.b[k : k + 1], np.asarray(x_ce, float)[None])[0, 0])


def _global_constraints(net, pattern, iota, k, margin):
    """(row, sign, margin) triples: sign +1 means row >= act, -1 means row <= act."""
    o = net.outputs[k]
    a, s = pattern.act[k], pattern.sel[k]
    upper = {i for i in o.selectors[s] if i != a}
    lower = {i for i in iota[k].values() if i != a}
    both = upper & lower
    cons = [(i, +1, 0.0 if i in both else margin) for i in sorted(upper)]
    cons += [(i, -1, 0.0 if i in both else margin) for i in sorted(lower)]
    return cons


def build_global_program(net: TllNetwork, x_ce, pattern: ActivationPattern, local: LocalRepair, iota,
                         config: RepairConfig | None = None, bounds: BoundContext | None = None) -> ConvexProgram:
    """Cone program for the ``Global`` stage.

    Variables ``W{k}`` (row-major flattening of the ``N x n`` layer) and
    ``b{k}``.  The objective is the Frobenius change of each ``W`` plus the
    Euclidean change of each ``b``.  Active rows are pinned to the
    ``Local`` values; rows of the selected group must stay at or above the
    repaired row at ``x_ce`` and each other group's ``iota`` row at or
    below it.  With ``config.enforce_global_safety_caps`` and ``bounds``
    given, every other row also obeys the ``beta``/``L`` budgets.
    """
    config = config or RepairConfig()
    if not local.feasible:
        raise InputError("Global needs a feasible Local repair")
    _check_pattern(net, pattern)
    x_ce = np.asarray(x_ce, dtype=float)
    n, N = net.n, net.N
    prog = ConvexProgram()
    for k, o in enumerate(net.outputs):
        Wv = prog.add_variable(f"W{k}", N * n)
        bv = prog.add_variable(f"b{k}", N)
        prog.add_norm_objective(Wv - o.W.ravel())
        prog.add_norm_objective(bv - o.b)
        a = pattern.act[k]
        prog.add_eq(Wv[a * n : (a + 1) * n] - local.w[k])
        prog.add_eq(bv[a] - float(local.b[k]))
        va = _active_value(local, k, x_ce)

        def row_value(i):
            sel = np.zeros(N * n)
            sel[i * n : (i + 1) * n] = x_ce
            return sel @ Wv + bv[i]

        for i, sign, mg in _global_constraints(net, pattern, iota, k, config.activation_margin):
            if sign > 0:
                prog.add_ineq(va + mg - row_value(i))
            else:
                prog.add_ineq(row_value(i) - va + mg)

        if config.enforce_global_safety_caps and bounds is not None:
            for i in range(N):
                if i != a:
                    _add_caps(prog, Wv[i * n : (i + 1) * n], bv[i], bounds.betaF, bounds.LF,
                              bounds.beta_max, bounds.L_max, f"{k}_{i}")
    return prog


def _global_objective(net, Ws, bs):
    return float(sum(np.linalg.norm(o.W - W) + np.linalg.norm(o.b - b) for o, W, b in zip(net.outputs, Ws, bs)))


def _row_constraints(net, pattern, iota, config):
    """Per output, map row index to its (sign, margin) activation constraints."""
    out = []
    for k in range(net.m):
        d = {}
        for i, sign, mg in _global_constraints(net, pattern, iota, k, config.activation_margin):
            d.setdefault(i, []).append((sign, mg))
        out.append(d)
    return out


def _row_feasible(k, i, w, b, x_ce, pattern, va, cons, config, bounds, tol):
    """Whether row ``i`` of output ``k`` with values ``(w, b)`` meets its own constraints.

    Every Global constraint involves a single row, so feasibility can be
    checked row by row.
    """
    if i == pattern.act[k]:
        return True
    v = float(linear_values(np.asarray(w)[None], np.array([b]), np.asarray(x_ce, float)[None])[0, 0])
    for sign, mg in cons[k].get(i, ()):
        gap = (v - va - mg) if sign > 0 else (va - v - mg)
        if gap < -tol:
            return False
    if config.enforce_global_safety_caps and bounds is not None:
        return _caps_ok(np.asarray(w)[None], [b], bounds.betaF, bounds.LF, bounds.beta_max, bounds.L_max, tol)
    return True


def _global_feasible(net, x_ce, pattern, local, iota, config, Ws, bs, bounds, tol):
    """Check a candidate layer against every Global constraint."""
    cons = _row_constraints(net, pattern, iota, config)
    for k in range(net.m):
        va = _active_value(local, k, x_ce)
        for i in range(net.N):
            if not _row_feasible(k, i, Ws[k][i], bs[k][i], x_ce, pattern, va, cons, config, bounds, tol):
                return False
    return True


def solve_global(net: TllNetwork, x_ce, pattern: ActivationPattern, local: LocalRepair, iota,
                 config: RepairConfig | None = None, bounds: BoundContext | None = None) -> GlobalRepair:
    """Solve ``Global`` and assemble the repaired network.

    Active rows are copied bit-for-bit from the ``Local`` result.  Rows
    that can return to their original values without violating a
    constraint are restored.  Selector sets are never touched.
    """
    config = config or RepairConfig()
    n, N = net.n, net.N
    pinned_W, pinned_b = [], []
    for k, o in enumerate(net.outputs):
        W = o.W.copy()
        b = o.b.copy()
        W[pattern.act[k]] = local.w[k]
        b[pattern.act[k]] = local.b[k]
        pinned_W.append(W)
        pinned_b.append(b)
    if _global_feasible(net, x_ce, pattern, local, iota, config, pinned_W, pinned_b, bounds, 0.0):
        rep = net.set_linear_layers(pinned_W, pinned_b)
        return GlobalRepair(True, rep, _global_objective(net, pinned_W, pinned_b), "already_feasible")

    prog = build_global_program(net, x_ce, pattern, local, iota, config, bounds)
    sol = prog.solve(tol=config.solver_tol, max_iter=config.max_iter)
    if not sol.optimal:
        return GlobalRepair(False, None, math.inf, sol.status, sol.iterations)

    Ws, bs = [], []
    for k in range(net.m):
        W = sol.values[f"W{k}"].reshape(N, n).copy()
        b = sol.values[f"b{k}"].copy()
        W[pattern.act[k]] = local.w[k]
        b[pattern.act[k]] = local.b[k]
        Ws.append(W)
        bs.append(b)
    # The norm objective is flat to first order in directions orthogonal to
    # the change, so interior-point iterates leave small residue on rows
    # that need not move.  Restoring such a row never increases the
    # objective; keep the restoration whenever all constraints still hold.
    cons = _row_constraints(net, pattern, iota, config)
    for k, o in enumerate(net.outputs):
        va = _active_value(local, k, x_ce)
        for i in range(N):
            if i != pattern.act[k] and _row_feasible(k, i, o.W[i], o.b[i], x_ce, pattern, va, cons, config,
                                                     bounds, 0.0):
                Ws[k][i], bs[k][i] = o.W[i], o.b[i]
    rep = net.set_linear_layers(Ws, bs)
    return GlobalRepair(True, rep, _global_objective(net, Ws, bs), "optimal", sol.iterations)


# -- pipeline --------------------------------------------------------------------


def repair_tll(model: DynamicsModel, net: TllNetwork, spec: SafetySpec, x_ce,
               config: RepairConfig | None = None) -> RepairResult:
    """Full repair: bounds, active pattern, ``Local``, ``iota``, ``Global``.

    Infeasibility at any stage is reported through ``status`` and
    ``stage`` (``"budget"``, ``"local"`` or ``"global"``) together with the
    artifacts computed so far.

    Raises
    ------
    InputError
        If ``x_ce`` lies in ``X_safe`` or ``X_unsafe``, or dimensions disagree.
    """
    config = config or RepairConfig()
    x_ce = np.asarray(x_ce, dtype=float)
    if x_ce.shape != (net.n,) or model.n != net.n or spec.n != net.n or model.m != net.m:
        raise InputError("model, network, spec and x_ce disagree on dimensions")
    if spec.X_safe.contains(x_ce):
        raise InputError("the counterexample lies inside X_safe")
    if spec.X_unsafe.contains(x_ce):
        raise InputError("the counterexample lies inside X_unsafe")

    try:
        ctx = prepare_bounds(model, net, spec, config.samples, config.lipschitz_samples)
    except BudgetError as exc:
        return RepairResult("budget_infeasible", net, stage="budget", message=str(exc))
    result = RepairResult("repaired", net, bounds=ctx, certificates=ctx.certificate)
    if not ctx.certificate.original_net_ok:
        result.diagnostics["warning"] = "original network exceeds the L_max budget; certificate does not apply"

    pattern = active_indices(net, x_ce)
    result.pattern = pattern
    local = solve_local(ctx.model, net, spec, x_ce, pattern, ctx.betaF, ctx.LF, ctx.beta_max, ctx.L_max, config)
    result.local = local
    if not local.feasible:
        result.status, result.stage = "local_infeasible", "local"
        result.message = "no unsafe-set row admits a repair within the budgets"
        return result

    iota = choose_iota(net, x_ce, pattern)
    result.iota = iota
    glob = solve_global(net, x_ce, pattern, local, iota, config, ctx)
    result.diagnostics["global_status"] = glob.status
    if not glob.feasible:
        result.status, result.stage = "global_infeasible", "global"
        result.message = f"activation program ended with status {glob.status}"
        return result
    result.repaired = glob.network
    result.global_objective = glob.objective
    result.diagnostics["activation_exact"] = check_activation(glob.network, x_ce, pattern)
    result.diagnostics["activation_within_tol"] = check_activation(glob.network, x_ce, pattern,
                                                                   tol=10 * config.solver_tol)
    om = omega_norms(glob.network)
    result.diagnostics["repaired_Omega_W"] = om.Omega_W
    result.diagnostics["repaired_Omega_b"] = om.Omega_b
    return result


def validate_repair(model: DynamicsModel, original: TllNetwork, repaired: TllNetwork, spec: SafetySpec, x_ce,
                    pattern: ActivationPattern, config: RepairConfig | None = None,
                    bounds: BoundContext | None = None) -> dict:
    """Check a repaired network against the five repair requirements.

    Returns a JSON-ready report; ``report["all_pass"]`` summarizes it.
    """
    config = config or RepairConfig()
    x_ce = np.asarray(x_ce, dtype=float)
    report = {}

    unsafe = spec.X_unsafe.contains
    ctrl = lambda x: eval_lattice(repaired, x)
    horizon = max(1, config.ce_horizon, config.repair_horizon)
    traj = simulate(model, ctrl, x_ce, max(horizon, config.validation_steps))
    first = traj.first_step_in(unsafe)
    report["ii_counterexample"] = {
        "one_step_safe": not unsafe(traj.states[1]),
        "horizon": horizon,
        "horizon_safe": first is None or first > horizon,
        "long_run_steps": traj.steps,
        "first_unsafe_step": first,
        "pass": first is None or first > horizon,
    }

    X0 = spec.X_safe.grid(config.validation_grid)
    paths = simulate_batch(model, lambda Z: eval_lattice_batch(repaired, Z), X0, spec.T)
    entered = any(bool(np.any(spec.X_unsafe.contains_batch(paths[k]))) for k in range(1, spec.T + 1))
    item = {"samples": int(X0.shape[0]), "T": int(spec.T), "enters_unsafe": entered}
    if bounds is None:
        try:
            bounds = prepare_bounds(model, original, spec, config.samples, config.lipschitz_samples)
        except BudgetError as exc:
            item["bound_error"] = str(exc)
    bound_ok = True
    if bounds is not None:
        om = omega_norms(repaired)
        beta_r = bounds.betaF(om.Omega_W, om.Omega_b)
        L_r = bounds.LF(om.Omega_W, om.Omega_b)
        excursion = np.max(np.linalg.norm(paths - X0[None], axis=2), axis=1)
        radii = np.array([reach_bound(beta_r, L_r, k) for k in range(spec.T + 1)])
        bound_ok = bool(np.all(excursion <= radii + 1e-9))
        item.update(
            max_excursion=float(excursion[-1]),
            reach_radius=float(radii[-1]),
            reach_bound_holds=bound_ok,
            certified=bool(radii[-1] <= bounds.distance.value),
            d_safe=bounds.distance.value,
        )
    item["pass"] = (not entered) and bound_ok
    report["i_safe_set"] = item

    arch = original.same_architecture(repaired)
    report["iii_architecture"] = {"pass": arch, "n": repaired.n, "m": repaired.m, "N": repaired.N, "M": repaired.M}
    report["iv_selectors"] = {"pass": original.same_selectors(repaired)}
    if arch:
        change = _global_objective(original, [o.W for o in repaired.outputs], [o.b for o in repaired.outputs])
        act_change = float(sum(
            np.linalg.norm(o.W[a] - r.W[a]) + abs(o.b[a] - r.b[a])
            for o, r, a in zip(original.outputs, repaired.outputs, pattern.act)
        ))
    else:
        change = act_change = None
    report["v_change"] = {"global_objective": change, "active_row_change": act_change, "pass": arch}
    act_ok = arch and check_activation(repaired, x_ce, pattern)
    report["activation"] = {"pass": act_ok}
    report["all_pass"] = all(v["pass"] for v in report.values() if isinstance(v, dict))
    return report
