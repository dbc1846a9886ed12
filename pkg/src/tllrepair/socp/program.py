"""Append-only builder for small second-order cone programs.

A program holds named vector variables and affine expressions over them:

* equality constraints ``expr == 0``
* inequality constraints ``expr <= 0`` (componentwise)
* cone constraints ``||vec_expr||_2 <= scalar_expr``
* an objective that is a weighted sum of Euclidean norms of affine
  expressions plus an optional linear term.

Norm objective terms are moved to epigraph form (one auxiliary scalar
and one cone per term) when the program is canonicalized for
:func:`tllrepair.socp.ipm.conelp`.

Example
-------
>>> prog = ConvexProgram()
>>> x = prog.add_variable("x", 2)
>>> prog.add_eq(np.array([[3.0, 4.0]]) @ x - 5.0)
>>> prog.add_norm_objective(x)
>>> sol = prog.solve()
>>> np.round(sol.values["x"], 6).tolist()
[0.6, 0.8]
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from numbers import Real

import numpy as np

from ..errors import BuilderError
from .ipm import ConeDims, conelp

__all__ = ["Expr", "ConvexProgram", "Solution", "vstack"]


class Expr:
    """Affine expression ``sum_v T_v @ v + const``.

    ``terms`` maps a variable name to a ``(size, dim_v)`` coefficient matrix.
    Expressions are immutable; arithmetic returns new objects.
    """

    __array_priority__ = 100  # make ndarray @ Expr dispatch to __rmatmul__

    def __init__(self, terms: dict, const, dims: dict):
        self.const = np.atleast_1d(np.asarray(const, dtype=float))
        self.terms = {k: np.asarray(v, dtype=float) for k, v in terms.items()}
        self.dims = dict(dims)
        for name, T in self.terms.items():
            if T.shape != (self.size, self.dims[name]):
                raise BuilderError(f"coefficient for {name!r} has shape {T.shape}")

    @property
    def size(self) -> int:
        return self.const.size

    @staticmethod
    def _lift(other, size):
        if isinstance(other, Expr):
            return other
        arr = np.atleast_1d(np.asarray(other, dtype=float))
        if arr.ndim != 1:
            raise BuilderError("constants must be scalars or vectors")
        if arr.size == 1 and size != 1:
            arr = np.full(size, arr[0])
        return Expr({}, arr, {})

    def __add__(self, other):
        other = self._lift(other, self.size)
        a, b = self, other
        if a.size != b.size:
            if a.size == 1:
                a = a._broadcast(b.size)
            elif b.size == 1:
                b = b._broadcast(a.size)
            else:
                raise BuilderError(f"size mismatch: {a.size} vs {b.size}")
        terms = dict(a.terms)
        dims = dict(a.dims)
        for name, T in b.terms.items():
            if name in dims and dims[name] != b.dims[name]:
                raise BuilderError(f"variable {name!r} used with two dimensions")
            terms[name] = terms[name] + T if name in terms else T
            dims[name] = b.dims[name]
        return Expr(terms, a.const + b.const, dims)

    __radd__ = __add__

    def _broadcast(self, size):
        ones = np.ones((size, 1))
        return Expr({k: ones @ v for k, v in self.terms.items()}, np.full(size, self.const[0]), self.dims)

    def __neg__(self):
        return Expr({k: -v for k, v in self.terms.items()}, -self.const, self.dims)

    def __sub__(self, other):
        return self + (-self._lift(other, self.size))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, k):
        if not isinstance(k, Real):
            raise BuilderError("only scalar multiplication is supported; use @ for matrices")
        return Expr({n: k * v for n, v in self.terms.items()}, k * self.const, self.dims)

    __rmul__ = __mul__

    def __rmatmul__(self, M):
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            M = M[None, :]
        if M.shape[1] != self.size:
            raise BuilderError(f"cannot apply {M.shape} matrix to expression of size {self.size}")
        return Expr({k: M @ v for k, v in self.terms.items()}, M @ self.const, self.dims)

    def __getitem__(self, idx):
        sel = np.arange(self.size)[idx]
        sel = np.atleast_1d(sel)
        return Expr({k: v[sel] for k, v in self.terms.items()}, self.const[sel], self.dims)

    def value(self, values: dict) -> np.ndarray:
        out = self.const.copy()
        for name, T in self.terms.items():
            out = out + T @ np.asarray(values[name], dtype=float)
        return out

    def __repr__(self):
        return f"Expr(size={self.size}, vars={sorted(self.terms)})"


def vstack(exprs) -> Expr:
    """Stack expressions (or constants) vertically into one expression."""
    exprs = [e if isinstance(e, Expr) else Expr._lift(e, 1) for e in exprs]
    sizes = [e.size for e in exprs]
    total = sum(sizes)
    dims = {}
    for e in exprs:
        for name, d in e.dims.items():
            if dims.setdefault(name, d) != d:
                raise BuilderError(f"variable {name!r} used with two dimensions")
    terms = {name: np.zeros((total, d)) for name, d in dims.items()}
    row = 0
    for e, k in zip(exprs, sizes):
        for name, T in e.terms.items():
            terms[name][row : row + k] = T
        row += k
    return Expr(terms, np.concatenate([e.const for e in exprs]), dims)


@dataclass
class Solution:
    status: str
    values: dict
    objective: float
    residuals: dict
    iterations: int = 0
    certificate: dict | None = None
    ineq_duals: list | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, expr: Expr) -> np.ndarray:
        return expr.value(self.values)


@dataclass
class ConvexProgram:
    """Cone program under construction.  Methods append and return ``self``."""

    variables: dict = field(default_factory=dict)
    eq_constraints: list = field(default_factory=list)
    ineq_constraints: list = field(default_factory=list)
    cone_constraints: list = field(default_factory=list)
    objective_terms: list = field(default_factory=list)
    linear_objective: Expr | None = None

    # -- building -----------------------------------------------------------

    def add_variable(self, name: str, dim: int) -> Expr:
        if name in self.variables:
            raise BuilderError(f"variable {name!r} already declared")
        if int(dim) < 1:
            raise BuilderError("variable dimension must be positive")
        dim = int(dim)
        self.variables[name] = dim
        return Expr({name: np.eye(dim)}, np.zeros(dim), {name: dim})

    def _check(self, expr) -> Expr:
        if not isinstance(expr, Expr):
            expr = Expr._lift(expr, 1)
        for name, d in expr.dims.items():
            if name not in self.variables:
                raise BuilderError(f"unknown variable {name!r}")
            if self.variables[name] != d:
                raise BuilderError(f"variable {name!r} has dimension {self.variables[name]}, not {d}")
        return expr

    def add_eq(self, expr: Expr):
        self.eq_constraints.append(self._check(expr))
        return self

    def add_ineq(self, expr: Expr):
        self.ineq_constraints.append(self._check(expr))
        return self

    def add_cone(self, vec: Expr, t):
        vec, t = self._check(vec), self._check(t)
        if t.size != 1:
            raise BuilderError("cone bound must be a scalar expression")
        self.cone_constraints.append((vec, t))
        return self

    def add_norm_objective(self, expr: Expr, weight: float = 1.0):
        if weight < 0:
            raise BuilderError("norm weights must be nonnegative")
        self.objective_terms.append((self._check(expr), float(weight)))
        return self

    def add_linear_objective(self, expr: Expr):
        expr = self._check(expr)
        if expr.size != 1:
            raise BuilderError("linear objective must be scalar")
        self.linear_objective = expr if self.linear_objective is None else self.linear_objective + expr
        return self

    # -- evaluation ---------------------------------------------------------

    def objective_value(self, values: dict) -> float:
        val = sum(w * float(np.linalg.norm(e.value(values))) for e, w in self.objective_terms)
        if self.linear_objective is not None:
            val += float(self.linear_objective.value(values)[0])
        return float(val)

    def residuals(self, values: dict) -> dict:
        """Constraint violations of ``values`` (all zero when feasible)."""
        primal = 0.0
        for e in self.eq_constraints:
            primal = max(primal, float(np.max(np.abs(e.value(values)))))
        for e in self.ineq_constraints:
            primal = max(primal, float(np.max(e.value(values))))
        cone = 0.0
        for vec, t in self.cone_constraints:
            cone = max(cone, float(np.linalg.norm(vec.value(values)) - t.value(values)[0]))
        return {"primal_feas": primal, "cone_feas": cone}

    # -- canonical form -----------------------------------------------------

    def _layout(self):
        offsets, off = {}, 0
        for name, d in self.variables.items():
            offsets[name] = off
            off += d
        return offsets, off

    def _dense(self, expr: Expr, offsets, nz):
        M = np.zeros((expr.size, nz))
        for name, T in expr.terms.items():
            o = offsets[name]
            M[:, o : o + T.shape[1]] = T
        return M, expr.const

    def canonical(self):
        """Return ``(c, G, h, dims, A, b, nvars)`` for :func:`conelp`.

        Variable vector layout: declared variables in declaration order,
        then one epigraph scalar per norm objective term.
        """
        offsets, nvar = self._layout()
        nep = len(self.objective_terms)
        nz = nvar + nep
        c = np.zeros(nz)
        c[nvar:] = [w for _, w in self.objective_terms]
        if self.linear_objective is not None:
            M, _ = self._dense(self.linear_objective, offsets, nz)
            c += M[0]

        A_rows, b_rows = [], []
        for e in self.eq_constraints:
            M, k = self._dense(e, offsets, nz)
            A_rows.append(M)
            b_rows.append(-k)

        G_lin, h_lin = [], []
        for e in self.ineq_constraints:
            M, k = self._dense(e, offsets, nz)
            G_lin.append(M)
            h_lin.append(-k)

        G_soc, h_soc, q = [], [], []
        for vec, t in self.cone_constraints:
            Mt, kt = self._dense(t, offsets, nz)
            Mv, kv = self._dense(vec, offsets, nz)
            G_soc.append(-np.vstack([Mt, Mv]))
            h_soc.append(np.concatenate([kt, kv]))
            q.append(1 + vec.size)
        for j, (e, _) in enumerate(self.objective_terms):
            Mv, kv = self._dense(e, offsets, nz)
            Mt = np.zeros((1, nz))
            Mt[0, nvar + j] = 1.0
            G_soc.append(-np.vstack([Mt, Mv]))
            h_soc.append(np.concatenate([[0.0], kv]))
            q.append(1 + e.size)

        G = np.vstack(G_lin + G_soc) if (G_lin or G_soc) else np.zeros((0, nz))
        h = np.concatenate(h_lin + h_soc) if (h_lin or h_soc) else np.zeros(0)
        A = np.vstack(A_rows) if A_rows else np.zeros((0, nz))
        b = np.concatenate(b_rows) if b_rows else np.zeros(0)
        dims = ConeDims(l=sum(g.shape[0] for g in G_lin), q=tuple(q))
        return c, G, h, dims, A, b, nvar

    def to_dict(self) -> dict:
        """Canonical-form dump for external cross-checking."""
        c, G, h, dims, A, b, nvar = self.canonical()
        return {
            "variables": [{"name": k, "dim": d} for k, d in self.variables.items()],
            "epigraph_variables": len(self.objective_terms),
            "c": c.tolist(),
            "A": A.tolist(),
            "b": b.tolist(),
            "G": G.tolist(),
            "h": h.tolist(),
            "dims": {"l": dims.l, "q": list(dims.q)},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    # -- solving ------------------------------------------------------------

    def solve(self, tol: float = 1e-8, max_iter: int = 100) -> Solution:
        if tol <= 0:
            raise BuilderError("tol must be positive")
        if not self.variables:
            return Solution("optimal", {}, 0.0, {"primal_feas": 0.0, "cone_feas": 0.0, "stationarity": 0.0})

        c, G, h, dims, A, b, nvar = self.canonical()
        offsets, _ = self._layout()

        # Constraints with no variable dependence are decided up front; the
        # interior-point loop would otherwise spend its budget on them.
        trivial_bad = _constant_rows_violated(A, b, G, h, dims, tol)
        if trivial_bad:
            return Solution(
                "infeasible",
                {},
                float("nan"),
                {"primal_feas": float("inf"), "cone_feas": float("inf"), "stationarity": float("nan")},
                certificate={"constant_constraint": trivial_bad},
            )

        res = conelp(c, G, h, dims, A, b, tol=tol, max_iter=max_iter)
        status = res["status"]
        if status == "infeasible":
            return Solution(
                status,
                {},
                float("nan"),
                {"primal_feas": float("inf"), "cone_feas": float("inf"), "stationarity": float("nan")},
                iterations=res["iterations"],
                certificate={"y": res["y"], "z": res["z"]},
            )
        if status == "unbounded":
            ray = {name: res["x"][o : o + self.variables[name]].copy() for name, o in offsets.items()}
            return Solution(
                status,
                {},
                float("-inf"),
                {"primal_feas": float("nan"), "cone_feas": float("nan"), "stationarity": float("nan")},
                iterations=res["iterations"],
                certificate={"ray": ray},
            )

        x = res["x"]
        values = {name: x[o : o + self.variables[name]].copy() for name, o in offsets.items()}
        resid = self.residuals(values)
        cnorm = 1.0 + np.max(np.abs(c), initial=0.0)
        resid["stationarity"] = float(
            np.max(np.abs(A.T @ res["y"] + G.T @ res["z"] + c), initial=0.0) / cnorm
        )
        if status == "optimal" and max(resid.values()) > tol:
            status = "max_iter"
        duals, off = [], 0
        for e in self.ineq_constraints:
            duals.append(res["z"][off : off + e.size].copy())
            off += e.size
        return Solution(status, values, self.objective_value(values), resid, iterations=res["iterations"],
                        ineq_duals=duals)


def _constant_rows_violated(A, b, G, h, dims, tol):
    bad = []
    for i in range(A.shape[0]):
        if not np.any(A[i]) and abs(b[i]) > tol:
            bad.append(("eq", i))
    for i in range(dims.l):
        if not np.any(G[i]) and h[i] < -tol:
            bad.append(("ineq", i))
    return bad
