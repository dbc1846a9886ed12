import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tllrepair.errors import BuilderError
from tllrepair.socp import ConeDims, ConvexProgram, conelp, vstack


def line_projection():
    prog = ConvexProgram()
    x = prog.add_variable("x", 2)
    prog.add_eq(np.array([[3.0, 4.0]]) @ x - 5.0)
    prog.add_norm_objective(x)
    return prog


def test_line_projection():
    sol = line_projection().solve(tol=1e-8)
    assert sol.status == "optimal"
    assert np.allclose(sol.values["x"], [0.6, 0.8], atol=1e-6)
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert max(sol.residuals.values()) <= 1e-8


def test_ball_projection():
    prog = ConvexProgram()
    x = prog.add_variable("x", 2)
    prog.add_cone(x, 1.0)
    prog.add_norm_objective(x - np.array([2.0, 0.0]))
    sol = prog.solve()
    assert np.allclose(sol.values["x"], [1.0, 0.0], atol=1e-6)
    assert sol.objective == pytest.approx(1.0, abs=1e-6)


def test_ball_support_via_epigraph():
    # maximize x1 over the unit ball, written as min t with t >= -x1
    prog = ConvexProgram()
    x = prog.add_variable("x", 2)
    t = prog.add_variable("t", 1)
    prog.add_cone(x, 1.0)
    prog.add_ineq(-x[0] - t)
    prog.add_linear_objective(t)
    sol = prog.solve()
    assert np.allclose(sol.values["x"], [1.0, 0.0], atol=1e-6)
    assert sol.objective == pytest.approx(-1.0, abs=1e-6)


def test_empty_program():
    sol = ConvexProgram().solve()
    assert sol.status == "optimal" and sol.objective == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 6))
def test_halfspace_projection_matches_closed_form(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n)
    w0 = rng.normal(size=n)
    b0 = float(rng.normal() * 3)
    prog = ConvexProgram()
    w = prog.add_variable("w", n)
    prog.add_ineq(a @ w + b0)
    prog.add_norm_objective(w - w0)
    sol = prog.solve()
    viol = a @ w0 + b0
    expected = w0 - max(viol, 0.0) * a / (a @ a)
    assert sol.status == "optimal"
    assert np.max(np.abs(sol.values["w"] - expected)) <= 1e-6
    assert sol.objective == pytest.approx(max(viol, 0.0) / np.linalg.norm(a), abs=1e-6)


def test_infeasible_ball_and_halfspace():
    prog = ConvexProgram()
    x = prog.add_variable("x", 2)
    prog.add_cone(x, 1.0)
    prog.add_ineq(2.0 - x[0])
    prog.add_norm_objective(x)
    assert prog.solve().status == "infeasible"


def test_infeasible_linear_system():
    prog = ConvexProgram()
    x = prog.add_variable("x", 1)
    prog.add_ineq(x - 1.0)
    prog.add_ineq(2.0 - x)
    prog.add_norm_objective(x)
    assert prog.solve().status == "infeasible"


def test_infeasible_constant_constraint():
    prog = ConvexProgram()
    x = prog.add_variable("x", 1)
    prog.add_ineq(0.0 * x + 1.0)
    prog.add_norm_objective(x)
    assert prog.solve().status == "infeasible"


def test_unbounded():
    prog = ConvexProgram()
    x = prog.add_variable("x", 2)
    prog.add_ineq(x[1])
    prog.add_linear_objective(-x[0])
    assert prog.solve().status == "unbounded"


def test_max_iter_status():
    prog = ConvexProgram()
    x = prog.add_variable("x", 4)
    prog.add_cone(x, 1.0)
    prog.add_norm_objective(x - np.array([3.0, 1.0, -2.0, 0.5]))
    sol = prog.solve(max_iter=1)
    assert sol.status == "max_iter"
    assert set(sol.residuals) >= {"primal_feas", "cone_feas", "stationarity"}


def test_deterministic():
    rng = np.random.default_rng(9)
    prog = ConvexProgram()
    x = prog.add_variable("x", 5)
    prog.add_cone(x, 2.0)
    prog.add_ineq(rng.normal(size=(3, 5)) @ x - 0.1)
    prog.add_norm_objective(x - rng.normal(size=5) * 3)
    a, b = prog.solve(), prog.solve()
    assert a.status == b.status
    assert a.objective == b.objective
    assert np.array_equal(a.values["x"], b.values["x"])


def random_feasible_program(rng, n=4, k=5):
    prog = ConvexProgram()
    x = prog.add_variable("x", n)
    A = rng.normal(size=(k, n))
    prog.add_ineq(A @ x - 1.0)  # origin strictly feasible
    prog.add_cone(x, 3.0)
    target = rng.normal(size=n) * 4
    prog.add_norm_objective(x - target)
    prog.add_norm_objective(np.eye(n)[:2] @ x, weight=0.5)
    return prog, A


def test_optimality_sanity_against_feasible_perturbations():
    rng = np.random.default_rng(10)
    prog, A = random_feasible_program(rng)
    sol = prog.solve()
    assert sol.optimal
    z = sol.values["x"]
    best = sol.objective
    tried = 0
    while tried < 100:
        zp = z + rng.normal(size=z.size) * rng.choice([1e-3, 1e-2, 1e-1])
        if np.all(A @ zp <= 1.0) and np.linalg.norm(zp) <= 3.0:
            assert prog.objective_value({"x": zp}) >= best - 1e-6
            tried += 1


def test_solution_satisfies_constraints_within_tol():
    rng = np.random.default_rng(11)
    for _ in range(10):
        prog, A = random_feasible_program(rng)
        sol = prog.solve(tol=1e-8)
        assert sol.optimal
        res = prog.residuals(sol.values)
        assert res["primal_feas"] <= 1e-8 and res["cone_feas"] <= 1e-8


def test_against_cvxpy_reference():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(12)
    for _ in range(5):
        prog, A = random_feasible_program(rng)
        ours = prog.solve()
        d = prog.to_dict()
        c, G, h = np.array(d["c"]), np.array(d["G"]), np.array(d["h"])
        z = cp.Variable(len(c))
        cons = []
        l = d["dims"]["l"]
        if l:
            cons.append(G[:l] @ z <= h[:l])
        off = l
        for q in d["dims"]["q"]:
            blk = h[off : off + q] - G[off : off + q] @ z
            cons.append(cp.SOC(blk[0], blk[1:]))
            off += q
        ref = cp.Problem(cp.Minimize(c @ z), cons)
        ref.solve(solver=cp.CLARABEL)
        assert ours.objective == pytest.approx(ref.value, abs=1e-6)


# -- builder -------------------------------------------------------------------------


def test_builder_errors():
    prog = ConvexProgram()
    x = prog.add_variable("x", 2)
    with pytest.raises(BuilderError):
        prog.add_variable("x", 3)
    with pytest.raises(BuilderError):
        prog.add_variable("y", 0)
    other = ConvexProgram().add_variable("z", 2)
    with pytest.raises(BuilderError):
        prog.add_eq(other)
    with pytest.raises(BuilderError):
        prog.add_cone(x, x)
    with pytest.raises(BuilderError):
        x + np.ones(3)
    with pytest.raises(BuilderError):
        np.ones((2, 3)) @ x
    with pytest.raises(BuilderError):
        prog.add_norm_objective(x, weight=-1.0)
    with pytest.raises(BuilderError):
        prog.solve(tol=0.0)
    fake = ConvexProgram().add_variable("x", 3)
    with pytest.raises(BuilderError):
        prog.add_ineq(fake)


def test_expression_algebra():
    prog = ConvexProgram()
    x = prog.add_variable("x", 3)
    y = prog.add_variable("y", 1)
    e = 2 * x - np.array([1.0, 2.0, 3.0]) + y
    vals = {"x": np.array([1.0, 1.0, 1.0]), "y": np.array([5.0])}
    assert np.allclose(e.value(vals), [6.0, 5.0, 4.0])
    s = vstack([x[0], y, 7.0])
    assert np.allclose(s.value(vals), [1.0, 5.0, 7.0])
    assert np.allclose((np.array([1.0, 0.0, -1.0]) @ x).value(vals), [0.0])


def test_dump_is_json_and_matches_solution():
    prog = line_projection()
    d = json.loads(prog.dumps())
    assert d["dims"]["q"] == [3]
    assert d["epigraph_variables"] == 1
    c, A, b = np.array(d["c"]), np.array(d["A"]), np.array(d["b"])
    assert A.shape == (1, 3) and np.allclose(A[0, :2], [3.0, 4.0]) and b[0] == 5.0
    assert c.tolist() == [0.0, 0.0, 1.0]


def test_raw_conelp_lp():
    # min x1 + x2  s.t. x >= 1 (as -x <= -1)
    res = conelp(np.ones(2), -np.eye(2), -np.ones(2), ConeDims(l=2, q=()))
    assert res["status"] == "optimal"
    assert np.allclose(res["x"], [1.0, 1.0], atol=1e-7)
