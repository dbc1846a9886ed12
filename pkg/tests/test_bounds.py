import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tllrepair.bounds import (
    BoundFn,
    Polytope,
    SafetySpec,
    check_original_bounds,
    find_counterexample,
    is_unsafe,
    make_beta_fn,
    make_L_fn,
    omega_norms,
    prepare_bounds,
    reach_bound,
    safe_distance,
    solve_Lmax,
)
from tllrepair.demo import car_network, car_scenario, car_spec
from tllrepair.dynamics import Box, car_model, linear_model, sampled_sups, simulate_batch
from tllrepair.errors import BudgetError, InputError
from tllrepair.tll import ScalarTll, TllNetwork, eval_lattice_batch, random_tll

SPEC = car_spec()
UNSAFE = Polytope([[0.0, 1.0, 0.0]], [3.0])


def test_is_unsafe_examples():
    assert is_unsafe(UNSAFE, [0, 3.1, 0])
    assert not is_unsafe(UNSAFE, [0, 2.999, 0.2])
    assert is_unsafe(UNSAFE, [0, 3.0, 0])  # closed set
    quad = Polytope([[1, 0], [0, 1]], [0, 0])
    assert not is_unsafe(quad, [1, -1])
    assert is_unsafe(quad, [1, 1])
    with pytest.raises(InputError):
        is_unsafe(quad, [1, 1, 1])


def test_polytope_validation():
    with pytest.raises(InputError):
        Polytope([[1.0, 0.0]], [1.0, 2.0])


def test_spec_validation():
    ws = Box([-1, -1], [1, 1])
    with pytest.raises(InputError):
        SafetySpec(ws, Box([0, 0], [2, 2]), Polytope([[1, 0]], [5]), 3)
    with pytest.raises(InputError):
        SafetySpec(ws, Box([0, 0], [0.5, 0.5]), Polytope([[1, 0]], [5]), 0)
    d = SPEC.to_dict()
    assert SafetySpec.from_dict(d).to_dict() == d


def test_car_beta_fn():
    sups = sampled_sups(car_model(), SPEC.X_safe, 11, workspace=SPEC.X_ws)
    beta = make_beta_fn(car_model(), SPEC, sups)
    assert beta.c0 == pytest.approx(0.003, abs=1e-15)
    assert beta.c_w == pytest.approx(0.01 * math.sqrt(25 + math.pi**2), abs=1e-15)
    assert beta.c_b == pytest.approx(0.01, abs=1e-15)
    assert beta(0, 0) == pytest.approx(0.003)
    assert beta(1, 1) == pytest.approx(0.072051, abs=1e-6)


def test_car_L_fn():
    model = car_model(0.3, 0.01, L_f=1.003, L_g=0.0)
    sups = sampled_sups(model, SPEC.X_safe, 11, workspace=SPEC.X_ws)
    L = make_L_fn(model, SPEC, sups)
    assert (L.c0, L.c_w, L.c_b) == (1.003, pytest.approx(0.01), 0.0)
    assert L(0, 0) == model.L_f


def test_linear_L_fn():
    model = linear_model(2 * np.eye(2))
    box = Box([-1, -1], [1, 1])
    spec = SafetySpec(Box([-2, -2], [2, 2]), box, Polytope([[1, 0]], [5]), 3)
    L = make_L_fn(model, spec, sampled_sups(model, box, 5, workspace=spec.X_ws))
    assert L.c_w == pytest.approx(0.0 * math.sqrt(2) + 1.0)
    assert L.c0 == pytest.approx(2.0)


def test_boundfn_rejects_negative():
    with pytest.raises(InputError):
        BoundFn(1.0, -0.1, 0.0)


@settings(max_examples=50, deadline=None)
@given(c=st.tuples(*[st.floats(0, 10)] * 3), w=st.floats(0, 10), b=st.floats(0, 10),
       dw=st.floats(0, 5), db=st.floats(0, 5))
def test_boundfn_monotone(c, w, b, dw, db):
    f = BoundFn(*c)
    assert f(w + dw, b) >= f(w, b)
    assert f(w, b + db) >= f(w, b)


def test_omega_norms_examples():
    absnet = TllNetwork((ScalarTll([[1.0], [-1.0]], [0.0, 0.0], [[0], [1]]),))
    om = omega_norms(absnet)
    assert (om.Omega_W, om.Omega_b) == (1.0, 0.0)
    one = TllNetwork((ScalarTll([[3.0, 4.0]], [5.0], [[0]]),))
    om = omega_norms(one)
    assert (om.Omega_W, om.Omega_b) == (5.0, 5.0)


def test_omega_norms_brute_force():
    rng = np.random.default_rng(0)
    net = random_tll(rng, 3, 7, 3, m=3)
    wmax = bmax = 0.0
    for o in net.outputs:
        for i in range(o.N):
            wmax = max(wmax, math.sqrt(sum(v * v for v in o.W[i])))
            bmax = max(bmax, abs(o.b[i]))
    om = omega_norms(net)
    assert om.Omega_W == pytest.approx(wmax, rel=1e-15)
    assert om.Omega_b == bmax


def test_safe_distance_examples():
    d = safe_distance(SPEC.X_safe, UNSAFE)
    assert d.value == pytest.approx(3.25, abs=1e-12) and d.exact and not d.intersects
    assert float(d) == d.value
    d = safe_distance(Box([0, 0], [1, 1]), Polytope([[1, 0]], [-5]))
    assert d.value == 0.0 and d.intersects
    assert safe_distance(Box([-1, -1], [1, 1]), Polytope([[1, 0]], [2])).value == pytest.approx(1.0)


def test_safe_distance_multi_row_against_brute_force():
    rng = np.random.default_rng(1)
    box = Box([-1, -1], [1, 1])
    for _ in range(5):
        G = rng.normal(size=(3, 2))
        h = G @ (rng.normal(size=2) * 4) + rng.uniform(0.1, 1, 3)
        P = Polytope(G, h)
        d = safe_distance(box, P)
        assert d.value <= d.upper + 1e-12
        # brute force: dense samples of the polytope near the box
        pts = rng.uniform(-8, 8, size=(200000, 2))
        pts = pts[P.contains_batch(pts)]
        if pts.size == 0:
            continue
        nearest = np.clip(pts, box.lower, box.upper)
        brute = float(np.min(np.linalg.norm(pts - nearest, axis=1)))
        assert d.value <= brute + 1e-9
        assert d.gap <= 1e-6


def test_safe_distance_multi_row_tight_case():
    d = safe_distance(Box([-1, -1], [1, 1]), Polytope([[1, 0], [0, 1]], [2, 2]))
    assert d.value == pytest.approx(math.sqrt(2), abs=1e-9)
    assert d.exact


def test_solve_Lmax_examples():
    t = time.perf_counter()
    L = solve_Lmax(0.0865, 3.25, 7)
    assert time.perf_counter() - t < 1e-3
    assert L == pytest.approx(1.4243, abs=5e-3)
    for T in (1, 3, 7, 12):
        assert solve_Lmax(1.0, T + 1.0, T) == pytest.approx(1.0, abs=1e-8)
    assert solve_Lmax(1.0, 2.0, 1) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(BudgetError):
        solve_Lmax(1.0, 1.0, 3)
    with pytest.raises(BudgetError):
        solve_Lmax(2.0, 1.0, 3)


@settings(max_examples=60, deadline=None)
@given(beta=st.floats(0.01, 1.0), ratio=st.floats(1.05, 50.0), T=st.integers(1, 12), bump=st.floats(1.01, 2.0))
def test_solve_Lmax_monotone_and_consistent(beta, ratio, T, bump):
    d = beta * ratio
    L = solve_Lmax(beta, d, T)
    assert reach_bound(beta, L, T) == pytest.approx(d, abs=1e-6)
    assert solve_Lmax(beta, d * bump, T) >= L
    if d > beta * bump:
        assert solve_Lmax(beta * bump, d, T) <= L


def test_reach_bound_examples():
    assert reach_bound(0.0865, 1.4243, 7) == pytest.approx(3.249, abs=1e-3)
    assert reach_bound(0.3, 0.0, 5) == 0.3
    assert reach_bound(0.3, 1.0, 5) == pytest.approx(1.8)
    with pytest.raises(InputError):
        reach_bound(0.3, 1.0, -1)


def test_check_original_bounds():
    beta = BoundFn(0.003, 0.059, 0.01)
    L = BoundFn(1.0015, 0.01, 0.0)
    net = car_network()
    om = omega_norms(net)
    bmax = beta(om.Omega_W, om.Omega_b)
    Lmax = solve_Lmax(bmax, 3.25, 7)
    assert check_original_bounds(net, beta, L, bmax, Lmax)
    big = TllNetwork((ScalarTll([[100.0, 0, 0]], [0.0], [[0]]),))
    assert not check_original_bounds(big, beta, L, bmax, Lmax)


def test_demo_network_bounds():
    ctx = prepare_bounds(car_model(), car_network(), SPEC)
    assert ctx.certificate.original_net_ok
    assert ctx.certificate.d_safe == pytest.approx(3.25)
    assert ctx.certificate.reach_radius == pytest.approx(3.25, abs=1e-6)
    assert ctx.beta_max == pytest.approx(ctx.betaF(ctx.omega.Omega_W, ctx.omega.Omega_b))


def test_prepare_bounds_budget_error():
    spec = SafetySpec(SPEC.X_ws, SPEC.X_safe, Polytope([[0, 1, 0]], [-0.2]), 7)
    with pytest.raises(BudgetError):
        prepare_bounds(car_model(), car_network(), spec)


def test_prepare_bounds_samples_lipschitz_when_unknown():
    from tllrepair.dynamics import DynamicsModel

    car = car_model()
    anon = DynamicsModel(3, 1, car.f_eval, car.g_eval, vectorized=True)
    ctx = prepare_bounds(anon, car_network(), SPEC)
    assert ctx.model.provenance == "sampled"
    assert ctx.LF.c0 >= car.L_f


def test_find_counterexample_demo():
    sc = car_scenario()
    x = find_counterexample(sc.model, sc.net, sc.spec, 2, sc.search_grid, sc.search_region)
    assert np.array_equal(x, [0.0, 2.999, 0.2])
    assert not sc.spec.X_safe.contains(x) and not sc.spec.X_unsafe.contains(x)


def test_find_counterexample_none_for_safe_controller():
    zero = TllNetwork((ScalarTll([[0.0, 0.0, 0.0]], [0.0], [[0]]),))
    region = Box([-1, -1, -0.5], [1, 1, 0.5])
    assert find_counterexample(car_model(), zero, SPEC, 2, 7, region) is None


def test_find_counterexample_postconditions():
    rng = np.random.default_rng(2)
    for _ in range(5):
        net = random_tll(rng, 3, 6, 3, scale=30.0)
        x = find_counterexample(car_model(), net, SPEC, 5, 9)
        if x is None:
            continue
        assert SPEC.X_ws.contains(x)
        assert not SPEC.X_safe.contains(x) and not SPEC.X_unsafe.contains(x)
        paths = simulate_batch(car_model(), lambda Z: eval_lattice_batch(net, Z), x[None], 5)
        assert any(SPEC.X_unsafe.contains(p[0]) for p in paths[1:])


def test_reach_bound_holds_on_random_controllers():
    car = car_model()
    rng = np.random.default_rng(3)
    X0 = SPEC.X_safe.grid(4)
    for _ in range(5):
        net = random_tll(rng, 3, 6, 3)
        try:
            ctx = prepare_bounds(car, net, SPEC)
        except BudgetError:
            continue
        om = ctx.omega
        beta, L = ctx.betaF(om.Omega_W, om.Omega_b), ctx.LF(om.Omega_W, om.Omega_b)
        paths = simulate_batch(car, lambda Z: eval_lattice_batch(net, Z), X0, SPEC.T)
        exc = np.linalg.norm(paths[-1] - X0, axis=1)
        assert np.all(exc <= reach_bound(beta, L, SPEC.T) + 1e-9)
