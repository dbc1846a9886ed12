import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tllrepair.dynamics import (
    Box,
    DynamicsModel,
    car_model,
    linear_model,
    model_from_config,
    sampled_lipschitz,
    sampled_sups,
    simulate,
    simulate_batch,
    step,
)
from tllrepair.errors import InputError

X_WS = Box([-3.0, -4.0, -math.pi], [3.0, 4.0, math.pi])
X_SAFE = Box([-0.25, -0.75, -math.pi / 8], [0.25, -0.25, math.pi / 8])
K_W = np.array([-0.1442, -0.5424, -0.425])
K_B = 2.223


def faulty(x):
    return np.array([K_W @ x + K_B])


def test_car_step_examples():
    car = car_model(0.3, 0.01)
    assert np.allclose(step(car, [0, 0, 0], [0]), [0.003, 0, 0], atol=1e-15)
    assert np.allclose(step(car, [0, 0, math.pi / 2], [0]), [0, 0.003, math.pi / 2], atol=1e-15)
    x = step(car, [0, 2.999, 0.2], [0.51134])
    assert x[1] == pytest.approx(2.999596, abs=5e-7)
    assert x[2] == pytest.approx(0.2051134, abs=1e-12)


def test_step_dimension_errors():
    car = car_model()
    with pytest.raises(InputError):
        step(car, [0, 0], [0])
    with pytest.raises(InputError):
        step(car, [0, 0, 0], [0, 1])


def test_car_model_parameters():
    with pytest.raises(InputError):
        car_model(0.0, 0.01)
    with pytest.raises(InputError):
        car_model(0.3, -1.0)
    car = car_model(0.3, 0.01)
    rng = np.random.default_rng(0)
    for x in rng.uniform(-3, 3, size=(20, 3)):
        assert np.array_equal(car.g_eval(x), [[0.0], [0.0], [0.01]])
    assert car.L_g == 0.0
    assert car.provenance == "analytic"


def test_car_lipschitz_against_jacobian_grid():
    """Largest Jacobian spectral norm over a 50^3 workspace grid bounds L_f from below and stays <= 1.003."""
    car = car_model(0.3, 0.01)
    a = 0.3 * 0.01
    th = X_WS.axes(50)[2]
    # the Jacobian only depends on the heading
    J = np.zeros((th.size, 3, 3))
    J[:, 0, 0] = J[:, 1, 1] = J[:, 2, 2] = 1.0
    J[:, 0, 2] = -a * np.sin(th)
    J[:, 1, 2] = a * np.cos(th)
    jac_max = float(np.max(np.linalg.norm(J, 2, axis=(1, 2))))
    assert jac_max <= 1.003
    assert car.L_f == pytest.approx(jac_max, abs=1e-12)
    assert car.L_f <= 1.003


def test_simulate_zero_controller():
    car = car_model()
    tr = simulate(car, lambda x: np.zeros(1), [0, 0, 0], 10)
    assert tr.states.shape == (11, 3) and tr.inputs.shape == (10, 1)
    assert np.allclose(tr.states[:, 0], 0.003 * np.arange(11), atol=1e-15)
    assert np.all(tr.states[:, 1:] == 0)


def test_faulty_controller_reaches_unsafe_at_step_two():
    tr = simulate(car_model(), faulty, [0, 2.999, 0.2], 3)
    assert tr.states[1, 1] < 3.0
    assert tr.states[2, 1] > 3.0
    assert tr.states[2, 1] == pytest.approx(3.000207, abs=1e-6)


def test_simulate_one_step_matches_step():
    car = car_model()
    x0 = np.array([0.1, -0.2, 0.3])
    tr = simulate(car, faulty, x0, 1)
    assert np.array_equal(tr.states[0], x0)
    assert np.array_equal(tr.states[1], step(car, x0, faulty(x0)))


def test_simulate_rejects_bad_steps():
    with pytest.raises(InputError):
        simulate(car_model(), faulty, [0, 0, 0], 0)


def test_controller_error_propagates():
    def boom(x):
        raise RuntimeError("controller failed")

    with pytest.raises(RuntimeError):
        simulate(car_model(), boom, [0, 0, 0], 2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), steps=st.integers(1, 30))
def test_trajectory_reconstruction(seed, steps):
    rng = np.random.default_rng(seed)
    w, b = rng.normal(size=3), rng.normal()
    tr = simulate(car_model(), lambda x: np.array([w @ x + b]), rng.uniform(-1, 1, 3), steps)
    assert tr.reconstruction_error(car_model()) <= 1e-12


def test_batch_simulation_matches_single():
    car = car_model()
    X0 = np.random.default_rng(1).uniform(-1, 1, size=(5, 3))
    paths = simulate_batch(car, lambda X: X @ K_W[:, None] + K_B, X0, 4)
    for p, x0 in enumerate(X0):
        tr = simulate(car, faulty, x0, 4)
        assert np.allclose(paths[:, p], tr.states, atol=1e-14)


def test_trajectory_csv(tmp_path):
    tr = simulate(car_model(), faulty, [0, 2.999, 0.2], 3)
    p = tmp_path / "t.csv"
    tr.to_csv(p, {"unsafe_h1": 3.0})
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["step", "x1", "x2", "x3", "u1", "unsafe_h1"]
    assert len(rows) == 5
    assert rows[-1][4] == ""
    assert float(rows[3][2]) > 3.0


def test_box_helpers():
    with pytest.raises(InputError):
        Box([1.0], [0.0])
    assert X_WS.max_norm() == pytest.approx(math.sqrt(9 + 16 + math.pi**2))
    assert X_WS.max_norm() == pytest.approx(5.9051, abs=1e-4)
    g = X_SAFE.grid(3)
    assert g.shape == (27, 3)
    # lexicographic order
    assert all(tuple(a) <= tuple(b) for a, b in zip(g, g[1:]))
    assert X_SAFE.subset_of(X_WS) and not X_WS.subset_of(X_SAFE)


def test_sampled_sups_car():
    s = sampled_sups(car_model(), X_SAFE, 11, workspace=X_WS)
    assert s.ext == pytest.approx(5.9051, abs=1e-4)
    assert s.sup_f_minus_x == pytest.approx(0.003, abs=1e-15)
    assert s.sup_g_norm == pytest.approx(0.01, abs=1e-15)
    assert s.sup_x_norm == pytest.approx(math.sqrt(0.25**2 + 0.75**2 + (math.pi / 8) ** 2))


def test_sampled_sups_grid_monotone():
    def f(x):
        return np.stack([np.sin(3 * x[..., 0]) * x[..., 1], np.cos(x[..., 1]) + x[..., 0] ** 2], axis=-1)

    def g(x):
        return np.stack([np.sin(x[..., 0]), 1 + 0 * x[..., 1]], axis=-1)[..., None]

    model = DynamicsModel(2, 1, f, g, 1.0, 1.0, vectorized=True)
    box = Box([-1.3, -0.7], [0.9, 1.6])
    prev = None
    k = 2
    for _ in range(5):
        s = sampled_sups(model, box, k)
        if prev is not None:
            assert s.sup_f_minus_x >= prev.sup_f_minus_x
            assert s.sup_g_norm >= prev.sup_g_norm
        prev = s
        k = 2 * k - 1  # nested refinement keeps every old point


def test_sampled_lipschitz_examples():
    est = sampled_lipschitz(car_model(), X_WS, 10)
    assert est.L_g == 0.0
    assert 1.0 <= est.L_f <= 1.054
    assert est.provenance == "sampled"
    lin = sampled_lipschitz(linear_model(2 * np.eye(2)), Box([-1, -1], [1, 1]), 5)
    assert 2.0 <= lin.L_f <= 2.1
    with pytest.raises(InputError):
        sampled_lipschitz(car_model(), Box([0, 0, 0], [1, 0, 1]), 5)
    with pytest.raises(InputError):
        sampled_lipschitz(car_model(), X_WS, 1)


def test_unvectorized_user_model():
    model = DynamicsModel(1, 1, lambda x: 0.5 * np.asarray(x), lambda x: np.array([[1.0]]))
    assert not model.lipschitz_known
    s = sampled_sups(model, Box([-2.0], [2.0]), 5)
    assert s.sup_f_minus_x == pytest.approx(1.0)
    est = sampled_lipschitz(model, Box([-2.0], [2.0]), 5)
    assert est.L_f == pytest.approx(0.5 * 1.05)


def test_model_from_config():
    car = model_from_config({"model": "car", "V": 0.3, "ts": 0.01})
    assert car.name == "car" and car.provenance == "analytic"
    car2 = model_from_config({"model": "car", "V": 0.3, "ts": 0.01, "Lf": 1.003, "Lg": 0.0})
    assert car2.L_f == 1.003 and car2.provenance == "user"
    lin = model_from_config({"model": "linear", "A": [[2, 0], [0, 2]], "c": [0, 1], "G": [[1], [0]]})
    assert np.allclose(step(lin, [1, 1], [1]), [3, 3])
    with pytest.raises(InputError):
        model_from_config({"model": "pendulum"})
    with pytest.raises(InputError):
        model_from_config({"model": "linear"})


def _box_sup_abs_affine(w, b, box):
    top = np.sum(np.where(w > 0, w * box.upper, w * box.lower)) + b
    bot = np.sum(np.where(w > 0, w * box.lower, w * box.upper)) + b
    return max(abs(top), abs(bot))


def _quotients(F, X):
    dx = np.linalg.norm(X[:, None] - X[None], axis=2)
    dy = np.linalg.norm(F[:, None] - F[None], axis=2)
    mask = dx > 0
    return float(np.max(dy[mask] / dx[mask]))


def test_input_term_lipschitz_bound_car():
    """||g u(x) - g u(y)|| / ||x - y|| <= L_g sup|u| + ||w|| sup||g|| for affine u."""
    car = car_model()
    rng = np.random.default_rng(3)
    X = X_WS.grid(7)
    for _ in range(10):
        w, b = rng.normal(size=3), rng.normal() * 3
        F = car.g_batch(X)[:, :, 0] * (X @ w + b)[:, None]
        bound = car.L_g * _box_sup_abs_affine(w, b, X_WS) + np.linalg.norm(w) * 0.01
        assert _quotients(F, X) <= bound + 1e-9


def test_input_term_lipschitz_bound_state_dependent_g():
    # g has Lipschitz constant exactly 0.1 and sup norm 0.1
    def g(x):
        return 0.1 * np.stack([np.sin(x[..., 0]), np.cos(x[..., 1])], axis=-1)[..., None]

    model = DynamicsModel(2, 1, lambda x: np.asarray(x), g, 1.0, 0.1, vectorized=True)
    box = Box([-2.0, -1.0], [1.5, 2.5])
    X = box.grid(25)
    sup_g = float(np.max(np.linalg.norm(model.g_batch(X)[:, :, 0], axis=1)))
    sup_g = max(sup_g, 0.1)
    rng = np.random.default_rng(4)
    for _ in range(10):
        w, b = rng.normal(size=2), rng.normal()
        F = model.g_batch(X)[:, :, 0] * (X @ w + b)[:, None]
        bound = 0.1 * _box_sup_abs_affine(w, b, box) + np.linalg.norm(w) * sup_g
        assert _quotients(F, X) <= bound + 1e-9
