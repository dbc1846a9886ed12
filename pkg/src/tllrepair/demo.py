"""Synthetic car scenario with a faulty TLL controller.

The network (50 local linear functions, 10 selector groups) behaves like
a yaw regulator almost everywhere, but in a small pocket around the
counterexample state ``(0, 2.999, 0.2)`` its active local controller is
the faulty affine law

    u = (-0.1442, -0.5424, -0.425) . x + 2.223

which steers the car across the line ``x2 = 3`` within two steps.

Layout of the linear layer (zero-based rows):

* 0: the faulty law;
* 1: a constant +11 (upper saturation, same group as the faulty law);
* 2-4: "ceiling" rows, equal to the faulty law plus a small offset at the
  counterexample and rising with ``x2`` and ``x3``; away from the pocket
  they undercut it, so it loses its group's minimum;
* 5-13: one heading regulator ``-a (x3 + theta)`` per remaining group,
  below the faulty law's value at the counterexample;
* 14-48: filler rows close to +11 that never attain a group minimum;
* 49: a constant -11 (lower saturation) in the last group.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bounds import Polytope, SafetySpec
from .dynamics import Box, DynamicsModel, car_model
from .repair import RepairConfig
from .tll import ScalarTll, TllNetwork

__all__ = ["CarScenario", "FAULTY_W", "FAULTY_B", "X_CE", "car_scenario", "car_network", "write_scenario"]

FAULTY_W = np.array([-0.1442, -0.5424, -0.425])
FAULTY_B = 2.223
X_CE = np.array([0.0, 2.999, 0.2])


@dataclass(frozen=True)
class CarScenario:
    model: DynamicsModel
    spec: SafetySpec
    net: TllNetwork
    x_ce: np.ndarray
    config: RepairConfig
    search_region: Box
    search_grid: int


def car_spec(T: int = 7) -> SafetySpec:
    return SafetySpec(
        X_ws=Box([-3.0, -4.0, -math.pi], [3.0, 4.0, math.pi]),
        X_safe=Box([-0.25, -0.75, -math.pi / 8], [0.25, -0.25, math.pi / 8]),
        X_unsafe=Polytope([[0.0, 1.0, 0.0]], [3.0]),
        T=T,
    )


def car_network(seed: int = 7, N: int = 50, M: int = 10) -> TllNetwork:
    """The faulty demo controller (deterministic for a given ``seed``)."""
    if N < 16 or M < 2 or M - 1 > 9:
        raise ValueError("the demo layout needs N >= 16 and 2 <= M <= 10")
    rng = np.random.default_rng(seed)
    W = np.zeros((N, 3))
    b = np.zeros(N)
    W[0], b[0] = FAULTY_W, FAULTY_B
    b[1] = 11.0
    k_ce = float(FAULTY_W @ X_CE + FAULTY_B)
    ceilings = [((0.0, 0.9, 0.9), 0.05), ((0.1, 0.8, 0.9), 0.08), ((-0.1, 0.9, 0.8), 0.1)]
    for r, (w, off) in enumerate(ceilings, start=2):
        W[r] = w
        b[r] = k_ce + off - W[r] @ X_CE
    floors = list(range(5, 5 + M - 1))
    for r in floors:
        a = rng.uniform(0.6, 1.0)
        theta = rng.uniform(0.0, 0.5)
        W[r] = (0.0, 0.0, -a)
        b[r] = -a * theta
    filler = list(range(5 + M - 1, N - 1))
    for r in filler:
        W[r] = rng.uniform(-0.1, 0.1, size=3)
        b[r] = 11.0 + rng.uniform(-0.2, 0.0)
    b[N - 1] = -11.0

    selectors = [[0, 1, 2, 3, 4]]
    for j, r in enumerate(floors):
        extra = rng.choice(filler, size=int(rng.integers(3, 7)), replace=False).tolist()
        grp = [r] + extra
        if j == len(floors) - 1:
            grp.append(N - 1)
        selectors.append(sorted(grp))
    return TllNetwork((ScalarTll(W, b, selectors),))


def car_scenario(seed: int = 7) -> CarScenario:
    """Model, sets, faulty network, counterexample and repair settings.

    The repair looks two steps ahead from the counterexample: in this
    model the position rows of ``g`` are zero, so the input can only move
    ``x2`` from the second step on.
    """
    config = RepairConfig(margin_eps=1e-4, ce_horizon=2, repair_horizon=2)
    region = Box(X_CE, X_CE + np.array([0.5, 0.001, 0.4]))
    return CarScenario(car_model(0.3, 0.01), car_spec(), car_network(seed), X_CE.copy(), config, region, 5)


def write_scenario(outdir, seed: int = 7) -> dict:
    """Write ``dynamics.json``, ``spec.json``, ``network.json`` and ``scenario.json``."""
    sc = car_scenario(seed)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "dynamics": out / "dynamics.json",
        "spec": out / "spec.json",
        "network": out / "network.json",
        "scenario": out / "scenario.json",
    }
    paths["dynamics"].write_text(json.dumps(sc.model.config, indent=1))
    paths["spec"].write_text(json.dumps(sc.spec.to_dict(), indent=1))
    sc.net.save(paths["network"])
    paths["scenario"].write_text(json.dumps({
        "x_ce": sc.x_ce.tolist(),
        "search_region": sc.search_region.to_dict(),
        "search_grid": sc.search_grid,
        "config": sc.config.to_dict(),
    }, indent=1))
    return {k: str(v) for k, v in paths.items()}
