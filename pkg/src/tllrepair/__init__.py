"""Repair of unsafe Two-Level Lattice (TLL) ReLU controllers.

The main entry point is :func:`repair_tll`; see the submodules for the
building blocks:

* :mod:`tllrepair.tll`: TLL networks, evaluation, lowering and activation analysis
* :mod:`tllrepair.dynamics`: input-affine systems, simulation and sampled bounds
* :mod:`tllrepair.bounds`: safety sets, reach-set bounds and counterexample search
* :mod:`tllrepair.socp`: a small second-order cone program builder and solver
* :mod:`tllrepair.repair`: the two repair programs and the full pipeline
"""
__version__ = "0.1.0"

from .bounds import (
    BoundCertificate,
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
from .dynamics import Box, DynamicsModel, Trajectory, car_model, linear_model, sampled_lipschitz, sampled_sups, simulate, step
from .errors import BudgetError, BuilderError, InputError
from .repair import RepairConfig, RepairResult, repair_tll, validate_repair
from .tll import (
    ActivationPattern,
    ScalarTll,
    TllNetwork,
    active_indices,
    check_activation,
    eval_lattice,
    lower_to_relu,
)
