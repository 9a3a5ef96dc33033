"""Benchmark systems: dissipative spin lattices, driven Kerr cavities and cat-qubit gates."""

from .bosonic import FAFParams, build_faf, g1_observable, photon_number, vacuum_density
from .cat import (
    CatGateParams,
    analytic_phase_flip,
    build_cat_gate,
    cat_kernel_operators,
    gate_error_probabilities,
    initial_density,
)
from .spin import XYZParams, all_down_density, build_xyz, tfim_params, xyz_observables

__all__ = [
    "FAFParams", "build_faf", "g1_observable", "photon_number", "vacuum_density",
    "CatGateParams", "analytic_phase_flip", "build_cat_gate", "cat_kernel_operators",
    "gate_error_probabilities", "initial_density",
    "XYZParams", "all_down_density", "build_xyz", "tfim_params", "xyz_observables",
]
