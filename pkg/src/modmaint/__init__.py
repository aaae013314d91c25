"""Hierarchical inspection and maintenance of modular systems built from phase-type units."""

from .config import ModelConfig, bundled_config_path, load_config
from .errors import ConfigError, ModelError
from .maintenance import (
    CostParams,
    Policy,
    build_cost_matrix,
    build_maintenance_matrix,
    build_policy,
    cycle_cost_breakdown,
    cycle_costs,
    expected_cycle_cost,
    expected_down_cost,
    initial_cycle_law,
    total_expected_cost,
)
from .markov import (
    MapProcess,
    PhDistribution,
    kron_product,
    kron_sum,
    mat_exp,
    ph_density,
    ph_mean,
    ph_reliability,
    transient_law,
)
from .moma import ModuleSpec, Structure, SystemModel, UnitSpec, build_module_wear_generator, build_system
from .simulate import SimConfig, analytic_sweep, grid_optimize, sample_path

__version__ = "0.1.0"
