"""Randomized invariants checked with hypothesis."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from _toys import random_costs, random_toy
from modmaint.maintenance import (
    build_policy,
    case_probabilities,
    cycle_cost_breakdown,
    evolve,
    expected_down_cost,
    initial_cycle_law,
    post_inspection_system_law,
)
from modmaint.markov import mat_exp
from modmaint.moma import build_module_wear_generator, build_system
from modmaint.simulate import SimConfig, grid_optimize

seeds = st.integers(0, 2**32 - 1)
common = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def toy(seed, **kw):
    rng = np.random.default_rng(seed)
    specs, top = random_toy(rng, erlang=True, **kw)
    return build_system(specs, top), rng


@common
@given(seeds)
def test_generator_rows_sum_to_zero(seed):
    system, _ = toy(seed)
    np.testing.assert_allclose(system.Q.sum(axis=1), 0.0, atol=1e-10)
    for m in system.modules:
        np.testing.assert_allclose(m.generator.sum(axis=1), 0.0, atol=1e-10)
        off = m.generator - np.diag(np.diag(m.generator))
        assert off.min() >= 0.0


@common
@given(seeds)
def test_maintenance_rows_stochastic_onto_optimal_states(seed):
    system, rng = toy(seed)
    policy = build_policy(system, random_costs(rng), "global", "exact")
    for m, M in zip(system.modules, policy.M):
        np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-12)
        assert M.min() >= 0.0
        outside = np.setdiff1d(np.arange(m.n_ext), m.ext_u1)
        assert np.all(M[:, outside] == 0.0)
    np.testing.assert_allclose(policy.M_sys.sum(axis=1), 1.0, atol=1e-12)


@common
@given(seeds, st.floats(0.01, 2.0), st.sampled_from(["literal", "exact"]))
def test_case_probabilities_sum_to_one_every_cycle(seed, tau, form):
    system, rng = toy(seed)
    policy = build_policy(system, random_costs(rng), "per_module", form)
    law = initial_cycle_law(system)
    for _ in range(4):
        p = evolve(law.alpha, system, tau)
        assert abs(sum(case_probabilities(p, system)) - 1.0) < 1e-10
        assert cycle_cost_breakdown(law, policy, tau, p).total >= 0.0
        law = post_inspection_system_law(law, policy, tau, p)
        assert abs(law.alpha.sum() - 1.0) < 1e-10


@common
@given(seeds, st.floats(0.01, 3.0))
def test_downtime_quadrature_equals_closed_form(seed, tau):
    system, rng = toy(seed)
    costs = random_costs(rng)
    quad = expected_down_cost(system.alpha, system, tau, costs, "quadrature")
    closed = expected_down_cost(system.alpha, system, tau, costs, "closed_form")
    assert abs(quad - closed) < 1e-8


@common
@given(seeds, st.floats(0.0, 1.5), st.floats(0.0, 1.5))
def test_mat_exp_semigroup(seed, s, t):
    system, _ = toy(seed)
    for q in (system.Q, build_module_wear_generator(system.modules[0].spec).generator):
        np.testing.assert_allclose(mat_exp(q, s + t), mat_exp(q, s) @ mat_exp(q, t), atol=1e-8)


@settings(max_examples=6, deadline=None)
@given(seeds, st.integers(2, 4), st.integers(1, 3))
def test_grid_optimize_deterministic_under_parallelism(seed, workers, block_exp):
    system, rng = toy(seed)
    policy = build_policy(system, random_costs(rng), "global", "exact")
    cfg = dict(R=240, M=3, seed=seed, block_size=16 * block_exp)
    a = grid_optimize(policy, SimConfig(**cfg, workers=1))
    b = grid_optimize(policy, SimConfig(**cfg, workers=workers))
    np.testing.assert_array_equal(a.objective, b.objective)
    np.testing.assert_array_equal(a.objective_se, b.objective_se)
