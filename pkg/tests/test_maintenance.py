from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from _toys import random_costs, sem_config, sem_costs, toy_system
from modmaint.errors import ModelError
from modmaint.maintenance import (
    CostParams,
    build_cost_matrix,
    build_maintenance_matrix,
    build_policy,
    build_selector,
    cycle_cost_breakdown,
    cycle_costs,
    evolve,
    expected_down_cost,
    initial_cycle_law,
    post_inspection_system_law,
    total_expected_cost,
)
from modmaint.markov import PhDistribution, ph_reliability
from modmaint.moma import ModuleSpec, Structure, UnitSpec, build_system

PRINTED = Path(__file__).parent / "fixtures" / "printed"


@pytest.fixture(scope="module")
def sem():
    return sem_config().system


def single_unit_system(rate):
    return build_system([ModuleSpec((UnitSpec(PhDistribution.exponential(rate)),))], Structure.series())


# -- matrices ---------------------------------------------------------------------

def test_m1_matches_printed(sem):
    cp = sem.modules[0]
    M = build_maintenance_matrix(cp)
    np.testing.assert_array_equal(M[:, cp.u1], np.loadtxt(PRINTED / "M1.txt"))
    assert np.all(M[:, cp.u2] == 0) and np.all(M[:, cp.d] == 0)


def test_cost_column_of_two_out_of_three_modules(sem):
    for i in (1, 2, 3):
        m = sem.modules[i]
        M = build_maintenance_matrix(m)
        C = build_cost_matrix(m, sem_costs(), i)
        np.testing.assert_array_equal((M * C).sum(axis=1), [1, 2, 2, 2, 4])
        np.testing.assert_array_equal(M[:, 0], np.ones(5))


def test_c1_composition_rule_and_printed_differences(sem):
    """The printed C1 is not reproduced; its entries disagree with the stated composition rule."""
    cp = sem.modules[0]
    C = build_cost_matrix(cp, sem_costs(), 0)[:, cp.u1]
    M = build_maintenance_matrix(cp)[:, cp.u1]
    printed = np.loadtxt(PRINTED / "C1.txt")
    # rule: C_I on the optimal diagonal, C_I + restore cost for critical targets, C_I + C_RM on the down row
    np.testing.assert_array_equal(np.diag(C[:4]), [1, 1, 1, 1])
    np.testing.assert_array_equal(C[4], [2, 1.5, 0, 0])
    np.testing.assert_array_equal(C[8], [4, 4, 4, 4])
    # same support as M, except the printed zero on the optimal diagonal
    assert np.array_equal(C > 0, M > 0)
    diff = np.argwhere(C != printed)
    assert (2, 2) in {tuple(d) for d in diff}
    assert len(diff) == 13


def test_global_accounting_drops_module_inspection_cost(sem):
    cp = sem.modules[0]
    per = build_cost_matrix(cp, sem_costs(), 0, "per_module")
    glob = build_cost_matrix(cp, sem_costs(), 0, "global")
    M = build_maintenance_matrix(cp)
    np.testing.assert_allclose((M * per).sum(1) - (M * glob).sum(1), np.ones(cp.n_base))
    with pytest.raises(ModelError):
        build_cost_matrix(cp, sem_costs(), 0, "nope")


def test_maintenance_rows_are_distributions_on_optimal_states(sem):
    for m in sem.modules:
        M = build_maintenance_matrix(m)
        np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-12)
        outside = np.setdiff1d(np.arange(m.n_base), m.u1)
        assert np.all(M[:, outside] == 0)


def test_non_optimal_repair_target_rejected():
    # restoring the failed unit to phase 1 lands outside an explicitly narrowed optimal class
    ph = PhDistribution.erlang(2, 1.0)
    spec = ModuleSpec((UnitSpec(ph), UnitSpec(ph)), Structure.parallel(),
                      repair_laws=(np.array([0.5, 0.5]),) * 2, optimal_states=((0, 0),))
    m = build_system([spec], Structure.series()).modules[0]
    with pytest.raises(ModelError):
        build_maintenance_matrix(m)


def test_cost_params_validation():
    with pytest.raises(ModelError):
        CostParams(C_I=-1)
    with pytest.raises(ModelError):
        CostParams(restore=(1.0, float("nan")))
    c = CostParams(C_RM=[1.0, [2.0, 3.0]])
    np.testing.assert_array_equal(c.replacement_cost(1, 2), [2.0, 3.0])
    with pytest.raises(ModelError):
        c.replacement_cost(1, 3)
    with pytest.raises(ModelError):
        c.replacement_cost(4, 1)
    with pytest.raises(ModelError):
        CostParams(restore=(1.0,)).restore_cost(0, 0, 1)


def test_selector_for_series_system(sem):
    for i, m in enumerate(sem.modules):
        diag = np.diag(build_selector(sem, i))
        assert np.all(diag[:-1] == 1.0) and diag[-1] == 0.0


# -- cycle quantities ------------------------------------------------------------------

@pytest.mark.parametrize("form", ["literal", "exact"])
@pytest.mark.parametrize("accounting", ["per_module", "global"])
def test_case_probabilities_sum_to_one(sem, form, accounting):
    policy = build_policy(sem, sem_costs(0.01), accounting, form)
    law = initial_cycle_law(sem)
    for _ in range(6):
        p = evolve(law.alpha, sem, 0.05)
        nxt = post_inspection_system_law(law, policy, 0.05, p)
        assert sum(nxt.probs) == pytest.approx(1.0, abs=1e-10)
        assert nxt.alpha[sem.n_u1:-1].sum() == pytest.approx(0.0, abs=1e-12)
        assert nxt.alpha[:sem.n_u1].sum() + nxt.alpha[-1] == pytest.approx(1.0, abs=1e-9)
        law = nxt


@pytest.mark.parametrize("tau", [0.01, 0.08297, 0.3])
def test_down_cost_quadrature_equals_closed_form(sem, tau):
    costs = sem_costs(0.1)
    law = initial_cycle_law(sem)
    q = expected_down_cost(law, sem, tau, costs, "quadrature")
    c = expected_down_cost(law, sem, tau, costs, "closed_form")
    assert q == pytest.approx(c, abs=1e-8)
    # integrated distribution function identity from an independent reliability integral
    life = sem.lifetime()
    F_int, _ = integrate.quad(lambda t: 1.0 - ph_reliability(life, t), 0, tau, epsabs=1e-12)
    assert c == pytest.approx(costs.C_down * F_int, abs=1e-8)


def test_down_cost_from_later_cycle(sem):
    policy = build_policy(sem, sem_costs(1.0), "global", "exact")
    law = initial_cycle_law(sem)
    for _ in range(3):
        law = post_inspection_system_law(law, policy, 0.05)
    q = expected_down_cost(law, sem, 0.05, policy.costs, "quadrature")
    c = expected_down_cost(law, sem, 0.05, policy.costs, "closed_form")
    assert q == pytest.approx(c, abs=1e-8)


def test_nonlinear_down_cost():
    sysm = single_unit_system(2.0)
    costs = CostParams(down_cost=lambda d: np.asarray(d) ** 2)
    tau = 0.7
    val = expected_down_cost(sysm.alpha, sysm, tau, costs)
    # int f(t) g(tau - t) dt = int F(t) g'(tau - t) dt for g(0) = 0
    oracle, _ = integrate.quad(lambda t: (1 - np.exp(-2 * t)) * 2 * (tau - t), 0, tau)
    assert val == pytest.approx(oracle, abs=1e-9)
    with pytest.raises(ModelError):
        expected_down_cost(sysm.alpha, sysm, tau, costs, "closed_form")
    assert expected_down_cost(sysm.alpha, sysm, 0.0, costs) == 0.0


@pytest.mark.parametrize("form", ["literal", "exact"])
def test_single_exponential_unit_closed_form(form):
    lam, tau, A = 1.7, 0.4, 5
    costs = CostParams(C_I=1.0, C_SR=9.0, C_down=3.0)
    policy = build_policy(single_unit_system(lam), costs, "global", form)
    pd = 1 - np.exp(-lam * tau)
    ecd = costs.C_down * (tau - pd / lam)
    # the literal form weights the downtime cost by P(D) once more
    per_cycle = costs.C_I + costs.C_SR * pd + (ecd if form == "exact" else pd * ecd)
    np.testing.assert_allclose(cycle_costs(policy, tau, A), per_cycle, rtol=1e-12)
    assert total_expected_cost(policy, tau, A) == pytest.approx(A * per_cycle, rel=1e-12)


@pytest.mark.parametrize("form", ["literal", "exact"])
def test_stationarity_with_singleton_optimal_classes(form):
    rng = np.random.default_rng(4)
    specs = [ModuleSpec((UnitSpec(PhDistribution.exponential(r)),) * 3, Structure.k_out_of_n(2), name=f"m{i}")
             for i, r in enumerate(rng.uniform(0.5, 2.5, 3))]
    sysm = build_system(specs, Structure.series())
    policy = build_policy(sysm, random_costs(rng), "per_module", form)
    c = cycle_costs(policy, 0.15, 8, "quadrature")
    np.testing.assert_allclose(c, c[0], atol=1e-8)


def test_accounting_difference_in_exact_form(sem):
    tau = 0.06
    law = initial_cycle_law(sem)
    per = cycle_cost_breakdown(law, build_policy(sem, sem_costs(0.01), "per_module", "exact"), tau)
    glob = cycle_cost_breakdown(law, build_policy(sem, sem_costs(0.01), "global", "exact"), tau)
    K = len(sem.modules)
    assert per.total - glob.total == pytest.approx((K - 1) * 1.0 * per.probs[1], abs=1e-10)


def test_literal_form_module_cost_by_hand(sem):
    """Module cost = alpha_i exp(Q_i tau) D_i (M_i o C_i) e, checked with scipy's expm."""
    from scipy.linalg import expm

    policy = build_policy(sem, sem_costs(0.001), "per_module", "literal")
    tau = 0.08
    br = cycle_cost_breakdown(initial_cycle_law(sem), policy, tau)
    for i, m in enumerate(sem.modules):
        M = build_maintenance_matrix(m)
        C = build_cost_matrix(m, policy.costs, i)
        sel = build_selector(sem, i)
        hand = m.alpha @ expm(m.generator * tau) @ sel @ (M * C).sum(1)
        assert br.module_costs[i] == pytest.approx(hand, rel=1e-10)


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("form", ["literal", "exact"])
def test_cost_monotonicity(seed, form):
    system, _, _, rng = toy_system(seed + 50)
    base = random_costs(rng)
    tau, A = 0.3, 4
    ref = total_expected_cost(build_policy(system, base, "per_module", form), tau, A)
    bumps = {"C_I": base.C_I + 1, "C_SR": base.C_SR + 2, "C_RM": float(base.C_RM) + 1,
             "C_down": base.C_down + 3, "restore": tuple(np.asarray(base.restore) + 0.5)}
    for key, val in bumps.items():
        bumped = total_expected_cost(build_policy(system, base.with_(**{key: val}), "per_module", form), tau, A)
        assert bumped >= ref - 1e-12, key


def test_policy_errors(sem):
    with pytest.raises(ModelError):
        build_policy(sem, sem_costs(), accounting="x")
    with pytest.raises(ModelError):
        build_policy(sem, sem_costs(), form="x")
    with pytest.raises(ModelError):
        cycle_costs(build_policy(sem, sem_costs()), 0.1, 0)


def test_shocked_module_policy_is_consistent():
    from modmaint.markov import MapProcess

    shock = MapProcess(np.array([[-2.0, 1.0], [0.5, -1.5]]), np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([1.0, 0.0]))
    spec = ModuleSpec((UnitSpec(PhDistribution.exponential(1.0)),) * 2, Structure.parallel(), shock=shock, p1=0.3)
    other = ModuleSpec((UnitSpec(PhDistribution.exponential(0.5)),))
    sysm = build_system([spec, other], Structure.series())
    policy = build_policy(sysm, CostParams(C_down=2.0), "global", "exact")
    for M in policy.M:
        np.testing.assert_allclose(M.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(policy.M_sys.sum(axis=1), 1.0, atol=1e-12)
    law = initial_cycle_law(sysm)
    for _ in range(4):
        law = post_inspection_system_law(law, policy, 0.2)
        assert sum(law.probs) == pytest.approx(1.0, abs=1e-10)
        assert law.alpha.sum() == pytest.approx(1.0, abs=1e-9)
