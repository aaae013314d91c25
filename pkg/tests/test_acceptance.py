"""End-to-end acceptance checks on the bundled SEM/BOP model.

Each test prints a single ``criterion N: PASS|FAIL`` line (visible with ``-v``
or ``-s``) and then asserts the same condition.
"""

from pathlib import Path

import numpy as np
import pytest
from scipy import linalg

from _toys import block_state_keys, brute_force_generator, random_costs, random_toy, sem_config
from modmaint.maintenance import (
    build_cost_matrix,
    build_maintenance_matrix,
    build_policy,
    case_probabilities,
    evolve,
    expected_cycle_cost,
    expected_down_cost,
    initial_cycle_law,
    post_inspection_system_law,
)
from modmaint.markov import mat_exp, ph_mean
from modmaint.moma import build_system
from modmaint.simulate import SimConfig, grid_optimize, system_mean_lifetime

PRINTED = Path(__file__).parent / "fixtures" / "printed"

# reference values for the four downtime-cost scenarios (1e-3, 1e-2, 1e-1, 1 per hour)
REF_COST = (17.4791, 24.4786, 42.0189, 87.0051)
REF_TAU_H = (8300.0, 4390.0, 2200.0, 980.0)


@pytest.fixture(scope="module")
def cfg():
    return sem_config()


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_criterion_1_module_generators(cfg, report):
    bad = []
    for i, m in enumerate(cfg.system.modules, start=1):
        printed = np.loadtxt(PRINTED / f"Q{i}.txt")
        decimals = 2 if i == 2 else 3  # processor rates are printed to two places
        if m.Q_op.shape != printed.shape or not np.array_equal(np.round(m.Q_op, decimals), printed):
            bad.append(i)
    report(1, not bad, f"Q1..Q4 vs printed matrices, mismatching modules: {bad or 'none'}")


def test_criterion_2_state_count(cfg, report):
    s = cfg.system
    ok = s.n_up == 512 and s.n_states == 513
    report(2, ok, f"operative states {s.n_up}; down states before aggregation "
                  f"{s.n_down_raw} (module level), {s.n_down_raw_units} (unit level); 133 printed")


def test_criterion_3_mean_lifetime(cfg, report):
    mean_h = cfg.to_hours(ph_mean(cfg.system.lifetime()))
    rel = abs(mean_h - 24000.0) / 24000.0
    report(3, rel <= 0.02, f"mean lifetime {mean_h:.2f} h, relative error {rel:.4f} (tol 0.02)")


def test_criterion_4_maintenance_fixture(cfg, report):
    mods = cfg.system.modules
    cp = mods[0]
    M1 = build_maintenance_matrix(cp)[:, cp.u1]
    m1_ok = np.array_equal(M1, np.loadtxt(PRINTED / "M1.txt"))
    cols = []
    for i in (1, 2, 3):
        M = build_maintenance_matrix(mods[i])
        C = build_cost_matrix(mods[i], cfg.costs(0.0), i)
        cols.append((M * C).sum(axis=1))
    col_ok = all(np.array_equal(c, [1, 2, 2, 2, 4]) for c in cols)
    C1 = build_cost_matrix(cp, cfg.costs(0.0), 0)[:, cp.u1]
    n_diff = int((C1 != np.loadtxt(PRINTED / "C1.txt")).sum())
    report(4, m1_ok and col_ok, f"M1 exact: {m1_ok}; cost column (1,2,2,2,4) for modules 2-4: {col_ok}; "
                                f"printed C1 differs from the composition rule in {n_diff} entries (reported)")


def test_criterion_5_optimization(cfg, report):
    sim = cfg.sim_config()
    rows, ok = [], True
    results = []
    for k, (name, costs) in enumerate(cfg.scenarios()):
        policy = build_policy(cfg.system, costs, cfg.accounting, cfg.form)
        res = grid_optimize(policy, sim)
        step_h = cfg.to_hours(res.taus[1] - res.taus[0])
        tau_h = cfg.to_hours(res.tau_star)
        cost_err = abs(res.total_cost - REF_COST[k]) / REF_COST[k]
        steps = abs(tau_h - REF_TAU_H[k]) / step_h
        ok &= cost_err <= 0.10 and steps <= 2.0
        results.append((tau_h, res.total_cost))
        rows.append(f"s{name}: tau*={tau_h:.0f} h ({steps:.2f} steps), cost={res.total_cost:.3f} "
                    f"+/- {res.total_se:.3f} ({100 * cost_err:.1f}%)")
    taus, costs = zip(*results)
    order = all(a > b for a, b in zip(taus, taus[1:])) and all(a < b for a, b in zip(costs, costs[1:]))
    ok &= order
    detail = (f"R={sim.R} M={sim.M} horizon={cfg.to_hours(sim.horizon):.0f} h seed={sim.seed}; "
              + "; ".join(rows) + f"; strict orderings: {order}")
    report(5, ok, detail)


def test_criterion_6_oracle_equivalence(report):
    rng = np.random.default_rng(20240601)
    n_toys, n_costs = 25, 5
    q_ok, mc_ok, worst = 0, 0, 0.0
    for t in range(n_toys):
        specs, top = random_toy(rng, n_modules=2, max_units=3)
        system = build_system(specs, top)
        keys, Qb = brute_force_generator(specs, top)
        ours = block_state_keys(system)
        idx = {k: i for i, k in enumerate(ours)}
        if set(ours) == set(keys):
            perm = [idx[k] for k in keys]
            Qo = system.Q[np.ix_(perm, perm)]
            # identical up to the order in which merged rates are summed
            ulp = 4 * np.finfo(float).eps * np.abs(Qb).max()
            q_ok += bool(np.all((Qo > 0) == (Qb > 0)) and np.abs(Qo - Qb).max() <= ulp)
        tau = 0.5 * system_mean_lifetime(system)
        law = initial_cycle_law(system)
        for c in range(n_costs):
            costs = random_costs(rng)
            policy = build_policy(system, costs, ("global", "per_module")[c % 2], "exact")
            res = grid_optimize(policy, SimConfig(R=4000, M=2, seed=1000 * t + c), taus=np.array([tau]))
            z = abs(res.av_cost[0] - expected_cycle_cost(law, policy, tau)) / max(res.av_se[0], 1e-300)
            worst = max(worst, z)
            mc_ok += z <= 4.0
    ok = q_ok == n_toys and mc_ok == n_toys * n_costs
    report(6, ok, f"{q_ok}/{n_toys} generators equal the brute-force chain (<= 4 ulp on summed rates); "
                  f"{mc_ok}/{n_toys * n_costs} Monte-Carlo means within 4 SE (worst {worst:.2f} SE)")


def test_criterion_7_properties(cfg, report):
    rng = np.random.default_rng(77)
    checks = {}
    systems = [cfg.system] + [build_system(*random_toy(rng, erlang=True)) for _ in range(10)]
    checks["row sums"] = all(
        np.abs(s.Q.sum(1)).max() <= 1e-10 and all(np.abs(m.generator.sum(1)).max() <= 1e-10 for m in s.modules)
        for s in systems)

    m_ok = p_ok = d_ok = e_ok = True
    for s in systems:
        costs = random_costs(rng)
        policy = build_policy(s, costs, "per_module", "literal")
        for m, M in zip(s.modules, policy.M):
            outside = np.setdiff1d(np.arange(m.n_ext), m.ext_u1)
            m_ok &= np.abs(M.sum(1) - 1).max() <= 1e-12 and M.min() >= 0 and np.all(M[:, outside] == 0)
        tau = 0.3 * system_mean_lifetime(s)
        law = initial_cycle_law(s)
        for _ in range(5):
            p = evolve(law.alpha, s, tau)
            p_ok &= abs(sum(case_probabilities(p, s)) - 1.0) <= 1e-10
            law = post_inspection_system_law(law, policy, tau, p)
        for t in (0.2 * tau, tau, 4 * tau):
            quad = expected_down_cost(s.alpha, s, t, costs, "quadrature")
            closed = expected_down_cost(s.alpha, s, t, costs, "closed_form")
            d_ok &= abs(quad - closed) <= 1e-8
        for a, b in ((0.1 * tau, 0.7 * tau), (tau, 2 * tau)):
            e_ok &= np.abs(mat_exp(s.Q, a + b) - mat_exp(s.Q, a) @ mat_exp(s.Q, b)).max() <= 1e-8
        if s is cfg.system:
            e_ok &= np.abs(mat_exp(s.Q, tau) - linalg.expm(s.Q * tau)).max() <= 1e-8
    checks.update({"M rows stochastic onto U1": m_ok, "P(U1)+P(U2)+P(D)=1": p_ok,
                   "quadrature = closed form": d_ok, "semigroup": e_ok})

    policy = build_policy(cfg.system, cfg.costs(0.01), "global", "exact")
    base = dict(R=2000, M=5, seed=31, block_size=250)
    runs = [grid_optimize(policy, SimConfig(**base, workers=w)).objective for w in (1, 2, 4)]
    checks["seed determinism across workers"] = all(np.array_equal(runs[0], r) for r in runs[1:])

    failed = [k for k, v in checks.items() if not v]
    report(7, not failed, f"{len(checks)} property groups, failing: {failed or 'none'}")
