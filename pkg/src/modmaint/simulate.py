"""Monte-Carlo path simulation and inspection-interval optimization.

The grid search follows the classic recipe: for each candidate interval
tau_m on an equispaced grid ending at the mean system lifetime, simulate R
first cycles, average their inspection costs and multiply by the number of
inspections A(m) fitting in the useful life; the interval with the lowest
product wins (ties go to the longer interval).

Random streams are Philox generators keyed by (seed, grid index, block
index), where a block is a fixed run of replications; results therefore do
not depend on how many worker processes share the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .maintenance import Policy, cycle_costs
from .markov import ph_mean
from .moma import SystemModel

A_RULES = ("ceil", "round", "exact")


def system_mean_lifetime(system: SystemModel) -> float:
    return ph_mean(system.lifetime())


def inspection_count(horizon: float, tau, rule: str = "ceil"):
    """Number of inspections A fitting in ``horizon`` for interval ``tau``."""
    ratio = np.asarray(horizon / np.asarray(tau, dtype=float))
    if rule == "ceil":
        return np.maximum(1, np.ceil(ratio - 1e-9))
    if rule == "round":
        return np.maximum(1, np.floor(ratio + 0.5))
    if rule == "exact":
        return ratio.astype(float)
    raise ModelError(f"A rule must be one of {A_RULES}")


def make_grid(tau_max: float, m: int) -> np.ndarray:
    if m < 1:
        raise ModelError("the grid needs at least one point")
    return tau_max * np.arange(1, m + 1) / m


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# -- paths -----------------------------------------------------------------------

@dataclass
class SamplePath:
    """Visited states and the times they were entered; the first entry is the start at t=0."""

    states: list[int]
    times: list[float]

    @property
    def final_state(self) -> int:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return self.times[-1]

    @property
    def jumps(self) -> list[tuple[int, float]]:
        return list(zip(self.states[1:], self.times[1:]))


@dataclass(frozen=True)
class JumpTables:
    """Embedded jump chain of a generator in padded sparse form."""

    rate: np.ndarray       # total exit rate per state (0 for absorbing)
    targets: np.ndarray    # (n, width) target indices
    cum: np.ndarray        # (n, width) cumulative jump probabilities
    degree: np.ndarray

    @classmethod
    def from_generator(cls, q: np.ndarray) -> "JumpTables":
        n = q.shape[0]
        off = q.copy()
        np.fill_diagonal(off, 0.0)
        rate = off.sum(axis=1)
        degree = (off > 0).sum(axis=1)
        width = max(1, int(degree.max()))
        targets = np.zeros((n, width), dtype=int)
        cum = np.ones((n, width))
        for s in range(n):
            nz = np.flatnonzero(off[s] > 0)
            if nz.size == 0:
                targets[s] = s
                continue
            c = np.cumsum(off[s, nz]) / rate[s]
            c[-1] = 1.0
            targets[s, :nz.size] = nz
            targets[s, nz.size:] = nz[-1]
            cum[s, :nz.size] = c
        return cls(rate, targets, cum, degree)


def sample_path(system: SystemModel, alpha, horizon: float, rng: np.random.Generator,
                tables: JumpTables | None = None) -> SamplePath:
    """Simulate one path on [0, horizon]: exponential holding times, embedded jump chain."""
    tables = tables or JumpTables.from_generator(system.Q)
    alpha = np.asarray(alpha, dtype=float)
    state = int(rng.choice(alpha.shape[0], p=alpha / alpha.sum()))
    states, times = [state], [0.0]
    t = 0.0
    while tables.rate[state] > 0:
        t_next = t + rng.exponential(1.0 / tables.rate[state])
        if t_next > horizon:
            break
        u = 1.0 - rng.random()
        k = min(int(np.searchsorted(tables.cum[state], u)), tables.degree[state] - 1)
        state = int(tables.targets[state, k])
        t = t_next
        states.append(state)
        times.append(t)
    return SamplePath(states, times)


def simulate_endpoints(tables: JumpTables, start: np.ndarray, horizon: float,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized paths from given start states; returns final states and their entry times."""
    state = np.array(start, dtype=int)
    t = np.zeros(state.shape[0])
    active = tables.rate[state] > 0
    while active.any():
        idx = np.flatnonzero(active)
        s = state[idx]
        t_next = t[idx] + rng.standard_exponential(idx.size) / tables.rate[s]
        stop = t_next > horizon
        active[idx[stop]] = False
        go = idx[~stop]
        if go.size == 0:
            break
        sg = state[go]
        u = 1.0 - rng.random(go.size)
        k = (tables.cum[sg] < u[:, None]).sum(axis=1)
        k = np.minimum(k, tables.degree[sg] - 1)
        state[go] = tables.targets[sg, k]
        t[go] = t_next[~stop]
        active[go] = tables.rate[state[go]] > 0
    return state, t


def _sample_rows(cum: np.ndarray, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = 1.0 - rng.random(rows.size)
    k = (cum[rows] < u[:, None]).sum(axis=1)
    return np.minimum(k, cum.shape[1] - 1)


# -- per-path costs ---------------------------------------------------------------

def state_costs(policy: Policy) -> np.ndarray:
    """Inspection cost by final state, excluding the downtime part."""
    system, costs = policy.system, policy.costs
    out = np.empty(system.n_states)
    out[system.u1] = costs.C_I
    out[system.u2] = policy.critical_cost()[system.u2]
    out[-1] = costs.C_I + costs.C_SR
    return out


def cycle_cost_sample(path: SamplePath, policy: Policy, tau: float) -> float:
    """Cost charged at the inspection closing one simulated cycle.

    Optimal: C_I.  Critical: C_I plus the expected repair cost of each module
    given its realized state (row sums of ``M_i o C_i``).  Down: C_I + C_SR
    plus the downtime cost from the failure instant to the inspection.
    """
    s = path.final_state
    cost = float(state_costs(policy)[s])
    if s == policy.system.d:
        cost += float(policy.costs.downtime_cost(tau - path.final_time))
    return cost


@dataclass
class _Context:
    tables: JumpTables
    state_cost: np.ndarray
    costs: object
    d: int
    n1: int
    alpha_cum: np.ndarray
    beta_cum: np.ndarray
    msys_cum: np.ndarray


def _context(policy: Policy) -> _Context:
    system = policy.system
    msys = policy.M_sys
    cum = np.cumsum(msys, axis=1)
    cum[:, -1] = 1.0
    a_cum = np.cumsum(system.alpha)
    a_cum[-1] = 1.0
    b_cum = np.cumsum(system.beta)
    b_cum[-1] = 1.0
    return _Context(JumpTables.from_generator(system.Q), state_costs(policy), policy.costs,
                    system.d, system.n_u1, a_cum, b_cum, cum)


def _block_costs(ctx: _Context, tau: float, n: int, rng: np.random.Generator, cycles: int) -> np.ndarray:
    u = 1.0 - rng.random(n)
    state = np.minimum((ctx.alpha_cum[None, :] < u[:, None]).sum(axis=1), ctx.d)
    total = np.zeros(n)
    for c in range(cycles):
        final, entered = simulate_endpoints(ctx.tables, state, tau, rng)
        cost = ctx.state_cost[final].copy()
        down = final == ctx.d
        if down.any():
            cost[down] += ctx.costs.downtime_cost(tau - entered[down])
        total += cost
        if c + 1 == cycles:
            break
        nxt = final.copy()
        crit = (final >= ctx.n1) & ~down
        if crit.any():
            nxt[crit] = _sample_rows(ctx.msys_cum, final[crit], rng)
        if down.any():
            ub = 1.0 - rng.random(int(down.sum()))
            nxt[down] = np.minimum((ctx.beta_cum[None, :] < ub[:, None]).sum(axis=1), ctx.d)
        state = nxt
    return total


_WORKER_CTX: _Context | None = None


def _init_worker(ctx: _Context) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _run_task(task) -> tuple[float, float]:
    m, b, tau, n, seed, cycles = task
    x = _block_costs(_WORKER_CTX, tau, n, stream(seed, m, b), cycles)
    return float(x.sum()), float((x * x).sum())


# -- optimization -------------------------------------------------------------------

@dataclass
class SimConfig:
    """Monte-Carlo grid settings.

    ``horizon`` is the useful life over which inspections are counted
    (defaults to the mean system lifetime); ``tau_max`` is the last grid
    point (defaults to the mean system lifetime).
    """

    R: int = 10_000
    M: int = 50
    seed: int = 12345
    horizon: float | None = None
    tau_max: float | None = None
    a_rule: str = "ceil"
    multi_cycle: bool = False
    block_size: int = 1000
    workers: int = 1

    def __post_init__(self):
        if self.R < 1:
            raise ModelError("R must be >= 1")
        if self.M < 2:
            raise ModelError("M must be >= 2")
        if self.a_rule not in A_RULES:
            raise ModelError(f"A rule must be one of {A_RULES}")
        if self.block_size < 1:
            raise ModelError("block size must be >= 1")


@dataclass
class OptimizationResult:
    method: str
    taus: np.ndarray
    A: np.ndarray
    av_cost: np.ndarray
    av_se: np.ndarray
    objective: np.ndarray
    objective_se: np.ndarray
    horizon: float
    a_rule: str
    R: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def m0(self) -> int:
        best = self.objective.min()
        return int(np.flatnonzero(self.objective == best)[-1])

    @property
    def tau_star(self) -> float:
        return float(self.taus[self.m0])

    @property
    def A_star(self) -> int:
        return int(max(1, math.floor(self.horizon / self.tau_star + 0.5))) if self.a_rule == "exact" \
            else int(self.A[self.m0])

    @property
    def total_cost(self) -> float:
        return float(self.objective[self.m0])

    @property
    def total_se(self) -> float:
        return float(self.objective_se[self.m0])

    def is_unimodal(self, n_se: float = 2.0, guard: int = 3) -> bool:
        """Objective decreases up to the argmin and increases after it, up to noise.

        Outside a window of ``guard`` points around the argmin, each step
        moving away from the argmin may not drop by more than ``n_se`` joint
        standard errors.
        """
        obj, se, m0 = self.objective, self.objective_se, self.m0
        for j in range(len(obj) - 1):
            if abs(j - m0) <= guard and abs(j + 1 - m0) <= guard:
                continue
            tol = n_se * math.hypot(se[j], se[j + 1])
            if j + 1 <= m0 and obj[j + 1] > obj[j] + tol:
                return False
            if j >= m0 and obj[j + 1] < obj[j] - tol:
                return False
        return True


def grid_optimize(policy: Policy, sim: SimConfig, taus: np.ndarray | None = None) -> OptimizationResult:
    """Monte-Carlo grid search for the inspection interval."""
    mu = system_mean_lifetime(policy.system)
    horizon = mu if sim.horizon is None else sim.horizon
    if taus is None:
        taus = make_grid(mu if sim.tau_max is None else sim.tau_max, sim.M)
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0:
        raise ModelError("empty grid")
    A = inspection_count(horizon, taus, sim.a_rule)
    cycles = (np.maximum(1, np.floor(A + 0.5)).astype(int) if sim.a_rule == "exact" else A.astype(int)) \
        if sim.multi_cycle else np.ones(taus.size, dtype=int)

    tasks = []
    for m, tau in enumerate(taus):
        for b, start in enumerate(range(0, sim.R, sim.block_size)):
            n = min(sim.block_size, sim.R - start)
            tasks.append((m, b, float(tau), n, sim.seed, int(cycles[m])))
    ctx = _context(policy)
    if sim.workers <= 1:
        _init_worker(ctx)
        sums = list(map(_run_task, tasks))
    else:
        with ProcessPoolExecutor(sim.workers, initializer=_init_worker, initargs=(ctx,)) as pool:
            sums = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * sim.workers))))

    s1 = np.zeros(taus.size)
    s2 = np.zeros(taus.size)
    for (m, *_), (a, b) in zip(tasks, sums):
        s1[m] += a
        s2[m] += b
    mean = s1 / sim.R
    var = np.maximum(s2 - sim.R * mean ** 2, 0.0) / max(sim.R - 1, 1)
    se = np.sqrt(var / sim.R)
    if sim.multi_cycle:
        objective, obj_se = mean, se
        per_cycle, per_cycle_se = mean / cycles, se / cycles
    else:
        objective, obj_se = mean * A, se * A
        per_cycle, per_cycle_se = mean, se
    return OptimizationResult("montecarlo-multi" if sim.multi_cycle else "montecarlo",
                              taus, A, per_cycle, per_cycle_se, objective, obj_se,
                              horizon, sim.a_rule, sim.R,
                              {"seed": sim.seed, "block_size": sim.block_size, "mu": mu})


def analytic_sweep(policy: Policy, taus, horizon: float | None = None, a_rule: str = "ceil",
                   mode: str = "recursive", down_method: str = "auto") -> OptimizationResult:
    """Deterministic counterpart of :func:`grid_optimize` built on the expected-cost formulas.

    ``mode="recursive"`` sums the expected costs of inspections 1..A through
    the cycle recursion; ``mode="first-cycle"`` multiplies the first-cycle
    cost by A, which is what the default Monte-Carlo run estimates.  With
    the ``exact`` A rule a fractional last cycle is weighted linearly.
    """
    if mode not in ("recursive", "first-cycle"):
        raise ModelError("mode must be 'recursive' or 'first-cycle'")
    mu = system_mean_lifetime(policy.system)
    horizon = mu if horizon is None else horizon
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0:
        raise ModelError("empty grid")
    A = inspection_count(horizon, taus, a_rule)
    obj = np.zeros(taus.size)
    first = np.zeros(taus.size)
    for m, tau in enumerate(taus):
        if mode == "first-cycle":
            c = cycle_costs(policy, tau, 1, down_method)
            first[m] = c[0]
            obj[m] = A[m] * c[0]
            continue
        whole = int(math.floor(A[m] + 1e-12))
        frac = float(A[m] - whole)
        n = whole + (1 if frac > 1e-12 else 0)
        c = cycle_costs(policy, tau, max(n, 1), down_method)
        first[m] = c[0]
        obj[m] = c[:whole].sum() + (frac * c[whole] if n > whole else 0.0)
    zeros = np.zeros(taus.size)
    return OptimizationResult(f"analytic-{mode}", taus, A, first, zeros, obj, zeros, horizon, a_rule,
                              meta={"mu": mu, "form": policy.form, "accounting": policy.accounting})
