"""Hierarchical inspect/repair/replace policy and its expected costs.

At every inspection the system is classified as optimal (left alone),
critical (modules are looked at: failed modules replaced, failed units of
critical modules restored) or down (full replacement).  Maintenance effects
are row-stochastic matrices ``M_i`` over module states; costs are matrices
``C_i`` of the same shape, paired with ``M_i`` through the Hadamard product.

Two switches make the ambiguous parts of the cost model explicit:

``accounting``
    ``"per_module"`` charges the inspection cost inside every module cost
    row (optimal block ``C_I * I``), ``"global"`` charges it once per
    inspection at system level and builds ``C_i`` without it.
``form``
    ``"literal"`` evaluates the closed-form expressions literally (module costs
    from marginal module laws, weighted by the probability of a critical
    system; down cost weighted by the probability of failure); ``"exact"``
    takes the joint expectation over system states, which is what a
    Monte-Carlo run of the same policy estimates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.linalg import lu_factor, lu_solve

from .errors import ModelError
from .markov import check_prob_vector, transient_law
from .moma import FAILED, ModuleModel, SystemModel

ACCOUNTING = ("per_module", "global")
FORMS = ("literal", "exact")


@dataclass(frozen=True)
class CostParams:
    """Cost inputs of the policy, in model time units.

    ``restore[p]`` is the cost of restoring a failed unit to operational phase
    p (``restore_by_unit[(module, unit)]`` overrides it per unit).  ``C_RM`` is
    the module replacement cost, a scalar, one value per module, or one
    vector per module over its optimal states.  ``down_cost`` maps the
    downtime within a cycle to a cost; when omitted the linear form
    ``C_down * downtime`` is used.
    """

    C_I: float = 1.0
    restore: tuple[float, ...] = (1.0, 0.5)
    C_RM: float | Sequence = 3.0
    C_SR: float = 9.0
    C_down: float = 0.0
    down_cost: Callable[[float], float] | None = field(default=None, compare=False)
    restore_by_unit: dict | None = None

    def __post_init__(self):
        parts = [self.C_I, self.C_SR, self.C_down, self.restore, self.C_RM]
        if self.restore_by_unit:
            parts.extend(self.restore_by_unit.values())
        if any(v < 0 or not np.isfinite(v) for v in _flatten(parts)):
            raise ModelError("all costs must be finite and >= 0")

    @property
    def linear_down(self) -> bool:
        return self.down_cost is None

    def downtime_cost(self, downtime):
        if self.down_cost is None:
            return self.C_down * np.asarray(downtime, dtype=float)
        return self.down_cost(downtime)

    def restore_cost(self, module: int, unit: int, phase: int) -> float:
        table = self.restore
        if self.restore_by_unit and (module, unit) in self.restore_by_unit:
            table = self.restore_by_unit[(module, unit)]
        if phase >= len(table):
            raise ModelError(f"no restoration cost for module {module}, unit {unit}, phase {phase}")
        return float(table[phase])

    def replacement_cost(self, module: int, n_optimal: int) -> np.ndarray:
        c = self.C_RM
        if not np.isscalar(c):
            if module >= len(c):
                raise ModelError(f"no replacement cost for module {module}")
            c = c[module]
        v = np.asarray(c, dtype=float).ravel()
        if v.size == 1:
            return np.full(n_optimal, float(v[0]))
        if v.size != n_optimal:
            raise ModelError(f"replacement cost of module {module} needs {n_optimal} entries")
        return v

    def with_(self, **kw) -> "CostParams":
        return replace(self, **kw)


def _flatten(x):
    if np.isscalar(x):
        yield float(x)
    else:
        for item in x:
            yield from _flatten(item)


# -- module-level matrices ------------------------------------------------------

def module_replacement_law(model: ModuleModel) -> np.ndarray:
    """Law over the module's optimal states after a replacement."""
    spec = model.spec
    n1 = len(model.u1)
    if spec.replacement_law is not None:
        b = check_prob_vector(spec.replacement_law, f"{model.name}: replacement law")
        if b.shape[0] == n1:
            return b
        if b.shape[0] == model.n_ops:
            if b[model.u2].sum() > 1e-12:
                raise ModelError(f"{model.name}: replacement law puts mass outside the optimal states")
            return b[model.u1]
        raise ModelError(f"{model.name}: replacement law has {b.shape[0]} entries, expected {n1}")
    # Kronecker product of the unit repair laws, read on the optimal states
    out = np.zeros(n1)
    for k, idx in enumerate(model.u1):
        state = model.states[idx]
        p = 1.0
        for j, s in enumerate(state):
            p *= 0.0 if s is FAILED else spec.unit_repair_law(j)[s]
        out[k] = p
    total = out.sum()
    if abs(total - 1.0) > 1e-10:
        raise ModelError(f"{model.name}: default replacement law does not sum to 1 over the optimal states")
    return out


def build_maintenance_matrix(model: ModuleModel) -> np.ndarray:
    """Square maintenance matrix over the module's base states.

    Optimal rows are identity rows; a critical row restores each failed unit
    j with its repair law and leaves working units untouched; the down row is
    the replacement law.  Every row must land in the optimal class.
    """
    spec = model.spec
    n = model.n_base
    index = {s: k for k, s in enumerate(model.states)}
    u1set = set(int(i) for i in model.u1)
    M = np.zeros((n, n))
    for i in model.u1:
        M[i, i] = 1.0
    for i in model.u2:
        state = model.states[i]
        choices = []
        for j, s in enumerate(state):
            if s is FAILED:
                law = spec.unit_repair_law(j)
                choices.append([(p, law[p]) for p in range(len(law)) if law[p] > 0])
            else:
                choices.append([(s, 1.0)])
        for combo in itertools.product(*choices):
            target = tuple(c[0] for c in combo)
            prob = float(np.prod([c[1] for c in combo]))
            k = index.get(target)
            if k is None or k not in u1set:
                raise ModelError(f"{model.name}: restoring {model.labels[i]} can reach a non-optimal state")
            M[i, k] += prob
    M[model.d, model.u1] = module_replacement_law(model)
    return M


def build_cost_matrix(model: ModuleModel, costs: CostParams, module_index: int = 0,
                      accounting: str = "per_module") -> np.ndarray:
    """Cost matrix paired entrywise with the maintenance matrix.

    Critical entry to target s' is ``C_I + sum over failed units of the cost
    of restoring that unit to its phase in s'``; the down row is
    ``C_I + C_RM``.  With ``accounting="global"`` the per-module ``C_I`` is 0.
    """
    if accounting not in ACCOUNTING:
        raise ModelError(f"accounting must be one of {ACCOUNTING}")
    c_i = costs.C_I if accounting == "per_module" else 0.0
    M = build_maintenance_matrix(model)
    n = model.n_base
    C = np.zeros((n, n))
    for i in model.u1:
        C[i, i] = c_i
    for i in model.u2:
        state = model.states[i]
        for k in np.flatnonzero(M[i] > 0):
            target = model.states[k]
            c = c_i
            for j, s in enumerate(state):
                if s is FAILED:
                    c += costs.restore_cost(module_index, j, target[j])
            C[i, k] = c
    C[model.d, model.u1] = c_i + costs.replacement_cost(module_index, len(model.u1))
    return C


def extend_matrix(model: ModuleModel, M: np.ndarray) -> np.ndarray:
    """Carry a base maintenance matrix to the shock-extended state space.

    The shock phase is untouched by repairs; after a replacement it restarts
    from the shock process's initial law.
    """
    if model.shock is None:
        return M
    b = model.n_phase
    out = np.zeros((model.n_ext, model.n_ext))
    out[:-1, :-1] = np.kron(M[:-1, :-1], np.eye(b))
    out[-1, :-1] = np.kron(M[-1, :-1], model.shock.initial)
    return out


def extend_cost_matrix(model: ModuleModel, C: np.ndarray) -> np.ndarray:
    if model.shock is None:
        return C
    b = model.n_phase
    out = np.zeros((model.n_ext, model.n_ext))
    out[:-1, :-1] = np.kron(C[:-1, :-1], np.ones((b, b)))
    out[-1, :-1] = np.kron(C[-1, :-1], np.ones(b))
    return out


def extend_cost_column(model: ModuleModel, h: np.ndarray) -> np.ndarray:
    if model.shock is None:
        return h
    return np.concatenate([np.repeat(h[:-1], model.n_phase), h[-1:]])


def build_selector(system: SystemModel, i: int) -> np.ndarray:
    """0/1 diagonal matrix over module i's (extended) states.

    Entry 1 where some states of the other modules place the system in its
    critical class.  Evaluated by enumerating module classes.
    """
    k = len(system.modules)
    available = []
    for m in system.modules:
        cls = [1]
        if len(m.u2):
            cls.append(2)
        cls.append(3)
        available.append(cls)
    admits = {}
    for own in (1, 2, 3):
        ok = False
        for combo in itertools.product(*(available[j] if j != i else [own] for j in range(k))):
            up = system.structure.is_up([c != 3 for c in combo])
            if up and any(c != 1 for c in combo):
                ok = True
                break
        admits[own] = ok
    m = system.modules[i]
    diag = np.array([1.0 if admits[c] else 0.0 for c in m.ext_class()])
    return np.diag(diag)


def post_inspection_module_law(prev, model: ModuleModel, tau: float, M: np.ndarray) -> np.ndarray:
    """Module law after the next inspection: ``prev exp(Q tau) M``."""
    prev = np.asarray(prev, dtype=float)
    if prev.shape[0] != model.n_ext or M.shape != (model.n_ext, model.n_ext):
        raise ModelError(f"{model.name}: dimension mismatch in the module law update")
    return transient_law(prev, model.generator, tau) @ M


def module_cost(prev_module_law, model: ModuleModel, tau: float, selector: np.ndarray,
                M: np.ndarray, C: np.ndarray) -> float:
    """``prev exp(Q tau) D (M o C) e`` for one module."""
    p = transient_law(np.asarray(prev_module_law, dtype=float), model.generator, tau)
    return float(p @ selector @ (M * C).sum(axis=1))


# -- system policy ------------------------------------------------------------------

@dataclass(eq=False)
class Policy:
    """A system together with its maintenance and cost matrices.

    Matrices are stored on the shock-extended module spaces.
    """

    system: SystemModel
    costs: CostParams
    accounting: str = "per_module"
    form: str = "literal"
    M: list = field(default_factory=list)
    C: list = field(default_factory=list)
    h: list = field(default_factory=list)          # cost columns (M o C) e
    selectors: list = field(default_factory=list)
    M_sys: np.ndarray | None = None                # up states -> optimal states
    h_sys: np.ndarray | None = None                # summed module costs per up state
    _lu: tuple | None = None

    @property
    def c_global(self) -> float:
        return self.costs.C_I if self.accounting == "global" else 0.0

    def critical_cost(self) -> np.ndarray:
        """Cost charged at an inspection that finds the system in each up state."""
        return self.h_sys + self.c_global

    def with_costs(self, costs: CostParams) -> "Policy":
        return build_policy(self.system, costs, self.accounting, self.form)

    def lu(self):
        if self._lu is None:
            self._lu = lu_factor(self.system.T)
        return self._lu


def build_policy(system: SystemModel, costs: CostParams, accounting: str = "per_module",
                 form: str = "literal") -> Policy:
    if accounting not in ACCOUNTING:
        raise ModelError(f"accounting must be one of {ACCOUNTING}")
    if form not in FORMS:
        raise ModelError(f"form must be one of {FORMS}")
    Ms, Cs, hs, sels = [], [], [], []
    for i, m in enumerate(system.modules):
        Mb = build_maintenance_matrix(m)
        Cb = build_cost_matrix(m, costs, i, accounting)
        Me = extend_matrix(m, Mb)
        he = extend_cost_column(m, (Mb * Cb).sum(axis=1))
        Ms.append(Me)
        Cs.append(extend_cost_matrix(m, Cb))
        hs.append(he)
        sels.append(build_selector(system, i))
    states = system.module_states
    n = system.n_up
    rows = np.ones((n, 1))
    h_sys = np.zeros(n)
    for i, m in enumerate(system.modules):
        r = Ms[i][states[:, i]][:, m.ext_u1]
        rows = (rows[:, :, None] * r[:, None, :]).reshape(n, -1)
        h_sys += hs[i][states[:, i]]
    return Policy(system, costs, accounting, form, Ms, Cs, hs, sels, rows, h_sys)


@dataclass(frozen=True)
class CycleLaw:
    """Law of the system (and of each module) at the start of cycle ``a``.

    ``probs`` holds P(optimal), P(critical), P(down) at the inspection that
    produced this law (None for the initial cycle).
    """

    a: int
    alpha: np.ndarray
    module_laws: tuple[np.ndarray, ...]
    probs: tuple[float, float, float] | None = None


def marginal_module_law(system: SystemModel, alpha, i: int) -> np.ndarray:
    """Marginal law of module i under a system law (system down mass goes to the module's down state)."""
    m = system.modules[i]
    alpha = np.asarray(alpha, dtype=float)
    out = np.bincount(system.module_states[:, i], weights=alpha[:-1], minlength=m.n_ext).astype(float)
    out[m.ext_d] += alpha[-1]
    return out


def initial_cycle_law(system: SystemModel) -> CycleLaw:
    laws = tuple(marginal_module_law(system, system.alpha, i) for i in range(len(system.modules)))
    return CycleLaw(0, system.alpha.copy(), laws)


def case_probabilities(p: np.ndarray, system: SystemModel) -> tuple[float, float, float]:
    return float(p[system.u1].sum()), float(p[system.u2].sum()), float(p[-1])


def evolve(alpha, system: SystemModel, tau: float) -> np.ndarray:
    """System law at the end of a cycle of length tau."""
    return transient_law(alpha, system.Q, tau)


def post_inspection_system_law(prev: CycleLaw, policy: Policy, tau: float,
                               p: np.ndarray | None = None) -> CycleLaw:
    """Law at the start of the next cycle (three-case mixture)."""
    system = policy.system
    if p is None:
        p = evolve(prev.alpha, system, tau)
    p1, p2, p3 = case_probabilities(p, system)
    n1 = system.n_u1
    module_laws = []
    for i, m in enumerate(system.modules):
        start = marginal_module_law(system, prev.alpha, i)
        module_laws.append(post_inspection_module_law(start, m, tau, policy.M[i]))
    new = np.zeros(system.n_states)
    new[:n1] = p[:n1]
    if policy.form == "literal":
        crit = np.ones(1)
        for i, m in enumerate(system.modules):
            crit = np.kron(crit, module_laws[i][m.ext_u1])
        new[:n1] += p2 * crit
    else:
        new[:n1] += p[n1:-1] @ policy.M_sys[n1:]
    new += p3 * system.beta
    return CycleLaw(prev.a + 1, new, tuple(module_laws), (p1, p2, p3))


def expected_down_cost(alpha, system: SystemModel, tau: float, costs: CostParams,
                       method: str = "quadrature", lu=None) -> float:
    """Expected downtime cost within one cycle started from ``alpha``.

    ``int_0^tau f(t) c_down(tau - t) dt`` with f the density of the time to
    system failure.  ``method="closed_form"`` uses the linear-cost identity
    ``C_down int_0^tau F(t) dt`` and needs no quadrature.
    """
    if tau <= 0:
        return 0.0
    alpha = np.asarray(alpha.alpha if isinstance(alpha, CycleLaw) else alpha, dtype=float)
    a_up = alpha[:-1]
    T = system.T
    exit_rates = system.exit_rates
    if method == "closed_form":
        if not costs.linear_down:
            raise ModelError("the closed form needs the linear downtime cost")
        if costs.C_down == 0.0:
            return 0.0
        decayed = transient_law(a_up, T, tau)
        lu = lu if lu is not None else lu_factor(T)
        integrated_rel = float(lu_solve(lu, decayed - a_up, trans=1).sum())
        return float(costs.C_down * max(a_up.sum() * tau - integrated_rel, 0.0))
    if method != "quadrature":
        raise ModelError(f"unknown down-cost method {method!r}")
    if costs.linear_down and costs.C_down == 0.0:
        return 0.0

    def integrand(t):
        dens = transient_law(a_up, T, t) @ exit_rates
        return max(dens, 0.0) * float(costs.downtime_cost(tau - t))

    val, _ = integrate.quad(integrand, 0.0, tau, epsabs=1e-11, epsrel=1e-11, limit=200)
    return float(val)


def _down_method(policy: Policy, method: str) -> str:
    if method == "auto":
        return "closed_form" if policy.costs.linear_down else "quadrature"
    return method


@dataclass(frozen=True)
class CycleCost:
    """Expected cost at one inspection and its parts."""

    total: float
    probs: tuple[float, float, float]
    optimal: float
    critical: float
    down: float
    down_time_cost: float
    module_costs: tuple[float, ...]


def cycle_cost_breakdown(prev: CycleLaw, policy: Policy, tau: float,
                         p: np.ndarray | None = None, down_method: str = "quadrature") -> CycleCost:
    system, costs = policy.system, policy.costs
    if p is None:
        p = evolve(prev.alpha, system, tau)
    p1, p2, p3 = case_probabilities(p, system)
    ecd = expected_down_cost(prev.alpha, system, tau, costs, _down_method(policy, down_method), policy.lu())
    optimal = costs.C_I * p1
    if policy.form == "literal":
        mods = []
        for i, m in enumerate(system.modules):
            start = marginal_module_law(system, prev.alpha, i)
            mods.append(float(transient_law(start, m.generator, tau) @ policy.selectors[i] @ policy.h[i]))
        critical = (sum(mods) + policy.c_global) * p2
        down = (costs.C_I + ecd + costs.C_SR) * p3
    else:
        n1 = system.n_u1
        pu2 = p[n1:-1]
        mods = []
        for i in range(len(system.modules)):
            mods.append(float(pu2 @ policy.h[i][system.module_states[n1:, i]]))
        critical = sum(mods) + policy.c_global * p2
        down = (costs.C_I + costs.C_SR) * p3 + ecd
    return CycleCost(optimal + critical + down, (p1, p2, p3), optimal, critical, down, ecd, tuple(mods))


def expected_cycle_cost(prev: CycleLaw, policy: Policy, tau: float,
                        down_method: str = "quadrature") -> float:
    """Expected cost charged at the inspection closing the cycle that starts with ``prev``."""
    return cycle_cost_breakdown(prev, policy, tau, down_method=down_method).total


def cycle_costs(policy: Policy, tau: float, A: int, down_method: str = "auto") -> np.ndarray:
    """Expected costs at inspections 1..A, following the cycle recursion."""
    if A < 1:
        raise ModelError("the number of inspections must be >= 1")
    law = initial_cycle_law(policy.system)
    out = np.zeros(A)
    for a in range(A):
        p = evolve(law.alpha, policy.system, tau)
        out[a] = cycle_cost_breakdown(law, policy, tau, p, down_method).total
        if a + 1 < A:
            law = post_inspection_system_law(law, policy, tau, p)
    return out


def total_expected_cost(policy: Policy, tau: float, A: int, down_method: str = "auto") -> float:
    """Sum of the expected inspection costs over A cycles."""
    return float(cycle_costs(policy, tau, A, down_method).sum())
