"""Bottom-up construction of module and system generators.

Units carry phase-type lifetimes; a module is a coherent structure of units,
optionally hit by its own shock process; the system is a coherent structure
of independent modules.  Every structure-down combination is merged into a
single absorbing state at both module and system level.

State ordering
--------------
* module: operational states first (optimal class, then critical class),
  each class ordered by number of failed units and then lexicographically
  with ``F`` after every operational phase; the aggregated down state last.
* shock-extended module: module state major, shock phase minor.
* system: macro-blocks indexed by the set of failed modules (fewest failures
  first), Kronecker order of the surviving modules inside a block, then the
  states are stably regrouped as optimal, critical, down.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from math import prod
from typing import Callable, Sequence

import numpy as np

from .errors import ModelError
from .markov import (
    MapProcess,
    PhDistribution,
    check_generator,
    check_prob_vector,
    kron_all,
    kron_sum,
    kron_sum_all,
)

FAILED = None  # unit phase marker for a failed unit
MAX_UNIT_STATES = 50_000


@dataclass(frozen=True)
class Structure:
    """Coherent structure function over component up/down flags.

    ``kind`` is one of ``series``, ``parallel``, ``k_out_of_n`` (up when at
    least ``k`` components are up) or ``explicit`` (``path_sets`` lists the
    minimal path sets, or ``function`` maps a tuple of booleans to bool).
    """

    kind: str = "series"
    k: int | None = None
    path_sets: tuple[frozenset[int], ...] | None = None
    function: Callable[[tuple[bool, ...]], bool] | None = field(default=None, compare=False)

    def is_up(self, up: Sequence[bool]) -> bool:
        up = tuple(bool(u) for u in up)
        n = len(up)
        if self.kind == "series":
            return all(up)
        if self.kind == "parallel":
            return any(up)
        if self.kind == "k_out_of_n":
            return sum(up) >= self.k
        if self.kind == "explicit":
            if self.function is not None:
                return bool(self.function(up))
            return any(all(up[j] for j in ps) for ps in self.path_sets)
        raise ModelError(f"unknown structure kind {self.kind!r} for {n} components")

    def validate(self, n: int) -> None:
        if n < 1:
            raise ModelError("a structure needs at least one component")
        if self.kind == "k_out_of_n" and (self.k is None or not 1 <= self.k <= n):
            raise ModelError(f"k_out_of_n needs 1 <= k <= {n}, got k={self.k}")
        if self.kind == "explicit":
            if self.function is None and not self.path_sets:
                raise ModelError("explicit structure needs path sets or a function")
            if self.path_sets and any(j < 0 or j >= n for ps in self.path_sets for j in ps):
                raise ModelError("path set refers to a component that does not exist")
        if n > 20:
            raise ModelError("structure functions are limited to 20 components")
        if not self.is_up((True,) * n) or self.is_up((False,) * n):
            raise ModelError("structure is not coherent: must be up when all components are up "
                             "and down when all have failed")
        for flags in itertools.product((False, True), repeat=n):
            if not self.is_up(flags):
                continue
            for j in range(n):
                # repairing a component never brings the structure down
                if not flags[j] and not self.is_up(flags[:j] + (True,) + flags[j + 1:]):
                    raise ModelError("structure function is not monotone")

    @classmethod
    def series(cls) -> "Structure":
        return cls("series")

    @classmethod
    def parallel(cls) -> "Structure":
        return cls("parallel")

    @classmethod
    def k_out_of_n(cls, k: int) -> "Structure":
        return cls("k_out_of_n", k=int(k))

    @classmethod
    def from_path_sets(cls, sets: Sequence[Sequence[int]]) -> "Structure":
        return cls("explicit", path_sets=tuple(frozenset(int(j) for j in s) for s in sets))


@dataclass(frozen=True)
class UnitSpec:
    lifetime: PhDistribution
    phase_labels: tuple[str, ...] | None = None
    name: str = "unit"

    def __post_init__(self):
        labels = self.phase_labels
        if labels is None:
            labels = tuple(str(p) for p in range(self.lifetime.order))
        labels = tuple(str(x) for x in labels)
        if len(labels) != self.lifetime.order:
            raise ModelError(f"{self.name}: {len(labels)} phase labels for a PH of order {self.lifetime.order}")
        if len(set(labels)) != len(labels) or "F" in labels:
            raise ModelError(f"{self.name}: phase labels must be unique and must not use 'F'")
        object.__setattr__(self, "phase_labels", labels)

    @property
    def order(self) -> int:
        return self.lifetime.order


@dataclass(frozen=True)
class ModuleSpec:
    """Inputs for one module.

    ``repair_laws[j]`` is the phase law of unit j after it is restored
    (defaults to the unit's initial law); ``replacement_law`` is the law over
    the module's optimal states after a replacement (defaults to the Kronecker
    product of the repair laws).  ``optimal_states`` optionally overrides the
    optimal class with an explicit list of unit-phase tuples.
    """

    units: tuple[UnitSpec, ...]
    structure: Structure = Structure("series")
    name: str = "module"
    shock: MapProcess | None = None
    p1: float = 1.0
    repair_laws: tuple[np.ndarray, ...] | None = None
    replacement_law: np.ndarray | None = None
    optimal_states: tuple[tuple, ...] | None = None

    def __post_init__(self):
        units = tuple(self.units)
        if not units:
            raise ModelError(f"{self.name}: a module needs at least one unit")
        object.__setattr__(self, "units", units)
        if not 0.0 <= self.p1 <= 1.0:
            raise ModelError(f"{self.name}: p1 must lie in [0, 1]")
        if self.repair_laws is not None:
            if len(self.repair_laws) != len(units):
                raise ModelError(f"{self.name}: one repair law per unit is required")
            laws = []
            for j, (u, b) in enumerate(zip(units, self.repair_laws)):
                b = check_prob_vector(b, f"{self.name}: repair law of unit {j}")
                if b.shape[0] != u.order:
                    raise ModelError(f"{self.name}: repair law of unit {j} has {b.shape[0]} entries, "
                                     f"unit has {u.order} phases")
                laws.append(b)
            object.__setattr__(self, "repair_laws", tuple(laws))

    @property
    def p0(self) -> float:
        return 1.0 - self.p1

    def unit_repair_law(self, j: int) -> np.ndarray:
        if self.repair_laws is None:
            return self.units[j].lifetime.alpha
        return self.repair_laws[j]


@dataclass(frozen=True, eq=False)
class ModuleModel:
    """Generator-level description of one module.

    Base states are the unit-phase tuples of the operational states followed
    by the aggregated down state.  When a shock process is attached, the
    operational states are extended with the shock phase (phase innermost).
    """

    spec: ModuleSpec
    states: tuple[tuple, ...]            # operational unit-phase tuples, FAILED for failed units
    u1: np.ndarray                       # base indices of optimal states
    u2: np.ndarray                       # base indices of critical states
    Q_wear: np.ndarray                   # (n_ops + 1) square, down state last
    alpha: np.ndarray                    # law over base states
    n_down_raw: int                      # unit-tuple combinations merged into the down state
    n_raw: int                           # all unit-tuple combinations
    shock: MapProcess | None = None
    p1: float = 0.0
    Q_shock_ext: np.ndarray | None = None

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def n_ops(self) -> int:
        return len(self.states)

    @property
    def n_base(self) -> int:
        return self.n_ops + 1

    @property
    def d(self) -> int:
        return self.n_ops

    @property
    def Q_op(self) -> np.ndarray:
        return self.Q_wear[:-1, :-1]

    @property
    def Q_fail(self) -> np.ndarray:
        return self.Q_wear[:-1, -1:]

    @property
    def labels(self) -> list[str]:
        return [state_label(s, self.spec) for s in self.states] + ["D"]

    # -- shock-extended space ---------------------------------------------
    @property
    def n_phase(self) -> int:
        return 1 if self.shock is None else self.shock.order

    @property
    def n_ext_ops(self) -> int:
        return self.n_ops * self.n_phase

    @property
    def n_ext(self) -> int:
        return self.n_ext_ops + 1

    @property
    def generator(self) -> np.ndarray:
        """Shock-extended module generator (the wear generator without shocks)."""
        return self.Q_wear if self.Q_shock_ext is None else self.Q_shock_ext

    def expand(self, idx: np.ndarray) -> np.ndarray:
        b = self.n_phase
        idx = np.asarray(idx, dtype=int)
        return (idx[:, None] * b + np.arange(b)[None, :]).ravel()

    @property
    def ext_u1(self) -> np.ndarray:
        return self.expand(self.u1)

    @property
    def ext_u2(self) -> np.ndarray:
        return self.expand(self.u2)

    @property
    def ext_d(self) -> int:
        return self.n_ext_ops

    @property
    def alpha_ext(self) -> np.ndarray:
        if self.shock is None:
            return self.alpha
        out = np.zeros(self.n_ext)
        out[:-1] = np.kron(self.alpha[:-1], self.shock.initial)
        out[-1] = self.alpha[-1]
        return out

    @property
    def ext_labels(self) -> list[str]:
        base = self.labels
        if self.shock is None:
            return base
        return [f"{base[i]}|{p}" for i in range(self.n_ops) for p in range(self.n_phase)] + ["D"]

    def ext_class(self) -> np.ndarray:
        """Class code per extended state: 1 optimal, 2 critical, 3 down."""
        out = np.full(self.n_ext, 3, dtype=int)
        out[self.ext_u1] = 1
        out[self.ext_u2] = 2
        return out


def state_label(state: tuple, spec: ModuleSpec) -> str:
    parts = []
    for j, s in enumerate(state):
        parts.append("F" if s is FAILED else spec.units[j].phase_labels[s])
    return ".".join(parts)


def _sort_key(state: tuple):
    return (sum(s is FAILED for s in state), tuple(10 ** 9 if s is FAILED else s for s in state))


def classify_module_states(states: Sequence[tuple], structure: Structure,
                           optimal: Sequence[tuple] | None = None):
    """Split unit-phase tuples into (optimal, critical, down) lists.

    Optimal states have no failed unit unless ``optimal`` lists them
    explicitly; critical states are the remaining structure-up states.
    Each list is returned in the canonical module ordering.
    """
    optimal_set = None if optimal is None else {tuple(o) for o in optimal}
    u1, u2, down = [], [], []
    for s in states:
        up_flags = [x is not FAILED for x in s]
        if not structure.is_up(up_flags):
            down.append(s)
        elif (optimal_set is None and all(up_flags)) or (optimal_set is not None and tuple(s) in optimal_set):
            u1.append(s)
        else:
            u2.append(s)
    if optimal_set is not None:
        bad = optimal_set - set(u1)
        if bad:
            raise ModelError(f"declared optimal states are not operational: {sorted(map(str, bad))}")
    return sorted(u1, key=_sort_key), sorted(u2, key=_sort_key), sorted(down, key=_sort_key)


def _full_unit_generator(ph: PhDistribution) -> np.ndarray:
    m = ph.order
    g = np.zeros((m + 1, m + 1))
    g[:m, :m] = ph.T
    g[:m, m] = ph.exit_vector
    return g


def _parse_optimal(spec: ModuleSpec):
    if spec.optimal_states is None:
        return None
    out = []
    for st in spec.optimal_states:
        if len(st) != len(spec.units):
            raise ModelError(f"{spec.name}: optimal state {st} has the wrong number of units")
        conv = []
        for j, x in enumerate(st):
            if x is FAILED or x == "F":
                conv.append(FAILED)
            elif isinstance(x, str):
                try:
                    conv.append(spec.units[j].phase_labels.index(x))
                except ValueError:
                    raise ModelError(f"{spec.name}: unknown phase {x!r} for unit {j}") from None
            else:
                conv.append(int(x))
        out.append(tuple(conv))
    return out


def build_module_wear_generator(spec: ModuleSpec) -> ModuleModel:
    """Module generator under wear-out only.

    The joint unit chain is the Kronecker sum of the unit generators (each
    unit's sub-generator completed with its absorbing failure phase); the
    structure-down combinations are then merged into one absorbing state.
    """
    n = len(spec.units)
    spec.structure.validate(n)
    radices = [u.order + 1 for u in spec.units]
    n_raw = prod(radices)
    if n_raw > MAX_UNIT_STATES:
        raise ModelError(f"{spec.name}: {n_raw} unit combinations exceed the dense limit")
    joint = kron_sum_all(_full_unit_generator(u.lifetime) for u in spec.units)

    def to_state(raw):
        return tuple(FAILED if x == spec.units[j].order else int(x) for j, x in enumerate(raw))

    all_states = [to_state(raw) for raw in itertools.product(*(range(r) for r in radices))]
    u1, u2, down = classify_module_states(all_states, spec.structure, _parse_optimal(spec))
    ops = u1 + u2

    def raw_index(state):
        return int(np.ravel_multi_index(
            [spec.units[j].order if x is FAILED else x for j, x in enumerate(state)], radices))

    op_idx = np.array([raw_index(s) for s in ops], dtype=int)
    down_idx = np.array([raw_index(s) for s in down], dtype=int)
    n_ops = len(ops)
    q = np.zeros((n_ops + 1, n_ops + 1))
    q[:n_ops, :n_ops] = joint[np.ix_(op_idx, op_idx)]
    if down_idx.size:
        q[:n_ops, n_ops] = joint[np.ix_(op_idx, down_idx)].sum(axis=1)
    # drop round-off on the diagonal so that rows sum to zero exactly
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    check_generator(q, f"{spec.name}: wear generator")

    alpha_raw = kron_all(u.lifetime.alpha[None, :] for u in spec.units).ravel()
    alpha = np.zeros(n_ops + 1)
    for k, s in enumerate(ops):
        if FAILED not in s:
            alpha[k] = alpha_raw[int(np.ravel_multi_index(s, [u.order for u in spec.units]))]
    alpha[-1] = max(0.0, 1.0 - alpha[:-1].sum())

    model = ModuleModel(
        spec=spec,
        states=tuple(ops),
        u1=np.arange(len(u1)),
        u2=np.arange(len(u1), n_ops),
        Q_wear=q,
        alpha=alpha,
        n_down_raw=len(down),
        n_raw=n_raw,
    )
    if spec.shock is not None:
        model = attach_shocks(model, spec.shock, spec.p1)
    return model


def attach_shocks(model: ModuleModel, shock: MapProcess, p1: float) -> ModuleModel:
    """Extend a module with its shock process.

    Operational block ``Q (+) (D0 + p0 D1)``; a shock is fatal with probability
    ``p1``, so each extended operational state leaves to the down state at
    rate ``q_fail(s) + p1 (D1 e)(phase)``.
    """
    if not 0.0 <= p1 <= 1.0:
        raise ModelError("p1 must lie in [0, 1]")
    b = shock.order
    n = model.n_ops
    q_s = kron_sum(model.Q_op, shock.D0 + (1.0 - p1) * shock.D1)
    exit_col = (np.kron(model.Q_fail, np.ones((b, 1)))
                + np.kron(np.ones((n, 1)), p1 * shock.D1.sum(axis=1, keepdims=True)))
    if exit_col.shape[0] != q_s.shape[0]:
        raise ModelError("dimension mismatch between module and shock process")
    g = np.zeros((n * b + 1, n * b + 1))
    g[:-1, :-1] = q_s
    g[:-1, -1] = exit_col.ravel()
    np.fill_diagonal(g, 0.0)
    np.fill_diagonal(g, -g.sum(axis=1))
    check_generator(g, f"{model.name}: shock-extended generator")
    return replace(model, shock=shock, p1=float(p1), Q_shock_ext=g)


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Assembled system generator with its state partition.

    ``module_states[s, i]`` is the extended state index of module i in up
    state s (the module's down index when the module has failed).
    """

    modules: tuple[ModuleModel, ...]
    structure: Structure
    Q: np.ndarray
    module_states: np.ndarray
    failed_sets: tuple[frozenset, ...]   # per up state
    n_u1: int
    alpha: np.ndarray
    beta: np.ndarray
    n_down_raw: int
    n_down_raw_units: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_up(self) -> int:
        return self.Q.shape[0] - 1

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]

    @property
    def d(self) -> int:
        return self.n_up

    @property
    def u1(self) -> np.ndarray:
        return np.arange(self.n_u1)

    @property
    def u2(self) -> np.ndarray:
        return np.arange(self.n_u1, self.n_up)

    @property
    def T(self) -> np.ndarray:
        return self.Q[:-1, :-1]

    @property
    def exit_rates(self) -> np.ndarray:
        return self.Q[:-1, -1]

    @property
    def labels(self) -> list[str]:
        out = []
        ext_labels = [m.ext_labels for m in self.modules]
        for row in self.module_states:
            out.append(":".join(ext_labels[i][k] for i, k in enumerate(row)))
        return out + ["D"]

    def lifetime(self, alpha=None) -> PhDistribution:
        a = self.alpha if alpha is None else np.asarray(alpha, dtype=float)
        return PhDistribution(a[:-1], self.T)

    def classes(self) -> np.ndarray:
        out = np.full(self.n_states, 3, dtype=int)
        out[self.u1] = 1
        out[self.u2] = 2
        return out


def _blocks(k: int, structure: Structure) -> list[tuple[int, ...]]:
    out = []
    for size in range(k + 1):
        for failed in itertools.combinations(range(k), size):
            if structure.is_up([i not in failed for i in range(k)]):
                out.append(failed)
    return out


def build_system_generator(modules: Sequence[ModuleModel], structure: Structure,
                           beta: np.ndarray | None = None) -> SystemModel:
    """Assemble the system generator from module generators.

    Macro-blocks are indexed by the set of failed modules; inside a block the
    surviving modules evolve by the Kronecker sum of their operational
    generators, and module p fails through the identity-padded exit column
    ``I (x) ... (x) q_p (x) ... (x) I``.  Blocks where the structure is down
    are merged into the absorbing state.
    """
    modules = tuple(modules)
    if not modules:
        raise ModelError("a system needs at least one module")
    k = len(modules)
    structure.validate(k)
    blocks = _blocks(k, structure)
    pos = {b: i for i, b in enumerate(blocks)}
    dims = [m.n_ext_ops for m in modules]
    sizes = [prod(dims[i] for i in range(k) if i not in b) for b in blocks]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    n_up = int(offsets[-1])
    q = np.zeros((n_up + 1, n_up + 1))
    ops_gen = [m.generator[:-1, :-1] for m in modules]
    exit_cols = [m.generator[:-1, -1:] for m in modules]

    module_states = np.zeros((n_up, k), dtype=int)
    failed_sets = []
    for bi, failed in enumerate(blocks):
        surv = [i for i in range(k) if i not in failed]
        o, sz = offsets[bi], sizes[bi]
        q[o:o + sz, o:o + sz] = kron_sum_all(ops_gen[i] for i in surv)
        for p in surv:
            factors = [exit_cols[i] if i == p else np.eye(dims[i]) for i in surv]
            move = kron_all(factors)
            target = tuple(sorted(failed + (p,)))
            if target in pos:
                tj = pos[target]
                q[o:o + sz, offsets[tj]:offsets[tj] + sizes[tj]] += move
            else:
                q[o:o + sz, n_up] += move.sum(axis=1)
        grid = np.indices([dims[i] for i in surv]).reshape(len(surv), -1).T
        for c, i in enumerate(surv):
            module_states[o:o + sz, i] = grid[:, c]
        for i in failed:
            module_states[o:o + sz, i] = modules[i].ext_d
        failed_sets.extend([frozenset(failed)] * sz)

    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))

    alpha = np.zeros(n_up + 1)
    alpha[:sizes[0]] = kron_all(m.alpha_ext[None, :-1] for m in modules).ravel()
    alpha[-1] = max(0.0, 1.0 - alpha.sum())

    # optimal states: no failed module and every module in its optimal class
    in_u1 = np.ones(n_up, dtype=bool)
    for i, m in enumerate(modules):
        in_u1 &= np.isin(module_states[:, i], m.ext_u1)
    order = np.concatenate([np.flatnonzero(in_u1), np.flatnonzero(~in_u1)])
    full_order = np.concatenate([order, [n_up]])
    q = q[np.ix_(full_order, full_order)]
    alpha = alpha[full_order]
    module_states = module_states[order]
    failed_sets = tuple(failed_sets[j] for j in order)
    check_generator(q, "system generator")

    if beta is None:
        beta = alpha.copy()
    else:
        beta = check_prob_vector(beta, "system replacement law")
        if beta.shape[0] != n_up + 1:
            raise ModelError("system replacement law has the wrong length")

    raw_total = prod(m.n_ext for m in modules)
    unit_total = prod(m.n_raw * m.n_phase for m in modules)
    unit_up = 0
    for bi, failed in enumerate(blocks):
        unit_up += sizes[bi] * prod(modules[i].n_down_raw * modules[i].n_phase for i in failed)
    return SystemModel(
        modules=modules,
        structure=structure,
        Q=q,
        module_states=module_states,
        failed_sets=failed_sets,
        n_u1=int(in_u1.sum()),
        alpha=alpha,
        beta=beta,
        n_down_raw=raw_total - n_up,
        n_down_raw_units=unit_total - unit_up,
    )


def classify_system_states(system: SystemModel):
    """Return (optimal, critical, down) index arrays of the system."""
    return system.u1, system.u2, np.array([system.d])


def build_system(specs: Sequence[ModuleSpec], structure: Structure,
                 beta: np.ndarray | None = None) -> SystemModel:
    return build_system_generator([build_module_wear_generator(s) for s in specs], structure, beta)
