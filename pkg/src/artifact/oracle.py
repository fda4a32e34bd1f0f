"""Concrete bounded interpreter for artifact specifications.

This module is the explicit-state reference semantics: it enumerates
successor configurations of a task over a fixed finite database, validates
concrete trees of local runs against every structural rule (initialization,
service transitions, artifact-set updates, segment discipline, child
input/return passing), evaluates temporal properties directly on finite
trees, searches for certified violating trees, generates random runs, and
enumerates linearizations of a tree into global event sequences.

Everything here is exact (rationals only, no floats) and deliberately
brute-force; it is tractable only on tiny inputs and exists as differential
ground truth for the symbolic engine.

Finite trees and certification
------------------------------

A complete tree of local runs is infinite whenever the root stays active
forever, so this module works with *finite* trees read as follows: a local
run that does not end with its closing service is *non-returning* — either a
truncated prefix or a run blocked forever on a child that never returns.
``validate_tree`` accepts both readings (prefix validity).  A finite tree
*certifies* a property verdict only when the evaluation never depends on
unseen steps: the root must be blocked on children certified to run forever
(``certification_problems``), and the property evaluation taints any child
formula that would inspect a non-returning child (three-valued result) —
unless ``divergence_tags`` establishes how that child continues forever, in
which case the evaluator decides what it can about the unseen suffix (for a
run blocked on diverging children the word is complete as shown; for a run
continuing through an internal-service lasso the suffix holds only internal
services, never a close or return).  A certified falsifying tree is
therefore sound evidence of a real violation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Optional, Sequence, Union

from .arith import EQ, NE, ZERO, LinConstraint, constraint as lin_constraint, feasible
from .model import (
    And,
    BoolCond,
    Cond,
    Database,
    Eq,
    Exists,
    HasSpec,
    IdVal,
    Implies,
    InternalService,
    LinCmp,
    LinExpr,
    Not,
    Num,
    Or,
    RelAtom,
    SetAtom,
    Sort,
    Task,
    Term,
    Value,
    Var,
    cond_vars,
    iter_atoms,
    map_terms,
    rename_cond,
)
from .property_ast import (
    Atom,
    ChildFormula,
    CondAtom,
    HltlProperty,
    Ltl,
    LtlAnd,
    LtlAtom,
    LtlF,
    LtlG,
    LtlImplies,
    LtlNot,
    LtlOr,
    LtlU,
    LtlW,
    LtlX,
    Obs,
    ServiceAtom,
)

__all__ = [
    "UnsupportedCondition",
    "UnsupportedProperty",
    "TaskInstance",
    "Step",
    "ConcreteLocalRun",
    "ConcreteTree",
    "ConditionEvaluator",
    "Pools",
    "default_pools",
    "open_instance",
    "child_initial",
    "writeback",
    "concrete_step",
    "internal_successors",
    "validate_tree",
    "satisfies",
    "check_tree",
    "falsifying_assignment",
    "certification_problems",
    "divergence_tags",
    "SearchBounds",
    "Violation",
    "find_violation",
    "random_tree",
    "GlobalState",
    "LinearEvent",
    "tree_nodes",
    "linearize",
]


class UnsupportedCondition(Exception):
    """A condition outside the fragment this evaluator decides exactly."""


class UnsupportedProperty(Exception):
    """A property outside the fragment this evaluator decides exactly."""


# ---------------------------------------------------------------------------
# Configurations, runs, trees
# ---------------------------------------------------------------------------

#: A task valuation frozen for hashing: (variable, value) pairs sorted by name.
Valuation = tuple[tuple[str, Value], ...]


def freeze_valuation(mapping: Mapping[str, Value]) -> Valuation:
    return tuple(sorted(mapping.items()))


def _value_key(v: Value):
    if v is None:
        return (0, "", 0, 0)
    if isinstance(v, Fraction):
        return (1, "", v.numerator, v.denominator)
    return (2, v.rel + "\x00" + v.token, 0, 0)


def _tuple_key(t: tuple[Value, ...]):
    return tuple(_value_key(v) for v in t)


@dataclass(frozen=True, slots=True)
class TaskInstance:
    """A task configuration: a full valuation of the task's variables plus
    the current contents of its artifact set (empty tuple set if none)."""

    task: str
    valuation: Valuation
    store: frozenset[tuple[Value, ...]]

    def vmap(self) -> dict[str, Value]:
        return dict(self.valuation)

    def value(self, var: str) -> Value:
        for name, v in self.valuation:
            if name == var:
                return v
        raise KeyError(var)


@dataclass(frozen=True, slots=True)
class Step:
    """The service labelling one run position.

    ``kind`` uses the observable vocabulary: "opened" (the task's own opening
    service, position 0 only), "svc" (internal service ``name``), "open" /
    "close" (child task ``name``), "closed" (the task's own closing service,
    final position only).
    """

    kind: str
    name: Optional[str] = None


@dataclass(frozen=True, slots=True)
class ConcreteLocalRun:
    """A finite local run: the input valuation and the sequence of
    (configuration, service) pairs, starting with the opening pair."""

    task: str
    nu_in: Valuation
    steps: tuple[tuple[TaskInstance, Step], ...]

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def returning(self) -> bool:
        return bool(self.steps) and self.steps[-1][1].kind == "closed"

    @property
    def final_instance(self) -> TaskInstance:
        return self.steps[-1][0]

    def final_valuation(self) -> dict[str, Value]:
        return self.final_instance.vmap()


@dataclass(frozen=True, slots=True)
class ConcreteTree:
    """A finite tree of local runs: one run plus, for every position that
    opens a child, the linked child subtree (keyed by that position)."""

    run: ConcreteLocalRun
    children: tuple[tuple[int, "ConcreteTree"], ...] = ()

    def child_at(self, pos: int) -> "ConcreteTree":
        for p, sub in self.children:
            if p == pos:
                return sub
        raise KeyError(pos)

    def unmatched(self) -> tuple[tuple[int, "ConcreteTree"], ...]:
        """Edges whose child run never returns (the parent stays blocked)."""
        return tuple((p, s) for p, s in self.children if not s.run.returning)

    def size(self) -> int:
        return len(self.run.steps) + sum(s.size() for _, s in self.children)


# ---------------------------------------------------------------------------
# Exact condition evaluation
# ---------------------------------------------------------------------------

# Matrix nodes for grounding quantified numeric variables: a boolean leaf, a
# linear constraint leaf, or an and/or node over sub-matrices.
_Matrix = Union[bool, LinConstraint, tuple]

_DNF_CAP = 4096


class ConditionEvaluator:
    """Decides conditions exactly over a fixed database.

    Identifier quantifiers are grounded over the active domain extended with
    null and one fresh identifier per binder (exact by genericity: values
    outside the active domain are interchangeable).  Numeric quantifiers are
    decided by exact linear-arithmetic feasibility.  The one unsupported
    shape is a negated quantifier whose body still mentions an *unknown*
    numeric (a universal over numbers); specifications never need it and
    ``UnsupportedCondition`` is raised if a property does.
    """

    def __init__(self, db: Database):
        self.db = db
        self._fresh = 0

    # -- public -------------------------------------------------------------

    def decide(
        self,
        cond: Cond,
        nu: Mapping[str, Value],
        store: Optional[frozenset] = None,
        store_task: Optional[str] = None,
    ) -> bool:
        if isinstance(cond, BoolCond):
            return cond.value
        if isinstance(cond, Eq):
            return self._term(cond.left, nu) == self._term(cond.right, nu)
        if isinstance(cond, LinCmp):
            return self._lincmp(cond, nu)
        if isinstance(cond, RelAtom):
            args = tuple(self._term(t, nu) for t in cond.args)
            return args in self.db.rows_of(cond.rel)
        if isinstance(cond, SetAtom):
            if store is None or cond.task != store_task:
                raise UnsupportedCondition(
                    f"artifact-set atom of task {cond.task} has no set in scope"
                )
            args = tuple(self._term(t, nu) for t in cond.args)
            return args in store
        if isinstance(cond, Not):
            return not self.decide(cond.body, nu, store, store_task)
        if isinstance(cond, And):
            return all(self.decide(c, nu, store, store_task) for c in cond.items)
        if isinstance(cond, Or):
            return any(self.decide(c, nu, store, store_task) for c in cond.items)
        if isinstance(cond, Implies):
            return not self.decide(cond.lhs, nu, store, store_task) or self.decide(
                cond.rhs, nu, store, store_task
            )
        if isinstance(cond, Exists):
            return self._exists(cond.bound, cond.body, dict(nu), store, store_task)
        raise UnsupportedCondition(f"cannot evaluate {type(cond).__name__}")

    def solve_numeric(
        self,
        names: Sequence[str],
        cond: Cond,
        nu: Mapping[str, Value],
        store: Optional[frozenset] = None,
        store_task: Optional[str] = None,
    ) -> Optional[dict[str, Fraction]]:
        """A satisfying assignment of the numeric variables *names* (treated
        as unknowns) for *cond* under *nu*, or None if there is none."""
        if not names:
            return {} if self.decide(cond, nu, store, store_task) else None
        matrix = self._matrix(cond, dict(nu), frozenset(names), True, store, store_task)
        for conj in _dnf(matrix):
            wit = feasible(list(conj))
            if wit is not None:
                return {n: wit.get(n, ZERO) for n in names}
        return None

    def solve_numeric_cases(
        self,
        names: Sequence[str],
        cond: Cond,
        nu: Mapping[str, Value],
        store: Optional[frozenset] = None,
        store_task: Optional[str] = None,
    ) -> list[dict[str, Fraction]]:
        """One satisfying assignment of the numeric unknowns *names* per
        feasible disjunct of the condition's disjunctive normal form, so
        every branch of a conditional is represented.  Deduplicated, in
        deterministic order."""
        if not names:
            return [{}] if self.decide(cond, nu, store, store_task) else []
        matrix = self._matrix(cond, dict(nu), frozenset(names), True, store, store_task)
        out: list[dict[str, Fraction]] = []
        seen: set[tuple[Fraction, ...]] = set()
        for conj in _dnf(matrix):
            wit = feasible(list(conj))
            if wit is None:
                continue
            pick = {n: wit.get(n, ZERO) for n in names}
            key = tuple(pick[n] for n in names)
            if key not in seen:
                seen.add(key)
                out.append(pick)
        return out

    # -- terms and ground atoms ----------------------------------------------

    def _term(self, t: Term, nu: Mapping[str, Value]) -> Value:
        if isinstance(t, Var):
            try:
                return nu[t.name]
            except KeyError:
                raise UnsupportedCondition(f"unbound variable {t.name}") from None
        if isinstance(t, Num):
            return t.value
        return None  # null

    def _lincmp(self, cond: LinCmp, nu: Mapping[str, Value]) -> bool:
        total = cond.expr.const
        for v, coeff in cond.expr.terms:
            val = self._term(Var(v), nu)
            if not isinstance(val, Fraction):
                raise UnsupportedCondition(
                    f"variable {v} holds an identifier inside a linear comparison"
                )
            total += coeff * val
        op = cond.op.value
        if op == "=":
            return total == 0
        if op == "!=":
            return total != 0
        if op == "<":
            return total < 0
        if op == "<=":
            return total <= 0
        if op == ">":
            return total > 0
        return total >= 0

    # -- quantifiers ----------------------------------------------------------

    def _fresh_id(self) -> IdVal:
        self._fresh += 1
        return IdVal("?", f"e{self._fresh}")

    def _id_candidates(self, nu: Mapping[str, Value]) -> list[Value]:
        out: dict = {}
        for v in self.db.all_ids():
            out.setdefault(v, None)
        for v in nu.values():
            if isinstance(v, IdVal):
                out.setdefault(v, None)
        cands: list[Value] = list(out)
        cands.append(None)
        cands.append(self._fresh_id())
        return cands

    def _exists(
        self,
        bound: tuple[tuple[str, Sort], ...],
        body: Cond,
        nu: dict[str, Value],
        store: Optional[frozenset],
        store_task: Optional[str],
    ) -> bool:
        ids = [n for n, s in bound if s is Sort.ID]
        nums = [n for n, s in bound if s is Sort.REAL]

        def rec(i: int, env: dict[str, Value]) -> bool:
            if i == len(ids):
                if not nums:
                    return self.decide(body, env, store, store_task)
                return self.solve_numeric(nums, body, env, store, store_task) is not None
            for v in self._id_candidates(env):
                if rec(i + 1, {**env, ids[i]: v}):
                    return True
            return False

        return rec(0, nu)

    # -- grounding numeric unknowns into linear constraints -------------------

    def _matrix(
        self,
        cond: Cond,
        nu: dict[str, Value],
        unknowns: frozenset[str],
        pos: bool,
        store: Optional[frozenset],
        store_task: Optional[str],
    ) -> _Matrix:
        if isinstance(cond, BoolCond):
            return cond.value if pos else not cond.value
        if isinstance(cond, Eq):
            return self._matrix_eq(cond, nu, unknowns, pos)
        if isinstance(cond, LinCmp):
            return self._matrix_lincmp(cond, nu, unknowns, pos)
        if isinstance(cond, RelAtom):
            rows = self.db.rows_of(cond.rel)
            return self._matrix_rows(cond.args, rows, nu, unknowns, pos)
        if isinstance(cond, SetAtom):
            if store is None or cond.task != store_task:
                raise UnsupportedCondition(
                    f"artifact-set atom of task {cond.task} has no set in scope"
                )
            rows = tuple(sorted(store, key=_tuple_key))
            return self._matrix_rows(cond.args, rows, nu, unknowns, pos)
        if isinstance(cond, Not):
            return self._matrix(cond.body, nu, unknowns, not pos, store, store_task)
        if isinstance(cond, And):
            parts = tuple(
                self._matrix(c, nu, unknowns, pos, store, store_task) for c in cond.items
            )
            return ("and" if pos else "or", parts)
        if isinstance(cond, Or):
            parts = tuple(
                self._matrix(c, nu, unknowns, pos, store, store_task) for c in cond.items
            )
            return ("or" if pos else "and", parts)
        if isinstance(cond, Implies):
            a = self._matrix(cond.lhs, nu, unknowns, not pos, store, store_task)
            b = self._matrix(cond.rhs, nu, unknowns, pos, store, store_task)
            return ("or", (a, b)) if pos else ("and", (a, b))
        if isinstance(cond, Exists):
            return self._matrix_exists(cond, nu, unknowns, pos, store, store_task)
        raise UnsupportedCondition(f"cannot ground {type(cond).__name__}")

    def _side(self, t: Term, nu: Mapping[str, Value], unknowns: frozenset[str]):
        """Resolve a term to a concrete value, or to a LinExpr when it is an
        unknown numeric variable (tagged by returning a LinExpr)."""
        if isinstance(t, Var) and t.name in unknowns:
            return LinExpr.var(t.name)
        return self._term(t, nu)

    def _matrix_eq(self, cond: Eq, nu, unknowns, pos: bool) -> _Matrix:
        l = self._side(cond.left, nu, unknowns)
        r = self._side(cond.right, nu, unknowns)
        if not isinstance(l, LinExpr) and not isinstance(r, LinExpr):
            return (l == r) if pos else (l != r)

        def as_expr(x) -> LinExpr:
            if isinstance(x, LinExpr):
                return x
            if isinstance(x, Fraction):
                return LinExpr.of(x)
            raise UnsupportedCondition(
                "identifier compared with a quantified numeric variable"
            )

        return LinConstraint(as_expr(l) - as_expr(r), EQ if pos else NE)

    def _matrix_lincmp(self, cond: LinCmp, nu, unknowns, pos: bool) -> _Matrix:
        subst: dict[str, LinExpr] = {}
        for v, _ in cond.expr.terms:
            if v in unknowns:
                continue
            val = self._term(Var(v), nu)
            if not isinstance(val, Fraction):
                raise UnsupportedCondition(
                    f"variable {v} holds an identifier inside a linear comparison"
                )
            subst[v] = LinExpr.of(val)
        expr = cond.expr.substitute(subst)
        op = cond.op if pos else cond.op.negate()
        if expr.is_const:
            return self.decide(LinCmp(op, expr), {})
        return lin_constraint(LinCmp(op, expr))

    def _matrix_rows(
        self,
        args: tuple[Term, ...],
        rows: Sequence[tuple[Value, ...]],
        nu,
        unknowns,
        pos: bool,
    ) -> _Matrix:
        sides = [self._side(a, nu, unknowns) for a in args]
        if not any(isinstance(s, LinExpr) for s in sides):
            vals = tuple(sides)
            member = vals in set(rows)
            return member if pos else not member
        if pos:
            branches: list[_Matrix] = []
            for row in rows:
                if len(row) != len(sides):
                    continue
                parts: list[_Matrix] = []
                ok = True
                for s, cell in zip(sides, row):
                    if isinstance(s, LinExpr):
                        if not isinstance(cell, Fraction):
                            ok = False
                            break
                        parts.append(LinConstraint(s - LinExpr.of(cell), EQ))
                    elif s != cell:
                        ok = False
                        break
                if ok:
                    branches.append(("and", tuple(parts)) if parts else True)
            return ("or", tuple(branches))
        # Negation: the argument tuple must differ from every row.
        parts_all: list[_Matrix] = []
        for row in rows:
            if len(row) != len(sides):
                continue
            diffs: list[_Matrix] = []
            known_mismatch = False
            for s, cell in zip(sides, row):
                if isinstance(s, LinExpr):
                    if isinstance(cell, Fraction):
                        diffs.append(LinConstraint(s - LinExpr.of(cell), NE))
                    else:
                        known_mismatch = True  # a number never equals this cell
                        break
                elif s != cell:
                    known_mismatch = True
                    break
            if known_mismatch:
                continue
            if not diffs:
                return False  # the row matches outright
            parts_all.append(("or", tuple(diffs)))
        return ("and", tuple(parts_all))

    def _matrix_exists(
        self, cond: Exists, nu, unknowns, pos: bool, store, store_task
    ) -> _Matrix:
        if not pos:
            body_vars = cond_vars(cond.body)
            if body_vars & unknowns:
                raise UnsupportedCondition(
                    "universal quantification over an unknown numeric variable"
                )
            return not self._exists(cond.bound, cond.body, dict(nu), store, store_task)
        ids = [n for n, s in cond.bound if s is Sort.ID]
        nums = [n for n, s in cond.bound if s is Sort.REAL]
        renaming = {}
        for n in nums:
            self._fresh += 1
            renaming[n] = f"{n}?{self._fresh}"
        body = rename_cond(cond.body, renaming) if renaming else cond.body
        new_unknowns = unknowns | frozenset(renaming.values())

        def expand(i: int, env: dict[str, Value]) -> _Matrix:
            if i == len(ids):
                return self._matrix(body, env, new_unknowns, True, store, store_task)
            parts = tuple(
                expand(i + 1, {**env, ids[i]: v}) for v in self._id_candidates(env)
            )
            return ("or", parts)

        return expand(0, dict(nu))


def _dnf(node: _Matrix) -> list[tuple[LinConstraint, ...]]:
    if node is True:
        return [()]
    if node is False:
        return []
    if isinstance(node, LinConstraint):
        return [(node,)]
    op, parts = node
    if op == "or":
        out: list[tuple[LinConstraint, ...]] = []
        for p in parts:
            out.extend(_dnf(p))
            if len(out) > _DNF_CAP:
                raise UnsupportedCondition("condition too large to ground")
        return out
    acc: list[tuple[LinConstraint, ...]] = [()]
    for p in parts:
        branches = _dnf(p)
        acc = [a + b for a in acc for b in branches]
        if not acc:
            return []
        if len(acc) > _DNF_CAP:
            raise UnsupportedCondition("condition too large to ground")
    return acc


# ---------------------------------------------------------------------------
# Transitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pools:
    """Finite candidate pools for enumerating nondeterministic choices."""

    ids: tuple[Value, ...]
    numerics: tuple[Fraction, ...]
    combo_cap: int = 4096


def _condition_numbers(cond: Cond) -> Iterator[Fraction]:
    stack = [cond]
    while stack:
        c = stack.pop()
        if isinstance(c, Eq):
            for t in (c.left, c.right):
                if isinstance(t, Num):
                    yield t.value
        elif isinstance(c, LinCmp):
            yield c.expr.const
            yield -c.expr.const
        elif isinstance(c, (RelAtom, SetAtom)):
            for t in c.args:
                if isinstance(t, Num):
                    yield t.value
        elif isinstance(c, Not):
            stack.append(c.body)
        elif isinstance(c, (And, Or)):
            stack.extend(c.items)
        elif isinstance(c, Implies):
            stack.extend((c.lhs, c.rhs))
        elif isinstance(c, Exists):
            stack.append(c.body)


def default_pools(spec: HasSpec, db: Database, *, closure: bool = True,
                  cap: int = 64) -> Pools:
    """Deterministic default pools: every database identifier plus null, and
    a numeric pool seeded with 0, the specification's symbolic constants and
    literals, and the database's numeric cells, optionally extended with one
    level of pairwise sums/differences.  The closure is truncated at *cap*
    values, keeping those nearest zero (base values always survive)."""
    ids: tuple[Value, ...] = db.all_ids() + (None,)
    base: set[Fraction] = {ZERO}
    base.update(Fraction(v) for _, v in spec.constants)
    conds: list[Cond] = [spec.global_pre]
    for t in spec.tasks:
        conds.append(t.closing_pre)
        for s in t.services:
            conds.extend((s.pre, s.post))
        for link in t.children:
            conds.append(link.opening_pre)
    for c in conds:
        base.update(_condition_numbers(c))
    for rows in db.rows.values():
        for row in rows:
            for cell in row:
                if isinstance(cell, Fraction):
                    base.add(cell)
    nums = set(base)
    if closure:
        extra = ({a + b for a in base for b in base}
                 | {a - b for a in base for b in base}) - base
        for v in sorted(extra, key=lambda x: (abs(x), x < 0)):
            if len(nums) >= cap:
                break
            nums.add(v)
    return Pools(ids=ids, numerics=tuple(sorted(nums)))


def open_instance(task: Task, nu_in: Mapping[str, Value]) -> TaskInstance:
    """The initial configuration of a local run: inputs from *nu_in*, other
    identifier variables null, other numeric variables 0, empty set."""
    if set(nu_in) != set(task.input_vars):
        raise ValueError(
            f"{task.name}: input valuation must cover exactly {task.input_vars}"
        )
    nu: dict[str, Value] = {}
    for v in task.id_vars:
        nu[v] = nu_in[v] if v in nu_in else None
    for v in task.num_vars:
        nu[v] = nu_in[v] if v in nu_in else ZERO
    return TaskInstance(task.name, freeze_valuation(nu), frozenset())


def child_initial(link, parent_nu: Mapping[str, Value]) -> dict[str, Value]:
    """The child's input valuation induced by the parent's valuation."""
    return {cv: parent_nu[pv] for cv, pv in link.f_in}


def writeback(parent_task: Task, link, parent_nu: Mapping[str, Value],
              child_final: Mapping[str, Value]) -> dict[str, Value]:
    """The parent valuation after a child closes: returned values overwrite
    their targets, except that an identifier target keeps a non-null value."""
    out = dict(parent_nu)
    for cv, pv in link.f_out:
        v = child_final[cv]
        if parent_task.sort_of(pv) is Sort.ID and out[pv] is not None:
            continue
        out[pv] = v
    return out


def concrete_step(
    spec: HasSpec,
    inst: TaskInstance,
    svc: InternalService,
    db: Database,
    *,
    pools: Optional[Pools] = None,
) -> tuple[TaskInstance, ...]:
    """All successor configurations of *inst* under internal service *svc*
    over database *db*, enumerating free variables over finite pools
    (defaulting to the active domain plus null and the derived numeric pool).
    Deterministic order."""
    task = spec.task(inst.task)
    ev = ConditionEvaluator(db)
    return internal_successors(spec, task, inst, svc, ev,
                               pools or default_pools(spec, db))


def internal_successors(
    spec: HasSpec,
    task: Task,
    inst: TaskInstance,
    svc: InternalService,
    ev: ConditionEvaluator,
    pools: Pools,
) -> tuple[TaskInstance, ...]:
    """All successor configurations of *inst* under internal service *svc*,
    with non-input variables drawn from the pools, plus, per identifier
    choice, one solver-found numeric assignment for each branch of the
    postcondition — so every case is represented even when the pool misses
    the needed values.  Deterministic order."""
    nu = inst.vmap()
    if not ev.decide(svc.pre, nu, None, None):
        return ()
    inputs = set(task.input_vars)
    svars = task.set_vars
    base_store = set(inst.store)
    if svc.inserts:
        old_tuple = tuple(nu[v] for v in svars)
        mid_store = base_store | {old_tuple}
    else:
        mid_store = base_store

    if svc.retrieves:
        retrieve_choices: list[Optional[tuple[Value, ...]]] = sorted(
            mid_store, key=_tuple_key
        )
    else:
        retrieve_choices = [None]

    out: list[TaskInstance] = []
    seen: set[TaskInstance] = set()
    for chosen in retrieve_choices:
        fixed: dict[str, Value] = {v: nu[v] for v in inputs}
        if chosen is not None:
            conflict = False
            for var, val in zip(svars, chosen):
                if var in fixed and fixed[var] != val:
                    conflict = True
                    break
                fixed[var] = val
            if conflict:
                continue
            new_store = frozenset(mid_store - {chosen})
        elif svc.inserts:
            new_store = frozenset(mid_store)
        else:
            new_store = inst.store
        free_ids = [v for v in task.id_vars if v not in fixed]
        free_nums = [v for v in task.num_vars if v not in fixed]
        pool_combos = len(pools.numerics) ** len(free_nums) <= pools.combo_cap

        for id_combo in itertools.product(pools.ids, repeat=len(free_ids)):
            partial = dict(fixed)
            partial.update(zip(free_ids, id_combo))
            candidates: list[dict[str, Value]] = []
            if pool_combos:
                for num_combo in itertools.product(pools.numerics, repeat=len(free_nums)):
                    cand = dict(partial)
                    cand.update(zip(free_nums, num_combo))
                    if ev.decide(svc.post, cand, None, None):
                        candidates.append(cand)
            if free_nums:
                for wit in ev.solve_numeric_cases(free_nums, svc.post, partial,
                                                  None, None):
                    cand = dict(partial)
                    cand.update(wit)
                    candidates.append(cand)
            elif not pool_combos:
                if ev.decide(svc.post, partial, None, None):
                    candidates.append(dict(partial))
            for cand in candidates:
                nxt = TaskInstance(task.name, freeze_valuation(cand), new_store)
                if nxt not in seen:
                    seen.add(nxt)
                    out.append(nxt)
    return tuple(out)


# ---------------------------------------------------------------------------
# Tree validity
# ---------------------------------------------------------------------------


def validate_tree(tree: ConcreteTree, spec: HasSpec, db: Database) -> list[str]:
    """Every structural problem in the tree, as human-readable messages
    (empty list = valid).  Finite trees are judged with prefix validity: a
    run not ending in its closing service is simply non-returning; whether
    that is justified (blocked on a diverging child) is the business of
    ``certification_problems``."""
    ev = ConditionEvaluator(db)
    problems: list[str] = []

    def note(path: str, msg: str) -> None:
        problems.append(f"{path}: {msg}")

    def check_node(node: ConcreteTree, path: str, is_root: bool,
                   expected_task: str, expected_in: Optional[Valuation]) -> None:
        run = node.run
        if run.task != expected_task:
            note(path, f"run of task {run.task}, expected {expected_task}")
            return
        try:
            task = spec.task(run.task)
        except KeyError:
            note(path, f"unknown task {run.task}")
            return
        if not run.steps:
            note(path, "empty run")
            return
        allvars = set(task.all_vars())
        for i, (inst, _) in enumerate(run.steps):
            if inst.task != task.name:
                note(path, f"position {i}: configuration of task {inst.task}")
                return
            if set(dict(inst.valuation)) != allvars:
                note(path, f"position {i}: valuation domain mismatch")
                return
        if set(dict(run.nu_in)) != set(task.input_vars):
            note(path, "input valuation domain mismatch")
            return
        if expected_in is not None and run.nu_in != expected_in:
            note(path, "input valuation differs from the one passed by the parent")

        inst0, step0 = run.steps[0]
        if step0.kind != "opened":
            note(path, "run does not start with the opening service")
        nu0 = inst0.vmap()
        nu_in = dict(run.nu_in)
        for v in task.all_vars():
            if v in nu_in:
                if nu0[v] != nu_in[v]:
                    note(path, f"input {v} not copied into the initial valuation")
            elif v in task.id_vars:
                if nu0[v] is not None:
                    note(path, f"non-input identifier {v} not null initially")
            elif nu0[v] != ZERO:
                note(path, f"non-input numeric {v} not 0 initially")
        if inst0.store:
            note(path, "artifact set not empty initially")
        if is_root:
            if run.task != spec.root:
                note(path, f"root run of {run.task}, expected {spec.root}")
            try:
                if not ev.decide(spec.global_pre, nu_in, None, None):
                    note(path, "root inputs violate the global precondition")
            except UnsupportedCondition as e:
                note(path, f"global precondition: {e}")

        # --- per-transition checks ---
        for i in range(1, len(run.steps)):
            prev, _ = run.steps[i - 1]
            cur, step = run.steps[i]
            where = f"position {i}"
            pnu, cnu = prev.vmap(), cur.vmap()
            for v in task.input_vars:
                if cnu[v] != pnu[v]:
                    note(path, f"{where}: input {v} changed")
            if step.kind == "opened":
                note(path, f"{where}: opening service after position 0")
            elif step.kind == "svc":
                try:
                    svc = task.service(step.name or "")
                except KeyError:
                    note(path, f"{where}: unknown service {step.name}")
                    continue
                try:
                    if not ev.decide(svc.pre, pnu, None, None):
                        note(path, f"{where}: precondition of {svc.name} fails")
                    if not ev.decide(svc.post, cnu, None, None):
                        note(path, f"{where}: postcondition of {svc.name} fails")
                except UnsupportedCondition as e:
                    note(path, f"{where}: {e}")
                _check_store(task, svc, prev, cur, path, where, note)
            elif step.kind == "open":
                try:
                    link = task.child_link(step.name or "")
                except KeyError:
                    note(path, f"{where}: no child task {step.name}")
                    continue
                try:
                    if not ev.decide(link.opening_pre, pnu, None, None):
                        note(path, f"{where}: opening condition of {link.child} fails")
                except UnsupportedCondition as e:
                    note(path, f"{where}: {e}")
                if cur != prev:
                    note(path, f"{where}: opening a child must not change the parent")
            elif step.kind == "close":
                if cur.store != prev.store:
                    note(path, f"{where}: closing a child must not change the set")
                # The exact valuation is pinned by the edge check below.
            elif step.kind == "closed":
                if i != len(run.steps) - 1:
                    note(path, f"{where}: closing service before the final position")
                if is_root:
                    note(path, f"{where}: the root task never closes")
                if cur != prev:
                    note(path, f"{where}: closing must not change the configuration")
                try:
                    if not ev.decide(task.closing_pre, pnu, None, None):
                        note(path, f"{where}: closing condition fails")
                except UnsupportedCondition as e:
                    note(path, f"{where}: {e}")
            else:
                note(path, f"{where}: unknown step kind {step.kind}")

        # --- segment discipline and open/close pairing ---
        pairs: dict[int, int] = {}  # open position -> close position
        seg_open: dict[str, int] = {}
        opened_in_seg: set[str] = set()
        for i, (_, step) in enumerate(run.steps):
            if step.kind == "svc":
                if seg_open:
                    names = ", ".join(sorted(seg_open))
                    note(path, f"position {i}: internal step while {names} still open")
                seg_open = {}
                opened_in_seg = set()
            elif step.kind == "open":
                name = step.name or ""
                if name in opened_in_seg:
                    note(path, f"position {i}: {name} opened twice in one segment")
                seg_open[name] = i
                opened_in_seg.add(name)
            elif step.kind == "close":
                name = step.name or ""
                if name in seg_open:
                    pairs[seg_open.pop(name)] = i
                else:
                    note(path, f"position {i}: close of {name} without a matching open")
            elif step.kind == "closed":
                if seg_open:
                    names = ", ".join(sorted(seg_open))
                    note(path, f"position {i}: task closes while {names} still open")

        # --- edges ---
        open_positions = {
            i for i, (_, step) in enumerate(run.steps) if step.kind == "open"
        }
        edge_positions = [p for p, _ in node.children]
        if len(set(edge_positions)) != len(edge_positions):
            note(path, "two subtrees linked at one position")
        if set(edge_positions) != open_positions:
            note(path, "subtree positions do not match the opening positions")
        for pos, sub in node.children:
            if pos not in open_positions:
                continue
            inst_at, step_at = run.steps[pos]
            name = step_at.name or ""
            try:
                link = task.child_link(name)
            except KeyError:
                continue  # already reported
            sub_path = f"{path}/{pos}:{link.child}"
            expected = freeze_valuation(child_initial(link, inst_at.vmap()))
            close_at = pairs.get(pos)
            if close_at is None:
                if sub.run.returning:
                    note(path, f"position {pos}: returning child {name} never closed")
            else:
                if not sub.run.returning:
                    note(path, f"position {pos}: non-returning child {name} closed "
                               f"at {close_at}")
                else:
                    before, _ = run.steps[close_at - 1]
                    after, _ = run.steps[close_at]
                    want = writeback(task, link, before.vmap(),
                                     sub.run.final_valuation())
                    if after.vmap() != want:
                        note(path, f"position {close_at}: valuation after closing "
                                   f"{name} does not match the returned values")
            check_node(sub, sub_path, False, link.child, expected)

    root_in = freeze_valuation(dict(tree.run.nu_in))
    check_node(tree, "root", True, spec.root, root_in)
    return problems


def _check_store(task: Task, svc: InternalService, prev: TaskInstance,
                 cur: TaskInstance, path: str, where: str, note) -> None:
    if task.set_relation is None:
        if prev.store or cur.store:
            note(path, f"{where}: artifact set on a task that declares none")
        return
    old = tuple(prev.vmap()[v] for v in task.set_vars)
    new = tuple(cur.vmap()[v] for v in task.set_vars)
    mid = set(prev.store)
    if svc.inserts:
        mid = mid | {old}
    if svc.retrieves:
        if new not in mid:
            note(path, f"{where}: retrieved tuple was not in the set")
            return
        want = frozenset(mid - {new})
    else:
        want = frozenset(mid)
    if cur.store != want:
        note(path, f"{where}: artifact set not updated according to {svc.name}")


# ---------------------------------------------------------------------------
# Property evaluation (three-valued, finite semantics)
# ---------------------------------------------------------------------------

T3 = Optional[bool]  # True / False / None (depends on a diverging child)


def _not3(v: T3) -> T3:
    return None if v is None else not v


def _and3(vals) -> T3:
    saw_none = False
    for v in vals:
        if v is False:
            return False
        if v is None:
            saw_none = True
    return None if saw_none else True


def _or3(vals) -> T3:
    saw_none = False
    for v in vals:
        if v is True:
            return True
        if v is None:
            saw_none = True
    return None if saw_none else False


class _TreeEvaluator:
    def __init__(self, spec: HasSpec, db: Database, ev: ConditionEvaluator,
                 gamma: Mapping[str, Value],
                 diverging: Optional[Mapping[int, str]] = None):
        self.spec = spec
        self.ev = ev
        self.gamma = dict(gamma)
        self.tags = dict(diverging or {})
        self._lasso = {i for i, kind in self.tags.items() if kind == "lasso"}
        self._pins: dict[str, dict[str, Term]] = {}

    def run(self, f: Ltl, node: ConcreteTree) -> T3:
        return self.at(f, node, 0)

    def _pinned(self, task: Task) -> dict[str, Term]:
        """Variables that every internal postcondition of *task* equates to
        one and the same constant (a top-level ``v = literal`` conjunct), so
        their value is known at every position the unseen suffix visits."""
        cached = self._pins.get(task.name)
        if cached is not None:
            return cached
        pins: Optional[dict[str, Term]] = None
        for svc in task.services:
            here: dict[str, Term] = {}
            parts = svc.post.items if isinstance(svc.post, And) else (svc.post,)
            for part in parts:
                if not isinstance(part, Eq):
                    continue
                for var, const in ((part.left, part.right),
                                   (part.right, part.left)):
                    if isinstance(var, Var) and not isinstance(const, Var):
                        if here.get(var.name, const) == const:
                            here[var.name] = const
                        else:
                            here.pop(var.name)
            if pins is None:
                pins = here
            else:
                pins = {v: t for v, t in pins.items() if here.get(v) == t}
        out = pins or {}
        self._pins[task.name] = out
        return out

    def at(self, f: Ltl, node: ConcreteTree, j: int) -> T3:
        n = len(node.run.steps)
        lasso = id(node) in self._lasso
        if isinstance(f, LtlAtom):
            return self.atom(f.atom, node, j)
        if isinstance(f, LtlNot):
            return _not3(self.at(f.body, node, j))
        if isinstance(f, LtlAnd):
            return _and3(self.at(g, node, j) for g in f.items)
        if isinstance(f, LtlOr):
            return _or3(self.at(g, node, j) for g in f.items)
        if isinstance(f, LtlImplies):
            return _or3((_not3(self.at(f.lhs, node, j)), self.at(f.rhs, node, j)))
        if isinstance(f, LtlX):
            if j + 1 < n:
                return self.at(f.body, node, j + 1)
            return self.tail(f.body, node) if lasso else False
        if isinstance(f, LtlF):
            vals = [self.at(f.body, node, k) for k in range(j, n)]
            if lasso:
                vals.append(self.tail(f.body, node))
            return _or3(vals)
        if isinstance(f, LtlG):
            vals = [self.at(f.body, node, k) for k in range(j, n)]
            if lasso:
                vals.append(self.tail(f.body, node))
            return _and3(vals)
        if isinstance(f, LtlU):
            val: T3 = self.tail(f, node) if lasso else False
            for k in range(n - 1, j - 1, -1):
                val = _or3((self.at(f.rhs, node, k),
                            _and3((self.at(f.lhs, node, k), val))))
            return val
        if isinstance(f, LtlW):
            val = self.tail(f, node) if lasso else True
            for k in range(n - 1, j - 1, -1):
                val = _or3((self.at(f.rhs, node, k),
                            _and3((self.at(f.lhs, node, k), val))))
            return val
        raise UnsupportedProperty(f"cannot evaluate {type(f).__name__}")

    def tail(self, f: Ltl, node: ConcreteTree) -> T3:
        """Value of *f* at each position of the unobserved infinite suffix of
        a run certified to diverge through internal services.  Conditions
        there are unknown except over input variables (frozen for the whole
        run) and variables that every internal postcondition pins to the same
        constant (re-pinned at each suffix step), but every suffix letter is
        an internal service — never an open, a close, or this run's own
        return — which decides many formulas (e.g. ``G (closed implies c)``
        is vacuously true)."""
        if isinstance(f, LtlAtom):
            a = f.atom
            if isinstance(a, CondAtom):
                task = self.spec.task(node.run.task)
                frozen = set(task.input_vars) | set(self.gamma)
                cond = a.cond
                pinned = {v: t for v, t in self._pinned(task).items()
                          if v not in frozen}
                if pinned:
                    cond = map_terms(
                        cond,
                        lambda t: pinned.get(t.name, t)  # type: ignore[union-attr]
                        if isinstance(t, Var) else t,
                    )
                if cond_vars(cond) <= frozen and not any(
                    isinstance(at, SetAtom) for at in iter_atoms(cond)
                ):
                    nu = dict(node.run.nu_in)
                    nu.update(self.gamma)
                    try:
                        return self.ev.decide(cond, nu, None, None)
                    except UnsupportedCondition as e:
                        raise UnsupportedProperty(str(e)) from None
                return None
            if isinstance(a, ServiceAtom):
                if a.kind is Obs.INTERNAL:
                    return True if a.name is None else None
                return False
            if isinstance(a, ChildFormula):
                return False
            raise UnsupportedProperty(f"unknown atom {type(a).__name__}")
        if isinstance(f, LtlNot):
            return _not3(self.tail(f.body, node))
        if isinstance(f, LtlAnd):
            return _and3(self.tail(g, node) for g in f.items)
        if isinstance(f, LtlOr):
            return _or3(self.tail(g, node) for g in f.items)
        if isinstance(f, LtlImplies):
            return _or3((_not3(self.tail(f.lhs, node)), self.tail(f.rhs, node)))
        if isinstance(f, (LtlX, LtlF, LtlG)):
            # Every suffix position looks the same, so "now", "eventually"
            # and "always" all reduce to the per-position value.
            return self.tail(f.body, node)
        if isinstance(f, LtlU):
            # The until needs its right side, which the suffix either
            # definitely delivers, definitely never does, or leaves open.
            return self.tail(f.rhs, node)
        if isinstance(f, LtlW):
            return _or3((self.tail(f.lhs, node), self.tail(f.rhs, node)))
        raise UnsupportedProperty(f"cannot evaluate {type(f).__name__}")

    def atom(self, atom: Atom, node: ConcreteTree, j: int) -> T3:
        inst, step = node.run.steps[j]
        if isinstance(atom, CondAtom):
            nu = inst.vmap()
            overlap = set(nu) & set(self.gamma)
            if overlap:
                raise UnsupportedProperty(
                    f"property variables shadow task variables: {sorted(overlap)}"
                )
            nu.update(self.gamma)
            try:
                return self.ev.decide(atom.cond, nu, inst.store, node.run.task)
            except UnsupportedCondition as e:
                raise UnsupportedProperty(str(e)) from None
        if isinstance(atom, ServiceAtom):
            if Obs(step.kind) is not atom.kind:
                return False
            return atom.name is None or atom.name == step.name
        if isinstance(atom, ChildFormula):
            if step.kind != "open" or step.name != atom.child:
                return False
            sub = node.child_at(j)
            if not sub.run.returning and id(sub) not in self.tags:
                return None  # the real child run continues past this tree
            return self.at(atom.formula, sub, 0)
        raise UnsupportedProperty(f"unknown atom {type(atom).__name__}")


def _gamma_pool(tree: ConcreteTree, db: Database) -> list[Value]:
    seen: dict = {}
    for v in db.all_ids():
        seen.setdefault(v, None)

    def walk(node: ConcreteTree) -> None:
        for _, v in node.run.nu_in:
            if isinstance(v, IdVal):
                seen.setdefault(v, None)
        for inst, _ in node.run.steps:
            for _, v in inst.valuation:
                if isinstance(v, IdVal):
                    seen.setdefault(v, None)
            for row in inst.store:
                for v in row:
                    if isinstance(v, IdVal):
                        seen.setdefault(v, None)
        for _, sub in node.children:
            walk(sub)

    walk(tree)
    return list(seen) + [None]


def _gamma_assignments(tree: ConcreteTree, prop: HltlProperty,
                       db: Database) -> Iterator[dict[str, Value]]:
    for name, sort in prop.globals_:
        if sort is Sort.REAL:
            raise UnsupportedProperty(
                f"numeric property variable {name} needs a provided assignment"
            )
    names = [n for n, _ in prop.globals_]
    if not names:
        yield {}
        return
    pool = _gamma_pool(tree, db)
    fresh = [IdVal("?", f"g{i}") for i in range(len(names))]
    for combo in itertools.product(pool + fresh, repeat=len(names)):
        yield dict(zip(names, combo))


def satisfies(tree: ConcreteTree, prop: HltlProperty, spec: HasSpec,
              db: Database, gamma: Optional[Mapping[str, Value]] = None,
              diverging: Optional[Mapping[int, str]] = None) -> T3:
    """Whether the tree satisfies the property under finite semantics,
    three-valued: None means the verdict depends on a child run the tree
    does not fully contain.  With *gamma* the quantifier prefix is skipped
    and the formula is evaluated at that assignment; otherwise identifier
    property variables are enumerated (universally) over the active domain
    extended with null and fresh identifiers.  *diverging* (from
    ``divergence_tags``) marks runs known to continue forever, letting the
    evaluator decide inspections of non-returning children instead of
    reporting None."""
    if prop.root_task != tree.run.task:
        raise ValueError(
            f"property is over {prop.root_task}, tree is over {tree.run.task}"
        )
    ev = ConditionEvaluator(db)
    if gamma is not None:
        return _TreeEvaluator(spec, db, ev, gamma, diverging).run(prop.formula, tree)
    results = (
        _TreeEvaluator(spec, db, ev, g, diverging).run(prop.formula, tree)
        for g in _gamma_assignments(tree, prop, db)
    )
    return _and3(results)


def check_tree(
    tree: ConcreteTree,
    prop: HltlProperty,
    spec: HasSpec,
    db: Database,
    gamma: Optional[Mapping[str, Value]] = None,
) -> tuple[bool, bool]:
    """(valid, accepted): structural validity per ``validate_tree`` and
    definite satisfaction of the property under finite semantics (a None
    verdict — dependent on a diverging child — counts as not accepted)."""
    valid = not validate_tree(tree, spec, db)
    accepted = satisfies(tree, prop, spec, db, gamma) is True
    return valid, accepted


def falsifying_assignment(
    tree: ConcreteTree, prop: HltlProperty, spec: HasSpec, db: Database,
    diverging: Optional[Mapping[int, str]] = None,
) -> Optional[dict[str, Value]]:
    """An assignment of the property variables under which the tree
    definitely violates the formula, or None."""
    if prop.root_task != tree.run.task:
        return None
    ev = ConditionEvaluator(db)
    for g in _gamma_assignments(tree, prop, db):
        if _TreeEvaluator(spec, db, ev, g, diverging).run(prop.formula, tree) is False:
            return g
    return None


# ---------------------------------------------------------------------------
# Divergence certificates
# ---------------------------------------------------------------------------


def _has_internal_lasso(spec: HasSpec, inst: TaskInstance,
                        ev: ConditionEvaluator, pools: Pools, cap: int) -> bool:
    """Whether some configuration reachable from *inst* by internal services
    lies on an internal-service cycle (so the run can continue forever)."""
    task = spec.task(inst.task)
    seen: set[TaskInstance] = set()

    def dfs(s: TaskInstance, stack: set[TaskInstance]) -> bool:
        if s in stack:
            return True
        if s in seen or len(seen) >= cap:
            return False
        seen.add(s)
        stack.add(s)
        for svc in task.services:
            for nxt in internal_successors(spec, task, s, svc, ev, pools):
                if dfs(nxt, stack):
                    return True
        stack.discard(s)
        return False

    return dfs(inst, set())


def _tag_divergence(node: ConcreteTree, spec: HasSpec, ev: ConditionEvaluator,
                    pools: Pools, cap: int, out: dict[int, str]) -> bool:
    """Whether the node's run is certified to continue forever, recording how
    in *out* (keyed by node object identity): "blocked" when it waits forever
    on children that themselves diverge (so its own word is complete as
    shown), "lasso" when an internal-service cycle is reachable from its
    final configuration (so its word extends past the tree).
    Under-approximate: divergence through unboundedly many child openings is
    not certified."""
    if node.run.returning:
        return False
    unmatched = node.unmatched()
    if unmatched:
        ok = all(
            _tag_divergence(sub, spec, ev, pools, cap, out)
            for _, sub in unmatched
        )
        if ok:
            out[id(node)] = "blocked"
        return ok
    if _has_internal_lasso(spec, node.run.final_instance, ev, pools, cap):
        out[id(node)] = "lasso"
        return True
    return False


def _diverges(node: ConcreteTree, spec: HasSpec, ev: ConditionEvaluator,
              pools: Pools, cap: int) -> bool:
    return _tag_divergence(node, spec, ev, pools, cap, {})


def divergence_tags(tree: ConcreteTree, spec: HasSpec, db: Database,
                    pools: Optional[Pools] = None,
                    lasso_cap: int = 64) -> dict[int, str]:
    """Tags for every node of the tree whose run is certified to continue
    forever, keyed by node object identity: "lasso" (the word extends past
    the tree through internal services) or "blocked" (the run waits forever
    on diverging children, so its word is complete as shown).  Returning runs
    and uncertified stubs get no tag.  Pass the result to ``satisfies`` to
    sharpen evaluation on certified trees."""
    pools = pools or default_pools(spec, db)
    ev = ConditionEvaluator(db)
    tags: dict[int, str] = {}
    if not tree.run.returning:
        _tag_divergence(tree, spec, ev, pools, lasso_cap, tags)
    return tags


def certification_problems(tree: ConcreteTree, spec: HasSpec, db: Database,
                           pools: Optional[Pools] = None,
                           lasso_cap: int = 64) -> list[str]:
    """Why this finite tree may not stand for a complete tree: the root's run
    must be blocked forever, i.e. end waiting on at least one open child and
    every such child must be certified to run forever.  (Runs of returning
    children are complete, and property evaluation taints any inspection of
    non-returning children, so a certified falsifying tree witnesses a real
    violation.)"""
    pools = pools or default_pools(spec, db)
    ev = ConditionEvaluator(db)
    problems: list[str] = []
    if tree.run.returning:
        problems.append("the root run returns")
        return problems
    unmatched = tree.unmatched()
    if not unmatched:
        problems.append("the root run stops although it could have continued")
    for pos, sub in unmatched:
        if not _diverges(sub, spec, ev, pools, lasso_cap):
            problems.append(
                f"child {sub.run.task} opened at {pos} is not certified to diverge"
            )
    return problems


# ---------------------------------------------------------------------------
# Bounded search for violating trees
# ---------------------------------------------------------------------------


@dataclass
class SearchBounds:
    max_steps: int = 6  # positions per local run
    max_trees: int = 4000  # total trees yielded across the search
    max_child_trees: int = 48  # distinct subtrees kept per (task, input)
    lasso_cap: int = 64
    require_certified: bool = True


@dataclass(frozen=True)
class Violation:
    tree: ConcreteTree
    assignment: tuple[tuple[str, Value], ...]  # property-variable witness


class _Budget:
    def __init__(self, total: int):
        self.left = total

    def spend(self) -> bool:
        if self.left <= 0:
            return False
        self.left -= 1
        return True


class _Exhausted(Exception):
    pass


def _enumerate_trees(
    spec: HasSpec,
    task: Task,
    nu_in: Mapping[str, Value],
    ev: ConditionEvaluator,
    pools: Pools,
    bounds: SearchBounds,
    budget: _Budget,
    memo: dict,
) -> Iterator[ConcreteTree]:
    """All bounded trees rooted at a run of *task* started on *nu_in*, valid
    by construction, shortest prefixes first along each branch."""

    def child_trees(link, cin: Mapping[str, Value]) -> tuple[ConcreteTree, ...]:
        key = (link.child, freeze_valuation(cin))
        if key not in memo:
            memo[key] = ()  # cut recursion on re-entrant identical calls
            child = spec.task(link.child)
            gen = _enumerate_trees(spec, child, cin, ev, pools, bounds, budget, memo)
            memo[key] = tuple(itertools.islice(gen, bounds.max_child_trees))
        return memo[key]

    def extend(
        steps: list[tuple[TaskInstance, Step]],
        children: list[tuple[int, ConcreteTree]],
        waiting: dict[str, tuple[int, ConcreteTree, bool]],  # name -> (pos, sub, closable)
        opened_in_seg: frozenset[str],
    ) -> Iterator[ConcreteTree]:
        inst = steps[-1][0]
        nu = inst.vmap()
        # A tree may stop here only if no closable child is left dangling
        # (an unmatched open must link a non-returning child run).
        if all(not closable for _, _, closable in waiting.values()):
            if not budget.spend():
                raise _Exhausted
            yield ConcreteTree(
                ConcreteLocalRun(task.name, freeze_valuation(nu_in), tuple(steps)),
                tuple(sorted(children)),
            )
        if len(steps) >= bounds.max_steps:
            return
        # Close a waiting child (deterministic value write-back).
        for name in sorted(waiting):
            pos, sub, closable = waiting[name]
            if not closable:
                continue
            link = task.child_link(name)
            nu2 = writeback(task, link, nu, sub.run.final_valuation())
            inst2 = TaskInstance(task.name, freeze_valuation(nu2), inst.store)
            rest = {k: v for k, v in waiting.items() if k != name}
            yield from extend(steps + [(inst2, Step("close", name))],
                              children, rest, opened_in_seg)
        # Close this run (only with no open children, never for the root).
        if not waiting and task.name != spec.root:
            try:
                can_close = ev.decide(task.closing_pre, nu, None, None)
            except UnsupportedCondition:
                can_close = False
            if can_close:
                if not budget.spend():
                    raise _Exhausted
                yield ConcreteTree(
                    ConcreteLocalRun(
                        task.name,
                        freeze_valuation(nu_in),
                        tuple(steps) + ((inst, Step("closed", None)),),
                    ),
                    tuple(sorted(children)),
                )
        # Internal services (start a new segment).
        if not waiting:
            for svc in task.services:
                for nxt in internal_successors(spec, task, inst, svc, ev, pools):
                    yield from extend(steps + [(nxt, Step("svc", svc.name))],
                                      children, {}, frozenset())
        # Open children (at most once per child per segment).
        for link in task.children:
            if link.child in opened_in_seg:
                continue
            try:
                may_open = ev.decide(link.opening_pre, nu, None, None)
            except UnsupportedCondition:
                may_open = False
            if not may_open:
                continue
            cin = child_initial(link, nu)
            pos = len(steps)
            for sub in child_trees(link, cin):
                yield from extend(
                    steps + [(inst, Step("open", link.child))],
                    children + [(pos, sub)],
                    {**waiting, link.child: (pos, sub, sub.run.returning)},
                    opened_in_seg | {link.child},
                )

    start = open_instance(task, nu_in)
    yield from extend([(start, Step("opened", None))], [], {}, frozenset())


def _root_inputs(spec: HasSpec, ev: ConditionEvaluator,
                 pools: Pools) -> Iterator[dict[str, Value]]:
    root = spec.task(spec.root)
    id_ins = [v for v in root.input_vars if root.sort_of(v) is Sort.ID]
    num_ins = [v for v in root.input_vars if root.sort_of(v) is Sort.REAL]
    seen: set[Valuation] = set()
    for id_combo in itertools.product(pools.ids, repeat=len(id_ins)):
        base = dict(zip(id_ins, id_combo))
        candidates: list[dict[str, Value]] = []
        for num_combo in itertools.product(pools.numerics, repeat=len(num_ins)):
            candidates.append({**base, **dict(zip(num_ins, num_combo))})
        if num_ins:
            wit = ev.solve_numeric(num_ins, spec.global_pre, base, None, None)
            if wit is not None:
                candidates.append({**base, **wit})
        for cand in candidates:
            try:
                if not ev.decide(spec.global_pre, cand, None, None):
                    continue
            except UnsupportedCondition:
                continue
            key = freeze_valuation(cand)
            if key not in seen:
                seen.add(key)
                yield cand


def find_violation(
    spec: HasSpec,
    prop: HltlProperty,
    db: Database,
    *,
    bounds: Optional[SearchBounds] = None,
    pools: Optional[Pools] = None,
) -> Optional[Violation]:
    """Bounded search for a finite tree that definitely violates *prop* (some
    assignment of the property variables falsifies the formula).  With
    ``bounds.require_certified`` the tree must additionally be certified to
    stand for a complete tree (see ``certification_problems``), making the
    result sound evidence of a real violation.  Returns None when the bounded
    search space holds no such tree."""
    bounds = bounds or SearchBounds()
    pools = pools or default_pools(spec, db)
    ev = ConditionEvaluator(db)
    root = spec.task(spec.root)
    budget = _Budget(bounds.max_trees)
    memo: dict = {}
    try:
        for nu_in in _root_inputs(spec, ev, pools):
            for tree in _enumerate_trees(spec, root, nu_in, ev, pools, bounds,
                                         budget, memo):
                gamma = falsifying_assignment(tree, prop, spec, db)
                if bounds.require_certified:
                    if gamma is None and not tree.unmatched():
                        continue
                    if certification_problems(tree, spec, db, pools,
                                              bounds.lasso_cap):
                        continue
                    if gamma is None:
                        # Knowing which children diverge can settle verdicts
                        # that were unknown on the bare prefix.
                        tags = divergence_tags(tree, spec, db, pools,
                                               bounds.lasso_cap)
                        gamma = falsifying_assignment(tree, prop, spec, db,
                                                      tags)
                if gamma is None:
                    continue
                return Violation(tree, freeze_valuation(gamma))
    except _Exhausted:
        pass
    return None


# ---------------------------------------------------------------------------
# Random generation
# ---------------------------------------------------------------------------


def random_tree(
    spec: HasSpec,
    db: Database,
    rng,
    *,
    task: Optional[str] = None,
    max_steps: int = 8,
    pools: Optional[Pools] = None,
    nu_in: Optional[Mapping[str, Value]] = None,
) -> ConcreteTree:
    """A random valid finite tree rooted at a run of *task* (default: the
    root task).  Children opened along the way are completed recursively;
    a child that happens not to return is left open (the parent blocks)."""
    pools = pools or default_pools(spec, db)
    ev = ConditionEvaluator(db)
    t = spec.task(task or spec.root)
    if nu_in is None:
        nu_in = _random_inputs(spec, t, ev, pools, rng)
    return _random_run(spec, t, dict(nu_in), ev, pools, rng, max_steps)


def _random_inputs(spec: HasSpec, task: Task, ev: ConditionEvaluator,
                   pools: Pools, rng) -> dict[str, Value]:
    for _ in range(64):
        cand: dict[str, Value] = {}
        for v in task.input_vars:
            if task.sort_of(v) is Sort.ID:
                cand[v] = rng.choice(pools.ids)
            else:
                cand[v] = rng.choice(pools.numerics)
        if task.name != spec.root:
            return cand
        try:
            if ev.decide(spec.global_pre, cand, None, None):
                return cand
        except UnsupportedCondition:
            break
    return {v: (None if task.sort_of(v) is Sort.ID else ZERO)
            for v in task.input_vars}


def _random_run(spec: HasSpec, task: Task, nu_in: dict,
                ev: ConditionEvaluator, pools: Pools, rng,
                max_steps: int) -> ConcreteTree:
    steps: list[tuple[TaskInstance, Step]] = [
        (open_instance(task, nu_in), Step("opened", None))
    ]
    children: list[tuple[int, ConcreteTree]] = []
    waiting: dict[str, tuple[int, ConcreteTree, bool]] = {}
    opened_in_seg: set[str] = set()

    while len(steps) < max_steps:
        inst = steps[-1][0]
        nu = inst.vmap()
        moves: list[tuple] = []
        if all(not c for _, _, c in waiting.values()):
            moves.append(("stop",))
        for name in sorted(waiting):
            if waiting[name][2]:
                moves.append(("close", name))
        if not waiting:
            if task.name != spec.root:
                try:
                    if ev.decide(task.closing_pre, nu, None, None):
                        moves.append(("closed",))
                except UnsupportedCondition:
                    pass
            for svc in task.services:
                succ = internal_successors(spec, task, inst, svc, ev, pools)
                if succ:
                    moves.append(("svc", svc.name, succ))
        for link in task.children:
            if link.child in opened_in_seg:
                continue
            try:
                if ev.decide(link.opening_pre, nu, None, None):
                    moves.append(("open", link))
            except UnsupportedCondition:
                pass
        move = rng.choice(moves)
        if move[0] == "stop":
            break
        if move[0] == "closed":
            steps.append((inst, Step("closed", None)))
            break
        if move[0] == "svc":
            steps.append((rng.choice(move[2]), Step("svc", move[1])))
            waiting = {}
            opened_in_seg = set()
        elif move[0] == "open":
            link = move[1]
            cin = child_initial(link, nu)
            sub = _random_run(spec, spec.task(link.child), cin, ev, pools, rng,
                              max(2, max_steps - 1))
            pos = len(steps)
            steps.append((inst, Step("open", link.child)))
            children.append((pos, sub))
            waiting[link.child] = (pos, sub, sub.run.returning)
            opened_in_seg.add(link.child)
        else:  # close
            name = move[1]
            pos, sub, _ = waiting.pop(name)
            link = task.child_link(name)
            nu2 = writeback(task, link, nu, sub.run.final_valuation())
            steps.append(
                (TaskInstance(task.name, freeze_valuation(nu2), inst.store),
                 Step("close", name))
            )
    # Never end on a dangling returning child: close them in order.
    while any(c for _, _, c in waiting.values()):
        inst = steps[-1][0]
        if len(steps) >= max_steps + len(waiting):
            pass  # allow the overflow; validity trumps the step budget
        name = sorted(n for n, (_, _, c) in waiting.items() if c)[0]
        pos, sub, _ = waiting.pop(name)
        link = task.child_link(name)
        nu2 = writeback(task, link, inst.vmap(), sub.run.final_valuation())
        steps.append(
            (TaskInstance(task.name, freeze_valuation(nu2), inst.store),
             Step("close", name))
        )
    return ConcreteTree(
        ConcreteLocalRun(task.name, freeze_valuation(nu_in), tuple(steps)),
        tuple(sorted(children)),
    )


# ---------------------------------------------------------------------------
# Linearization into global event sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GlobalState:
    """A snapshot of the global instance: per task its current valuation,
    stage ("init", "active" or "closed") and artifact-set contents."""

    valuations: tuple[tuple[str, Valuation], ...]
    stages: tuple[tuple[str, str], ...]
    stores: tuple[tuple[str, frozenset], ...]

    def valuation(self, t: str) -> Valuation:
        return dict(self.valuations)[t]

    def stage(self, t: str) -> str:
        return dict(self.stages)[t]

    def store(self, t: str) -> frozenset:
        return dict(self.stores)[t]


@dataclass(frozen=True)
class LinearEvent:
    """One global step: an internal service of some run, or the merged
    open/close of a child run.  ``node`` and ``pos`` locate the step in the
    owning run (the parent's, for open/close); ``child_node`` is the linked
    run's index for open/close events."""

    label: str
    kind: str  # "internal" | "open" | "close"
    node: int
    pos: int
    child_node: Optional[int] = None


def tree_nodes(tree: ConcreteTree) -> list[tuple[int, tuple[int, ...], ConcreteTree]]:
    """Depth-first index of the tree's nodes: (index, path of open positions
    from the root, node)."""
    out: list[tuple[int, tuple[int, ...], ConcreteTree]] = []

    def walk(node: ConcreteTree, path: tuple[int, ...]) -> None:
        out.append((len(out), path, node))
        for pos, sub in node.children:
            walk(sub, path + (pos,))

    walk(tree, ())
    return out


def linearize(tree: ConcreteTree, spec: HasSpec) -> Iterator[
    tuple[tuple[LinearEvent, GlobalState], ...]
]:
    """All linearizations of the tree's event partial order into global runs.

    Events are the runs' positions, with each child's opening merged into the
    parent's opening position and each returning child's final position
    merged into the parent's closing position.  The first element of every
    sequence is the initial global state (the root's opening); each following
    element pairs an event with the state after it.  States follow the
    lifting rules: an internal step of task T updates T's slot and resets
    every descendant's stage to "init"; opening a child activates its slot
    with the child's initial configuration and empty set; closing a child
    updates the parent's slot, marks the child "closed" and empties its set.
    """
    nodes = tree_nodes(tree)
    node_of: dict[int, ConcreteTree] = {i: n for i, _, n in nodes}
    parent_of: dict[int, tuple[int, int]] = {}  # node -> (parent node, open pos)
    index_by_id = {id(n): i for i, _, n in nodes}
    for i, _, n in nodes:
        for pos, sub in n.children:
            parent_of[index_by_id[id(sub)]] = (i, pos)

    # Build events; map (node, pos) -> event id.
    events: list[LinearEvent] = []
    pos_event: dict[tuple[int, int], int] = {}

    def add(ev: LinearEvent) -> int:
        events.append(ev)
        return len(events) - 1

    for i, _, n in nodes:
        run = n.run
        pairs: dict[int, int] = {}
        open_at: dict[str, int] = {}
        for j, (_, step) in enumerate(run.steps):
            if step.kind == "open":
                open_at[step.name or ""] = j
            elif step.kind == "close":
                pairs[open_at.pop(step.name or "")] = j
        closes = {v: k for k, v in pairs.items()}
        for j, (_, step) in enumerate(run.steps):
            if j == 0:
                continue  # merged into the parent's open event (or the init state)
            if step.kind == "svc":
                pos_event[(i, j)] = add(LinearEvent(
                    f"{run.task}.{step.name}", "internal", i, j))
            elif step.kind == "open":
                sub = n.child_at(j)
                ci = index_by_id[id(sub)]
                eid = add(LinearEvent(f"open {sub.run.task}", "open", i, j, ci))
                pos_event[(i, j)] = eid
                pos_event[(ci, 0)] = eid
            elif step.kind == "close":
                sub = n.child_at(closes[j])
                ci = index_by_id[id(sub)]
                eid = add(LinearEvent(f"close {sub.run.task}", "close", i, j, ci))
                pos_event[(i, j)] = eid
                pos_event[(ci, len(sub.run.steps) - 1)] = eid
            elif step.kind == "closed":
                if (i, j) in pos_event:
                    continue  # merged into the parent's close event
                # A non-returning parent never reaches here; a returning root
                # is invalid, but linearize it anyway as its own event.
                pos_event[(i, j)] = add(LinearEvent(
                    f"close {run.task}", "close", i, j, None))

    # Precedence edges: within-run position order (merged events inherit).
    n_events = len(events)
    preds: list[set[int]] = [set() for _ in range(n_events)]
    for i, _, n in nodes:
        prev: Optional[int] = None
        for j in range(len(n.run.steps)):
            eid = pos_event.get((i, j))
            if eid is None:
                continue  # position 0: handled via the parent's open event
            if prev is not None and prev != eid:
                preds[eid].add(prev)
            prev = eid
        # Chain a child's first own event after the parent's open event: the
        # merge of (child, 0) into the open event makes this automatic.

    succs: list[set[int]] = [set() for _ in range(n_events)]
    for e, ps in enumerate(preds):
        for p in ps:
            succs[p].add(e)

    # Initial global state.
    init_val: dict[str, Valuation] = {}
    init_stage: dict[str, str] = {}
    init_store: dict[str, frozenset] = {}
    for t in spec.tasks:
        blank: dict[str, Value] = {v: None for v in t.id_vars}
        blank.update({v: ZERO for v in t.num_vars})
        init_val[t.name] = freeze_valuation(blank)
        init_stage[t.name] = "init"
        init_store[t.name] = frozenset()
    root_run = tree.run
    init_val[root_run.task] = root_run.steps[0][0].valuation
    init_stage[root_run.task] = "active"

    def snapshot(val, stage, store) -> GlobalState:
        return GlobalState(
            tuple(sorted(val.items())),
            tuple(sorted(stage.items())),
            tuple(sorted(store.items())),
        )

    desc = {t.name: spec.descendants(t.name) for t in spec.tasks}

    def apply(ev: LinearEvent, val, stage, store) -> None:
        node = node_of[ev.node]
        run = node.run
        tname = run.task
        if ev.kind == "internal":
            inst = run.steps[ev.pos][0]
            val[tname] = inst.valuation
            store[tname] = inst.store
            for d in desc[tname]:
                stage[d] = "init"
        elif ev.kind == "open":
            sub = node_of[ev.child_node]
            val[sub.run.task] = sub.run.steps[0][0].valuation
            store[sub.run.task] = frozenset()
            stage[sub.run.task] = "active"
        else:  # close
            if ev.child_node is not None:
                sub = node_of[ev.child_node]
                inst = run.steps[ev.pos][0]
                val[tname] = inst.valuation
                stage[sub.run.task] = "closed"
                store[sub.run.task] = frozenset()
            else:  # a run's own closing event without a parent (root)
                stage[tname] = "closed"
                store[tname] = frozenset()

    order_key = [(e.node, e.pos) for e in events]

    def backtrack(done: set[int], indeg: list[int], val, stage, store,
                  acc: list[tuple[LinearEvent, GlobalState]]) -> Iterator[
        tuple[tuple[LinearEvent, GlobalState], ...]
    ]:
        if len(done) == n_events:
            yield tuple(acc)
            return
        ready = sorted(
            (e for e in range(n_events) if e not in done and indeg[e] == 0),
            key=lambda e: order_key[e],
        )
        for e in ready:
            val2, stage2, store2 = dict(val), dict(stage), dict(store)
            apply(events[e], val2, stage2, store2)
            for s in succs[e]:
                indeg[s] -= 1
            done.add(e)
            acc.append((events[e], snapshot(val2, stage2, store2)))
            yield from backtrack(done, indeg, val2, stage2, store2, acc)
            acc.pop()
            done.discard(e)
            for s in succs[e]:
                indeg[s] += 1

    indeg = [len(ps) for ps in preds]
    first = (LinearEvent(f"open {root_run.task}", "open", 0, 0, 0),
             snapshot(init_val, init_stage, init_store))
    for rest in backtrack(set(), indeg, init_val, init_stage, init_store, []):
        yield (first,) + rest
