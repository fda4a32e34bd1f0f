"""Core data model for hierarchical artifact systems.

A specification consists of a database schema (relations with a key
identifier attribute, numeric attributes, and foreign-key attributes), a
rooted tree of tasks, and a global precondition over the root task's input
variables.  Each task declares identifier-sorted and numeric-sorted
variables, a subset of input variables, at most one artifact set relation,
internal services (precondition / postcondition / set update), a closing
condition, and links to child tasks (opening condition plus variable
passing and returning maps).

This module owns the immutable AST for all of that plus the two static
analyses that do not need run semantics: well-formedness validation and
foreign-key graph classification.  The normalization transform lives in
:mod:`artifact.normalize`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

__all__ = [
    "Sort",
    "Var",
    "Num",
    "NULL",
    "NullTerm",
    "Term",
    "IdVal",
    "Value",
    "Database",
    "LinExpr",
    "Cond",
    "BoolCond",
    "TRUE",
    "FALSE",
    "Eq",
    "CmpOp",
    "LinCmp",
    "RelAtom",
    "SetAtom",
    "Not",
    "And",
    "Or",
    "Implies",
    "Exists",
    "Relation",
    "Schema",
    "SchemaClass",
    "ClassifiedSchema",
    "InternalService",
    "ChildLink",
    "Task",
    "HasSpec",
    "Diagnostic",
    "validate_spec",
    "classify_schema",
    "cond_vars",
    "map_terms",
    "rename_cond",
    "conjoin",
    "iter_atoms",
]


# ---------------------------------------------------------------------------
# Sorts and terms
# ---------------------------------------------------------------------------


class Sort(Enum):
    """Variable/attribute sort: identifier or numeric."""

    ID = "id"
    REAL = "real"


@dataclass(frozen=True, slots=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, slots=True)
class Num:
    """A rational numeric constant."""

    value: Fraction

    def __str__(self) -> str:
        v = self.value
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


@dataclass(frozen=True, slots=True)
class NullTerm:
    """The null identifier constant."""

    def __str__(self) -> str:
        return "null"


NULL = NullTerm()

Term = Union[Var, Num, NullTerm]


def _as_num(value) -> Num:
    if isinstance(value, Num):
        return value
    return Num(Fraction(value))


@dataclass(frozen=True, slots=True)
class LinExpr:
    """A linear expression sum(coeff_i * var_i) + const over numeric variables.

    Terms are kept sorted by variable name so structurally equal expressions
    compare equal.
    """

    terms: tuple[tuple[str, Fraction], ...]
    const: Fraction = Fraction(0)

    @staticmethod
    def build(coeffs: Mapping[str, Fraction | int], const=0) -> "LinExpr":
        items = tuple(
            sorted((v, Fraction(c)) for v, c in coeffs.items() if Fraction(c) != 0)
        )
        return LinExpr(items, Fraction(const))

    @staticmethod
    def var(name: str) -> "LinExpr":
        return LinExpr(((name, Fraction(1)),), Fraction(0))

    @staticmethod
    def of(value) -> "LinExpr":
        return LinExpr((), Fraction(value))

    def __add__(self, other: "LinExpr") -> "LinExpr":
        coeffs: dict[str, Fraction] = dict(self.terms)
        for v, c in other.terms:
            coeffs[v] = coeffs.get(v, Fraction(0)) + c
        return LinExpr.build(coeffs, self.const + other.const)

    def __neg__(self) -> "LinExpr":
        return LinExpr(tuple((v, -c) for v, c in self.terms), -self.const)

    def __sub__(self, other: "LinExpr") -> "LinExpr":
        return self + (-other)

    def scale(self, k) -> "LinExpr":
        k = Fraction(k)
        if k == 0:
            return LinExpr((), Fraction(0))
        return LinExpr(tuple((v, c * k) for v, c in self.terms), self.const * k)

    @property
    def is_const(self) -> bool:
        return not self.terms

    def variables(self) -> frozenset[str]:
        return frozenset(v for v, _ in self.terms)

    def substitute(self, mapping: Mapping[str, "LinExpr"]) -> "LinExpr":
        out = LinExpr.of(self.const)
        for v, c in self.terms:
            repl = mapping.get(v)
            out = out + (repl.scale(c) if repl is not None else LinExpr(((v, c),)))
        return out

    def rename(self, mapping: Mapping[str, str]) -> "LinExpr":
        coeffs: dict[str, Fraction] = {}
        for v, c in self.terms:
            nv = mapping.get(v, v)
            coeffs[nv] = coeffs.get(nv, Fraction(0)) + c
        return LinExpr.build(coeffs, self.const)

    def __str__(self) -> str:
        parts: list[str] = []
        for v, c in self.terms:
            if c == 1:
                parts.append(v if not parts else f"+ {v}")
            elif c == -1:
                parts.append(f"-{v}" if not parts else f"- {v}")
            else:
                cs = str(Num(c)) if c > 0 else str(Num(-c))
                sign = "" if not parts else ("+ " if c > 0 else "- ")
                head = f"{c}" if not parts and c < 0 else cs
                if not parts:
                    parts.append(f"{head}*{v}" if c > 0 or True else "")
                else:
                    parts.append(f"{sign}{cs}*{v}")
        if self.const != 0 or not parts:
            c = self.const
            if not parts:
                parts.append(str(Num(c)))
            else:
                parts.append(f"+ {Num(c)}" if c > 0 else f"- {Num(-c)}")
        return " ".join(parts)


# ---------------------------------------------------------------------------
# Conditions
# ---------------------------------------------------------------------------


class Cond:
    """Base class for quantifier-free conditions (plus parse-time ∃)."""

    __slots__ = ()


@dataclass(frozen=True, slots=True)
class BoolCond(Cond):
    value: bool


TRUE = BoolCond(True)
FALSE = BoolCond(False)


@dataclass(frozen=True, slots=True)
class Eq(Cond):
    """Equality between two terms of the same sort.

    Identifier equalities compare identifier values (null is a legal side);
    numeric equalities are the degenerate linear constraint left = right.
    """

    left: Term
    right: Term


class CmpOp(Enum):
    EQ = "="
    NE = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="

    def negate(self) -> "CmpOp":
        return _CMP_NEG[self]

    def flip(self) -> "CmpOp":
        return _CMP_FLIP[self]


_CMP_NEG = {
    CmpOp.EQ: CmpOp.NE,
    CmpOp.NE: CmpOp.EQ,
    CmpOp.LT: CmpOp.GE,
    CmpOp.LE: CmpOp.GT,
    CmpOp.GT: CmpOp.LE,
    CmpOp.GE: CmpOp.LT,
}
_CMP_FLIP = {
    CmpOp.EQ: CmpOp.EQ,
    CmpOp.NE: CmpOp.NE,
    CmpOp.LT: CmpOp.GT,
    CmpOp.LE: CmpOp.GE,
    CmpOp.GT: CmpOp.LT,
    CmpOp.GE: CmpOp.LE,
}


@dataclass(frozen=True, slots=True)
class LinCmp(Cond):
    """Linear arithmetic atom: ``expr op 0``."""

    op: CmpOp
    expr: LinExpr


@dataclass(frozen=True, slots=True)
class RelAtom(Cond):
    """Database atom R(key, numerics..., foreign keys...).

    ``args`` has length 1 + #numeric attrs + #fk attrs, in schema order.  An
    atom with any null argument in a non-nullable position is simply false at
    evaluation time; syntactically null is allowed anywhere an identifier is.
    """

    rel: str
    args: tuple[Term, ...]


@dataclass(frozen=True, slots=True)
class SetAtom(Cond):
    """Artifact-set membership test S_task(args) — property syntax only."""

    task: str
    args: tuple[Term, ...]


@dataclass(frozen=True, slots=True)
class Not(Cond):
    body: Cond


@dataclass(frozen=True, slots=True)
class And(Cond):
    items: tuple[Cond, ...]


@dataclass(frozen=True, slots=True)
class Or(Cond):
    items: tuple[Cond, ...]


@dataclass(frozen=True, slots=True)
class Implies(Cond):
    lhs: Cond
    rhs: Cond


@dataclass(frozen=True, slots=True)
class Exists(Cond):
    """Existential prefix, desugared by normalization into fresh task variables."""

    bound: tuple[tuple[str, Sort], ...]
    body: Cond


def conjoin(items: Iterable[Cond]) -> Cond:
    parts: list[Cond] = []
    for c in items:
        if isinstance(c, BoolCond):
            if not c.value:
                return FALSE
            continue
        if isinstance(c, And):
            parts.extend(c.items)
        else:
            parts.append(c)
    if not parts:
        return TRUE
    if len(parts) == 1:
        return parts[0]
    return And(tuple(parts))


def iter_atoms(cond: Cond) -> Iterator[Cond]:
    """Yield every atomic subcondition (Eq/LinCmp/RelAtom/SetAtom/BoolCond)."""

    stack = [cond]
    while stack:
        c = stack.pop()
        if isinstance(c, Not):
            stack.append(c.body)
        elif isinstance(c, (And, Or)):
            stack.extend(c.items)
        elif isinstance(c, Implies):
            stack.append(c.lhs)
            stack.append(c.rhs)
        elif isinstance(c, Exists):
            stack.append(c.body)
        else:
            yield c


def cond_vars(cond: Cond) -> frozenset[str]:
    """Free variable names of a condition (∃-bound names excluded)."""

    out: set[str] = set()

    def walk(c: Cond, bound: frozenset[str]) -> None:
        if isinstance(c, Eq):
            for t in (c.left, c.right):
                if isinstance(t, Var) and t.name not in bound:
                    out.add(t.name)
        elif isinstance(c, LinCmp):
            out.update(v for v in c.expr.variables() if v not in bound)
        elif isinstance(c, (RelAtom, SetAtom)):
            for t in c.args:
                if isinstance(t, Var) and t.name not in bound:
                    out.add(t.name)
        elif isinstance(c, Not):
            walk(c.body, bound)
        elif isinstance(c, (And, Or)):
            for item in c.items:
                walk(item, bound)
        elif isinstance(c, Implies):
            walk(c.lhs, bound)
            walk(c.rhs, bound)
        elif isinstance(c, Exists):
            walk(c.body, bound | {n for n, _ in c.bound})

    walk(cond, frozenset())
    return frozenset(out)


def map_terms(cond: Cond, f) -> Cond:
    """Rebuild a condition applying ``f`` to every term (used for renaming)."""

    if isinstance(cond, BoolCond):
        return cond
    if isinstance(cond, Eq):
        return Eq(f(cond.left), f(cond.right))
    if isinstance(cond, LinCmp):
        mapping: dict[str, LinExpr] = {}
        for v in cond.expr.variables():
            t = f(Var(v))
            if isinstance(t, Var):
                mapping[v] = LinExpr.var(t.name)
            elif isinstance(t, Num):
                mapping[v] = LinExpr.of(t.value)
            else:  # pragma: no cover - null in numeric position is a sort error
                raise ValueError("null substituted into numeric expression")
        return LinCmp(cond.op, cond.expr.substitute(mapping))
    if isinstance(cond, RelAtom):
        return RelAtom(cond.rel, tuple(f(t) for t in cond.args))
    if isinstance(cond, SetAtom):
        return SetAtom(cond.task, tuple(f(t) for t in cond.args))
    if isinstance(cond, Not):
        return Not(map_terms(cond.body, f))
    if isinstance(cond, And):
        return And(tuple(map_terms(c, f) for c in cond.items))
    if isinstance(cond, Or):
        return Or(tuple(map_terms(c, f) for c in cond.items))
    if isinstance(cond, Implies):
        return Implies(map_terms(cond.lhs, f), map_terms(cond.rhs, f))
    if isinstance(cond, Exists):
        bound_names = {n for n, _ in cond.bound}

        def g(t: Term) -> Term:
            if isinstance(t, Var) and t.name in bound_names:
                return t
            return f(t)

        return Exists(cond.bound, map_terms(cond.body, g))
    raise TypeError(f"not a condition: {cond!r}")


def rename_cond(cond: Cond, mapping: Mapping[str, str]) -> Cond:
    def f(t: Term) -> Term:
        if isinstance(t, Var) and t.name in mapping:
            return Var(mapping[t.name])
        return t

    return map_terms(cond, f)


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Relation:
    """A database relation: key attribute, numeric attributes, FK attributes."""

    name: str
    id_attr: str
    num_attrs: tuple[str, ...]
    fk_attrs: tuple[tuple[str, str], ...]  # (attribute name, target relation)

    @property
    def arity(self) -> int:
        return 1 + len(self.num_attrs) + len(self.fk_attrs)

    def attr_names(self) -> tuple[str, ...]:
        return (self.id_attr,) + self.num_attrs + tuple(a for a, _ in self.fk_attrs)

    def fk_target(self, attr: str) -> str:
        for a, r in self.fk_attrs:
            if a == attr:
                return r
        raise KeyError(attr)


@dataclass(frozen=True, slots=True)
class Schema:
    relations: tuple[Relation, ...]

    def relation(self, name: str) -> Relation:
        for r in self.relations:
            if r.name == name:
                return r
        raise KeyError(name)

    def has_relation(self, name: str) -> bool:
        return any(r.name == name for r in self.relations)

    def fk_edges(self) -> list[tuple[str, str, str]]:
        """All (source relation, attribute, target relation) FK edges."""

        return [(r.name, a, t) for r in self.relations for a, t in r.fk_attrs]


class SchemaClass(Enum):
    ACYCLIC = "acyclic"
    LINEARLY_CYCLIC = "linearly-cyclic"
    CYCLIC = "cyclic"


@dataclass(frozen=True, slots=True)
class ClassifiedSchema:
    kind: SchemaClass
    #: adjacency: relation -> tuple of (fk attribute, target relation)
    graph: tuple[tuple[str, tuple[tuple[str, str], ...]], ...]


def classify_schema(schema: Schema) -> ClassifiedSchema:
    """Classify the foreign-key graph as acyclic, linearly cyclic, or cyclic.

    The graph has one node per relation and one edge per FK attribute
    (parallel attributes count as distinct edges).  "Linearly cyclic" means
    every relation lies on at most one simple cycle.
    """

    import networkx as nx

    g = nx.DiGraph()
    for r in schema.relations:
        g.add_node(("rel", r.name))
    # Expand each FK attribute into its own dummy midpoint node so parallel
    # edges between the same relations yield distinct simple cycles.
    for src, attr, dst in schema.fk_edges():
        mid = ("fk", src, attr)
        g.add_edge(("rel", src), mid)
        g.add_edge(mid, ("rel", dst))

    cycles_per_rel: dict[str, int] = {r.name: 0 for r in schema.relations}
    n_cycles = 0
    for cycle in nx.simple_cycles(g):
        n_cycles += 1
        for node in cycle:
            if node[0] == "rel":
                cycles_per_rel[node[1]] += 1

    if n_cycles == 0:
        kind = SchemaClass.ACYCLIC
    elif all(c <= 1 for c in cycles_per_rel.values()):
        kind = SchemaClass.LINEARLY_CYCLIC
    else:
        kind = SchemaClass.CYCLIC

    adjacency = tuple(
        (r.name, tuple(r.fk_attrs)) for r in schema.relations
    )
    return ClassifiedSchema(kind, adjacency)


# ---------------------------------------------------------------------------
# Concrete database instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class IdVal:
    """An identifier value, tagged with the relation whose key domain it
    belongs to.  Identifier domains of distinct relations are disjoint, so
    the relation name is part of the value."""

    rel: str
    token: str

    def __str__(self) -> str:
        return f"{self.rel}:{self.token}"


# A cell of a database row or the value of a task variable: an identifier,
# a rational number, or None (the null identifier).
Value = Union[IdVal, Fraction, None]


@dataclass(frozen=True)
class Database:
    """A finite database instance: for each relation, a tuple of rows, each
    row a tuple of cells in declared attribute order (key first)."""

    rows: Mapping[str, tuple[tuple[Value, ...], ...]]

    def rows_of(self, rel: str) -> tuple[tuple[Value, ...], ...]:
        return self.rows.get(rel, ())

    def ids_of(self, rel: str) -> tuple[IdVal, ...]:
        """The key column of *rel*, in row order (ill-sorted keys skipped)."""
        return tuple(
            row[0]
            for row in self.rows_of(rel)
            if row and isinstance(row[0], IdVal)
        )

    def all_ids(self) -> tuple[IdVal, ...]:
        """Every identifier appearing anywhere (keys and foreign keys),
        deduplicated, in deterministic order."""
        seen: dict[IdVal, None] = {}
        for rel in sorted(self.rows):
            for row in self.rows[rel]:
                for cell in row:
                    if isinstance(cell, IdVal):
                        seen.setdefault(cell, None)
        return tuple(seen)

    def row_with_key(self, rel: str, key: IdVal) -> tuple[Value, ...] | None:
        for row in self.rows_of(rel):
            if row[0] == key:
                return row
        return None

    def check(self, schema: Schema) -> list[str]:
        """Integrity check: arities and cell sorts, key constraints (no two
        rows of a relation share a key) and inclusion dependencies (every
        foreign-key cell references an existing key of the target relation).
        Returns a list of violation messages, empty when the instance is
        consistent."""
        problems: list[str] = []
        for rel_name in sorted(self.rows):
            if not schema.has_relation(rel_name):
                problems.append(f"unknown relation {rel_name}")
                continue
            rel = schema.relation(rel_name)
            names = rel.attr_names()
            fk_of = dict(rel.fk_attrs)
            seen_keys: set[IdVal] = set()
            for row in self.rows[rel_name]:
                if len(row) != rel.arity:
                    problems.append(
                        f"{rel_name}: row of arity {len(row)}, expected {rel.arity}"
                    )
                    continue
                for attr, cell in zip(names, row):
                    want = rel_name if attr == rel.id_attr else fk_of.get(attr)
                    if want is not None:
                        if not isinstance(cell, IdVal) or cell.rel != want:
                            problems.append(
                                f"{rel_name}.{attr}: expected an identifier of "
                                f"{want}, got {cell!r}"
                            )
                    elif not isinstance(cell, Fraction):
                        problems.append(
                            f"{rel_name}.{attr}: expected a number, got {cell!r}"
                        )
                key = row[0]
                if isinstance(key, IdVal):
                    if key in seen_keys:
                        problems.append(f"{rel_name}: duplicate key {key}")
                    seen_keys.add(key)
            for attr, target in rel.fk_attrs:
                col = names.index(attr)
                target_keys = set(self.ids_of(target)) if schema.has_relation(target) else set()
                for row in self.rows[rel_name]:
                    if len(row) == rel.arity:
                        cell = row[col]
                        if isinstance(cell, IdVal) and cell not in target_keys:
                            problems.append(
                                f"{rel_name}.{attr}: dangling reference {cell}"
                            )
        return problems


# ---------------------------------------------------------------------------
# Tasks and specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class InternalService:
    """An internal service: precondition over the current valuation,
    postcondition over the next valuation, and artifact-set update.

    ``delta`` is a subset of {"+", "-"}: "+" inserts the current set tuple,
    "-" retrieves (nondeterministically removes) one tuple into the next set
    tuple; both together insert then retrieve.
    """

    name: str
    pre: Cond
    post: Cond
    delta: tuple[str, ...] = ()

    @property
    def inserts(self) -> bool:
        return "+" in self.delta

    @property
    def retrieves(self) -> bool:
        return "-" in self.delta


@dataclass(frozen=True, slots=True)
class ChildLink:
    """Parent-side link to a child task.

    ``opening_pre`` is a condition over the parent's variables.  ``f_in``
    maps each child input variable to the parent variable whose value it
    receives.  ``f_out`` maps child return variables to the parent variables
    they overwrite (injectively); on closing, only parent identifier
    variables that are currently null actually take the returned value.
    """

    child: str
    opening_pre: Cond
    f_in: tuple[tuple[str, str], ...]  # (child var, parent var)
    f_out: tuple[tuple[str, str], ...]  # (child var, parent var)

    def f_in_map(self) -> dict[str, str]:
        return dict(self.f_in)

    def f_out_map(self) -> dict[str, str]:
        return dict(self.f_out)

    def return_targets(self) -> tuple[str, ...]:
        return tuple(p for _, p in self.f_out)


@dataclass(frozen=True, slots=True)
class Task:
    name: str
    id_vars: tuple[str, ...]
    num_vars: tuple[str, ...]
    input_vars: tuple[str, ...]
    set_relation: Optional[str]  # artifact set name, or None
    set_vars: tuple[str, ...]  # the fixed tuple of variables inserted/retrieved
    services: tuple[InternalService, ...]
    closing_pre: Cond
    children: tuple[ChildLink, ...]

    def all_vars(self) -> tuple[str, ...]:
        return self.id_vars + self.num_vars

    def sort_of(self, var: str) -> Sort:
        if var in self.id_vars:
            return Sort.ID
        if var in self.num_vars:
            return Sort.REAL
        raise KeyError(f"{self.name}: unknown variable {var}")

    def has_var(self, var: str) -> bool:
        return var in self.id_vars or var in self.num_vars

    def child_link(self, child: str) -> ChildLink:
        for link in self.children:
            if link.child == child:
                return link
        raise KeyError(child)

    def service(self, name: str) -> InternalService:
        for s in self.services:
            if s.name == name:
                return s
        raise KeyError(name)


@dataclass(frozen=True, slots=True)
class HasSpec:
    schema: Schema
    tasks: tuple[Task, ...]
    root: str
    global_pre: Cond  # over the root task's input variables
    #: symbolic constant table: name -> integer value (string-enum sugar)
    constants: tuple[tuple[str, int], ...] = ()

    def task(self, name: str) -> Task:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)

    def has_task(self, name: str) -> bool:
        return any(t.name == name for t in self.tasks)

    def parent_of(self, name: str) -> Optional[str]:
        for t in self.tasks:
            for link in t.children:
                if link.child == name:
                    return t.name
        return None

    def task_order(self) -> tuple[str, ...]:
        """Tasks in depth-first order from the root."""

        order: list[str] = []

        def walk(name: str) -> None:
            order.append(name)
            for link in self.task(name).children:
                walk(link.child)

        walk(self.root)
        return tuple(order)

    def descendants(self, name: str) -> tuple[str, ...]:
        out: list[str] = []

        def walk(n: str) -> None:
            for link in self.task(n).children:
                out.append(link.child)
                walk(link.child)

        walk(name)
        return tuple(out)

    def constant_value(self, name: str) -> int:
        for n, v in self.constants:
            if n == name:
                return v
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Diagnostic:
    severity: str  # "error" | "needs-normalize"
    code: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"[{self.severity}] {self.code} at {self.location}: {self.message}"


class _SortChecker:
    """Sort-checks conditions in a given variable environment."""

    def __init__(self, spec: HasSpec, env: Mapping[str, Sort], location: str,
                 out: list[Diagnostic], allow_set_atoms: bool = False,
                 set_env: Optional[Mapping[str, tuple[Sort, ...]]] = None):
        self.spec = spec
        self.env = dict(env)
        self.location = location
        self.out = out
        self.allow_set_atoms = allow_set_atoms
        self.set_env = dict(set_env or {})

    def err(self, code: str, msg: str) -> None:
        self.out.append(Diagnostic("error", code, self.location, msg))

    def term_sort(self, t: Term) -> Optional[Sort]:
        if isinstance(t, Var):
            s = self.env.get(t.name)
            if s is None:
                self.err("unknown-variable", f"variable {t.name} is not declared here")
            return s
        if isinstance(t, Num):
            return Sort.REAL
        return Sort.ID  # null

    def check(self, cond: Cond, polarity: int = 1) -> None:
        if isinstance(cond, BoolCond):
            return
        if isinstance(cond, Eq):
            ls, rs = self.term_sort(cond.left), self.term_sort(cond.right)
            if ls is not None and rs is not None and ls is not rs:
                self.err("sort-mismatch", f"equality mixes sorts: {cond.left} = {cond.right}")
            return
        if isinstance(cond, LinCmp):
            for v in cond.expr.variables():
                s = self.env.get(v)
                if s is None:
                    self.err("unknown-variable", f"variable {v} is not declared here")
                elif s is not Sort.REAL:
                    self.err("sort-mismatch", f"identifier variable {v} used arithmetically")
            return
        if isinstance(cond, RelAtom):
            if not self.spec.schema.has_relation(cond.rel):
                self.err("unknown-relation", f"relation {cond.rel} is not in the schema")
                return
            rel = self.spec.schema.relation(cond.rel)
            if len(cond.args) != rel.arity:
                self.err(
                    "arity-mismatch",
                    f"{cond.rel} expects {rel.arity} arguments, got {len(cond.args)}",
                )
                return
            expected: list[Sort] = [Sort.ID] + [Sort.REAL] * len(rel.num_attrs) + [
                Sort.ID
            ] * len(rel.fk_attrs)
            for i, (t, s) in enumerate(zip(cond.args, expected)):
                ts = self.term_sort(t)
                if ts is not None and ts is not s:
                    self.err(
                        "sort-mismatch",
                        f"argument {i} of {cond.rel} has sort {ts.value}, expected {s.value}",
                    )
            return
        if isinstance(cond, SetAtom):
            if not self.allow_set_atoms:
                self.err("set-atom", "artifact-set atoms are not allowed in this condition")
                return
            sig = self.set_env.get(cond.task)
            if sig is None:
                self.err("set-atom", f"task {cond.task} has no artifact set")
                return
            if len(cond.args) != len(sig):
                self.err("arity-mismatch", f"set atom for {cond.task} has wrong arity")
                return
            for t, s in zip(cond.args, sig):
                ts = self.term_sort(t)
                if ts is not None and ts is not s:
                    self.err("sort-mismatch", "set atom argument sort mismatch")
            return
        if isinstance(cond, Not):
            self.check(cond.body, -polarity)
            return
        if isinstance(cond, (And, Or)):
            for c in cond.items:
                self.check(c, polarity)
            return
        if isinstance(cond, Implies):
            self.check(cond.lhs, -polarity)
            self.check(cond.rhs, polarity)
            return
        if isinstance(cond, Exists):
            if polarity < 0:
                self.err(
                    "negative-existential",
                    "existential quantifier under negation cannot be desugared",
                )
            saved = dict(self.env)
            for n, s in cond.bound:
                if n in self.env:
                    self.err("shadowed-variable", f"∃-bound {n} shadows a declared variable")
                self.env[n] = s
            self.check(cond.body, polarity)
            self.env = saved
            return
        raise TypeError(f"not a condition: {cond!r}")


def _check_unique(names: Sequence[str], what: str, location: str, out: list[Diagnostic],
                  code: str = "duplicate-name") -> None:
    seen = set()
    for n in names:
        if n in seen:
            out.append(Diagnostic("error", code, location, f"duplicate {what}: {n}"))
        seen.add(n)


def validate_spec(spec: HasSpec) -> list[Diagnostic]:
    """Check all statically checkable well-formedness restrictions.

    Returns an empty list iff the specification is well-formed and already in
    the shape the symbolic engine consumes.  Violations that the
    normalization transform repairs (numeric return variables, variables both
    passed to and returned from the same child link, existential quantifiers)
    are reported with severity ``needs-normalize``; everything else is an
    ``error``.
    """

    out: list[Diagnostic] = []

    # --- schema ---
    _check_unique([r.name for r in spec.schema.relations], "relation", "schema", out)
    for r in spec.schema.relations:
        _check_unique(r.attr_names(), "attribute", f"schema.{r.name}", out)
        for attr, target in r.fk_attrs:
            if not spec.schema.has_relation(target):
                out.append(
                    Diagnostic(
                        "error",
                        "unknown-relation",
                        f"schema.{r.name}.{attr}",
                        f"foreign key targets unknown relation {target}",
                    )
                )

    # --- task tree shape ---
    _check_unique([t.name for t in spec.tasks], "task", "tasks", out)
    if not spec.has_task(spec.root):
        out.append(Diagnostic("error", "unknown-task", "root", f"root task {spec.root} undeclared"))
        return out
    parents: dict[str, str] = {}
    for t in spec.tasks:
        for link in t.children:
            if not spec.has_task(link.child):
                out.append(
                    Diagnostic("error", "unknown-task", f"{t.name}.children",
                               f"child task {link.child} undeclared")
                )
            elif link.child in parents:
                out.append(
                    Diagnostic("error", "task-tree", f"{t.name}.children",
                               f"task {link.child} has two parents")
                )
            elif link.child == spec.root:
                out.append(
                    Diagnostic("error", "task-tree", f"{t.name}.children",
                               "root task cannot be a child")
                )
            else:
                parents[link.child] = t.name
    for t in spec.tasks:
        if t.name != spec.root and t.name not in parents:
            out.append(
                Diagnostic("error", "task-tree", t.name, "task unreachable from the root")
            )
    if any(d.severity == "error" for d in out):
        return out

    set_env = {
        t.name: tuple(t.sort_of(v) for v in t.set_vars)
        for t in spec.tasks
        if t.set_relation is not None
    }
    _check_unique(
        [t.set_relation for t in spec.tasks if t.set_relation is not None],
        "artifact set",
        "specification",
        out,
        code="restriction-5",
    )

    # --- per-task checks ---
    for t in spec.tasks:
        loc = f"task {t.name}"
        _check_unique(t.all_vars(), "variable", loc, out)
        env = {v: Sort.ID for v in t.id_vars}
        env.update({v: Sort.REAL for v in t.num_vars})

        for v in t.input_vars:
            if not t.has_var(v):
                out.append(Diagnostic("error", "unknown-variable", loc,
                                      f"input variable {v} undeclared"))

        # Artifact set: restriction (7) — one relation, fixed distinct tuple.
        if t.set_relation is not None:
            if spec.schema.has_relation(t.set_relation):
                out.append(Diagnostic("error", "restriction-5", loc,
                                      f"artifact set {t.set_relation} collides with a "
                                      "database relation"))
            _check_unique(t.set_vars, "set variable", loc, out, code="restriction-7")
            if not t.set_vars:
                out.append(Diagnostic("error", "restriction-7", loc,
                                      "artifact set with empty tuple"))
            for v in t.set_vars:
                if not t.has_var(v):
                    out.append(Diagnostic("error", "restriction-7", loc,
                                          f"set variable {v} undeclared"))
        elif t.set_vars:
            out.append(Diagnostic("error", "restriction-7", loc,
                                  "set tuple declared without an artifact set"))
        else:
            for s in t.services:
                if s.delta:
                    out.append(Diagnostic("error", "restriction-5", f"{loc}.{s.name}",
                                          "set update on a task without an artifact set"))

        _check_unique([s.name for s in t.services], "service", loc, out)
        for s in t.services:
            sloc = f"{loc}, service {s.name}"
            for cond, which in ((s.pre, "pre"), (s.post, "post")):
                _SortChecker(spec, env, f"{sloc} ({which})", out).check(cond)
            if any(isinstance(a, Exists) for a in _walk_conds(s.pre)) or any(
                isinstance(a, Exists) for a in _walk_conds(s.post)
            ):
                out.append(Diagnostic("needs-normalize", "existential", sloc,
                                      "existential quantifier requires desugaring"))
        _SortChecker(spec, env, f"{loc} (closing)", out).check(t.closing_pre)
        if any(isinstance(a, Exists) for a in _walk_conds(t.closing_pre)):
            out.append(Diagnostic("needs-normalize", "existential", f"{loc} (closing)",
                                  "existential quantifier requires desugaring"))

        # Root never closes.
        if t.name == spec.root and t.closing_pre != FALSE:
            out.append(Diagnostic("error", "root-closing", loc,
                                  "the root task's closing condition must be false"))

        # --- child links ---
        _check_unique([c.child for c in t.children], "child link", loc, out)
        for link in t.children:
            cloc = f"{loc}, child {link.child}"
            child = spec.task(link.child)
            _SortChecker(spec, env, f"{cloc} (opening)", out).check(link.opening_pre)
            if any(isinstance(a, Exists) for a in _walk_conds(link.opening_pre)):
                out.append(Diagnostic("needs-normalize", "existential", f"{cloc} (opening)",
                                      "existential quantifier requires desugaring"))

            fin = link.f_in_map()
            if sorted(fin) != sorted(child.input_vars):
                out.append(Diagnostic("error", "passing-map", cloc,
                                      "f_in must cover exactly the child's input variables"))
            for cv, pv in link.f_in:
                if not t.has_var(pv):
                    out.append(Diagnostic("error", "passing-map", cloc,
                                          f"f_in source {pv} undeclared in parent"))
                elif child.has_var(cv) and t.sort_of(pv) is not child.sort_of(cv):
                    out.append(Diagnostic("error", "sort-mismatch", cloc,
                                          f"f_in {cv} <- {pv} mixes sorts"))

            fout_children = [cv for cv, _ in link.f_out]
            fout_parents = [pv for _, pv in link.f_out]
            _check_unique(fout_children, "returned variable", cloc, out)
            _check_unique(fout_parents, "return target", cloc, out)
            for cv, pv in link.f_out:
                if not child.has_var(cv):
                    out.append(Diagnostic("error", "passing-map", cloc,
                                          f"returned variable {cv} undeclared in child"))
                    continue
                if not t.has_var(pv):
                    out.append(Diagnostic("error", "passing-map", cloc,
                                          f"return target {pv} undeclared in parent"))
                    continue
                if t.sort_of(pv) is not child.sort_of(cv):
                    out.append(Diagnostic("error", "sort-mismatch", cloc,
                                          f"f_out {cv} -> {pv} mixes sorts"))
                # Restriction (3): variables storing values returned by
                # children must be disjoint from the task's own inputs.
                if pv in t.input_vars:
                    out.append(Diagnostic("error", "restriction-3", cloc,
                                          f"return target {pv} is an input variable of {t.name}"))
                if t.sort_of(pv) is Sort.REAL:
                    out.append(Diagnostic("needs-normalize", "numeric-return", cloc,
                                          f"numeric variable {pv} is returned by {link.child}"))
            overlap = {pv for _, pv in link.f_in} & {pv for _, pv in link.f_out}
            if overlap:
                out.append(Diagnostic("needs-normalize", "pass-return-overlap", cloc,
                                      "variables both passed to and returned from "
                                      f"{link.child}: " + ", ".join(sorted(overlap))))

    # --- global precondition: over root inputs only, no set atoms ---
    root = spec.task(spec.root)
    pre_env = {v: root.sort_of(v) for v in root.input_vars if root.has_var(v)}
    _SortChecker(spec, pre_env, "global precondition", out).check(spec.global_pre)
    if any(isinstance(c, Exists) for c in _walk_conds(spec.global_pre)):
        out.append(Diagnostic("needs-normalize", "existential",
                              "global precondition",
                              "existential quantifier requires desugaring"))

    return out


def _walk_conds(cond: Cond) -> Iterator[Cond]:
    stack = [cond]
    while stack:
        c = stack.pop()
        yield c
        if isinstance(c, Not):
            stack.append(c.body)
        elif isinstance(c, (And, Or)):
            stack.extend(c.items)
        elif isinstance(c, Implies):
            stack.extend((c.lhs, c.rhs))
        elif isinstance(c, Exists):
            stack.append(c.body)
