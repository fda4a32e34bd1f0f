"""Rewrite a specification/property pair into the shape the symbolic engine
consumes.

The symbolic engine tracks each local run through equalities among stored
expressions, which requires four restrictions that realistic specifications
do not meet.  :func:`normalize` establishes all of them:

(a) **no property-level global variables** — each one becomes an input
    variable of every task, threaded from the root down through every child
    link, and its occurrences in the property are renamed accordingly;
(b) **no existential quantifiers in conditions** — every positively
    occurring binder becomes a fresh non-input task variable, whose value
    the nondeterministic update of non-input variables guesses (for a
    postcondition this happens in the very step the condition constrains,
    so the translation is exact there);
(c) **no variable both passed to and returned from the same child link** —
    the passed side switches to a shadow copy that an initialization step
    and every internal postcondition re-equate with the original;
(d) **no numeric return variables** — numeric write-backs cannot be
    tracked as stored expressions, so the parent instead *guesses* each
    numeric value a child run will return, the child is told the guess, and
    a conformance formula guards the property so that runs whose guesses
    turn out wrong never count.

Machinery for (d)
-----------------

For a parent task whose child links return numeric values, the transform
adds, per returning link ``c``: an identifier slot ``ret_c`` recording
"``c`` closed in the current segment" (the child returns a fresh non-null
token into it, and every internal postcondition resets it to null); a
numeric guess ``val_x_c`` per dropped target ``x``, holding the value the
parent assumes that return wrote; and, per pair of links returning into a
common target, an order flag ``ord_a_b`` whose sign asserts which of the
two returned first.  Guesses and order flags are refreshed by the ordinary
nondeterministic update at each internal step, i.e. once per segment.

Every *read* of a dropped target — internal and opening preconditions, the
closing condition, property conditions at that task's node, and reads
inside a child a stale value was passed to — is replaced by a case split
over which returning link wrote the target last in the current segment
(none: the stored value stands; link ``c``: substitute ``val_x_c``).  The
guard of each case only consults the slots and order flags, so the cases
are exclusive, exhaustive on conforming runs, and safe under negation.
When a stale variable is passed to a child, the child receives frozen
copies of the relevant slots, guesses and order flags alongside it (as
extra inputs), and the same case split runs inside the child against those
copies; passes from there to grandchildren recurse identically.

Wrong guesses are never *blocked* — a transition disabled by a wrong guess
would prune run trees the original specification requires to exist,
inventing spuriously stuck runs.  Instead conformance is *observed*: the
returned property is ``conformant implies rewritten``, where
``conformant`` requires, always, that order flags agree with the recorded
slots and that every numeric-returning child, on closing, returned exactly
the values guessed for it (the child compares its own return sources
against the guess copies it received).  A violating tree of the original
pair corresponds to a conforming violating tree of the normalized pair and
vice versa.

Initialization step
-------------------

Guesses must be free already in the first segment, but the fixed initial
valuation zeroes every non-input numeric variable.  A task that gains
machinery therefore also gains an internal service (``init``) that must
fire first — every other precondition is conjoined with ``booted = 1``,
which only ``init`` establishes — and whose postcondition reconstructs the
original initial valuation exactly (original non-input variables back to
null/zero) while leaving guesses and order flags to the nondeterministic
update.  Property formulas at such a task's node are shifted by one step
(``X``) to skip the extra position, with ``opened`` widened to also accept
the init step.

Artifact-set atoms
------------------

A property atom testing set membership is replaced by a sign test on a
fresh numeric flag of the owning task, and the conformance formula
constrains the flag to track membership of exactly the tested tuple across
every internal step (an insert adds the pre-step set tuple, a retrieve
removes the post-step one).  The flag starts at zero — the set starts
empty — and is preserved across opens and closes like any non-returned
variable.

Exactness
---------

On valid specifications without existential quantifiers in *pre*-style
conditions (internal preconditions, opening and closing conditions), the
transform preserves bounded-oracle verdicts exactly: for every database,
the oracle of :mod:`artifact.oracle` certifies a violating tree for the
original pair iff it certifies one for the normalized pair.  Desugaring an
existential in a pre-style condition is the single inexact case: the
witness is then guessed one step early, so a wrong guess can strand a run
the original could always continue — such specifications verify against
slightly coarser tree semantics in which the verdict "violated" may cite a
prematurely stuck run.  Existentials under negation and inside property
conditions are rejected.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional

from .model import (
    NULL,
    And,
    ChildLink,
    CmpOp,
    Cond,
    Eq,
    Exists,
    HasSpec,
    Implies,
    InternalService,
    LinCmp,
    LinExpr,
    Not,
    Num,
    Or,
    SetAtom,
    Sort,
    Task,
    Term,
    Var,
    cond_vars,
    conjoin,
    iter_atoms,
    rename_cond,
    validate_spec,
)
from .property_ast import (
    ChildFormula,
    CondAtom,
    HltlProperty,
    Ltl,
    LtlAnd,
    LtlAtom,
    LtlG,
    LtlImplies,
    LtlNot,
    LtlOr,
    LtlX,
    LTL_TRUE,
    Obs,
    ServiceAtom,
    map_atoms,
)

__all__ = ["NormalizeError", "normalize"]

_ZERO = Num(Fraction(0))
_ONE = Num(Fraction(1))


class NormalizeError(Exception):
    """The input pair lies outside the fragment normalization supports."""


# ---------------------------------------------------------------------------
# Fresh names
# ---------------------------------------------------------------------------


class _Namer:
    """Deterministic fresh-name allocator over one namespace."""

    def __init__(self, taken) -> None:
        self.taken = set(taken)

    def fresh(self, base: str) -> str:
        name = base
        k = 2
        while name in self.taken:
            name = f"{base}{k}"
            k += 1
        self.taken.add(name)
        return name


def _iter_cond_nodes(cond: Cond) -> Iterator[Cond]:
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


# ---------------------------------------------------------------------------
# Mutable working copies
# ---------------------------------------------------------------------------


@dataclass
class _Writer:
    """One child link returning into a stale variable: its identity tag (the
    child task's name at the owning task), the slot recording its close, and
    the guess holding the value it is assumed to have returned."""

    tag: str
    t_var: str
    g_var: str


@dataclass
class _StaleInfo:
    """How reads of one stale variable resolve: the candidate writers plus
    the order flags comparing any two of them (keyed by sorted tag pair; a
    non-zero flag says the lexicographically smaller tag returned first)."""

    writers: list[_Writer]
    orders: dict[tuple[str, str], str]

    def writer(self, tag: str) -> _Writer:
        for w in self.writers:
            if w.tag == tag:
                return w
        raise KeyError(tag)

    def before(self, a: str, b: str) -> Cond:
        """Condition asserting the writer tagged *a* returned before *b*."""
        key = (a, b) if a < b else (b, a)
        o = self.orders[key]
        if key[0] == a:
            return LinCmp(CmpOp.NE, LinExpr.var(o))
        return Eq(Var(o), _ZERO)


@dataclass
class _MutSvc:
    name: str
    pre: Cond
    post: Cond
    delta: tuple[str, ...]


@dataclass
class _MutLink:
    child: str
    opening_pre: Cond
    f_in: list[tuple[str, str]]
    f_out: list[tuple[str, str]]
    #: (child return source, child guess-copy input) pairs the conformance
    #: formula compares when the child closes
    conf_pairs: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class _MutTask:
    name: str
    id_vars: list[str]
    num_vars: list[str]
    input_vars: list[str]
    set_relation: Optional[str]
    set_vars: tuple[str, ...]
    services: list[_MutSvc]
    closing_pre: Cond
    links: list[_MutLink]
    namer: _Namer
    #: pre-transform variables, whose initial values init restores
    baseline_ids: tuple[str, ...]
    baseline_nums: tuple[str, ...]
    baseline_inputs: frozenset[str]
    #: resolution machinery for reads of stale variables in this task,
    #: keyed by the stale variable (an own dropped target, or an input a
    #: parent passed a stale value into)
    stale: dict[str, _StaleInfo] = field(default_factory=dict)
    #: order flags owned by this task, for the always-invariant
    orders: dict[tuple[str, str], str] = field(default_factory=dict)
    #: pending conformance conjuncts at this task's node (set-flag guards)
    guards: list[Ltl] = field(default_factory=list)
    #: artifact-set membership flags (zeroed by init when one exists)
    set_flags: list[str] = field(default_factory=list)
    #: non-null token this task returns so the parent's slot records a close
    token_var: Optional[str] = None
    #: shadow copies re-equated with their originals ((copy, original))
    shadows: list[tuple[str, str]] = field(default_factory=list)
    needs_init: bool = False
    init_name: Optional[str] = None

    def sort_of(self, var: str) -> Sort:
        if var in self.id_vars:
            return Sort.ID
        if var in self.num_vars:
            return Sort.REAL
        raise KeyError(f"{self.name}: unknown variable {var}")

    def add_var(self, name: str, sort: Sort, *, is_input: bool = False) -> None:
        (self.id_vars if sort is Sort.ID else self.num_vars).append(name)
        if is_input:
            self.input_vars.append(name)

    def own_slot_resets(self) -> list[Cond]:
        """Null the slots of this task's own machinery (not bundle copies,
        which are frozen inputs) — conjoined to every internal post."""
        slots = sorted({w.t_var
                        for x, info in self.stale.items()
                        if x not in self.baseline_inputs
                        for w in info.writers})
        return [Eq(Var(t), NULL) for t in slots]


class _State:
    def __init__(self, spec: HasSpec, prop: HltlProperty) -> None:
        self.spec = spec
        self.prop = prop
        self.tasks: dict[str, _MutTask] = {}
        for t in spec.tasks:
            self.tasks[t.name] = _MutTask(
                name=t.name,
                id_vars=list(t.id_vars),
                num_vars=list(t.num_vars),
                input_vars=list(t.input_vars),
                set_relation=t.set_relation,
                set_vars=t.set_vars,
                services=[_MutSvc(s.name, s.pre, s.post, s.delta)
                          for s in t.services],
                closing_pre=t.closing_pre,
                links=[_MutLink(c.child, c.opening_pre, list(c.f_in),
                                list(c.f_out)) for c in t.children],
                namer=_Namer(t.id_vars + t.num_vars),
                baseline_ids=t.id_vars,
                baseline_nums=t.num_vars,
                baseline_inputs=frozenset(t.input_vars),
            )
        self.formula = prop.formula
        self.global_pre = spec.global_pre
        self.order = spec.task_order()

    def task(self, name: str) -> _MutTask:
        return self.tasks[name]


# ---------------------------------------------------------------------------
# Stale-read resolution
# ---------------------------------------------------------------------------


def _resolve_reads(cond: Cond, stale: dict[str, _StaleInfo],
                   exclude: frozenset[str] = frozenset()) -> Cond:
    """Case-split *cond* over which writer last wrote each stale variable it
    reads: for every combination, guard by "these links closed this segment
    and that one closed last" and substitute the matching guess (or keep the
    stored variable when no writer has closed).  Guards consult only slots
    and order flags."""
    names = [x for x in sorted(cond_vars(cond))
             if x in stale and x not in exclude]
    if not names:
        return cond
    choices = [[None] + [w.tag for w in stale[x].writers] for x in names]
    cases: list[Cond] = []
    for pick in itertools.product(*choices):
        guards: list[Cond] = []
        ren: dict[str, str] = {}
        for x, tag in zip(names, pick):
            info = stale[x]
            if tag is None:
                guards.extend(Eq(Var(w.t_var), NULL) for w in info.writers)
            else:
                w = info.writer(tag)
                guards.append(Not(Eq(Var(w.t_var), NULL)))
                for other in info.writers:
                    if other.tag != tag:
                        guards.append(Or((Eq(Var(other.t_var), NULL),
                                          info.before(other.tag, tag))))
                ren[x] = w.g_var
        cases.append(conjoin(guards + [rename_cond(cond, ren)]))
    return Or(tuple(cases))


def _resolve_in_formula(f: Ltl, stale: dict[str, _StaleInfo]) -> Ltl:
    """Apply :func:`_resolve_reads` to every condition atom of a node-local
    formula (child formulas live at other nodes and are left alone)."""
    if not stale:
        return f

    def fn(atom):
        if isinstance(atom, CondAtom):
            return CondAtom(_resolve_reads(atom.cond, stale))
        return atom

    return map_atoms(f, fn)


# ---------------------------------------------------------------------------
# (a) thread property globals through task inputs
# ---------------------------------------------------------------------------


def _thread_globals(state: _State) -> None:
    if not state.prop.globals_:
        return
    threaded: dict[str, str] = {}
    for gname, gsort in state.prop.globals_:
        base = gname
        while any(base in m.namer.taken for m in state.tasks.values()):
            base += "_g"
        for m in state.tasks.values():
            m.namer.taken.add(base)
            m.add_var(base, gsort, is_input=True)
            for link in m.links:
                link.f_in.append((base, base))
        threaded[gname] = base

    def walk(f: Ltl, tname: str) -> Ltl:
        def fn(atom):
            if isinstance(atom, CondAtom):
                return CondAtom(rename_cond(atom.cond, threaded))
            if isinstance(atom, ChildFormula):
                return ChildFormula(atom.child, walk(atom.formula, atom.child))
            return atom

        return map_atoms(f, fn)

    state.formula = walk(state.formula, state.prop.root_task)


# ---------------------------------------------------------------------------
# (b) desugar existential quantifiers
# ---------------------------------------------------------------------------


def _desugar_cond(cond: Cond, m: _MutTask, positive: bool,
                  *, as_input: bool = False) -> Cond:
    if isinstance(cond, Exists):
        if not positive:
            raise NormalizeError(
                f"task {m.name}: an existential quantifier under negation "
                "cannot be desugared into a guessed variable"
            )
        ren = {}
        for bname, bsort in cond.bound:
            fresh = m.namer.fresh(bname)
            ren[bname] = fresh
            m.add_var(fresh, bsort, is_input=as_input)
        return _desugar_cond(rename_cond(cond.body, ren), m, positive,
                             as_input=as_input)
    if isinstance(cond, Not):
        return Not(_desugar_cond(cond.body, m, not positive,
                                 as_input=as_input))
    if isinstance(cond, And):
        return And(tuple(_desugar_cond(c, m, positive, as_input=as_input)
                         for c in cond.items))
    if isinstance(cond, Or):
        return Or(tuple(_desugar_cond(c, m, positive, as_input=as_input)
                        for c in cond.items))
    if isinstance(cond, Implies):
        return Implies(
            _desugar_cond(cond.lhs, m, not positive, as_input=as_input),
            _desugar_cond(cond.rhs, m, positive, as_input=as_input),
        )
    return cond


def _desugar_exists(state: _State) -> None:
    for m in state.tasks.values():
        for svc in m.services:
            svc.pre = _desugar_cond(svc.pre, m, True)
            svc.post = _desugar_cond(svc.post, m, True)
        for link in m.links:
            link.opening_pre = _desugar_cond(link.opening_pre, m, True)
        m.closing_pre = _desugar_cond(m.closing_pre, m, True)
    # The global precondition constrains root inputs; a witness becomes an
    # extra free input (the constrained set of valuations projects onto the
    # original one).
    root = state.task(state.spec.root)
    state.global_pre = _desugar_cond(state.global_pre, root, True,
                                     as_input=True)


# ---------------------------------------------------------------------------
# artifact-set atoms in the property
# ---------------------------------------------------------------------------


def _eliminate_set_atoms(state: _State) -> None:
    flags: dict[tuple[str, tuple[Term, ...]], str] = {}

    def flag_for(m: _MutTask, args: tuple[Term, ...]) -> str:
        key = (m.name, args)
        got = flags.get(key)
        if got is not None:
            return got
        name = m.namer.fresh("in_" + (m.set_relation or "set"))
        m.add_var(name, Sort.REAL)
        m.set_flags.append(name)
        flags[key] = name
        m.guards.append(_set_flag_guard(m, name, args))
        return name

    def strip_cond(cond: Cond, m: _MutTask) -> Cond:
        if isinstance(cond, SetAtom):
            if cond.task != m.name:
                raise NormalizeError(
                    f"artifact-set atom of task {cond.task} appears at a "
                    f"node of task {m.name}; set membership is only "
                    "observable at the owning task's node"
                )
            return LinCmp(CmpOp.NE, LinExpr.var(flag_for(m, cond.args)))
        if isinstance(cond, Not):
            return Not(strip_cond(cond.body, m))
        if isinstance(cond, And):
            return And(tuple(strip_cond(c, m) for c in cond.items))
        if isinstance(cond, Or):
            return Or(tuple(strip_cond(c, m) for c in cond.items))
        if isinstance(cond, Implies):
            return Implies(strip_cond(cond.lhs, m), strip_cond(cond.rhs, m))
        return cond

    def walk(f: Ltl, tname: str) -> Ltl:
        m = state.task(tname)

        def fn(atom):
            if isinstance(atom, CondAtom):
                if any(isinstance(c, Exists)
                       for c in _iter_cond_nodes(atom.cond)):
                    raise NormalizeError(
                        f"node {tname}: existential quantifiers in property "
                        "conditions are not supported"
                    )
                if any(isinstance(a, SetAtom) for a in iter_atoms(atom.cond)):
                    return CondAtom(strip_cond(atom.cond, m))
                return atom
            if isinstance(atom, ChildFormula):
                return ChildFormula(atom.child, walk(atom.formula, atom.child))
            return atom

        return map_atoms(f, fn)

    state.formula = walk(state.formula, state.prop.root_task)


def _set_flag_guard(m: _MutTask, flag: str, args: tuple[Term, ...]) -> Ltl:
    """Always, the flag's sign tracks membership of the tested tuple: after
    an insert the pre-step set tuple joins, after a retrieve the post-step
    one leaves, and any other step (including the nondeterministic update of
    the flag itself) preserves the sign.  Guarded by ``X true`` so the last
    position of a finite run constrains nothing."""
    eq_now = CondAtom(conjoin(Eq(Var(s), a) for s, a in zip(m.set_vars, args)))
    flag_set = CondAtom(LinCmp(CmpOp.NE, LinExpr.var(flag)))
    adds: list[Ltl] = [LtlAtom(flag_set)]
    removes: list[Ltl] = []
    for svc in m.services:
        fires = LtlX(LtlAtom(ServiceAtom(Obs.INTERNAL, svc.name)))
        if "+" in svc.delta:
            adds.append(LtlAnd((fires, LtlAtom(eq_now))))
        if "-" in svc.delta:
            removes.append(LtlNot(LtlAnd((fires, LtlX(LtlAtom(eq_now))))))
    after = LtlAnd(tuple([LtlOr(tuple(adds))] + removes))
    now = LtlX(LtlAtom(flag_set))
    bicond = LtlAnd((LtlImplies(now, after), LtlImplies(after, now)))
    return LtlG(LtlImplies(LtlX(LTL_TRUE), bicond))


# ---------------------------------------------------------------------------
# (c) + (d): machinery, shadows, bundles, init
# ---------------------------------------------------------------------------


def _transform_task(state: _State, tname: str) -> None:
    m = state.task(tname)

    # -- (d) per-link numeric-return machinery ------------------------------
    for link in m.links:
        num_targets = [(cv, pv) for cv, pv in link.f_out
                       if m.sort_of(pv) is Sort.REAL]
        if not num_targets:
            continue
        child = state.task(link.child)
        t_var = m.namer.fresh(f"ret_{link.child}")
        m.id_vars.append(t_var)
        if child.token_var is None:
            child.token_var = child.namer.fresh("tok")
            child.id_vars.append(child.token_var)
            child.needs_init = True
        link.f_out = [(cv, pv) for cv, pv in link.f_out
                      if m.sort_of(pv) is Sort.ID]
        link.f_out.append((child.token_var, t_var))
        for cv, pv in num_targets:
            g_var = m.namer.fresh(f"val_{pv}_{link.child}")
            m.num_vars.append(g_var)
            info = m.stale.setdefault(pv, _StaleInfo([], {}))
            info.writers.append(_Writer(link.child, t_var, g_var))
            gin = child.namer.fresh(f"exp_{cv}")
            child.add_var(gin, Sort.REAL, is_input=True)
            link.f_in.append((gin, g_var))
            link.conf_pairs.append((cv, gin))
        m.needs_init = True

    # Order flags for link pairs returning into a common target.
    for x, info in sorted(m.stale.items()):
        if x in m.baseline_inputs:
            continue  # bundle copies carry their own (frozen) flags
        tags = sorted(w.tag for w in info.writers)
        for a, b in itertools.combinations(tags, 2):
            o = m.orders.get((a, b))
            if o is None:
                o = m.namer.fresh(f"ord_{a}_{b}")
                m.num_vars.append(o)
                m.orders[(a, b)] = o
            info.orders[(a, b)] = o

    # -- (c) shadow copies for same-link pass/return overlaps ---------------
    for link in m.links:
        targets = {pv for _, pv in link.f_out}
        for i, (cv, pv) in enumerate(link.f_in):
            if pv in targets:
                shadow = m.namer.fresh(f"{pv}_at_open")
                m.add_var(shadow, m.sort_of(pv))
                m.shadows.append((shadow, pv))
                link.f_in[i] = (cv, shadow)
                m.needs_init = True

    # -- resolve stale reads in this task's own conditions ------------------
    if m.stale:
        own = frozenset(x for x in m.stale if x not in m.baseline_inputs)
        for svc in m.services:
            svc.pre = _resolve_reads(svc.pre, m.stale)
            # A postcondition *constrains* the next value of this task's own
            # dropped targets — that is not a read.  Stale values received
            # as inputs are reads wherever they occur.
            svc.post = _resolve_reads(svc.post, m.stale, exclude=own)
        for link in m.links:
            link.opening_pre = _resolve_reads(link.opening_pre, m.stale)
        m.closing_pre = _resolve_reads(m.closing_pre, m.stale)
        m.guards = [_resolve_in_formula(g, m.stale) for g in m.guards]

    # -- bundle slots/guesses/order flags alongside stale passes ------------
    for link in m.links:
        stale_passes = [(cv, pv) for cv, pv in link.f_in if pv in m.stale]
        if not stale_passes:
            continue
        child = state.task(link.child)
        t_copies: dict[str, str] = {}
        o_copies: dict[tuple[str, str], str] = {}
        for cv, pv in stale_passes:
            info = m.stale[pv]
            # A link's own slot is still null when the link opens (the only
            # write to it is the link's own close, and a link opens at most
            # once per segment), so the receiving child never sees that
            # writer's value through the pass — skip it.
            writers = [w for w in info.writers if w.tag != link.child]
            if not writers:
                continue
            local = _StaleInfo([], {})
            for w in writers:
                t_loc = t_copies.get(w.tag)
                if t_loc is None:
                    t_loc = child.namer.fresh(f"ret_{w.tag}")
                    child.add_var(t_loc, Sort.ID, is_input=True)
                    link.f_in.append((t_loc, w.t_var))
                    t_copies[w.tag] = t_loc
                g_loc = child.namer.fresh(f"val_{cv}_{w.tag}")
                child.add_var(g_loc, Sort.REAL, is_input=True)
                link.f_in.append((g_loc, w.g_var))
                local.writers.append(_Writer(w.tag, t_loc, g_loc))
            alive = {w.tag for w in writers}
            for pair, o_var in sorted(info.orders.items()):
                if not (pair[0] in alive and pair[1] in alive):
                    continue
                o_loc = o_copies.get(pair)
                if o_loc is None:
                    o_loc = child.namer.fresh(f"ord_{pair[0]}_{pair[1]}")
                    child.add_var(o_loc, Sort.REAL, is_input=True)
                    link.f_in.append((o_loc, o_var))
                    o_copies[pair] = o_loc
                local.orders[pair] = o_loc
            child.stale[cv] = local

    # -- initialization step and gates ---------------------------------------
    maintain: list[Cond] = m.own_slot_resets()
    if m.token_var is not None:
        maintain.append(Not(Eq(Var(m.token_var), NULL)))
    maintain.extend(Eq(Var(shadow), Var(orig)) for shadow, orig in m.shadows)
    if m.needs_init:
        booted = m.namer.fresh("booted")
        m.num_vars.append(booted)
        gate = Eq(Var(booted), _ONE)
        for svc in m.services:
            svc.pre = conjoin((svc.pre, gate))
            svc.post = conjoin([svc.post, gate] + maintain)
        restore = [Eq(Var(v), NULL) for v in m.baseline_ids
                   if v not in m.baseline_inputs]
        restore += [Eq(Var(v), _ZERO) for v in m.baseline_nums
                    if v not in m.baseline_inputs]
        restore += [Eq(Var(flag), _ZERO) for flag in m.set_flags]
        m.init_name = _Namer({s.name for s in m.services}).fresh("init")
        m.services.append(_MutSvc(
            m.init_name,
            Eq(Var(booted), _ZERO),
            conjoin(dict.fromkeys(restore + maintain + [gate])),
            (),
        ))
        for link in m.links:
            link.opening_pre = conjoin((link.opening_pre, gate))
        if tname != state.spec.root:
            m.closing_pre = conjoin((m.closing_pre, gate))
    elif maintain:  # pragma: no cover - machinery always brings init
        for svc in m.services:
            svc.post = conjoin([svc.post] + maintain)


# ---------------------------------------------------------------------------
# conformance formula and property assembly
# ---------------------------------------------------------------------------


def _invariant(m: _MutTask) -> Optional[Ltl]:
    """Order flags must agree with the slots: whenever exactly one of a
    compared pair of links has closed this segment, the flag points at it.
    Held always, this pins each flag by the time both links have closed, so
    a latest writer exists in every reachable case of a read split."""
    if not m.orders:
        return None
    slot: dict[str, str] = {}
    for x, info in m.stale.items():
        if x in m.baseline_inputs:
            continue
        for w in info.writers:
            slot[w.tag] = w.t_var
    parts: list[Cond] = []
    for (a, b), o in sorted(m.orders.items()):
        ta, tb = Var(slot[a]), Var(slot[b])
        parts.append(Implies(And((Not(Eq(ta, NULL)), Eq(tb, NULL))),
                             LinCmp(CmpOp.NE, LinExpr.var(o))))
        parts.append(Implies(And((Not(Eq(tb, NULL)), Eq(ta, NULL))),
                             Eq(Var(o), _ZERO)))
    return LtlG(LtlAtom(CondAtom(conjoin(parts))))


def _conformance(state: _State, tname: str) -> Ltl:
    """Bottom-up conformance formula at *tname*'s node: order flags agree
    with slots, set flags track membership, and every numeric-returning
    child, whenever opened, closes only with the guessed values (checked
    inside the child against the guess copies it received) and conforms
    itself."""
    m = state.task(tname)
    parts: list[Ltl] = []
    inv = _invariant(m)
    if inv is not None:
        parts.append(inv)
    parts.extend(m.guards)
    for link in m.links:
        inner: list[Ltl] = []
        if link.conf_pairs:
            child = state.task(link.child)
            agree = conjoin(Eq(Var(cv), Var(gin))
                            for cv, gin in link.conf_pairs)
            agree = _resolve_reads(agree, child.stale)
            inner.append(LtlG(LtlImplies(
                LtlAtom(ServiceAtom(Obs.CLOSE_SELF)),
                LtlAtom(CondAtom(agree)),
            )))
        sub = _conformance(state, link.child)
        if sub != LTL_TRUE:
            inner.append(sub)
        if inner:
            parts.append(LtlG(LtlImplies(
                LtlAtom(ServiceAtom(Obs.OPEN_CHILD, link.child)),
                LtlAtom(ChildFormula(link.child, LtlAnd(tuple(inner)))),
            )))
    if not parts:
        return LTL_TRUE
    return parts[0] if len(parts) == 1 else LtlAnd(tuple(parts))


def _rewrite_property(state: _State, f: Ltl, tname: str) -> Ltl:
    """Per node: resolve stale reads in condition atoms, recurse into child
    formulas, and — when the node's task gained an init step — shift the
    node formula one step, with ``opened`` widened to accept that step."""
    m = state.task(tname)

    def fn(atom):
        if isinstance(atom, CondAtom):
            return CondAtom(_resolve_reads(atom.cond, m.stale))
        if isinstance(atom, ServiceAtom):
            if atom.kind is Obs.OPEN_SELF and m.init_name is not None:
                return LtlOr((
                    LtlAtom(atom),
                    LtlAtom(ServiceAtom(Obs.INTERNAL, m.init_name)),
                ))
            return atom
        if isinstance(atom, ChildFormula):
            return ChildFormula(
                atom.child,
                _rewrite_property(state, atom.formula, atom.child),
            )
        return atom

    out = map_atoms(f, fn)
    return LtlX(out) if m.init_name is not None else out


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _already_normal(spec: HasSpec, prop: HltlProperty) -> bool:
    if prop.globals_:
        return False
    if any(d.severity == "needs-normalize" for d in validate_spec(spec)):
        return False

    def clean(f: Ltl) -> bool:
        if isinstance(f, LtlAtom):
            if isinstance(f.atom, CondAtom):
                return not any(
                    isinstance(c, (SetAtom, Exists))
                    for c in _iter_cond_nodes(f.atom.cond)
                )
            if isinstance(f.atom, ChildFormula):
                return clean(f.atom.formula)
            return True
        if isinstance(f, (LtlAnd, LtlOr)):
            return all(clean(g) for g in f.items)
        if isinstance(f, LtlImplies):
            return clean(f.lhs) and clean(f.rhs)
        body = getattr(f, "body", None)
        if body is not None:
            return clean(body)
        lhs = getattr(f, "lhs", None)
        if lhs is not None:
            return clean(lhs) and clean(f.rhs)
        return True

    return clean(prop.formula)


def _rebuild(state: _State) -> HasSpec:
    tasks = []
    for orig in state.spec.tasks:
        m = state.task(orig.name)
        tasks.append(Task(
            name=m.name,
            id_vars=tuple(m.id_vars),
            num_vars=tuple(m.num_vars),
            input_vars=tuple(m.input_vars),
            set_relation=m.set_relation,
            set_vars=m.set_vars,
            services=tuple(InternalService(s.name, s.pre, s.post, s.delta)
                           for s in m.services),
            closing_pre=m.closing_pre,
            children=tuple(ChildLink(ln.child, ln.opening_pre, tuple(ln.f_in),
                                     tuple(ln.f_out)) for ln in m.links),
        ))
    return HasSpec(state.spec.schema, tuple(tasks), state.spec.root,
                   state.global_pre, state.spec.constants)


def normalize(spec: HasSpec,
              prop: HltlProperty) -> tuple[HasSpec, HltlProperty]:
    """Return an equivalent pair in engine shape (see the module docstring).

    Raises :class:`NormalizeError` on an invalid specification, a property
    anchored at a different root, existential quantifiers under negation or
    inside property conditions, and artifact-set atoms tested away from the
    owning task's node.  Applying the function to its own output returns it
    unchanged.
    """
    errors = [d for d in validate_spec(spec) if d.severity == "error"]
    if errors:
        raise NormalizeError(
            "specification is not valid: "
            + "; ".join(f"{d.location}: {d.message}" for d in errors[:3])
        )
    if prop.root_task != spec.root:
        raise NormalizeError(
            f"property is anchored at {prop.root_task}, "
            f"the specification root is {spec.root}"
        )
    if _already_normal(spec, prop):
        return spec, prop

    state = _State(spec, prop)
    _thread_globals(state)
    _desugar_exists(state)
    _eliminate_set_atoms(state)
    for tname in state.order:
        _transform_task(state, tname)

    formula = _rewrite_property(state, state.formula, spec.root)
    hconf = _conformance(state, spec.root)
    if hconf != LTL_TRUE:
        formula = LtlImplies(hconf, formula)
    out_spec = _rebuild(state)
    out_prop = HltlProperty((), prop.root_task, formula)

    leftover = validate_spec(out_spec)
    if leftover:  # pragma: no cover - internal consistency check
        raise AssertionError(
            "normalization produced a flagged specification: "
            + "; ".join(f"{d.location}: {d.message}" for d in leftover[:3])
        )
    return out_spec, out_prop
