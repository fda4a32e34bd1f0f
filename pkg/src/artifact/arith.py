"""Exact linear arithmetic over rationals.

This module decides conjunctions of linear constraints, projects them by
Fourier-Motzkin elimination, and represents the results as *cells*: sign
assignments to a finite set of linear polynomials.  Everything is computed
with ``fractions.Fraction`` — no floating point is involved anywhere.

Constraints are written against zero: ``expr = 0``, ``expr != 0``,
``expr < 0``, ``expr <= 0``.  Polynomials inside cells are kept in a
canonical form (primitive integer coefficients, first term positive) so that
cell refinement can compare them syntactically.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .model import CmpOp, LinCmp, LinExpr

__all__ = [
    "BudgetError",
    "Cell",
    "LinConstraint",
    "constraint",
    "eliminate",
    "feasible",
    "fm_project",
    "full_cell",
    "make_cell",
    "negate_constraint",
    "project_cell",
    "refines_onto",
    "sign_cells",
    "sign_of_poly",
]

ZERO = Fraction(0)

#: Relations a constraint may impose on its expression (against zero).
EQ, NE, LT, LE = "=", "!=", "<", "<="


class BudgetError(Exception):
    """Raised when a construction would exceed its configured size cap."""


@dataclass(frozen=True, slots=True)
class LinConstraint:
    """A single linear constraint ``expr rel 0``."""

    expr: LinExpr
    rel: str  # one of EQ, NE, LT, LE

    def __str__(self) -> str:
        return f"{self.expr} {self.rel} 0"

    @property
    def is_ground(self) -> bool:
        return self.expr.is_const

    def ground_truth(self) -> bool:
        """Truth value of a ground constraint."""
        c = self.expr.const
        if self.rel == EQ:
            return c == 0
        if self.rel == NE:
            return c != 0
        if self.rel == LT:
            return c < 0
        return c <= 0


def constraint(cmp: LinCmp) -> LinConstraint:
    """Normalize a comparison atom to a constraint against zero."""

    op, e = cmp.op, cmp.expr
    if op is CmpOp.EQ:
        return LinConstraint(e, EQ)
    if op is CmpOp.NE:
        return LinConstraint(e, NE)
    if op is CmpOp.LT:
        return LinConstraint(e, LT)
    if op is CmpOp.LE:
        return LinConstraint(e, LE)
    if op is CmpOp.GT:  # e > 0  <=>  -e < 0
        return LinConstraint(-e, LT)
    return LinConstraint(-e, LE)  # GE


def negate_constraint(k: LinConstraint) -> tuple[LinConstraint, ...]:
    """The complement of a constraint, as a disjunction of constraints."""

    if k.rel == EQ:
        return (LinConstraint(k.expr, NE),)
    if k.rel == NE:
        return (LinConstraint(k.expr, EQ),)
    if k.rel == LT:  # not(e < 0)  <=>  -e <= 0
        return (LinConstraint(-k.expr, LE),)
    return (LinConstraint(-k.expr, LT),)  # not(e <= 0) <=> -e < 0


def _coeff(e: LinExpr, v: str) -> Fraction:
    for name, c in e.terms:
        if name == v:
            return c
    return ZERO


# ---------------------------------------------------------------------------
# Feasibility and elimination
# ---------------------------------------------------------------------------


def _split_ne(cons: Sequence[LinConstraint]) -> Iterator[tuple[LinConstraint, ...]]:
    """Expand disequalities into the strict branches they stand for."""

    solid = [k for k in cons if k.rel != NE]
    nes = [k for k in cons if k.rel == NE]

    def rec(i: int, acc: list[LinConstraint]) -> Iterator[tuple[LinConstraint, ...]]:
        if i == len(nes):
            yield tuple(acc)
            return
        e = nes[i].expr
        for branch in (LinConstraint(e, LT), LinConstraint(-e, LT)):
            acc.append(branch)
            yield from rec(i + 1, acc)
            acc.pop()

    yield from rec(0, list(solid))


def _gauss(
    cons: list[LinConstraint], targets: Optional[frozenset[str]]
) -> Optional[tuple[list[LinConstraint], list[tuple[str, LinExpr]]]]:
    """Use equalities to substitute variables away.

    Only variables in ``targets`` are eliminated (all variables when targets
    is None).  Returns the reduced system plus the substitution stack, or
    None when a ground contradiction is found.
    """

    solved: list[tuple[str, LinExpr]] = []
    work = list(cons)
    while True:
        pick = None
        for idx, k in enumerate(work):
            if k.rel != EQ:
                continue
            for v, c in k.expr.terms:
                if targets is None or v in targets:
                    pick = (idx, v, c)
                    break
            if pick:
                break
        if pick is None:
            break
        idx, v, c = pick
        eq = work.pop(idx)
        # v = -(rest)/c
        rest = LinExpr(
            tuple(t for t in eq.expr.terms if t[0] != v), eq.expr.const
        )
        repl = rest.scale(Fraction(-1) / c)
        solved.append((v, repl))
        sub = {v: repl}
        reduced: list[LinConstraint] = []
        for k in work:
            e = k.expr.substitute(sub)
            nk = LinConstraint(e, k.rel)
            if nk.is_ground:
                if not nk.ground_truth():
                    return None
            else:
                reduced.append(nk)
        work = reduced
    return work, solved


def _fm_step(
    cons: list[LinConstraint], v: str
) -> Optional[tuple[list[LinConstraint], list[LinConstraint], list[LinConstraint]]]:
    """One Fourier-Motzkin elimination step for inequalities only.

    Returns (survivors, lowers, uppers), where lowers/uppers are the dropped
    constraints bounding v, or None on a ground contradiction.
    """

    lowers: list[LinConstraint] = []  # coeff < 0: v >= or > bound
    uppers: list[LinConstraint] = []  # coeff > 0: v <= or < bound
    rest: list[LinConstraint] = []
    for k in cons:
        c = _coeff(k.expr, v)
        if c == 0:
            rest.append(k)
        elif c < 0:
            lowers.append(k)
        else:
            uppers.append(k)
    for lo in lowers:
        for up in uppers:
            cl, cu = _coeff(lo.expr, v), _coeff(up.expr, v)
            # Scale so the v terms cancel: lo/(-cl) + up/cu has no v.
            e = lo.expr.scale(Fraction(1) / -cl) + up.expr.scale(Fraction(1) / cu)
            rel = LT if LT in (lo.rel, up.rel) else LE
            nk = LinConstraint(e, rel)
            if nk.is_ground:
                if not nk.ground_truth():
                    return None
            else:
                rest.append(nk)
    return rest, lowers, uppers


def _bound_value(k: LinConstraint, v: str, point: Mapping[str, Fraction]) -> Fraction:
    """Value that constraint k imposes as a bound on v at the given point."""

    c = _coeff(k.expr, v)
    total = k.expr.const
    for name, coeff in k.expr.terms:
        if name != v:
            total += coeff * point.get(name, ZERO)
    return -total / c


def feasible(
    cons: Iterable[LinConstraint],
) -> Optional[dict[str, Fraction]]:
    """Decide a conjunction of linear constraints.

    Returns a rational witness point (defined on every variable that occurs
    in the system) if satisfiable, else None.
    """

    cons = list(cons)
    for k in list(cons):
        if k.is_ground:
            if not k.ground_truth():
                return None
            cons.remove(k)
    all_vars = sorted({v for k in cons for v in k.expr.variables()})
    for branch in _split_ne(cons):
        point = _solve_branch(list(branch), all_vars)
        if point is not None:
            return point
    return None


def _solve_branch(
    cons: list[LinConstraint], all_vars: Sequence[str]
) -> Optional[dict[str, Fraction]]:
    g = _gauss(cons, None)
    if g is None:
        return None
    work, solved = g
    frames: list[tuple[str, list[LinConstraint], list[LinConstraint]]] = []
    while True:
        vs = sorted({v for k in work for v in k.expr.variables()})
        if not vs:
            break
        v = vs[0]
        step = _fm_step(work, v)
        if step is None:
            return None
        work, lowers, uppers = step
        frames.append((v, lowers, uppers))
    for k in work:  # all ground now
        if not k.ground_truth():
            return None

    point: dict[str, Fraction] = {}
    for v, lowers, uppers in reversed(frames):
        lo: Optional[tuple[Fraction, bool]] = None  # (value, strict)
        up: Optional[tuple[Fraction, bool]] = None
        for k in lowers:
            val, strict = _bound_value(k, v, point), k.rel == LT
            if lo is None or val > lo[0] or (val == lo[0] and strict):
                lo = (val, strict)
        for k in uppers:
            val, strict = _bound_value(k, v, point), k.rel == LT
            if up is None or val < up[0] or (val == up[0] and strict):
                up = (val, strict)
        if lo is None and up is None:
            point[v] = ZERO
        elif lo is None:
            point[v] = up[0] - 1 if up[1] else up[0]
        elif up is None:
            point[v] = lo[0] + 1 if lo[1] else lo[0]
        else:
            point[v] = (lo[0] + up[0]) / 2 if (lo[1] or up[1] or lo[0] != up[0]) else lo[0]
    for v, repl in reversed(solved):
        total = repl.const
        for name, c in repl.terms:
            total += c * point.get(name, ZERO)
        point[v] = total
    for v in all_vars:
        point.setdefault(v, ZERO)
    return point


def eliminate(
    cons: Iterable[LinConstraint], drop: Iterable[str]
) -> Optional[tuple[LinConstraint, ...]]:
    """Project a conjunction by eliminating the given variables exactly.

    Disequalities are not supported here (split them first).  Returns the
    projected conjunction over the remaining variables, or None when a
    ground contradiction surfaces during elimination.
    """

    drop = frozenset(drop)
    work: list[LinConstraint] = []
    for k in cons:
        if k.rel == NE:
            raise ValueError("eliminate does not accept disequalities")
        if k.is_ground:
            if not k.ground_truth():
                return None
        else:
            work.append(k)
    g = _gauss(work, drop)
    if g is None:
        return None
    work, _ = g
    for v in sorted({v for k in work for v in k.expr.variables()} & drop):
        step = _fm_step(work, v)
        if step is None:
            return None
        work = step[0]
    out: list[LinConstraint] = []
    seen = set()
    for k in work:
        poly, flip = _canon(k.expr)
        rel = k.rel
        expr = poly if not flip else -poly
        key = (expr, rel)
        if key not in seen:
            seen.add(key)
            out.append(LinConstraint(expr, rel))
    return tuple(sorted(out, key=lambda k: (k.expr.terms, k.expr.const, k.rel)))


# ---------------------------------------------------------------------------
# Cells: sign assignments to canonical polynomials
# ---------------------------------------------------------------------------


def _canon(e: LinExpr) -> tuple[LinExpr, bool]:
    """Canonical form of a polynomial: primitive integer coefficients,
    leading term positive.  Returns (canonical, flipped)."""

    if e.is_const:
        # Ground polynomials are canonicalized to 0, 1 (flipped encodes sign).
        if e.const == 0:
            return LinExpr.of(0), False
        return LinExpr.of(1), e.const < 0
    denom = 1
    for _, c in e.terms:
        denom = denom * c.denominator // gcd(denom, c.denominator)
    if e.const != 0:
        denom = denom * e.const.denominator // gcd(denom, e.const.denominator)
    scaled = e.scale(denom)
    g = 0
    for _, c in scaled.terms:
        g = gcd(g, abs(c.numerator))
    g = gcd(g, abs(scaled.const.numerator))
    scaled = scaled.scale(Fraction(1, g))
    if scaled.terms[0][1] < 0:
        return -scaled, True
    return scaled, False


def sign_of_poly(poly: LinExpr, point: Mapping[str, Fraction]) -> int:
    total = poly.const
    for v, c in poly.terms:
        total += c * point.get(v, ZERO)
    return (total > 0) - (total < 0)


def _sign_constraints(poly: LinExpr, sign: int) -> tuple[LinConstraint, ...]:
    if sign == 0:
        return (LinConstraint(poly, EQ),)
    if sign < 0:
        return (LinConstraint(poly, LT),)
    return (LinConstraint(-poly, LT),)


@dataclass(frozen=True, slots=True)
class Cell:
    """A sign assignment to a set of polynomials over a fixed axis set.

    ``axes`` is the ambient coordinate set; ``polys`` are canonical and
    sorted, paired positionally with ``signs`` in {-1, 0, +1}.  A Cell is
    only built through the constructors below, which guarantee feasibility.
    """

    axes: frozenset[str]
    polys: tuple[LinExpr, ...]
    signs: tuple[int, ...]

    def constraints(self) -> tuple[LinConstraint, ...]:
        out: list[LinConstraint] = []
        for p, s in zip(self.polys, self.signs):
            out.extend(_sign_constraints(p, s))
        return tuple(out)

    def sign_of(self, e: LinExpr) -> Optional[int]:
        """Sign of a polynomial determined by this cell, if it is one of
        the cell's polynomials (up to canonicalization)."""

        poly, flip = _canon(e)
        if poly.is_const:  # ground: sign is intrinsic
            s = (e.const > 0) - (e.const < 0)
            return s
        try:
            i = self.polys.index(poly)
        except ValueError:
            return None
        s = self.signs[i]
        return -s if flip else s

    def witness(self) -> dict[str, Fraction]:
        point = feasible(self.constraints())
        assert point is not None, "cells are feasible by construction"
        for a in self.axes:
            point.setdefault(a, ZERO)
        return point

    def refines(self, other: "Cell") -> bool:
        """True when this cell constrains a superset of axes and polynomials
        and agrees with the other cell's signs."""

        if not other.axes <= self.axes:
            return False
        mine = dict(zip(self.polys, self.signs))
        return all(
            mine.get(p) == s for p, s in zip(other.polys, other.signs)
        )

    def __str__(self) -> str:
        parts = [
            f"{p} {'<' if s < 0 else '=' if s == 0 else '>'} 0"
            for p, s in zip(self.polys, self.signs)
        ]
        return "{" + ", ".join(parts) + "}"


def make_cell(
    axes: Iterable[str], assignment: Mapping[LinExpr, int]
) -> Optional[Cell]:
    """Build the cell with the given polynomial signs; None if infeasible
    (or inconsistent on ground polynomials)."""

    axes = frozenset(axes)
    canon: dict[LinExpr, int] = {}
    for e, s in assignment.items():
        poly, flip = _canon(e)
        s = -s if flip else s
        if poly.is_const:
            intrinsic = 1 if poly.const > 0 else 0
            if intrinsic != s:
                return None
            continue
        if not poly.variables() <= axes:
            raise ValueError(f"polynomial {poly} escapes the axis set")
        if canon.setdefault(poly, s) != s:
            return None
    polys = tuple(sorted(canon, key=lambda p: (p.terms, p.const)))
    signs = tuple(canon[p] for p in polys)
    if feasible(
        [k for p, s in canon.items() for k in _sign_constraints(p, s)]
    ) is None:
        return None
    return Cell(axes, polys, signs)


def full_cell(axes: Iterable[str]) -> Cell:
    """The single unconstrained cell over the given axes."""

    return Cell(frozenset(axes), (), ())


def sign_cells(
    polys: Iterable[LinExpr],
    axes: Iterable[str],
    ambient: Sequence[LinConstraint] = (),
) -> list[Cell]:
    """All feasible cells over the given polynomials (within the optional
    ambient conjunction), enumerated depth-first with pruning."""

    axes = frozenset(axes)
    seen: dict[LinExpr, None] = {}
    for e in polys:
        poly, _ = _canon(e)
        if not poly.is_const:
            seen.setdefault(poly, None)
    canon = sorted(seen, key=lambda p: (p.terms, p.const))
    ambient = tuple(ambient)
    out: list[Cell] = []

    def rec(i: int, acc: list[LinConstraint], signs: list[int]) -> None:
        if feasible(acc) is None:
            return
        if i == len(canon):
            out.append(Cell(axes, tuple(canon), tuple(signs)))
            return
        for s in (0, -1, 1):
            ks = _sign_constraints(canon[i], s)
            acc.extend(ks)
            signs.append(s)
            rec(i + 1, acc, signs)
            signs.pop()
            del acc[len(acc) - len(ks):]

    rec(0, list(ambient), [])
    return out


def fm_project(
    cons: Iterable[LinConstraint], keep: Iterable[str]
) -> list[Cell]:
    """Project a conjunction onto the kept variables, returned as the
    disjoint cells (over the projection's own polynomials) that cover it."""

    keep = frozenset(keep)
    cons = list(cons)
    drop = {v for k in cons for v in k.expr.variables()} - keep
    projected = eliminate(cons, drop)
    if projected is None:
        return []
    cells = sign_cells((k.expr for k in projected), keep)
    out = []
    for c in cells:
        if all(_implied_by_cell(c, k) for k in projected):
            out.append(c)
    return out


def _implied_by_cell(c: Cell, k: LinConstraint) -> bool:
    s = c.sign_of(k.expr)
    assert s is not None, "projection polynomials all appear in the cell"
    if k.rel == EQ:
        return s == 0
    if k.rel == LT:
        return s < 0
    if k.rel == LE:
        return s <= 0
    return s != 0  # NE


def project_cell(c: Cell, keep: Iterable[str]) -> list[Cell]:
    """The projection of a cell onto a subset of its axes, as a union of
    disjoint cells."""

    keep = frozenset(keep)
    if not keep <= c.axes:
        raise ValueError("projection axes must be a subset of the cell's axes")
    return fm_project(c.constraints(), keep)


def refines_onto(c: Cell, target: Cell, keep: Iterable[str]) -> bool:
    """True when c refines some cell of the target's projection onto the
    given axes."""

    return any(c.refines(piece) for piece in project_cell(target, keep))
