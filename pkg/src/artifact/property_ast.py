"""Abstract syntax for hierarchical linear-temporal properties.

A property is a single temporal formula attached to the root task; its atoms
are data conditions over that task's variables (plus quantified globals),
service observables, and bracketed child formulas ``[ψ]@Child`` that are
evaluated over the child's own local run whenever the child is opened at
that position.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Optional, Union

from .model import Cond, Sort

__all__ = [
    "Obs",
    "CondAtom",
    "ServiceAtom",
    "ChildFormula",
    "Atom",
    "Ltl",
    "LtlAtom",
    "LtlNot",
    "LtlAnd",
    "LtlOr",
    "LtlImplies",
    "LtlX",
    "LtlF",
    "LtlG",
    "LtlU",
    "LtlW",
    "HltlProperty",
    "map_atoms",
    "iter_ltl_atoms",
    "ltl_size",
]


# ---------------------------------------------------------------------------
# Atoms
# ---------------------------------------------------------------------------


class Obs(Enum):
    """Service observable kinds testable at a run position."""

    INTERNAL = "svc"  # a named internal service of this task
    OPEN_CHILD = "open"  # opening service of a named child
    CLOSE_CHILD = "close"  # closing service of a named child
    OPEN_SELF = "opened"  # this task's own opening service
    CLOSE_SELF = "closed"  # this task's own closing service


@dataclass(frozen=True, slots=True)
class CondAtom:
    """A data condition over the enclosing task's variables and globals."""

    cond: Cond


@dataclass(frozen=True, slots=True)
class ServiceAtom:
    """True at a position iff that position's service matches."""

    kind: Obs
    name: Optional[str] = None  # service or child task name; None for self kinds


@dataclass(frozen=True, slots=True)
class ChildFormula:
    """``[formula]@child``: true at a position iff the position opens
    ``child`` and the child's local run satisfies ``formula``."""

    child: str
    formula: "Ltl"


Atom = Union[CondAtom, ServiceAtom, ChildFormula]


# ---------------------------------------------------------------------------
# Temporal formulas
# ---------------------------------------------------------------------------


class Ltl:
    __slots__ = ()


@dataclass(frozen=True, slots=True)
class LtlAtom(Ltl):
    atom: Atom


@dataclass(frozen=True, slots=True)
class LtlNot(Ltl):
    body: Ltl


@dataclass(frozen=True, slots=True)
class LtlAnd(Ltl):
    items: tuple[Ltl, ...]


@dataclass(frozen=True, slots=True)
class LtlOr(Ltl):
    items: tuple[Ltl, ...]


@dataclass(frozen=True, slots=True)
class LtlImplies(Ltl):
    lhs: Ltl
    rhs: Ltl


@dataclass(frozen=True, slots=True)
class LtlX(Ltl):
    body: Ltl


@dataclass(frozen=True, slots=True)
class LtlF(Ltl):
    body: Ltl


@dataclass(frozen=True, slots=True)
class LtlG(Ltl):
    body: Ltl


@dataclass(frozen=True, slots=True)
class LtlU(Ltl):
    lhs: Ltl
    rhs: Ltl


@dataclass(frozen=True, slots=True)
class LtlW(Ltl):
    """Weak until: ``lhs W rhs`` = ``(lhs U rhs) or G lhs``."""

    lhs: Ltl
    rhs: Ltl


LTL_TRUE = LtlAnd(())
LTL_FALSE = LtlOr(())


def map_atoms(f: Ltl, fn: Callable[[Atom], Union[Atom, Ltl]]) -> Ltl:
    """Rebuild a formula applying ``fn`` to each atom.

    ``fn`` may return a replacement atom or a whole formula.  Child formulas
    are passed to ``fn`` unexpanded; ``fn`` is responsible for recursing into
    them if it wants to.
    """

    if isinstance(f, LtlAtom):
        out = fn(f.atom)
        return out if isinstance(out, Ltl) else LtlAtom(out)
    if isinstance(f, LtlNot):
        return LtlNot(map_atoms(f.body, fn))
    if isinstance(f, LtlAnd):
        return LtlAnd(tuple(map_atoms(x, fn) for x in f.items))
    if isinstance(f, LtlOr):
        return LtlOr(tuple(map_atoms(x, fn) for x in f.items))
    if isinstance(f, LtlImplies):
        return LtlImplies(map_atoms(f.lhs, fn), map_atoms(f.rhs, fn))
    if isinstance(f, LtlX):
        return LtlX(map_atoms(f.body, fn))
    if isinstance(f, LtlF):
        return LtlF(map_atoms(f.body, fn))
    if isinstance(f, LtlG):
        return LtlG(map_atoms(f.body, fn))
    if isinstance(f, LtlU):
        return LtlU(map_atoms(f.lhs, fn), map_atoms(f.rhs, fn))
    if isinstance(f, LtlW):
        return LtlW(map_atoms(f.lhs, fn), map_atoms(f.rhs, fn))
    raise TypeError(f"not a temporal formula: {f!r}")


def iter_ltl_atoms(f: Ltl) -> Iterator[Atom]:
    """Yield this node's atoms (child formulas yielded, not entered)."""

    stack = [f]
    while stack:
        g = stack.pop()
        if isinstance(g, LtlAtom):
            yield g.atom
        elif isinstance(g, LtlNot):
            stack.append(g.body)
        elif isinstance(g, (LtlAnd, LtlOr)):
            stack.extend(g.items)
        elif isinstance(g, (LtlImplies, LtlU, LtlW)):
            stack.append(g.lhs)
            stack.append(g.rhs)
        elif isinstance(g, (LtlX, LtlF, LtlG)):
            stack.append(g.body)
        else:
            raise TypeError(f"not a temporal formula: {g!r}")


def ltl_size(f: Ltl) -> int:
    """Number of operators and atoms, counting nested child formulas."""

    if isinstance(f, LtlAtom):
        if isinstance(f.atom, ChildFormula):
            return 1 + ltl_size(f.atom.formula)
        return 1
    if isinstance(f, (LtlNot, LtlX, LtlF, LtlG)):
        body = f.body
        return 1 + ltl_size(body)
    if isinstance(f, (LtlAnd, LtlOr)):
        return 1 + sum(ltl_size(x) for x in f.items)
    if isinstance(f, (LtlImplies, LtlU, LtlW)):
        return 1 + ltl_size(f.lhs) + ltl_size(f.rhs)
    raise TypeError(f"not a temporal formula: {f!r}")


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class HltlProperty:
    """A universally quantified, root-anchored temporal property.

    ``globals_`` are the quantified data variables shared by every condition
    atom in the tree (they are threaded away by normalization); ``root_task``
    names the task the top-level formula is evaluated on.
    """

    globals_: tuple[tuple[str, Sort], ...]
    root_task: str
    formula: Ltl

    def negated(self) -> "HltlProperty":
        return HltlProperty(self.globals_, self.root_task, LtlNot(self.formula))
