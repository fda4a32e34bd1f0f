"""Surface syntax: specification files, property files, database files.

This is the only module that deals with text; everything downstream works on
the object model.  Three formats are handled:

* specification files (``.has``): schema, constants, global precondition and
  the task tree, with conditions in a small first-order expression language;
* property files (``.hltl``): one temporal formula anchored at the root
  task, with brace-delimited data conditions, service observables and
  bracketed child subformulas;
* database files (``.json``): one JSON object mapping relation names to
  lists of rows (attribute-name keyed).

Parsing is strict and every error carries a source position.  Rendering is
canonical: ``parse(render(x))`` is structurally equal to ``x`` for any model
object that came out of the parser.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .model import (
    FALSE,
    NULL,
    And,
    BoolCond,
    ChildLink,
    CmpOp,
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
    NullTerm,
    Or,
    RelAtom,
    Relation,
    Schema,
    SetAtom,
    Sort,
    TRUE,
    Task,
    Term,
    Value,
    Var,
)
from .property_ast import (
    ChildFormula,
    CondAtom,
    HltlProperty,
    LTL_FALSE,
    LTL_TRUE,
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
    "ParseError",
    "SpecSource",
    "PropertySource",
    "parse_spec",
    "parse_spec_source",
    "parse_property",
    "parse_property_source",
    "parse_condition",
    "render_spec",
    "render_property",
    "render_condition",
    "load_database",
    "dump_database",
]


class ParseError(ValueError):
    """A syntax or resolution error, with a source position when known."""

    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        col: Optional[int] = None,
        source: str = "<input>",
    ) -> None:
        self.message = message
        self.line = line
        self.col = col
        self.source = source
        #: index of the offending token, used to pick the better error when
        #: a backtracking alternative fails
        self.tok_index = -1
        super().__init__(str(self))

    def __str__(self) -> str:
        if self.line is None:
            return f"{self.source}: {self.message}"
        return f"{self.source}:{self.line}:{self.col}: {self.message}"


@dataclass(frozen=True)
class SpecSource:
    """Original specification text plus a location -> position map whose keys
    follow the validation diagnostics' ``location`` convention."""

    text: str
    name: str
    spans: tuple[tuple[str, int, int], ...]  # (location, line, col)

    def position_of(self, location: str) -> Optional[tuple[int, int]]:
        best: Optional[tuple[int, int]] = None
        best_len = -1
        for loc, line, col in self.spans:
            if location.startswith(loc) and len(loc) > best_len:
                best, best_len = (line, col), len(loc)
        return best


@dataclass(frozen=True)
class PropertySource:
    text: str
    name: str


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
      (?P<skip>\s+|\#[^\n]*)
    | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<number>[0-9]+(?:\.[0-9]+)?)
    | (?P<op><=|>=|!=|[{}()\[\],;:.+\-*/=<>])
    """,
    re.VERBOSE,
)

#: names with fixed meaning inside conditions; they cannot be variables
RESERVED_WORDS = frozenset(
    {"and", "or", "not", "implies", "exists", "true", "false", "null", "ID", "REAL"}
)

_CMP_TOKENS = {
    "=": CmpOp.EQ,
    "!=": CmpOp.NE,
    "<": CmpOp.LT,
    "<=": CmpOp.LE,
    ">": CmpOp.GT,
    ">=": CmpOp.GE,
}


@dataclass(frozen=True, slots=True)
class _Tok:
    kind: str  # "name" | "number" | "op" | "eof"
    text: str
    line: int
    col: int


def _lex(text: str, source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    line = 1
    line_start = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(
                f"unexpected character {text[pos]!r}",
                line,
                pos - line_start + 1,
                source,
            )
        kind = m.lastgroup
        if kind != "skip":
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        for i in range(m.start(), m.end()):
            if text[i] == "\n":
                line += 1
                line_start = i + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, n - line_start + 1))
    return toks


class _Stream:
    """A window over a token list with one-token lookahead helpers."""

    def __init__(self, toks: Sequence[_Tok], source: str) -> None:
        self.toks = toks
        self.source = source
        self.i = 0

    def peek(self, k: int = 0) -> _Tok:
        j = self.i + k
        if j >= len(self.toks):
            return self.toks[-1]
        return self.toks[j]

    def at(self, kind: str, text: Optional[str] = None) -> bool:
        t = self.peek()
        return t.kind == kind and (text is None or t.text == text)

    def at_name(self, text: str) -> bool:
        return self.at("name", text)

    def take(self) -> _Tok:
        t = self.peek()
        if t.kind != "eof":
            self.i += 1
        return t

    def expect(self, kind: str, text: Optional[str] = None, what: Optional[str] = None) -> _Tok:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = what or (text if text is not None else kind)
            raise self.error(f"expected {want!r}, found {self._show(t)}")
        return self.take()

    def error(self, message: str, tok: Optional[_Tok] = None) -> ParseError:
        t = tok or self.peek()
        err = ParseError(message, t.line, t.col, self.source)
        err.tok_index = self.i
        return err

    @staticmethod
    def _show(t: _Tok) -> str:
        return "end of input" if t.kind == "eof" else repr(t.text)


def _window(toks: Sequence[_Tok], lo: int, hi: int, source: str) -> _Stream:
    """A sub-stream over ``toks[lo:hi]`` with an EOF sentinel at ``hi``."""

    end = toks[hi] if hi < len(toks) else toks[-1]
    sub = list(toks[lo:hi]) + [_Tok("eof", "", end.line, end.col)]
    return _Stream(sub, source)


# ---------------------------------------------------------------------------
# Condition parsing
# ---------------------------------------------------------------------------


@dataclass
class _CondCtx:
    """Name resolution tables for one condition."""

    sorts: Mapping[str, Sort]
    constants: Mapping[str, Fraction]
    relations: Mapping[str, Relation]
    #: artifact set name -> (owning task, member sorts); empty when set atoms
    #: are not allowed in this position
    sets: Mapping[str, tuple[str, tuple[Sort, ...]]]
    #: when set atoms are allowed, the variables their arguments may use
    set_args: Optional[frozenset[str]] = None

    def with_bound(self, extra: Mapping[str, Sort]) -> "_CondCtx":
        merged = dict(self.sorts)
        merged.update(extra)
        return _CondCtx(merged, self.constants, self.relations, self.sets, self.set_args)


@dataclass(frozen=True, slots=True)
class _Operand:
    """A parsed arithmetic operand: ``null``, or a linear expression that may
    happen to be a single bare variable (eligible for identifier equality)."""

    expr: Optional[LinExpr]
    plain: Optional[str]
    tok: _Tok

    @property
    def is_null(self) -> bool:
        return self.expr is None


class _CondParser:
    def __init__(self, stream: _Stream, ctx: _CondCtx) -> None:
        self.s = stream
        self.ctx = ctx

    def parse(self) -> Cond:
        c = self._cond()
        if not self.s.at("eof"):
            raise self.s.error(f"unexpected {self.s._show(self.s.peek())} after condition")
        return c

    # precedence: implies < or < and < not < atoms; exists spans maximally.

    def _cond(self) -> Cond:
        return self._implies()

    def _implies(self) -> Cond:
        lhs = self._or()
        if self.s.at_name("implies"):
            self.s.take()
            return Implies(lhs, self._implies())
        return lhs

    def _or(self) -> Cond:
        items = [self._and()]
        while self.s.at_name("or"):
            self.s.take()
            items.append(self._and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def _and(self) -> Cond:
        items = [self._unary()]
        while self.s.at_name("and"):
            self.s.take()
            items.append(self._unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def _unary(self) -> Cond:
        if self.s.at_name("not"):
            self.s.take()
            return Not(self._unary())
        if self.s.at_name("exists"):
            return self._exists()
        return self._atom()

    def _exists(self) -> Cond:
        self.s.expect("name", "exists")
        binders: list[tuple[str, Sort]] = []
        bound: dict[str, Sort] = {}
        while True:
            tok = self.s.expect("name", what="a variable name")
            if tok.text in RESERVED_WORDS:
                raise self.s.error(f"{tok.text!r} is a reserved word", tok)
            if tok.text in self.ctx.sorts or tok.text in bound:
                raise self.s.error(
                    f"quantified variable {tok.text} shadows a variable in scope", tok
                )
            self.s.expect("op", ":")
            sort = self._sort()
            binders.append((tok.text, sort))
            bound[tok.text] = sort
            if self.s.at("op", ","):
                self.s.take()
                continue
            break
        self.s.expect("op", ".")
        body = _CondParser(self.s, self.ctx.with_bound(bound))._cond()
        return Exists(tuple(binders), body)

    def _sort(self) -> Sort:
        tok = self.s.expect("name", what="'ID' or 'REAL'")
        if tok.text == "ID":
            return Sort.ID
        if tok.text == "REAL":
            return Sort.REAL
        raise self.s.error(f"expected 'ID' or 'REAL', found {tok.text!r}", tok)

    def _atom(self) -> Cond:
        t = self.s.peek()
        if t.kind == "name":
            if t.text == "true":
                self.s.take()
                return TRUE
            if t.text == "false":
                self.s.take()
                return FALSE
            if (
                self.s.peek(1).kind == "op"
                and self.s.peek(1).text == "("
                and (t.text in self.ctx.relations or t.text in self.ctx.sets)
            ):
                return self._rel_or_set_atom()
        if t.kind == "op" and t.text == "(":
            return self._paren_or_cmp()
        return self._cmp()

    def _paren_or_cmp(self) -> Cond:
        """Disambiguate ``( condition )`` from a parenthesized arithmetic
        operand such as ``(x + 1) = y``: try the condition reading first and
        fall back to a comparison (keeping whichever error got further)."""

        save = self.s.i
        cond_err: Optional[ParseError] = None
        try:
            self.s.expect("op", "(")
            inner = self._cond()
            self.s.expect("op", ")")
            nxt = self.s.peek()
            if not (nxt.kind == "op" and nxt.text in ("+", "-", "*", "/", *_CMP_TOKENS)):
                return inner
        except ParseError as e:
            cond_err = e
        self.s.i = save
        try:
            return self._cmp()
        except ParseError as e:
            if cond_err is not None and cond_err.tok_index > e.tok_index:
                raise cond_err from None
            raise

    def _cmp(self) -> Cond:
        lhs = self._sum()
        op_tok = self.s.peek()
        if not (op_tok.kind == "op" and op_tok.text in _CMP_TOKENS):
            raise self.s.error(
                f"expected a comparison operator, found {self.s._show(op_tok)}"
            )
        self.s.take()
        rhs = self._sum()
        return self._resolve_cmp(lhs, _CMP_TOKENS[op_tok.text], rhs, op_tok)

    # -- arithmetic ---------------------------------------------------------

    def _sum(self) -> _Operand:
        acc = self._product()
        while self.s.at("op", "+") or self.s.at("op", "-"):
            op = self.s.take()
            rhs = self._product()
            a = self._numeric(acc)
            b = self._numeric(rhs)
            acc = _Operand(a + b if op.text == "+" else a - b, None, acc.tok)
        return acc

    def _product(self) -> _Operand:
        acc = self._signed()
        while self.s.at("op", "*"):
            optok = self.s.take()
            rhs = self._signed()
            a = self._numeric(acc)
            b = self._numeric(rhs)
            if b.is_const:
                acc = _Operand(a.scale(b.const), None, acc.tok)
            elif a.is_const:
                acc = _Operand(b.scale(a.const), None, acc.tok)
            else:
                raise self.s.error("nonlinear product of two variables", optok)
        return acc

    def _signed(self) -> _Operand:
        if self.s.at("op", "-"):
            tok = self.s.take()
            inner = self._signed()
            return _Operand(-self._numeric(inner), None, tok)
        if self.s.at("op", "+"):
            self.s.take()
            return self._signed()
        return self._primary()

    def _primary(self) -> _Operand:
        t = self.s.peek()
        if t.kind == "number":
            return _Operand(LinExpr.of(self._number()), None, t)
        if t.kind == "name":
            if t.text == "null":
                self.s.take()
                return _Operand(None, None, t)
            if t.text in RESERVED_WORDS:
                raise self.s.error(f"unexpected keyword {t.text!r} in expression", t)
            self.s.take()
            if t.text in self.ctx.sorts:
                return _Operand(LinExpr.var(t.text), t.text, t)
            if t.text in self.ctx.constants:
                return _Operand(LinExpr.of(self.ctx.constants[t.text]), None, t)
            raise self.s.error(f"unknown variable or constant {t.text!r}", t)
        if t.kind == "op" and t.text == "(":
            self.s.take()
            inner = self._sum()
            self.s.expect("op", ")")
            return _Operand(inner.expr, inner.plain, t)
        raise self.s.error(f"expected a term, found {self.s._show(t)}")

    def _number(self) -> Fraction:
        tok = self.s.expect("number")
        value = Fraction(tok.text)
        if self.s.at("op", "/") and self.s.peek(1).kind == "number":
            self.s.take()
            den = Fraction(self.s.take().text)
            if den == 0:
                raise self.s.error("division by zero", tok)
            value /= den
        return value

    def _numeric(self, o: _Operand) -> LinExpr:
        """An operand entering arithmetic: not null, not an identifier."""

        if o.is_null:
            raise self.s.error("null cannot appear in arithmetic", o.tok)
        if o.plain is not None and self.ctx.sorts[o.plain] is Sort.ID:
            raise self.s.error(
                f"identifier variable {o.plain} cannot appear in arithmetic", o.tok
            )
        assert o.expr is not None
        return o.expr

    def _resolve_cmp(self, lhs: _Operand, op: CmpOp, rhs: _Operand, tok: _Tok) -> Cond:
        def id_term(o: _Operand) -> Optional[Term]:
            if o.is_null:
                return NULL
            if o.plain is not None and self.ctx.sorts[o.plain] is Sort.ID:
                return Var(o.plain)
            return None

        lid, rid = id_term(lhs), id_term(rhs)
        if op in (CmpOp.EQ, CmpOp.NE):
            if lid is not None or rid is not None:
                if lid is None or rid is None:
                    raise self.s.error(
                        "sort mismatch: an identifier can be compared only with "
                        "an identifier variable or null",
                        tok,
                    )
                eq = Eq(lid, rid)
                return eq if op is CmpOp.EQ else Not(eq)
            return LinCmp(op, self._numeric(lhs) - self._numeric(rhs))
        if lid is not None or rid is not None:
            raise self.s.error("identifiers admit only = and != comparisons", tok)
        return LinCmp(op, self._numeric(lhs) - self._numeric(rhs))

    # -- relation / set atoms ------------------------------------------------

    def _rel_or_set_atom(self) -> Cond:
        name_tok = self.s.expect("name")
        self.s.expect("op", "(")
        args: list[tuple[Term, _Tok]] = []
        if not self.s.at("op", ")"):
            while True:
                args.append(self._atom_term())
                if self.s.at("op", ","):
                    self.s.take()
                    continue
                break
        self.s.expect("op", ")")

        name = name_tok.text
        if name in self.ctx.relations:
            rel = self.ctx.relations[name]
            want = [(rel.id_attr, Sort.ID)]
            want += [(a, Sort.REAL) for a in rel.num_attrs]
            want += [(a, Sort.ID) for a, _ in rel.fk_attrs]
            if len(args) != len(want):
                raise self.s.error(
                    f"relation {name} has arity {len(want)}, got {len(args)} arguments",
                    name_tok,
                )
            for (term, ttok), (attr, sort) in zip(args, want):
                self._check_term_sort(term, sort, f"attribute {attr} of {name}", ttok)
            return RelAtom(name, tuple(t for t, _ in args))

        owner, sorts = self.ctx.sets[name]
        if len(args) != len(sorts):
            raise self.s.error(
                f"artifact set {name} has arity {len(sorts)}, got {len(args)} arguments",
                name_tok,
            )
        for (term, ttok), sort in zip(args, sorts):
            if not isinstance(term, Var):
                raise self.s.error(
                    "artifact set arguments must be variables", ttok
                )
            if self.ctx.set_args is not None and term.name not in self.ctx.set_args:
                raise self.s.error(
                    f"artifact set arguments must be quantified property variables, "
                    f"got {term.name}",
                    ttok,
                )
            self._check_term_sort(term, sort, f"member of {name}", ttok)
        return SetAtom(owner, tuple(t for t, _ in args))

    def _atom_term(self) -> tuple[Term, _Tok]:
        t = self.s.peek()
        if t.kind == "number":
            return Num(self._number()), t
        if t.kind == "op" and t.text == "-":
            self.s.take()
            return Num(-self._number()), t
        if t.kind == "name":
            if t.text == "null":
                self.s.take()
                return NULL, t
            if t.text in RESERVED_WORDS:
                raise self.s.error(f"unexpected keyword {t.text!r} in atom", t)
            self.s.take()
            if t.text in self.ctx.sorts:
                return Var(t.text), t
            if t.text in self.ctx.constants:
                return Num(self.ctx.constants[t.text]), t
            raise self.s.error(f"unknown variable or constant {t.text!r}", t)
        raise self.s.error(f"expected an atom argument, found {self.s._show(t)}")

    def _check_term_sort(self, term: Term, sort: Sort, where: str, tok: _Tok) -> None:
        if isinstance(term, NullTerm):
            if sort is not Sort.ID:
                raise self.s.error(f"null is not a number ({where})", tok)
        elif isinstance(term, Num):
            if sort is not Sort.REAL:
                raise self.s.error(f"a number cannot fill an identifier ({where})", tok)
        elif isinstance(term, Var):
            if self.ctx.sorts[term.name] is not sort:
                raise self.s.error(
                    f"variable {term.name} has the wrong sort for {where}", tok
                )


def parse_condition(
    text: str,
    sorts: Mapping[str, Sort],
    *,
    constants: Optional[Mapping[str, Fraction]] = None,
    schema: Optional[Schema] = None,
    source: str = "<condition>",
) -> Cond:
    """Parse a standalone condition (mostly useful in tests and tools)."""

    toks = _lex(text, source)
    relations = {r.name: r for r in schema.relations} if schema else {}
    ctx = _CondCtx(dict(sorts), dict(constants or {}), relations, {})
    return _CondParser(_Stream(toks, source), ctx).parse()


# ---------------------------------------------------------------------------
# Specification files
# ---------------------------------------------------------------------------

_Span = tuple[int, int]  # [lo, hi) token-index range into the master list


@dataclass
class _RawRelation:
    name: str
    tok: _Tok
    id_attr: Optional[str]
    num_attrs: list[str]
    fk_attrs: list[tuple[str, str]]


@dataclass
class _RawService:
    name: str
    tok: _Tok
    pre: Optional[_Span] = None
    post: Optional[_Span] = None
    delta: Optional[list[tuple[str, str, _Tok]]] = None  # (sign, set name, tok)


@dataclass
class _RawChild:
    name: str
    tok: _Tok
    open_pre: Optional[_Span] = None
    close_pre: Optional[_Span] = None
    f_in: Optional[list[tuple[str, str, _Tok]]] = None
    f_out: Optional[list[tuple[str, str, _Tok]]] = None


@dataclass
class _RawTask:
    name: str
    tok: _Tok
    decls: list[tuple[str, Sort, _Tok]]
    inputs: list[tuple[str, _Tok]]
    set_name: Optional[str]
    set_tok: Optional[_Tok]
    set_vars: list[str]
    services: list[_RawService]
    children: list[_RawChild]


class _SpecParser:
    def __init__(self, text: str, source: str) -> None:
        self.text = text
        self.source = source
        self.toks = _lex(text, source)
        self.s = _Stream(self.toks, source)
        self.spans: list[tuple[str, int, int]] = []

    # -- phase A: structure --------------------------------------------------

    def parse(self) -> tuple[HasSpec, SpecSource]:
        relations: list[_RawRelation] = []
        constants: list[tuple[str, int, _Tok]] = []
        pre_span: Optional[_Span] = None
        tasks: list[_RawTask] = []
        while not self.s.at("eof"):
            if self.s.at_name("schema"):
                tok = self.s.take()
                self._note("schema", tok)
                self.s.expect("op", "{")
                while not self.s.at("op", "}"):
                    relations.append(self._relation())
                self.s.take()
            elif self.s.at_name("constants"):
                self.s.take()
                self.s.expect("op", "{")
                while not self.s.at("op", "}"):
                    ntok = self.s.expect("name", what="a constant name")
                    self._reject_reserved(ntok)
                    self.s.expect("op", "=")
                    neg = False
                    if self.s.at("op", "-"):
                        self.s.take()
                        neg = True
                    vtok = self.s.expect("number")
                    if "." in vtok.text:
                        raise self.s.error("constants must be integers", vtok)
                    value = -int(vtok.text) if neg else int(vtok.text)
                    constants.append((ntok.text, value, ntok))
                    self.s.expect("op", ";")
                self.s.take()
            elif self.s.at_name("precondition"):
                tok = self.s.take()
                if pre_span is not None:
                    raise self.s.error("duplicate global precondition", tok)
                self._note("global precondition", tok)
                self.s.expect("op", ":")
                pre_span = self._cond_span()
            elif self.s.at_name("task"):
                tasks.append(self._task())
            else:
                raise self.s.error(
                    "expected 'schema', 'constants', 'precondition' or 'task', "
                    f"found {self.s._show(self.s.peek())}"
                )
        return self._build(relations, constants, pre_span, tasks)

    def _relation(self) -> _RawRelation:
        self.s.expect("name", "relation")
        ntok = self.s.expect("name", what="a relation name")
        self._reject_reserved(ntok)
        self._note(f"relation {ntok.text}", ntok)
        raw = _RawRelation(ntok.text, ntok, None, [], [])
        self.s.expect("op", "{")
        while not self.s.at("op", "}"):
            atok = self.s.expect("name", what="an attribute name")
            self._reject_reserved(atok)
            self.s.expect("op", ":")
            if self.s.at("op", "-"):
                self.s.take()
                self.s.expect("op", ">")
                target = self.s.expect("name", what="a relation name").text
                raw.fk_attrs.append((atok.text, target))
            else:
                sort_tok = self.s.expect("name", what="'ID', 'REAL' or '->'")
                if sort_tok.text == "ID":
                    if raw.id_attr is not None:
                        raise self.s.error(
                            f"relation {raw.name} has more than one ID attribute", atok
                        )
                    if raw.num_attrs or raw.fk_attrs:
                        raise self.s.error(
                            "the ID key must be the first attribute", atok
                        )
                    raw.id_attr = atok.text
                elif sort_tok.text == "REAL":
                    if raw.fk_attrs:
                        raise self.s.error(
                            "numeric attributes must precede foreign keys", atok
                        )
                    raw.num_attrs.append(atok.text)
                else:
                    raise self.s.error(
                        f"expected 'ID', 'REAL' or '->', found {sort_tok.text!r}",
                        sort_tok,
                    )
            self.s.expect("op", ";")
        self.s.take()
        if raw.id_attr is None:
            raise self.s.error(f"relation {raw.name} lacks an ID key attribute", ntok)
        return raw

    def _task(self) -> _RawTask:
        self.s.expect("name", "task")
        ntok = self.s.expect("name", what="a task name")
        self._reject_reserved(ntok)
        self._note(f"task {ntok.text}", ntok)
        raw = _RawTask(ntok.text, ntok, [], [], None, None, [], [], [])
        self.s.expect("op", "{")
        while not self.s.at("op", "}"):
            if self.s.at_name("vars"):
                self.s.take()
                while True:
                    vtok = self.s.expect("name", what="a variable name")
                    self._reject_reserved(vtok)
                    self.s.expect("op", ":")
                    stok = self.s.expect("name", what="'ID' or 'REAL'")
                    if stok.text not in ("ID", "REAL"):
                        raise self.s.error(
                            f"expected 'ID' or 'REAL', found {stok.text!r}", stok
                        )
                    sort = Sort.ID if stok.text == "ID" else Sort.REAL
                    raw.decls.append((vtok.text, sort, vtok))
                    if self.s.at("op", ","):
                        self.s.take()
                        continue
                    break
                self.s.expect("op", ";")
            elif self.s.at_name("input"):
                self.s.take()
                while self.s.at("name"):
                    vtok = self.s.take()
                    raw.inputs.append((vtok.text, vtok))
                    if self.s.at("op", ","):
                        self.s.take()
                        continue
                    break
                self.s.expect("op", ";")
            elif self.s.at_name("set"):
                stok = self.s.take()
                if raw.set_name is not None:
                    raise self.s.error(f"task {raw.name} declares two artifact sets", stok)
                ntok2 = self.s.expect("name", what="an artifact set name")
                self._reject_reserved(ntok2)
                raw.set_name, raw.set_tok = ntok2.text, ntok2
                self.s.expect("op", "(")
                while True:
                    raw.set_vars.append(self.s.expect("name", what="a variable name").text)
                    if self.s.at("op", ","):
                        self.s.take()
                        continue
                    break
                self.s.expect("op", ")")
                self.s.expect("op", ";")
            elif self.s.at_name("service"):
                raw.services.append(self._service(raw.name))
            elif self.s.at_name("child"):
                raw.children.append(self._child(raw.name))
            else:
                raise self.s.error(
                    "expected 'vars', 'input', 'set', 'service' or 'child', "
                    f"found {self.s._show(self.s.peek())}"
                )
        self.s.take()
        return raw

    def _service(self, task: str) -> _RawService:
        self.s.expect("name", "service")
        ntok = self.s.expect("name", what="a service name")
        self._reject_reserved(ntok)
        self._note(f"task {task}, service {ntok.text}", ntok)
        raw = _RawService(ntok.text, ntok)
        self.s.expect("op", "{")
        while not self.s.at("op", "}"):
            if self.s.at_name("pre"):
                tok = self.s.take()
                if raw.pre is not None:
                    raise self.s.error("duplicate 'pre'", tok)
                self._note(f"task {task}, service {raw.name} (pre)", tok)
                self.s.expect("op", ":")
                raw.pre = self._cond_span()
            elif self.s.at_name("post"):
                tok = self.s.take()
                if raw.post is not None:
                    raise self.s.error("duplicate 'post'", tok)
                self._note(f"task {task}, service {raw.name} (post)", tok)
                self.s.expect("op", ":")
                raw.post = self._cond_span()
            elif self.s.at_name("update"):
                tok = self.s.take()
                if raw.delta is not None:
                    raise self.s.error("duplicate 'update'", tok)
                self.s.expect("op", ":")
                raw.delta = []
                while True:
                    sign_tok = self.s.peek()
                    if not (sign_tok.kind == "op" and sign_tok.text in ("+", "-")):
                        raise self.s.error("expected '+' or '-'", sign_tok)
                    self.s.take()
                    set_tok = self.s.expect("name", what="an artifact set name")
                    raw.delta.append((sign_tok.text, set_tok.text, set_tok))
                    if self.s.at("op", ","):
                        self.s.take()
                        continue
                    break
                self.s.expect("op", ";")
            else:
                raise self.s.error(
                    "expected 'pre', 'post' or 'update', "
                    f"found {self.s._show(self.s.peek())}"
                )
        self.s.take()
        return raw

    def _child(self, task: str) -> _RawChild:
        self.s.expect("name", "child")
        ntok = self.s.expect("name", what="a child task name")
        self._note(f"task {task}, child {ntok.text}", ntok)
        raw = _RawChild(ntok.text, ntok)
        self.s.expect("op", "{")
        while not self.s.at("op", "}"):
            if self.s.at_name("open") and self.s.peek(1).text == "-" and self.s.peek(2).text == "pre":
                tok = self.s.take()
                self.s.take()
                self.s.take()
                if raw.open_pre is not None:
                    raise self.s.error("duplicate 'open-pre'", tok)
                self._note(f"task {task}, child {raw.name} (opening)", tok)
                self.s.expect("op", ":")
                raw.open_pre = self._cond_span()
            elif self.s.at_name("close") and self.s.peek(1).text == "-" and self.s.peek(2).text == "pre":
                tok = self.s.take()
                self.s.take()
                self.s.take()
                if raw.close_pre is not None:
                    raise self.s.error("duplicate 'close-pre'", tok)
                self._note(f"task {raw.name} (closing)", tok)
                self.s.expect("op", ":")
                raw.close_pre = self._cond_span()
            elif self.s.at_name("in"):
                tok = self.s.take()
                if raw.f_in is not None:
                    raise self.s.error("duplicate 'in'", tok)
                self.s.expect("op", ":")
                raw.f_in = self._var_map("<")
            elif self.s.at_name("out"):
                tok = self.s.take()
                if raw.f_out is not None:
                    raise self.s.error("duplicate 'out'", tok)
                self.s.expect("op", ":")
                raw.f_out = self._var_map("-")
            else:
                raise self.s.error(
                    "expected 'open-pre', 'close-pre', 'in' or 'out', "
                    f"found {self.s._show(self.s.peek())}"
                )
        self.s.take()
        return raw

    def _var_map(self, first: str) -> list[tuple[str, str, _Tok]]:
        """Parse ``a <- b`` pairs (``first='<'``) or ``a -> b`` pairs
        (``first='-'``); the arrow lexes as two operator tokens."""

        second = "-" if first == "<" else ">"
        pairs: list[tuple[str, str, _Tok]] = []
        while self.s.at("name"):
            child_tok = self.s.take()
            self.s.expect("op", first, what=f"'{first}{second}'")
            self.s.expect("op", second, what=f"'{first}{second}'")
            parent_tok = self.s.expect("name", what="a variable name")
            pairs.append((child_tok.text, parent_tok.text, child_tok))
            if self.s.at("op", ","):
                self.s.take()
                continue
            break
        self.s.expect("op", ";")
        return pairs

    def _cond_span(self) -> _Span:
        start = self.s.i
        depth = 0
        while True:
            t = self.s.peek()
            if t.kind == "eof" or (t.kind == "op" and t.text in ("{", "}")):
                raise self.s.error("missing ';' after condition")
            if t.kind == "op" and t.text == "(":
                depth += 1
            elif t.kind == "op" and t.text == ")":
                if depth == 0:
                    raise self.s.error("unbalanced ')' in condition")
                depth -= 1
            elif t.kind == "op" and t.text == ";" and depth == 0:
                end = self.s.i
                self.s.take()
                if end == start:
                    raise self.s.error("empty condition", t)
                return (start, end)
            self.s.take()

    def _note(self, location: str, tok: _Tok) -> None:
        self.spans.append((location, tok.line, tok.col))

    def _reject_reserved(self, tok: _Tok) -> None:
        if tok.text in RESERVED_WORDS:
            raise self.s.error(f"{tok.text!r} is a reserved word", tok)

    # -- phase B: resolution ---------------------------------------------------

    def _build(
        self,
        relations: list[_RawRelation],
        constants: list[tuple[str, int, _Tok]],
        pre_span: Optional[_Span],
        raw_tasks: list[_RawTask],
    ) -> tuple[HasSpec, SpecSource]:
        schema = Schema(
            tuple(
                Relation(r.name, r.id_attr or "", tuple(r.num_attrs), tuple(r.fk_attrs))
                for r in relations
            )
        )
        const_values: dict[str, Fraction] = {}
        for name, value, tok in constants:
            if name in const_values:
                raise self.s.error(f"duplicate constant {name}", tok)
            const_values[name] = Fraction(value)

        by_name: dict[str, _RawTask] = {}
        for rt in raw_tasks:
            if rt.name in by_name:
                raise self.s.error(f"duplicate task {rt.name}", rt.tok)
            by_name[rt.name] = rt
        envs = {
            rt.name: {v: sort for v, sort, _ in rt.decls} for rt in raw_tasks
        }
        for rt in raw_tasks:
            if len(envs[rt.name]) != len(rt.decls):
                seen: set[str] = set()
                for v, _, tok in rt.decls:
                    if v in seen:
                        raise self.s.error(
                            f"variable {v} declared twice in task {rt.name}", tok
                        )
                    seen.add(v)

        # Root inference and parent links.
        parent_claims: dict[str, tuple[str, _RawChild]] = {}
        for rt in raw_tasks:
            for rc in rt.children:
                if rc.name not in by_name:
                    raise self.s.error(f"unknown child task {rc.name}", rc.tok)
                if rc.name in parent_claims:
                    raise self.s.error(
                        f"task {rc.name} is a child of both "
                        f"{parent_claims[rc.name][0]} and {rt.name}",
                        rc.tok,
                    )
                parent_claims[rc.name] = (rt.name, rc)
        roots = [rt.name for rt in raw_tasks if rt.name not in parent_claims]
        if len(roots) != 1:
            raise ParseError(
                "specification must have exactly one root task"
                + (f"; candidates: {', '.join(roots)}" if roots else ""),
                1,
                1,
                self.source,
            )
        root = roots[0]

        relmap = {r.name: r for r in schema.relations}
        rel_table = relmap

        def cond_ctx(task: str) -> _CondCtx:
            return _CondCtx(envs[task], const_values, rel_table, {})

        def parse_span(span: Optional[_Span], task: str) -> Cond:
            if span is None:
                return TRUE
            sub = _window(self.toks, span[0], span[1], self.source)
            return _CondParser(sub, cond_ctx(task)).parse()

        tasks: list[Task] = []
        closing: dict[str, Cond] = {}
        links: dict[str, list[ChildLink]] = {rt.name: [] for rt in raw_tasks}
        for rt in raw_tasks:
            for rc in rt.children:
                opening = parse_span(rc.open_pre, rt.name)
                closing[rc.name] = parse_span(rc.close_pre, rc.name)
                links[rt.name].append(
                    ChildLink(
                        rc.name,
                        opening,
                        tuple((cv, pv) for cv, pv, _ in (rc.f_in or [])),
                        tuple((cv, pv) for cv, pv, _ in (rc.f_out or [])),
                    )
                )

        for rt in raw_tasks:
            services = []
            for rs in rt.services:
                delta: tuple[str, ...] = ()
                if rs.delta:
                    signs = []
                    for sign, set_name, tok in rs.delta:
                        if rt.set_name is None:
                            raise self.s.error(
                                f"task {rt.name} has no artifact set", tok
                            )
                        if set_name != rt.set_name:
                            raise self.s.error(
                                f"unknown artifact set {set_name} "
                                f"(task {rt.name} owns {rt.set_name})",
                                tok,
                            )
                        if sign in signs:
                            raise self.s.error(f"duplicate '{sign}' update", tok)
                        signs.append(sign)
                    delta = tuple(s for s in ("+", "-") if s in signs)
                services.append(
                    InternalService(
                        rs.name,
                        parse_span(rs.pre, rt.name),
                        parse_span(rs.post, rt.name),
                        delta,
                    )
                )
            tasks.append(
                Task(
                    name=rt.name,
                    id_vars=tuple(v for v, s, _ in rt.decls if s is Sort.ID),
                    num_vars=tuple(v for v, s, _ in rt.decls if s is Sort.REAL),
                    input_vars=tuple(v for v, _ in rt.inputs),
                    set_relation=rt.set_name,
                    set_vars=tuple(rt.set_vars),
                    services=tuple(services),
                    closing_pre=FALSE if rt.name == root else closing.get(rt.name, TRUE),
                    children=tuple(links[rt.name]),
                )
            )

        # Global precondition resolves over the root task's input variables.
        root_raw = by_name[root]
        pre_env = {
            v: envs[root][v]
            for v, _ in root_raw.inputs
            if v in envs[root]
        }
        global_pre = TRUE
        if pre_span is not None:
            sub = _window(self.toks, pre_span[0], pre_span[1], self.source)
            global_pre = _CondParser(
                sub, _CondCtx(pre_env, const_values, rel_table, {})
            ).parse()

        spec = HasSpec(
            schema=schema,
            tasks=tuple(tasks),
            root=root,
            global_pre=global_pre,
            constants=tuple((n, v) for n, v, _ in constants),
        )
        return spec, SpecSource(self.text, self.source, tuple(self.spans))


def parse_spec(text: str, *, source: str = "<spec>") -> HasSpec:
    spec, _ = _SpecParser(text, source).parse()
    return spec


def parse_spec_source(text: str, *, source: str = "<spec>") -> tuple[HasSpec, SpecSource]:
    return _SpecParser(text, source).parse()


# ---------------------------------------------------------------------------
# Property files
# ---------------------------------------------------------------------------

_UNARY_OPS = {"X": LtlX, "F": LtlF, "G": LtlG}


class _PropertyParser:
    def __init__(self, text: str, spec: HasSpec, source: str) -> None:
        self.text = text
        self.spec = spec
        self.source = source
        self.toks = _lex(text, source)
        self.s = _Stream(self.toks, source)
        self.globals: list[tuple[str, Sort]] = []
        self.sets = {
            t.set_relation: (t.name, tuple(t.sort_of(v) for v in t.set_vars))
            for t in spec.tasks
            if t.set_relation is not None
        }

    def parse(self) -> HltlProperty:
        if self.s.at_name("forall"):
            self.s.take()
            while True:
                ntok = self.s.expect("name", what="a variable name")
                if ntok.text in RESERVED_WORDS:
                    raise self.s.error(f"{ntok.text!r} is a reserved word", ntok)
                for t in self.spec.tasks:
                    if t.has_var(ntok.text):
                        raise self.s.error(
                            f"quantified variable {ntok.text} collides with a "
                            f"variable of task {t.name}",
                            ntok,
                        )
                if any(n == ntok.text for n, _ in self.globals):
                    raise self.s.error(f"duplicate quantified variable {ntok.text}", ntok)
                self.s.expect("op", ":")
                stok = self.s.expect("name", what="'ID' or 'REAL'")
                if stok.text not in ("ID", "REAL"):
                    raise self.s.error(f"expected 'ID' or 'REAL', found {stok.text!r}", stok)
                self.globals.append(
                    (ntok.text, Sort.ID if stok.text == "ID" else Sort.REAL)
                )
                if self.s.at("op", ","):
                    self.s.take()
                    continue
                break
            self.s.expect("op", ";")

        self.s.expect("name", "property")
        root_tok = self.s.expect("name", what="the root task name")
        if root_tok.text != self.spec.root:
            raise self.s.error(
                f"property must be anchored at the root task {self.spec.root}",
                root_tok,
            )
        self.s.expect("op", "{")
        formula = self._formula(self.spec.root)
        self.s.expect("op", "}")
        if not self.s.at("eof"):
            raise self.s.error("unexpected text after the property")
        return HltlProperty(tuple(self.globals), self.spec.root, formula)

    # -- formula grammar -----------------------------------------------------
    # implies < or < and < U/W < unary(not X F G) < atoms

    def _formula(self, task: str) -> Ltl:
        return self._implies(task)

    def _implies(self, task: str) -> Ltl:
        lhs = self._or(task)
        if self.s.at_name("implies"):
            self.s.take()
            return LtlImplies(lhs, self._implies(task))
        return lhs

    def _or(self, task: str) -> Ltl:
        items = [self._and(task)]
        while self.s.at_name("or"):
            self.s.take()
            items.append(self._and(task))
        return items[0] if len(items) == 1 else LtlOr(tuple(items))

    def _and(self, task: str) -> Ltl:
        items = [self._until(task)]
        while self.s.at_name("and"):
            self.s.take()
            items.append(self._until(task))
        return items[0] if len(items) == 1 else LtlAnd(tuple(items))

    def _until(self, task: str) -> Ltl:
        lhs = self._unary(task)
        if self.s.at_name("U") or self.s.at_name("W"):
            op = self.s.take()
            rhs = self._until(task)
            return LtlU(lhs, rhs) if op.text == "U" else LtlW(lhs, rhs)
        return lhs

    def _unary(self, task: str) -> Ltl:
        if self.s.at_name("not"):
            self.s.take()
            return LtlNot(self._unary(task))
        t = self.s.peek()
        if t.kind == "name" and t.text in _UNARY_OPS:
            self.s.take()
            return _UNARY_OPS[t.text](self._unary(task))
        return self._prim(task)

    def _prim(self, task: str) -> Ltl:
        t = self.s.peek()
        if t.kind == "name":
            if t.text == "true":
                self.s.take()
                return LTL_TRUE
            if t.text == "false":
                self.s.take()
                return LTL_FALSE
            if t.text == "opened":
                self.s.take()
                return LtlAtom(ServiceAtom(Obs.OPEN_SELF))
            if t.text == "closed":
                self.s.take()
                return LtlAtom(ServiceAtom(Obs.CLOSE_SELF))
            if t.text in ("svc", "open", "close") and self.s.peek(1).text == "(":
                kind_tok = self.s.take()
                self.s.expect("op", "(")
                ntok = self.s.expect("name", what="a name")
                self.s.expect("op", ")")
                return LtlAtom(self._service_atom(task, kind_tok.text, ntok))
        if t.kind == "op" and t.text == "(":
            self.s.take()
            inner = self._formula(task)
            self.s.expect("op", ")")
            return inner
        if t.kind == "op" and t.text == "{":
            return LtlAtom(CondAtom(self._brace_cond(task)))
        if t.kind == "op" and t.text == "[":
            return LtlAtom(self._child_formula(task))
        raise self.s.error(f"expected a formula, found {self.s._show(t)}")

    def _service_atom(self, task: str, kind: str, ntok: _Tok) -> ServiceAtom:
        t = self.spec.task(task)
        if kind == "svc":
            if not any(s.name == ntok.text for s in t.services):
                raise self.s.error(
                    f"task {task} has no internal service {ntok.text}", ntok
                )
            return ServiceAtom(Obs.INTERNAL, ntok.text)
        if not any(link.child == ntok.text for link in t.children):
            raise self.s.error(f"task {ntok.text} is not a child of {task}", ntok)
        return ServiceAtom(
            Obs.OPEN_CHILD if kind == "open" else Obs.CLOSE_CHILD, ntok.text
        )

    def _brace_cond(self, task: str) -> Cond:
        open_tok = self.s.take()  # '{'
        start = self.s.i
        while not (self.s.at("op", "}") or self.s.at("eof")):
            self.s.take()
        if self.s.at("eof"):
            raise self.s.error("missing '}' after condition", open_tok)
        end = self.s.i
        self.s.take()
        if end == start:
            raise self.s.error("empty condition", open_tok)
        t = self.spec.task(task)
        sorts = {v: t.sort_of(v) for v in t.all_vars()}
        sorts.update(dict(self.globals))
        consts = {n: Fraction(v) for n, v in self.spec.constants}
        relmap = {r.name: r for r in self.spec.schema.relations}
        ctx = _CondCtx(
            sorts,
            consts,
            relmap,
            self.sets,
            frozenset(n for n, _ in self.globals),
        )
        # Indices are relative to the *current* stream, which may itself be a
        # window (inside a child formula).
        sub = _window(self.s.toks, start, end, self.source)
        return _CondParser(sub, ctx).parse()

    def _child_formula(self, task: str) -> ChildFormula:
        open_tok = self.s.take()  # '['
        start = self.s.i
        depth = 0
        while True:
            t = self.s.peek()
            if t.kind == "eof":
                raise self.s.error("missing ']' in child formula", open_tok)
            if t.kind == "op" and t.text == "[":
                depth += 1
            elif t.kind == "op" and t.text == "]":
                if depth == 0:
                    break
                depth -= 1
            self.s.take()
        end = self.s.i
        self.s.take()  # ']'
        ntok = self.s.expect("name", what="a child task name")
        parent = self.spec.task(task)
        if not any(link.child == ntok.text for link in parent.children):
            raise self.s.error(f"task {ntok.text} is not a child of {task}", ntok)
        inner_parser = _PropertyParser.__new__(_PropertyParser)
        inner_parser.text = self.text
        inner_parser.spec = self.spec
        inner_parser.source = self.source
        inner_parser.s = _window(self.s.toks, start, end, self.source)
        inner_parser.toks = inner_parser.s.toks
        inner_parser.globals = self.globals
        inner_parser.sets = self.sets
        formula = inner_parser._formula(ntok.text)
        if not inner_parser.s.at("eof"):
            raise inner_parser.s.error(
                f"unexpected {self.s._show(inner_parser.s.peek())} in child formula"
            )
        return ChildFormula(ntok.text, formula)


def parse_property(text: str, spec: HasSpec, *, source: str = "<property>") -> HltlProperty:
    return _PropertyParser(text, spec, source).parse()


def parse_property_source(
    text: str, spec: HasSpec, *, source: str = "<property>"
) -> tuple[HltlProperty, PropertySource]:
    return _PropertyParser(text, spec, source).parse(), PropertySource(text, source)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

# condition precedence levels used by the renderer
_P_IMPLIES, _P_OR, _P_AND, _P_NOT, _P_ATOM = 1, 2, 3, 4, 5


def _fmt_num(value: Fraction) -> str:
    return str(Num(value))


def _render_side(entries: list[tuple[Fraction, Optional[str]]]) -> str:
    """Render one side of a comparison from (coefficient, variable) entries;
    a ``None`` variable is the constant part.  All entries except possibly
    the constant have positive coefficients."""

    if not entries:
        return "0"
    parts: list[str] = []
    for coeff, var in entries:
        if var is None:
            text = _fmt_num(abs(coeff))
        elif coeff == 1:
            text = var
        else:
            text = f"{_fmt_num(abs(coeff))}*{var}"
        if not parts:
            parts.append(f"-{text}" if coeff < 0 else text)
        else:
            parts.append(f"- {text}" if coeff < 0 else f"+ {text}")
    return " ".join(parts)


def _render_lincmp(op: CmpOp, expr: LinExpr) -> str:
    lhs = [(c, v) for v, c in expr.terms if c > 0]
    rhs = [(-c, v) for v, c in expr.terms if c < 0]
    if -expr.const != 0:
        rhs.append((-expr.const, None))
    return f"{_render_side(lhs)} {op.value} {_render_side(rhs)}"


def render_condition(
    cond: Cond, *, set_names: Optional[Mapping[str, str]] = None
) -> str:
    """Canonical text for a condition; ``set_names`` maps owning task names
    to artifact set names (needed only when set atoms occur)."""

    return _render_cond(cond, 0, set_names or {})


def _render_cond(cond: Cond, prec: int, set_names: Mapping[str, str]) -> str:
    def wrap(text: str, own: int) -> str:
        return f"({text})" if own < prec else text

    if isinstance(cond, BoolCond):
        return "true" if cond.value else "false"
    if isinstance(cond, Eq):
        return f"{cond.left} = {cond.right}"
    if isinstance(cond, LinCmp):
        return _render_lincmp(cond.op, cond.expr)
    if isinstance(cond, RelAtom):
        args = ", ".join(str(t) for t in cond.args)
        return f"{cond.rel}({args})"
    if isinstance(cond, SetAtom):
        name = set_names.get(cond.task)
        if name is None:
            raise ValueError(f"no artifact set name known for task {cond.task}")
        args = ", ".join(str(t) for t in cond.args)
        return f"{name}({args})"
    if isinstance(cond, Not):
        if isinstance(cond.body, Eq):
            return f"{cond.body.left} != {cond.body.right}"
        return wrap(f"not {_render_cond(cond.body, _P_NOT, set_names)}", _P_NOT)
    if isinstance(cond, And):
        if not cond.items:
            return "true"
        if len(cond.items) == 1:
            return _render_cond(cond.items[0], prec, set_names)
        body = " and ".join(_render_cond(c, _P_AND + 1, set_names) for c in cond.items)
        return wrap(body, _P_AND)
    if isinstance(cond, Or):
        if not cond.items:
            return "false"
        if len(cond.items) == 1:
            return _render_cond(cond.items[0], prec, set_names)
        body = " or ".join(_render_cond(c, _P_OR + 1, set_names) for c in cond.items)
        return wrap(body, _P_OR)
    if isinstance(cond, Implies):
        lhs = _render_cond(cond.lhs, _P_IMPLIES + 1, set_names)
        rhs = _render_cond(cond.rhs, _P_IMPLIES, set_names)
        return wrap(f"{lhs} implies {rhs}", _P_IMPLIES)
    if isinstance(cond, Exists):
        binders = ", ".join(
            f"{n}: {'ID' if s is Sort.ID else 'REAL'}" for n, s in cond.bound
        )
        body = _render_cond(cond.body, _P_IMPLIES, set_names)
        return wrap(f"exists {binders} . {body}", _P_IMPLIES)
    raise TypeError(f"not a condition: {cond!r}")


def render_spec(spec: HasSpec) -> str:
    """Canonical specification text; ``parse_spec(render_spec(s)) == s``."""

    out: list[str] = []
    out.append("schema {")
    for rel in spec.schema.relations:
        out.append(f"  relation {rel.name} {{")
        out.append(f"    {rel.id_attr}: ID;")
        for attr in rel.num_attrs:
            out.append(f"    {attr}: REAL;")
        for attr, target in rel.fk_attrs:
            out.append(f"    {attr}: -> {target};")
        out.append("  }")
    out.append("}")

    if spec.constants:
        out.append("")
        out.append("constants {")
        for name, value in spec.constants:
            out.append(f"  {name} = {value};")
        out.append("}")

    if spec.global_pre != TRUE:
        out.append("")
        out.append(f"precondition: {render_condition(spec.global_pre)};")

    for task in spec.tasks:
        out.append("")
        out.append(f"task {task.name} {{")
        decls = [f"{v}: ID" for v in task.id_vars]
        decls += [f"{v}: REAL" for v in task.num_vars]
        if decls:
            out.append(f"  vars {', '.join(decls)};")
        if task.input_vars:
            out.append(f"  input {', '.join(task.input_vars)};")
        if task.set_relation is not None:
            out.append(f"  set {task.set_relation}({', '.join(task.set_vars)});")
        for svc in task.services:
            out.append(f"  service {svc.name} {{")
            out.append(f"    pre: {render_condition(svc.pre)};")
            out.append(f"    post: {render_condition(svc.post)};")
            if svc.delta:
                update = ", ".join(f"{sign}{task.set_relation}" for sign in svc.delta)
                out.append(f"    update: {update};")
            out.append("  }")
        for link in task.children:
            child = spec.task(link.child)
            out.append(f"  child {link.child} {{")
            out.append(f"    open-pre: {render_condition(link.opening_pre)};")
            if link.f_in:
                pairs = ", ".join(f"{cv} <- {pv}" for cv, pv in link.f_in)
                out.append(f"    in: {pairs};")
            out.append(f"    close-pre: {render_condition(child.closing_pre)};")
            if link.f_out:
                pairs = ", ".join(f"{cv} -> {pv}" for cv, pv in link.f_out)
                out.append(f"    out: {pairs};")
            out.append("  }")
        out.append("}")
    out.append("")
    return "\n".join(out)


# formula precedence levels
_F_IMPLIES, _F_OR, _F_AND, _F_UNTIL, _F_UNARY, _F_ATOM = 1, 2, 3, 4, 5, 6


def render_property(prop: HltlProperty, spec: HasSpec) -> str:
    """Canonical property text; round-trips through :func:`parse_property`."""

    set_names = {
        t.name: t.set_relation for t in spec.tasks if t.set_relation is not None
    }
    out: list[str] = []
    if prop.globals_:
        binders = ", ".join(
            f"{n}: {'ID' if s is Sort.ID else 'REAL'}" for n, s in prop.globals_
        )
        out.append(f"forall {binders};")
        out.append("")
    out.append(f"property {prop.root_task} {{")
    out.append("  " + _render_formula(prop.formula, 0, set_names))
    out.append("}")
    out.append("")
    return "\n".join(out)


def _render_formula(f: Ltl, prec: int, set_names: Mapping[str, str]) -> str:
    def wrap(text: str, own: int) -> str:
        return f"({text})" if own < prec else text

    if isinstance(f, LtlAtom):
        a = f.atom
        if isinstance(a, CondAtom):
            return "{" + _render_cond(a.cond, 0, set_names) + "}"
        if isinstance(a, ServiceAtom):
            if a.kind is Obs.OPEN_SELF:
                return "opened"
            if a.kind is Obs.CLOSE_SELF:
                return "closed"
            return f"{a.kind.value}({a.name})"
        if isinstance(a, ChildFormula):
            inner = _render_formula(a.formula, 0, set_names)
            return f"[ {inner} ]{a.child}"
        raise TypeError(f"not an atom: {a!r}")
    if isinstance(f, LtlNot):
        return wrap(f"not {_render_formula(f.body, _F_UNARY, set_names)}", _F_UNARY)
    if isinstance(f, (LtlX, LtlF, LtlG)):
        op = {LtlX: "X", LtlF: "F", LtlG: "G"}[type(f)]
        return wrap(f"{op} {_render_formula(f.body, _F_UNARY, set_names)}", _F_UNARY)
    if isinstance(f, (LtlU, LtlW)):
        op = "U" if isinstance(f, LtlU) else "W"
        lhs = _render_formula(f.lhs, _F_UNARY, set_names)
        rhs = _render_formula(f.rhs, _F_UNTIL, set_names)
        return wrap(f"{lhs} {op} {rhs}", _F_UNTIL)
    if isinstance(f, LtlAnd):
        if not f.items:
            return "true"
        if len(f.items) == 1:
            return _render_formula(f.items[0], prec, set_names)
        body = " and ".join(_render_formula(x, _F_AND + 1, set_names) for x in f.items)
        return wrap(body, _F_AND)
    if isinstance(f, LtlOr):
        if not f.items:
            return "false"
        if len(f.items) == 1:
            return _render_formula(f.items[0], prec, set_names)
        body = " or ".join(_render_formula(x, _F_OR + 1, set_names) for x in f.items)
        return wrap(body, _F_OR)
    if isinstance(f, LtlImplies):
        lhs = _render_formula(f.lhs, _F_IMPLIES + 1, set_names)
        rhs = _render_formula(f.rhs, _F_IMPLIES, set_names)
        return wrap(f"{lhs} implies {rhs}", _F_IMPLIES)
    raise TypeError(f"not a temporal formula: {f!r}")


# ---------------------------------------------------------------------------
# Database files
# ---------------------------------------------------------------------------


def load_database(text: str, schema: Schema, *, source: str = "<db>") -> Database:
    """Load a JSON database: an object mapping relation names to lists of
    attribute-keyed row objects.  Identifier cells are strings; numeric cells
    are integers, decimals, or ``"p/q"`` fraction strings."""

    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e}", e.lineno, e.colno, source) from None
    if not isinstance(data, dict):
        raise ParseError("database must be a JSON object", source=source)

    rows: dict[str, tuple[tuple[Value, ...], ...]] = {}
    for rel_name, rel_rows in data.items():
        if not schema.has_relation(rel_name):
            raise ParseError(f"unknown relation {rel_name}", source=source)
        rel = schema.relation(rel_name)
        if not isinstance(rel_rows, list):
            raise ParseError(f"{rel_name}: rows must form a JSON array", source=source)
        names = rel.attr_names()
        fk_of = dict(rel.fk_attrs)
        built: list[tuple[Value, ...]] = []
        for k, row in enumerate(rel_rows):
            where = f"{rel_name}[{k}]"
            if not isinstance(row, dict):
                raise ParseError(f"{where}: each row must be a JSON object", source=source)
            if sorted(row) != sorted(names):
                raise ParseError(
                    f"{where}: attributes must be exactly {', '.join(names)}",
                    source=source,
                )
            cells: list[Value] = []
            for attr in names:
                raw = row[attr]
                domain = rel_name if attr == rel.id_attr else fk_of.get(attr)
                if domain is not None:
                    if not isinstance(raw, str) or not raw:
                        raise ParseError(
                            f"{where}.{attr}: identifier cells are non-empty strings",
                            source=source,
                        )
                    cells.append(IdVal(domain, raw))
                else:
                    cells.append(_num_cell(raw, f"{where}.{attr}", source))
            built.append(tuple(cells))
        rows[rel_name] = tuple(built)
    for rel in schema.relations:
        rows.setdefault(rel.name, ())

    db = Database(rows)
    problems = db.check(schema)
    if problems:
        raise ParseError("; ".join(problems), source=source)
    return db


def _num_cell(raw: object, where: str, source: str) -> Fraction:
    if isinstance(raw, bool):
        raise ParseError(f"{where}: numeric cells cannot be booleans", source=source)
    if isinstance(raw, int):
        return Fraction(raw)
    if isinstance(raw, float):
        return Fraction(str(raw))
    if isinstance(raw, str):
        try:
            return Fraction(raw)
        except (ValueError, ZeroDivisionError):
            pass
    raise ParseError(f"{where}: not a number: {raw!r}", source=source)


def dump_database(db: Database, schema: Schema) -> str:
    """Serialize a database to the JSON format accepted by
    :func:`load_database` (identifier cells keep only their token)."""

    data: dict[str, list[dict[str, object]]] = {}
    for rel in schema.relations:
        rel_rows = db.rows_of(rel.name)
        if not rel_rows:
            continue
        names = rel.attr_names()
        out_rows: list[dict[str, object]] = []
        for row in rel_rows:
            obj: dict[str, object] = {}
            for attr, cell in zip(names, row):
                if isinstance(cell, IdVal):
                    obj[attr] = cell.token
                elif isinstance(cell, Fraction):
                    obj[attr] = (
                        int(cell) if cell.denominator == 1 else f"{cell.numerator}/{cell.denominator}"
                    )
                else:
                    raise ValueError(f"{rel.name}.{attr}: cannot serialize {cell!r}")
            out_rows.append(obj)
        data[rel.name] = out_rows
    return json.dumps(data, indent=2) + "\n"
