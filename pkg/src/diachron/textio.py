"""Concrete syntax: parsing and printing of ontologies, data, and queries.

One statement per line, ``#`` starts a comment.  Ontology lines read
``LHS <= RHS`` with constructors ``bot``, ``exists r``, ``inv(r)``, ``&``,
``P[...]`` (sometime in the past) and ``F[...]`` (sometime in the future).
Data lines read ``Name(ind, 3)`` or ``Name(ind, ind, 3)``.  Query lines
read ``q(?x, ?t) :- Atom(?x, ?t), ?t < ?s``; a leading ``union:`` line
introduces one query per following line.

Concept names and role names share one lexical space, so each ontology
line's sort is inferred: structural cues first (``exists`` forces a
concept line, a top-level ``inv`` forces a role line), then names whose
sort is already known from other lines, then an initial-letter vote
(capitalized names read as concepts, lowercase as roles).  A line may be
tagged ``concept:`` or ``role:`` to override; the printer emits the tag
exactly when a line would otherwise be misread.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

from .core import (
    ABox,
    Bot,
    ConceptAnd,
    ConceptDiamond,
    ConceptExpr,
    ConceptFact,
    ConceptInclusion,
    ConceptName,
    ExistsRole,
    Inclusion,
    RoleAnd,
    RoleDiamond,
    RoleExpr,
    RoleFact,
    RoleInclusion,
    RoleRef,
    TBox,
    TemporalOp,
    basic_exists,
)
from .queries import (
    CQ,
    UCQ,
    Atom,
    ConceptAtom,
    EqAtom,
    IndConst,
    LessAtom,
    RoleAtom,
    SortConflict,
    Term,
    TimeConst,
    Var,
    atom_key,
    atom_terms,
    var_sorts,
)


class ParseErrorKind(Enum):
    SYNTAX = "Syntax"
    DIAMOND_ON_RHS = "DiamondOnRhs"
    NEXT_TIME_OPERATOR = "NextTimeOperator"
    MIXED_AXIOM = "MixedAxiom"
    ARITY_MISMATCH = "ArityMismatch"
    BAD_TIMESTAMP = "BadTimestamp"


@dataclass(frozen=True, slots=True)
class SourceSpan:
    """1-based line and column of an offending source region."""

    line: int
    column: int
    length: int


class ParseError(Exception):
    def __init__(self, kind: ParseErrorKind, span: SourceSpan, message: str):
        super().__init__(f"line {span.line} col {span.column}: {message}")
        self.kind = kind
        self.span = span
        self.message = message


# ---------------------------------------------------------------------------
# Tokens

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#.*)
  | (?P<int>-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|:-|[&,()\[\]<=:?])
""",
    re.VERBOSE,
)

_RESERVED = {"exists", "inv", "bot"}


@dataclass(frozen=True, slots=True)
class _Tok:
    kind: str  # "int" | "ident" | an operator lexeme | "eol"
    text: str
    span: SourceSpan


def _lex_line(text: str, lineno: int) -> list[_Tok]:
    out: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            span = SourceSpan(lineno, pos + 1, 1)
            raise ParseError(ParseErrorKind.SYNTAX, span, f"unexpected character {text[pos]!r}")
        if m.lastgroup == "comment":
            break
        if m.lastgroup != "ws":
            span = SourceSpan(lineno, m.start() + 1, m.end() - m.start())
            kind = m.lastgroup if m.lastgroup in ("int", "ident") else m.group()
            out.append(_Tok(kind, m.group(), span))
        pos = m.end()
    out.append(_Tok("eol", "", SourceSpan(lineno, len(text) + 1, 1)))
    return out


class _Cursor:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        if t.kind != "eol":
            self.i += 1
        return t

    def expect(self, kind: str, what: str) -> _Tok:
        t = self.cur
        if t.kind != kind:
            raise ParseError(
                ParseErrorKind.SYNTAX, t.span, f"expected {what}, found {t.text or 'end of line'!r}"
            )
        return self.take()

    def at_end(self) -> bool:
        return self.cur.kind == "eol"


# ---------------------------------------------------------------------------
# Untyped ontology expressions (sorts are inferred afterwards)


@dataclass(frozen=True, slots=True)
class _UBot:
    span: SourceSpan


@dataclass(frozen=True, slots=True)
class _UName:
    name: str
    span: SourceSpan


@dataclass(frozen=True, slots=True)
class _UInv:
    name: str
    span: SourceSpan


@dataclass(frozen=True, slots=True)
class _UExists:
    arg: Union[_UName, _UInv]
    span: SourceSpan


@dataclass(frozen=True, slots=True)
class _UAnd:
    left: _UExpr
    right: _UExpr


@dataclass(frozen=True, slots=True)
class _UDia:
    op: TemporalOp
    arg: _UExpr
    span: SourceSpan


_UExpr = Union[_UBot, _UName, _UInv, _UExists, _UAnd, _UDia]


def _parse_uexpr(c: _Cursor) -> _UExpr:
    left = _parse_unary(c)
    while c.cur.kind == "&":
        c.take()
        right = _parse_unary(c)
        left = _UAnd(left, right)
    return left


def _parse_unary(c: _Cursor) -> _UExpr:
    t = c.cur
    if t.kind == "(":
        c.take()
        inner = _parse_uexpr(c)
        c.expect(")", "')'")
        return inner
    if t.kind == "ident":
        if t.text in ("P", "F", "X") and c.toks[c.i + 1].kind == "[":
            c.take()
            c.take()  # the bracket
            if t.text == "X":
                raise ParseError(
                    ParseErrorKind.NEXT_TIME_OPERATOR,
                    t.span,
                    "the next-time operator X[...] is not supported: "
                    "it would ruin first-order rewritability",
                )
            arg = _parse_uexpr(c)
            c.expect("]", "']'")
            op = TemporalOp.SOMETIME_PAST if t.text == "P" else TemporalOp.SOMETIME_FUTURE
            return _UDia(op, arg, t.span)
        if t.text == "bot":
            c.take()
            return _UBot(t.span)
        if t.text == "exists":
            c.take()
            arg = _parse_role_arg(c)
            return _UExists(arg, t.span)
        if t.text == "inv":
            c.take()
            c.expect("(", "'(' after inv")
            name = _expect_name(c)
            c.expect(")", "')'")
            return _UInv(name.text, name.span)
        name = _expect_name(c)
        return _UName(name.text, name.span)
    raise ParseError(
        ParseErrorKind.SYNTAX, t.span, f"expected a concept or role expression, found {t.text or 'end of line'!r}"
    )


def _parse_role_arg(c: _Cursor) -> Union[_UName, _UInv]:
    t = c.cur
    if t.kind == "ident" and t.text == "inv":
        c.take()
        c.expect("(", "'(' after inv")
        name = _expect_name(c)
        c.expect(")", "')'")
        return _UInv(name.text, name.span)
    name = _expect_name(c)
    return _UName(name.text, name.span)


def _expect_name(c: _Cursor) -> _Tok:
    t = c.cur
    if t.kind != "ident":
        raise ParseError(ParseErrorKind.SYNTAX, t.span, f"expected a name, found {t.text or 'end of line'!r}")
    if t.text in _RESERVED:
        raise ParseError(ParseErrorKind.SYNTAX, t.span, f"{t.text!r} is a reserved word")
    if t.text.startswith("_"):
        # Underscore-led identifiers are kept for generated variables, which
        # only ever occur behind a '?' sigil.
        raise ParseError(ParseErrorKind.SYNTAX, t.span, "names may not start with an underscore")
    return c.take()


# ---------------------------------------------------------------------------
# Sort inference


@dataclass
class _ULine:
    lineno: int
    tag: str | None  # "concept" | "role" | None
    lhs: _UExpr
    rhs: _UExpr
    sort: str | None = None
    sort_span: SourceSpan | None = None


def _walk(expr: _UExpr) -> Iterable[_UExpr]:
    yield expr
    match expr:
        case _UAnd(left, right):
            yield from _walk(left)
            yield from _walk(right)
        case _UDia(_, arg, _):
            yield from _walk(arg)
        case _UExists(arg, _):
            yield from _walk(arg)


def _top_names(expr: _UExpr) -> list[_UName]:
    """Names at concept/role positions (not inside exists/inv)."""
    match expr:
        case _UName():
            return [expr]
        case _UAnd(left, right):
            return _top_names(left) + _top_names(right)
        case _UDia(_, arg, _):
            return _top_names(arg)
        case _:
            return []


def _force_line_sort(line: _ULine, sort: str, span: SourceSpan) -> None:
    if line.sort is None:
        line.sort = sort
        line.sort_span = span
    elif line.sort != sort:
        raise ParseError(
            ParseErrorKind.MIXED_AXIOM,
            span,
            "this line mixes concept-sorted and role-sorted constructs; "
            "mixed axioms are not expressible in a rewritable ontology",
        )


def _infer_sorts(lines: list[_ULine]) -> dict[str, str]:
    """Assign each line a sort and return the name-sort table."""
    name_sort: dict[str, str] = {}

    def adopt(name: str, sort: str, span: SourceSpan) -> None:
        old = name_sort.setdefault(name, sort)
        if old != sort:
            raise ParseError(
                ParseErrorKind.MIXED_AXIOM,
                span,
                f"{name!r} is used both as a concept name and as a role name; "
                "mixed axioms are not expressible in a rewritable ontology",
            )

    for line in lines:
        if line.tag is not None:
            _force_line_sort(line, line.tag, SourceSpan(line.lineno, 1, 1))
        for side in (line.lhs, line.rhs):
            for node in _walk(side):
                match node:
                    case _UExists(arg, span):
                        _force_line_sort(line, "concept", span)
                        adopt(arg.name, "role", arg.span)
                    case _UInv(name, span):
                        adopt(name, "role", span)
                    case _:
                        pass
        # A top-level inv() makes the line role-sorted (inside exists it is
        # an argument, handled above).
        for side in (line.lhs, line.rhs):
            if any(isinstance(n, _UInv) for n in _iter_toplevel(side)):
                inv = next(n for n in _iter_toplevel(side) if isinstance(n, _UInv))
                _force_line_sort(line, "role", inv.span)

    # Propagate known name sorts between lines until nothing changes.
    while True:
        changed = False
        for line in lines:
            names = _top_names(line.lhs) + _top_names(line.rhs)
            if line.sort is None:
                for n in names:
                    if n.name in name_sort:
                        _force_line_sort(line, name_sort[n.name], n.span)
                        changed = True
                        break
            if line.sort is not None:
                for n in names:
                    if n.name not in name_sort:
                        adopt(n.name, line.sort, n.span)
                        changed = True
                    elif name_sort[n.name] != line.sort:
                        raise ParseError(
                            ParseErrorKind.MIXED_AXIOM,
                            n.span,
                            f"{n.name!r} is used both as a concept name and as a role name; "
                            "mixed axioms are not expressible in a rewritable ontology",
                        )
        if not changed:
            break

    # Remaining lines carry no structural or propagated evidence: vote by
    # capitalization of the names on the line.
    for line in lines:
        if line.sort is not None:
            continue
        names = _top_names(line.lhs) + _top_names(line.rhs)
        votes = {("concept" if n.name[0].isupper() else "role") for n in names}
        if len(votes) > 1:
            raise ParseError(
                ParseErrorKind.MIXED_AXIOM,
                names[0].span,
                "cannot infer whether this line is about concepts or roles "
                "(mixed axioms are not expressible in a rewritable ontology); "
                "tag it with 'concept:' or 'role:'",
            )
        line.sort = votes.pop() if votes else "concept"
        for n in names:
            adopt(n.name, line.sort, n.span)
    return name_sort


def _iter_toplevel(expr: _UExpr) -> Iterable[_UExpr]:
    """Atoms at conjunct/diamond positions, not descending into exists."""
    match expr:
        case _UAnd(left, right):
            yield from _iter_toplevel(left)
            yield from _iter_toplevel(right)
        case _UDia(_, arg, _):
            yield from _iter_toplevel(arg)
        case _:
            yield expr


# ---------------------------------------------------------------------------
# Building typed inclusions


def _build_concept(expr: _UExpr) -> ConceptExpr:
    match expr:
        case _UBot():
            return Bot()
        case _UName(name, _):
            return ConceptName(name)
        case _UInv(_, span):
            raise ParseError(ParseErrorKind.MIXED_AXIOM, span, "inv(...) cannot appear in a concept; "
                "mixed axioms are not expressible in a rewritable ontology")
        case _UExists(arg, _):
            return basic_exists(_build_roleref(arg))
        case _UAnd(left, right):
            return ConceptAnd(_build_concept(left), _build_concept(right))
        case _UDia(op, arg, _):
            return ConceptDiamond(op, _build_concept(arg))
    raise AssertionError


def _build_roleref(expr: _UExpr) -> RoleRef:
    match expr:
        case _UName(name, _):
            return RoleRef(name)
        case _UInv(name, _):
            return RoleRef(name, inverted=True)
        case _UBot():
            return RoleRef.bot()
    raise AssertionError


def _build_role(expr: _UExpr) -> RoleExpr:
    match expr:
        case _UBot() | _UName() | _UInv():
            return _build_roleref(expr)
        case _UExists(_, span):
            raise ParseError(ParseErrorKind.MIXED_AXIOM, span, "exists cannot appear in a role; "
                "mixed axioms are not expressible in a rewritable ontology")
        case _UAnd(left, right):
            return RoleAnd(_build_role(left), _build_role(right))
        case _UDia(op, arg, _):
            return RoleDiamond(op, _build_role(arg))
    raise AssertionError


def _check_rhs_shape(expr: _UExpr, lineno: int) -> None:
    match expr:
        case _UDia(_, _, span):
            raise ParseError(
                ParseErrorKind.DIAMOND_ON_RHS,
                span,
                "a diamond on the right of <= would ruin first-order rewritability",
            )
        case _UAnd(_, _):
            raise ParseError(
                ParseErrorKind.SYNTAX,
                SourceSpan(lineno, 1, 1),
                "the right-hand side of <= must be a single basic concept or role",
            )
        case _:
            return


def parse_tbox(text: str) -> TBox:
    lines: list[_ULine] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _lex_line(raw, lineno)
        if toks[0].kind == "eol":
            continue
        c = _Cursor(toks)
        tag = None
        if (
            c.cur.kind == "ident"
            and c.cur.text in ("concept", "role")
            and c.toks[c.i + 1].kind == ":"
        ):
            tag = c.take().text
            c.take()
        lhs = _parse_uexpr(c)
        c.expect("<=", "'<='")
        rhs = _parse_uexpr(c)
        if not c.at_end():
            raise ParseError(
                ParseErrorKind.SYNTAX, c.cur.span, f"unexpected {c.cur.text!r} after the inclusion"
            )
        _check_rhs_shape(rhs, lineno)
        lines.append(_ULine(lineno, tag, lhs, rhs))

    _infer_sorts(lines)

    inclusions: list[Inclusion] = []
    for line in lines:
        if line.sort == "concept":
            rhs_concept = _build_concept(line.rhs)
            if isinstance(rhs_concept, (ConceptAnd, ConceptDiamond)):
                raise AssertionError("shape was checked above")
            inclusions.append(ConceptInclusion(_build_concept(line.lhs), rhs_concept))
        else:
            rhs_role = _build_role(line.rhs)
            if isinstance(rhs_role, (RoleAnd, RoleDiamond)):
                raise AssertionError("shape was checked above")
            inclusions.append(RoleInclusion(_build_role(line.lhs), rhs_role))
    return TBox(frozenset(inclusions))


# ---------------------------------------------------------------------------
# Data


def parse_abox(text: str) -> ABox:
    concept_facts: list[ConceptFact] = []
    role_facts: list[RoleFact] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _lex_line(raw, lineno)
        if toks[0].kind == "eol":
            continue
        c = _Cursor(toks)
        name = _expect_name(c)
        c.expect("(", "'('")
        args: list[_Tok] = []
        while True:
            t = c.cur
            if t.kind not in ("ident", "int"):
                raise ParseError(
                    ParseErrorKind.SYNTAX, t.span, f"expected an argument, found {t.text or 'end of line'!r}"
                )
            args.append(c.take())
            if c.cur.kind == ",":
                c.take()
                continue
            break
        paren = c.expect(")", "')' or ','")
        if not c.at_end():
            raise ParseError(ParseErrorKind.SYNTAX, c.cur.span, f"unexpected {c.cur.text!r} after the fact")
        if len(args) not in (2, 3):
            raise ParseError(
                ParseErrorKind.ARITY_MISMATCH,
                paren.span,
                f"facts take 2 or 3 arguments, found {len(args)}",
            )
        *inds, stamp = args
        for a in inds:
            if a.kind != "ident":
                raise ParseError(
                    ParseErrorKind.SYNTAX, a.span, "expected an individual name"
                )
        if stamp.kind != "int":
            raise ParseError(
                ParseErrorKind.BAD_TIMESTAMP,
                stamp.span,
                f"the last argument must be an integer timestamp, found {stamp.text!r}",
            )
        if len(args) == 2:
            concept_facts.append(ConceptFact(name.text, inds[0].text, int(stamp.text)))
        else:
            role_facts.append(RoleFact(name.text, inds[0].text, inds[1].text, int(stamp.text)))
    return ABox(frozenset(concept_facts), frozenset(role_facts))


# ---------------------------------------------------------------------------
# Queries


def _parse_term(c: _Cursor) -> tuple[Term, SourceSpan]:
    t = c.cur
    if t.kind == "?":
        c.take()
        name = c.expect("ident", "a variable name")
        return Var(name.text), name.span
    if t.kind == "int":
        c.take()
        return TimeConst(int(t.text)), t.span
    if t.kind == "ident":
        name = _expect_name(c)
        return IndConst(name.text), name.span
    raise ParseError(ParseErrorKind.SYNTAX, t.span, f"expected a term, found {t.text or 'end of line'!r}")


def _require_temporal(term: Term, span: SourceSpan) -> None:
    if isinstance(term, IndConst):
        raise ParseError(
            ParseErrorKind.BAD_TIMESTAMP,
            span,
            f"{term.name!r} appears in a timestamp position",
        )


def _parse_query_line(toks: list[_Tok]) -> CQ:
    c = _Cursor(toks)
    head = _expect_name(c)
    c.expect("(", "'('")
    answer_vars: list[Var] = []
    if c.cur.kind != ")":
        while True:
            c.expect("?", "'?' starting an answer variable")
            v = c.expect("ident", "a variable name")
            answer_vars.append(Var(v.text))
            if c.cur.kind == ",":
                c.take()
                continue
            break
    c.expect(")", "')'")
    c.expect(":-", "':-'")
    atoms: list[Atom] = []
    spans: list[SourceSpan] = []
    while True:
        atom, span = _parse_atom(c)
        atoms.append(atom)
        spans.append(span)
        if c.cur.kind == ",":
            c.take()
            continue
        break
    if not c.at_end():
        raise ParseError(ParseErrorKind.SYNTAX, c.cur.span, f"unexpected {c.cur.text!r} after the query body")
    try:
        var_sorts(atoms)
    except SortConflict as e:
        raise ParseError(ParseErrorKind.SYNTAX, spans[0], str(e)) from None
    body_vars = {v for a in atoms for v in _atom_var_names(a)}
    for v in answer_vars:
        if v.name not in body_vars:
            raise ParseError(
                ParseErrorKind.SYNTAX,
                head.span,
                f"answer variable ?{v.name} does not occur in the body",
            )
    return CQ(head.text, tuple(answer_vars), frozenset(atoms))


def _atom_var_names(a: Atom) -> set[str]:
    return {t.name for t in atom_terms(a) if isinstance(t, Var)}


def _parse_atom(c: _Cursor) -> tuple[Atom, SourceSpan]:
    t = c.cur
    if t.kind == "ident" and c.toks[c.i + 1].kind == "(":
        name = _expect_name(c)
        c.expect("(", "'('")
        terms: list[tuple[Term, SourceSpan]] = []
        while True:
            terms.append(_parse_term(c))
            if c.cur.kind == ",":
                c.take()
                continue
            break
        paren = c.expect(")", "')' or ','")
        if len(terms) == 2:
            (ind, _), (time, tspan) = terms
            _require_temporal(time, tspan)
            return ConceptAtom(name.text, ind, time), name.span
        if len(terms) == 3:
            (subj, _), (obj, _), (time, tspan) = terms
            _require_temporal(time, tspan)
            return RoleAtom(name.text, subj, obj, time), name.span
        raise ParseError(
            ParseErrorKind.ARITY_MISMATCH,
            paren.span,
            f"atoms take 2 or 3 arguments, found {len(terms)}",
        )
    left, lspan = _parse_term(c)
    op = c.cur
    if op.kind not in ("<", "="):
        raise ParseError(
            ParseErrorKind.SYNTAX, op.span, f"expected '<' or '=' in an order atom, found {op.text or 'end of line'!r}"
        )
    c.take()
    right, rspan = _parse_term(c)
    if op.kind == "<":
        _require_temporal(left, lspan)
        _require_temporal(right, rspan)
        return LessAtom(left, right), lspan
    # equality is sort-polymorphic (individuals or timestamps), but a
    # mixed pair can never hold
    if isinstance(left, IndConst) and isinstance(right, TimeConst):
        _require_temporal(left, lspan)
    if isinstance(left, TimeConst) and isinstance(right, IndConst):
        _require_temporal(right, rspan)
    return EqAtom(left, right), lspan


def parse_query(text: str) -> CQ:
    body_lines = [
        (lineno, raw)
        for lineno, raw in enumerate(text.splitlines(), start=1)
        if _lex_line(raw, lineno)[0].kind != "eol"
    ]
    if not body_lines:
        raise ParseError(ParseErrorKind.SYNTAX, SourceSpan(1, 1, 1), "empty query")
    if len(body_lines) > 1:
        raise ParseError(
            ParseErrorKind.SYNTAX,
            SourceSpan(body_lines[1][0], 1, 1),
            "expected a single query line (use 'union:' for unions)",
        )
    lineno, raw = body_lines[0]
    return _parse_query_line(_lex_line(raw, lineno))


def parse_ucq(text: str) -> UCQ:
    lines = [
        (lineno, raw)
        for lineno, raw in enumerate(text.splitlines(), start=1)
        if _lex_line(raw, lineno)[0].kind != "eol"
    ]
    if not lines:
        raise ParseError(ParseErrorKind.SYNTAX, SourceSpan(1, 1, 1), "empty query")
    first_toks = _lex_line(lines[0][1], lines[0][0])
    if first_toks[0].kind == "ident" and first_toks[0].text == "union" and first_toks[1].kind == ":":
        lines = lines[1:]
        if not lines:
            raise ParseError(ParseErrorKind.SYNTAX, first_toks[0].span, "union: with no disjuncts")
    cqs = [_parse_query_line(_lex_line(raw, lineno)) for lineno, raw in lines]
    head = (cqs[0].name, cqs[0].answer_vars)
    for q, (lineno, _) in zip(cqs, lines):
        if (q.name, q.answer_vars) != head:
            raise ParseError(
                ParseErrorKind.SYNTAX,
                SourceSpan(lineno, 1, 1),
                "all disjuncts of a union must share the same head",
            )
    return UCQ.of(cqs[0].name, cqs[0].answer_vars, [q.atoms for q in cqs])


# ---------------------------------------------------------------------------
# Printers


def _render_roleref(r: RoleRef) -> str:
    return r.render()


def _render_concept(expr: ConceptExpr) -> str:
    match expr:
        case Bot():
            return "bot"
        case ConceptName(name):
            return name
        case ExistsRole(role):
            return f"exists {_render_roleref(role)}"
        case ConceptDiamond(op, arg):
            return f"{op.value}[{_render_concept(arg)}]"
        case ConceptAnd(left, right):
            # Right-nested conjunctions need parentheses so the structure
            # survives a reparse (the parser is left-associative).
            rhs = _render_concept(right)
            if isinstance(right, ConceptAnd):
                rhs = f"({rhs})"
            return f"{_render_concept(left)} & {rhs}"
    raise TypeError(f"not a concept: {expr!r}")


def _render_role(expr: RoleExpr) -> str:
    match expr:
        case RoleRef():
            return _render_roleref(expr)
        case RoleDiamond(op, arg):
            return f"{op.value}[{_render_role(arg)}]"
        case RoleAnd(left, right):
            rhs = _render_role(right)
            if isinstance(right, RoleAnd):
                rhs = f"({rhs})"
            return f"{_render_role(left)} & {rhs}"
    raise TypeError(f"not a role: {expr!r}")


def _render_inclusion(inc: Inclusion, tag: bool) -> str:
    if isinstance(inc, ConceptInclusion):
        body = f"{_render_concept(inc.lhs)} <= {_render_concept(inc.rhs)}"
        return f"concept: {body}" if tag else body
    body = f"{_render_role(inc.lhs)} <= {_render_roleref(inc.rhs)}"
    return f"role: {body}" if tag else body


def _typed_top_names(inc: Inclusion) -> list[str]:
    """Concept/role names at top level of an inclusion (not under exists)."""
    names: list[str] = []

    def walk_c(expr: ConceptExpr) -> None:
        match expr:
            case ConceptName(name):
                names.append(name)
            case ConceptAnd(left, right):
                walk_c(left)
                walk_c(right)
            case ConceptDiamond(_, arg):
                walk_c(arg)
            case _:
                pass

    def walk_r(expr: RoleExpr) -> None:
        match expr:
            case RoleRef(name, _, is_bot):
                if not is_bot:
                    names.append(name)
            case RoleAnd(left, right):
                walk_r(left)
                walk_r(right)
            case RoleDiamond(_, arg):
                walk_r(arg)

    if isinstance(inc, ConceptInclusion):
        walk_c(inc.lhs)
        walk_c(inc.rhs)
    else:
        walk_r(inc.lhs)
        walk_r(inc.rhs)
    return names


def _has_structural_cue(inc: Inclusion) -> bool:
    if isinstance(inc, ConceptInclusion):

        def has_exists(expr: ConceptExpr) -> bool:
            match expr:
                case ExistsRole():
                    return True
                case ConceptAnd(left, right):
                    return has_exists(left) or has_exists(right)
                case ConceptDiamond(_, arg):
                    return has_exists(arg)
                case _:
                    return False

        return has_exists(inc.lhs) or has_exists(inc.rhs)

    def has_inv(expr: RoleExpr) -> bool:
        match expr:
            case RoleRef(_, inverted, _):
                return inverted
            case RoleAnd(left, right):
                return has_inv(left) or has_inv(right)
            case RoleDiamond(_, arg):
                return has_inv(arg)
        return False

    return has_inv(inc.lhs) or has_inv(inc.rhs)


def _needs_tag(inc: Inclusion) -> bool:
    """Would this line, read in isolation, be assigned the wrong sort?"""
    if _has_structural_cue(inc):
        return False
    actual = "concept" if isinstance(inc, ConceptInclusion) else "role"
    votes = {("concept" if n[0].isupper() else "role") for n in _typed_top_names(inc)}
    inferred = votes.pop() if len(votes) == 1 else ("concept" if not votes else None)
    return inferred != actual


def print_tbox(tbox: TBox) -> str:
    """Render inclusions, tagging lines the sort inference would misread."""
    incs = tbox.sorted()
    lines = [_render_inclusion(inc, tag=_needs_tag(inc)) for inc in incs]
    try:
        if parse_tbox("\n".join(lines)) == tbox:
            return "\n".join(lines) + ("\n" if lines else "")
    except ParseError:
        pass
    # Cross-line interactions defeated the per-line analysis: tag every
    # line without a structural cue.  Tags are unambiguous, so this
    # always round-trips for any ontology the parser could have produced.
    lines = [
        _render_inclusion(inc, tag=not _has_structural_cue(inc)) for inc in incs
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def print_abox(abox: ABox) -> str:
    lines = [f"{f.name}({f.ind}, {f.time})" for f in sorted(abox.concept_facts)]
    lines += [f"{f.name}({f.subj}, {f.obj}, {f.time})" for f in sorted(abox.role_facts)]
    lines.sort()
    return "\n".join(lines) + ("\n" if lines else "")


def render_term(t: Term) -> str:
    match t:
        case Var(name):
            return f"?{name}"
        case IndConst(name):
            return name
        case TimeConst(value):
            return str(value)
    raise TypeError(f"not a term: {t!r}")


def render_atom(a: Atom) -> str:
    match a:
        case ConceptAtom(name, ind, time):
            return f"{name}({render_term(ind)}, {render_term(time)})"
        case RoleAtom(name, subj, obj, time):
            return f"{name}({render_term(subj)}, {render_term(obj)}, {render_term(time)})"
        case LessAtom(left, right):
            return f"{render_term(left)} < {render_term(right)}"
        case EqAtom(left, right):
            return f"{render_term(left)} = {render_term(right)}"
    raise TypeError(f"not an atom: {a!r}")


def _render_body(atoms: frozenset[Atom]) -> str:
    if not atoms:
        return "0 = 0"  # the empty conjunction: vacuously true
    return ", ".join(render_atom(a) for a in sorted(atoms, key=atom_key))


def print_query(q: CQ) -> str:
    head_vars = ", ".join(f"?{v.name}" for v in q.answer_vars)
    return f"{q.name}({head_vars}) :- {_render_body(q.atoms)}\n"


def print_ucq(u: UCQ) -> str:
    head_vars = ", ".join(f"?{v.name}" for v in u.answer_vars)
    head = f"{u.name}({head_vars})"
    if len(u.disjuncts) == 1:
        return f"{head} :- {_render_body(u.disjuncts[0])}\n"
    lines = ["union:"] + [f"{head} :- {_render_body(d)}" for d in u.disjuncts]
    return "\n".join(lines) + "\n"
