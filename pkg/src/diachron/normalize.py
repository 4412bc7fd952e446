"""Ontology transformations: normal form, concept normal form, ⊥-elimination.

``to_normal_form`` decomposes arbitrary inclusions into six primitive
shapes by naming complex subexpressions.  ``to_conf`` then makes the
anonymous part of every model expressible through concept names alone:
for each role R it adds marker concepts ``A^m_R`` recording "an R-edge
starts at least m steps in the past (m > 0) / future (m < 0)" together
with inclusions replaying which roles that edge entails at which offsets.
The offsets are read off a closure of the single generating edge, and
stabilize beyond ±|role(T)| because every derivable support set is a
past ray, the point 0, a future ray, or a union of these.

``bottomize`` replaces ⊥ on right-hand sides with fresh names so that the
resulting ontology can never be inconsistent; the returned boolean query
fires exactly when the original would have derived ⊥.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import (
    BasicConcept,
    Bot,
    ConceptAnd,
    ConceptDiamond,
    ConceptExpr,
    ConceptInclusion,
    ConceptName,
    ExistsRole,
    Inclusion,
    RoleAnd,
    RoleDiamond,
    RoleExpr,
    RoleInclusion,
    RoleRef,
    Signature,
    TBox,
    TemporalOp,
    signature,
    sort_key,
)
from .queries import UCQ, ConceptAtom, RoleAtom, Var
from .timeset import EMPTY, TimeSet

FALSUM_CONCEPT = "__F"
FALSUM_ROLE = "__Q"
_MARKER_PREFIX = "__cA_"
_FRESH_PREFIX = "__n"


def is_internal_name(name: str) -> bool:
    """True for names introduced by normalization, markers, or ⊥-removal."""
    return name.startswith("__")


@dataclass(frozen=True, slots=True)
class NormalTBox:
    inclusions: frozenset[Inclusion]
    fresh_names: frozenset[str]
    original_signature: Signature

    def tbox(self) -> TBox:
        return TBox(self.inclusions)

    def sorted(self) -> list[Inclusion]:
        return sorted(self.inclusions, key=sort_key)


# ---------------------------------------------------------------------------
# Normal form


def _concept_has_bot(expr: ConceptExpr) -> bool:
    match expr:
        case Bot():
            return True
        case ConceptAnd(left, right):
            return _concept_has_bot(left) or _concept_has_bot(right)
        case ConceptDiamond(_, arg):
            return _concept_has_bot(arg)
        case _:
            return False


def _role_has_bot(expr: RoleExpr) -> bool:
    match expr:
        case RoleRef(_, _, is_bot):
            return is_bot
        case RoleAnd(left, right):
            return _role_has_bot(left) or _role_has_bot(right)
        case RoleDiamond(_, arg):
            return _role_has_bot(arg)
    return False


def _invert_role(expr: RoleExpr) -> RoleExpr:
    match expr:
        case RoleRef():
            return expr.inverse
        case RoleAnd(left, right):
            return RoleAnd(_invert_role(left), _invert_role(right))
        case RoleDiamond(op, arg):
            return RoleDiamond(op, _invert_role(arg))
    raise TypeError(f"not a role: {expr!r}")


class _Freshener:
    def __init__(self) -> None:
        self.counter = 0
        self.concept_memo: dict[ConceptExpr, ConceptName] = {}
        self.role_memo: dict[RoleExpr, RoleRef] = {}
        self.out: list[Inclusion] = []
        self.names: list[str] = []

    def _fresh(self) -> str:
        name = f"{_FRESH_PREFIX}{self.counter}"
        self.counter += 1
        self.names.append(name)
        return name

    def concept_name_of(self, expr: ConceptExpr) -> ConceptExpr:
        """A basic concept equivalent to ``expr`` from above, naming if needed."""
        match expr:
            case Bot() | ConceptName() | ExistsRole():
                return expr
            case _:
                if expr not in self.concept_memo:
                    name = ConceptName(self._fresh())
                    self.concept_memo[expr] = name
                    self.emit_concept(expr, name)
                return self.concept_memo[expr]

    def role_name_of(self, expr: RoleExpr) -> RoleRef:
        match expr:
            case RoleRef():
                return expr
            case _:
                if expr not in self.role_memo:
                    ref = RoleRef(self._fresh())
                    self.role_memo[expr] = ref
                    self.emit_role(expr, ref)
                return self.role_memo[expr]

    def emit_concept(self, lhs: ConceptExpr, rhs: BasicConcept) -> None:
        match lhs:
            case Bot() | ConceptName() | ExistsRole():
                self.out.append(ConceptInclusion(ConceptAnd(lhs, lhs), rhs))
            case ConceptAnd(left, right):
                self.out.append(
                    ConceptInclusion(
                        ConceptAnd(self.concept_name_of(left), self.concept_name_of(right)),
                        rhs,
                    )
                )
            case ConceptDiamond(op, arg):
                self.out.append(
                    ConceptInclusion(ConceptDiamond(op, self.concept_name_of(arg)), rhs)
                )

    def emit_role(self, lhs: RoleExpr, rhs: RoleRef) -> None:
        match lhs:
            case RoleRef():
                self.out.append(RoleInclusion(RoleAnd(lhs, lhs), rhs))
            case RoleAnd(left, right):
                self.out.append(
                    RoleInclusion(
                        RoleAnd(self.role_name_of(left), self.role_name_of(right)), rhs
                    )
                )
            case RoleDiamond(op, arg):
                self.out.append(RoleInclusion(RoleDiamond(op, self.role_name_of(arg)), rhs))


def to_normal_form(tbox: TBox) -> NormalTBox:
    """Decompose every inclusion into the six primitive shapes.

    Complex subexpressions receive memoized fresh names, so identical
    subexpressions share a name.  Inclusions whose left side mentions ⊥
    are vacuous and dropped; inverted right-hand roles are canonicalized
    by inverting both sides.
    """
    fresh = _Freshener()
    for inc in tbox.sorted():
        if isinstance(inc, ConceptInclusion):
            if _concept_has_bot(inc.lhs):
                continue
            fresh.emit_concept(inc.lhs, inc.rhs)
        else:
            if _role_has_bot(inc.lhs):
                continue
            lhs, rhs = inc.lhs, inc.rhs
            if rhs.inverted:
                lhs, rhs = _invert_role(lhs), rhs.inverse
            fresh.emit_role(lhs, rhs)
    return NormalTBox(frozenset(fresh.out), frozenset(fresh.names), signature(tbox))


def is_flat(ntbox: NormalTBox) -> bool:
    """True if no right-hand side is an existential restriction."""
    return not any(
        isinstance(inc, ConceptInclusion) and isinstance(inc.rhs, ExistsRole)
        for inc in ntbox.inclusions
    )


# ---------------------------------------------------------------------------
# The pair closure: what one generating edge entails about itself


def role_refs_of(ntbox: NormalTBox) -> tuple[RoleRef, ...]:
    """Both orientations of every role name, in a fixed order."""
    return signature(ntbox.tbox()).roles_with_inverses()


def _oriented_role_rules(
    ntbox: NormalTBox,
) -> list[tuple[str, tuple[RoleRef, ...], RoleRef]]:
    """Role inclusions as pair rules, in both orientations.

    A rule ("and", (S1, S2), R) means support(S1) ∩ support(S2) ⊆
    support(R) on a directed pair; ("P"/"F", (S,), R) shifts the support
    by the corresponding diamond.  Reading an inclusion on the reversed
    pair inverts every participating role.
    """
    rules: list[tuple[str, tuple[RoleRef, ...], RoleRef]] = []
    for inc in ntbox.sorted():
        if not isinstance(inc, RoleInclusion):
            continue
        match inc.lhs:
            case RoleAnd(RoleRef() as s1, RoleRef() as s2):
                base = ("and", (s1, s2), inc.rhs)
            case RoleDiamond(op, RoleRef() as s):
                base = (op.value, (s,), inc.rhs)
            case _:
                raise ValueError(f"not in normal form: {inc!r}")
        rules.append(base)
        kind, srcs, tgt = base
        flipped = (
            kind,
            tuple(s.inverse for s in srcs),
            tgt if tgt.is_bot else tgt.inverse,
        )
        rules.append(flipped)
    return rules


def pair_closure(ntbox: NormalTBox, seed: RoleRef) -> dict[RoleRef, TimeSet]:
    """Support sets of every role on the pair generated by one seed edge.

    The result maps each oriented role σ to the set of instants t with
    σ(a,v,t) entailed, given seed(a,v,0), closing under the role
    inclusions only.  The bottom role's entry is nonempty iff the pair is
    contradictory.
    """
    refs = role_refs_of(ntbox)
    table: dict[RoleRef, TimeSet] = {ref: EMPTY for ref in refs}
    table[RoleRef.bot()] = EMPTY
    table[seed] = TimeSet.of(0)
    rules = _oriented_role_rules(ntbox)
    # Each support set only grows, boundaries stay within ±|refs|, so the
    # loop reaches a fixpoint quickly; the cap is a pure safety net.
    for _ in range(4 * len(refs) + 8):
        changed = False
        for kind, srcs, tgt in rules:
            if kind == "and":
                derived = table[srcs[0]].intersect(table[srcs[1]])
            elif kind == "P":
                derived = table[srcs[0]].diamond_past()
            else:
                derived = table[srcs[0]].diamond_future()
            merged = table[tgt].union(derived)
            if merged != table[tgt]:
                table[tgt] = merged
                changed = True
        if not changed:
            return table
    raise AssertionError("pair closure failed to stabilize")


# ---------------------------------------------------------------------------
# Concept normal form


def marker_name(role: RoleRef, level: int) -> str:
    sign = "p" if level > 0 else ("m" if level < 0 else "")
    suffix = "_inv" if role.inverted else ""
    return f"{_MARKER_PREFIX}{sign}{abs(level)}_{role.name}{suffix}"


@dataclass(frozen=True, slots=True)
class ConfTBox:
    """A normalized ontology extended with role-edge marker concepts.

    ``A^m_R`` (m > 0) holds of u at n iff some R-edge leaves u at an
    instant ≤ n − m; mirrored for m < 0; ``A^0_R`` is ∃R itself.  The
    entailed-role table lists which roles the generating edge carries at
    which offsets, clamped to |m| ≤ |role(T)| where the pattern repeats.
    """

    base: NormalTBox
    roles: tuple[RoleRef, ...]
    marker_inclusions: frozenset[Inclusion]
    table_inclusions: frozenset[Inclusion]
    entailed_role_table: tuple[tuple[RoleRef, frozenset[tuple[RoleRef, int]]], ...]
    pair_supports: tuple[tuple[RoleRef, tuple[tuple[RoleRef, TimeSet], ...]], ...]
    pair_bot: tuple[tuple[RoleRef, bool], ...]

    @property
    def k(self) -> int:
        return len(self.roles)

    def all_inclusions(self) -> frozenset[Inclusion]:
        return self.base.inclusions | self.marker_inclusions | self.table_inclusions

    def tbox(self) -> TBox:
        return TBox(self.all_inclusions())

    def entailed_table(self, role: RoleRef) -> frozenset[tuple[RoleRef, int]]:
        return dict(self.entailed_role_table)[role]

    def pair_support(self, role: RoleRef) -> dict[RoleRef, TimeSet]:
        return dict(dict(self.pair_supports)[role])

    def is_pair_bot(self, role: RoleRef) -> bool:
        return dict(self.pair_bot)[role]

    def marker_levels(self) -> dict[str, tuple[RoleRef, int]]:
        out: dict[str, tuple[RoleRef, int]] = {}
        for role in self.roles:
            for m in range(-self.k, self.k + 1):
                out[marker_name(role, m)] = (role, m)
        return out


def to_conf(ntbox: NormalTBox) -> ConfTBox:
    """Extend a normal-form ontology with marker concepts and their tables."""
    refs = role_refs_of(ntbox)
    k = len(refs)
    markers: list[Inclusion] = []
    tables: list[Inclusion] = []
    entailed: list[tuple[RoleRef, frozenset[tuple[RoleRef, int]]]] = []
    supports: list[tuple[RoleRef, tuple[tuple[RoleRef, TimeSet], ...]]] = []
    bots: list[tuple[RoleRef, bool]] = []
    past, future = TemporalOp.SOMETIME_PAST, TemporalOp.SOMETIME_FUTURE
    for rho in refs:
        a0 = ConceptName(marker_name(rho, 0))
        ex = ExistsRole(rho)
        markers.append(ConceptInclusion(ConceptAnd(ex, ex), a0))
        markers.append(ConceptInclusion(ConceptDiamond(past, ex), ConceptName(marker_name(rho, 1))))
        markers.append(
            ConceptInclusion(ConceptDiamond(future, ex), ConceptName(marker_name(rho, -1)))
        )
        for m in range(1, k):
            markers.append(
                ConceptInclusion(
                    ConceptDiamond(past, ConceptName(marker_name(rho, m))),
                    ConceptName(marker_name(rho, m + 1)),
                )
            )
            markers.append(
                ConceptInclusion(
                    ConceptDiamond(future, ConceptName(marker_name(rho, -m))),
                    ConceptName(marker_name(rho, -m - 1)),
                )
            )
        closure = pair_closure(ntbox, rho)
        pairs: set[tuple[RoleRef, int]] = set()
        for sigma in refs:
            for m in closure[sigma].iter_window(-k, k):
                pairs.add((sigma, m))
        for sigma, m in sorted(pairs):
            am = ConceptName(marker_name(rho, m))
            tables.append(ConceptInclusion(ConceptAnd(am, am), ExistsRole(sigma)))
        entailed.append((rho, frozenset(pairs)))
        supports.append((rho, tuple((sigma, closure[sigma]) for sigma in refs)))
        bots.append((rho, not closure[RoleRef.bot()].is_empty))
    return ConfTBox(
        base=ntbox,
        roles=refs,
        marker_inclusions=frozenset(markers),
        table_inclusions=frozenset(tables),
        entailed_role_table=tuple(entailed),
        pair_supports=tuple(supports),
        pair_bot=tuple(bots),
    )


def normalize(tbox: TBox) -> ConfTBox:
    return to_conf(to_normal_form(tbox))


# ---------------------------------------------------------------------------
# ⊥-elimination


def falsum_query() -> UCQ:
    """The boolean query that fires iff the original ontology derived ⊥."""
    x, y, t = Var("x"), Var("y"), Var("t")
    return UCQ.of(
        "qbot",
        (),
        [
            frozenset({ConceptAtom(FALSUM_CONCEPT, x, t)}),
            frozenset({RoleAtom(FALSUM_ROLE, x, y, t)}),
        ],
    )


def bottomize(ctbox: ConfTBox) -> tuple[ConfTBox, UCQ]:
    """Replace ⊥ on right-hand sides of the base ontology with fresh names.

    The result is consistent with every data set; evaluating the returned
    query over its rewriting decides consistency of the original.
    """
    base = ctbox.base
    replaced: list[Inclusion] = []
    used: set[str] = set()
    for inc in base.sorted():
        if isinstance(inc, ConceptInclusion) and isinstance(inc.rhs, Bot):
            replaced.append(ConceptInclusion(inc.lhs, ConceptName(FALSUM_CONCEPT)))
            used.add(FALSUM_CONCEPT)
        elif isinstance(inc, RoleInclusion) and inc.rhs.is_bot:
            replaced.append(RoleInclusion(inc.lhs, RoleRef(FALSUM_ROLE)))
            used.add(FALSUM_ROLE)
        else:
            replaced.append(inc)
    ntbox = NormalTBox(
        frozenset(replaced), base.fresh_names | frozenset(used), base.original_signature
    )
    return to_conf(ntbox), falsum_query()
