"""Two-sorted conjunctive queries and positive existential formulas.

A CQ is a head (name plus answer variables) and a set of atoms over
individuals and timestamps; order atoms ``<`` and ``=`` compare temporal
terms directly.  Variables not listed in the head are implicitly
existentially quantified.  PEQ trees add conjunction/disjunction nodes
over atoms and flatten to unions of CQs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Union


@dataclass(frozen=True, slots=True, order=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True, order=True)
class IndConst:
    name: str


@dataclass(frozen=True, slots=True, order=True)
class TimeConst:
    value: int


Term = Union[Var, IndConst, TimeConst]


@dataclass(frozen=True, slots=True)
class ConceptAtom:
    name: str
    ind: Term
    time: Term


@dataclass(frozen=True, slots=True)
class RoleAtom:
    name: str
    subj: Term
    obj: Term
    time: Term


@dataclass(frozen=True, slots=True)
class LessAtom:
    left: Term
    right: Term


@dataclass(frozen=True, slots=True)
class EqAtom:
    left: Term
    right: Term


Atom = Union[ConceptAtom, RoleAtom, LessAtom, EqAtom]

DATA_ATOMS = (ConceptAtom, RoleAtom)
ORDER_ATOMS = (LessAtom, EqAtom)


def term_key(t: Term) -> tuple:
    match t:
        case Var(name):
            return ("v", name)
        case IndConst(name):
            return ("i", name)
        case TimeConst(value):
            return ("t", value)
    raise TypeError(f"not a term: {t!r}")


def atom_key(a: Atom) -> tuple:
    match a:
        case ConceptAtom(name, ind, time):
            return ("c", name, term_key(ind), term_key(time))
        case RoleAtom(name, subj, obj, time):
            return ("r", name, term_key(subj), term_key(obj), term_key(time))
        case LessAtom(left, right):
            return ("<", term_key(left), term_key(right))
        case EqAtom(left, right):
            return ("=", term_key(left), term_key(right))
    raise TypeError(f"not an atom: {a!r}")


def atom_terms(a: Atom) -> tuple[Term, ...]:
    match a:
        case ConceptAtom(_, ind, time):
            return (ind, time)
        case RoleAtom(_, subj, obj, time):
            return (subj, obj, time)
        case LessAtom(left, right) | EqAtom(left, right):
            return (left, right)
    raise TypeError(f"not an atom: {a!r}")


def individual_terms(a: Atom) -> tuple[Term, ...]:
    match a:
        case ConceptAtom(_, ind, _):
            return (ind,)
        case RoleAtom(_, subj, obj, _):
            return (subj, obj)
    return ()


def temporal_terms(a: Atom) -> tuple[Term, ...]:
    match a:
        case ConceptAtom(_, _, time) | RoleAtom(_, _, _, time):
            return (time,)
        case LessAtom(left, right) | EqAtom(left, right):
            return (left, right)
    return ()


def substitute_term(t: Term, sub: Mapping[Term, Term]) -> Term:
    return sub.get(t, t)


def substitute_atom(a: Atom, sub: Mapping[Term, Term]) -> Atom:
    match a:
        case ConceptAtom(name, ind, time):
            return ConceptAtom(name, sub.get(ind, ind), sub.get(time, time))
        case RoleAtom(name, subj, obj, time):
            return RoleAtom(name, sub.get(subj, subj), sub.get(obj, obj), sub.get(time, time))
        case LessAtom(left, right):
            return LessAtom(sub.get(left, left), sub.get(right, right))
        case EqAtom(left, right):
            return EqAtom(sub.get(left, left), sub.get(right, right))
    raise TypeError(f"not an atom: {a!r}")


def substitute_atoms(atoms: Iterable[Atom], sub: Mapping[Term, Term]) -> frozenset[Atom]:
    return frozenset(substitute_atom(a, sub) for a in atoms)


# ---------------------------------------------------------------------------
# Queries


class SortConflict(ValueError):
    """A variable is used both as an individual and as a timestamp."""


def var_sorts(atoms: Iterable[Atom]) -> dict[str, str]:
    """Map each variable to ``"ind"`` or ``"tem"``; raise on conflicts.

    Equality atoms are sort-polymorphic: their sort is whatever the two
    sides turn out to be, propagated from data atoms, ``<`` atoms, and
    constants.  Variables used only in equalities default to temporal.
    """
    sorts: dict[str, str] = {}

    def record(t: Term, sort: str) -> None:
        if isinstance(t, Var):
            old = sorts.setdefault(t.name, sort)
            if old != sort:
                raise SortConflict(f"variable ?{t.name} used as both individual and timestamp")
        elif isinstance(t, IndConst) and sort == "tem":
            raise SortConflict(f"individual {t.name} used in a timestamp position")
        elif isinstance(t, TimeConst) and sort == "ind":
            raise SortConflict(f"timestamp {t.value} used in an individual position")

    def known(t: Term) -> str | None:
        if isinstance(t, TimeConst):
            return "tem"
        if isinstance(t, IndConst):
            return "ind"
        return sorts.get(t.name)

    equalities: list[EqAtom] = []
    for a in atoms:
        if isinstance(a, EqAtom):
            equalities.append(a)
            continue
        for t in individual_terms(a):
            record(t, "ind")
        for t in temporal_terms(a):
            record(t, "tem")
    for fallback in (None, "tem"):
        changed = True
        while changed:
            changed = False
            for a in equalities:
                sort = known(a.left) or known(a.right) or fallback
                if sort is None:
                    continue
                for t in (a.left, a.right):
                    if isinstance(t, Var) and sorts.get(t.name) != sort:
                        record(t, sort)
                        changed = True
                    elif not isinstance(t, Var):
                        record(t, sort)
    return sorts


@dataclass(frozen=True, slots=True)
class CQ:
    """A conjunctive query; non-answer variables are existential."""

    name: str
    answer_vars: tuple[Var, ...]
    atoms: frozenset[Atom]

    def sorted_atoms(self) -> list[Atom]:
        return sorted(self.atoms, key=atom_key)

    def data_atoms(self) -> list[Atom]:
        return [a for a in self.sorted_atoms() if isinstance(a, DATA_ATOMS)]

    def order_atoms(self) -> list[Atom]:
        return [a for a in self.sorted_atoms() if isinstance(a, ORDER_ATOMS)]

    def variables(self) -> set[str]:
        out: set[str] = set()
        for a in self.atoms:
            for t in atom_terms(a):
                if isinstance(t, Var):
                    out.add(t.name)
        return out

    def sorts(self) -> dict[str, str]:
        return var_sorts(self.atoms)

    def temporal_constants(self) -> set[int]:
        out: set[int] = set()
        for a in self.atoms:
            for t in temporal_terms(a):
                if isinstance(t, TimeConst):
                    out.add(t.value)
        return out

    @property
    def size(self) -> int:
        """Atom count, order atoms included."""
        return len(self.atoms)


@dataclass(frozen=True, slots=True)
class UCQ:
    """A union of conjunctive queries sharing one head."""

    name: str
    answer_vars: tuple[Var, ...]
    disjuncts: tuple[frozenset[Atom], ...]

    @staticmethod
    def of(name: str, answer_vars: tuple[Var, ...], bodies: Iterable[frozenset[Atom]]) -> UCQ:
        unique = sorted({frozenset(b) for b in bodies}, key=lambda b: sorted(map(atom_key, b)))
        return UCQ(name, answer_vars, tuple(unique))

    def cqs(self) -> list[CQ]:
        return [CQ(self.name, self.answer_vars, d) for d in self.disjuncts]


# ---------------------------------------------------------------------------
# Positive existential trees


@dataclass(frozen=True, slots=True)
class PAtom:
    atom: Atom


@dataclass(frozen=True, slots=True)
class PAnd:
    parts: tuple[PEQ, ...]


@dataclass(frozen=True, slots=True)
class POr:
    parts: tuple[PEQ, ...]


PEQ = Union[PAtom, PAnd, POr]


def p_and(parts: Iterable[PEQ]) -> PEQ:
    flat: list[PEQ] = []
    for p in parts:
        if isinstance(p, PAnd):
            flat.extend(p.parts)
        else:
            flat.append(p)
    if len(flat) == 1:
        return flat[0]
    return PAnd(tuple(flat))


def p_or(parts: Iterable[PEQ]) -> PEQ:
    flat: list[PEQ] = []
    for p in parts:
        if isinstance(p, POr):
            flat.extend(p.parts)
        else:
            flat.append(p)
    if len(flat) == 1:
        return flat[0]
    return POr(tuple(flat))


def p_atoms(atoms: Iterable[Atom]) -> PEQ:
    return p_and([PAtom(a) for a in atoms])


def peq_node_count(p: PEQ) -> int:
    match p:
        case PAtom(_):
            return 1
        case PAnd(parts) | POr(parts):
            return 1 + sum(peq_node_count(q) for q in parts)
    raise TypeError(f"not a PEQ: {p!r}")


class CapExceeded(Exception):
    """Raised internally when flattening would exceed a disjunct cap;
    callers translate this into the public size-cap error."""


def flatten_peq(p: PEQ, cap: int) -> list[frozenset[Atom]]:
    """Distribute disjunction over conjunction into a list of atom sets."""

    def go(node: PEQ) -> list[frozenset[Atom]]:
        match node:
            case PAtom(atom):
                return [frozenset([atom])]
            case POr(parts):
                out: list[frozenset[Atom]] = []
                seen: set[frozenset[Atom]] = set()
                for part in parts:
                    for d in go(part):
                        if d not in seen:
                            seen.add(d)
                            out.append(d)
                    if len(out) > cap:
                        raise CapExceeded
                return out
            case PAnd(parts):
                acc: list[frozenset[Atom]] = [frozenset()]
                for part in parts:
                    branch = go(part)
                    nxt: list[frozenset[Atom]] = []
                    seen = set()
                    for left, right in itertools.product(acc, branch):
                        merged = left | right
                        if merged not in seen:
                            seen.add(merged)
                            nxt.append(merged)
                        if len(nxt) > cap:
                            raise CapExceeded
                    acc = nxt
                return acc
        raise TypeError(f"not a PEQ: {node!r}")

    return go(p)


# ---------------------------------------------------------------------------
# Order reasoning over a single CQ body


class OrderInconsistent(ValueError):
    """The order atoms of a body admit no assignment over the integers."""


def order_closure(atoms: Iterable[Atom]) -> tuple[dict[Term, Term], set[tuple[Term, Term]]]:
    """Equality classes and the strict-order transitive closure of a body.

    Returns ``(rep, less)`` where ``rep`` maps each temporal term to its
    equality-class representative and ``less`` holds representative pairs
    ``(a, b)`` with ``a < b`` forced.  Raises :class:`OrderInconsistent`
    when the constraints are unsatisfiable over the integers (a strict
    cycle, equated distinct constants, or contradictory constant facts).
    """
    atoms = sorted(atoms, key=atom_key)
    terms: set[Term] = set()
    for a in atoms:
        if isinstance(a, ORDER_ATOMS):
            terms.update(atom_terms(a))
        else:
            terms.update(temporal_terms(a))

    parent: dict[Term, Term] = {t: t for t in terms}

    def find(t: Term) -> Term:
        while parent[t] != t:
            parent[t] = parent[parent[t]]
            t = parent[t]
        return t

    def prefer(a: Term, b: Term) -> tuple[Term, Term]:
        # Constants win representative elections so substitutions ground out.
        if isinstance(b, TimeConst) and not isinstance(a, TimeConst):
            return b, a
        if not isinstance(a, TimeConst) and isinstance(b, Var) and isinstance(a, Var) and b.name < a.name:
            return b, a
        return a, b

    for a in atoms:
        if isinstance(a, EqAtom):
            ra, rb = find(a.left), find(a.right)
            if ra == rb:
                continue
            if isinstance(ra, TimeConst) and isinstance(rb, TimeConst):
                raise OrderInconsistent(f"{ra.value} = {rb.value} is false")
            keep, drop = prefer(ra, rb)
            parent[drop] = keep

    rep = {t: find(t) for t in terms}
    reps = set(rep.values())

    less: set[tuple[Term, Term]] = set()
    for a in atoms:
        if isinstance(a, LessAtom):
            l, r = rep[a.left], rep[a.right]
            if l == r:
                raise OrderInconsistent("a term is strictly below itself")
            less.add((l, r))
    # Distinct constants are ordered by value whether or not the body says so.
    consts = sorted((t for t in reps if isinstance(t, TimeConst)), key=lambda t: t.value)
    for a, b in itertools.combinations(consts, 2):
        less.add((a, b))

    # Floyd-Warshall style closure; bodies are small.
    changed = True
    while changed:
        changed = False
        for (a, b), (c, d) in itertools.product(tuple(less), tuple(less)):
            if b == c and (a, d) not in less:
                less.add((a, d))
                changed = True
    for a, b in less:
        if a == b:
            raise OrderInconsistent("strict order cycle")
        if isinstance(a, TimeConst) and isinstance(b, TimeConst) and a.value >= b.value:
            raise OrderInconsistent(f"{a.value} < {b.value} is false")
    return rep, less


def order_consistent(atoms: Iterable[Atom]) -> bool:
    try:
        order_closure(atoms)
    except OrderInconsistent:
        return False
    return True


# ---------------------------------------------------------------------------
# Homomorphism subsumption between CQ bodies

def _injective_on_constants(image: Term, pattern: Term) -> bool:
    if isinstance(pattern, (IndConst, TimeConst)):
        return image == pattern
    return True


def hom_subsumes(
    general: frozenset[Atom],
    specific: frozenset[Atom],
    fixed: frozenset[str] = frozenset(),
) -> bool:
    """True when every model of ``specific`` satisfies ``general``.

    Tested by mapping ``general`` into the order-closure of ``specific``:
    constants and the ``fixed`` variables (free variables shared by both
    bodies) map to themselves, data atoms to data atoms, and order atoms to
    pairs forced by the closure.  Sound over integer timelines (a
    homomorphism transfers satisfying assignments); used only to drop
    redundant disjuncts, where soundness is all that is needed.
    """
    try:
        rep, less = order_closure(specific)
    except OrderInconsistent:
        return True  # an unsatisfiable body is subsumed by anything
    data_specific = [a for a in specific if isinstance(a, DATA_ATOMS)]
    data_general = sorted(
        (a for a in general if isinstance(a, DATA_ATOMS)), key=atom_key
    )
    order_general = [a for a in general if isinstance(a, ORDER_ATOMS)]

    def tem_eq(a: Term, b: Term) -> bool:
        return rep.get(a, a) == rep.get(b, b)

    def tem_less(a: Term, b: Term) -> bool:
        ra, rb = rep.get(a, a), rep.get(b, b)
        if isinstance(ra, TimeConst) and isinstance(rb, TimeConst):
            return ra.value < rb.value
        return (ra, rb) in less

    universe = sorted(rep, key=term_key)

    def order_ok(sub: dict[Term, Term]) -> bool:
        for oa in order_general:
            l = sub.get(oa.left, oa.left)
            r = sub.get(oa.right, oa.right)
            if (isinstance(oa.left, Var) and oa.left not in sub) or (
                isinstance(oa.right, Var) and oa.right not in sub
            ):
                continue  # the other side is still unassigned
            if isinstance(oa, EqAtom):
                if not tem_eq(l, r):
                    return False
            else:
                if not tem_less(l, r):
                    return False
        return True

    def settle(pending: list[Term], sub: dict[Term, Term]) -> bool:
        """Search images for variables that occur in order atoms only."""
        if not order_ok(sub):
            return False
        if not pending:
            return True
        v, rest = pending[0], pending[1:]
        for img in universe:
            new = dict(sub)
            new[v] = img
            if settle(rest, new):
                return True
        return False

    def extend(i: int, sub: dict[Term, Term]) -> bool:
        if i == len(data_general):
            pending = []
            for oa in order_general:
                for t in (oa.left, oa.right):
                    if isinstance(t, Var) and t not in sub and t not in pending:
                        pending.append(t)
            return settle(pending, sub)
        atom = data_general[i]
        for target in data_specific:
            if type(target) is not type(atom) or target.name != atom.name:  # type: ignore[union-attr]
                continue
            pairs = list(zip(atom_terms(atom), atom_terms(target)))
            new = dict(sub)
            ok = True
            for pat, img in pairs:
                if isinstance(pat, Var):
                    seen = new.get(pat)
                    # Temporal images are compared through equality classes.
                    if seen is None:
                        new[pat] = img
                    elif seen != img and not tem_eq(seen, img):
                        ok = False
                        break
                elif not _injective_on_constants(img, pat) and not tem_eq(img, pat):
                    ok = False
                    break
            if ok and extend(i + 1, new):
                return True
        return False

    return extend(0, {Var(n): Var(n) for n in fixed})


def prune_subsumed(
    bodies: Iterable[frozenset[Atom]], fixed: frozenset[str] = frozenset()
) -> list[frozenset[Atom]]:
    """Drop bodies implied by another kept body (and unsatisfiable ones)."""
    ordered = sorted(
        {b for b in bodies},
        key=lambda b: (len(b), sorted(map(atom_key, b))),
    )
    kept: list[frozenset[Atom]] = []
    for b in ordered:
        if not order_consistent(b):
            continue
        if any(hom_subsumes(k, b, fixed) for k in kept):
            continue
        kept.append(b)
    return kept


# ---------------------------------------------------------------------------
# Canonical variable naming (for deduplication across generated bodies)


def canonical_body(atoms: frozenset[Atom], keep: set[str]) -> frozenset[Atom]:
    """Rename variables outside ``keep`` to position-derived names.

    Two bodies that differ only in bound-variable names map to the same
    value, which keeps generated unions free of alpha-variants.
    """
    order: list[str] = []
    seen: set[str] = set(keep)
    for a in sorted(atoms, key=atom_key):
        for t in atom_terms(a):
            if isinstance(t, Var) and t.name not in seen:
                seen.add(t.name)
                order.append(t.name)
    sub: dict[Term, Term] = {Var(n): Var(f"__b{i}") for i, n in enumerate(order)}
    return substitute_atoms(atoms, sub)


def fresh_namer(prefix: str) -> Iterator[str]:
    i = 0
    while True:
        yield f"{prefix}{i}"
        i += 1
