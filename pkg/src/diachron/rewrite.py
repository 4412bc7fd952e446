"""Compilation of ontology-mediated queries into unions of CQs over raw data.

The rewriting has three movements.  First, every concept and role name is
*unfolded* through the ontology into a union of conjunctive conditions on the
data (the ``ext`` tables); this captures everything derivable on named
individuals.  Second, *tree witnesses* enumerate the ways part of a query can
map into the anonymous elements that existential axioms generate; each
witness contributes a formula asserting that the data forces the relevant
anonymous tree to exist.  Third, witness formulas and the unfolded residue
are assembled, flattened, and cleaned up into a union of conjunctive queries
with the same certain answers as the original query under the ontology.

Temporal distances inside the anonymous part are expressed with δ-chains:
``δ⁰`` is equality and ``δⁿ`` (n ≥ 1) is a chain of n−1 fresh variables, the
order-language statement "at least n apart" (mirrored for n ≤ −1).  Support
sets attached to anonymous elements are always unions of a point at the
generating instant and rays pointing away from it, so the ray boundaries give
a sound and complete finite set of δ-exponents.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Mapping, Sequence, Union

from .chase import AnonId, Id, patterns_for
from .core import (
    Bot,
    ConceptAnd,
    ConceptDiamond,
    ConceptExpr,
    ConceptInclusion,
    ConceptName,
    ExistsRole,
    RoleAnd,
    RoleDiamond,
    RoleExpr,
    RoleRef,
    TBox,
    TemporalOp,
)
from .normalize import ConfTBox, bottomize, is_internal_name, normalize
from .queries import (
    Atom,
    CQ,
    CapExceeded,
    ConceptAtom,
    DATA_ATOMS,
    EqAtom,
    IndConst,
    LessAtom,
    PAtom,
    PEQ,
    POr,
    RoleAtom,
    Term,
    TimeConst,
    UCQ,
    Var,
    atom_key,
    atom_terms,
    canonical_body,
    flatten_peq,
    fresh_namer,
    hom_subsumes,
    order_consistent,
    p_and,
    p_or,
    peq_node_count,
    prune_subsumed,
    substitute_atoms,
    term_key,
    var_sorts,
)
from .timeset import EMPTY, TimeSet


class SizeCapExceeded(RuntimeError):
    """The rewriting grew past a configured size cap."""


@dataclass(frozen=True, slots=True)
class Caps:
    """Size limits for rewriting; exceeding one raises SizeCapExceeded."""

    dag_nodes: int = 10**6
    ucq_disjuncts: int = 10**5


DEFAULT_CAPS = Caps()


# ---------------------------------------------------------------------------
# Standard translation

# An atomic ∃R in "hatted" position is encoded as a concept atom with a
# reserved name so it can flow through formula machinery unchanged.
_HAT_FWD = "__exf_"
_HAT_REV = "__exr_"


def _hat_name(ref: RoleRef) -> str:
    return (_HAT_REV if ref.inverted else _HAT_FWD) + ref.name


def _hat_ref(name: str) -> RoleRef | None:
    if name.startswith(_HAT_FWD):
        return RoleRef(name[len(_HAT_FWD) :])
    if name.startswith(_HAT_REV):
        return RoleRef(name[len(_HAT_REV) :], inverted=True)
    return None


def _role_atom(ref: RoleRef, xi: Term, zeta: Term, tau: Term) -> RoleAtom:
    """The data atom for ``ref(xi, zeta)`` at ``tau``, stored non-inverted."""
    if ref.inverted:
        return RoleAtom(ref.name, zeta, xi, tau)
    return RoleAtom(ref.name, xi, zeta, tau)


def std_translate_concept(
    c: ConceptExpr,
    xi: Term,
    tau: Term,
    hatted: bool = False,
    _namer: Iterator[str] | None = None,
) -> PEQ:
    """First-order translation of a concept at individual ξ and instant τ.

    With ``hatted=True``, ∃R stays an atomic marker instead of introducing a
    quantified role atom, so it can later be unfolded through the ontology.
    """
    namer = _namer if _namer is not None else fresh_namer("__u")
    match c:
        case Bot():
            return POr(())
        case ConceptName(name):
            return PAtom(ConceptAtom(name, xi, tau))
        case ExistsRole(role):
            if hatted:
                return PAtom(ConceptAtom(_hat_name(role), xi, tau))
            return PAtom(_role_atom(role, xi, Var(next(namer)), tau))
        case ConceptAnd(left, right):
            return p_and(
                [
                    std_translate_concept(left, xi, tau, hatted, namer),
                    std_translate_concept(right, xi, tau, hatted, namer),
                ]
            )
        case ConceptDiamond(op, arg):
            t = Var(next(namer))
            order = (
                LessAtom(t, tau) if op is TemporalOp.SOMETIME_PAST else LessAtom(tau, t)
            )
            return p_and([PAtom(order), std_translate_concept(arg, xi, t, hatted, namer)])
    raise TypeError(f"unknown concept expression: {c!r}")


def std_translate_role(
    s: RoleExpr, xi: Term, zeta: Term, tau: Term, _namer: Iterator[str] | None = None
) -> PEQ:
    """First-order translation of a role expression on the pair (ξ, ζ) at τ."""
    namer = _namer if _namer is not None else fresh_namer("__u")
    match s:
        case RoleRef() as ref:
            if ref.is_bot:
                return POr(())
            return PAtom(_role_atom(ref, xi, zeta, tau))
        case RoleAnd(left, right):
            return p_and(
                [
                    std_translate_role(left, xi, zeta, tau, namer),
                    std_translate_role(right, xi, zeta, tau, namer),
                ]
            )
        case RoleDiamond(op, arg):
            t = Var(next(namer))
            order = (
                LessAtom(t, tau) if op is TemporalOp.SOMETIME_PAST else LessAtom(tau, t)
            )
            return p_and([PAtom(order), std_translate_role(arg, xi, zeta, t, namer)])
    raise TypeError(f"unknown role expression: {s!r}")


# ---------------------------------------------------------------------------
# ext tables: unfolding one atom through the ontology on named individuals
#
# A table maps a head — a concept name, a role name, or a hatted ∃ref — to
# the union of conjunctive bodies over raw data that entail it.  Bodies live
# at canonical free terms and are composed to a fixpoint; subsumption pruning
# is what makes the fixpoint finite when diamond axioms are recursive.

_HX = Var("__hx")
_HY = Var("__hy")
_HT = Var("__ht")
_TABLE_KEEP = {"__hx", "__hy", "__ht"}

Head = tuple


def _atom_head(a: Atom) -> Head | None:
    match a:
        case ConceptAtom(name, _, _):
            ref = _hat_ref(name)
            return ("e", ref) if ref is not None else ("c", name)
        case RoleAtom(name, _, _, _):
            return ("r", name)
    return None


def _identity_body(head: Head) -> frozenset[Atom]:
    kind, arg = head
    if kind == "c":
        return frozenset({ConceptAtom(arg, _HX, _HT)})
    if kind == "e":
        return frozenset({ConceptAtom(_hat_name(arg), _HX, _HT)})
    return frozenset({RoleAtom(arg, _HX, _HY, _HT)})


def _concept_body(c: ConceptExpr, counter: itertools.count) -> frozenset[Atom]:
    """Atoms (hatted) asserting concept ``c`` at (__hx, __ht)."""

    def walk(expr: ConceptExpr, tau: Term) -> list[Atom]:
        match expr:
            case ConceptName(name):
                return [ConceptAtom(name, _HX, tau)]
            case ExistsRole(role):
                return [ConceptAtom(_hat_name(role), _HX, tau)]
            case ConceptAnd(left, right):
                return walk(left, tau) + walk(right, tau)
            case ConceptDiamond(op, arg):
                t = Var(f"__u{next(counter)}")
                order = (
                    LessAtom(t, tau)
                    if op is TemporalOp.SOMETIME_PAST
                    else LessAtom(tau, t)
                )
                return [order] + walk(arg, t)
        raise TypeError(f"⊥ cannot appear on an axiom left-hand side: {expr!r}")

    return frozenset(walk(c, _HT))


def _role_body(s: RoleExpr, counter: itertools.count) -> frozenset[Atom]:
    """Atoms asserting role expression ``s`` on (__hx, __hy) at __ht."""

    def walk(expr: RoleExpr, tau: Term) -> list[Atom]:
        match expr:
            case RoleRef() as ref:
                return [_role_atom(ref, _HX, _HY, tau)]
            case RoleAnd(left, right):
                return walk(left, tau) + walk(right, tau)
            case RoleDiamond(op, arg):
                t = Var(f"__u{next(counter)}")
                order = (
                    LessAtom(t, tau)
                    if op is TemporalOp.SOMETIME_PAST
                    else LessAtom(tau, t)
                )
                return [order] + walk(arg, t)
        raise TypeError(f"unknown role expression: {expr!r}")

    return frozenset(walk(s, _HT))


def _seed_time(e: int, counter: itertools.count) -> tuple[Term, tuple[Atom, ...]]:
    """A time term forced at least |e| strict steps before (e>0) or after
    (e<0) the frame instant __ht, together with the order atoms saying so."""
    if e == 0:
        return _HT, ()
    mids = tuple(Var(f"__u{next(counter)}") for _ in range(abs(e)))
    chain = (*mids, _HT) if e > 0 else (_HT, *mids)
    seed = mids[0] if e > 0 else mids[-1]
    return seed, tuple(LessAtom(a, b) for a, b in zip(chain, chain[1:]))


def _one_step_bodies(ctbox: ConfTBox) -> dict[Head, list[frozenset[Atom]]]:
    """Single replacement steps, axiom right-to-left plus edge-offset rows.

    Axioms of the underlying normalized ontology contribute their translated
    left-hand sides.  The marker layer is collapsed analytically instead of
    being replayed one chain link at a time: a level-m marker holds exactly
    when a role edge sits at least m steps away, and each entailed-role
    support set is a union of rays whose boundary offsets subsume every
    deeper level, so one row per boundary carries the whole chain.
    """
    counter = itertools.count()
    out: dict[Head, list[frozenset[Atom]]] = {}
    seen: set[tuple[Head, frozenset[Atom]]] = set()

    def add(head: Head, body: frozenset[Atom]) -> None:
        if body == _identity_body(head):
            return
        key = (head, canonical_body(body, _TABLE_KEEP))
        if key in seen:
            return
        seen.add(key)
        out.setdefault(head, []).append(body)

    for inc in sorted(ctbox.base.inclusions, key=repr):
        if isinstance(inc, ConceptInclusion):
            match inc.rhs:
                case ConceptName(name):
                    add(("c", name), _concept_body(inc.lhs, counter))
                case ExistsRole(role):
                    add(("e", role), _concept_body(inc.lhs, counter))
                case Bot():
                    pass
        else:
            ref = inc.rhs
            if not ref.is_bot:
                add(("r", ref.name), _role_body(inc.lhs, counter))
    for rho in ctbox.roles:
        support = ctbox.pair_support(rho)
        for sigma in ctbox.roles:
            ts = support.get(sigma)
            if ts is None or ts.is_empty:
                continue
            for e in _support_exponents(ts):
                if abs(e) > ctbox.k:
                    continue  # beyond the marker window nothing is recorded
                seed_t, order = _seed_time(e, counter)
                add(
                    ("e", sigma),
                    frozenset({ConceptAtom(_hat_name(rho), _HX, seed_t), *order}),
                )
                if not sigma.inverted:
                    add(
                        ("r", sigma.name),
                        frozenset({_role_atom(rho, _HX, _HY, seed_t), *order}),
                    )
    return out


def _frame_of(atom: Atom) -> dict[Term, Term]:
    """Substitution sending a table's canonical frees onto an atom's terms."""
    match atom:
        case ConceptAtom(_, ind, time):
            return {_HX: ind, _HT: time}
        case RoleAtom(_, subj, obj, time):
            return {_HX: subj, _HY: obj, _HT: time}
    raise TypeError(f"not a data atom: {atom!r}")


def _instantiate(
    entry: frozenset[Atom], frame: Mapping[Term, Term], namer: Iterator[str]
) -> frozenset[Atom]:
    """Plant a table entry at a frame, freshening its bound variables."""
    sub = dict(frame)
    for a in sorted(entry, key=atom_key):
        for t in atom_terms(a):
            if isinstance(t, Var) and t not in sub and t.name not in _TABLE_KEEP:
                sub[t] = Var(next(namer))
            elif isinstance(t, Var) and t not in sub:
                # a canonical free not covered by the frame (no __hy for
                # concept heads) is still local to the entry
                sub[t] = Var(next(namer))
    return substitute_atoms(entry, sub)


def _table_size(tables: Mapping[Head, Iterable[frozenset[Atom]]]) -> int:
    return sum(len(b) for entries in tables.values() for b in entries)


@lru_cache(maxsize=64)
def _ext_tables(
    ctbox: ConfTBox, caps: Caps, rounds: int | None
) -> Mapping[Head, tuple[frozenset[Atom], ...]]:
    """Per-atom unfolding tables, closed under single-atom replacement.

    Worklist iteration: replacing one data atom of a kept body by one entry
    of that atom's table yields a candidate, inserted unless an existing
    body already subsumes it (in which case every later composition of the
    candidate is likewise covered).  Bodies whose inner tables grow are
    revisited, so the result is the same fixpoint a round-based scheme
    reaches, without re-canonicalizing the unchanged majority each round.
    """
    if rounds == 0:
        return {}
    one_step = _one_step_bodies(ctbox)
    fixed = frozenset(_TABLE_KEEP)
    namer = fresh_namer("__u")
    tables: dict[Head, list[frozenset[Atom]]] = {}
    depth: dict[tuple[Head, frozenset[Atom]], int] = {}
    watchers: dict[Head, set[Head]] = {}
    queue: deque[tuple[Head, frozenset[Atom]]] = deque()
    size = 0

    def insert(head: Head, body: frozenset[Atom], d: int) -> None:
        nonlocal size
        reduced = _reduce_body(body, _TABLE_KEEP)
        if reduced is None:
            return
        # Dropping unanchored instants keeps compositions of cyclic axioms
        # from growing fresh spines forever: the reduced form is equivalent,
        # so subsumption can recognize it and the fixpoint closes.
        body = canonical_body(reduced, _TABLE_KEEP)
        kept = tables.setdefault(head, [])
        if body in kept or any(hom_subsumes(k, body, fixed) for k in kept):
            return
        dropped = [k for k in kept if hom_subsumes(body, k, fixed)]
        for k in dropped:
            kept.remove(k)
            size -= len(k)
        kept.append(body)
        size += len(body)
        if size > caps.dag_nodes:
            raise SizeCapExceeded(f"unfolding tables exceed {caps.dag_nodes} atoms")
        depth[(head, body)] = d
        queue.append((head, body))
        # Everything that watches this head must recheck its compositions.
        for watcher in sorted(watchers.get(head, ()), key=repr):
            for b in tables.get(watcher, ()):
                queue.append((watcher, b))

    for head in sorted(one_step, key=repr):
        insert(head, _identity_body(head), 0)
    for head in sorted(one_step, key=repr):
        for body in one_step[head]:
            insert(head, body, 0)

    budget = 10**6
    while queue:
        head, body = queue.popleft()
        kept = tables.get(head, ())
        if body not in kept:
            continue  # dropped by a more general body in the meantime
        d = depth.get((head, body), 0)
        if rounds is not None and d >= rounds:
            continue
        budget -= 1
        if budget < 0:
            raise SizeCapExceeded("unfolding fixpoint exceeded its step budget")
        for atom in sorted(body, key=atom_key):
            inner = _atom_head(atom)
            if inner is None or inner not in one_step:
                continue
            watchers.setdefault(inner, set()).add(head)
            frame = _frame_of(atom)
            rest = body - {atom}
            for entry in tuple(tables.get(inner, ())):
                if entry == _identity_body(inner):
                    continue
                insert(head, rest | _instantiate(entry, frame, namer), d + 1)
    return {h: tuple(sorted(bs, key=_body_key)) for h, bs in sorted(tables.items(), key=repr)}


def _body_key(b: frozenset[Atom]) -> tuple:
    return (len(b), sorted(map(atom_key, b)))


def _dehat_body(body: Iterable[Atom], namer: Iterator[str]) -> frozenset[Atom]:
    out: set[Atom] = set()
    for a in body:
        if isinstance(a, ConceptAtom):
            ref = _hat_ref(a.name)
            if ref is not None:
                out.add(_role_atom(ref, a.ind, Var(next(namer)), a.time))
                continue
        out.add(a)
    return frozenset(out)


def _atom_peq(
    atom: Atom,
    tables: Mapping[Head, tuple[frozenset[Atom], ...]],
    namer: Iterator[str],
    memo: dict[Atom, PEQ],
) -> PEQ:
    """The unfolding of one data atom as a disjunction of bodies.

    Bodies still naming an internal helper concept are omitted: helpers never
    occur in raw data, and at the table fixpoint their fully unfolded variants
    are present as separate bodies.
    """
    if atom in memo:
        return memo[atom]
    head = _atom_head(atom)
    entries = tables.get(head, (_identity_body(head),)) if head else None
    if entries is None:
        result: PEQ = PAtom(atom)
    else:
        frame = _frame_of(atom)
        arg_names = {t.name for t in atom_terms(atom) if isinstance(t, Var)}
        parts = []
        seen: set[frozenset[Atom]] = set()
        for entry in entries:
            planted = _dehat_body(_instantiate(entry, frame, namer), namer)
            if _has_internal_data_atom(planted):
                continue
            key = canonical_body(planted, arg_names)
            if key in seen:
                continue
            seen.add(key)
            parts.append(p_and([PAtom(a) for a in sorted(planted, key=atom_key)]))
        result = p_or(parts)
    memo[atom] = result
    return result


def ext_unfold(
    ctbox: ConfTBox,
    q: Union[CQ, PEQ],
    rounds: int | None = None,
    caps: Caps = DEFAULT_CAPS,
) -> PEQ:
    """Unfold every data atom of a query through the ontology.

    The result holds over the raw data exactly when the original query holds
    over the saturation of the data, for named individuals and all instants.
    ``rounds=0`` returns the query unchanged (as a formula).
    """
    tables = _ext_tables(ctbox, caps, rounds)
    namer = fresh_namer("__e")
    memo: dict[Atom, PEQ] = {}
    if isinstance(q, CQ):
        result = p_and(
            [
                _atom_peq(a, tables, namer, memo) if isinstance(a, DATA_ATOMS) else PAtom(a)
                for a in q.sorted_atoms()
            ]
        )
    else:
        result = _walk_peq(q, lambda a: _atom_peq(a, tables, namer, memo))
    if peq_node_count(result) > caps.dag_nodes:
        raise SizeCapExceeded(f"unfolded query exceeds {caps.dag_nodes} nodes")
    return result


def _walk_peq(p: PEQ, on_data) -> PEQ:
    match p:
        case PAtom(atom):
            return on_data(atom) if isinstance(atom, DATA_ATOMS) else p
        case PAnd(parts):
            return p_and([_walk_peq(part, on_data) for part in parts])
        case POr(parts):
            return p_or([_walk_peq(part, on_data) for part in parts])
    raise TypeError(f"not a formula: {p!r}")


def ext_exists_role(
    ctbox: ConfTBox,
    r: RoleRef,
    xi: Term | None = None,
    tau: Term | None = None,
    caps: Caps = DEFAULT_CAPS,
) -> PEQ:
    """Unfolding of ∃r at (ξ, τ): every data pattern that forces an r-edge."""
    xi = xi if xi is not None else Var("x")
    tau = tau if tau is not None else Var("t")
    return ext_unfold(ctbox, PAtom(ConceptAtom(_hat_name(r), xi, tau)), caps=caps)


# ---------------------------------------------------------------------------
# Totally ordered expansion


def _ordered_partitions(items: Sequence[Term]) -> Iterator[tuple[tuple[Term, ...], ...]]:
    if not items:
        yield ()
        return
    head, rest = items[0], items[1:]
    for part in _ordered_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + ((head,) + part[i],) + part[i + 1 :]
        for i in range(len(part) + 1):
            yield part[:i] + ((head,),) + part[i:]


def totally_ordered_expansion(q: CQ) -> tuple[CQ, ...]:
    """All refinements of q in which the temporal terms are totally ordered.

    Each variant adds the full pairwise set of =/< atoms of one total
    preorder over the temporal variables and constants; distinct constants
    keep their numeric order and never share a position.  Variants that
    contradict order atoms already present are dropped.
    """
    sorts = var_sorts(q.atoms)
    terms: list[Term] = sorted(
        {Var(n) for n, s in sorts.items() if s == "tem" and n in q.variables()}
        | {TimeConst(c) for c in q.temporal_constants()},
        key=term_key,
    )
    if len(terms) <= 1:
        return (q,)
    if len(terms) > 8:
        raise SizeCapExceeded(f"{len(terms)} temporal terms is too many to order")
    out: list[CQ] = []
    base = frozenset(q.atoms)
    for blocks in _ordered_partitions(terms):
        consts = [
            [t for t in block if isinstance(t, TimeConst)] for block in blocks
        ]
        if any(len(c) > 1 for c in consts):
            continue
        values = [c[0].value for c in consts if c]
        if values != sorted(values) or len(set(values)) != len(values):
            continue
        added: set[Atom] = set()
        for i, block in enumerate(blocks):
            for a, b in itertools.combinations(sorted(block, key=term_key), 2):
                added.add(EqAtom(a, b))
            for later in blocks[i + 1 :]:
                for a in block:
                    for b in later:
                        added.add(LessAtom(a, b))
        if not order_consistent(base | added):
            continue
        out.append(CQ(q.name, q.answer_vars, base | added))
    return tuple(out)


# ---------------------------------------------------------------------------
# Removing temporal variables that are unbounded on one side


def _false_equality(atoms: Iterable[Atom]) -> bool:
    for a in atoms:
        if isinstance(a, EqAtom):
            l, r = a.left, a.right
            if isinstance(l, IndConst) and isinstance(r, IndConst) and l != r:
                return True
    return False


def _reduce_body(atoms: frozenset[Atom], free: set[str]) -> frozenset[Atom] | None:
    """Drop order-only temporal variables that no protected instant pins down.

    A temporal term is protected when it is a data atom's timestamp, a
    constant, or a free variable.  Any other temporal variable matters only
    if it lies on an order path from one protected term to another; a
    variable missing an anchor on either side can be placed arbitrarily far
    in that direction (the timeline is unbounded), together with everything
    that chains beyond it, so its atoms are redundant.  Anchoring must be
    checked through the transitive order graph: an interior link of a chain
    between two protected instants has no protected neighbour yet carries
    distance information.  Returns None for an inconsistent body.
    """
    if _false_equality(atoms) or not order_consistent(atoms):
        return None
    sorts = var_sorts(atoms)

    def temporal(t: Term) -> bool:
        return isinstance(t, TimeConst) or (
            isinstance(t, Var) and sorts.get(t.name) == "tem"
        )

    protected: set[Term] = {a.time for a in atoms if isinstance(a, DATA_ATOMS)}
    down: dict[Term, set[Term]] = {}
    up: dict[Term, set[Term]] = {}
    for a in atoms:
        if not isinstance(a, (LessAtom, EqAtom)):
            continue
        l, r = (a.left, a.right)
        if not (temporal(l) and temporal(r)):
            continue
        for t in (l, r):
            down.setdefault(t, set())
            up.setdefault(t, set())
            if isinstance(t, TimeConst) or (isinstance(t, Var) and t.name in free):
                protected.add(t)
        up[l].add(r)
        down[r].add(l)
        if isinstance(a, EqAtom):
            up[r].add(l)
            down[l].add(r)

    def reach(edges: dict[Term, set[Term]]) -> set[Term]:
        seen = set(protected)
        stack = list(protected)
        while stack:
            for n in edges.get(stack.pop(), ()):
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return seen

    anchored = reach(up) & reach(down)
    drop = {t for t in up if t not in anchored and t not in protected}
    if not drop:
        return frozenset(atoms)
    return frozenset(a for a in atoms if drop.isdisjoint(atom_terms(a)))


def reduce_unbounded(u: UCQ) -> UCQ:
    """Simplify every disjunct by dropping one-side-unbounded variables."""
    free = {v.name for v in u.answer_vars}
    bodies = []
    for b in u.disjuncts:
        reduced = _reduce_body(b, free)
        if reduced is not None:
            bodies.append(reduced)
    return UCQ.of(u.name, u.answer_vars, bodies)


# ---------------------------------------------------------------------------
# Tree witnesses


@dataclass(frozen=True)
class TreeWitness:
    """One way part of the query maps into an anonymous subtree.

    ``sub_query`` is the covered part (its data atoms plus every order
    atom); ``x_set`` are the individual terms that land on the tree's named
    root, ``y_set`` the variables that land on anonymous elements.  ``tree``
    lists the nodes used, ``g_times`` their representative instants relative
    to the generating edge of the root child, and ``realizers`` assign each
    covered data atom the node and δ-exponent that supports it.
    """

    seed_role: RoleRef
    sub_query: CQ
    mapping: tuple[tuple[Term, object], ...]
    x_set: frozenset[Term]
    y_set: frozenset[Var]
    tree: tuple[Id, ...]
    g_times: tuple[tuple[Id, int], ...]
    realizers: tuple[tuple[Atom, Id, int], ...]


def _contains(ts: TimeSet, v: int) -> bool:
    return not ts.intersect(TimeSet.of(v)).is_empty


def _support_exponents(ts: TimeSet) -> list[int]:
    """Sound δ-exponents covering a support set of point-plus-rays shape."""
    stray = [p for p in ts.points if p != 0]
    if stray:
        # Single-seed supports are {0} plus away-pointing rays; an isolated
        # nonzero instant has no sound δ-exponent, so refuse it loudly.
        raise AssertionError(f"support has isolated instants {stray}: {ts!r}")
    cands: set[int] = set()
    if _contains(ts, 0):
        cands.add(0)
    if ts.future is not None:
        f = ts.future
        while f > 1 and _contains(ts, f - 1):
            f -= 1
        cands.add(max(f, 1))
    if ts.past is not None:
        p = ts.past
        while p < -1 and _contains(ts, p + 1):
            p += 1
        cands.add(min(p, -1))
    return sorted(cands)


class _PatternTree:
    """Lazy view of the anonymous tree grown from one seed edge."""

    def __init__(self, ctbox: ConfTBox, seed: RoleRef, depth_cap: int):
        self.ctbox = ctbox
        self.patterns = patterns_for(ctbox)
        self.seed = seed
        self.depth_cap = depth_cap
        self.root: Id = "a"
        self.c0 = AnonId("a", ((0, seed),))

    def type_of(self, node: AnonId) -> dict:
        return self.patterns[node.edge_role()].child_dict()

    def concept_support(self, node: AnonId, name: str) -> TimeSet:
        return self.type_of(node).get(ConceptName(name), EMPTY)

    def pair_support(self, child: AnonId, ref: RoleRef) -> TimeSet:
        """Support of ref(parent, child) relative to the child's edge."""
        return self.patterns[child.edge_role()].pair_dict().get(ref, EMPTY)

    def children(self, node: AnonId) -> list[AnonId]:
        if node.depth >= self.depth_cap:
            return []
        out = []
        for sigma in self.ctbox.roles:
            ts = self.type_of(node).get(ExistsRole(sigma), EMPTY)
            for e in _support_exponents(ts):
                out.append(AnonId(node.root, node.steps + ((e, sigma),)))
        return out


def _ind_terms(atom: Atom) -> list[Term]:
    match atom:
        case ConceptAtom(_, ind, _):
            return [ind]
        case RoleAtom(_, subj, obj, _):
            return [subj, obj]
    return []


def _role_links(q_h_data: Sequence[Atom], name: str) -> list[RoleAtom]:
    return [
        a
        for a in q_h_data
        if isinstance(a, RoleAtom) and Var(name) in (a.subj, a.obj)
    ]


def _adjacent_candidates(
    tree: _PatternTree, atom: RoleAtom, partner_img: Id, y_is_subj: bool
) -> set[AnonId]:
    """Nodes adjacent to a placed partner that can carry the atom."""
    out: set[AnonId] = set()
    if partner_img == tree.root:
        cand = tree.c0
        ref = RoleRef(atom.name, inverted=y_is_subj)
        if not tree.pair_support(cand, ref).is_empty:
            out.add(cand)
        return out
    assert isinstance(partner_img, AnonId)
    # y's node as a child of the partner
    ref_down = RoleRef(atom.name, inverted=y_is_subj)
    for child in tree.children(partner_img):
        if not tree.pair_support(child, ref_down).is_empty:
            out.add(child)
    # y's node as the parent of the partner
    if partner_img.depth >= 2:
        parent = partner_img.parent()
        ref_up = RoleRef(atom.name, inverted=not y_is_subj)
        if not tree.pair_support(partner_img, ref_up).is_empty:
            out.add(parent)
    return out


def _float_nodes(tree: _PatternTree, max_depth: int, cap: int = 512) -> list[AnonId]:
    out: list[AnonId] = []
    frontier: list[AnonId] = [tree.c0]
    while frontier and len(out) < cap:
        node = frontier.pop(0)
        out.append(node)
        if node.depth < max_depth:
            frontier.extend(tree.children(node))
    return out


def _realizer_support(
    tree: _PatternTree, atom: Atom, images: Mapping[str, Id]
) -> tuple[AnonId, RoleRef | None, TimeSet] | None:
    """The node whose generating edge supports the atom, and its support."""

    def img(t: Term) -> Id | None:
        if isinstance(t, Var) and t.name in images:
            return images[t.name]
        return tree.root  # X terms and constants sit on the named root

    if isinstance(atom, ConceptAtom):
        node = img(atom.ind)
        if not isinstance(node, AnonId):
            return None
        return node, None, tree.concept_support(node, atom.name)
    assert isinstance(atom, RoleAtom)
    s_img, o_img = img(atom.subj), img(atom.obj)
    if isinstance(s_img, AnonId) and (s_img.parent() == o_img):
        child, ref = s_img, RoleRef(atom.name, inverted=True)
    elif isinstance(o_img, AnonId) and (o_img.parent() == s_img):
        child, ref = o_img, RoleRef(atom.name)
    else:
        return None
    return child, ref, tree.pair_support(child, ref)


def _witness_assignments(
    tree: _PatternTree,
    q_h_data: Sequence[Atom],
    x_terms: frozenset[Term],
    y_names: Sequence[str],
) -> Iterator[dict[str, AnonId]]:
    """Backtracking search for images of the Y variables in the tree."""

    def placed(t: Term, images: dict[str, AnonId]) -> Id | None:
        if isinstance(t, Var) and t.name in y_names:
            return images.get(t.name)
        return tree.root

    def candidates(name: str, images: dict[str, AnonId]) -> list[AnonId] | None:
        sets: list[set[AnonId]] = []
        for atom in _role_links(q_h_data, name):
            y_is_subj = atom.subj == Var(name)
            partner = atom.obj if y_is_subj else atom.subj
            if partner == Var(name):
                return []  # a reflexive edge never maps into a tree
            p_img = placed(partner, images)
            if p_img is None:
                continue
            sets.append(_adjacent_candidates(tree, atom, p_img, y_is_subj))
        if not sets:
            return None
        common = sets[0]
        for s in sets[1:]:
            common &= s
        return sorted(common, key=lambda n: (n.depth, n.render()))

    def order_next(images: dict[str, AnonId]) -> tuple[str, list[AnonId]] | None:
        pending = [n for n in y_names if n not in images]
        if not pending:
            return None
        for name in pending:
            cands = candidates(name, images)
            if cands is not None:
                return name, cands
        # every pending variable floats: anchor the first one anywhere
        name = pending[0]
        return name, _float_nodes(tree, min(tree.depth_cap, len(y_names) + 2))

    def rec(images: dict[str, AnonId]) -> Iterator[dict[str, AnonId]]:
        nxt = order_next(images)
        if nxt is None:
            yield dict(images)
            return
        name, cands = nxt
        for node in cands:
            images[name] = node
            # every link whose two ends are now placed must be realisable
            ok = True
            for atom in _role_links(q_h_data, name):
                partner = atom.obj if atom.subj == Var(name) else atom.subj
                if placed(partner, images) is None:
                    continue
                sup = _realizer_support(tree, atom, images)
                if sup is None or sup[2].is_empty:
                    ok = False
                    break
            if ok:
                yield from rec(images)
            del images[name]

    yield from rec({})


def enumerate_witnesses(
    ctbox: ConfTBox, q: CQ, caps: Caps = DEFAULT_CAPS
) -> tuple[TreeWitness, ...]:
    """All tree witnesses of the query against the ontology's anonymous part."""
    sorts = var_sorts(q.atoms)
    data = sorted(q.data_atoms(), key=atom_key)
    order_atoms = sorted(q.order_atoms(), key=atom_key)
    answer_names = {v.name for v in q.answer_vars}
    seeds = sorted(
        {
            inc.rhs.role
            for inc in ctbox.base.inclusions
            if isinstance(inc, ConceptInclusion) and isinstance(inc.rhs, ExistsRole)
        }
    )
    candidate_vars = sorted(
        {
            t.name
            for a in data
            for t in _ind_terms(a)
            if isinstance(t, Var)
            and sorts.get(t.name) == "ind"
            and t.name not in answer_names
        }
    )
    depth_cap = 2 * ctbox.k + q.size
    found: dict[tuple, TreeWitness] = {}
    for seed in seeds:
        tree = _PatternTree(ctbox, seed, depth_cap)
        for r in range(1, len(candidate_vars) + 1):
            for y_combo in itertools.combinations(candidate_vars, r):
                y_names = list(y_combo)
                y_set = frozenset(Var(n) for n in y_names)
                q_h_data = [
                    a for a in data if any(t in y_set for t in _ind_terms(a))
                ]
                x_terms = frozenset(
                    t
                    for a in q_h_data
                    for t in _ind_terms(a)
                    if not (isinstance(t, Var) and t.name in y_names)
                )
                if sum(isinstance(t, IndConst) for t in x_terms) > 1:
                    continue
                for images in _witness_assignments(tree, q_h_data, x_terms, y_names):
                    _collect_witnesses(
                        tree, q, q_h_data, order_atoms, x_terms, y_set, images, found
                    )
                    if len(found) > caps.ucq_disjuncts:
                        raise SizeCapExceeded(
                            f"more than {caps.ucq_disjuncts} tree witnesses"
                        )
    return tuple(found[k] for k in sorted(found, key=repr))


def _collect_witnesses(
    tree: _PatternTree,
    q: CQ,
    q_h_data: Sequence[Atom],
    order_atoms: Sequence[Atom],
    x_terms: frozenset[Term],
    y_set: frozenset[Var],
    images: dict[str, AnonId],
    found: dict[tuple, TreeWitness],
) -> None:
    options: list[tuple[Atom, AnonId, list[int]]] = []
    for atom in q_h_data:
        sup = _realizer_support(tree, atom, images)
        if sup is None:
            return
        node, _, ts = sup
        exps = _support_exponents(ts)
        if not exps:
            return
        options.append((atom, node, exps))
    used: set[Id] = {tree.root}
    for node in images.values():
        walk: Id = node
        while isinstance(walk, AnonId):
            used.add(walk)
            walk = walk.parent()
    used.add(tree.c0)
    nodes = sorted(used, key=_node_key)
    g_times = tuple((n, n.edge_time() if isinstance(n, AnonId) else 0) for n in nodes)
    sub_atoms = frozenset(q_h_data) | frozenset(order_atoms)
    occurring = {
        t.name for a in sub_atoms for t in atom_terms(a) if isinstance(t, Var)
    }
    sub_query = CQ(
        f"{q.name}_h",
        tuple(v for v in q.answer_vars if v.name in occurring),
        sub_atoms,
    )
    for combo in itertools.product(*[o[2] for o in options]):
        realizers = tuple(
            (atom, node, e) for (atom, node, _), e in zip(options, combo)
        )
        mapping: dict[Term, object] = {t: "a" for t in x_terms}
        for name, node in images.items():
            mapping[Var(name)] = node
        for atom, node, e in realizers:
            tau = atom.time
            if tau not in mapping:
                mapping[tau] = node.edge_time() + e
        wit = TreeWitness(
            seed_role=tree.seed,
            sub_query=sub_query,
            mapping=tuple(sorted(mapping.items(), key=lambda kv: term_key(kv[0]))),
            x_set=x_terms,
            y_set=y_set,
            tree=tuple(nodes),
            g_times=g_times,
            realizers=realizers,
        )
        key = (
            tree.seed,
            frozenset(q_h_data),
            frozenset((_render_key(n), e) for (_, n, e) in realizers),
            tuple(sorted((_render_key(n) for n in nodes))),
            x_terms,
            y_set,
        )
        found.setdefault(key, wit)


def _node_key(n: Id) -> tuple:
    if isinstance(n, str):
        return (0, n, ())
    return (1, n.depth, n.render())


def _render_key(n: Id) -> str:
    return n if isinstance(n, str) else n.render()


# ---------------------------------------------------------------------------
# Witness formulas and assembly


def _delta_parts(x: Term, y: Term, e: int, namer: Iterator[str]) -> list[PAtom]:
    """δ-chain atoms asserting that y is at least e after x (exactly 0 apart
    for e = 0, mirrored for negative e)."""
    if e == 0:
        a, b = sorted((x, y), key=term_key)
        return [PAtom(EqAtom(a, b))]
    if e < 0:
        return _delta_parts(y, x, -e, namer)
    chain = [x] + [Var(next(namer)) for _ in range(e - 1)] + [y]
    return [PAtom(LessAtom(a, b)) for a, b in zip(chain, chain[1:])]


def _witness_peq(
    ctbox: ConfTBox,
    w: TreeWitness,
    wid: int,
    tables: Mapping[Head, tuple[frozenset[Atom], ...]],
    memo: dict[Atom, PEQ],
    ext_namer: Iterator[str],
    faithful: bool = False,
) -> PEQ:
    anon = sorted((n for n in w.tree if isinstance(n, AnonId)), key=_node_key)
    rv: dict[AnonId, Var] = {n: Var(f"__r{wid}_{i}") for i, n in enumerate(anon)}
    c0 = anon[0]
    consts = sorted((t for t in w.x_set if isinstance(t, IndConst)), key=term_key)
    if faithful or not w.x_set:
        rep: Term = Var(f"__x{wid}")
        eq_targets = sorted(w.x_set, key=term_key)
    else:
        rep = consts[0] if consts else sorted(w.x_set, key=term_key)[0]
        eq_targets = [t for t in sorted(w.x_set, key=term_key) if t != rep]
    # In the assembled rewriting the root-edge instant r_a and the root
    # child's variable coincide (their δ-exponent is always 0); the faithful
    # form keeps them apart the way the witness formula is usually displayed.
    anchor: Term = Var(f"__r{wid}_a") if faithful else rv[c0]
    parts: list[PEQ] = [
        _atom_peq(ConceptAtom(_hat_name(w.seed_role), rep, anchor), tables, ext_namer, memo)
    ]
    for t in eq_targets:
        a, b = sorted((t, rep), key=term_key)
        parts.append(PAtom(EqAtom(a, b)))
    namer = fresh_namer(f"__d{wid}_")
    for node in anon:
        if node.depth >= 2:
            parts.extend(
                _delta_parts(rv[node.parent()], rv[node], node.steps[-1][0], namer)
            )
        elif faithful:
            parts.extend(_delta_parts(anchor, rv[node], node.steps[-1][0], namer))
    for atom, node, e in w.realizers:
        parts.extend(_delta_parts(rv[node], atom.time, e, namer))
    return p_and(parts)


def witness_formula(w: TreeWitness, ctbox: ConfTBox, caps: Caps = DEFAULT_CAPS) -> PEQ:
    """The formula asserting the data forces this witness's anonymous tree."""
    tables = _ext_tables(ctbox, caps, None)
    return _witness_peq(
        ctbox, w, 0, tables, {}, fresh_namer("__e"), faithful=True
    )


def _compatible(a: TreeWitness, b: TreeWitness) -> bool:
    terms_a = a.x_set | a.y_set
    terms_b = b.x_set | b.y_set
    return (terms_a & terms_b) <= (a.x_set & b.x_set)


def assemble_qstar(ctbox: ConfTBox, q: CQ, caps: Caps = DEFAULT_CAPS) -> PEQ:
    """Combine tree witnesses with the unfolded residue of the query.

    The result is a disjunction over independent witness sets S: the members'
    formulas conjoined with the unfolding of the atoms not covered by S.
    Order atoms are always kept — they constrain witness and data instants
    alike.
    """
    witnesses = enumerate_witnesses(ctbox, q, caps)
    tables = _ext_tables(ctbox, caps, None)
    memo: dict[Atom, PEQ] = {}
    ext_namer = fresh_namer("__e")
    # Witnesses covering the same atoms through the same shared terms are
    # interchangeable alternatives: a set containing two of them demands
    # strictly more of the data than the set with either alone while freeing
    # the same atoms, so its disjunct is subsumed.  Each equivalence class
    # hence enters a combination at most once, as one member or another.
    classes: dict[tuple, list[int]] = {}
    for i, w in enumerate(witnesses):
        key = (
            tuple(sorted(map(atom_key, w.sub_query.atoms))),
            tuple(sorted(w.x_set, key=term_key)),
            tuple(sorted(w.y_set, key=term_key)),
        )
        classes.setdefault(key, []).append(i)
    members = [classes[k] for k in sorted(classes)]
    reps = [witnesses[ids[0]] for ids in members]
    # Members of one class share their variable numbering: alternatives that
    # only differ in internal node identity then render to the same formula
    # and collapse, while distinct classes keep disjoint variables.
    cparts = [
        p_or(
            list(
                dict.fromkeys(
                    _witness_peq(ctbox, witnesses[i], ci, tables, memo, ext_namer)
                    for i in ids
                )
            )
        )
        for ci, ids in enumerate(members)
    ]
    n = len(reps)
    compat = [
        [i != j and _compatible(reps[i], reps[j]) for j in range(n)]
        for i in range(n)
    ]
    subsets: list[tuple[int, ...]] = []

    def grow(chosen: list[int], start: int) -> None:
        subsets.append(tuple(chosen))
        if len(subsets) > caps.ucq_disjuncts:
            raise SizeCapExceeded(f"more than {caps.ucq_disjuncts} witness sets")
        for j in range(start, n):
            if all(compat[i][j] for i in chosen):
                chosen.append(j)
                grow(chosen, j + 1)
                chosen.pop()

    grow([], 0)
    order_parts = [PAtom(a) for a in sorted(q.order_atoms(), key=atom_key)]
    data = sorted(q.data_atoms(), key=atom_key)
    disjuncts: list[PEQ] = []
    for S in subsets:
        removed: set[Atom] = set()
        for i in S:
            removed |= set(reps[i].sub_query.atoms) & set(data)
        parts = [cparts[i] for i in S]
        parts.extend(
            _atom_peq(a, tables, ext_namer, memo) for a in data if a not in removed
        )
        parts.extend(order_parts)
        disjuncts.append(p_and(parts))
    return p_or(disjuncts)


# ---------------------------------------------------------------------------
# End-to-end pipeline


def _eliminate_bound_eqs(
    atoms: frozenset[Atom], keep: set[str]
) -> frozenset[Atom] | None:
    """Substitute away equalities involving a bound variable; None if false."""
    work = set(atoms)
    while True:
        step: dict[Term, Term] | None = None
        for a in sorted(work, key=atom_key):
            if not isinstance(a, EqAtom):
                continue
            l, r = a.left, a.right
            if l == r:
                work.remove(a)
                step = {}
                break
            if isinstance(l, Var) and l.name not in keep:
                step = {l: r}
            elif isinstance(r, Var) and r.name not in keep:
                step = {r: l}
            elif (
                isinstance(l, IndConst)
                and isinstance(r, IndConst)
                or isinstance(l, TimeConst)
                and isinstance(r, TimeConst)
            ):
                return None  # distinct constants equated
            else:
                continue
            break
        if step is None:
            return frozenset(work)
        if step:
            work = set(substitute_atoms(work, step))


def _has_internal_data_atom(body: Iterable[Atom]) -> bool:
    return any(
        isinstance(a, DATA_ATOMS) and is_internal_name(a.name) for a in body
    )


def rewrite_conf(ctbox: ConfTBox, q: CQ, caps: Caps = DEFAULT_CAPS) -> UCQ:
    """Rewrite a query against an ontology already in marker normal form."""
    answer_names = {v.name for v in q.answer_vars}
    base = _eliminate_bound_eqs(frozenset(q.atoms), answer_names)
    if base is None:
        return UCQ(q.name, q.answer_vars, ())
    bodies: list[frozenset[Atom]] = []
    for variant in totally_ordered_expansion(CQ(q.name, q.answer_vars, base)):
        star = assemble_qstar(ctbox, variant, caps)
        try:
            flat = flatten_peq(star, caps.ucq_disjuncts)
        except CapExceeded as exc:
            raise SizeCapExceeded(str(exc)) from exc
        for raw in flat:
            body = _eliminate_bound_eqs(raw, answer_names)
            if body is None or _has_internal_data_atom(body):
                continue
            bodies.append(body)
        if len(bodies) > caps.ucq_disjuncts:
            raise SizeCapExceeded(
                f"more than {caps.ucq_disjuncts} disjuncts before pruning"
            )
    reduced = reduce_unbounded(UCQ.of(q.name, q.answer_vars, bodies))
    pruned = prune_subsumed(reduced.disjuncts, frozenset(answer_names))
    return UCQ.of(q.name, q.answer_vars, pruned)


def full_rewrite(tbox: TBox, q: CQ, caps: Caps = DEFAULT_CAPS) -> UCQ:
    """Rewrite a query against an arbitrary ontology.

    Evaluating the result over the raw data (with its order) yields exactly
    the certain answers over consistent data sets.
    """
    return rewrite_conf(normalize(tbox), q, caps)


def consistency_rewrite(tbox: TBox, caps: Caps = DEFAULT_CAPS) -> UCQ:
    """A boolean union of CQs that fires iff ontology + data are inconsistent."""
    ctbox = normalize(tbox)
    safe, qbot = bottomize(ctbox)
    bodies: list[frozenset[Atom]] = []
    for cq in qbot.cqs():
        bodies.extend(rewrite_conf(safe, cq, caps).disjuncts)
    return UCQ.of("qbot", (), bodies)
