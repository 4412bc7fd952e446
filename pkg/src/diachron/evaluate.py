"""Query evaluation over finite data, certain answers, and a slow oracle.

Two independent routes compute certain answers.  The pipeline route
(`certain_answers`) compiles the ontology away with the rewrite module and
evaluates the result directly on the data instance.  The oracle route
(`oracle_certain_answers`) never touches the rewriting: it materializes a
bounded canonical structure with the chase and searches for query
homomorphisms by backtracking.  Keeping the routes disjoint is what makes
differential testing between them meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Union

from .chase import Id, bounded_canonical, is_consistent
from .core import ABox, ConceptName, TBox
from .normalize import ConfTBox, normalize
from .queries import (
    Atom,
    CQ,
    ConceptAtom,
    RoleAtom,
    DATA_ATOMS,
    EqAtom,
    IndConst,
    LessAtom,
    PAnd,
    PAtom,
    PEQ,
    POr,
    Term,
    TimeConst,
    UCQ,
    Var,
    atom_terms,
    term_key,
    var_sorts,
)
from .rewrite import Caps, DEFAULT_CAPS, SizeCapExceeded, consistency_rewrite, full_rewrite
from .timeset import EMPTY as _EMPTY_TS, TimeSet


class ConstantOutOfDomain(ValueError):
    """A temporal constant of the query lies outside the data's timeline."""


@dataclass(frozen=True, slots=True)
class AllTuples:
    """Marker answer set of an inconsistent knowledge base.

    Everything follows from a contradiction, so every tuple of the right
    shape is vacuously certain; returning a finite set would be misleading.
    """

    def __bool__(self) -> bool:
        return True


ALL_TUPLES = AllTuples()

AnswerSet = Union[frozenset, AllTuples]


# ---------------------------------------------------------------------------
# Data instances


@dataclass(frozen=True)
class DataInstance:
    """A finite ABox together with the order over its convex time closure.

    ``time_lo``/``time_hi`` bound the temporal active domain (None for empty
    data); the precedence relation is virtual — two instants of the domain
    compare as integers — and is never materialized.
    """

    abox: ABox
    individuals: tuple[str, ...]
    time_lo: int | None
    time_hi: int | None
    concepts: Mapping[str, tuple[tuple[str, int], ...]] = field(repr=False)
    roles: Mapping[str, tuple[tuple[str, str, int], ...]] = field(repr=False)

    @property
    def is_empty(self) -> bool:
        return self.time_lo is None

    @property
    def time_domain(self) -> range:
        if self.time_lo is None or self.time_hi is None:
            return range(0)
        return range(self.time_lo, self.time_hi + 1)


def build_data_instance(abox: ABox, margin: int = 0) -> DataInstance:
    """Index an ABox for evaluation; ``margin`` widens the convex closure."""
    concepts: dict[str, list[tuple[str, int]]] = {}
    roles: dict[str, list[tuple[str, str, int]]] = {}
    for f in sorted(abox.concept_facts):
        concepts.setdefault(f.name, []).append((f.ind, f.time))
    for f in sorted(abox.role_facts):
        roles.setdefault(f.name, []).append((f.subj, f.obj, f.time))
    if abox.is_empty:
        lo = hi = None
    else:
        lo, hi = abox.time_range()
        lo, hi = lo - margin, hi + margin
    return DataInstance(
        abox=abox,
        individuals=abox.individuals(),
        time_lo=lo,
        time_hi=hi,
        concepts={k: tuple(v) for k, v in concepts.items()},
        roles={k: tuple(v) for k, v in roles.items()},
    )


# ---------------------------------------------------------------------------
# Active-domain evaluation


def _order_args(atoms: frozenset[Atom]) -> Iterator[tuple[Atom, Term, Term]]:
    for a in atoms:
        if isinstance(a, (LessAtom, EqAtom)):
            yield a, a.left, a.right


def _check_constants(atoms: frozenset[Atom], di: DataInstance) -> None:
    for a in atoms:
        for t in atom_terms(a):
            if isinstance(t, TimeConst) and not (
                di.time_lo is not None and di.time_lo <= t.value <= di.time_hi
            ):
                raise ConstantOutOfDomain(
                    f"timestamp {t.value} lies outside the data's timeline"
                )


def _answer_sorts(
    answer_vars: tuple[Var, ...],
    *atom_sets: frozenset[Atom],
    extra: Mapping[str, str] | None = None,
) -> dict[str, str]:
    """Sort of every answer variable, resolved across all given bodies."""
    merged: dict[str, str] = {}
    for atoms in atom_sets:
        for name, sort in var_sorts(atoms).items():
            merged.setdefault(name, sort)
    for name, sort in (extra or {}).items():
        merged.setdefault(name, sort)
    out = {}
    for v in answer_vars:
        sort = merged.get(v.name)
        if sort is None:
            raise ValueError(f"cannot infer the sort of answer variable ?{v.name}")
        out[v.name] = sort
    return out


def _body_answers(
    atoms: frozenset[Atom],
    answer_vars: tuple[Var, ...],
    di: DataInstance,
    sort_hint: Mapping[str, str],
) -> set[tuple]:
    data = sorted(
        (a for a in atoms if isinstance(a, DATA_ATOMS)),
        key=lambda a: -sum(not isinstance(t, Var) for t in atom_terms(a)),
    )
    if di.is_empty and data:
        return set()
    _check_constants(atoms, di)
    sorts = dict(sort_hint)
    sorts.update(var_sorts(atoms))
    order = list(_order_args(atoms))

    def value(t: Term, env: dict[Var, object]):
        if isinstance(t, Var):
            return env.get(t)
        if isinstance(t, IndConst):
            return t.name
        return t.value

    def orders_hold(env: dict[Var, object]) -> bool:
        for a, l, r in order:
            lv, rv = value(l, env), value(r, env)
            if lv is None or rv is None:
                continue
            if isinstance(a, LessAtom):
                if not lv < rv:
                    return False
            elif lv != rv:
                return False
        return True

    def bind(term: Term, val: object, env: dict[Var, object]) -> dict | None:
        have = value(term, env)
        if have is not None:
            return env if have == val else None
        out = dict(env)
        out[term] = val
        return out

    results: set[tuple] = set()
    residual = sorted(
        {
            v
            for a in atoms
            for v in atom_terms(a)
            if isinstance(v, Var)
        }
        | set(answer_vars),
        key=term_key,
    )

    def finish(i: int, env: dict[Var, object]) -> None:
        while i < len(residual) and residual[i] in env:
            i += 1
        if i == len(residual):
            results.add(tuple(env[v] for v in answer_vars))
            return
        v = residual[i]
        domain = (
            di.individuals if sorts.get(v.name) == "ind" else di.time_domain
        )
        for val in domain:
            ext = dict(env)
            ext[v] = val
            if orders_hold(ext):
                finish(i + 1, ext)

    def extend(i: int, env: dict[Var, object]) -> None:
        if i == len(data):
            finish(0, env)
            return
        atom = data[i]
        if isinstance(atom, ConceptAtom):
            for ind, time in di.concepts.get(atom.name, ()):
                e1 = bind(atom.ind, ind, env)
                e2 = e1 if e1 is None else bind(atom.time, time, e1)
                if e2 is not None and orders_hold(e2):
                    extend(i + 1, e2)
        else:
            for subj, obj, time in di.roles.get(atom.name, ()):
                e1 = bind(atom.subj, subj, env)
                e2 = e1 if e1 is None else bind(atom.obj, obj, e1)
                e3 = e2 if e2 is None else bind(atom.time, time, e2)
                if e3 is not None and orders_hold(e3):
                    extend(i + 1, e3)

    extend(0, {})
    return results


def _iter_peq_bodies(p: PEQ) -> Iterator[frozenset[Atom]]:
    """Disjuncts of a PEQ, produced lazily (never materialized as a UCQ)."""
    if isinstance(p, PAtom):
        yield frozenset((p.atom,))
        return
    if isinstance(p, POr):
        for part in p.parts:
            yield from _iter_peq_bodies(part)
        return

    def product(idx: int) -> Iterator[frozenset[Atom]]:
        if idx == len(p.parts):
            yield frozenset()
            return
        for left in _iter_peq_bodies(p.parts[idx]):
            for right in product(idx + 1):
                yield left | right

    yield from product(0)


def evaluate(
    query: Union[UCQ, CQ, PEQ],
    di: DataInstance,
    answer_vars: tuple[Var, ...] | None = None,
    caps: Caps = DEFAULT_CAPS,
    sorts: Mapping[str, str] | None = None,
) -> frozenset:
    """Two-sorted active-domain evaluation of a query over a data instance.

    Individual quantifiers range over the data's individuals, temporal ones
    over the convex closure of its timestamps.  For a bare PEQ the answer
    variables must be supplied (default: every variable, in name order).
    """
    if isinstance(query, UCQ):
        free = query.answer_vars if answer_vars is None else answer_vars
        hint = (
            _answer_sorts(free, *query.disjuncts, extra=sorts)
            if free and query.disjuncts
            else {}
        )
        out: set[tuple] = set()
        for body in query.disjuncts:
            out |= _body_answers(body, free, di, hint)
        return frozenset(out)
    if isinstance(query, CQ):
        free = query.answer_vars if answer_vars is None else answer_vars
        hint = _answer_sorts(free, query.atoms, extra=sorts) if free else {}
        return frozenset(_body_answers(query.atoms, free, di, hint))
    bodies = []
    seen: set[frozenset[Atom]] = set()
    for body in _iter_peq_bodies(query):
        if body in seen:
            continue
        seen.add(body)
        bodies.append(body)
        if len(bodies) > caps.ucq_disjuncts:
            raise SizeCapExceeded(
                f"evaluation would cross {caps.ucq_disjuncts} disjuncts"
            )
    if answer_vars is None:
        names = sorted({v.name for b in bodies for a in b for v in atom_terms(a) if isinstance(v, Var)})
        answer_vars = tuple(Var(n) for n in names)
    hint = _answer_sorts(answer_vars, *bodies, extra=sorts) if answer_vars and bodies else {}
    out = set()
    for body in bodies:
        out |= _body_answers(body, answer_vars, di, hint)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Certain answers through the rewriting


def _require_constants_in(q: CQ, abox: ABox) -> None:
    times = set(abox.times())
    for a in q.atoms:
        for t in atom_terms(a):
            if isinstance(t, TimeConst) and t.value not in times:
                raise ConstantOutOfDomain(
                    f"timestamp {t.value} does not occur in the data"
                )


def certain_answers(tbox: TBox, abox: ABox, q: CQ, caps: Caps = DEFAULT_CAPS) -> AnswerSet:
    """Answers entailed in every model, via rewriting and evaluation.

    Consistency is decided first — by the falsum rewriting, cross-checked
    against the chase — and an inconsistent knowledge base yields the
    ALL_TUPLES marker.  Otherwise the rewriting of ``q`` is evaluated over
    the data and the result restricted to the timestamps that occur in it.
    """
    _require_constants_in(q, abox)
    di = build_data_instance(abox)
    ctbox = normalize(tbox)
    falsum_fires = bool(evaluate(consistency_rewrite(tbox, caps), di))
    if falsum_fires == is_consistent(ctbox, abox):
        raise RuntimeError(
            "internal error: consistency by rewriting and by chase disagree"
        )
    if falsum_fires:
        return ALL_TUPLES
    sorts = _answer_sorts(q.answer_vars, q.atoms)
    raw = evaluate(full_rewrite(tbox, q, caps), di, sorts=sorts)
    temporal = [i for i, v in enumerate(q.answer_vars) if sorts[v.name] == "tem"]
    times = set(abox.times())
    return frozenset(t for t in raw if all(t[i] in times for i in temporal))


# ---------------------------------------------------------------------------
# The chase-based oracle


def _novelty_depth(ctbox: ConfTBox) -> int:
    """Levels after which the anonymous part stops introducing new roles.

    A child's concept type is a function of the role that spawned it, so the
    subtree below a node is determined, up to a time shift, by that role and
    the remaining depth.  Walking the spawns-a-child-of relation between
    roles, the set of roles reachable from any seed stops growing after at
    most this many steps; deeper levels only repeat shifted copies of
    shallower subtrees.  A requirement already satisfied by the child's own
    parent edge (the back edge and everything in the pair support) never
    spawns, so it does not count.
    """
    from .chase import patterns_for
    from .core import ExistsRole

    spawns: dict[object, set[object]] = {}
    for rho in ctbox.roles:
        pattern = patterns_for(ctbox)[rho]
        child = pattern.child_dict()
        from_edge: dict[object, TimeSet] = {}
        for sigma, ts in pattern.pair:
            inv = sigma.inverse
            from_edge[inv] = from_edge.get(inv, _EMPTY_TS).union(ts)
        out = set()
        for sigma in ctbox.roles:
            required = child.get(ExistsRole(sigma), _EMPTY_TS)
            covered = from_edge.get(sigma, _EMPTY_TS)
            if not required.is_empty and required.union(covered) != covered:
                out.add(sigma)
        spawns[rho] = out
    worst = 0
    for seed in ctbox.roles:
        seen = {seed}
        frontier = {seed}
        steps = 0
        while frontier:
            frontier = {s for r in frontier for s in spawns[r]} - seen
            seen |= frontier
            steps += bool(frontier)
        worst = max(worst, steps)
    return worst


def oracle_margins(ctbox: ConfTBox, q: CQ) -> tuple[int, int]:
    """Tree depth and time margin sufficient for the oracle's chase.

    The image of a query descends one anonymous level per role atom, plus
    however many levels the ontology needs before deeper subtrees are mere
    shifted copies of shallower ones; one spare level is added on top.  The
    margin allows one boundary shift per role reference plus one instant per
    query atom, again with slack.  Answer stability under enlarged margins
    is asserted separately by tests.
    """
    role_atoms = sum(1 for a in q.atoms if isinstance(a, RoleAtom))
    d = role_atoms + _novelty_depth(ctbox) + 1
    ell = len(ctbox.roles) + len(q.atoms) + 3
    return d, ell


def oracle_certain_answers(
    tbox: TBox,
    abox: ABox,
    q: CQ,
    d: int | None = None,
    ell: int | None = None,
) -> AnswerSet:
    """Certain answers by brute force over the bounded canonical structure.

    Fully independent of the rewriting: the knowledge base is saturated by
    the chase and a homomorphism from the query is searched by backtracking,
    with answer variables restricted to the data's individuals and
    timestamps.  Existential temporal variables range over a grid of all
    support-row boundaries (± one step per query atom): between consecutive
    boundaries every row is constant, so a satisfying assignment can be
    shifted onto the grid without changing any atom or strict inequality.
    """
    _require_constants_in(q, abox)
    ctbox = normalize(tbox)
    if not is_consistent(ctbox, abox):
        return ALL_TUPLES
    d0, ell0 = oracle_margins(ctbox, q)
    chase = bounded_canonical(ctbox, abox, d if d is not None else d0, ell if ell is not None else ell0)
    if chase.inconsistent:
        raise RuntimeError("internal error: chase routes disagree on consistency")

    concept_rows: dict[str, list[tuple[Id, TimeSet]]] = {}
    for (basic, u), ts in chase.concept_rows.items():
        if isinstance(basic, ConceptName):
            concept_rows.setdefault(basic.name, []).append((u, ts))
    role_rows: dict[str, list[tuple[Id, Id, TimeSet]]] = {}
    for (name, a, b), ts in chase.role_rows.items():
        role_rows.setdefault(name, []).append((a, b, ts))

    win = chase.window
    slack = len(q.atoms) + 1
    base: set[int] = set(abox.times()) | {win.lo, win.hi}
    for rows in concept_rows.values():
        for _, ts in rows:
            base.update(ts.boundary_points())
    for rows in role_rows.values():
        for _, _, ts in rows:
            base.update(ts.boundary_points())
    grid = sorted(
        {
            n + j
            for n in base
            for j in range(-slack, slack + 1)
            if win.lo <= n + j <= win.hi
        }
    )

    sorts = var_sorts(q.atoms)
    answers: set[str] = {v.name for v in q.answer_vars}
    ind_answers = set(abox.individuals())
    tem_answers = set(abox.times())

    def admissible(term: Term, val: object) -> bool:
        if not isinstance(term, Var) or term.name not in answers:
            return True
        if sorts.get(term.name) == "ind":
            return val in ind_answers
        return val in tem_answers

    data = sorted(
        q.data_atoms(),
        key=lambda a: -sum(not isinstance(t, Var) for t in atom_terms(a)),
    )
    order = list(_order_args(q.atoms))

    def value(t: Term, env: dict):
        if isinstance(t, Var):
            return env.get(t)
        if isinstance(t, IndConst):
            return t.name
        return t.value

    def orders_hold(env: dict) -> bool:
        for a, l, r in order:
            lv, rv = value(l, env), value(r, env)
            if lv is None or rv is None:
                continue
            if isinstance(a, LessAtom):
                if not lv < rv:
                    return False
            elif lv != rv:
                return False
        return True

    def bind(term: Term, val: object, env: dict) -> dict | None:
        have = value(term, env)
        if have is not None:
            return env if have == val else None
        if not admissible(term, val):
            return None
        out = dict(env)
        out[term] = val
        return out

    def time_choices(term: Term, ts: TimeSet, env: dict) -> list:
        have = value(term, env)
        if have is not None:
            return [have] if have in ts else []
        pool = (
            tem_answers
            if isinstance(term, Var) and term.name in answers
            else grid
        )
        return [t for t in pool if t in ts]

    found: set[tuple] = set()

    def finish(pending: list[Var], env: dict) -> None:
        pending = [v for v in pending if v not in env]
        if not pending:
            found.add(tuple(env[v] for v in q.answer_vars))
            return
        v, rest = pending[0], pending[1:]
        if sorts.get(v.name) == "ind":
            domain = ind_answers if v.name in answers else all_ids
        else:
            domain = tem_answers if v.name in answers else grid
        for val in domain:
            ext = dict(env)
            ext[v] = val
            if orders_hold(ext):
                finish(rest, ext)

    all_ids = sorted(
        {u for rows in concept_rows.values() for u, _ in rows}
        | {x for rows in role_rows.values() for a_, b_, _ in rows for x in (a_, b_)}
        | set(abox.individuals()),
        key=repr,
    )

    residual = sorted(
        {v for a in q.atoms for v in atom_terms(a) if isinstance(v, Var)}
        | set(q.answer_vars),
        key=term_key,
    )

    def extend(i: int, env: dict) -> None:
        if i == len(data):
            finish(residual, env)
            return
        atom = data[i]
        if isinstance(atom, ConceptAtom):
            for u, ts in concept_rows.get(atom.name, ()):
                e1 = bind(atom.ind, u, env)
                if e1 is None:
                    continue
                for t in time_choices(atom.time, ts, e1):
                    e2 = bind(atom.time, t, e1)
                    if e2 is not None and orders_hold(e2):
                        extend(i + 1, e2)
        else:
            for a_, b_, ts in role_rows.get(atom.name, ()):
                e1 = bind(atom.subj, a_, env)
                e2 = e1 if e1 is None else bind(atom.obj, b_, e1)
                if e2 is None:
                    continue
                for t in time_choices(atom.time, ts, e2):
                    e3 = bind(atom.time, t, e2)
                    if e3 is not None and orders_hold(e3):
                        extend(i + 1, e3)

    extend(0, {})
    return frozenset(found)
