"""Saturation engine and canonical-structure construction.

The closure state keeps one exact support set per atom row (a concept on
an individual, or a role on an ordered pair), so the infinite timeline is
handled directly: rows are finite unions of points and rays, and every
closure rule is a union/intersect/shift on them.  A window only matters
when a structure is materialized for display.

Anonymous individuals are named by their generating path, e.g.
``a/0.R/1.S`` for the S-child created one instant after the R-child of a.
Edges to anonymous children carry the whole entailed pair pattern of the
generating role, so one spawned edge can satisfy many pending
existentials at once — and can retroactively cover spots that earlier
looked unsatisfied, which is why spawning proceeds in ascending time
order with re-saturation after every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Union

from .core import (
    ABox,
    BasicConcept,
    Bot,
    ConceptAnd,
    ConceptDiamond,
    ConceptInclusion,
    ExistsRole,
    Inclusion,
    RoleAnd,
    RoleDiamond,
    RoleInclusion,
    RoleRef,
    signature,
)
from .normalize import ConfTBox, NormalTBox, is_flat, is_internal_name
from .timeset import EMPTY, TimeSet


@dataclass(frozen=True, slots=True, order=True)
class AnonId:
    """A fresh individual, identified by how it was generated.

    ``steps`` alternates (offset, role): each child is created by a role
    edge some offset after its parent's generating edge (the first offset
    is an absolute instant).
    """

    root: str
    steps: tuple[tuple[int, RoleRef], ...]

    @property
    def depth(self) -> int:
        return len(self.steps)

    def edge_time(self) -> int:
        return sum(n for n, _ in self.steps)

    def edge_role(self) -> RoleRef:
        return self.steps[-1][1]

    def parent(self) -> Id:
        if len(self.steps) == 1:
            return self.root
        return AnonId(self.root, self.steps[:-1])

    def render(self) -> str:
        return self.root + "".join(f"/{n}.{r.render()}" for n, r in self.steps)


Id = Union[str, AnonId]


def child_of(parent: Id, role: RoleRef, time: int) -> AnonId:
    """The anonymous ``role``-child of ``parent`` generated at ``time``."""
    if isinstance(parent, str):
        return AnonId(parent, ((time, role),))
    return AnonId(parent.root, parent.steps + ((time - parent.edge_time(), role),))


def render_id(ident: Id) -> str:
    return ident if isinstance(ident, str) else ident.render()


def depth_of(ident: Id) -> int:
    return 0 if isinstance(ident, str) else ident.depth


def _id_key(ident: Id) -> tuple:
    return (0, ident, ()) if isinstance(ident, str) else (1, ident.root, ident.steps)


@dataclass(frozen=True, slots=True)
class TimeWindow:
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError("empty time window")

    @staticmethod
    def covering(abox: ABox, margin: int) -> TimeWindow:
        lo, hi = abox.time_range()
        return TimeWindow(lo - margin, hi + margin)

    def times(self) -> range:
        return range(self.lo, self.hi + 1)


# ---------------------------------------------------------------------------
# Rules


@dataclass(frozen=True, slots=True)
class _ConceptRule:
    kind: str  # "and" | "P" | "F"
    sources: tuple[BasicConcept, ...]
    target: BasicConcept


@dataclass(frozen=True, slots=True)
class _RoleRule:
    kind: str
    sources: tuple[RoleRef, ...]
    target: RoleRef  # possibly the bottom role


def _split_rules(
    inclusions: Iterable[Inclusion],
) -> tuple[tuple[_ConceptRule, ...], tuple[_RoleRule, ...]]:
    c_rules: list[_ConceptRule] = []
    r_rules: list[_RoleRule] = []
    for inc in sorted(inclusions, key=repr):
        if isinstance(inc, ConceptInclusion):
            match inc.lhs:
                case ConceptAnd(b1, b2):
                    c_rules.append(_ConceptRule("and", (b1, b2), inc.rhs))
                case ConceptDiamond(op, b):
                    c_rules.append(_ConceptRule(op.value, (b,), inc.rhs))
                case _:
                    raise ValueError(f"not in normal form: {inc!r}")
        else:
            match inc.lhs:
                case RoleAnd(RoleRef() as s1, RoleRef() as s2):
                    base = _RoleRule("and", (s1, s2), inc.rhs)
                case RoleDiamond(op, RoleRef() as s):
                    base = _RoleRule(op.value, (s,), inc.rhs)
                case _:
                    raise ValueError(f"not in normal form: {inc!r}")
            r_rules.append(base)
            r_rules.append(
                _RoleRule(
                    base.kind,
                    tuple(s.inverse for s in base.sources),
                    base.target if base.target.is_bot else base.target.inverse,
                )
            )
    return tuple(c_rules), tuple(r_rules)


def _derive(kind: str, supports: tuple[TimeSet, ...]) -> TimeSet:
    if kind == "and":
        return supports[0].intersect(supports[1])
    if kind == "P":
        return supports[0].diamond_past()
    return supports[0].diamond_future()


# ---------------------------------------------------------------------------
# Closure state


class GroundClosure:
    """Exact closure rows over named and anonymous individuals."""

    def __init__(self) -> None:
        self.concepts: dict[tuple[BasicConcept, Id], TimeSet] = {}
        self.roles: dict[tuple[str, Id, Id], TimeSet] = {}
        self.role_bot: bool = False
        self.rounds: int = 0
        self.edges: list[tuple[Id, AnonId, RoleRef, int]] = []
        # Rows changed since they were last processed by the saturation
        # phases; lets repeated saturations skip the stable bulk.
        self.dirty_inds: set[Id] = set()
        self.dirty_pairs: set[tuple[Id, Id]] = set()
        self.dirty_ex: set[tuple[str, Id, Id]] = set()

    # -- access ------------------------------------------------------------

    def concept_support(self, basic: BasicConcept, u: Id) -> TimeSet:
        return self.concepts.get((basic, u), EMPTY)

    def role_support(self, ref: RoleRef, a: Id, b: Id) -> TimeSet:
        if ref.inverted:
            return self.roles.get((ref.name, b, a), EMPTY)
        return self.roles.get((ref.name, a, b), EMPTY)

    def individuals(self) -> list[Id]:
        ids = {u for _, u in self.concepts}
        ids.update(a for _, a, _ in self.roles)
        ids.update(b for _, _, b in self.roles)
        return sorted(ids, key=_id_key)

    @property
    def inconsistent(self) -> bool:
        if self.role_bot:
            return True
        return any(
            isinstance(key[0], Bot) and not ts.is_empty for key, ts in self.concepts.items()
        )

    # -- mutation ----------------------------------------------------------

    def add_concept(self, basic: BasicConcept, u: Id, ts: TimeSet) -> bool:
        if ts.is_empty:
            return False
        key = (basic, u)
        old = self.concepts.get(key, EMPTY)
        new = old.union(ts)
        if new == old:
            return False
        self.concepts[key] = new
        self.dirty_inds.add(u)
        return True

    def add_role(self, ref: RoleRef, a: Id, b: Id, ts: TimeSet) -> bool:
        if ts.is_empty:
            return False
        if ref.is_bot:
            if not self.role_bot:
                self.role_bot = True
                return True
            return False
        key = (ref.name, b, a) if ref.inverted else (ref.name, a, b)
        old = self.roles.get(key, EMPTY)
        new = old.union(ts)
        if new == old:
            return False
        self.roles[key] = new
        self.dirty_pairs.add((key[1], key[2]))
        self.dirty_ex.add(key)
        return True

    def seed_abox(self, abox: ABox) -> None:
        from .core import ConceptName

        for f in sorted(abox.concept_facts):
            self.add_concept(ConceptName(f.name), f.ind, TimeSet.of(f.time))
        for f in sorted(abox.role_facts):
            self.add_role(RoleRef(f.name), f.subj, f.obj, TimeSet.of(f.time))


_SAFETY_CAP = 1_000_000


def _apply_role_rules(
    state: GroundClosure,
    rules: tuple[_RoleRule, ...],
    pairs: Iterable[tuple[Id, Id]] | None = None,
) -> list:
    """Additions (not yet applied) derivable from the current role rows."""
    base = {(a, b) for _, a, b in state.roles} if pairs is None else set(pairs)
    ordered = sorted(
        base | {(b, a) for a, b in base},
        key=lambda p: (_id_key(p[0]), _id_key(p[1])),
    )
    out = []
    for a, b in ordered:
        for rule in rules:
            derived = _derive(rule.kind, tuple(state.role_support(s, a, b) for s in rule.sources))
            if not derived.is_empty:
                out.append(("role", rule.target, a, b, derived))
    return out


def _apply_ex_rule(
    state: GroundClosure, keys: Iterable[tuple[str, Id, Id]] | None = None
) -> list:
    chosen = state.roles.keys() if keys is None else keys
    out = []
    for name, a, b in sorted(chosen, key=lambda k: (k[0], _id_key(k[1]), _id_key(k[2]))):
        ts = state.roles.get((name, a, b), EMPTY)
        if ts.is_empty:
            continue
        out.append(("concept", ExistsRole(RoleRef(name)), a, ts))
        out.append(("concept", ExistsRole(RoleRef(name, inverted=True)), b, ts))
    return out


def _apply_concept_rules(
    state: GroundClosure,
    rules: tuple[_ConceptRule, ...],
    inds: Iterable[Id] | None = None,
) -> list:
    individuals = state.individuals() if inds is None else sorted(inds, key=_id_key)
    out = []
    for u in individuals:
        for rule in rules:
            derived = _derive(
                rule.kind, tuple(state.concept_support(s, u) for s in rule.sources)
            )
            if not derived.is_empty:
                out.append(("concept", rule.target, u, derived))
    return out


def _apply_additions(state: GroundClosure, additions: list) -> bool:
    changed = False
    for add in additions:
        if add[0] == "concept":
            _, basic, u, ts = add
            changed |= state.add_concept(basic, u, ts)
        else:
            _, ref, a, b, ts = add
            changed |= state.add_role(ref, a, b, ts)
    return changed


def saturate_synchronous(
    state: GroundClosure, c_rules: tuple[_ConceptRule, ...], r_rules: tuple[_RoleRule, ...]
) -> None:
    """Apply all rules simultaneously per round, counting changing rounds."""
    while True:
        additions = (
            _apply_role_rules(state, r_rules)
            + _apply_ex_rule(state)
            + _apply_concept_rules(state, c_rules)
        )
        if not _apply_additions(state, additions):
            return
        state.rounds += 1
        if state.rounds > _SAFETY_CAP:
            raise AssertionError("saturation failed to stabilize")


def saturate_phased(
    state: GroundClosure, c_rules: tuple[_ConceptRule, ...], r_rules: tuple[_RoleRule, ...]
) -> None:
    """Role rules to fixpoint, then (ex), then concept rules to fixpoint.

    Driven by the closure's dirty sets: every rule is local to one pair or
    one individual, so only rows changed since their last visit can derive
    anything new, and the stable bulk is skipped.  Concept rows never feed
    back into role rules, so one drain of each phase reaches the fixpoint.
    """
    sweeps = 0
    while state.dirty_pairs or state.dirty_ex or state.dirty_inds:
        while state.dirty_pairs:
            batch = state.dirty_pairs
            state.dirty_pairs = set()
            _apply_additions(state, _apply_role_rules(state, r_rules, batch))
            sweeps += 1
            if sweeps > _SAFETY_CAP:
                raise AssertionError("saturation failed to stabilize")
        if state.dirty_ex:
            batch_ex = state.dirty_ex
            state.dirty_ex = set()
            _apply_additions(state, _apply_ex_rule(state, batch_ex))
        while state.dirty_inds:
            batch_inds = state.dirty_inds
            state.dirty_inds = set()
            _apply_additions(state, _apply_concept_rules(state, c_rules, batch_inds))
            sweeps += 1
            if sweeps > _SAFETY_CAP:
                raise AssertionError("saturation failed to stabilize")


def ground_closure(ctbox: ConfTBox, abox: ABox) -> GroundClosure:
    """Saturate the data under all inclusions, without anonymous spawning."""
    state = GroundClosure()
    state.seed_abox(abox)
    c_rules, r_rules = _split_rules(ctbox.all_inclusions())
    saturate_phased(state, c_rules, r_rules)
    return state


# ---------------------------------------------------------------------------
# Flat closure


def flat_closure(ntbox: NormalTBox, abox: ABox, window: TimeWindow | None = None) -> ChaseStructure:
    """The full closure of the data under a flat ontology.

    With no existentials on right-hand sides the closure introduces no
    anonymous individuals, so the rows are the entire canonical model.
    """
    if not is_flat(ntbox):
        raise ValueError("flat_closure requires a flat ontology")
    state = GroundClosure()
    state.seed_abox(abox)
    c_rules, r_rules = _split_rules(ntbox.inclusions)
    saturate_synchronous(state, c_rules, r_rules)
    if window is None:
        window = TimeWindow.covering(abox, signature(ntbox.tbox()).size + 1)
    return materialize(state, window)


# ---------------------------------------------------------------------------
# Role patterns


@dataclass(frozen=True, slots=True)
class RolePattern:
    """What one generating edge entails, shifted to edge time 0.

    ``pair`` gives role support sets on the ordered pair (parent, child);
    ``child_type`` and ``root_type`` give concept support sets of the two
    endpoints, each derivable from the single seed ∃R because the marker
    tables replay everything the edge entails.
    """

    role: RoleRef
    pair: tuple[tuple[RoleRef, TimeSet], ...]
    child_type: tuple[tuple[BasicConcept, TimeSet], ...]
    root_type: tuple[tuple[BasicConcept, TimeSet], ...]
    pair_bot: bool

    def pair_dict(self) -> dict[RoleRef, TimeSet]:
        return dict(self.pair)

    def child_dict(self) -> dict[BasicConcept, TimeSet]:
        return dict(self.child_type)

    def root_dict(self) -> dict[BasicConcept, TimeSet]:
        return dict(self.root_type)

    @property
    def child_bot(self) -> bool:
        return any(isinstance(b, Bot) and not ts.is_empty for b, ts in self.child_type)

    @property
    def root_bot(self) -> bool:
        return any(isinstance(b, Bot) and not ts.is_empty for b, ts in self.root_type)


def close_concept_type(
    ctbox: ConfTBox, seeds: Mapping[BasicConcept, TimeSet]
) -> dict[BasicConcept, TimeSet]:
    """Concept-rule closure of support sets on a single element."""
    c_rules, _ = _split_rules(ctbox.all_inclusions())
    rows: dict[BasicConcept, TimeSet] = {b: ts for b, ts in seeds.items() if not ts.is_empty}
    for _ in range(_SAFETY_CAP):
        changed = False
        for rule in c_rules:
            derived = _derive(rule.kind, tuple(rows.get(s, EMPTY) for s in rule.sources))
            if derived.is_empty:
                continue
            old = rows.get(rule.target, EMPTY)
            new = old.union(derived)
            if new != old:
                rows[rule.target] = new
                changed = True
        if not changed:
            return rows
    raise AssertionError("type closure failed to stabilize")


def _sorted_type(rows: Mapping[BasicConcept, TimeSet]):
    from .core import sort_key

    return tuple(sorted(rows.items(), key=lambda kv: sort_key(kv[0])))


@lru_cache(maxsize=None)
def patterns_for(ctbox: ConfTBox) -> Mapping[RoleRef, RolePattern]:
    out: dict[RoleRef, RolePattern] = {}
    for rho in ctbox.roles:
        pair = ctbox.pair_support(rho)
        child = close_concept_type(ctbox, {ExistsRole(rho.inverse): TimeSet.of(0)})
        root = close_concept_type(ctbox, {ExistsRole(rho): TimeSet.of(0)})
        out[rho] = RolePattern(
            role=rho,
            pair=tuple(sorted(pair.items())),
            child_type=_sorted_type(child),
            root_type=_sorted_type(root),
            pair_bot=ctbox.is_pair_bot(rho),
        )
    return out


@lru_cache(maxsize=None)
def bot_reachable(ctbox: ConfTBox) -> frozenset[RoleRef]:
    """Roles whose anonymous subtree inevitably derives ⊥."""
    patterns = patterns_for(ctbox)
    bad = {
        rho
        for rho, pat in patterns.items()
        if pat.pair_bot or pat.child_bot
    }
    edges: dict[RoleRef, set[RoleRef]] = {}
    for rho, pat in patterns.items():
        child = pat.child_dict()
        edges[rho] = {
            sigma
            for sigma in ctbox.roles
            if not child.get(ExistsRole(sigma), EMPTY).is_empty
        }
    while True:
        grown = {rho for rho, succ in edges.items() if succ & bad} - bad
        if not grown:
            return frozenset(bad)
        bad |= grown


def is_consistent(ctbox: ConfTBox, abox: ABox) -> bool:
    """True iff the closure never derives ⊥, on data or anonymous parts."""
    state = ground_closure(ctbox, abox)
    if state.inconsistent:
        return False
    bad = bot_reachable(ctbox)
    if not bad:
        return True
    for (basic, _), ts in state.concepts.items():
        if isinstance(basic, ExistsRole) and basic.role in bad and not ts.is_empty:
            return False
    return True


# ---------------------------------------------------------------------------
# Canonical structures with anonymous individuals


def _spawn(state: GroundClosure, ctbox: ConfTBox, parent: Id, role: RoleRef, time: int) -> AnonId:
    child = child_of(parent, role, time)
    state.edges.append((parent, child, role, time))
    pattern = patterns_for(ctbox)[role]
    for sigma, ts in pattern.pair:
        state.add_role(sigma, parent, child, ts.shift(time))
    # The child arrives with its entire closed type.  Its only connection is
    # the edge just added, whose consequences the type already contains, so
    # the child is born at fixpoint and never needs a saturation visit; the
    # rows go in directly, without marking the child dirty.
    for basic, ts in pattern.child_type:
        shifted = ts.shift(time)
        if shifted.is_empty:
            continue
        key = (basic, child)
        old = state.concepts.get(key)
        state.concepts[key] = shifted if old is None else old.union(shifted)
    return child


def _coverage(state: GroundClosure) -> dict[tuple[str, bool, Id], list[TimeSet]]:
    """Index role rows by (role name, inverted?, source endpoint)."""
    cov: dict[tuple[str, bool, Id], list[TimeSet]] = {}
    for (name, a, b), ts in state.roles.items():
        cov.setdefault((name, False, a), []).append(ts)
        cov.setdefault((name, True, b), []).append(ts)
    return cov


def _is_covered(
    cov: Mapping[tuple[str, bool, Id], list[TimeSet]], u: Id, role: RoleRef, t: int
) -> bool:
    return any(t in ts for ts in cov.get((role.name, role.inverted, u), ()))


def _spawn_loop(
    state: GroundClosure, ctbox: ConfTBox, window: TimeWindow, depth: int
) -> None:
    c_rules, r_rules = _split_rules(ctbox.all_inclusions())
    saturate_phased(state, c_rules, r_rules)
    while True:
        spots = []
        for (basic, u), ts in state.concepts.items():
            if not isinstance(basic, ExistsRole) or depth_of(u) >= depth:
                continue
            for t in ts.iter_window(window.lo, window.hi):
                spots.append((t, basic.role, _id_key(u), u))
        # One saturation per wave of children, not one per child.  Processing
        # spots in ascending order against a live row index is faithful to the
        # spawn-then-resaturate loop: a fresh edge already carries the closed
        # pair rows of its pattern, and saturation never extends the role rows
        # of an existing pair beyond that closure, so coverage of the later
        # spots is decided by the same rows either way.
        cov = _coverage(state)
        spawned = False
        for t, role, _, u in sorted(spots):
            if _is_covered(cov, u, role, t):
                continue
            child = _spawn(state, ctbox, u, role, t)
            for sigma, ts in patterns_for(ctbox)[role].pair:
                a, b = (child, u) if sigma.inverted else (u, child)
                shifted = ts.shift(t)
                cov.setdefault((sigma.name, False, a), []).append(shifted)
                cov.setdefault((sigma.name, True, b), []).append(shifted)
            spawned = True
        if not spawned:
            return
        saturate_phased(state, c_rules, r_rules)


def bounded_canonical(ctbox: ConfTBox, abox: ABox, d: int, ell: int) -> ChaseStructure:
    """The canonical model, materialized to depth ``d`` and margin ``ell``."""
    window = TimeWindow.covering(abox, ell)
    state = GroundClosure()
    state.seed_abox(abox)
    _spawn_loop(state, ctbox, window, d)
    return materialize(state, window)


def anonymous_canonical(ctbox: ConfTBox, seed_role: RoleRef, d: int, ell: int) -> ChaseStructure:
    """The canonical model grown from one seed edge at the origin."""
    window = TimeWindow(-ell, ell)
    state = GroundClosure()
    state.add_concept(ExistsRole(seed_role), "a", TimeSet.of(0))
    if d >= 1:
        _spawn(state, ctbox, "a", seed_role, 0)
    _spawn_loop(state, ctbox, window, d)
    return materialize(state, window)


# ---------------------------------------------------------------------------
# Materialized view


@dataclass
class ChaseStructure:
    """A canonical structure restricted to a window, with tail flags."""

    window: TimeWindow
    concept_atoms: frozenset[tuple[BasicConcept, Id, int]]
    role_atoms: frozenset[tuple[RoleRef, Id, Id, int]]
    edges: frozenset[tuple[Id, AnonId, RoleRef, int]]
    inconsistent: bool
    rounds: int
    concept_tails: frozenset[tuple[BasicConcept, Id, str]]
    role_tails: frozenset[tuple[RoleRef, Id, Id, str]]
    concept_rows: dict[tuple[BasicConcept, Id], TimeSet] = field(repr=False, default_factory=dict)
    role_rows: dict[tuple[str, Id, Id], TimeSet] = field(repr=False, default_factory=dict)

    def dump(self) -> str:
        lines: list[str] = []
        if self.inconsistent:
            lines.append("inconsistent")
        body: list[str] = []
        for basic, u, t in self.concept_atoms:
            name = _render_basic(basic)
            if name is None:
                continue
            body.append(f"{name}({render_id(u)}, {t})")
        for basic, u, tail in self.concept_tails:
            name = _render_basic(basic)
            if name is None:
                continue
            body.append(f"{name}({render_id(u)}, *) [{tail}]")
        for ref, a, b, t in self.role_atoms:
            if is_internal_name(ref.name):
                continue
            body.append(f"{ref.name}({render_id(a)}, {render_id(b)}, {t})")
        for ref, a, b, tail in self.role_tails:
            if is_internal_name(ref.name):
                continue
            body.append(f"{ref.name}({render_id(a)}, {render_id(b)}, *) [{tail}]")
        return "\n".join(lines + sorted(body)) + "\n"


def _render_basic(basic: BasicConcept) -> str | None:
    from .core import ConceptName

    match basic:
        case ConceptName(name):
            return None if is_internal_name(name) else name
        case ExistsRole(role):
            return None if is_internal_name(role.name) else f"exists {role.render()}"
        case Bot():
            return None
    return None


def materialize(state: GroundClosure, window: TimeWindow) -> ChaseStructure:
    concept_atoms = set()
    concept_tails = set()
    for (basic, u), ts in state.concepts.items():
        for t in ts.iter_window(window.lo, window.hi):
            concept_atoms.add((basic, u, t))
        if ts.past is not None:
            concept_tails.add((basic, u, "past"))
        if ts.future is not None:
            concept_tails.add((basic, u, "future"))
    role_atoms = set()
    role_tails = set()
    for (name, a, b), ts in state.roles.items():
        ref = RoleRef(name)
        for t in ts.iter_window(window.lo, window.hi):
            role_atoms.add((ref, a, b, t))
        if ts.past is not None:
            role_tails.add((ref, a, b, "past"))
        if ts.future is not None:
            role_tails.add((ref, a, b, "future"))
    return ChaseStructure(
        window=window,
        concept_atoms=frozenset(concept_atoms),
        role_atoms=frozenset(role_atoms),
        edges=frozenset(state.edges),
        inconsistent=state.inconsistent,
        rounds=state.rounds,
        concept_tails=frozenset(concept_tails),
        role_tails=frozenset(role_tails),
        concept_rows=dict(state.concepts),
        role_rows=dict(state.roles),
    )
