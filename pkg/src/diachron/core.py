"""Ontology syntax trees, data sets, and the derived search bounds.

The vocabulary is two-sorted: individuals and integer timestamps.  An
ontology is a finite set of inclusions between temporalized concepts or
roles, where the right-hand side is always *basic* (a concept name, an
``exists R``, a role reference, or bottom) — the type definitions below
make that unrepresentable rather than merely checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Union


class TemporalOp(Enum):
    """The two diamond constructors: sometime in the past / future."""

    SOMETIME_PAST = "P"
    SOMETIME_FUTURE = "F"

    @property
    def mirror(self) -> TemporalOp:
        if self is TemporalOp.SOMETIME_PAST:
            return TemporalOp.SOMETIME_FUTURE
        return TemporalOp.SOMETIME_PAST


# ---------------------------------------------------------------------------
# Roles


@dataclass(frozen=True, slots=True, order=True)
class RoleRef:
    """A role name, possibly inverted, or the bottom role.

    Double inversion is collapsed by :meth:`inverse`, and the bottom role
    has no direction, so values are always in normal form.
    """

    name: str
    inverted: bool = False
    is_bot: bool = False

    def __post_init__(self) -> None:
        if self.is_bot and (self.name or self.inverted):
            raise ValueError("the bottom role has no name and no inverse")

    @staticmethod
    def bot() -> RoleRef:
        return RoleRef("", False, True)

    @property
    def inverse(self) -> RoleRef:
        if self.is_bot:
            return self
        return RoleRef(self.name, not self.inverted)

    def render(self) -> str:
        if self.is_bot:
            return "bot"
        return f"inv({self.name})" if self.inverted else self.name


@dataclass(frozen=True, slots=True)
class RoleAnd:
    left: RoleExpr
    right: RoleExpr


@dataclass(frozen=True, slots=True)
class RoleDiamond:
    op: TemporalOp
    arg: RoleExpr


RoleExpr = Union[RoleRef, RoleAnd, RoleDiamond]


# ---------------------------------------------------------------------------
# Concepts


@dataclass(frozen=True, slots=True)
class Bot:
    """The empty concept."""


@dataclass(frozen=True, slots=True)
class ConceptName:
    name: str


@dataclass(frozen=True, slots=True)
class ExistsRole:
    role: RoleRef

    def __post_init__(self) -> None:
        if self.role.is_bot:
            raise ValueError("exists(bot) must be constructed via basic_exists")


BasicConcept = Union[Bot, ConceptName, ExistsRole]


def basic_exists(role: RoleRef) -> BasicConcept:
    """``exists R`` as a basic concept; ``exists bot`` collapses to bottom."""
    if role.is_bot:
        return Bot()
    return ExistsRole(role)


@dataclass(frozen=True, slots=True)
class ConceptAnd:
    left: ConceptExpr
    right: ConceptExpr


@dataclass(frozen=True, slots=True)
class ConceptDiamond:
    op: TemporalOp
    arg: ConceptExpr


ConceptExpr = Union[BasicConcept, ConceptAnd, ConceptDiamond]


# ---------------------------------------------------------------------------
# Inclusions and TBoxes


@dataclass(frozen=True, slots=True)
class ConceptInclusion:
    lhs: ConceptExpr
    rhs: BasicConcept


@dataclass(frozen=True, slots=True)
class RoleInclusion:
    lhs: RoleExpr
    rhs: RoleRef


Inclusion = Union[ConceptInclusion, RoleInclusion]


def sort_key(node: object) -> tuple:
    """A total order over all syntax-tree nodes, for deterministic output."""
    match node:
        case Bot():
            return ("c0",)
        case ConceptName(name):
            return ("c1", name)
        case ExistsRole(role):
            return ("c2", sort_key(role))
        case ConceptAnd(left, right):
            return ("c3", sort_key(left), sort_key(right))
        case ConceptDiamond(op, arg):
            return ("c4", op.value, sort_key(arg))
        case RoleRef(name, inverted, is_bot):
            return ("r0", is_bot, name, inverted)
        case RoleAnd(left, right):
            return ("r1", sort_key(left), sort_key(right))
        case RoleDiamond(op, arg):
            return ("r2", op.value, sort_key(arg))
        case ConceptInclusion(lhs, rhs):
            return ("i0", sort_key(lhs), sort_key(rhs))
        case RoleInclusion(lhs, rhs):
            return ("i1", sort_key(lhs), sort_key(rhs))
    raise TypeError(f"no sort key for {node!r}")


@dataclass(frozen=True, slots=True)
class TBox:
    inclusions: frozenset[Inclusion] = frozenset()

    @staticmethod
    def of(*inclusions: Inclusion) -> TBox:
        return TBox(frozenset(inclusions))

    def sorted(self) -> list[Inclusion]:
        return sorted(self.inclusions, key=sort_key)

    @property
    def concept_inclusions(self) -> list[ConceptInclusion]:
        return [i for i in self.sorted() if isinstance(i, ConceptInclusion)]

    @property
    def role_inclusions(self) -> list[RoleInclusion]:
        return [i for i in self.sorted() if isinstance(i, RoleInclusion)]


# ---------------------------------------------------------------------------
# Data


@dataclass(frozen=True, slots=True, order=True)
class ConceptFact:
    name: str
    ind: str
    time: int


@dataclass(frozen=True, slots=True, order=True)
class RoleFact:
    name: str
    subj: str
    obj: str
    time: int


Fact = Union[ConceptFact, RoleFact]


@dataclass(frozen=True, slots=True)
class ABox:
    concept_facts: frozenset[ConceptFact] = frozenset()
    role_facts: frozenset[RoleFact] = frozenset()

    @staticmethod
    def of(*facts: Fact) -> ABox:
        return ABox(
            frozenset(f for f in facts if isinstance(f, ConceptFact)),
            frozenset(f for f in facts if isinstance(f, RoleFact)),
        )

    def individuals(self) -> tuple[str, ...]:
        names = {f.ind for f in self.concept_facts}
        for f in self.role_facts:
            names.add(f.subj)
            names.add(f.obj)
        return tuple(sorted(names))

    def times(self) -> tuple[int, ...]:
        """The timestamps occurring in the data, sorted."""
        return tuple(sorted({f.time for f in self.concept_facts} | {f.time for f in self.role_facts}))

    @property
    def is_empty(self) -> bool:
        return not self.concept_facts and not self.role_facts

    def time_range(self) -> tuple[int, int]:
        """Min and max timestamp; ``(0, 0)`` for an empty data set."""
        ts = self.times()
        if not ts:
            return (0, 0)
        return (ts[0], ts[-1])


# ---------------------------------------------------------------------------
# Signature and bounds


@dataclass(frozen=True, slots=True)
class Signature:
    concept_names: frozenset[str]
    role_names: frozenset[str]

    @property
    def size(self) -> int:
        """Total name count; the ``|T|`` that the bounds are built from."""
        return len(self.concept_names) + len(self.role_names)

    def roles_with_inverses(self) -> tuple[RoleRef, ...]:
        """Every role name in both directions, deterministically ordered."""
        out: list[RoleRef] = []
        for name in sorted(self.role_names):
            out.append(RoleRef(name))
            out.append(RoleRef(name, inverted=True))
        return tuple(out)

    @property
    def role_count_with_inverses(self) -> int:
        return 2 * len(self.role_names)


def _collect_role(expr: RoleExpr, roles: set[str]) -> None:
    match expr:
        case RoleRef(name, _, is_bot):
            if not is_bot:
                roles.add(name)
        case RoleAnd(left, right):
            _collect_role(left, roles)
            _collect_role(right, roles)
        case RoleDiamond(_, arg):
            _collect_role(arg, roles)


def _collect_concept(expr: ConceptExpr, concepts: set[str], roles: set[str]) -> None:
    match expr:
        case Bot():
            pass
        case ConceptName(name):
            concepts.add(name)
        case ExistsRole(role):
            _collect_role(role, roles)
        case ConceptAnd(left, right):
            _collect_concept(left, concepts, roles)
            _collect_concept(right, concepts, roles)
        case ConceptDiamond(_, arg):
            _collect_concept(arg, concepts, roles)


def signature(tbox: TBox) -> Signature:
    """The concept and role names occurring anywhere in the ontology."""
    concepts: set[str] = set()
    roles: set[str] = set()
    for inc in tbox.inclusions:
        if isinstance(inc, ConceptInclusion):
            _collect_concept(inc.lhs, concepts, roles)
            _collect_concept(inc.rhs, concepts, roles)
        else:
            _collect_role(inc.lhs, roles)
            _collect_role(inc.rhs, roles)
    return Signature(frozenset(concepts), frozenset(roles))


@dataclass(frozen=True, slots=True)
class Bounds:
    """Derived search limits.

    ``n_t`` bounds the saturation rounds a flat ontology needs, ``depth``
    bounds how deep anonymous trees must be explored, and ``ell`` bounds
    how far in time the bounded canonical structure extends past the data.
    """

    n_t: int
    depth: int
    ell: int


def bounds(size_t: int, q_size: int) -> Bounds:
    """Limits as polynomials in the ontology size and query size.

    ``q_size`` counts every atom of the query, order atoms included.
    """
    if size_t < 0 or q_size < 0:
        raise ValueError("sizes must be non-negative")
    depth = 4 * size_t + q_size
    return Bounds(n_t=(4 * size_t) ** 4, depth=depth, ell=size_t * q_size * depth)
