"""Shared query machinery: order closure, subsumption, PEQ flattening."""

from __future__ import annotations

import pytest

from diachron.queries import (
    CQ,
    CapExceeded,
    ConceptAtom,
    EqAtom,
    IndConst,
    LessAtom,
    OrderInconsistent,
    PAtom,
    RoleAtom,
    SortConflict,
    TimeConst,
    UCQ,
    Var,
    canonical_body,
    flatten_peq,
    hom_subsumes,
    order_closure,
    order_consistent,
    p_and,
    p_or,
    prune_subsumed,
    var_sorts,
)

x, y, t, s, r = Var("x"), Var("y"), Var("t"), Var("s"), Var("r")


def test_var_sorts_and_conflicts():
    atoms = [RoleAtom("R", x, y, t), LessAtom(t, s)]
    assert var_sorts(atoms) == {"x": "ind", "y": "ind", "t": "tem", "s": "tem"}
    with pytest.raises(SortConflict):
        var_sorts([ConceptAtom("A", x, t), LessAtom(x, s)])
    with pytest.raises(SortConflict):
        var_sorts([ConceptAtom("A", IndConst("a"), IndConst("b"))])


def test_order_closure_transitivity_and_constants():
    _, less = order_closure([LessAtom(t, s), LessAtom(s, r)])
    assert (t, r) in less
    # Distinct constants are implicitly ordered.
    _, less = order_closure([ConceptAtom("A", x, TimeConst(1)), ConceptAtom("B", x, TimeConst(5))])
    assert (TimeConst(1), TimeConst(5)) in less


def test_order_closure_equality_classes():
    rep, less = order_closure([EqAtom(t, s), LessAtom(s, r)])
    assert rep[t] == rep[s]
    assert (rep[t], rep[r]) in less
    rep, _ = order_closure([EqAtom(t, TimeConst(3))])
    assert rep[t] == TimeConst(3)


def test_order_inconsistency():
    with pytest.raises(OrderInconsistent):
        order_closure([LessAtom(t, s), LessAtom(s, t)])
    with pytest.raises(OrderInconsistent):
        order_closure([EqAtom(TimeConst(1), TimeConst(2))])
    assert not order_consistent([LessAtom(t, t)])
    assert not order_consistent([LessAtom(TimeConst(4), TimeConst(2))])
    assert order_consistent([LessAtom(t, s), EqAtom(t, TimeConst(0))])


def test_hom_subsumption_through_closure():
    shorter = frozenset({LessAtom(t, s), ConceptAtom("A", x, t)})
    longer = frozenset({LessAtom(Var("t1"), Var("t2")), LessAtom(Var("t2"), s), ConceptAtom("A", x, Var("t1"))})
    # The one-step body is implied by the two-step chain (map t -> t1).
    fixed = frozenset({"x", "s"})
    assert hom_subsumes(shorter, longer, fixed)
    assert not hom_subsumes(longer, shorter, fixed)  # chain var t2 has no image


def test_hom_subsumption_respects_constants():
    g = frozenset({ConceptAtom("A", x, TimeConst(3))})
    s1 = frozenset({ConceptAtom("A", IndConst("a"), TimeConst(3))})
    s2 = frozenset({ConceptAtom("A", IndConst("a"), TimeConst(4))})
    assert hom_subsumes(g, s1)
    assert not hom_subsumes(g, s2)


def test_prune_subsumed_keeps_minimal():
    d1 = frozenset({ConceptAtom("B", x, s)})
    d2 = frozenset({LessAtom(t, s), ConceptAtom("A", x, t)})
    d3 = frozenset({LessAtom(Var("t1"), Var("t2")), LessAtom(Var("t2"), s), ConceptAtom("A", x, Var("t1"))})
    bad = frozenset({LessAtom(t, t)})
    kept = prune_subsumed([d1, d2, d3, bad], fixed=frozenset({"x", "s"}))
    assert d1 in kept and d2 in kept
    assert d3 not in kept and bad not in kept


def test_flatten_peq_distributes():
    a1 = PAtom(ConceptAtom("A", x, t))
    a2 = PAtom(ConceptAtom("B", x, t))
    a3 = PAtom(ConceptAtom("D", x, t))
    peq = p_and([p_or([a1, a2]), a3])
    flat = flatten_peq(peq, cap=10)
    assert len(flat) == 2
    assert frozenset({a1.atom, a3.atom}) in flat
    with pytest.raises(CapExceeded):
        flatten_peq(p_and([p_or([a1, a2]), p_or([a1, a3])]), cap=1)


def test_canonical_body_identifies_alpha_variants():
    b1 = frozenset({ConceptAtom("A", x, Var("u1")), LessAtom(Var("u1"), s)})
    b2 = frozenset({ConceptAtom("A", x, Var("w9")), LessAtom(Var("w9"), s)})
    keep = {"x", "s"}
    assert canonical_body(b1, keep) == canonical_body(b2, keep)


def test_ucq_of_dedupes_and_sorts():
    b1 = frozenset({ConceptAtom("A", x, t)})
    b2 = frozenset({ConceptAtom("B", x, t)})
    u = UCQ.of("q", (x, t), [b2, b1, b1])
    assert len(u.disjuncts) == 2
    assert u.cqs()[0].atoms == b1


def test_cq_views():
    q = CQ("q", (x, t), frozenset({RoleAtom("R", x, y, t), LessAtom(t, s)}))
    assert q.size == 2
    assert len(q.data_atoms()) == 1 and len(q.order_atoms()) == 1
    assert q.variables() == {"x", "y", "t", "s"}
    assert q.temporal_constants() == set()
