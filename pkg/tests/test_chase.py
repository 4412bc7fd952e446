"""Tests for the saturation engine and canonical structures.

Expected rows in the frozen tests were derived by hand, rule by rule,
before the engine existed; the golden dump fixture freezes the same
derivation end to end.
"""

from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diachron.chase import (
    AnonId,
    GroundClosure,
    TimeWindow,
    _apply_concept_rules,
    _apply_ex_rule,
    _apply_role_rules,
    _apply_additions,
    _split_rules,
    anonymous_canonical,
    bot_reachable,
    bounded_canonical,
    child_of,
    flat_closure,
    ground_closure,
    is_consistent,
    patterns_for,
    render_id,
)
from diachron.core import (
    ABox,
    Bot,
    ConceptAnd,
    ConceptDiamond,
    ConceptFact,
    ConceptInclusion,
    ConceptName,
    ExistsRole,
    RoleDiamond,
    RoleFact,
    RoleInclusion,
    RoleRef,
    TBox,
    TemporalOp,
    bounds,
    signature,
)
from diachron.normalize import normalize, to_normal_form
from diachron.textio import parse_abox, parse_tbox
from diachron.timeset import ALL, TimeSet

FIXTURES = Path(__file__).parent / "fixtures"


def _branching_ctbox():
    return normalize(
        parse_tbox(
            "A <= exists R\n"
            "role: P[R] <= Q\n"
            "exists inv(Q) <= exists S\n"
            "role: P[Q] <= P\n"
            "role: P[S] <= Sp"
        )
    )


# ---------------------------------------------------------------------------
# Identifiers and windows


def test_anonymous_ids_record_generating_path():
    v = child_of("a", RoleRef("R"), 0)
    u1 = child_of(v, RoleRef("S"), 1)
    u2 = child_of(v, RoleRef("S"), 2)
    assert v == AnonId("a", ((0, RoleRef("R")),))
    assert u1.steps == ((0, RoleRef("R")), (1, RoleRef("S")))
    assert u1.render() == "a/0.R/1.S"
    assert u2.render() == "a/0.R/2.S"
    assert u1.edge_time() == 1 and u2.edge_time() == 2
    assert u1.parent() == v and v.parent() == "a"
    assert (v.depth, u1.depth) == (1, 2)
    w = child_of(u1, RoleRef("S", inverted=True), -1)
    assert w.render() == "a/0.R/1.S/-2.inv(S)"
    assert w.edge_time() == -1
    assert render_id("bob") == "bob"


def test_window_covers_data_with_margin():
    abox = parse_abox("A(a, -3)\nB(b, 7)")
    assert TimeWindow.covering(abox, 2) == TimeWindow(-5, 9)
    assert list(TimeWindow(0, 2).times()) == [0, 1, 2]
    with pytest.raises(ValueError):
        TimeWindow(3, 1)


# ---------------------------------------------------------------------------
# Flat closure


def test_flat_closure_derives_rays():
    # From C(a, 0): A holds at all earlier instants, hence B everywhere.
    ntbox = to_normal_form(parse_tbox("P[A] <= B\nF[C] <= A"))
    cs = flat_closure(ntbox, parse_abox("C(a, 0)"))
    assert cs.concept_rows[(ConceptName("A"), "a")] == TimeSet.past_ray(-1)
    assert cs.concept_rows[(ConceptName("B"), "a")] == ALL
    assert cs.concept_rows[(ConceptName("C"), "a")] == TimeSet.of(0)
    assert (ConceptName("A"), "a", "past") in cs.concept_tails
    assert (ConceptName("A"), "a", "future") not in cs.concept_tails
    assert (ConceptName("B"), "a", "past") in cs.concept_tails
    assert (ConceptName("B"), "a", "future") in cs.concept_tails
    # margin is one more than the signature size (three concept names)
    assert cs.window == TimeWindow(-4, 4)
    assert cs.rounds == 2
    assert not cs.inconsistent


def test_flat_closure_fills_convex_gap():
    ntbox = to_normal_form(parse_tbox("P[Lect] <= Xp\nF[Lect] <= Xf\nXp & Xf <= Lect"))
    cs = flat_closure(ntbox, parse_abox("Lect(a, 10)\nLect(a, 20)"))
    assert cs.concept_rows[(ConceptName("Lect"), "a")] == TimeSet.of(*range(10, 21))


def test_flat_closure_rejects_generating_ontologies():
    ntbox = to_normal_form(parse_tbox("A <= exists R"))
    with pytest.raises(ValueError):
        flat_closure(ntbox, parse_abox("A(a, 0)"))


def test_empty_ontology_closure_adds_only_projections():
    ntbox = to_normal_form(TBox(frozenset()))
    cs = flat_closure(ntbox, parse_abox("R(a, b, 3)"), window=TimeWindow(0, 5))
    assert cs.concept_rows[(ExistsRole(RoleRef("R")), "a")] == TimeSet.of(3)
    assert cs.concept_rows[(ExistsRole(RoleRef("R", inverted=True)), "b")] == TimeSet.of(3)
    assert cs.role_rows[("R", "a", "b")] == TimeSet.of(3)
    assert cs.rounds == 1


_CONCEPTS = st.sampled_from(["A", "B", "C", "D"]).map(ConceptName)
_ROLE_REFS = st.builds(RoleRef, st.sampled_from(["r", "s"]), st.booleans())
_BASICS = st.one_of(_CONCEPTS, st.builds(ExistsRole, _ROLE_REFS))
_LHS = st.recursive(
    _BASICS,
    lambda sub: st.one_of(
        st.builds(ConceptAnd, sub, sub),
        st.builds(ConceptDiamond, st.sampled_from(TemporalOp), sub),
    ),
    max_leaves=4,
)
_FLAT_INCLUSIONS = st.builds(ConceptInclusion, _LHS, _CONCEPTS)
_ROLE_INCLUSIONS = st.builds(
    RoleInclusion,
    st.one_of(_ROLE_REFS, st.builds(RoleDiamond, st.sampled_from(TemporalOp), _ROLE_REFS)),
    _ROLE_REFS,
)
_FLAT_TBOXES = st.frozensets(st.one_of(_FLAT_INCLUSIONS, _ROLE_INCLUSIONS), max_size=6).map(TBox)
_ABOXES = st.builds(
    ABox,
    st.frozensets(
        st.builds(
            ConceptFact,
            st.sampled_from(["A", "B", "C"]),
            st.sampled_from(["a", "b"]),
            st.integers(-3, 3),
        ),
        max_size=4,
    ),
    st.frozensets(
        st.builds(
            RoleFact,
            st.sampled_from(["r", "s"]),
            st.sampled_from(["a", "b"]),
            st.sampled_from(["a", "b"]),
            st.integers(-3, 3),
        ),
        max_size=3,
    ),
)


@settings(max_examples=60, deadline=None)
@given(_FLAT_TBOXES, _ABOXES)
def test_flat_closure_round_count_and_idempotence(tbox, abox):
    ntbox = to_normal_form(tbox)
    cs = flat_closure(ntbox, abox)
    assert cs.rounds <= max(1, bounds(signature(ntbox.tbox()).size, 1).n_t)
    # one more synchronous pass over the final rows must add nothing
    state = GroundClosure()
    state.concepts = dict(cs.concept_rows)
    state.roles = dict(cs.role_rows)
    c_rules, r_rules = _split_rules(ntbox.inclusions)
    additions = (
        _apply_role_rules(state, r_rules)
        + _apply_ex_rule(state)
        + _apply_concept_rules(state, c_rules)
    )
    assert not _apply_additions(state, additions)


@settings(max_examples=40, deadline=None)
@given(_FLAT_TBOXES, _ABOXES)
def test_rule_order_does_not_change_the_closure(tbox, abox):
    from diachron.chase import saturate_phased, saturate_synchronous

    ntbox = to_normal_form(tbox)
    c_rules, r_rules = _split_rules(ntbox.inclusions)
    sync = GroundClosure()
    sync.seed_abox(abox)
    saturate_synchronous(sync, c_rules, r_rules)
    phased = GroundClosure()
    phased.seed_abox(abox)
    saturate_phased(phased, c_rules, r_rules)
    assert sync.concepts == phased.concepts
    assert sync.roles == phased.roles
    assert sync.role_bot == phased.role_bot


@settings(max_examples=40, deadline=None)
@given(_FLAT_TBOXES, _ABOXES)
def test_rows_are_constant_beyond_the_window(tbox, abox):
    ntbox = to_normal_form(tbox)
    cs = flat_closure(ntbox, abox)
    lo, hi = cs.window.lo, cs.window.hi
    for ts in list(cs.concept_rows.values()) + list(cs.role_rows.values()):
        for probe in range(2, 6):
            assert ((lo - probe) in ts) == ((lo - 1) in ts)
            assert ((hi + probe) in ts) == ((hi + 1) in ts)


# ---------------------------------------------------------------------------
# Canonical structures with anonymous individuals


def test_branching_ontology_materializes_expected_tree():
    ctbox = _branching_ctbox()
    cs = bounded_canonical(ctbox, parse_abox("A(a, 0)"), d=2, ell=2)
    v = child_of("a", RoleRef("R"), 0)
    u1 = child_of(v, RoleRef("S"), 1)
    u2 = child_of(v, RoleRef("S"), 2)
    assert cs.window == TimeWindow(-2, 2)
    assert cs.edges == frozenset(
        {("a", v, RoleRef("R"), 0), (v, u1, RoleRef("S"), 1), (v, u2, RoleRef("S"), 2)}
    )
    R, Q, P, S, Sp = (RoleRef(n) for n in ("R", "Q", "P", "S", "Sp"))
    assert (R, "a", v, 0) in cs.role_atoms
    assert (Q, "a", v, 1) in cs.role_atoms
    assert (Q, "a", v, 2) in cs.role_atoms
    assert (P, "a", v, 2) in cs.role_atoms
    assert (P, "a", v, 1) not in cs.role_atoms
    assert (S, v, u1, 1) in cs.role_atoms
    assert (Sp, v, u1, 2) in cs.role_atoms
    assert (S, v, u2, 2) in cs.role_atoms
    # the second branch derives its successor role only beyond the window
    assert not any(ref == Sp and a == v and b == u2 for ref, a, b, _ in cs.role_atoms)
    assert (Sp, v, u2, "future") in cs.role_tails
    assert (ConceptName("A"), "a", 0) in cs.concept_atoms
    assert (ExistsRole(S), v, 1) in cs.concept_atoms
    assert not cs.inconsistent


def test_branching_dump_matches_golden_fixture():
    ctbox = _branching_ctbox()
    cs = bounded_canonical(ctbox, parse_abox("A(a, 0)"), d=2, ell=2)
    assert cs.dump() == (FIXTURES / "branching_chase.txt").read_text()


def test_dump_hides_bookkeeping_names():
    ctbox = _branching_ctbox()
    cs = bounded_canonical(ctbox, parse_abox("A(a, 0)"), d=2, ell=2)
    assert "__" not in cs.dump()
    # ...but the rows themselves keep them
    assert any(
        isinstance(b, ConceptName) and b.name.startswith("__") for b, _ in cs.concept_rows
    )


def test_depth_zero_keeps_only_named_individuals():
    ctbox = _branching_ctbox()
    cs = bounded_canonical(ctbox, parse_abox("A(a, 0)"), d=0, ell=2)
    assert cs.edges == frozenset()
    assert {u for _, u, _ in cs.concept_atoms} == {"a"}
    assert (ExistsRole(RoleRef("R")), "a", 0) in cs.concept_atoms


def test_seeded_structure_matches_data_rooted_one():
    ctbox = _branching_ctbox()
    seeded = anonymous_canonical(ctbox, RoleRef("R"), d=2, ell=2)
    rooted = bounded_canonical(ctbox, parse_abox("A(a, 0)"), d=2, ell=2)
    assert seeded.window == TimeWindow(-2, 2)
    assert seeded.edges == rooted.edges
    assert seeded.role_atoms == rooted.role_atoms
    # the only difference on concepts is the data atom A(a, 0)
    assert rooted.concept_atoms - seeded.concept_atoms == {(ConceptName("A"), "a", 0)}


def test_seeded_structure_depth_zero_is_the_root_type():
    ctbox = _branching_ctbox()
    cs = anonymous_canonical(ctbox, RoleRef("R"), d=0, ell=2)
    assert cs.edges == frozenset()
    assert {u for _, u, _ in cs.concept_atoms} == {"a"}
    assert (ExistsRole(RoleRef("Q")), "a", 1) in cs.concept_atoms
    assert (ExistsRole(RoleRef("P")), "a", 2) in cs.concept_atoms


def test_growing_the_window_only_adds_atoms():
    ctbox = _branching_ctbox()
    small = bounded_canonical(ctbox, parse_abox("A(a, 0)"), d=2, ell=1)
    large = bounded_canonical(ctbox, parse_abox("A(a, 0)"), d=2, ell=2)
    assert small.concept_atoms <= large.concept_atoms
    assert small.role_atoms <= large.role_atoms
    assert small.edges <= large.edges


def test_growing_the_depth_only_adds_atoms():
    ctbox = _branching_ctbox()
    shallow = bounded_canonical(ctbox, parse_abox("A(a, 0)"), d=1, ell=2)
    deep = bounded_canonical(ctbox, parse_abox("A(a, 0)"), d=2, ell=2)
    assert shallow.concept_atoms <= deep.concept_atoms
    assert shallow.role_atoms <= deep.role_atoms
    assert shallow.edges < deep.edges


# ---------------------------------------------------------------------------
# Patterns


def test_role_pattern_entailments_are_exact():
    ctbox = _branching_ctbox()
    pattern = patterns_for(ctbox)[RoleRef("R")]
    pair = pattern.pair_dict()
    assert pair[RoleRef("R")] == TimeSet.of(0)
    assert pair[RoleRef("Q")] == TimeSet.future_ray(1)
    assert pair[RoleRef("P")] == TimeSet.future_ray(2)
    assert pair[RoleRef("S")].is_empty
    child = pattern.child_dict()
    assert child[ExistsRole(RoleRef("R", inverted=True))] == TimeSet.of(0)
    assert child[ExistsRole(RoleRef("S"))] == TimeSet.future_ray(1)
    root = pattern.root_dict()
    assert root[ExistsRole(RoleRef("Q"))] == TimeSet.future_ray(1)
    assert root[ExistsRole(RoleRef("P"))] == TimeSet.future_ray(2)
    assert not pattern.pair_bot and not pattern.child_bot


def test_patterns_are_cached_per_ontology():
    ctbox = _branching_ctbox()
    assert patterns_for(ctbox) is patterns_for(ctbox)


# ---------------------------------------------------------------------------
# Consistency


def test_repeated_instantaneous_role_is_inconsistent():
    ctbox = normalize(parse_tbox("role: givesBirth & P[givesBirth] <= bot"))
    assert not is_consistent(ctbox, parse_abox("givesBirth(m, c, 5)\ngivesBirth(m, c, 9)"))
    assert is_consistent(ctbox, parse_abox("givesBirth(m, c, 5)"))
    cs = ground_closure(ctbox, parse_abox("givesBirth(m, c, 5)\ngivesBirth(m, c, 9)"))
    assert cs.inconsistent


def test_unsatisfiable_successor_is_detected_without_spawning():
    ctbox = normalize(parse_tbox("A <= exists R\nexists inv(R) <= exists S\nexists inv(S) <= bot"))
    assert bot_reachable(ctbox) >= {RoleRef("R"), RoleRef("S")}
    assert not is_consistent(ctbox, parse_abox("A(a, 0)"))
    assert not ground_closure(ctbox, parse_abox("A(a, 0)")).inconsistent
    harmless = normalize(parse_tbox("A <= exists R\nexists inv(R) <= exists S"))
    assert bot_reachable(harmless) == frozenset()
    assert is_consistent(harmless, parse_abox("A(a, 0)"))


def test_empty_data_is_consistent_even_under_unsatisfiable_concepts():
    ctbox = normalize(parse_tbox("A <= bot"))
    assert is_consistent(ctbox, ABox(frozenset(), frozenset()))
    assert not is_consistent(ctbox, parse_abox("A(a, 7)"))


def test_inconsistency_does_not_stop_materialization():
    ctbox = normalize(parse_tbox("A <= bot\nA <= exists R"))
    cs = bounded_canonical(ctbox, parse_abox("A(a, 0)"), d=1, ell=1)
    assert cs.inconsistent
    assert cs.dump().startswith("inconsistent\n")
    assert cs.edges  # the generating edge is still produced
