"""Query compilation: unfolding, expansion, reduction, witnesses, assembly."""

from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from diachron.chase import AnonId, patterns_for
from diachron.core import (
    Bot,
    ConceptDiamond,
    ConceptName,
    ExistsRole,
    RoleAnd,
    RoleDiamond,
    RoleRef,
    TBox,
    TemporalOp,
)
from diachron.normalize import normalize
from diachron.queries import (
    CQ,
    ConceptAtom,
    EqAtom,
    LessAtom,
    RoleAtom,
    TimeConst,
    UCQ,
    Var,
    atom_key,
    atom_terms,
    canonical_body,
    flatten_peq,
    hom_subsumes,
    term_key,
)
from diachron.rewrite import (
    Caps,
    SizeCapExceeded,
    enumerate_witnesses,
    ext_exists_role,
    ext_unfold,
    full_rewrite,
    reduce_unbounded,
    std_translate_concept,
    std_translate_role,
    totally_ordered_expansion,
    witness_formula,
)
from diachron.textio import parse_query, parse_tbox

P, F = TemporalOp.SOMETIME_PAST, TemporalOp.SOMETIME_FUTURE

X, Y, S, T = Var("x"), Var("y"), Var("s"), Var("t")

BRANCHING = """A <= exists R
role: P[R] <= Q
exists inv(Q) <= exists S
role: P[Q] <= P
role: P[S] <= Sp"""

TWO_ROLE_QUERY = "q(?x, ?t) :- ?t < ?t2, Q(?x, ?y, ?t), Sp(?y, ?z, ?t2)"


def _eqsort(atoms) -> frozenset:
    """Put equality arguments in term order (equality is symmetric)."""
    return frozenset(
        EqAtom(*sorted((a.left, a.right), key=term_key)) if isinstance(a, EqAtom) else a
        for a in atoms
    )


def _bodies(p, keep=()) -> set[frozenset]:
    """Flattened disjuncts of a PEQ, normalized up to bound-variable names."""
    return {canonical_body(_eqsort(b), set(keep)) for b in flatten_peq(p, 10**5)}


def _ucq_bodies(u: UCQ) -> set[frozenset]:
    keep = {v.name for v in u.answer_vars}
    return {canonical_body(cq.atoms, keep) for cq in u.cqs()}


# ---------------------------------------------------------------------------
# Standard translation


def test_concept_name_translates_to_its_atom():
    assert _bodies(std_translate_concept(ConceptName("A"), X, S), keep={"x", "s"}) == {
        frozenset({ConceptAtom("A", X, S)})
    }


def test_future_diamond_adds_a_later_instant():
    got = _bodies(std_translate_concept(ConceptDiamond(F, ConceptName("A")), X, S), keep={"x", "s"})
    want = {
        canonical_body(frozenset({LessAtom(S, T), ConceptAtom("A", X, T)}), {"x", "s"})
    }
    assert got == want


def test_exists_role_translates_to_an_edge_with_fresh_target():
    (body,) = _bodies(std_translate_concept(ExistsRole(RoleRef("R")), X, S), keep={"x", "s"})
    (atom,) = body
    assert isinstance(atom, RoleAtom) and atom.name == "R"
    assert atom.subj == X and atom.time == S and isinstance(atom.obj, Var)


def test_hatted_exists_role_stays_atomic():
    (body,) = _bodies(std_translate_concept(ExistsRole(RoleRef("R")), X, S, hatted=True))
    (atom,) = body
    assert isinstance(atom, ConceptAtom) and atom.name.startswith("__")


def test_bottom_translates_to_the_empty_union():
    assert _bodies(std_translate_concept(Bot(), X, S)) == set()


def test_role_translation_unfolds_diamonds_over_conjunctions():
    s_expr = RoleDiamond(P, RoleAnd(RoleRef("R1"), RoleRef("R2")))
    got = _bodies(std_translate_role(s_expr, X, Y, S), keep={"x", "y", "s"})
    want = {
        canonical_body(
            frozenset(
                {LessAtom(T, S), RoleAtom("R1", X, Y, T), RoleAtom("R2", X, Y, T)}
            ),
            {"x", "y", "s"},
        )
    }
    assert got == want


def test_inverted_role_reference_swaps_the_endpoints():
    (body,) = _bodies(std_translate_role(RoleRef("R", inverted=True), X, Y, S), keep={"x", "y", "s"})
    assert body == frozenset({RoleAtom("R", Y, X, S)})


# ---------------------------------------------------------------------------
# ext unfolding


def test_ext_of_exists_role_under_empty_ontology_is_one_edge():
    ct = normalize(TBox(frozenset()))
    (body,) = _bodies(ext_exists_role(ct, RoleRef("P")), keep={"x", "t"})
    (atom,) = body
    assert isinstance(atom, RoleAtom) and atom.name == "P"


def test_ext_of_exists_role_unfolds_generating_axiom():
    ct = normalize(parse_tbox("A <= exists R"))
    got = _bodies(ext_exists_role(ct, RoleRef("R")), keep={"x", "t"})
    xt = (Var("x"), Var("t"))
    assert got == {
        canonical_body(frozenset({RoleAtom("R", xt[0], Var("w"), xt[1])}), {"x", "t"}),
        frozenset({ConceptAtom("A", *xt)}),
    }


def test_ext_unfold_replays_diamond_chain():
    ct = normalize(parse_tbox("F[C] <= A\nP[A] <= B"))
    q = parse_query("q(?x, ?s) :- B(?x, ?s)")
    got = _bodies(ext_unfold(ct, q), keep={"x", "s"})
    u, r = Var("u"), Var("r")
    want = {
        frozenset({ConceptAtom("B", X, S)}),
        canonical_body(frozenset({LessAtom(u, S), ConceptAtom("A", X, u)}), {"x", "s"}),
        # ∃u < min(r, s) always holds, so the C-condition loses its bounds.
        canonical_body(frozenset({ConceptAtom("C", X, r)}), {"x", "s"}),
    }
    assert got == want


def test_ext_unfold_zero_rounds_is_the_identity():
    ct = normalize(parse_tbox("F[C] <= A\nP[A] <= B"))
    q = parse_query("q(?x, ?s) :- B(?x, ?s)")
    assert _bodies(ext_unfold(ct, q, rounds=0), keep={"x", "s"}) == {frozenset(q.atoms)}


def test_ext_tables_are_shared_between_calls():
    ct = normalize(parse_tbox("F[C] <= A\nP[A] <= B"))
    q = parse_query("q(?x, ?s) :- B(?x, ?s)")
    assert repr(ext_unfold(ct, q)) == repr(ext_unfold(ct, q))


# ---------------------------------------------------------------------------
# Totally ordered expansion


def test_expansion_enumerates_orders_of_variable_against_constant():
    q = parse_query("q(?x) :- A(?x, ?t), B(?x, 0)")
    variants = totally_ordered_expansion(q)
    assert len(variants) == 3
    zero = TimeConst(0)
    added = {frozenset(_eqsort(v.atoms - q.atoms)) for v in variants}
    assert added == {
        frozenset({LessAtom(T, zero)}),
        frozenset(_eqsort({EqAtom(zero, T)})),
        frozenset({LessAtom(zero, T)}),
    }


def test_expansion_keeps_an_already_ordered_query_single():
    q = parse_query(TWO_ROLE_QUERY)
    assert totally_ordered_expansion(q) == (q,)


def test_expansion_orders_constants_by_value():
    q = parse_query("q(?x) :- A(?x, 3), B(?x, 5)")
    (variant,) = totally_ordered_expansion(q)
    assert LessAtom(TimeConst(3), TimeConst(5)) in variant.atoms


# ---------------------------------------------------------------------------
# Unbounded-variable reduction


def _one_cq(text: str) -> UCQ:
    q = parse_query(text)
    return UCQ.of(q.name, q.answer_vars, (q.atoms,))


def test_reduce_removes_downward_unbounded_variable():
    u = _one_cq("q(?x, ?s) :- ?t < ?s, ?t < ?r, C(?x, ?r)")
    (cq,) = reduce_unbounded(u).cqs()
    assert cq.atoms == frozenset({ConceptAtom("C", X, Var("r"))})


def test_reduce_keeps_sandwiched_variables():
    u = _one_cq("q(?x, ?s) :- A(?x, ?u), ?u < ?t, ?t < ?s, B(?x, ?s)")
    (cq,) = reduce_unbounded(u).cqs()
    assert cq.atoms == next(iter(u.cqs())).atoms


def test_reduce_drops_variable_that_carries_no_atom():
    u = _one_cq("q(?x, ?s) :- ?t < ?s, A(?x, ?s)")
    (cq,) = reduce_unbounded(u).cqs()
    assert cq.atoms == frozenset({ConceptAtom("A", X, S)})


# ---------------------------------------------------------------------------
# Tree witnesses


def _published_witness(ws):
    for w in ws:
        m = dict(w.mapping)
        if m.get(Var("t")) == 1 and m.get(Var("t2")) == 2:
            y, z = m.get(Var("y")), m.get(Var("z"))
            if (
                m.get(Var("x")) == "a"
                and isinstance(y, AnonId)
                and y.render() == "a/0.R"
                and isinstance(z, AnonId)
                and z.render() == "a/0.R/1.S"
            ):
                return w
    return None


def test_branching_ontology_yields_the_published_witness():
    ct = normalize(parse_tbox(BRANCHING))
    q = parse_query(TWO_ROLE_QUERY)
    w = _published_witness(enumerate_witnesses(ct, q))
    assert w is not None
    assert w.seed_role == RoleRef("R")
    assert w.x_set == frozenset({Var("x")})
    assert w.y_set == frozenset({Var("y"), Var("z")})
    # q_h = q: both data atoms touch a Y-variable, order atoms ride along.
    assert w.sub_query.atoms == q.atoms
    assert w.sub_query.answer_vars == q.answer_vars


def test_witnesses_satisfy_their_own_contract():
    """Independent recheck of every witness against the chase patterns."""
    ct = normalize(parse_tbox(BRANCHING))
    q = parse_query(TWO_ROLE_QUERY)
    patterns = patterns_for(ct)
    ws = enumerate_witnesses(ct, q)
    assert ws
    for w in ws:
        m = dict(w.mapping)
        g = dict(w.g_times)
        assert w.y_set, "witnesses with nothing anonymous are excluded"
        for v in w.y_set:
            assert isinstance(m[v], AnonId)
        for term in w.x_set:
            assert m[term] == "a"
        touched = {
            a
            for a in q.data_atoms()
            if w.y_set & {v for v in atom_terms(a) if isinstance(v, Var)}
        }
        assert touched <= set(w.sub_query.atoms)
        for atom in w.sub_query.data_atoms():
            imgs = [
                m[t] for t in (
                    (atom.ind,) if isinstance(atom, ConceptAtom) else (atom.subj, atom.obj)
                )
            ]
            when = m[atom.time]
            anon = [i for i in imgs if isinstance(i, AnonId)]
            assert anon
            node = max(anon, key=lambda n: n.depth)
            pattern = patterns[node.edge_role()]
            offset = when - g[node]
            if isinstance(atom, ConceptAtom):
                row = pattern.child_dict().get(ConceptName(atom.name))
            else:
                child_is_obj = m[atom.obj] == node
                ref = RoleRef(atom.name, inverted=not child_is_obj)
                row = pattern.pair_dict().get(ref)
            assert row is not None and offset in row


def test_flat_ontology_has_no_witnesses():
    ct = normalize(parse_tbox("P[A] <= B"))
    q = parse_query("q(?x, ?s) :- B(?x, ?s)")
    assert enumerate_witnesses(ct, q) == ()


def test_fully_answered_query_has_no_witnesses():
    ct = normalize(parse_tbox("A <= exists R"))
    q = parse_query("q(?x, ?y, ?t) :- R(?x, ?y, ?t)")
    assert enumerate_witnesses(ct, q) == ()


# ---------------------------------------------------------------------------
# Witness formulas


def test_witness_formula_matches_published_shape():
    ct = normalize(parse_tbox(BRANCHING))
    q = parse_query(TWO_ROLE_QUERY)
    w = _published_witness(enumerate_witnesses(ct, q))
    got = sorted(
        flatten_peq(witness_formula(w, ct), 10**5),
        key=lambda b: sorted(map(atom_key, b)),
    )
    # ∃r_a ∃x_h: ext_∃R(x_h, r_a) ∧ x_h = x ∧ δ⁰(r_a, r_v) ∧ δ¹(r_v, r_u)
    #            ∧ δ¹(r_v, t) ∧ δ¹(r_u, t2), with ext unfolded two ways.
    assert len(got) == 2
    for body in got:
        data = [a for a in body if isinstance(a, (ConceptAtom, RoleAtom))]
        eqs = {frozenset((a.left, a.right)) for a in body if isinstance(a, EqAtom)}
        less = {(a.left, a.right) for a in body if isinstance(a, LessAtom)}
        (d,) = data
        xh = d.ind if isinstance(d, ConceptAtom) else d.subj
        ra = d.time
        assert frozenset((xh, Var("x"))) in eqs
        # δ⁰ merges the anchor with the root representative r_v …
        (rv,) = [t for pair in eqs - {frozenset((xh, Var("x")))} for t in pair - {ra}]
        # … and the three one-step orderings hang off r_v.
        (ru,) = [b for a, b in less if a == rv and b not in (Var("t"), Var("t2"))]
        assert less == {(rv, ru), (rv, Var("t")), (ru, Var("t2"))}
        assert len(eqs) == 2
    names = {d.name for body in got for d in body if isinstance(d, (ConceptAtom, RoleAtom))}
    assert names == {"A", "R"}


def test_deep_offsets_become_delta_chains():
    ct = normalize(parse_tbox("A <= exists R\nrole: P[R] <= Q\nrole: P[Q] <= W"))
    q = parse_query("q(?x, ?t) :- W(?x, ?y, ?t)")
    ws = [w for w in enumerate_witnesses(ct, q) if w.seed_role == RoleRef("R")]
    assert ws
    chains = []
    for w in ws:
        for atom, _node, e in w.realizers:
            if atom.name == "W":
                chains.append(e)
    assert 2 in chains  # the W-support on the seed pair starts two steps up
    w = next(w for w in ws if any(e == 2 for *_prefix, e in w.realizers))
    body = next(iter(_bodies(witness_formula(w, ct), keep={"x", "t"})))
    less = [a for a in body if isinstance(a, LessAtom)]
    assert len(less) == 2  # δ² is a two-link chain through one fresh instant


# ---------------------------------------------------------------------------
# Full pipeline


def test_intro_rewriting_has_expected_two_disjuncts():
    tb = parse_tbox("role: P[givesBirth] <= motherOf")
    q = parse_query("q(?x, ?y, ?t) :- motherOf(?x, ?y, ?t)")
    got = _ucq_bodies(full_rewrite(tb, q))
    u = Var("u")
    want = {
        frozenset({RoleAtom("motherOf", X, Y, T)}),
        canonical_body(
            frozenset({LessAtom(u, T), RoleAtom("givesBirth", X, Y, u)}),
            {"x", "y", "t"},
        ),
    }
    assert got == want


def test_diamond_chain_rewriting_end_to_end():
    tb = parse_tbox("P[A] <= B\nF[C] <= A")
    got = _ucq_bodies(full_rewrite(tb, parse_query("q(?x, ?s) :- B(?x, ?s)")))
    u, r = Var("u"), Var("r")
    want = {
        frozenset({ConceptAtom("B", X, S)}),
        canonical_body(frozenset({LessAtom(u, S), ConceptAtom("A", X, u)}), {"x", "s"}),
        canonical_body(frozenset({ConceptAtom("C", X, r)}), {"x", "s"}),
    }
    assert got == want


def test_empty_ontology_rewriting_is_the_query_itself():
    q = parse_query("q(?x, ?s) :- B(?x, ?s)")
    u = full_rewrite(TBox(frozenset()), q)
    assert _ucq_bodies(u) == {frozenset(q.atoms)}
    assert u.answer_vars == q.answer_vars


def test_branching_rewriting_contains_the_witness_disjunct():
    tb = parse_tbox(BRANCHING)
    u = full_rewrite(tb, parse_query(TWO_ROLE_QUERY))
    bodies = _ucq_bodies(u)
    r = Var("r")
    witness_disjunct = canonical_body(
        frozenset({LessAtom(r, T), ConceptAtom("A", X, r)}), {"x", "t"}
    )
    assert witness_disjunct in bodies
    for body in bodies:
        for a in body:
            name = getattr(a, "name", "")
            assert not name.startswith("__")


# ---------------------------------------------------------------------------
# Size caps


def test_tiny_table_cap_is_reported():
    with pytest.raises(SizeCapExceeded):
        full_rewrite(
            parse_tbox(BRANCHING),
            parse_query(TWO_ROLE_QUERY),
            caps=Caps(dag_nodes=3),
        )


def test_tiny_disjunct_cap_is_reported():
    with pytest.raises(SizeCapExceeded):
        full_rewrite(
            parse_tbox("P[A] <= B\nF[C] <= A"),
            parse_query("q(?x, ?s) :- B(?x, ?s)"),
            caps=Caps(ucq_disjuncts=1),
        )


def test_expansion_over_too_many_instants_is_reported():
    atoms = ", ".join(f"A(?x, ?t{i})" for i in range(9))
    q = parse_query(f"q(?x) :- {atoms}")
    with pytest.raises(SizeCapExceeded):
        totally_ordered_expansion(q)


# ---------------------------------------------------------------------------
# Properties


_NAMES = st.sampled_from(["A", "B", "C"])
_AXIOMS = st.lists(
    st.sampled_from(
        [
            "P[A] <= B",
            "F[B] <= A",
            "A <= exists R",
            "exists inv(R) <= B",
            "role: P[R] <= R2",
            "B & A <= C",
        ]
    ),
    min_size=0,
    max_size=4,
    unique=True,
)
_QUERIES = st.sampled_from(
    [
        "q(?x, ?t) :- A(?x, ?t)",
        "q(?x, ?t) :- B(?x, ?t), C(?x, ?t)",
        "q(?x, ?t) :- R(?x, ?y, ?t)",
        "q(?x, ?t) :- R2(?x, ?y, ?s), ?s < ?t, A(?x, ?t)",
    ]
)


@settings(max_examples=25, deadline=None)
@given(_AXIOMS, _QUERIES)
def test_rewriting_output_is_clean_and_deterministic(axioms, qtext):
    tb = parse_tbox("\n".join(axioms))
    q = parse_query(qtext)
    u1 = full_rewrite(tb, q)
    u2 = full_rewrite(tb, q)
    assert repr(u1) == repr(u2)
    assert u1.answer_vars == q.answer_vars
    for cq in u1.cqs():
        for a in cq.atoms:
            assert not getattr(a, "name", "").startswith("__")


@settings(max_examples=25, deadline=None)
@given(_QUERIES)
def test_empty_ontology_disjuncts_are_sound(qtext):
    q = parse_query(qtext)
    u = full_rewrite(TBox(frozenset()), q)
    fixed = frozenset(v.name for v in q.answer_vars)
    for cq in u.cqs():
        assert hom_subsumes(q.atoms, cq.atoms, fixed)
