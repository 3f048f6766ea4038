"""Protocol transcript, joint outcomes, certainty semantics, audits."""

import math

import numpy as np
import pytest

import pointerlab as pl
from pointerlab.errors import ImpossibleOutcomeError, PointerLabError
from pointerlab.experiment import (
    Proposition,
    fail_ok_basis,
    failbar_okbar_basis,
    spin_direction_basis,
)
from pointerlab.measurement import Basis

SQ = math.sqrt
H = 1 / SQ(2)


def test_build_init():
    s = pl.build_init()
    assert abs(s.norm() - 1.0) < 1e-12
    assert s.amplitude(("head", "up")) == 0
    assert abs(s.amplitude(("tail", "down")) - 1 / SQ(3)) < 1e-12
    assert abs(s.amplitude(("head", "down")) - SQ(1 / 3)) < 1e-12


def test_stage_after_inside_coin_measurement():
    tr = pl.run_protocol()
    st = tr.stage("after-Fbar").state

    def amp(r, s, f):
        return st.amplitude((r, s, f, "F0", "W0", "W0"))

    assert abs(amp("head", "down", "F1") - SQ(1 / 3)) < 1e-9
    assert abs(amp("tail", "down", "F2") - SQ(1 / 3)) < 1e-9
    assert abs(amp("tail", "up", "F2") - SQ(1 / 3)) < 1e-9
    assert abs(amp("head", "down", "F0")) < 1e-12


def test_stage_grouped_laboratories():
    tr = pl.run_protocol()
    g1 = tr.stage("group-Lbar").state
    assert g1.layout.names == ("Lbar", "S", "F", "Wbar", "W")
    assert abs(g1.amplitude(("h", "down", "F0", "W0", "W0")) - SQ(1 / 3)) < 1e-9
    g2 = tr.stage("group-L").state
    assert g2.layout.names == ("Lbar", "L", "Wbar", "W")
    for labels in [("h", "-1/2"), ("t", "-1/2"), ("t", "+1/2")]:
        assert abs(g2.amplitude(labels + ("W0", "W0")) - SQ(1 / 3)) < 1e-9


def test_stage_after_outer_lab_measurement():
    tr = pl.run_protocol()
    st = tr.stage("after-Wbar").state
    lay = st.layout
    okbar = failbar_okbar_basis(lay).vectors[1]
    probe = pl.tensor(
        pl.tensor(okbar, pl.basis_state(lay.sublayout(["L"]), ("+1/2",))),
        pl.tensor(pl.basis_state(lay.sublayout(["Wbar"]), ("W2",)),
                  pl.basis_state(lay.sublayout(["W"]), ("W0",))),
    )
    assert abs(pl.inner(probe, st) - (-SQ(1 / 6))) < 1e-9


def test_final_stage_amplitudes():
    tr = pl.run_protocol()
    st = tr.final_state
    lay = st.layout
    fb = failbar_okbar_basis(lay)
    fo = fail_ok_basis(lay)

    def amp(lbar_i, l_i, wbar, w):
        probe = pl.tensor(
            pl.tensor(fb.vectors[lbar_i], fo.vectors[l_i]),
            pl.tensor(pl.basis_state(lay.sublayout(["Wbar"]), (wbar,)),
                      pl.basis_state(lay.sublayout(["W"]), (w,))),
        )
        return pl.inner(probe, st)

    assert abs(amp(0, 0, "W1", "W1") - SQ(3 / 4)) < 1e-9
    assert abs(amp(0, 1, "W1", "W2") - SQ(1 / 12)) < 1e-9
    assert abs(amp(1, 0, "W2", "W1") - (-SQ(1 / 12))) < 1e-9
    assert abs(amp(1, 1, "W2", "W2") - SQ(1 / 12)) < 1e-9


def test_every_stage_has_unit_norm_with_tiny_drift():
    tr = pl.run_protocol()
    for st in tr.stages:
        assert abs(st.state.norm() - 1.0) < 1e-12


def test_joint_outcome_distribution():
    tr = pl.run_protocol()
    dist = pl.joint_outcome(tr, ("Wbar", "W"))
    assert abs(dist.probability(("failbar", "fail")) - 3 / 4) < 1e-9
    assert abs(dist.probability(("failbar", "ok")) - 1 / 12) < 1e-9
    assert abs(dist.probability(("okbar", "fail")) - 1 / 12) < 1e-9
    assert abs(dist.probability(("okbar", "ok")) - 1 / 12) < 1e-9


def test_joint_outcome_marginal_matches_brute_force():
    # Oracle: enumerate the final amplitude vector directly against
    # hand-built record projectors, no born() involved.
    tr = pl.run_protocol()
    st = tr.final_state
    lay = st.layout
    t = st.amplitudes.reshape(lay.dims)
    wbar_axis = lay.axis("Wbar")
    idx_w1 = lay.subsystem("Wbar").labels.index("W1")
    p_fail = float(np.sum(np.abs(np.take(t, idx_w1, axis=wbar_axis)) ** 2))
    idx_w2 = lay.subsystem("Wbar").labels.index("W2")
    p_ok = float(np.sum(np.abs(np.take(t, idx_w2, axis=wbar_axis)) ** 2))
    assert abs(p_fail - 5 / 6) < 1e-9
    assert abs(p_ok - 1 / 6) < 1e-9
    dist = pl.joint_outcome(tr, ("Wbar",))
    assert abs(dist.probability(("failbar",)) - p_fail) < 1e-9
    assert abs(dist.probability(("okbar",)) - p_ok) < 1e-9


def test_statement_chain_premeasurement():
    tr = pl.run_protocol()
    final_layout = tr.final_state.layout

    s1 = pl.certainty(tr, "Fbar", "F2",
                      Proposition("L", fail_ok_basis(final_layout), "fail", "will_obtain"))
    assert s1.kind == "certain"
    assert abs(s1.conditional.probability(("fail",)) - 1.0) < 1e-9

    s2 = pl.certainty(tr, "F", "F2",
                      Proposition("Lbar", Basis.computational(final_layout, "Lbar"),
                                  "t", "is_in_state"))
    assert s2.kind == "certain"
    assert abs(s2.conditional.probability(("t",)) - 1.0) < 1e-9

    s3 = pl.certainty(tr, "Wbar", "W2",
                      Proposition("L", Basis.computational(final_layout, "L"),
                                  "+1/2", "is_in_state"))
    assert s3.kind == "certain"
    assert abs(s3.conditional.probability(("+1/2",)) - 1.0) < 1e-9


def test_head_record_certifies_spin_down():
    tr = pl.run_protocol()
    lay = tr.stage("after-Fbar").state.layout
    prop = Proposition("S", Basis.computational(lay, "S"), "down", "is_in_state")
    v = pl.certainty(tr, "Fbar", "F1", prop)
    assert v.kind == "certain"


def test_observed_outcome_accepts_basis_label_too():
    tr = pl.run_protocol()
    lay = tr.stage("after-Fbar").state.layout
    prop = Proposition("S", spin_direction_basis(lay), "right", "is_in_state")
    by_record = pl.certainty(tr, "Fbar", "F2", prop)
    by_label = pl.certainty(tr, "Fbar", "tail", prop)
    assert by_record.kind == by_label.kind == "certain"


def test_decoherent_semantics_blocks_spin_claim():
    tr = pl.run_protocol()
    lay = tr.stage("after-Fbar").state.layout
    prop = Proposition("S", spin_direction_basis(lay), "right", "is_in_state")
    v = pl.certainty(tr, "Fbar", "F2", prop, semantics="decoherent",
                     models=pl.default_environment_models())
    assert v.kind == "undetermined"
    probs = {name: d.probability(("right",)) for name, d in v.evidence}
    assert abs(probs["two-branch"] - 1.0) < 1e-9
    assert abs(probs["three-branch"] - 0.5) < 1e-9


def test_decoherent_semantics_blocks_final_outcome_claim():
    tr = pl.run_protocol()
    prop = Proposition("L", fail_ok_basis(tr.final_state.layout), "fail", "will_obtain")
    v = pl.certainty(tr, "Fbar", "F2", prop, semantics="decoherent",
                     models=pl.default_environment_models())
    assert v.kind == "undetermined"
    probs = [d.probability(("fail",)) for _, d in v.evidence]
    assert abs(probs[0] - probs[1]) > 0.1


def test_certainty_refuted_kind():
    tr = pl.run_protocol()
    lay = tr.stage("after-Fbar").state.layout
    prop = Proposition("S", spin_direction_basis(lay), "left", "is_in_state")
    v = pl.certainty(tr, "Fbar", "F2", prop)
    assert v.kind == "refuted"
    models = pl.default_environment_models()[:1]  # two-branch only
    vd = pl.certainty(tr, "Fbar", "F2", prop, semantics="decoherent", models=models)
    assert vd.kind == "refuted"


def test_certainty_error_paths():
    tr = pl.run_protocol()
    lay = tr.stage("after-Fbar").state.layout
    prop = Proposition("S", Basis.computational(lay, "S"), "down", "is_in_state")
    with pytest.raises(ImpossibleOutcomeError):
        pl.certainty(tr, "Fbar", "F0", prop)
    with pytest.raises(PointerLabError):
        pl.certainty(tr, "Fbar", "F2", prop, semantics="decoherent", models=[])


def test_decoherence_compare_report():
    rep = pl.decoherence_compare()
    assert rep.full_max_difference > 0.1
    assert rep.reduced_equal
    assert rep.reduced_max_difference < 1e-9
    assert np.allclose(rep.branch_weights_coarse, (1 / 3, 2 / 3), atol=1e-9)
    assert np.allclose(rep.branch_weights_fine, (1 / 3, 1 / 3, 1 / 3), atol=1e-9)
    for marginal in (rep.apparatus_marginal_coarse, rep.apparatus_marginal_fine):
        assert abs(marginal.probability(("A1",)) - 1 / 3) < 1e-9
        assert abs(marginal.probability(("A2",)) - 2 / 3) < 1e-9


def test_consistency_audit_flags():
    audit = pl.consistency_audit()
    assert audit.chain_derivable
    assert all(v.kind == "certain" for _, v in audit.statements_premeasurement)
    assert abs(audit.computed_probability - 1 / 12) < 1e-9
    assert audit.contradiction_premeasurement
    assert audit.statement_1_decoherent.kind == "undetermined"
    assert not audit.contradiction_decoherent
    assert audit.decoherent_models == ("two-branch", "three-branch")


def test_audit_value_matches_exhaustive_enumeration():
    # Oracle: project the final amplitudes onto the hand-built
    # okbar x ok x W2 x W2 vector and square, bypassing born entirely.
    tr = pl.run_protocol()
    st = tr.final_state
    lay = st.layout
    vec = np.zeros(lay.dimension, dtype=complex)
    for lbar, sb in ((("h",), H), (("t",), -H)):
        for l, sl in ((("-1/2",), H), (("+1/2",), -H)):
            vec[lay.index((lbar[0], l[0], "W2", "W2"))] = sb * sl
    p = abs(np.vdot(vec, st.amplitudes)) ** 2
    assert abs(p - 1 / 12) < 1e-9
    assert abs(pl.consistency_audit().computed_probability - p) < 1e-9


def test_transcript_determinism_bit_identical():
    t1 = pl.run_protocol()
    t2 = pl.run_protocol()
    for a, b in zip(t1.stages, t2.stages):
        assert a.name == b.name
        assert np.array_equal(a.state.amplitudes, b.state.amplitudes)


def test_inside_record_marginal_stable_until_outer_measurement():
    # The coin-record weights stay {1/3, 2/3} through the inner stages; the
    # outer laboratory measurement is complementary to the record basis and
    # shifts them to {1/2, 1/2} (checked as the physical fact it is).
    tr = pl.run_protocol()
    rec = Basis.computational(tr.stage("after-Fbar").state.layout, "Fbar",
                              ("F1", "F2"))
    d = pl.born(tr.stage("after-Fbar").state, [("Fbar", rec)])
    assert abs(d.probability(("F1",)) - 1 / 3) < 1e-9
    assert abs(d.probability(("F2",)) - 2 / 3) < 1e-9
    for stage in ("group-Lbar", "after-F", "group-L"):
        st = tr.stage(stage).state
        lab = Basis.computational(st.layout, "Lbar", ("h", "t"))
        d = pl.born(st, [("Lbar", lab)])
        assert abs(d.probability(("h",)) - 1 / 3) < 1e-9
        assert abs(d.probability(("t",)) - 2 / 3) < 1e-9
    late = tr.stage("after-Wbar").state
    lab = Basis.computational(late.layout, "Lbar", ("h", "t"))
    d = pl.born(late, [("Lbar", lab)])
    assert abs(d.probability(("h",)) - 1 / 2) < 1e-9


def test_record_marginals_insensitive_to_measurement_order():
    # Swapping the two inside measurements leaves both record marginals as
    # they were; they act on disjoint registers.
    from pointerlab.experiment import protocol_steps, run_transcript, FULL_LAYOUT

    ready = pl.basis_state(
        FULL_LAYOUT.sublayout(["Fbar", "F", "Wbar", "W"]), ("F0", "F0", "W0", "W0"))
    initial = pl.tensor(pl.build_init(), ready)
    steps = list(protocol_steps())
    swapped = [steps[2], steps[0], steps[3], steps[1]] + steps[4:]
    tr_orig = run_transcript(initial, steps)
    tr_swap = run_transcript(initial, swapped)
    for tr in (tr_orig, tr_swap):
        st = tr.stages[4].state  # both laboratories formed, outer agents pending
        lbar = pl.born(st, [("Lbar", Basis.computational(st.layout, "Lbar", ("h", "t")))])
        lab = pl.born(st, [("L", Basis.computational(st.layout, "L", ("-1/2", "+1/2")))])
        assert abs(lbar.probability(("h",)) - 1 / 3) < 1e-9
        assert abs(lab.probability(("-1/2",)) - 2 / 3) < 1e-9


def test_final_probabilities_are_exact_rationals():
    dist = pl.joint_outcome(pl.run_protocol(), ("Wbar", "W"))
    expected = {("failbar", "fail"): 0.75, ("failbar", "ok"): 1 / 12,
                ("okbar", "fail"): 1 / 12, ("okbar", "ok"): 1 / 12}
    for labels, p in dist.entries:
        assert abs(p - expected[labels]) < 1e-9
