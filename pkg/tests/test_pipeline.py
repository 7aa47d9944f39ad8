import json
from dataclasses import replace

import numpy as np
import pytest

from pmrskit import pipeline, qc, synth
from pmrskit.config import AnalysisConfig
from pmrskit.errors import ProtocolError, SubjectParseError
from pmrskit.metabolites import METABOLITES


def minimal_subject_dict(n_frames=130, with_resting=True, truth=None, seed=0,
                         **truth_kwargs):
    truth = truth or synth.GroundTruth(noise_sd=0.05, **truth_kwargs)
    ds = synth.synth_subject(truth, synth.AcquisitionProtocol(), seed=seed,
                             subject_id="subj-1", group="patient")
    doc = ds.to_json_dict()
    if not with_resting:
        del doc["resting"]
    if n_frames != 130:
        for met in METABOLITES:
            doc["dynamic"]["amplitudes"][met] = \
                doc["dynamic"]["amplitudes"][met][:n_frames]
        doc["dynamic"]["pi_shift_ppm"] = doc["dynamic"]["pi_shift_ppm"][:n_frames]
    return doc


def analyzed_cohorts(seed=0, n_pat=8, n_con=8, cfg=None, **cohort_kwargs):
    cfg = cfg or AnalysisConfig()
    pats = synth.simulate_cohort(n_pat, 40.73, 9.29, group="patient",
                                 seed=seed, noise_sd=0.03, **cohort_kwargs)
    cons = synth.simulate_cohort(n_con, 33.11, 8.24, group="control",
                                 seed=seed + 1, noise_sd=0.03, **cohort_kwargs)
    rp = [pipeline.parse_subject(s.to_json_dict()) for s in pats]
    rc = [pipeline.parse_subject(s.to_json_dict()) for s in cons]
    pipeline.analyze_cohort(rp, cfg)
    pipeline.analyze_cohort(rc, cfg)
    return rp, rc


# ---------------------------------------------------------------------------
# Parsing


def test_parse_minimal_valid_file_and_phase_boundaries():
    record = pipeline.parse_subject(minimal_subject_dict())
    assert record.subject_id == "subj-1"
    slices = record.phase_slices
    assert (slices["rest"].start, slices["rest"].stop) == (0, 10)
    assert (slices["exercise"].start, slices["exercise"].stop) == (10, 40)
    assert (slices["recovery"].start, slices["recovery"].stop) == (40, 130)


def test_parse_without_resting_then_individual_mode_fails_later():
    record = pipeline.parse_subject(minimal_subject_dict(with_resting=False))
    assert record.resting_long is None
    pipeline.analyze_subject(record, AnalysisConfig(t1_mode="individual"))
    assert record.analysis.errors
    assert "ConfigurationError" in record.analysis.errors[0]
    # fixed mode still analyzes fine
    pipeline.analyze_subject(record, AnalysisConfig(t1_mode="fixed"))
    assert not record.analysis.errors


def test_parse_frame_count_mismatch():
    with pytest.raises(ProtocolError):
        pipeline.parse_subject(minimal_subject_dict(n_frames=129))


def test_parse_schema_violations_carry_json_path():
    doc = minimal_subject_dict()
    del doc["dynamic"]
    with pytest.raises(SubjectParseError, match="dynamic"):
        pipeline.parse_subject(doc)

    doc = minimal_subject_dict()
    del doc["dynamic"]["amplitudes"]["Pi"]
    with pytest.raises(SubjectParseError) as excinfo:
        pipeline.parse_subject(doc)
    assert "$.dynamic.amplitudes" in str(excinfo.value)

    doc = minimal_subject_dict()
    del doc["dynamic"]["pi_shift_ppm"]
    with pytest.raises(SubjectParseError, match="pi_shift_ppm"):
        pipeline.parse_subject(doc)

    doc = minimal_subject_dict()
    doc["protocol"]["n_rest"] = 0
    with pytest.raises(SubjectParseError, match=r"\$\.protocol"):
        pipeline.parse_subject(doc)


def test_parse_fid_mode_roundtrip(noiseless_truth, protocol):
    ds = synth.synth_subject(noiseless_truth, protocol, seed=0, mode="fids")
    record = pipeline.parse_subject(ds.to_json_dict())
    assert record.dynamic_fids is not None
    assert len(record.dynamic_fids) == 130
    np.testing.assert_allclose(record.dynamic_fids[0], ds.dynamic_fids[0])


# ---------------------------------------------------------------------------
# Per-subject analysis


def test_clean_subject_full_analysis(default_config):
    record = pipeline.parse_subject(minimal_subject_dict())
    pipeline.analyze_subject(record, default_config)
    a = record.analysis
    assert not a.errors
    assert a.qc_report.score_total_exercise == 0
    assert a.qc_report.score_total_recovery == 0
    assert set(a.panels) == {"rest", "post_exercise", "post_recovery"}
    assert set(a.fits) == {"ex_PCr", "ex_Pi", "rec_PCr", "rec_Pi"}
    assert a.markers is not None
    # recovered values close to embedded truth
    truth = record.truth
    assert a.fits["rec_PCr"].tau_s == pytest.approx(truth["tau_rec_s"]["PCr"], rel=0.05)
    assert a.panels["rest"].pcr_mM == pytest.approx(
        truth["concentrations_mM"]["PCr"], rel=0.01)
    assert a.t1_panel.t1_s["PCr"] == pytest.approx(truth["t1_s"]["PCr"], rel=0.05)


def test_exercise_corrupted_subject_excluded_from_exercise_only(default_config):
    truth = synth.GroundTruth(
        noise_sd=0.05,
        corruption=synth.CorruptionPlan(
            spike_frames=tuple(range(12, 36, 3)), spike_magnitude=30.0))
    record = pipeline.parse_subject(minimal_subject_dict(truth=truth))
    pipeline.analyze_subject(record, default_config)
    report = record.analysis.qc_report
    assert report.exercise_decision == qc.EXCLUDED
    assert report.subject_decision == qc.ACCEPTED


def test_first_point_spiked_subject_flagged_pending(default_config):
    truth = synth.GroundTruth(
        noise_sd=0.05,
        corruption=synth.CorruptionPlan(first_point_magnitude=60.0))
    record = pipeline.parse_subject(minimal_subject_dict(truth=truth))
    pipeline.analyze_subject(record, default_config)
    report = record.analysis.qc_report
    assert report.first_point_flag
    assert report.suggested_start_index == 1
    assert report.reselected_start_index is None


def test_apply_reselection_updates_markers(default_config):
    truth = synth.GroundTruth(
        noise_sd=0.05,
        corruption=synth.CorruptionPlan(first_point_magnitude=60.0))
    record = pipeline.parse_subject(minimal_subject_dict(truth=truth))
    pipeline.analyze_subject(record, default_config)
    tau_before = record.analysis.fits["rec_PCr"].tau_s
    vi_before = record.analysis.markers.vi_mM_s
    pipeline.apply_reselection(record, 1, default_config, operator="tester")
    assert record.analysis.fits["rec_PCr"].start_index == 1
    assert record.analysis.fits["rec_PCr"].tau_s != tau_before
    assert record.analysis.qc_report.reselected_start_index == 1
    assert record.analysis.markers.vi_mM_s != vi_before
    truth_tau = record.truth["tau_rec_s"]["PCr"]
    assert record.analysis.fits["rec_PCr"].tau_s == pytest.approx(truth_tau, rel=0.02)


def test_full_analysis_on_raw_fids():
    # End-to-end through the quantifier: dynamic and resting FIDs only.
    truth = synth.GroundTruth(noise_sd=0.02)
    ds = synth.synth_subject(truth, seed=5, mode="fids", subject_id="fid-1",
                             group="patient")
    record = pipeline.parse_subject(ds.to_json_dict())
    pipeline.analyze_subject(record, AnalysisConfig())
    a = record.analysis
    assert not a.errors
    assert a.frame_quants is not None and len(a.frame_quants) == 130
    assert a.fits["rec_PCr"].tau_s == pytest.approx(truth.tau_rec_s["PCr"], rel=0.02)
    assert a.panels["rest"].pcr_mM == pytest.approx(
        truth.concentrations_mM["PCr"], rel=0.01)
    assert a.t1_panel.t1_s["PCr"] == pytest.approx(truth.t1_s["PCr"], rel=0.02)
    assert a.panels["rest"].ph == pytest.approx(truth.ph_rest, abs=0.01)
    assert a.qc_report.score_total_exercise == 0
    assert a.qc_report.score_total_recovery == 0


def test_cohort_mean_mode_two_pass(default_config):
    cfg = AnalysisConfig(t1_mode="cohort_mean")
    docs = [minimal_subject_dict(seed=s) for s in range(4)]
    records = [pipeline.parse_subject(d) for d in docs]
    pipeline.analyze_cohort(records, cfg)
    assert all(not r.analysis.errors for r in records)
    panels = [r.analysis.correction_panel.t1_panel for r in records]
    # every subject in the group shares the same averaged panel
    for met in METABOLITES:
        values = {p.t1_s[met] for p in panels}
        assert len(values) == 1
    assert panels[0].source == "cohort_mean"


# ---------------------------------------------------------------------------
# Cohort comparison


def test_compare_cohorts_tau_significant_and_upward():
    rp, rc = analyzed_cohorts(seed=100, n_pat=30, n_con=32)
    comp = pipeline.compare_cohorts(rp, rc, with_qcs=True)
    row = comp.row("tau_rec_pcr_s")
    assert row.significant
    assert row.trend == "up"
    assert row.patients.mean > row.controls.mean
    # every registry marker is present exactly once
    assert len(comp.rows) == len(pipeline.MARKERS)
    names = [r.marker for r in comp.rows]
    assert len(set(names)) == len(names)


def test_compare_identical_groups_false_positive_rate():
    rng = np.random.default_rng(5)
    pats = synth.simulate_cohort(12, 36.0, 6.0, group="patient", seed=500, noise_sd=0.03)
    cons = synth.simulate_cohort(12, 36.0, 6.0, group="control", seed=501, noise_sd=0.03)
    rp = [pipeline.parse_subject(s.to_json_dict()) for s in pats]
    rc = [pipeline.parse_subject(s.to_json_dict()) for s in cons]
    cfg = AnalysisConfig()
    pipeline.analyze_cohort(rp, cfg)
    pipeline.analyze_cohort(rc, cfg)
    comp = pipeline.compare_cohorts(rp, rc, with_qcs=True, cfg=cfg)
    computed = [r for r in comp.rows if r.test is not None]
    fraction = sum(r.significant for r in computed) / len(computed)
    assert fraction < 0.2  # null cohorts: only alpha-level false positives


def test_with_qcs_drops_exercise_rows_but_keeps_recovery():
    rp, rc = analyzed_cohorts(
        seed=200, n_pat=10, n_con=10,
        exercise_corrupt_indices=(0, 1, 2), exercise_spike_frames=10,
        spike_magnitude=60.0)
    comp = pipeline.compare_cohorts(rp, rc, with_qcs=True)
    no_qcs = pipeline.compare_cohorts(rp, rc, with_qcs=False)
    # n bookkeeping: exercise rows lose the corrupted patients, rest rows keep them
    assert comp.row("tau_ex_pcr_s").patients.n == 7
    assert comp.row("tau_rec_pcr_s").patients.n == 10
    assert comp.row("pcr_rest_mM").patients.n == 10
    assert no_qcs.row("tau_ex_pcr_s").patients.n == 10


def test_without_qcs_ignores_rubric_configuration():
    from pmrskit.qc import Bands, QCRubric

    rp, rc = analyzed_cohorts(seed=300, n_pat=6, n_con=6)
    strict = QCRubric(r2=Bands((0.999, 0.9995, 0.9999), (-3, -2, -1, 0)))
    comp_default = pipeline.compare_cohorts(rp, rc, with_qcs=False,
                                            cfg=AnalysisConfig())
    comp_strict = pipeline.compare_cohorts(rp, rc, with_qcs=False,
                                           cfg=AnalysisConfig(rubric=strict))
    for a, b in zip(comp_default.rows, comp_strict.rows):
        if a.patients is None:
            assert b.patients is None
            continue
        assert a.patients.n == b.patients.n
        assert a.patients.mean == b.patients.mean


def test_qcs_reduces_tau_sd_under_corruption():
    rp, rc = analyzed_cohorts(
        seed=400, n_pat=12, n_con=12,
        first_point_indices=(0, 1), first_point_magnitude=60.0)
    cfg = AnalysisConfig()
    # reselect flagged patients as the operator would
    for r in rp + rc:
        if r.analysis.qc_report.first_point_flag:
            pipeline.apply_reselection(
                r, r.analysis.qc_report.suggested_start_index, cfg)
    with_qcs = pipeline.compare_cohorts(rp, rc, with_qcs=True, cfg=cfg)
    # reanalyze fresh (no reselection) for the no-QCS arm
    rp2, rc2 = analyzed_cohorts(
        seed=400, n_pat=12, n_con=12,
        first_point_indices=(0, 1), first_point_magnitude=60.0)
    without = pipeline.compare_cohorts(rp2, rc2, with_qcs=False, cfg=cfg)
    assert with_qcs.row("tau_rec_pcr_s").patients.sd <= \
        without.row("tau_rec_pcr_s").patients.sd


def test_report_determinism_byte_identical():
    rp, rc = analyzed_cohorts(seed=600, n_pat=5, n_con=5)
    comp1 = pipeline.compare_cohorts(rp, rc, with_qcs=True)
    rp2, rc2 = analyzed_cohorts(seed=600, n_pat=5, n_con=5)
    comp2 = pipeline.compare_cohorts(rp2, rc2, with_qcs=True)
    as_json1 = json.dumps(comp1.to_dict(), sort_keys=True)
    as_json2 = json.dumps(comp2.to_dict(), sort_keys=True)
    assert as_json1 == as_json2
    assert pipeline.comparison_to_csv(comp1) == pipeline.comparison_to_csv(comp2)


def test_insufficient_group_marked_not_computable():
    rp, rc = analyzed_cohorts(seed=700, n_pat=3, n_con=3,
                              exercise_corrupt_indices=(0,),
                              spike_magnitude=60.0)
    comp = pipeline.compare_cohorts(rp, rc, with_qcs=True)
    row = comp.row("tau_ex_pcr_s")  # 2 usable patients < 3
    assert row.test is None
    assert "not computable" in row.note


# ---------------------------------------------------------------------------
# Fixed vs individual T1 modes


def test_fixed_mode_exceeds_individual_when_t1_below_table():
    from pmrskit.relax import FIXED_T1_S

    cfg = AnalysisConfig()
    pats = synth.simulate_cohort(6, 38.0, 6.0, group="patient", seed=800,
                                 noise_sd=0.02, t1_below=dict(FIXED_T1_S))
    pairs_pcr = []
    pairs_pi = []
    for s in pats:
        record = pipeline.parse_subject(s.to_json_dict())
        pipeline.analyze_subject(record, replace(cfg, t1_mode="individual"))
        assert not record.analysis.errors
        ind = record.analysis.panels["rest"]
        assert all(record.analysis.t1_panel.t1_s[m] < cfg.fixed_t1_s[m]
                   for m in METABOLITES)
        pipeline.analyze_subject(record, replace(cfg, t1_mode="fixed"))
        fix = record.analysis.panels["rest"]
        # every resting concentration moves up when every T1 sits below the table
        assert fix.pcr_mM > ind.pcr_mM
        assert fix.pi_mM > ind.pi_mM
        assert fix.atp_mM > ind.atp_mM
        assert fix.adp_uM > ind.adp_uM
        assert fix.h2po4_mM > ind.h2po4_mM
        pairs_pcr.append((ind.pcr_mM, fix.pcr_mM))
        pairs_pi.append((ind.pi_mM, fix.pi_mM))
    ba = pipeline.bland_altman(pairs_pcr)
    assert ba.bias > 0
    assert pipeline.bland_altman(pairs_pi).bias > 0


def test_pcr_pi_ratio_changes_across_modes():
    # Individual T1 ratio differing from the fixed 6.60/6.10 moves PCr/Pi.
    cfg = AnalysisConfig()
    truth = synth.GroundTruth(noise_sd=0.0, pi_shift_noise_sd=0.0,
                              t1_s={"PCr": 5.2, "Pi": 5.9, "gATP": 5.0,
                                    "aATP": 3.2, "bATP": 3.4})
    record = pipeline.parse_subject(minimal_subject_dict(truth=truth))
    pipeline.analyze_subject(record, replace(cfg, t1_mode="individual"))
    ratio_ind = record.analysis.panels["rest"].pcr_pi_ratio
    pipeline.analyze_subject(record, replace(cfg, t1_mode="fixed"))
    ratio_fix = record.analysis.panels["rest"].pcr_pi_ratio
    assert ratio_ind != pytest.approx(ratio_fix, rel=1e-6)


# ---------------------------------------------------------------------------
# Bland-Altman


def test_bland_altman_identical_pairs():
    ba = pipeline.bland_altman([(3.0, 3.0), (4.0, 4.0), (5.0, 5.0)])
    assert ba.bias == 0.0
    assert ba.loa_low == 0.0
    assert ba.loa_high == 0.0
    assert ba.r2 == pytest.approx(1.0)


def test_bland_altman_proportional_offset():
    # fixed = individual * 1.075 (published MS-control resting PCr ratio)
    individual = np.array([30.0, 32.0, 33.5, 35.0, 38.0])
    pairs = np.column_stack([individual, individual * 36.04 / 33.51])
    ba = pipeline.bland_altman(pairs)
    assert ba.bias > 0
    assert ba.r2 > 0.99


def test_bland_altman_uncorrelated_noise_pairs(rng):
    pairs = np.column_stack([rng.normal(0.0, 1.0, 200), rng.normal(0.0, 1.0, 200)])
    ba = pipeline.bland_altman(pairs)
    assert ba.r2 < 0.05  # no agreement structure
    assert ba.loa_high - ba.loa_low > 4.0  # limits span ~2 * 1.96 * sqrt(2)
