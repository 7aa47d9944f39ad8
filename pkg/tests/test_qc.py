from dataclasses import replace

import numpy as np
import pytest

from pmrskit import kinetics, qc
from pmrskit.errors import DomainError, IncompleteInputError, ReselectionError


def clean_variables(**overrides):
    base = qc.QCVariables(
        depletion_pct=40.0,
        tau_ex_pcr_s=30.0,
        tau_ex_pi_s=28.0,
        r2_ex_pcr=0.95,
        r2_ex_pi=0.94,
        outlier_fraction_ex=0.0,
        tau_rec_pcr_s=40.0,
        tau_rec_pi_s=34.0,
        r2_rec_pcr=0.95,
        r2_rec_pi=0.93,
        outlier_fraction_rec=0.0,
    )
    return replace(base, **overrides)


def recovery_with_spike(spike=0.0, tau=40.0, noise=0.0, seed=0, n=90):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * 4.0
    v = 33.0 - 13.0 * np.exp(-t / tau)
    if noise:
        v = v + rng.normal(0, noise, n)
    v[0] += spike
    return t, v


def test_score_all_clean_is_zero_and_accepted():
    report = qc.score(clean_variables())
    assert report.score_total_exercise == 0
    assert report.score_total_recovery == 0
    assert report.exercise_decision == qc.ACCEPTED
    assert report.subject_decision == qc.ACCEPTED


def test_low_depletion_excludes_exercise_only():
    report = qc.score(clean_variables(depletion_pct=15.0))
    assert report.scores["depletion_pct"] == -3
    assert report.exercise_decision == qc.EXCLUDED
    assert report.subject_decision == qc.ACCEPTED


def test_bad_recovery_r2_excludes_subject():
    report = qc.score(clean_variables(r2_rec_pcr=0.4))
    assert report.scores["r2_rec_pcr"] == -3
    assert report.subject_decision == qc.EXCLUDED
    # full exclusion subsumes the exercise phase
    assert report.exercise_decision == qc.EXCLUDED


def test_missing_variable_is_named():
    with pytest.raises(IncompleteInputError, match="r2_rec_pi"):
        qc.score(clean_variables(r2_rec_pi=None))


def test_rubric_band_boundaries():
    rubric = qc.QCRubric()
    assert rubric.r2.score(0.95) == 0
    assert rubric.r2.score(0.9) == 0
    assert rubric.r2.score(0.89) == -1
    assert rubric.r2.score(0.75) == -1
    assert rubric.r2.score(0.74) == -2
    assert rubric.r2.score(0.49) == -3
    assert rubric.outliers.score(0.1) == 0
    assert rubric.outliers.score(0.11) == -1
    assert rubric.outliers.score(0.26) == -2
    assert rubric.tau_recovery.score(4.9) == -2
    assert rubric.tau_recovery.score(121.0) == -2
    assert rubric.tau_recovery.score(60.0) == 0


def test_score_monotone_when_single_variable_worsens():
    base = qc.score(clean_variables())
    worsenings = {
        "depletion_pct": 10.0,
        "r2_ex_pcr": 0.6,
        "r2_rec_pi": 0.2,
        "outlier_fraction_rec": 0.3,
        "tau_rec_pcr_s": 300.0,
    }
    for name, bad in worsenings.items():
        report = qc.score(clean_variables(**{name: bad}))
        total = report.score_total_exercise + report.score_total_recovery
        assert total <= base.score_total_exercise + base.score_total_recovery


def test_bands_validation():
    with pytest.raises(DomainError):
        qc.Bands((1.0, 0.5), (0, -1, -2))
    with pytest.raises(DomainError):
        qc.Bands((0.5,), (0, -1, -2))
    with pytest.raises(DomainError):
        qc.Bands((0.1, 0.2), (0, -2, -1))


def test_detect_outliers_clean_series():
    t, v = recovery_with_spike()
    fit = kinetics.fit_recovery(t, v)
    scan = qc.detect_outliers(t, v, fit)
    assert scan.fraction == 0.0
    assert scan.indices.size == 0


def test_detect_outliers_single_spike_flagged_exactly(rng):
    t = np.arange(90) * 4.0
    sigma = 0.2
    v = 33.0 - 13.0 * np.exp(-t / 40.0) + rng.normal(0, sigma, 90)
    v[50] += 10 * sigma
    fit = kinetics.fit_recovery(t, v)
    scan = qc.detect_outliers(t, v, fit)
    assert list(scan.indices) == [50]


def test_detect_outliers_all_spiked_no_crash(rng):
    t = np.arange(20) * 4.0
    v = rng.normal(0, 50.0, 20) + 100.0
    fit = kinetics.fit_recovery(t, v)
    scan = qc.detect_outliers(t, v, fit)
    assert 0.0 <= scan.fraction <= 1.0


def test_flag_first_point_clean():
    t, v = recovery_with_spike(noise=0.1, seed=3)
    check = qc.flag_first_point(t, v)
    assert not check.flagged
    assert check.suggested_index is None


def test_flag_first_point_spiked():
    t, v = recovery_with_spike(spike=-6.0, noise=0.1, seed=3)
    check = qc.flag_first_point(t, v)
    assert check.flagged
    assert check.suggested_index == 1
    refit = kinetics.fit_recovery(t, v, start_index=1)
    assert refit.r2 > check.base_fit.r2


def test_flag_first_point_mid_series_spike_is_outlier_not_reselection():
    t, v = recovery_with_spike(noise=0.1, seed=3)
    v[5] += -6.0
    check = qc.flag_first_point(t, v)
    assert not check.flagged


def test_flag_first_point_needs_five_frames():
    with pytest.raises(DomainError):
        qc.flag_first_point(np.arange(4) * 4.0, np.array([1.0, 2.0, 3.0, 4.0]))


def test_apply_reselection_idempotent_at_current_start():
    t, v = recovery_with_spike(noise=0.05, seed=9)
    variables = clean_variables()
    fit0 = kinetics.fit_recovery(t, v, start_index=0)
    outcome = qc.apply_reselection(
        t, {"PCr": v, "Pi": 40.0 - v / 3.0}, variables, 0,
        flagged=True, provenance="suggested")
    assert outcome.fits["PCr"].tau_s == pytest.approx(fit0.tau_s, rel=1e-9)
    assert outcome.report.reselected_start_index == 0
    assert outcome.report.reselection_provenance == "suggested"


def test_apply_reselection_restores_tau():
    tau_true = 40.0
    t, v = recovery_with_spike(spike=-6.0, noise=0.05, seed=9, n=90)
    pi = 8.0 + (33.0 - v) / 2.0
    before = kinetics.fit_recovery(t, v, start_index=0)
    assert abs(before.tau_s - tau_true) / tau_true > 0.02
    outcome = qc.apply_reselection(
        t, {"PCr": v, "Pi": pi}, clean_variables(), 1, flagged=True)
    assert abs(outcome.fits["PCr"].tau_s - tau_true) / tau_true < 0.02
    assert outcome.report.variables.tau_rec_pcr_s == outcome.fits["PCr"].tau_s


def test_apply_reselection_rejections():
    t, v = recovery_with_spike(noise=0.05, seed=9)
    with pytest.raises(ReselectionError):
        qc.apply_reselection(t, {"PCr": v}, clean_variables(), 4, flagged=True)
    with pytest.raises(ReselectionError):
        qc.apply_reselection(t, {"PCr": v}, clean_variables(), 1, flagged=False)
    # operator override lets an unflagged subject through
    outcome = qc.apply_reselection(t, {"PCr": v}, clean_variables(), 1,
                                   flagged=False, operator_override=True)
    assert outcome.report.reselected_start_index == 1


def test_reselection_leaves_exercise_untouched():
    t, v = recovery_with_spike(spike=-6.0, noise=0.05, seed=9)
    variables = clean_variables(r2_ex_pcr=0.8, r2_ex_pi=0.77)
    before = qc.score(variables)
    outcome = qc.apply_reselection(t, {"PCr": v, "Pi": 40.0 - v / 3.0},
                                   variables, 1, flagged=True)
    assert outcome.report.score_total_exercise == before.score_total_exercise
    assert outcome.report.variables.r2_ex_pcr == 0.8
