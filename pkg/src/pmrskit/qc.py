"""Quality-control scoring, phase-level decisions and first-point reselection.

Each QC variable maps to a score in {0, -1, -2, -3} through a configurable
rubric; per-phase totals drive the accept/exclude decisions.  Exercise and
recovery are salvaged separately: a subject with an unusable exercise phase
keeps its recovery markers, while a bad recovery excludes the subject
entirely (which subsumes the exercise exclusion).

The one operator-in-the-loop step is the reselection of the recovery fit's
first point: a corrupted first recovery frame is flagged automatically, but
moving the start index requires an approval (see the review service).
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, fields, replace
from typing import Mapping

import numpy as np

from . import kinetics
from .errors import DomainError, IncompleteInputError, ReselectionError
from .kinetics import KineticFit

ACCEPTED = "accepted"
EXCLUDED = "excluded"

MAX_RESELECTION_INDEX = 3  # beyond this the "initial rate" reading of recovery dies


@dataclass(frozen=True)
class Bands:
    """Score lookup over ascending cutpoints: scores[i] applies below edges[i].

    With ``upper_inclusive`` a value equal to an edge belongs to the band
    below it (used for "more than x is bad" variables such as the outlier
    fraction); otherwise it belongs to the band above (used for "at least x
    is good" variables such as r2 and depletion).
    """

    edges: tuple[float, ...]
    scores: tuple[int, ...]
    upper_inclusive: bool = False

    def __post_init__(self):
        if len(self.scores) != len(self.edges) + 1:
            raise DomainError("need exactly one more score than edges")
        if list(self.edges) != sorted(self.edges):
            raise DomainError("edges must be ascending")
        diffs = np.diff(self.scores)
        if not (np.all(diffs >= 0) or np.all(diffs <= 0)):
            raise DomainError("scores must be monotone across the bands")

    def score(self, value: float) -> int:
        locate = bisect_left if self.upper_inclusive else bisect_right
        return self.scores[locate(self.edges, value)]


@dataclass(frozen=True)
class WindowRule:
    """Zero inside [lo, hi], a penalty outside (for time constants)."""

    lo: float
    hi: float
    outside_score: int = -2

    def __post_init__(self):
        if self.lo > self.hi:
            raise DomainError("window is empty")
        if self.outside_score > 0:
            raise DomainError("outside_score must be a penalty")

    def score(self, value: float) -> int:
        return 0 if self.lo <= value <= self.hi else self.outside_score


@dataclass(frozen=True)
class QCRubric:
    """Default thresholds: zero = fully acceptable, totals <= -2 exclude a phase."""

    depletion: Bands = Bands((20.0,), (-3, 0))
    r2: Bands = Bands((0.5, 0.75, 0.9), (-3, -2, -1, 0))
    tau_exercise: WindowRule = WindowRule(5.0, 120.0, -2)
    tau_recovery: WindowRule = WindowRule(5.0, 120.0, -2)
    outliers: Bands = Bands((0.1, 0.25), (0, -1, -2), upper_inclusive=True)
    exercise_exclude_at: int = -2
    subject_exclude_at: int = -2


@dataclass
class QCVariables:
    """Inputs to the rubric; None marks a variable that was never computed."""

    depletion_pct: float | None = None
    tau_ex_pcr_s: float | None = None
    tau_ex_pi_s: float | None = None
    r2_ex_pcr: float | None = None
    r2_ex_pi: float | None = None
    outlier_fraction_ex: float | None = None
    tau_rec_pcr_s: float | None = None
    tau_rec_pi_s: float | None = None
    r2_rec_pcr: float | None = None
    r2_rec_pi: float | None = None
    outlier_fraction_rec: float | None = None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


EXERCISE_VARIABLES = (
    "depletion_pct", "tau_ex_pcr_s", "tau_ex_pi_s",
    "r2_ex_pcr", "r2_ex_pi", "outlier_fraction_ex",
)
RECOVERY_VARIABLES = (
    "tau_rec_pcr_s", "tau_rec_pi_s",
    "r2_rec_pcr", "r2_rec_pi", "outlier_fraction_rec",
)


def _rule_for(rubric: QCRubric, variable: str):
    if variable == "depletion_pct":
        return rubric.depletion
    if variable.startswith("r2_"):
        return rubric.r2
    if variable.startswith("tau_ex"):
        return rubric.tau_exercise
    if variable.startswith("tau_rec"):
        return rubric.tau_recovery
    if variable.startswith("outlier"):
        return rubric.outliers
    raise DomainError(f"no rubric rule for variable {variable!r}")


@dataclass
class QCReport:
    variables: QCVariables
    scores: dict[str, int]
    score_total_exercise: int
    score_total_recovery: int
    exercise_decision: str
    subject_decision: str
    first_point_flag: bool = False
    suggested_start_index: int | None = None
    reselected_start_index: int | None = None
    reselection_provenance: str | None = None

    def to_dict(self) -> dict:
        return {
            "variables": self.variables.to_dict(),
            "scores": dict(self.scores),
            "score_total_exercise": self.score_total_exercise,
            "score_total_recovery": self.score_total_recovery,
            "exercise_decision": self.exercise_decision,
            "subject_decision": self.subject_decision,
            "first_point_flag": self.first_point_flag,
            "suggested_start_index": self.suggested_start_index,
            "reselected_start_index": self.reselected_start_index,
            "reselection_provenance": self.reselection_provenance,
        }


def score(variables: QCVariables, rubric: QCRubric | None = None) -> QCReport:
    """Score every QC variable and render the phase decisions.

    A fully excluded subject always has an excluded exercise phase: the
    subject-level decision subsumes the phase-level one.
    """
    rubric = rubric or QCRubric()
    scores: dict[str, int] = {}
    for name in EXERCISE_VARIABLES + RECOVERY_VARIABLES:
        value = getattr(variables, name)
        if value is None:
            raise IncompleteInputError(name)
        scores[name] = _rule_for(rubric, name).score(value)
    total_ex = sum(scores[name] for name in EXERCISE_VARIABLES)
    total_rec = sum(scores[name] for name in RECOVERY_VARIABLES)
    subject_decision = EXCLUDED if total_rec <= rubric.subject_exclude_at else ACCEPTED
    exercise_decision = EXCLUDED if (
        total_ex <= rubric.exercise_exclude_at or subject_decision == EXCLUDED
    ) else ACCEPTED
    return QCReport(
        variables=variables,
        scores=scores,
        score_total_exercise=total_ex,
        score_total_recovery=total_rec,
        exercise_decision=exercise_decision,
        subject_decision=subject_decision,
    )


@dataclass
class OutlierScan:
    fraction: float
    indices: np.ndarray
    z_scores: np.ndarray


def detect_outliers(times, values, fit: KineticFit, z_threshold: float = 3.0) -> OutlierScan:
    """Standardized residuals against the fitted model; |z| > 3 flags a frame.

    Only frames at or after the fit's start index have a defined model value;
    reported indices refer to the full series.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    domain = np.arange(fit.start_index, t.size)
    resid = v[domain] - fit.predict(t[domain])
    dof = max(resid.size - 3, 1)
    sd = math.sqrt(float(resid @ resid) / dof)
    if sd == 0.0:
        z = np.zeros(domain.size)
    else:
        z = resid / sd
    flagged = domain[np.abs(z) > z_threshold]
    return OutlierScan(
        fraction=flagged.size / domain.size,
        indices=flagged,
        z_scores=z,
    )


@dataclass
class FirstPointCheck:
    flagged: bool
    suggested_index: int | None
    r2_gain: float
    base_fit: KineticFit


def flag_first_point(times, values, fit0: KineticFit | None = None,
                     z_threshold: float = 3.0, r2_gain: float = 0.02,
                     metabolite: str = "PCr") -> FirstPointCheck:
    """Detect a corrupted first recovery point.

    Flags when the first point's standardized residual under the from-zero
    fit exceeds ``z_threshold`` and refitting from index 1 raises r2 by at
    least ``r2_gain``.  The suggested index is the smallest start (capped at
    3) from which both criteria clear, i.e. the refit gains the r2 margin and
    its own first point is no longer an outlier; it falls back to 1 when the
    flag holds but no later start fully clears.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < 5:
        raise DomainError("need at least 5 recovery frames to assess the first point")
    if fit0 is None:
        fit0 = kinetics.fit_recovery(t, v, start_index=0, metabolite=metabolite)
    scan = detect_outliers(t, v, fit0, z_threshold=z_threshold)
    z0 = abs(scan.z_scores[0])
    if z0 <= z_threshold:
        return FirstPointCheck(False, None, 0.0, fit0)

    gain_at_1 = None
    suggestion = None
    for k in range(1, MAX_RESELECTION_INDEX + 1):
        refit = kinetics.fit_recovery(t, v, start_index=k, metabolite=metabolite)
        gain = refit.r2 - fit0.r2
        if k == 1:
            gain_at_1 = gain
        rescan = detect_outliers(t, v, refit, z_threshold=z_threshold)
        if gain >= r2_gain and abs(rescan.z_scores[0]) <= z_threshold:
            suggestion = k
            break
    flagged = gain_at_1 is not None and gain_at_1 >= r2_gain
    if not flagged:
        return FirstPointCheck(False, None, gain_at_1 or 0.0, fit0)
    return FirstPointCheck(True, suggestion if suggestion is not None else 1,
                           gain_at_1, fit0)


@dataclass
class ReselectionOutcome:
    fits: dict[str, KineticFit]
    report: QCReport


def apply_reselection(times, values_by_met: Mapping[str, np.ndarray],
                      variables: QCVariables,
                      approved_index: int,
                      rubric: QCRubric | None = None,
                      *,
                      flagged: bool,
                      operator_override: bool = False,
                      provenance: str = "operator") -> ReselectionOutcome:
    """Recompute recovery fits and QC scores with an approved start index.

    Exercise-phase fits and scores never change here.  Rejected when the
    index exceeds the reselection limit or when the subject was not flagged
    and no operator override is recorded.
    """
    rubric = rubric or QCRubric()
    if approved_index > MAX_RESELECTION_INDEX or approved_index < 0:
        raise ReselectionError(
            f"start index {approved_index} outside [0, {MAX_RESELECTION_INDEX}]")
    if not flagged and not operator_override:
        raise ReselectionError("subject is not flagged; an operator override is required")

    fits: dict[str, KineticFit] = {}
    for met, series in values_by_met.items():
        fits[met] = kinetics.fit_recovery(times, series, start_index=approved_index,
                                          metabolite=met)
    scans = {met: detect_outliers(times, values_by_met[met], fit)
             for met, fit in fits.items()}
    union: set[int] = set()
    for scan in scans.values():
        union.update(int(i) for i in scan.indices)
    n_frames = len(np.asarray(times))

    updated = replace(
        variables,
        tau_rec_pcr_s=fits["PCr"].tau_s if "PCr" in fits else variables.tau_rec_pcr_s,
        tau_rec_pi_s=fits["Pi"].tau_s if "Pi" in fits else variables.tau_rec_pi_s,
        r2_rec_pcr=fits["PCr"].r2 if "PCr" in fits else variables.r2_rec_pcr,
        r2_rec_pi=fits["Pi"].r2 if "Pi" in fits else variables.r2_rec_pi,
        outlier_fraction_rec=len(union) / n_frames,
    )
    report = score(updated, rubric)
    report.first_point_flag = flagged
    report.reselected_start_index = approved_index
    report.reselection_provenance = provenance
    return ReselectionOutcome(fits=fits, report=report)
