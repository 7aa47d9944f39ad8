"""Per-metabolite T1 estimation and saturation-correction factors.

Short-TR acquisitions see partially saturated longitudinal magnetization; a
steady-state amplitude is attenuated by (1 - exp(-TR/T1)).  The correction
factor is the reciprocal:

    R(T1, TR) = 1 / (1 - exp(-TR / T1))

T1 itself is recovered from the amplitude ratio of one short-TR and one
long-TR resting acquisition.  The long-TR denominator (1 - exp(-TR_long/T1))
is retained rather than assumed fully relaxed: at T1 ~ 6.6 s a 30 s TR still
hides ~1% saturation, which matters at the tolerances used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from scipy.optimize import brentq

from .errors import (
    ConfigurationError,
    DomainError,
    OutOfRangeError,
    UnphysicalSaturationError,
)

T1_SOURCES = ("individual", "fixed", "cohort_mean")

# Literature consensus values used when no per-subject measurement exists.
FIXED_T1_S = {"PCr": 6.60, "Pi": 6.10, "gATP": 5.00, "aATP": 3.00, "bATP": 3.70}

# Root-finding bracket for T1; outside this range the two-point ratio model
# is not identifiable with the protocol's TRs.
T1_BRACKET_S = (0.1, 60.0)
T1_XTOL_S = 1e-8


@dataclass
class T1Panel:
    """Per-metabolite T1 estimates with standard errors and provenance."""

    t1_s: dict[str, float]
    se_s: dict[str, float]
    source: str

    def __post_init__(self):
        if self.source not in T1_SOURCES:
            raise DomainError(f"unknown T1 source {self.source!r}")
        for met, t1 in self.t1_s.items():
            if not t1 > 0:
                raise DomainError(f"T1 for {met} must be strictly positive")


@dataclass
class CorrectionPanel:
    """Eq-style correction factors R >= 1 at a given TR, with their T1 panel."""

    r: dict[str, float]
    tr_s: float
    t1_panel: T1Panel

    def __post_init__(self):
        for met, r in self.r.items():
            if r < 1.0:
                raise DomainError(f"correction factor for {met} below 1")


def saturation_fraction(t1_s: float, tr_s: float) -> float:
    """Fraction of the fully relaxed amplitude visible at repetition time tr."""
    return 1.0 - math.exp(-tr_s / t1_s)


def correction_factor(t1_s: float, tr_s: float) -> float:
    """R = 1 / (1 - exp(-TR/T1)); strictly increasing in T1, decreasing in TR."""
    if not (t1_s > 0 and tr_s > 0):
        raise DomainError("t1_s and tr_s must be strictly positive")
    return 1.0 / saturation_fraction(t1_s, tr_s)


def _ratio_model(t1_s: float, tr_short_s: float, tr_long_s: float) -> float:
    return saturation_fraction(t1_s, tr_short_s) / saturation_fraction(t1_s, tr_long_s)


def _ratio_slope(t1_s: float, tr_short_s: float, tr_long_s: float) -> float:
    # d/dT1 of the short/long saturation ratio, for standard-error propagation.
    fs = saturation_fraction(t1_s, tr_short_s)
    fl = saturation_fraction(t1_s, tr_long_s)
    dfs = -math.exp(-tr_short_s / t1_s) * tr_short_s / t1_s**2
    dfl = -math.exp(-tr_long_s / t1_s) * tr_long_s / t1_s**2
    return (dfs * fl - fs * dfl) / fl**2


def estimate_t1(amp_long: Mapping[str, float],
                amp_short: Mapping[str, float],
                tr_long_s: float,
                tr_short_s: float,
                amp_long_se: Mapping[str, float] | None = None,
                amp_short_se: Mapping[str, float] | None = None) -> T1Panel:
    """Solve the two-point saturation model for T1, metabolite by metabolite.

    amp_short/amp_long = (1 - exp(-TR_short/T1)) / (1 - exp(-TR_long/T1)) is
    strictly decreasing in T1, so a bracketed root search on (0.1, 60) s is
    reliable.  Standard errors are propagated from the amplitude uncertainties
    by the delta method when provided, otherwise reported as 0.
    """
    if not tr_long_s > tr_short_s > 0:
        raise DomainError("need tr_long_s > tr_short_s > 0")
    t1_s: dict[str, float] = {}
    se_s: dict[str, float] = {}
    lo, hi = T1_BRACKET_S
    for met in amp_long:
        a_long = amp_long[met]
        a_short = amp_short[met]
        if not a_long > 0:
            raise UnphysicalSaturationError(f"{met}: long-TR amplitude must be positive")
        ratio = a_short / a_long
        if ratio >= 1.0 or ratio <= 0.0:
            raise UnphysicalSaturationError(
                f"{met}: short/long amplitude ratio {ratio:.4f} is not in (0, 1)"
            )
        f = lambda t1: _ratio_model(t1, tr_short_s, tr_long_s) - ratio
        f_lo, f_hi = f(lo), f(hi)
        if f_lo * f_hi > 0:
            raise OutOfRangeError(
                f"{met}: no T1 in [{lo}, {hi}] s reproduces amplitude ratio {ratio:.4f}"
            )
        t1 = brentq(f, lo, hi, xtol=T1_XTOL_S)
        t1_s[met] = t1

        se = 0.0
        if amp_long_se is not None or amp_short_se is not None:
            se_l = (amp_long_se or {}).get(met, 0.0)
            se_sh = (amp_short_se or {}).get(met, 0.0)
            se_ratio = ratio * math.sqrt((se_sh / a_short) ** 2 + (se_l / a_long) ** 2)
            slope = _ratio_slope(t1, tr_short_s, tr_long_s)
            se = abs(se_ratio / slope) if slope != 0 else math.inf
        se_s[met] = se
    return T1Panel(t1_s=t1_s, se_s=se_s, source="individual")


def fixed_panel(fixed_table: Mapping[str, float] | None = None) -> T1Panel:
    table = dict(fixed_table or FIXED_T1_S)
    return T1Panel(t1_s=table, se_s={met: 0.0 for met in table}, source="fixed")


def cohort_mean_panel(cohort_t1s: Sequence[T1Panel]) -> T1Panel:
    if not cohort_t1s:
        raise ConfigurationError("cohort_mean mode requires at least one T1 panel")
    mets = list(cohort_t1s[0].t1_s)
    mean = {met: sum(p.t1_s[met] for p in cohort_t1s) / len(cohort_t1s) for met in mets}
    return T1Panel(t1_s=mean, se_s={met: 0.0 for met in mets}, source="cohort_mean")


def build_panel(mode: str,
                tr_s: float,
                t1_individual: T1Panel | None = None,
                fixed_table: Mapping[str, float] | None = None,
                cohort_t1s: Sequence[T1Panel] | None = None) -> CorrectionPanel:
    """Correction factors at TR ``tr_s`` for one of the three T1 sources.

    individual   -> the subject's own measured panel
    fixed        -> literature table (defaults to FIXED_T1_S)
    cohort_mean  -> arithmetic mean T1 over the supplied cohort panels
    """
    if mode == "individual":
        if t1_individual is None:
            raise ConfigurationError("individual mode requires the subject's T1 panel")
        panel = t1_individual
    elif mode == "fixed":
        panel = fixed_panel(fixed_table)
    elif mode == "cohort_mean":
        if cohort_t1s is None:
            raise ConfigurationError("cohort_mean mode requires cohort T1 panels")
        panel = cohort_mean_panel(cohort_t1s)
    else:
        raise ConfigurationError(f"unknown T1 mode {mode!r}")
    r = {met: correction_factor(t1, tr_s) for met, t1 in panel.t1_s.items()}
    return CorrectionPanel(r=r, tr_s=tr_s, t1_panel=panel)


def apply_correction(amp: float, r: float) -> float:
    """Undo the saturation attenuation: corrected amplitude = amp * R."""
    if r < 1.0:
        raise DomainError("correction factor must be >= 1")
    return amp * r
