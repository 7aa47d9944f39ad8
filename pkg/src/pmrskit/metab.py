"""Metabolic panel arithmetic: millimolar scaling, pH, ADP and diprotonated phosphate.

Concentrations are referenced to beta-ATP: the scale factor is frozen on the
resting panel and reused for the post-exercise and post-recovery panels, so a
uniform rescaling of the raw amplitudes leaves every concentration unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

from .errors import DomainError, OutOfRangeError, ReferenceScaleError

PHASES = ("rest", "post_exercise", "post_recovery")


@dataclass(frozen=True)
class MetabolicConstants:
    """Constants for concentration referencing and the pH/ADP relations.

    The phosphate titration constants (pka, delta_acid, delta_base) reproduce
    published resting H2PO4- values from their own Pi and pH columns to within
    0.02 mM.  The creatine-kinase constants are approximate by nature and kept
    configurable: the total-creatine assumption cannot be pinned down more
    tightly than TCr/PCr_rest ~ 1.2-1.3 from the literature.
    """

    atp_reference_mM: float = 8.2
    pka: float = 6.75
    delta_acid_ppm: float = 3.27
    delta_base_ppm: float = 5.69
    k_ck: float = 1.66e9  # creatine-kinase equilibrium constant, 1/M
    tcr_over_pcr_rest: float = 1.25
    km_adp_uM: float = 30.0

    def __post_init__(self):
        for name in (
            "atp_reference_mM",
            "pka",
            "delta_acid_ppm",
            "delta_base_ppm",
            "k_ck",
            "tcr_over_pcr_rest",
            "km_adp_uM",
        ):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive")
        if not self.delta_base_ppm > self.delta_acid_ppm:
            raise DomainError("delta_base_ppm must exceed delta_acid_ppm")
        if not self.tcr_over_pcr_rest > 1:
            raise DomainError("tcr_over_pcr_rest must exceed 1")


class AdpValue(NamedTuple):
    """[ADP] in uM plus a flag set when free creatine was floored to zero."""

    uM: float
    degenerate: bool


@dataclass
class MetabolicPanel:
    """Concentrations, pH and derived quantities for one protocol phase."""

    phase: str
    pcr_mM: float
    pi_mM: float
    atp_mM: float
    adp_uM: float
    h2po4_mM: float
    ph: float
    pcr_pi_ratio: float
    adp_degenerate: bool = False

    def validate(self):
        if self.phase not in PHASES:
            raise DomainError(f"unknown phase {self.phase!r}")
        for name in ("pcr_mM", "pi_mM", "atp_mM", "adp_uM", "h2po4_mM"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if not 6.0 < self.ph < 7.8:
            raise OutOfRangeError(f"pH {self.ph:.3f} outside (6.0, 7.8)")
        return self


def concentrations(corrected_amps: Mapping[str, float],
                   constants: MetabolicConstants | None = None,
                   scale: float | None = None) -> dict[str, float]:
    """Convert saturation-corrected amplitudes to mM.

    When ``scale`` is None the panel references itself: scale is
    atp_reference_mM over its own beta-ATP amplitude.  Downstream callers
    freeze the scale on the resting panel and pass it here for the later
    phases.
    """
    constants = constants or MetabolicConstants()
    if scale is None:
        scale = reference_scale(corrected_amps, constants)
    return {met: corrected_amps[met] * scale for met in corrected_amps}


def reference_scale(corrected_rest_amps: Mapping[str, float],
                    constants: MetabolicConstants | None = None) -> float:
    """mM-per-amplitude-unit factor anchored on the resting beta-ATP amplitude."""
    constants = constants or MetabolicConstants()
    batp = corrected_rest_amps.get("bATP", 0.0)
    if not batp > 0:
        raise ReferenceScaleError("resting beta-ATP amplitude must be positive to anchor concentrations")
    return constants.atp_reference_mM / batp


def ph_from_shift(delta_pi_ppm: float, constants: MetabolicConstants | None = None) -> float:
    """Intracellular pH from the Pi-PCr chemical-shift difference.

    Henderson-Hasselbalch form:
    pH = pKa + log10((delta - delta_acid) / (delta_base - delta)).
    """
    constants = constants or MetabolicConstants()
    lo, hi = constants.delta_acid_ppm, constants.delta_base_ppm
    if not lo < delta_pi_ppm < hi:
        raise OutOfRangeError(
            f"Pi shift {delta_pi_ppm:.4f} ppm outside titration range ({lo}, {hi})"
        )
    return constants.pka + math.log10((delta_pi_ppm - lo) / (hi - delta_pi_ppm))


def shift_from_ph(ph: float, constants: MetabolicConstants | None = None) -> float:
    """Inverse of :func:`ph_from_shift`; used when simulating Pi resonances."""
    constants = constants or MetabolicConstants()
    x = 10.0 ** (ph - constants.pka)
    return (constants.delta_acid_ppm + constants.delta_base_ppm * x) / (1.0 + x)


def h2po4(pi_mM: float, ph: float, constants: MetabolicConstants | None = None) -> float:
    """Diprotonated phosphate concentration: Pi / (1 + 10^(pH - pKa))."""
    constants = constants or MetabolicConstants()
    if pi_mM < 0:
        raise DomainError("pi_mM must be non-negative")
    return pi_mM / (1.0 + 10.0 ** (ph - constants.pka))


def adp(pcr_mM: float, atp_mM: float, ph: float,
        constants: MetabolicConstants | None = None,
        tcr_mM: float | None = None) -> AdpValue:
    """[ADP] in uM from the creatine-kinase equilibrium.

    ADP = ATP * Cr / (PCr * [H+] * K_CK) with Cr = TCr - PCr.  TCr is frozen
    on the resting panel as tcr_over_pcr_rest * PCr_rest; pass that value via
    ``tcr_mM`` for non-resting phases.  When PCr exhausts the creatine pool
    the result is 0 uM with the degeneracy flag set.
    """
    constants = constants or MetabolicConstants()
    if not pcr_mM > 0:
        raise DomainError("pcr_mM must be strictly positive")
    if tcr_mM is None:
        tcr_mM = constants.tcr_over_pcr_rest * pcr_mM
    cr_mM = tcr_mM - pcr_mM
    if cr_mM <= 0:
        return AdpValue(0.0, True)
    h_molar = 10.0 ** (-ph)
    adp_molar = (atp_mM * 1e-3) * (cr_mM * 1e-3) / ((pcr_mM * 1e-3) * h_molar * constants.k_ck)
    return AdpValue(adp_molar * 1e6, False)


def depletion_pct(pcr_rest_mM: float, pcr_post_mM: float) -> float:
    """Percentage drop of PCr from rest to end-exercise."""
    if not pcr_rest_mM > 0:
        raise DomainError("pcr_rest_mM must be strictly positive")
    return 100.0 * (pcr_rest_mM - pcr_post_mM) / pcr_rest_mM


def repletion_pct(pcr_rest_mM: float, pcr_post_mM: float, pcr_rec_mM: float) -> float:
    """Post-exercise PCr regain relative to the resting level."""
    if not pcr_rest_mM > 0:
        raise DomainError("pcr_rest_mM must be strictly positive")
    return 100.0 * (pcr_rec_mM - pcr_post_mM) / pcr_rest_mM


def build_panel(phase: str,
                corrected_amps: Mapping[str, float],
                pi_shift_ppm: float,
                scale: float,
                tcr_mM: float,
                constants: MetabolicConstants | None = None) -> MetabolicPanel:
    """Assemble the full metabolic panel for one phase from corrected amplitudes."""
    constants = constants or MetabolicConstants()
    conc = concentrations(corrected_amps, constants, scale=scale)
    ph = ph_from_shift(pi_shift_ppm, constants)
    pcr, pi = conc["PCr"], conc["Pi"]
    atp = conc["bATP"]
    adp_value = adp(pcr, atp, ph, constants, tcr_mM=tcr_mM)
    ratio = pcr / pi if pi > 0 else math.inf
    return MetabolicPanel(
        phase=phase,
        pcr_mM=pcr,
        pi_mM=pi,
        atp_mM=atp,
        adp_uM=adp_value.uM,
        h2po4_mM=h2po4(pi, ph, constants),
        ph=ph,
        pcr_pi_ratio=ratio,
        adp_degenerate=adp_value.degenerate,
    ).validate()
