"""End-to-end orchestration: subject files, per-subject analysis, cohort reports.

Subject file schema (JSON):

    {
      "id": str, "group": str, "metadata": {...},
      "protocol": {"tr_dynamic_s": 4.0, "n_rest": 10, "n_exercise": 30,
                   "n_recovery": 90, "tr_long_s": 30.0, "n_long": 12,
                   "n_short": 32, ...},
      "resting": {"long_tr": BLOCK, "short_tr": BLOCK},      # optional
      "dynamic": {"fids": [[[re, im], ...] per frame]}
               | {"amplitudes": {"PCr": [...], ...}, "pi_shift_ppm": [...]},
      "truth": {...}                                          # optional
    }

where BLOCK is {"fids": [...]} or {"amplitudes": {met: [per-frame values]}}.
The amplitude path carries pre-quantified series so datasets without raw
FIDs remain usable; it must include "pi_shift_ppm" for pH.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kinetics, metab, qc, quant, relax, stats
from .config import AnalysisConfig
from .errors import (
    ConfigurationError,
    PmrsError,
    ProtocolError,
    ReselectionError,
    SubjectParseError,
)
from .kinetics import KineticFit, OxidativeMarkers
from .metab import MetabolicPanel
from .metabolites import METABOLITES
from .qc import QCReport, QCVariables
from .quant import FrameQuant
from .relax import CorrectionPanel, T1Panel
from .stats import GroupSummary, TestResult
from .synth import AcquisitionProtocol


@dataclass
class RestingBlock:
    tr_s: float
    fids: list[np.ndarray] | None = None
    amplitudes: dict[str, np.ndarray] | None = None


@dataclass
class SubjectAnalysis:
    amp_series: dict[str, np.ndarray] | None = None
    pi_shift_ppm: np.ndarray | None = None
    frame_quants: list[FrameQuant] | None = None
    t1_panel: T1Panel | None = None
    correction_panel: CorrectionPanel | None = None
    anchor_panel: T1Panel | None = None
    scale_mM_per_au: float | None = None
    tcr_mM: float | None = None
    conc_series_mM: dict[str, np.ndarray] | None = None
    ph_series: np.ndarray | None = None
    ph_min_exercise: float | None = None
    panels: dict[str, MetabolicPanel] = field(default_factory=dict)
    fits: dict[str, KineticFit] = field(default_factory=dict)
    markers: OxidativeMarkers | None = None
    qc_variables: QCVariables | None = None
    qc_report: QCReport | None = None
    errors: list[str] = field(default_factory=list)


@dataclass
class SubjectRecord:
    subject_id: str
    group: str
    metadata: dict
    protocol: AcquisitionProtocol
    dynamic_fids: list[np.ndarray] | None
    dynamic_amplitudes: dict[str, np.ndarray] | None
    pi_shift_ppm: np.ndarray | None
    resting_long: RestingBlock | None
    resting_short: RestingBlock | None
    truth: dict | None = None
    analysis: SubjectAnalysis | None = None

    @property
    def phase_slices(self) -> dict[str, slice]:
        p = self.protocol
        return {"rest": p.rest_slice, "exercise": p.exercise_slice,
                "recovery": p.recovery_slice}


# ---------------------------------------------------------------------------
# Parsing


def _expect(obj, key, kind, path):
    if key not in obj:
        raise SubjectParseError(f"missing required key {key!r}", path)
    value = obj[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SubjectParseError(f"{key!r} must be a number", f"{path}.{key}")
        return float(value)
    if not isinstance(value, kind):
        raise SubjectParseError(f"{key!r} must be {kind.__name__}", f"{path}.{key}")
    return value


def _parse_fids(raw, path) -> list[np.ndarray]:
    if not isinstance(raw, list) or not raw:
        raise SubjectParseError("fids must be a non-empty list of frames", path)
    frames = []
    for i, frame in enumerate(raw):
        arr = np.asarray(frame, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise SubjectParseError("each frame must be a list of [re, im] pairs",
                                    f"{path}[{i}]")
        frames.append(arr[:, 0] + 1j * arr[:, 1])
    return frames


def _parse_amplitudes(raw, n_frames, path) -> dict[str, np.ndarray]:
    if not isinstance(raw, dict):
        raise SubjectParseError("amplitudes must be an object keyed by metabolite", path)
    out = {}
    for met in METABOLITES:
        if met not in raw:
            raise SubjectParseError(f"missing metabolite {met!r}", path)
        arr = np.asarray(raw[met], dtype=float)
        if arr.ndim != 1:
            raise SubjectParseError("amplitude series must be 1-d", f"{path}.{met}")
        if n_frames is not None and arr.size != n_frames:
            raise ProtocolError(
                f"{path}.{met}: {arr.size} frames, protocol expects {n_frames}")
        out[met] = arr
    return out


def _parse_resting_block(raw, tr_s, n_frames, path) -> RestingBlock:
    if "fids" in raw:
        fids = _parse_fids(raw["fids"], f"{path}.fids")
        if len(fids) != n_frames:
            raise ProtocolError(f"{path}.fids: {len(fids)} frames, protocol expects {n_frames}")
        return RestingBlock(tr_s=tr_s, fids=fids)
    if "amplitudes" in raw:
        return RestingBlock(tr_s=tr_s,
                            amplitudes=_parse_amplitudes(raw["amplitudes"], n_frames,
                                                         f"{path}.amplitudes"))
    raise SubjectParseError("resting block needs 'fids' or 'amplitudes'", path)


def parse_subject(source) -> SubjectRecord:
    """Validate and load one subject file (path, JSON string/dict or file object)."""
    if isinstance(source, (str, Path)) and not str(source).lstrip().startswith("{"):
        raw = json.loads(Path(source).read_text())
    elif isinstance(source, str):
        raw = json.loads(source)
    elif isinstance(source, io.IOBase):
        raw = json.load(source)
    else:
        raw = source
    if not isinstance(raw, dict):
        raise SubjectParseError("subject document must be a JSON object")

    subject_id = _expect(raw, "id", str, "$")
    group = _expect(raw, "group", str, "$")
    metadata = raw.get("metadata", {})
    if not isinstance(metadata, dict):
        raise SubjectParseError("metadata must be an object", "$.metadata")

    proto_raw = _expect(raw, "protocol", dict, "$")
    known = {f: proto_raw[f] for f in (
        "tr_dynamic_s", "n_rest", "n_exercise", "n_recovery", "tr_long_s",
        "n_long", "n_short", "spectrometer_freq_mhz", "n_samples", "dwell_time_s",
    ) if f in proto_raw}
    try:
        protocol = AcquisitionProtocol(**known)
    except ProtocolError as err:
        raise SubjectParseError(str(err), "$.protocol") from err

    dynamic = _expect(raw, "dynamic", dict, "$")
    n_dyn = protocol.n_dynamic
    dynamic_fids = None
    dynamic_amps = None
    pi_shift = None
    if "fids" in dynamic:
        dynamic_fids = _parse_fids(dynamic["fids"], "$.dynamic.fids")
        if len(dynamic_fids) != n_dyn:
            raise ProtocolError(
                f"$.dynamic.fids: {len(dynamic_fids)} frames, protocol expects {n_dyn}")
    elif "amplitudes" in dynamic:
        dynamic_amps = _parse_amplitudes(dynamic["amplitudes"], n_dyn,
                                         "$.dynamic.amplitudes")
        if "pi_shift_ppm" not in dynamic:
            raise SubjectParseError("amplitude-mode dynamic data requires 'pi_shift_ppm'",
                                    "$.dynamic")
        pi_shift = np.asarray(dynamic["pi_shift_ppm"], dtype=float)
        if pi_shift.size != n_dyn:
            raise ProtocolError(
                f"$.dynamic.pi_shift_ppm: {pi_shift.size} frames, protocol expects {n_dyn}")
    else:
        raise SubjectParseError("dynamic block needs 'fids' or 'amplitudes'", "$.dynamic")

    resting_long = resting_short = None
    resting = raw.get("resting")
    if resting is not None:
        if not isinstance(resting, dict):
            raise SubjectParseError("resting must be an object", "$.resting")
        if "long_tr" in resting:
            resting_long = _parse_resting_block(resting["long_tr"], protocol.tr_long_s,
                                                protocol.n_long, "$.resting.long_tr")
        if "short_tr" in resting:
            resting_short = _parse_resting_block(resting["short_tr"],
                                                 protocol.tr_dynamic_s,
                                                 protocol.n_short, "$.resting.short_tr")

    return SubjectRecord(
        subject_id=subject_id,
        group=group,
        metadata=dict(metadata),
        protocol=protocol,
        dynamic_fids=dynamic_fids,
        dynamic_amplitudes=dynamic_amps,
        pi_shift_ppm=pi_shift,
        resting_long=resting_long,
        resting_short=resting_short,
        truth=raw.get("truth"),
    )


# ---------------------------------------------------------------------------
# Per-subject analysis


def _block_amplitudes(block: RestingBlock, cfg: AnalysisConfig,
                      protocol: AcquisitionProtocol
                      ) -> tuple[dict[str, float], dict[str, float]]:
    """Mean per-metabolite resting amplitude and its standard error."""
    if block.amplitudes is not None:
        per_frame = block.amplitudes
    else:
        basis = quant.default_basis(protocol)
        results = quant.quantify_series(
            block.fids, np.arange(len(block.fids), dtype=float) * block.tr_s,
            basis, cfg.quant)
        per_frame = {met: np.array([fr.amplitudes[met] for fr in results])
                     for met in METABOLITES}
    mean = {}
    se = {}
    for met, series in per_frame.items():
        mean[met] = float(np.mean(series))
        n = series.size
        se[met] = float(np.std(series, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _quantify_dynamic(record: SubjectRecord, cfg: AnalysisConfig
                      ) -> tuple[dict[str, np.ndarray], np.ndarray, list[FrameQuant] | None]:
    if record.dynamic_amplitudes is not None:
        return record.dynamic_amplitudes, record.pi_shift_ppm, None
    basis = quant.default_basis(record.protocol)
    frames = quant.quantify_series(record.dynamic_fids,
                                   record.protocol.frame_times(), basis, cfg.quant)
    amps = {met: np.array([fr.amplitudes[met] for fr in frames]) for met in METABOLITES}
    pi_shift = np.array([fr.pi_minus_pcr_shift() for fr in frames])
    return amps, pi_shift, frames


def individual_t1_panel(record: SubjectRecord, cfg: AnalysisConfig) -> T1Panel:
    if record.resting_long is None or record.resting_short is None:
        raise ConfigurationError(
            f"{record.subject_id}: individual T1 mode needs long-TR and short-TR "
            "resting acquisitions")
    amp_long, se_long = _block_amplitudes(record.resting_long, cfg, record.protocol)
    amp_short, se_short = _block_amplitudes(record.resting_short, cfg, record.protocol)
    return relax.estimate_t1(amp_long, amp_short,
                             tr_long_s=record.resting_long.tr_s,
                             tr_short_s=record.resting_short.tr_s,
                             amp_long_se=se_long, amp_short_se=se_short)


def analyze_subject(record: SubjectRecord, cfg: AnalysisConfig | None = None,
                    cohort_t1: T1Panel | None = None) -> SubjectRecord:
    """Run quantification, correction, panels, kinetics and QC on one subject.

    Stage errors are recorded on ``record.analysis.errors`` instead of being
    raised, so cohort runs keep going past broken subjects.

    Concentration referencing is pinned to the subject's anchor panel (the
    individual T1 measurement when resting data exists, otherwise the active
    panel): switching the reporting mode between fixed and individual factors
    re-corrects the reported metabolite but never silently re-derives the
    mM-per-unit anchor, which keeps mode comparisons subject-wise monotone in
    T1 and matches the convention of the tables this reproduces.
    """
    cfg = cfg or AnalysisConfig()
    analysis = SubjectAnalysis()
    record.analysis = analysis
    protocol = record.protocol
    times = protocol.frame_times()
    slices = record.phase_slices

    try:
        amps, pi_shift, frames = _quantify_dynamic(record, cfg)
        analysis.amp_series = amps
        analysis.pi_shift_ppm = pi_shift
        analysis.frame_quants = frames

        # T1 / correction factors
        individual: T1Panel | None = None
        if record.resting_long is not None and record.resting_short is not None:
            individual = individual_t1_panel(record, cfg)
        if cfg.t1_mode == "individual":
            if individual is None:
                raise ConfigurationError(
                    f"{record.subject_id}: individual T1 mode needs resting acquisitions")
            panel = relax.build_panel("individual", protocol.tr_dynamic_s,
                                      t1_individual=individual)
        elif cfg.t1_mode == "fixed":
            panel = relax.build_panel("fixed", protocol.tr_dynamic_s,
                                      fixed_table=cfg.fixed_t1_s)
        else:
            if cohort_t1 is None:
                raise ConfigurationError(
                    f"{record.subject_id}: cohort_mean T1 mode needs the cohort panel")
            panel = relax.build_panel("individual", protocol.tr_dynamic_s,
                                      t1_individual=cohort_t1)
        analysis.t1_panel = individual if individual is not None else panel.t1_panel
        analysis.correction_panel = panel
        anchor = individual if individual is not None else panel.t1_panel
        analysis.anchor_panel = anchor

        conc = {met: amps[met] * panel.r[met] for met in METABOLITES}

        # mM anchor: resting beta-ATP corrected with the anchor panel's factor
        anchor_r_batp = relax.correction_factor(anchor.t1_s["bATP"], protocol.tr_dynamic_s)
        rest_batp = float(np.mean(amps["bATP"][slices["rest"]])) * anchor_r_batp
        scale = metab.reference_scale({"bATP": rest_batp}, cfg.constants)
        analysis.scale_mM_per_au = scale
        conc_mM = {met: conc[met] * scale for met in METABOLITES}
        analysis.conc_series_mM = conc_mM

        ph_series = np.array([metab.ph_from_shift(s, cfg.constants) for s in pi_shift])
        analysis.ph_series = ph_series
        analysis.ph_min_exercise = float(np.min(ph_series[slices["exercise"]]))

        # Rest panel from the mean of the rest frames
        rest_amps = {met: float(np.mean(conc[met][slices["rest"]])) for met in METABOLITES}
        rest_shift = float(np.mean(pi_shift[slices["rest"]]))
        pcr_rest_mM = rest_amps["PCr"] * scale
        tcr_mM = cfg.constants.tcr_over_pcr_rest * pcr_rest_mM
        analysis.tcr_mM = tcr_mM
        analysis.panels["rest"] = metab.build_panel(
            "rest", rest_amps, rest_shift, scale, tcr_mM, cfg.constants)

        # Kinetic fits on the concentration series
        ex = slices["exercise"]
        rec = slices["recovery"]
        fits = analysis.fits
        fits["ex_PCr"] = kinetics.fit_exercise(times[ex], conc_mM["PCr"][ex],
                                               metabolite="PCr")
        fits["ex_Pi"] = kinetics.fit_exercise(times[ex], conc_mM["Pi"][ex],
                                              metabolite="Pi")
        fits["rec_PCr"] = kinetics.fit_recovery(times[rec], conc_mM["PCr"][rec],
                                                start_index=cfg.recovery_start_index,
                                                metabolite="PCr")
        fits["rec_Pi"] = kinetics.fit_recovery(times[rec], conc_mM["Pi"][rec],
                                               start_index=cfg.recovery_start_index,
                                               metabolite="Pi")

        # Post-exercise panel from fitted end-exercise values (last exercise
        # frame time); ATP from the mean of the last five exercise frames.
        t_end_ex = times[ex][-1]
        pcr_post = float(fits["ex_PCr"].predict(np.array([t_end_ex]))[0])
        pi_post = float(fits["ex_Pi"].predict(np.array([t_end_ex]))[0])
        post_amps = {met: float(np.mean(conc[met][ex][-5:])) for met in METABOLITES}
        post_amps["PCr"] = pcr_post / scale
        post_amps["Pi"] = pi_post / scale
        post_shift = float(np.mean(pi_shift[ex][-5:]))
        analysis.panels["post_exercise"] = metab.build_panel(
            "post_exercise", post_amps, post_shift, scale, tcr_mM, cfg.constants)

        # Post-recovery panel from the recovery asymptotes
        rec_amps = {met: float(np.mean(conc[met][rec][-5:])) for met in METABOLITES}
        rec_amps["PCr"] = fits["rec_PCr"].asymptote / scale
        rec_amps["Pi"] = fits["rec_Pi"].asymptote / scale
        rec_shift = float(np.mean(pi_shift[rec][-5:]))
        analysis.panels["post_recovery"] = metab.build_panel(
            "post_recovery", rec_amps, rec_shift, scale, tcr_mM, cfg.constants)

        # Oxidative markers: exercise PCr drop over the recovery constant,
        # Vmax from end-exercise ADP.
        rest_panel = analysis.panels["rest"]
        post_panel = analysis.panels["post_exercise"]
        delta_pcr = rest_panel.pcr_mM - post_panel.pcr_mM
        if post_panel.adp_uM > 0:
            analysis.markers = kinetics.derive_markers(
                delta_pcr, fits["rec_PCr"].tau_s, post_panel.adp_uM,
                cfg.constants.km_adp_uM)

        # QC variables, first-point detection, scoring
        scans_ex = {met: qc.detect_outliers(times[ex], conc_mM[met][ex], fits[f"ex_{met}"])
                    for met in ("PCr", "Pi")}
        scans_rec = {met: qc.detect_outliers(times[rec], conc_mM[met][rec], fits[f"rec_{met}"])
                     for met in ("PCr", "Pi")}

        def union_fraction(scans, n_frames):
            union = set()
            for scan in scans.values():
                union.update(int(i) for i in scan.indices)
            return len(union) / n_frames

        variables = QCVariables(
            depletion_pct=metab.depletion_pct(rest_panel.pcr_mM, post_panel.pcr_mM),
            tau_ex_pcr_s=fits["ex_PCr"].tau_s,
            tau_ex_pi_s=fits["ex_Pi"].tau_s,
            r2_ex_pcr=fits["ex_PCr"].r2,
            r2_ex_pi=fits["ex_Pi"].r2,
            outlier_fraction_ex=union_fraction(scans_ex, protocol.n_exercise),
            tau_rec_pcr_s=fits["rec_PCr"].tau_s,
            tau_rec_pi_s=fits["rec_Pi"].tau_s,
            r2_rec_pcr=fits["rec_PCr"].r2,
            r2_rec_pi=fits["rec_Pi"].r2,
            outlier_fraction_rec=union_fraction(scans_rec, protocol.n_recovery),
        )
        analysis.qc_variables = variables
        report = qc.score(variables, cfg.rubric)
        check = qc.flag_first_point(times[rec], conc_mM["PCr"][rec],
                                    fit0=fits["rec_PCr"])
        report.first_point_flag = check.flagged
        report.suggested_start_index = check.suggested_index
        analysis.qc_report = report
    except PmrsError as err:
        analysis.errors.append(f"{type(err).__name__}: {err}")
    return record


def analyze_cohort(records: Sequence[SubjectRecord],
                   cfg: AnalysisConfig | None = None) -> list[SubjectRecord]:
    """Analyze every subject; cohort_mean mode averages T1 per group first."""
    cfg = cfg or AnalysisConfig()
    cohort_panels: dict[str, T1Panel] = {}
    if cfg.t1_mode == "cohort_mean":
        by_group: dict[str, list[T1Panel]] = {}
        for record in records:
            try:
                by_group.setdefault(record.group, []).append(
                    individual_t1_panel(record, cfg))
            except PmrsError:
                continue
        for group, panels in by_group.items():
            mean = relax.cohort_mean_panel(panels)
            cohort_panels[group] = mean
    for record in records:
        analyze_subject(record, cfg, cohort_t1=cohort_panels.get(record.group))
    return list(records)


def apply_reselection(record: SubjectRecord, approved_index: int,
                      cfg: AnalysisConfig | None = None,
                      operator: str = "operator",
                      override: bool = False,
                      provenance: str | None = None) -> SubjectRecord:
    """Re-run the recovery fits and QC for an approved start-index reselection."""
    cfg = cfg or AnalysisConfig()
    analysis = record.analysis
    if analysis is None or analysis.qc_report is None:
        raise ReselectionError(f"{record.subject_id}: subject has not been analyzed")
    rec = record.phase_slices["recovery"]
    times = record.protocol.frame_times()[rec]
    values = {met: analysis.conc_series_mM[met][rec] for met in ("PCr", "Pi")}
    suggestion = analysis.qc_report.suggested_start_index
    outcome = qc.apply_reselection(
        times, values, analysis.qc_variables, approved_index, cfg.rubric,
        flagged=analysis.qc_report.first_point_flag,
        operator_override=override,
        provenance=provenance or (
            "suggested" if suggestion == approved_index else f"operator:{operator}"),
    )
    analysis.fits["rec_PCr"] = outcome.fits["PCr"]
    analysis.fits["rec_Pi"] = outcome.fits["Pi"]
    outcome.report.suggested_start_index = suggestion
    analysis.qc_variables = outcome.report.variables
    analysis.qc_report = outcome.report

    # Recovery-dependent quantities move with the new fits.
    scale = analysis.scale_mM_per_au
    rest_panel = analysis.panels["rest"]
    post_panel = analysis.panels["post_exercise"]
    conc = {met: analysis.amp_series[met] * analysis.correction_panel.r[met]
            for met in METABOLITES}
    rec_slice = record.phase_slices["recovery"]
    rec_raw = {met: float(np.mean(conc[met][rec_slice][-5:])) for met in METABOLITES}
    rec_raw["PCr"] = outcome.fits["PCr"].asymptote / scale
    rec_raw["Pi"] = outcome.fits["Pi"].asymptote / scale
    rec_shift = float(np.mean(analysis.pi_shift_ppm[rec_slice][-5:]))
    analysis.panels["post_recovery"] = metab.build_panel(
        "post_recovery", rec_raw, rec_shift, scale, analysis.tcr_mM, cfg.constants)
    if post_panel.adp_uM > 0:
        analysis.markers = kinetics.derive_markers(
            rest_panel.pcr_mM - post_panel.pcr_mM,
            outcome.fits["PCr"].tau_s, post_panel.adp_uM, cfg.constants.km_adp_uM)
    return record


# ---------------------------------------------------------------------------
# Cohort comparison


@dataclass(frozen=True)
class MarkerSpec:
    name: str
    scope: str  # rest | exercise | recovery
    extract: Callable[[SubjectAnalysis], float | None]


def _panel_value(phase: str, attr: str):
    def get(a: SubjectAnalysis):
        panel = a.panels.get(phase)
        return getattr(panel, attr) if panel is not None else None
    return get


def _fit_value(key: str, attr: str):
    def get(a: SubjectAnalysis):
        fit = a.fits.get(key)
        return getattr(fit, attr) if fit is not None else None
    return get


def _t1_value(met: str):
    def get(a: SubjectAnalysis):
        return a.t1_panel.t1_s.get(met) if a.t1_panel is not None else None
    return get


def _depletion(a: SubjectAnalysis):
    return a.qc_variables.depletion_pct if a.qc_variables is not None else None


def _repletion(a: SubjectAnalysis):
    rest = a.panels.get("rest")
    post = a.panels.get("post_exercise")
    rec = a.panels.get("post_recovery")
    if None in (rest, post, rec):
        return None
    return metab.repletion_pct(rest.pcr_mM, post.pcr_mM, rec.pcr_mM)


def _pcr_change_ex(a: SubjectAnalysis):
    rest = a.panels.get("rest")
    post = a.panels.get("post_exercise")
    if None in (rest, post):
        return None
    return rest.pcr_mM - post.pcr_mM


def _pcr_change_rec(a: SubjectAnalysis):
    post = a.panels.get("post_exercise")
    rec = a.panels.get("post_recovery")
    if None in (post, rec):
        return None
    return rec.pcr_mM - post.pcr_mM


def _ph_min(a: SubjectAnalysis):
    return a.ph_min_exercise


def _ph_change(a: SubjectAnalysis):
    rest = a.panels.get("rest")
    post = a.panels.get("post_exercise")
    if None in (rest, post):
        return None
    return rest.ph - post.ph


def _marker(name, scope, extract):
    return MarkerSpec(name, scope, extract)


MARKERS: tuple[MarkerSpec, ...] = (
    _marker("t1_pcr_s", "rest", _t1_value("PCr")),
    _marker("t1_pi_s", "rest", _t1_value("Pi")),
    _marker("t1_gatp_s", "rest", _t1_value("gATP")),
    _marker("t1_aatp_s", "rest", _t1_value("aATP")),
    _marker("t1_batp_s", "rest", _t1_value("bATP")),
    _marker("pcr_rest_mM", "rest", _panel_value("rest", "pcr_mM")),
    _marker("pi_rest_mM", "rest", _panel_value("rest", "pi_mM")),
    _marker("atp_rest_mM", "rest", _panel_value("rest", "atp_mM")),
    _marker("adp_rest_uM", "rest", _panel_value("rest", "adp_uM")),
    _marker("h2po4_rest_mM", "rest", _panel_value("rest", "h2po4_mM")),
    _marker("ph_rest", "rest", _panel_value("rest", "ph")),
    _marker("pcr_pi_rest", "rest", _panel_value("rest", "pcr_pi_ratio")),
    _marker("tau_ex_pcr_s", "exercise", _fit_value("ex_PCr", "tau_s")),
    _marker("tau_ex_pi_s", "exercise", _fit_value("ex_Pi", "tau_s")),
    _marker("pcr_post_mM", "exercise", _panel_value("post_exercise", "pcr_mM")),
    _marker("pi_post_mM", "exercise", _panel_value("post_exercise", "pi_mM")),
    _marker("atp_post_mM", "exercise", _panel_value("post_exercise", "atp_mM")),
    _marker("adp_post_uM", "exercise", _panel_value("post_exercise", "adp_uM")),
    _marker("h2po4_post_mM", "exercise", _panel_value("post_exercise", "h2po4_mM")),
    _marker("ph_post", "exercise", _panel_value("post_exercise", "ph")),
    _marker("ph_min", "exercise", _ph_min),
    _marker("ph_change", "exercise", _ph_change),
    _marker("pcr_depletion_pct", "exercise", _depletion),
    _marker("pcr_change_ex_mM", "exercise", _pcr_change_ex),
    _marker("vi_pcr_mM_s", "exercise",
            lambda a: a.markers.vi_mM_s if a.markers else None),
    _marker("vmax_mM_s", "exercise",
            lambda a: a.markers.vmax_mM_s if a.markers else None),
    _marker("r2_tau_ex_pcr", "exercise", _fit_value("ex_PCr", "r2")),
    _marker("r2_tau_ex_pi", "exercise", _fit_value("ex_Pi", "r2")),
    _marker("tau_rec_pcr_s", "recovery", _fit_value("rec_PCr", "tau_s")),
    _marker("tau_rec_pi_s", "recovery", _fit_value("rec_Pi", "tau_s")),
    _marker("pcr_rec_mM", "recovery", _panel_value("post_recovery", "pcr_mM")),
    _marker("pi_rec_mM", "recovery", _panel_value("post_recovery", "pi_mM")),
    _marker("atp_rec_mM", "recovery", _panel_value("post_recovery", "atp_mM")),
    _marker("adp_rec_uM", "recovery", _panel_value("post_recovery", "adp_uM")),
    _marker("h2po4_rec_mM", "recovery", _panel_value("post_recovery", "h2po4_mM")),
    _marker("ph_rec", "recovery", _panel_value("post_recovery", "ph")),
    _marker("pcr_repletion_pct", "recovery", _repletion),
    _marker("pcr_change_rec_mM", "recovery", _pcr_change_rec),
    _marker("r2_tau_rec_pcr", "recovery", _fit_value("rec_PCr", "r2")),
    _marker("r2_tau_rec_pi", "recovery", _fit_value("rec_Pi", "r2")),
    _marker("cv_tau_rec_pcr_pct", "recovery", _fit_value("rec_PCr", "cv_tau_pct")),
    _marker("cv_tau_rec_pi_pct", "recovery", _fit_value("rec_Pi", "cv_tau_pct")),
)


@dataclass
class MarkerRow:
    marker: str
    scope: str
    patients: GroupSummary | None
    controls: GroupSummary | None
    test: TestResult | None
    significant: bool
    trend: str | None   # "up" | "down" when significant
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "marker": self.marker,
            "scope": self.scope,
            "patients": self.patients.to_dict() if self.patients else None,
            "controls": self.controls.to_dict() if self.controls else None,
            "test": self.test.to_dict() if self.test else None,
            "significant": self.significant,
            "trend": self.trend,
            "note": self.note,
        }


@dataclass
class CohortComparison:
    patient_group: str
    control_group: str
    with_qcs: bool
    t1_mode: str
    rows: list[MarkerRow]
    n_patients_total: int
    n_controls_total: int
    alpha: float = 0.05

    def row(self, marker: str) -> MarkerRow:
        for row in self.rows:
            if row.marker == marker:
                return row
        raise KeyError(marker)

    def to_dict(self) -> dict:
        return {
            "patient_group": self.patient_group,
            "control_group": self.control_group,
            "with_qcs": self.with_qcs,
            "t1_mode": self.t1_mode,
            "alpha": self.alpha,
            "n_patients_total": self.n_patients_total,
            "n_controls_total": self.n_controls_total,
            "rows": [row.to_dict() for row in self.rows],
        }


def _usable(record: SubjectRecord, scope: str, with_qcs: bool) -> bool:
    analysis = record.analysis
    if analysis is None or analysis.errors or analysis.qc_report is None:
        return False
    if not with_qcs:
        return True
    report = analysis.qc_report
    if report.subject_decision == qc.EXCLUDED:
        return False
    if scope == "exercise" and report.exercise_decision == qc.EXCLUDED:
        return False
    return True


def compare_cohorts(patients: Sequence[SubjectRecord],
                    controls: Sequence[SubjectRecord],
                    with_qcs: bool = True,
                    cfg: AnalysisConfig | None = None,
                    alpha: float = 0.05) -> CohortComparison:
    """Per-marker descriptive statistics, test selection and trend directions.

    With QCS active, fully excluded subjects vanish from every row and
    exercise-excluded subjects from exercise-scope rows, so each row carries
    its own n.  Rows with fewer than 3 usable subjects in either group are
    marked not computable.
    """
    cfg = cfg or AnalysisConfig()
    rows = []
    for spec in MARKERS:
        values = {}
        for label, cohort in (("patients", patients), ("controls", controls)):
            vals = [spec.extract(r.analysis) for r in cohort
                    if _usable(r, spec.scope, with_qcs)]
            values[label] = np.array([v for v in vals if v is not None and math.isfinite(v)])
        pat, con = values["patients"], values["controls"]
        if pat.size < 3 or con.size < 3:
            rows.append(MarkerRow(spec.name, spec.scope, None, None, None,
                                  False, None, note="not computable: fewer than 3 subjects"))
            continue
        try:
            summary_p = stats.describe(pat)
            summary_c = stats.describe(con)
            test = stats.choose_and_test(pat, con, alpha=stats.NORMALITY_ALPHA)
        except PmrsError as err:
            rows.append(MarkerRow(spec.name, spec.scope, None, None, None,
                                  False, None, note=f"not computable: {err}"))
            continue
        significant = test.p_value < alpha
        trend = None
        if significant:
            trend = "up" if summary_p.mean > summary_c.mean else "down"
        rows.append(MarkerRow(spec.name, spec.scope, summary_p, summary_c,
                              test, significant, trend))
    patient_group = patients[0].group if patients else "patients"
    control_group = controls[0].group if controls else "controls"
    return CohortComparison(
        patient_group=patient_group,
        control_group=control_group,
        with_qcs=with_qcs,
        t1_mode=cfg.t1_mode,
        rows=rows,
        n_patients_total=len(patients),
        n_controls_total=len(controls),
        alpha=alpha,
    )


def comparison_to_csv(comparison: CohortComparison) -> str:
    """CSV rows mirroring the published table layout, deterministic bytes."""
    header = ("marker,scope,patient_n,patient_mean,patient_sd,"
              "control_n,control_mean,control_sd,p_value,test,significant,trend")
    lines = [header]
    for row in comparison.rows:
        if row.patients is None:
            lines.append(f"{row.marker},{row.scope},,,,,,,,,,")
            continue
        lines.append(",".join([
            row.marker,
            row.scope,
            str(row.patients.n),
            f"{row.patients.mean:.6g}",
            f"{row.patients.sd:.6g}",
            str(row.controls.n),
            f"{row.controls.mean:.6g}",
            f"{row.controls.sd:.6g}",
            f"{row.test.p_value:.6g}",
            row.test.test_kind,
            "yes" if row.significant else "no",
            row.trend or "",
        ]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Bland-Altman agreement


@dataclass
class BlandAltmanResult:
    bias: float
    loa_low: float
    loa_high: float
    r2: float
    means: np.ndarray
    diffs: np.ndarray

    def to_dict(self) -> dict:
        return {"bias": self.bias, "loa_low": self.loa_low, "loa_high": self.loa_high,
                "r2": self.r2, "means": self.means.tolist(), "diffs": self.diffs.tolist()}


def bland_altman(pairs) -> BlandAltmanResult:
    """Agreement between individually corrected and fixed-corrected values.

    ``pairs`` holds (value_individual, value_fixed) rows; the difference is
    fixed minus individual, so a positive bias means the fixed factor sits
    higher.  Limits of agreement are bias +/- 1.96 SD of the differences.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise PmrsError("need at least 2 (individual, fixed) pairs")
    individual, fixed = arr[:, 0], arr[:, 1]
    diffs = fixed - individual
    means = (fixed + individual) / 2.0
    bias = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if individual.std() == 0 or fixed.std() == 0:
        r2 = 1.0 if np.allclose(individual, fixed) else 0.0
    else:
        r2 = float(np.corrcoef(individual, fixed)[0, 1] ** 2)
    return BlandAltmanResult(
        bias=bias,
        loa_low=bias - 1.96 * sd,
        loa_high=bias + 1.96 * sd,
        r2=r2,
        means=means,
        diffs=diffs,
    )


# ---------------------------------------------------------------------------
# Serialization helpers (service snapshots, CLI output)


def subject_summary(record: SubjectRecord) -> dict:
    analysis = record.analysis
    out = {
        "id": record.subject_id,
        "group": record.group,
        "analyzed": analysis is not None,
        "errors": list(analysis.errors) if analysis else [],
    }
    if analysis and analysis.qc_report:
        report = analysis.qc_report
        out.update({
            "qc": report.to_dict(),
            "fits": {key: fit.to_dict() for key, fit in analysis.fits.items()},
            "panels": {phase: vars(panel).copy() for phase, panel in analysis.panels.items()},
            "markers": vars(analysis.markers).copy() if analysis.markers else None,
        })
        if analysis.t1_panel:
            out["t1"] = {"t1_s": dict(analysis.t1_panel.t1_s),
                         "source": analysis.t1_panel.source}
    return out
