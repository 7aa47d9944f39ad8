"""Synthetic 31P FIDs and full dynamic-protocol subject datasets.

Every downstream module is validated against data produced here, so the
generator keeps exact, closed-form ground truth: within each protocol phase
the noiseless metabolite trajectory is exactly monoexponential, saturation is
applied as the exact inverse of the correction factor, and all randomness
flows from a single seeded generator (identical inputs give bit-identical
output).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Mapping, Sequence

import numpy as np

from . import metab, relax
from .errors import CorruptionPlanError, DomainError, ProtocolError
from .metabolites import DEFAULT_DAMPINGS, DEFAULT_SHIFTS_PPM, METABOLITES

DEFAULT_CONCENTRATIONS_MM = {"PCr": 33.6, "Pi": 5.5, "gATP": 8.2, "aATP": 8.2, "bATP": 8.2}
DEFAULT_T1_S = {"PCr": 6.4, "Pi": 5.8, "gATP": 5.3, "aATP": 3.4, "bATP": 3.5}


@dataclass
class MetabolitePeak:
    """One Lorentzian resonance: shift relative to PCr, damping, amplitude, phase."""

    name: str
    chemical_shift_ppm: float
    damping: float  # 1/s
    amplitude: float = 1.0
    phase_rad: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise DomainError(f"{self.name}: amplitude must be non-negative")
        if not self.damping > 0:
            raise DomainError(f"{self.name}: damping must be strictly positive")
        if not math.isfinite(self.chemical_shift_ppm):
            raise DomainError(f"{self.name}: chemical shift must be finite")


@dataclass(frozen=True)
class AcquisitionProtocol:
    """Timing and sampling of the dynamic rest/exercise/recovery protocol."""

    tr_dynamic_s: float = 4.0
    n_rest: int = 10
    n_exercise: int = 30
    n_recovery: int = 90
    tr_long_s: float = 30.0
    n_long: int = 12
    n_short: int = 32
    spectrometer_freq_mhz: float = 49.9
    n_samples: int = 512
    dwell_time_s: float = 0.00025

    def __post_init__(self):
        for name in ("n_rest", "n_exercise", "n_recovery", "n_long", "n_short"):
            if getattr(self, name) < 1:
                raise ProtocolError(f"{name} must be at least 1")
        if not self.tr_long_s > self.tr_dynamic_s:
            raise ProtocolError("tr_long_s must exceed tr_dynamic_s")
        if self.n_samples < 2:
            raise ProtocolError("n_samples must be at least 2")
        if not self.dwell_time_s > 0:
            raise ProtocolError("dwell_time_s must be strictly positive")
        if not self.spectrometer_freq_mhz > 0:
            raise ProtocolError("spectrometer_freq_mhz must be strictly positive")

    @property
    def n_dynamic(self) -> int:
        return self.n_rest + self.n_exercise + self.n_recovery

    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_dynamic) * self.tr_dynamic_s

    @property
    def rest_slice(self) -> slice:
        return slice(0, self.n_rest)

    @property
    def exercise_slice(self) -> slice:
        return slice(self.n_rest, self.n_rest + self.n_exercise)

    @property
    def recovery_slice(self) -> slice:
        return slice(self.n_rest + self.n_exercise, self.n_dynamic)

    def sample_times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dwell_time_s

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CorruptionPlan:
    """Additive spikes emulating motion-corrupted acquisitions.

    Spike sizes are multiples of the dataset's noise_sd.  ``spike_frames``
    perturb the PCr/Pi amplitudes of those dynamic frames (and, in FID mode,
    also inject an off-basis resonance at ``artifact_shift_ppm`` so the frame
    residual jumps).  ``first_point_magnitude`` > 0 additionally pushes the
    first recovery frame down for PCr and up for Pi, emulating the classic
    corrupted-first-recovery-point pattern.
    """

    spike_frames: tuple[int, ...] = ()
    spike_magnitude: float = 8.0
    first_point_magnitude: float = 0.0
    artifact_shift_ppm: float = 10.0

    def validate(self, protocol: AcquisitionProtocol):
        for idx in self.spike_frames:
            if not 0 <= idx < protocol.n_dynamic:
                raise CorruptionPlanError(
                    f"spike frame {idx} outside dynamic range [0, {protocol.n_dynamic})"
                )
        if self.spike_magnitude < 0 or self.first_point_magnitude < 0:
            raise CorruptionPlanError("spike magnitudes must be non-negative")
        return self


@dataclass
class GroundTruth:
    """Everything needed to generate one subject and verify its analysis."""

    concentrations_mM: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_CONCENTRATIONS_MM))
    t1_s: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_T1_S))
    tau_ex_s: dict[str, float] = field(default_factory=lambda: {"PCr": 30.0, "Pi": 28.0})
    tau_rec_s: dict[str, float] = field(default_factory=lambda: {"PCr": 40.0, "Pi": 34.0})
    depletion_fraction: float = 0.40
    ph_rest: float = 7.05
    ph_exercise_drop: float = 0.04
    ph_recovery_tau_s: float = 90.0
    ph_values: np.ndarray | None = None  # explicit per-frame override
    noise_sd: float = 0.46
    pi_shift_noise_sd: float = 0.008
    corruption: CorruptionPlan = field(default_factory=CorruptionPlan)

    def validate(self):
        for met, v in self.concentrations_mM.items():
            if v < 0:
                raise DomainError(f"{met}: concentration must be non-negative")
        for met, v in self.t1_s.items():
            if not v > 0:
                raise DomainError(f"{met}: T1 must be strictly positive")
        for d in (self.tau_ex_s, self.tau_rec_s):
            for met, v in d.items():
                if not v > 0:
                    raise DomainError(f"{met}: time constants must be strictly positive")
        if not 0 <= self.depletion_fraction < 1:
            raise DomainError("depletion_fraction must lie in [0, 1)")
        if self.noise_sd < 0:
            raise DomainError("noise_sd must be non-negative")
        return self

    def to_dict(self) -> dict:
        d = {
            "concentrations_mM": dict(self.concentrations_mM),
            "t1_s": dict(self.t1_s),
            "tau_ex_s": dict(self.tau_ex_s),
            "tau_rec_s": dict(self.tau_rec_s),
            "depletion_fraction": self.depletion_fraction,
            "ph_rest": self.ph_rest,
            "ph_exercise_drop": self.ph_exercise_drop,
            "ph_recovery_tau_s": self.ph_recovery_tau_s,
            "noise_sd": self.noise_sd,
            "pi_shift_noise_sd": self.pi_shift_noise_sd,
            "corruption": {
                "spike_frames": list(self.corruption.spike_frames),
                "spike_magnitude": self.corruption.spike_magnitude,
                "first_point_magnitude": self.corruption.first_point_magnitude,
                "artifact_shift_ppm": self.corruption.artifact_shift_ppm,
            },
        }
        if self.ph_values is not None:
            d["ph_values"] = np.asarray(self.ph_values).tolist()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroundTruth":
        corr = d.get("corruption", {})
        return cls(
            concentrations_mM=dict(d["concentrations_mM"]),
            t1_s=dict(d["t1_s"]),
            tau_ex_s=dict(d["tau_ex_s"]),
            tau_rec_s=dict(d["tau_rec_s"]),
            depletion_fraction=d["depletion_fraction"],
            ph_rest=d["ph_rest"],
            ph_exercise_drop=d["ph_exercise_drop"],
            ph_recovery_tau_s=d["ph_recovery_tau_s"],
            ph_values=np.asarray(d["ph_values"]) if "ph_values" in d else None,
            noise_sd=d["noise_sd"],
            pi_shift_noise_sd=d.get("pi_shift_noise_sd", 0.0),
            corruption=CorruptionPlan(
                spike_frames=tuple(corr.get("spike_frames", ())),
                spike_magnitude=corr.get("spike_magnitude", 8.0),
                first_point_magnitude=corr.get("first_point_magnitude", 0.0),
                artifact_shift_ppm=corr.get("artifact_shift_ppm", 10.0),
            ),
        )


@dataclass
class RestingAcquisition:
    tr_s: float
    fids: list[np.ndarray] | None = None
    amplitudes: dict[str, np.ndarray] | None = None


@dataclass
class SubjectDataset:
    """One simulated subject: resting acquisitions, dynamic series, truth."""

    subject_id: str
    group: str
    protocol: AcquisitionProtocol
    truth: GroundTruth
    mode: str  # "amplitudes" | "fids"
    resting_long: RestingAcquisition
    resting_short: RestingAcquisition
    dynamic_fids: list[np.ndarray] | None
    dynamic_amplitudes: dict[str, np.ndarray] | None
    pi_shift_ppm: np.ndarray | None
    true_series_mM: dict[str, np.ndarray]      # noiseless concentration trajectories
    true_observed: dict[str, np.ndarray]       # noiseless saturated amplitudes
    true_ph: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        """Serialize into the pipeline's subject-file schema."""
        def resting_block(block: RestingAcquisition) -> dict:
            if block.fids is not None:
                return {"fids": [_fid_to_pairs(f) for f in block.fids]}
            return {"amplitudes": {m: np.asarray(a).tolist()
                                   for m, a in block.amplitudes.items()}}

        if self.mode == "fids":
            dynamic = {"fids": [_fid_to_pairs(f) for f in self.dynamic_fids]}
        else:
            dynamic = {
                "amplitudes": {m: np.asarray(a).tolist()
                               for m, a in self.dynamic_amplitudes.items()},
                "pi_shift_ppm": np.asarray(self.pi_shift_ppm).tolist(),
            }
        return {
            "id": self.subject_id,
            "group": self.group,
            "metadata": dict(self.metadata),
            "protocol": self.protocol.to_dict(),
            "resting": {
                "long_tr": resting_block(self.resting_long),
                "short_tr": resting_block(self.resting_short),
            },
            "dynamic": dynamic,
            "truth": self.truth.to_dict(),
        }


def _fid_to_pairs(fid: np.ndarray) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in np.asarray(fid)]


def default_peaks(amplitudes: Mapping[str, float] | None = None,
                  pi_shift_ppm: float | None = None) -> list[MetabolitePeak]:
    """The five standard 31P resonances with optional amplitude/Pi-shift overrides."""
    peaks = []
    for met in METABOLITES:
        shift = DEFAULT_SHIFTS_PPM[met]
        if met == "Pi" and pi_shift_ppm is not None:
            shift = pi_shift_ppm
        amp = 1.0 if amplitudes is None else amplitudes.get(met, 0.0)
        peaks.append(MetabolitePeak(met, shift, DEFAULT_DAMPINGS[met], amp))
    return peaks


def synth_fid(peaks: Sequence[MetabolitePeak],
              protocol: AcquisitionProtocol,
              saturation: Mapping[str, float] | float = 1.0,
              noise_sd: float = 0.0,
              rng: np.random.Generator | None = None) -> np.ndarray:
    """Sum of damped complex exponentials plus circular Gaussian noise.

    Each peak contributes amplitude * saturation * exp(i*phase) *
    exp((i*2*pi*shift_Hz - damping) * t) with shift_Hz = shift_ppm *
    spectrometer frequency in MHz.  Noise of standard deviation ``noise_sd``
    is added independently to the real and imaginary parts.
    """
    t = protocol.sample_times()
    signal = np.zeros(protocol.n_samples, dtype=complex)
    for peak in peaks:
        sat = saturation if isinstance(saturation, (int, float)) else saturation.get(peak.name, 1.0)
        if not 0 < sat <= 1:
            raise DomainError(f"{peak.name}: saturation factor must lie in (0, 1]")
        shift_hz = peak.chemical_shift_ppm * protocol.spectrometer_freq_mhz
        signal += (peak.amplitude * sat * np.exp(1j * peak.phase_rad)
                   * np.exp((2j * np.pi * shift_hz - peak.damping) * t))
    if noise_sd > 0:
        rng = rng or np.random.default_rng()
        signal = signal + rng.normal(0.0, noise_sd, t.size) \
            + 1j * rng.normal(0.0, noise_sd, t.size)
    return signal


def true_trajectories(truth: GroundTruth, protocol: AcquisitionProtocol
                      ) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Noiseless concentration trajectories (mM) and per-frame pH.

    Exercise: PCr falls as A_rest - dA*(1 - exp(-t/tau_ex)) with
    dA = depletion_fraction * A_rest; Pi rises stoichiometrically (1:1 in mM)
    on its own time constant.  Recovery returns both to resting level on
    tau_rec.  ATP stays constant.  Phase-local time starts at 0 on the first
    frame of each phase, so trajectories are continuous at the boundaries.
    """
    n = protocol.n_dynamic
    tr = protocol.tr_dynamic_s
    t_ex = (np.arange(protocol.n_exercise)) * tr
    t_rec = (np.arange(protocol.n_recovery)) * tr
    exercise_duration = protocol.n_exercise * tr

    series: dict[str, np.ndarray] = {}
    pcr_rest = truth.concentrations_mM["PCr"]
    pi_rest = truth.concentrations_mM["Pi"]
    d_pcr = truth.depletion_fraction * pcr_rest

    def phase_series(rest_value, span, tau_ex, tau_rec, direction):
        # direction +1: falls during exercise (PCr); -1: rises (Pi).
        # Recovery returns to the resting level, continuous at both seams.
        rest = np.full(protocol.n_rest, rest_value)
        ex = rest_value - direction * span * (1.0 - np.exp(-t_ex / tau_ex))
        end_value = rest_value - direction * span * (1.0 - np.exp(-exercise_duration / tau_ex))
        rec = end_value + (rest_value - end_value) * (1.0 - np.exp(-t_rec / tau_rec))
        return np.concatenate([rest, ex, rec])

    # PCr: depletes by d_pcr, recovers back to rest.
    series["PCr"] = phase_series(pcr_rest, d_pcr, truth.tau_ex_s["PCr"],
                                 truth.tau_rec_s["PCr"], +1.0)
    # Pi accumulates what PCr loses (same mM span), on its own constants.
    series["Pi"] = phase_series(pi_rest, d_pcr, truth.tau_ex_s["Pi"],
                                truth.tau_rec_s["Pi"], -1.0)
    for met in ("gATP", "aATP", "bATP"):
        series[met] = np.full(n, truth.concentrations_mM[met])

    if truth.ph_values is not None:
        ph = np.asarray(truth.ph_values, dtype=float)
        if ph.size != n:
            raise ProtocolError(f"ph_values length {ph.size} != dynamic frame count {n}")
    else:
        ph_rest = np.full(protocol.n_rest, truth.ph_rest)
        drop = truth.ph_exercise_drop
        ph_ex = truth.ph_rest - drop * (1.0 - np.exp(-t_ex / truth.tau_ex_s["PCr"]))
        ph_end = truth.ph_rest - drop * (1.0 - np.exp(-exercise_duration / truth.tau_ex_s["PCr"]))
        ph_rec = ph_end + (truth.ph_rest - ph_end) * (1.0 - np.exp(-t_rec / truth.ph_recovery_tau_s))
        ph = np.concatenate([ph_rest, ph_ex, ph_rec])
    return series, ph


def synth_subject(truth: GroundTruth,
                  protocol: AcquisitionProtocol | None = None,
                  seed: int = 0,
                  subject_id: str = "sim-000",
                  group: str = "sim",
                  mode: str = "amplitudes",
                  metadata: dict | None = None) -> SubjectDataset:
    """Generate one complete subject dataset, deterministically from the seed.

    ``mode="amplitudes"`` emits pre-quantified per-frame amplitudes (the fast
    path the pipeline accepts directly); ``mode="fids"`` emits raw complex
    FIDs for every acquisition so the quantifier can be exercised end to end.
    Saturation divides every amplitude by its correction factor at the
    acquisition's TR; the corruption plan is applied last.
    """
    protocol = protocol or AcquisitionProtocol()
    truth.validate()
    truth.corruption.validate(protocol)
    if mode not in ("amplitudes", "fids"):
        raise DomainError(f"unknown mode {mode!r}")
    # Independent child streams keep the corruption plan orthogonal to the
    # noise realization: adding spikes never reshuffles the noise.
    noise_seq, corrupt_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(noise_seq)
    rng_corrupt = np.random.default_rng(corrupt_seq)

    series_mM, ph = true_trajectories(truth, protocol)
    r_dyn = {met: relax.correction_factor(truth.t1_s[met], protocol.tr_dynamic_s)
             for met in METABOLITES}
    r_long = {met: relax.correction_factor(truth.t1_s[met], protocol.tr_long_s)
              for met in METABOLITES}
    observed = {met: series_mM[met] / r_dyn[met] for met in METABOLITES}
    pi_shift = np.array([metab.shift_from_ph(p) for p in ph])

    rest_conc = {met: truth.concentrations_mM[met] for met in METABOLITES}
    long_amps = {met: rest_conc[met] / r_long[met] for met in METABOLITES}
    short_amps = {met: rest_conc[met] / r_dyn[met] for met in METABOLITES}
    rest_shift = pi_shift[0]

    n_dyn = protocol.n_dynamic
    first_rec = protocol.n_rest + protocol.n_exercise
    noise = truth.noise_sd

    # Perturbations in observed-amplitude space; shared by both modes so the
    # corruption is coherent (it moves the quantified amplitudes, not just
    # the residual).
    amp_perturb = {met: np.zeros(n_dyn) for met in METABOLITES}
    for frame in truth.corruption.spike_frames:
        for met in ("PCr", "Pi"):
            sign = 1.0 if rng_corrupt.random() < 0.5 else -1.0
            amp_perturb[met][frame] += sign * truth.corruption.spike_magnitude * noise
    if truth.corruption.first_point_magnitude > 0:
        amp_perturb["PCr"][first_rec] -= truth.corruption.first_point_magnitude * noise
        amp_perturb["Pi"][first_rec] += truth.corruption.first_point_magnitude * noise

    if mode == "amplitudes":
        dyn_amps = {}
        for met in METABOLITES:
            noisy = observed[met] + (rng.normal(0.0, noise, n_dyn) if noise > 0 else 0.0)
            dyn_amps[met] = noisy + amp_perturb[met]
        shift_obs = pi_shift + (rng.normal(0.0, truth.pi_shift_noise_sd, n_dyn)
                                if truth.pi_shift_noise_sd > 0 else 0.0)
        resting_long = RestingAcquisition(
            tr_s=protocol.tr_long_s,
            amplitudes={met: long_amps[met] + (rng.normal(0.0, noise, protocol.n_long)
                                               if noise > 0 else np.zeros(protocol.n_long))
                        for met in METABOLITES})
        resting_short = RestingAcquisition(
            tr_s=protocol.tr_dynamic_s,
            amplitudes={met: short_amps[met] + (rng.normal(0.0, noise, protocol.n_short)
                                                if noise > 0 else np.zeros(protocol.n_short))
                        for met in METABOLITES})
        dynamic_fids = None
        pi_shift_out = shift_obs
    else:
        dyn_fids = []
        for k in range(n_dyn):
            amps = {met: max(observed[met][k] + amp_perturb[met][k], 0.0)
                    for met in METABOLITES}
            peaks = default_peaks(amps, pi_shift_ppm=pi_shift[k])
            fid = synth_fid(peaks, protocol, noise_sd=noise, rng=rng)
            if k in truth.corruption.spike_frames and noise > 0:
                fid = fid + _artifact_resonance(protocol, truth.corruption, noise,
                                                rng_corrupt)
            dyn_fids.append(fid)
        resting_long = RestingAcquisition(
            tr_s=protocol.tr_long_s,
            fids=[synth_fid(default_peaks(long_amps, pi_shift_ppm=rest_shift),
                            protocol, noise_sd=noise, rng=rng)
                  for _ in range(protocol.n_long)])
        resting_short = RestingAcquisition(
            tr_s=protocol.tr_dynamic_s,
            fids=[synth_fid(default_peaks(short_amps, pi_shift_ppm=rest_shift),
                            protocol, noise_sd=noise, rng=rng)
                  for _ in range(protocol.n_short)])
        dynamic_fids = dyn_fids
        dyn_amps = None
        pi_shift_out = None

    return SubjectDataset(
        subject_id=subject_id,
        group=group,
        protocol=protocol,
        truth=truth,
        mode=mode,
        resting_long=resting_long,
        resting_short=resting_short,
        dynamic_fids=dynamic_fids,
        dynamic_amplitudes=dyn_amps,
        pi_shift_ppm=pi_shift_out,
        true_series_mM=series_mM,
        true_observed=observed,
        true_ph=ph,
        metadata=dict(metadata or {}),
    )


def _artifact_resonance(protocol: AcquisitionProtocol, plan: CorruptionPlan,
                        noise_sd: float, rng: np.random.Generator) -> np.ndarray:
    # Undamped rogue resonance away from every basis peak: inflates the fit
    # residual of the corrupted frame without sitting under a metabolite.
    t = protocol.sample_times()
    f_hz = plan.artifact_shift_ppm * protocol.spectrometer_freq_mhz
    theta = rng.uniform(0.0, 2.0 * np.pi)
    return plan.spike_magnitude * noise_sd * np.exp(1j * (2 * np.pi * f_hz * t + theta))


def stratified_normal(mu: float, sd: float, n: int,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Normal sample with its mean and (ddof=1) SD matched exactly.

    Draws the standardized normal order-statistic medians, rescales them to
    exact sample moments and shuffles the assignment.  Cohort simulations use
    this so a cohort's summary statistics equal the requested population
    values instead of fluctuating around them.
    """
    if n < 1:
        raise DomainError("need at least one subject")
    if n == 1:
        return np.array([mu])  # a single draw can only match the mean
    from scipy.stats import norm

    z = norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    z = (z - z.mean()) / z.std(ddof=1)
    values = mu + sd * z
    if rng is not None:
        rng.shuffle(values)
    return values


def simulate_cohort(n_subjects: int,
                    tau_rec_mu: float,
                    tau_rec_sd: float,
                    group: str,
                    seed: int = 0,
                    protocol: AcquisitionProtocol | None = None,
                    mode: str = "amplitudes",
                    noise_sd: float = 0.46,
                    stratified: bool = True,
                    exercise_corrupt_indices: Sequence[int] = (),
                    first_point_indices: Sequence[int] = (),
                    exercise_spike_frames: int = 10,
                    spike_magnitude: float = 30.0,
                    first_point_magnitude: float = 60.0,
                    t1_below: Mapping[str, float] | None = None) -> list[SubjectDataset]:
    """Simulate a cohort whose PCr recovery constants follow (mu, sd).

    Nuisance parameters (T1s, resting concentrations, exercise constants) get
    mild per-subject jitter.  Subjects listed in ``exercise_corrupt_indices``
    receive ``exercise_spike_frames`` random amplitude spikes inside the
    exercise phase; those in ``first_point_indices`` get a corrupted first
    recovery point.  ``t1_below`` caps each T1 draw strictly below the given
    per-metabolite values (used to force the fixed-vs-individual ordering).
    """
    protocol = protocol or AcquisitionProtocol()
    if n_subjects == 0:
        return []
    rng = np.random.default_rng(seed)
    taus = (stratified_normal(tau_rec_mu, tau_rec_sd, n_subjects, rng)
            if stratified else rng.normal(tau_rec_mu, tau_rec_sd, n_subjects))
    taus = np.clip(taus, 8.0, 120.0)

    subjects = []
    ex_lo = protocol.n_rest
    ex_hi = protocol.n_rest + protocol.n_exercise
    for i in range(n_subjects):
        t1 = {}
        for met, base in DEFAULT_T1_S.items():
            draw = base * (1.0 + rng.normal(0.0, 0.05))
            if t1_below is not None:
                cap = t1_below[met]
                draw = min(draw, cap * (1.0 - rng.uniform(0.01, 0.15)))
            t1[met] = max(draw, 0.5)
        conc = {met: base * (1.0 + rng.normal(0.0, 0.04))
                for met, base in DEFAULT_CONCENTRATIONS_MM.items()}
        spike_frames: tuple[int, ...] = ()
        fp_mag = 0.0
        if i in exercise_corrupt_indices:
            spike_frames = tuple(sorted(rng.choice(
                np.arange(ex_lo, ex_hi), size=exercise_spike_frames, replace=False)))
        if i in first_point_indices:
            fp_mag = first_point_magnitude
        truth = GroundTruth(
            concentrations_mM=conc,
            t1_s=t1,
            tau_ex_s={"PCr": 30.0 * (1.0 + rng.normal(0.0, 0.1)),
                      "Pi": 28.0 * (1.0 + rng.normal(0.0, 0.1))},
            tau_rec_s={"PCr": float(taus[i]), "Pi": float(taus[i]) * 0.85},
            depletion_fraction=0.40 + rng.normal(0.0, 0.02),
            ph_rest=7.05 + rng.normal(0.0, 0.01),
            noise_sd=noise_sd,
            corruption=CorruptionPlan(
                spike_frames=spike_frames,
                spike_magnitude=spike_magnitude,
                first_point_magnitude=fp_mag,
            ),
        )
        subjects.append(synth_subject(
            truth, protocol, seed=int(rng.integers(0, 2**31 - 1)),
            subject_id=f"{group}-{i:03d}", group=group, mode=mode))
    return subjects
