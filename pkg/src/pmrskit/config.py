"""Analysis configuration: T1 mode, constants, rubric and quantifier settings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError
from .metab import MetabolicConstants
from .qc import Bands, QCRubric, WindowRule
from .quant import QuantConfig
from .relax import FIXED_T1_S, T1_SOURCES


@dataclass
class AnalysisConfig:
    t1_mode: str = "individual"
    fixed_t1_s: dict[str, float] = field(default_factory=lambda: dict(FIXED_T1_S))
    constants: MetabolicConstants = field(default_factory=MetabolicConstants)
    rubric: QCRubric = field(default_factory=QCRubric)
    quant: QuantConfig = field(default_factory=QuantConfig)
    recovery_start_index: int = 0

    def __post_init__(self):
        if self.t1_mode not in T1_SOURCES:
            raise ConfigurationError(
                f"t1_mode must be one of {T1_SOURCES}, got {self.t1_mode!r}")

    def with_t1_mode(self, mode: str | None) -> "AnalysisConfig":
        return replace(self, t1_mode=mode) if mode else self

    def to_dict(self) -> dict:
        return {
            "t1_mode": self.t1_mode,
            "fixed_t1_s": dict(self.fixed_t1_s),
            "constants": {
                "atp_reference_mM": self.constants.atp_reference_mM,
                "pka": self.constants.pka,
                "delta_acid_ppm": self.constants.delta_acid_ppm,
                "delta_base_ppm": self.constants.delta_base_ppm,
                "k_ck": self.constants.k_ck,
                "tcr_over_pcr_rest": self.constants.tcr_over_pcr_rest,
                "km_adp_uM": self.constants.km_adp_uM,
            },
            "rubric": {
                "depletion": {"edges": list(self.rubric.depletion.edges),
                              "scores": list(self.rubric.depletion.scores)},
                "r2": {"edges": list(self.rubric.r2.edges),
                       "scores": list(self.rubric.r2.scores)},
                "tau_exercise": {"lo": self.rubric.tau_exercise.lo,
                                 "hi": self.rubric.tau_exercise.hi,
                                 "outside_score": self.rubric.tau_exercise.outside_score},
                "tau_recovery": {"lo": self.rubric.tau_recovery.lo,
                                 "hi": self.rubric.tau_recovery.hi,
                                 "outside_score": self.rubric.tau_recovery.outside_score},
                "outliers": {"edges": list(self.rubric.outliers.edges),
                             "scores": list(self.rubric.outliers.scores),
                             "upper_inclusive": self.rubric.outliers.upper_inclusive},
                "exercise_exclude_at": self.rubric.exercise_exclude_at,
                "subject_exclude_at": self.rubric.subject_exclude_at,
            },
            "quant": {
                "grid_points": self.quant.grid_points,
                "rel_tol": self.quant.rel_tol,
                "max_iter": self.quant.max_iter,
                "fit_damping": self.quant.fit_damping,
            },
            "recovery_start_index": self.recovery_start_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisConfig":
        kwargs: dict = {}
        if "t1_mode" in d:
            kwargs["t1_mode"] = d["t1_mode"]
        if "fixed_t1_s" in d:
            kwargs["fixed_t1_s"] = dict(d["fixed_t1_s"])
        if "constants" in d:
            kwargs["constants"] = MetabolicConstants(**d["constants"])
        if "rubric" in d:
            r = d["rubric"]
            kwargs["rubric"] = QCRubric(
                depletion=Bands(tuple(r["depletion"]["edges"]),
                                tuple(r["depletion"]["scores"])),
                r2=Bands(tuple(r["r2"]["edges"]), tuple(r["r2"]["scores"])),
                tau_exercise=WindowRule(**r["tau_exercise"]),
                tau_recovery=WindowRule(**r["tau_recovery"]),
                outliers=Bands(tuple(r["outliers"]["edges"]),
                               tuple(r["outliers"]["scores"]),
                               upper_inclusive=r["outliers"].get("upper_inclusive", True)),
                exercise_exclude_at=r["exercise_exclude_at"],
                subject_exclude_at=r["subject_exclude_at"],
            )
        if "quant" in d:
            kwargs["quant"] = QuantConfig(**d["quant"])
        if "recovery_start_index" in d:
            kwargs["recovery_start_index"] = d["recovery_start_index"]
        return cls(**kwargs)

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "AnalysisConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigurationError(f"bad configuration file {path}: {err}") from err
