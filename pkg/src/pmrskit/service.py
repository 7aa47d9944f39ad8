"""HTTP review service for the operator-in-the-loop QC step.

Serves flagged recovery curves, dry-run refit previews and reselection
approvals over JSON.  Reads are concurrent; writes are serialized per subject
and guarded by optimistic concurrency: every response carries the cohort
revision number, approvals must quote it, and a stale quote gets a 409 with
the current state.  The in-memory store snapshots to a JSON file after each
mutation.
"""

# No `from __future__ import annotations` here: FastAPI must evaluate the
# request-model annotations of routes defined inside create_app at runtime.

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import pipeline, qc
from .config import AnalysisConfig
from .errors import PmrsError, ReselectionError, RevisionConflictError
from .pipeline import SubjectRecord

DEFAULT_BIND = "127.0.0.1:8781"
BIND_ENV_VAR = "PMRSKIT_BIND"


@dataclass
class ReviewStore:
    records: dict[str, SubjectRecord]
    cfg: AnalysisConfig
    patient_group: str
    control_group: str
    snapshot_path: Path | None = None
    revision: int = 0
    _store_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _subject_locks: dict[str, threading.Lock] = field(default_factory=dict, repr=False)

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord], cfg: AnalysisConfig,
                     patient_group: str | None = None,
                     control_group: str | None = None,
                     snapshot_path: str | Path | None = None) -> "ReviewStore":
        groups = sorted({r.group for r in records})
        if patient_group is None or control_group is None:
            if len(groups) != 2:
                raise PmrsError(
                    f"cannot infer patient/control groups from {groups}; pass them explicitly")
            controls = [g for g in groups if "control" in g.lower()]
            if len(controls) == 1:
                control_group = control_group or controls[0]
                patient_group = patient_group or next(g for g in groups if g != control_group)
            else:
                patient_group = patient_group or groups[0]
                control_group = control_group or groups[1]
        return cls(records={r.subject_id: r for r in records}, cfg=cfg,
                   patient_group=patient_group, control_group=control_group,
                   snapshot_path=Path(snapshot_path) if snapshot_path else None)

    def _lock_for(self, subject_id: str) -> threading.Lock:
        with self._store_lock:
            return self._subject_locks.setdefault(subject_id, threading.Lock())

    def _get(self, subject_id: str) -> SubjectRecord:
        record = self.records.get(subject_id)
        if record is None:
            raise KeyError(subject_id)
        return record

    def list_subjects(self, status: str | None = None) -> list[dict]:
        out = []
        for record in self.records.values():
            analysis = record.analysis
            if analysis is None or analysis.qc_report is None:
                continue
            report = analysis.qc_report
            flagged = report.first_point_flag and report.reselected_start_index is None
            if status == "flagged" and not flagged:
                continue
            out.append({
                "id": record.subject_id,
                "group": record.group,
                "flagged": flagged,
                "suggested_index": report.suggested_start_index,
                "score_total_exercise": report.score_total_exercise,
                "score_total_recovery": report.score_total_recovery,
                "exercise_decision": report.exercise_decision,
                "subject_decision": report.subject_decision,
                "reselected_start_index": report.reselected_start_index,
            })
        out.sort(key=lambda row: row["id"])
        return out

    def recovery_view(self, subject_id: str) -> dict:
        record = self._get(subject_id)
        analysis = record.analysis
        if analysis is None or analysis.qc_report is None:
            raise PmrsError(f"{subject_id}: not analyzed")
        rec = record.phase_slices["recovery"]
        times = record.protocol.frame_times()[rec]
        values = analysis.conc_series_mM["PCr"][rec]
        fit = analysis.fits["rec_PCr"]
        model = fit.predict(times)
        scan = qc.detect_outliers(times, values, fit)
        report = analysis.qc_report
        return {
            "id": record.subject_id,
            "series": {"t_s": times.tolist(), "value_mM": values.tolist()},
            "fit": {
                "tau_s": fit.tau_s, "r2": fit.r2, "start_index": fit.start_index,
                "cv_tau_pct": fit.cv_tau_pct,
                "overlay": {"t_s": times.tolist(), "value_mM": model.tolist()},
            },
            "residuals": (values - model).tolist(),
            "qc": report.to_dict(),
            "suggested_index": report.suggested_start_index,
            "flagged": report.first_point_flag and report.reselected_start_index is None,
        }

    def preview_reselection(self, subject_id: str, index: int) -> dict:
        """Dry-run refit: before/after comparison without any state change."""
        record = self._get(subject_id)
        analysis = record.analysis
        if analysis is None or analysis.qc_report is None:
            raise PmrsError(f"{subject_id}: not analyzed")
        if not 0 <= index <= qc.MAX_RESELECTION_INDEX:
            raise ReselectionError(
                f"start index {index} outside [0, {qc.MAX_RESELECTION_INDEX}]")
        rec = record.phase_slices["recovery"]
        times = record.protocol.frame_times()[rec]
        values = {met: analysis.conc_series_mM[met][rec] for met in ("PCr", "Pi")}
        outcome = qc.apply_reselection(
            times, values, analysis.qc_variables, index, self.cfg.rubric,
            flagged=True, provenance="preview")
        before = analysis.fits["rec_PCr"]
        after = outcome.fits["PCr"]
        overlay_t = times.tolist()
        return {
            "id": subject_id,
            "candidate_index": index,
            "before": {"tau_s": before.tau_s, "r2": before.r2,
                       "start_index": before.start_index},
            "after": {"tau_s": after.tau_s, "r2": after.r2, "start_index": index,
                      "overlay": {"t_s": overlay_t,
                                  "value_mM": after.predict(times).tolist()}},
            "qc_after": outcome.report.to_dict(),
        }

    def approve_reselection(self, subject_id: str, index: int, operator: str,
                            revision: int | None, override: bool = False) -> dict:
        lock = self._lock_for(subject_id)
        with lock:
            if revision is not None and revision != self.revision:
                raise RevisionConflictError(
                    f"revision {revision} is stale (current {self.revision})",
                    current=self.recovery_view(subject_id))
            record = self._get(subject_id)
            pipeline.apply_reselection(record, index, self.cfg, operator=operator,
                                       override=override)
            with self._store_lock:
                self.revision += 1
            self.snapshot()
            fit = record.analysis.fits["rec_PCr"]
            return {
                "id": subject_id,
                "tau_s": fit.tau_s,
                "r2": fit.r2,
                "start_index": fit.start_index,
                "qc": record.analysis.qc_report.to_dict(),
            }

    def cohort_report(self, with_qcs: bool = True) -> dict:
        patients = [r for r in self.records.values() if r.group == self.patient_group]
        controls = [r for r in self.records.values() if r.group == self.control_group]
        comparison = pipeline.compare_cohorts(patients, controls,
                                              with_qcs=with_qcs, cfg=self.cfg)
        return comparison.to_dict()

    def snapshot(self):
        if self.snapshot_path is None:
            return
        state = {
            "revision": self.revision,
            "patient_group": self.patient_group,
            "control_group": self.control_group,
            "subjects": [pipeline.subject_summary(r) for r in self.records.values()],
        }
        self.snapshot_path.write_text(json.dumps(state, indent=2, sort_keys=True,
                                                 default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def create_app(store: ReviewStore):
    """Build the FastAPI application over a loaded, analyzed cohort."""
    from fastapi import FastAPI, HTTPException, Query
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel

    app = FastAPI(title="pmrskit review service")

    class StartIndexRequest(BaseModel):
        index: int
        operator: str
        dry_run: bool = False
        revision: int | None = None
        override: bool = False

    def with_revision(payload: dict) -> dict:
        payload["revision"] = store.revision
        return payload

    @app.get("/health")
    def health():
        return {"status": "ok", "subjects": len(store.records)}

    @app.get("/subjects")
    def subjects(status: str | None = Query(default=None)):
        return with_revision({"subjects": store.list_subjects(status=status)})

    @app.get("/subjects/{subject_id}/recovery")
    def recovery(subject_id: str):
        try:
            return with_revision(store.recovery_view(subject_id))
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown subject {subject_id}")
        except PmrsError as err:
            raise HTTPException(status_code=422, detail=str(err))

    @app.post("/subjects/{subject_id}/recovery/start-index")
    def reselect(subject_id: str, body: StartIndexRequest):
        try:
            if body.dry_run:
                return with_revision(store.preview_reselection(subject_id, body.index))
            result = store.approve_reselection(
                subject_id, body.index, body.operator,
                revision=body.revision, override=body.override)
            return with_revision(result)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown subject {subject_id}")
        except RevisionConflictError as err:
            return JSONResponse(
                status_code=409,
                content={"detail": str(err), "current": err.current,
                         "revision": store.revision})
        except ReselectionError as err:
            raise HTTPException(status_code=422, detail=str(err))
        except PmrsError as err:
            raise HTTPException(status_code=422, detail=str(err))

    @app.get("/reports/cohort")
    def report(mode: str = Query(default="with_qcs")):
        if mode not in ("with_qcs", "without_qcs"):
            raise HTTPException(status_code=422,
                                detail="mode must be with_qcs or without_qcs")
        return with_revision(store.cohort_report(with_qcs=(mode == "with_qcs")))

    return app


def resolve_bind(bind: str | None = None) -> tuple[str, int]:
    value = bind or os.environ.get(BIND_ENV_VAR) or DEFAULT_BIND
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise PmrsError(f"bad bind address {value!r}; expected HOST:PORT")
    return host, int(port)


def serve_review(store: ReviewStore, bind: str | None = None):
    """Run the review service until interrupted."""
    import uvicorn

    host, port = resolve_bind(bind)
    uvicorn.run(create_app(store), host=host, port=port, log_level="warning")
