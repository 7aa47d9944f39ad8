"""Command-line interface.

Exit codes: 0 success, 1 validation/configuration failure, 2 analysis errors
present in an otherwise completed run.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline, stats, synth
from .config import AnalysisConfig
from .errors import PmrsError
from .pipeline import SubjectRecord


def _load_config(ctx) -> AnalysisConfig:
    cfg = ctx.obj.get("config") or AnalysisConfig()
    return cfg.with_t1_mode(ctx.obj.get("t1_mode"))


def _fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON configuration file.")
@click.option("--t1-mode", type=click.Choice(["individual", "fixed", "cohort-mean"]),
              default=None, help="Saturation-correction T1 source.")
@click.option("--with-qcs/--no-qcs", "with_qcs", default=True,
              help="Apply quality-control exclusions in reports.")
@click.option("--seed", type=int, default=0, help="Random seed where applicable.")
@click.pass_context
def main(ctx, config_path, t1_mode, with_qcs, seed):
    """Dynamic 31P-MRS muscle energetics toolkit."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = AnalysisConfig.load(config_path) if config_path else None
    except PmrsError as err:
        _fail(str(err))
    ctx.obj["t1_mode"] = t1_mode.replace("-", "_") if t1_mode else None
    ctx.obj["with_qcs"] = with_qcs
    ctx.obj["seed"] = seed


def _load_subjects(paths: tuple[str, ...]) -> list[SubjectRecord]:
    files: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            files.extend(sorted(path.glob("*.json")))
        else:
            files.append(path)
    if not files:
        _fail("no subject files found")
    records = []
    for f in files:
        try:
            records.append(pipeline.parse_subject(f))
        except PmrsError as err:
            _fail(f"{f}: {err}")
    return records


@main.command()
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--patients", "n_patients", type=int, default=10)
@click.option("--controls", "n_controls", type=int, default=10)
@click.option("--patient-tau", nargs=2, type=float, default=(40.73, 9.29),
              metavar="MU SD", help="Patient PCr recovery constant distribution.")
@click.option("--control-tau", nargs=2, type=float, default=(33.11, 8.24),
              metavar="MU SD", help="Control PCr recovery constant distribution.")
@click.option("--mode", type=click.Choice(["amplitudes", "fids"]), default="amplitudes")
@click.option("--noise-sd", type=float, default=0.46)
@click.option("--exercise-corrupt-frac", type=float, default=0.0)
@click.option("--first-point-frac", type=float, default=0.0)
@click.option("--spike-magnitude", type=float, default=30.0,
              help="Exercise spike size in noise-sd multiples.")
@click.option("--first-point-magnitude", type=float, default=60.0,
              help="First-recovery-point spike size in noise-sd multiples.")
@click.option("--stratified/--iid", default=True,
              help="Match the cohort's sample moments exactly or draw i.i.d.")
@click.pass_context
def simulate(ctx, out_dir, n_patients, n_controls, patient_tau, control_tau,
             mode, noise_sd, exercise_corrupt_frac, first_point_frac,
             spike_magnitude, first_point_magnitude, stratified):
    """Write simulated subject files with embedded ground truth."""
    seed = ctx.obj["seed"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    def pick(n, frac, exclude=()):
        count = int(round(n * frac))
        pool = [i for i in range(n) if i not in exclude]
        return tuple(rng.choice(pool, size=min(count, len(pool)), replace=False).tolist()) \
            if count else ()

    written = 0
    for group, n, (mu, sd), group_seed in (
        ("patient", n_patients, patient_tau, seed),
        ("control", n_controls, control_tau, seed + 1),
    ):
        corrupted = pick(n, exercise_corrupt_frac)
        flagged = pick(n, first_point_frac, exclude=corrupted)
        cohort = synth.simulate_cohort(
            n, mu, sd, group=group, seed=group_seed, mode=mode, noise_sd=noise_sd,
            stratified=stratified,
            exercise_corrupt_indices=corrupted,
            first_point_indices=flagged,
            spike_magnitude=spike_magnitude,
            first_point_magnitude=first_point_magnitude,
        )
        for subject in cohort:
            path = out / f"{subject.subject_id}.json"
            path.write_text(json.dumps(subject.to_json_dict()))
            written += 1
    click.echo(f"wrote {written} subject files to {out}")


@main.command()
@click.option("--subject", "subject_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def quantify(ctx, subject_path, out_path):
    """Quantify a raw-FID subject file into an amplitude-mode subject file."""
    from . import quant as quant_mod

    cfg = _load_config(ctx)
    record = _load_subjects((subject_path,))[0]
    if record.dynamic_fids is None:
        _fail(f"{subject_path}: subject already carries amplitude series")
    basis = quant_mod.default_basis(record.protocol)
    frames = quant_mod.quantify_series(record.dynamic_fids,
                                       record.protocol.frame_times(), basis, cfg.quant)
    doc = json.loads(Path(subject_path).read_text())
    doc["dynamic"] = {
        "amplitudes": {met: [fr.amplitudes[met] for fr in frames]
                       for met in basis.metabolites},
        "pi_shift_ppm": [fr.pi_minus_pcr_shift() for fr in frames],
    }
    Path(out_path).write_text(json.dumps(doc))
    unconverged = sum(1 for fr in frames if not fr.converged)
    click.echo(f"quantified {len(frames)} frames ({unconverged} unconverged) -> {out_path}")
    if unconverged:
        sys.exit(2)


@main.command()
@click.argument("subjects", nargs=-1, type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Directory for per-subject analysis JSON.")
@click.pass_context
def analyze(ctx, subjects, out_dir):
    """Run the full per-subject analysis."""
    cfg = _load_config(ctx)
    records = pipeline.analyze_cohort(_load_subjects(subjects), cfg)
    failures = 0
    for record in records:
        summary = pipeline.subject_summary(record)
        if record.analysis.errors:
            failures += 1
            click.echo(f"{record.subject_id}: ERROR {record.analysis.errors}")
        else:
            report = record.analysis.qc_report
            click.echo(
                f"{record.subject_id}: QCS ex {report.score_total_exercise} "
                f"rec {report.score_total_recovery} "
                f"[{report.exercise_decision}/{report.subject_decision}]"
                + (" FLAGGED" if report.first_point_flag else ""))
        if out_dir:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{record.subject_id}.analysis.json").write_text(
                json.dumps(summary, indent=2, sort_keys=True, default=_default))
    if failures:
        sys.exit(2)


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(str(type(obj)))


@main.command("qc")
@click.argument("subjects", nargs=-1, type=click.Path(exists=True), required=True)
@click.pass_context
def qc_command(ctx, subjects):
    """Print the QC variable table and decisions per subject."""
    cfg = _load_config(ctx)
    records = pipeline.analyze_cohort(_load_subjects(subjects), cfg)
    failures = 0
    for record in records:
        analysis = record.analysis
        if analysis.errors:
            failures += 1
            click.echo(f"{record.subject_id}: ERROR {analysis.errors}")
            continue
        report = analysis.qc_report
        cells = " ".join(f"{name}={score}" for name, score in sorted(report.scores.items()))
        click.echo(f"{record.subject_id}: {cells}")
        click.echo(
            f"  totals: exercise {report.score_total_exercise}, "
            f"recovery {report.score_total_recovery}; "
            f"decisions: {report.exercise_decision}/{report.subject_decision}"
            + (f"; first-point flag, suggest index {report.suggested_start_index}"
               if report.first_point_flag else ""))
    if failures:
        sys.exit(2)


@main.command("cohort-compare")
@click.option("--patients", "patient_paths", type=click.Path(exists=True),
              multiple=True, required=True)
@click.option("--controls", "control_paths", type=click.Path(exists=True),
              multiple=True, required=True)
@click.option("--out", "out_prefix", type=click.Path(), default=None,
              help="Write PREFIX.json and PREFIX.csv reports.")
@click.pass_context
def cohort_compare(ctx, patient_paths, control_paths, out_prefix):
    """Compare patient and control cohorts marker by marker."""
    cfg = _load_config(ctx)
    patients = pipeline.analyze_cohort(_load_subjects(patient_paths), cfg)
    controls = pipeline.analyze_cohort(_load_subjects(control_paths), cfg)
    comparison = pipeline.compare_cohorts(patients, controls,
                                          with_qcs=ctx.obj["with_qcs"], cfg=cfg)
    for row in comparison.rows:
        if row.test is None:
            click.echo(f"{row.marker:<22} {row.note}")
            continue
        mark = f" p={row.test.p_value:.4g} {row.test.test_kind}"
        trend = f" {row.trend}" if row.trend else ""
        click.echo(
            f"{row.marker:<22} patients {row.patients.mean:.4g} ({row.patients.sd:.4g}) "
            f"n={row.patients.n} | controls {row.controls.mean:.4g} "
            f"({row.controls.sd:.4g}) n={row.controls.n}{mark}{trend}")
    if out_prefix:
        Path(f"{out_prefix}.json").write_text(
            json.dumps(comparison.to_dict(), indent=2, sort_keys=True))
        Path(f"{out_prefix}.csv").write_text(pipeline.comparison_to_csv(comparison))
        click.echo(f"wrote {out_prefix}.json and {out_prefix}.csv")
    errors = sum(1 for r in list(patients) + list(controls) if r.analysis.errors)
    if errors:
        click.echo(f"{errors} subjects had analysis errors", err=True)
        sys.exit(2)


@main.command()
@click.option("--mu1", type=float, required=True, help="Control mean.")
@click.option("--sd1", type=float, required=True, help="Control SD.")
@click.option("--n1", type=int, required=True, help="Fixed control group size.")
@click.option("--mu2", type=float, required=True, help="Patient mean.")
@click.option("--sd2", type=float, required=True, help="Patient SD.")
@click.option("--alpha", type=float, default=0.05)
@click.option("--target-power", type=float, default=0.8)
@click.option("--grid-max", type=int, default=100)
@click.option("--out", "out_csv", type=click.Path(), default=None)
@click.option("--required-n", "want_required", is_flag=True,
              help="Also print the equal-allocation sample size for the target power.")
def power(mu1, sd1, n1, mu2, sd2, alpha, target_power, grid_max, out_csv, want_required):
    """Welch-test power curve over the patient group size."""
    try:
        result = stats.power_curve(mu1, sd1, n1, mu2, sd2,
                                   n2_grid=range(2, grid_max + 1), alpha=alpha,
                                   target_power=target_power)
    except PmrsError as err:
        _fail(str(err))
    lines = ["n_patient,power"]
    lines += [f"{n},{p:.6f}" for n, p in zip(result.n_grid, result.power)]
    csv = "\n".join(lines) + "\n"
    if out_csv:
        Path(out_csv).write_text(csv)
        click.echo(f"wrote {out_csv}")
    else:
        click.echo(csv, nl=False)
    if want_required:
        try:
            n = stats.required_n(mu1, sd1, mu2, sd2, power=target_power, alpha=alpha)
            click.echo(f"required n per group (equal allocation): {n} "
                       f"(total {2 * n}) for difference {abs(mu1 - mu2):.4g}")
        except PmrsError as err:
            _fail(str(err))


@main.command("bland-altman")
@click.argument("subjects", nargs=-1, type=click.Path(exists=True), required=True)
@click.option("--marker", type=click.Choice(["pcr_rest", "pi_rest"]), default="pcr_rest")
@click.option("--out", "out_csv", type=click.Path(), default=None)
@click.pass_context
def bland_altman_command(ctx, subjects, marker, out_csv):
    """Individual-vs-fixed T1 agreement for resting [PCr] or [Pi]."""
    from dataclasses import replace

    cfg = _load_config(ctx)
    attr = {"pcr_rest": "pcr_mM", "pi_rest": "pi_mM"}[marker]
    records = _load_subjects(subjects)
    pairs = []
    for record in records:
        values = {}
        for mode in ("individual", "fixed"):
            pipeline.analyze_subject(record, replace(cfg, t1_mode=mode))
            if record.analysis.errors:
                break
            values[mode] = getattr(record.analysis.panels["rest"], attr)
        if len(values) == 2:
            pairs.append((values["individual"], values["fixed"]))
    if len(pairs) < 2:
        _fail("need at least 2 analyzable subjects")
    result = pipeline.bland_altman(pairs)
    click.echo(f"bias {result.bias:.4g}  limits [{result.loa_low:.4g}, "
               f"{result.loa_high:.4g}]  r2 {result.r2:.4f}  n={len(pairs)}")
    if out_csv:
        lines = ["mean,diff"]
        lines += [f"{m:.6g},{d:.6g}" for m, d in zip(result.means, result.diffs)]
        Path(out_csv).write_text("\n".join(lines) + "\n")
        click.echo(f"wrote {out_csv}")


@main.command()
@click.argument("subjects", nargs=-1, type=click.Path(exists=True), required=True)
@click.option("--bind", default=None, help="HOST:PORT (or set PMRSKIT_BIND).")
@click.option("--snapshot", "snapshot_path", type=click.Path(), default=None)
@click.option("--patient-group", default=None)
@click.option("--control-group", default=None)
@click.pass_context
def serve(ctx, subjects, bind, snapshot_path, patient_group, control_group):
    """Analyze a cohort and serve the operator review API."""
    from .service import ReviewStore, resolve_bind, serve_review

    cfg = _load_config(ctx)
    records = pipeline.analyze_cohort(_load_subjects(subjects), cfg)
    try:
        store = ReviewStore.from_records(records, cfg,
                                         patient_group=patient_group,
                                         control_group=control_group,
                                         snapshot_path=snapshot_path)
        host, port = resolve_bind(bind)
    except PmrsError as err:
        _fail(str(err))
    flagged = len(store.list_subjects(status="flagged"))
    click.echo(f"serving {len(records)} subjects ({flagged} flagged) on {host}:{port}")
    serve_review(store, bind)


if __name__ == "__main__":
    main()
