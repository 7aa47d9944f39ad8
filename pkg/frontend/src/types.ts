/** Payload shapes of the review service (JSON over HTTP). */

export interface FlaggedRow {
  id: string;
  group: string;
  flagged: boolean;
  suggested_index: number | null;
  score_total_exercise: number;
  score_total_recovery: number;
  exercise_decision: string;
  subject_decision: string;
  reselected_start_index: number | null;
}

export interface SubjectListResponse {
  subjects: FlaggedRow[];
  revision: number;
}

export interface FitSummary {
  tau_s: number;
  r2: number;
  start_index: number;
  cv_tau_pct?: number;
  overlay?: { t_s: number[]; value_mM: number[] };
}

export interface QcReport {
  variables: Record<string, number | null>;
  scores: Record<string, number>;
  score_total_exercise: number;
  score_total_recovery: number;
  exercise_decision: string;
  subject_decision: string;
  first_point_flag: boolean;
  suggested_start_index: number | null;
  reselected_start_index: number | null;
  reselection_provenance: string | null;
}

export interface RecoveryView {
  id: string;
  series: { t_s: number[]; value_mM: number[] };
  fit: FitSummary;
  residuals: number[];
  qc: QcReport;
  suggested_index: number | null;
  flagged: boolean;
  revision: number;
}

export interface PreviewResponse {
  id: string;
  candidate_index: number;
  before: { tau_s: number; r2: number; start_index: number };
  after: FitSummary;
  qc_after: QcReport;
  revision: number;
}

export interface ApprovalResponse {
  id: string;
  tau_s: number;
  r2: number;
  start_index: number;
  qc: QcReport;
  revision: number;
}

export interface ConflictBody {
  detail: string;
  current: RecoveryView;
  revision: number;
}

export interface MarkerRow {
  marker: string;
  scope: string;
  patients: { n: number; mean: number; sd: number } | null;
  controls: { n: number; mean: number; sd: number } | null;
  test: { test_kind: string; statistic: number; p_value: number; df: number | null } | null;
  significant: boolean;
  trend: string | null;
  note: string | null;
}

export interface CohortReport {
  patient_group: string;
  control_group: string;
  with_qcs: boolean;
  t1_mode: string;
  alpha: number;
  n_patients_total: number;
  n_controls_total: number;
  rows: MarkerRow[];
  revision: number;
}

/** Bounds of the reselection search: later starts lose the initial-rate reading. */
export const MAX_CANDIDATE_INDEX = 3;
