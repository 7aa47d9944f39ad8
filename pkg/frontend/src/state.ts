/**
 * Session state for the review workflow.
 *
 * Holds the flagged list, the open subject's view model and the candidate
 * preview, all keyed to the cohort revision: any response carrying a newer
 * revision than the cached one discards the stale detail/preview caches.
 * Mutations happen only through explicit approve() calls; a network failure
 * leaves the previous state intact and raises the retry banner instead of
 * rendering partial data.
 */

import { ConflictError, ReviewClient } from "./api.js";
import type {
  ApprovalResponse,
  FlaggedRow,
  PreviewResponse,
  RecoveryView,
} from "./types.js";
import { MAX_CANDIDATE_INDEX } from "./types.js";

/** What the detail pane renders: series, overlays, QC table, before/after. */
export interface ReviewViewModel {
  subjectId: string;
  series: { t: number[]; value: number[] };
  currentOverlay: { t: number[]; value: number[] };
  candidateOverlay: { t: number[]; value: number[] } | null;
  residuals: number[];
  qcScores: Record<string, number>;
  qcVariables: Record<string, number | null>;
  suggestedIndex: number | null;
  candidateIndex: number | null;
  before: { tau: number; r2: number };
  after: { tau: number; r2: number } | null;
  revision: number;
}

export interface ConflictState {
  subjectId: string;
  detail: string;
  serverView: RecoveryView;
}

export class ReviewSession {
  flagged: FlaggedRow[] | null = null;
  revision = -1;
  view: ReviewViewModel | null = null;
  preview: PreviewResponse | null = null;
  conflict: ConflictState | null = null;
  retryBanner: string | null = null;

  constructor(private readonly client: ReviewClient) {}

  /** Drop caches that were computed under an older cohort revision. */
  private syncRevision(revision: number): void {
    if (revision > this.revision) {
      if (this.revision >= 0) {
        this.view = null;
        this.preview = null;
      }
      this.revision = revision;
    }
  }

  /** Load (or reload) the flagged list; network failure keeps prior state. */
  async loadFlagged(): Promise<FlaggedRow[]> {
    try {
      const body = await this.client.listFlagged();
      this.syncRevision(body.revision);
      this.flagged = body.subjects;
      this.retryBanner = null;
      return body.subjects;
    } catch (err) {
      if (err instanceof ConflictError) throw err;
      this.retryBanner = `could not reach the review service: ${String(err)}`;
      throw err;
    }
  }

  get isEmpty(): boolean {
    return this.flagged !== null && this.flagged.length === 0;
  }

  async openSubject(subjectId: string): Promise<ReviewViewModel> {
    const view = await this.client.recovery(subjectId);
    this.syncRevision(view.revision);
    this.view = {
      subjectId: view.id,
      series: { t: view.series.t_s, value: view.series.value_mM },
      currentOverlay: {
        t: view.fit.overlay?.t_s ?? view.series.t_s,
        value: view.fit.overlay?.value_mM ?? [],
      },
      candidateOverlay: null,
      residuals: view.residuals,
      qcScores: view.qc.scores,
      qcVariables: view.qc.variables,
      suggestedIndex: view.suggested_index,
      candidateIndex: null,
      before: { tau: view.fit.tau_s, r2: view.fit.r2 },
      after: null,
      revision: view.revision,
    };
    this.preview = null;
    return this.view;
  }

  /** Candidate starts past index 3 are not selectable. */
  candidateSelectable(index: number): boolean {
    return Number.isInteger(index) && index >= 0 && index <= MAX_CANDIDATE_INDEX;
  }

  /** Fetch a dry-run refit and surface before/after side by side. */
  async previewCandidate(index: number): Promise<ReviewViewModel> {
    if (this.view === null) {
      throw new Error("no subject open");
    }
    if (!this.candidateSelectable(index)) {
      throw new Error(`candidate index ${index} is disabled`);
    }
    const preview = await this.client.preview(this.view.subjectId, index);
    this.syncRevision(preview.revision);
    if (this.view === null) {
      // revision moved under us; caller must reopen the subject
      throw new Error("cohort changed during preview; reload the subject");
    }
    this.preview = preview;
    this.view.candidateIndex = index;
    this.view.after = { tau: preview.after.tau_s, r2: preview.after.r2 };
    this.view.candidateOverlay = preview.after.overlay
      ? { t: preview.after.overlay.t_s, value: preview.after.overlay.value_mM }
      : null;
    return this.view;
  }

  /**
   * Commit the previewed candidate.  Requires a fetched preview (the
   * operator must have seen the consequence first).  On success the row's
   * QCS updates and the subject leaves the flagged list; on conflict the
   * newer server state lands in ``conflict`` without touching anything else.
   */
  async approve(operator: string): Promise<ApprovalResponse> {
    if (this.view === null || this.preview === null || this.view.candidateIndex === null) {
      throw new Error("preview a candidate before approving");
    }
    const subjectId = this.view.subjectId;
    const index = this.view.candidateIndex;
    try {
      const result = await this.client.approve(subjectId, index, operator);
      this.revision = result.revision;
      this.view = null;
      this.preview = null;
      if (this.flagged !== null) {
        this.flagged = this.flagged.filter((row) => row.id !== subjectId);
      }
      return result;
    } catch (err) {
      if (err instanceof ConflictError) {
        this.conflict = {
          subjectId,
          detail: err.body.detail,
          serverView: err.body.current,
        };
        this.revision = err.body.revision;
      }
      throw err;
    }
  }

  /** Non-destructive conflict resolution: adopt the server's newer state. */
  async acceptConflict(): Promise<void> {
    if (this.conflict === null) return;
    const subjectId = this.conflict.subjectId;
    this.conflict = null;
    await this.loadFlagged();
    if (this.flagged?.some((row) => row.id === subjectId)) {
      await this.openSubject(subjectId);
    } else {
      this.view = null;
      this.preview = null;
    }
  }
}
