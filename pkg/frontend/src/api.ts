/**
 * Thin typed client over the review service.
 *
 * Every response carries the cohort revision number; the client remembers
 * the highest one seen so the session layer can drop stale caches.  The UI
 * never computes fits locally — every tau/r2 shown to the operator comes
 * out of these calls.
 */

import type {
  ApprovalResponse,
  CohortReport,
  ConflictBody,
  PreviewResponse,
  RecoveryView,
  SubjectListResponse,
} from "./types.js";
import { MAX_CANDIDATE_INDEX } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Approval raced a newer mutation; carries the server's current state. */
export class ConflictError extends Error {
  constructor(public readonly body: ConflictBody) {
    super(body.detail);
    this.name = "ConflictError";
  }
}

/** Non-conflict service rejection (bad index, unflagged subject, ...). */
export class ServiceError extends Error {
  constructor(public readonly status: number, detail: string) {
    super(detail);
    this.name = "ServiceError";
  }
}

export class ReviewClient {
  private revision = -1;

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  /** Highest cohort revision observed so far (-1 before the first call). */
  lastRevision(): number {
    return this.revision;
  }

  private track<T extends { revision: number }>(body: T): T {
    if (body.revision > this.revision) {
      this.revision = body.revision;
    }
    return body;
  }

  private async get<T extends { revision: number }>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!response.ok) {
      throw new ServiceError(response.status, await describeFailure(response));
    }
    return this.track((await response.json()) as T);
  }

  async listFlagged(): Promise<SubjectListResponse> {
    return this.get<SubjectListResponse>("/subjects?status=flagged");
  }

  async listSubjects(): Promise<SubjectListResponse> {
    return this.get<SubjectListResponse>("/subjects");
  }

  async recovery(subjectId: string): Promise<RecoveryView> {
    return this.get<RecoveryView>(`/subjects/${subjectId}/recovery`);
  }

  async cohortReport(mode: "with_qcs" | "without_qcs" = "with_qcs"): Promise<CohortReport> {
    return this.get<CohortReport>(`/reports/cohort?mode=${mode}`);
  }

  /** Dry-run refit: compares fits without changing server state. */
  async preview(subjectId: string, candidateIndex: number): Promise<PreviewResponse> {
    this.assertCandidate(candidateIndex);
    const response = await this.fetchImpl(
      `${this.baseUrl}/subjects/${subjectId}/recovery/start-index`,
      postJson({ index: candidateIndex, operator: "preview", dry_run: true }),
    );
    if (!response.ok) {
      throw new ServiceError(response.status, await describeFailure(response));
    }
    return this.track((await response.json()) as PreviewResponse);
  }

  /**
   * Commit a reselection.  Quotes the last seen revision so a concurrent
   * approval surfaces as a ConflictError holding the newer server state.
   */
  async approve(
    subjectId: string,
    candidateIndex: number,
    operator: string,
    override = false,
  ): Promise<ApprovalResponse> {
    this.assertCandidate(candidateIndex);
    const response = await this.fetchImpl(
      `${this.baseUrl}/subjects/${subjectId}/recovery/start-index`,
      postJson({
        index: candidateIndex,
        operator,
        revision: this.revision >= 0 ? this.revision : null,
        override,
      }),
    );
    if (response.status === 409) {
      const body = (await response.json()) as ConflictBody;
      if (body.revision > this.revision) {
        this.revision = body.revision;
      }
      throw new ConflictError(body);
    }
    if (!response.ok) {
      throw new ServiceError(response.status, await describeFailure(response));
    }
    return this.track((await response.json()) as ApprovalResponse);
  }

  private assertCandidate(index: number): void {
    if (!Number.isInteger(index) || index < 0 || index > MAX_CANDIDATE_INDEX) {
      throw new ServiceError(422, `candidate index ${index} outside [0, ${MAX_CANDIDATE_INDEX}]`);
    }
  }
}

function postJson(body: unknown): RequestInit {
  return {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  };
}

async function describeFailure(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") {
      return body.detail;
    }
    return JSON.stringify(body.detail ?? body);
  } catch {
    return `${response.status} ${response.statusText}`;
  }
}
