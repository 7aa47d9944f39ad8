/** Scriptable fetch stub for unit tests: route table plus call recording. */

import type { FetchLike } from "../src/api.js";

export interface RouteCall {
  url: string;
  method: string;
  body: unknown;
}

export interface StubRoute {
  match: (url: string, method: string, body: unknown) => boolean;
  respond: (body: unknown) => { status: number; json: unknown };
}

export function makeFetchStub(routes: StubRoute[]): { fetch: FetchLike; calls: RouteCall[] } {
  const calls: RouteCall[] = [];
  const fetchImpl: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    calls.push({ url, method, body });
    for (const route of routes) {
      if (route.match(url, method, body)) {
        const { status, json } = route.respond(body);
        return jsonResponse(status, json);
      }
    }
    throw new TypeError(`no stub route for ${method} ${url}`);
  };
  return { fetch: fetchImpl, calls };
}

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export function flaggedRow(id: string, overrides: Record<string, unknown> = {}) {
  return {
    id,
    group: "patient",
    flagged: true,
    suggested_index: 1,
    score_total_exercise: 0,
    score_total_recovery: 0,
    exercise_decision: "accepted",
    subject_decision: "accepted",
    reselected_start_index: null,
    ...overrides,
  };
}

export function qcReport(overrides: Record<string, unknown> = {}) {
  return {
    variables: { r2_rec_pcr: 0.97 },
    scores: { r2_rec_pcr: 0 },
    score_total_exercise: 0,
    score_total_recovery: 0,
    exercise_decision: "accepted",
    subject_decision: "accepted",
    first_point_flag: true,
    suggested_start_index: 1,
    reselected_start_index: null,
    reselection_provenance: null,
    ...overrides,
  };
}

export function recoveryView(id: string, revision: number, overrides: Record<string, unknown> = {}) {
  const t = [0, 4, 8, 12, 16];
  return {
    id,
    series: { t_s: t, value_mM: [20.5, 24.0, 26.5, 28.2, 29.4] },
    fit: {
      tau_s: 36.2,
      r2: 0.955,
      start_index: 0,
      cv_tau_pct: 4.1,
      overlay: { t_s: t, value_mM: [21.0, 23.8, 26.3, 28.3, 29.5] },
    },
    residuals: [-0.5, 0.2, 0.2, -0.1, -0.1],
    qc: qcReport(),
    suggested_index: 1,
    flagged: true,
    revision,
    ...overrides,
  };
}

export function previewResponse(id: string, index: number, revision: number) {
  return {
    id,
    candidate_index: index,
    before: { tau_s: 36.2, r2: 0.955, start_index: 0 },
    after: {
      tau_s: 33.9,
      r2: 0.981,
      start_index: index,
      overlay: { t_s: [4, 8, 12, 16], value_mM: [23.9, 26.4, 28.2, 29.5] },
    },
    qc_after: qcReport(),
    revision,
  };
}
