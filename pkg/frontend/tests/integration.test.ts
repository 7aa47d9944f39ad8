/**
 * Full review loop against a live service on a simulated cohort with one
 * flagged subject: list -> preview (r2 up) -> approve (flag cleared) ->
 * cohort report reflects the new tau.  Every value the client holds is
 * checked byte-for-byte against direct service responses.
 *
 * Requires the Python package installed (pip install -e ..).
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ReviewClient } from "../src/api.js";
import { ReviewSession } from "../src/state.js";
import type { CohortReport, RecoveryView } from "../src/types.js";

const PORT = 8900 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

const GENERATE_COHORT = `
import sys
from pathlib import Path
import json
from pmrskit import synth

out = Path(sys.argv[1])
out.mkdir(parents=True, exist_ok=True)
pats = synth.simulate_cohort(5, 40.0, 6.0, group="patient", seed=21, noise_sd=0.05,
                             first_point_indices=(2,), first_point_magnitude=60.0)
cons = synth.simulate_cohort(5, 33.0, 6.0, group="control", seed=22, noise_sd=0.05)
for s in pats + cons:
    (out / f"{s.subject_id}.json").write_text(json.dumps(s.to_json_dict()))
print("ok")
`;

let server: ChildProcess | null = null;
let workdir: string;

async function directJson<T>(path: string): Promise<T> {
  const response = await fetch(`${BASE}${path}`);
  if (!response.ok) throw new Error(`${path} -> ${response.status}`);
  return (await response.json()) as T;
}

async function waitForHealth(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/health`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error("review service did not come up");
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "review-ui-"));
  const generated = spawnSync("python3", ["-c", GENERATE_COHORT, join(workdir, "cohort")], {
    encoding: "utf8",
  });
  if (generated.status !== 0) {
    throw new Error(`cohort generation failed: ${generated.stderr}`);
  }
  server = spawn(
    "python3",
    ["-m", "pmrskit", "serve", join(workdir, "cohort"), "--bind", `127.0.0.1:${PORT}`],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  await waitForHealth();
}, 60_000);

afterAll(() => {
  server?.kill();
  rmSync(workdir, { recursive: true, force: true });
});

describe("operator review loop against the live service", () => {
  const session = new ReviewSession(new ReviewClient(BASE));

  it("lists exactly the one flagged subject, byte-equal to the service", async () => {
    const rows = await session.loadFlagged();
    const direct = await directJson<{ subjects: unknown[]; revision: number }>(
      "/subjects?status=flagged",
    );
    expect(rows).toHaveLength(1);
    expect(rows[0]!.id).toBe("patient-002");
    expect(JSON.stringify(rows)).toBe(JSON.stringify(direct.subjects));
    expect(session.revision).toBe(direct.revision);
  });

  it("preview at index 1 shows an increased r2, byte-equal to a direct dry run", async () => {
    await session.openSubject("patient-002");
    const view = await session.previewCandidate(1);
    expect(view.after!.r2).toBeGreaterThan(view.before.r2);

    const direct = await fetch(`${BASE}/subjects/patient-002/recovery/start-index`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ index: 1, operator: "preview", dry_run: true }),
    });
    const directBody = (await direct.json()) as {
      before: { tau_s: number; r2: number };
      after: { tau_s: number; r2: number };
    };
    expect(JSON.stringify(view.before)).toBe(
      JSON.stringify({ tau: directBody.before.tau_s, r2: directBody.before.r2 }),
    );
    expect(JSON.stringify(view.after)).toBe(
      JSON.stringify({ tau: directBody.after.tau_s, r2: directBody.after.r2 }),
    );
  });

  it("approval clears the flag and the service agrees on the new fit", async () => {
    const reportBefore = await directJson<CohortReport>("/reports/cohort?mode=with_qcs");
    const tauRowBefore = reportBefore.rows.find((r) => r.marker === "tau_rec_pcr_s")!;

    const approved = await session.approve("ui-operator");
    expect(approved.start_index).toBe(1);
    expect(approved.qc.reselected_start_index).toBe(1);

    // client-side list no longer holds the subject, and the service agrees
    expect(session.flagged!).toHaveLength(0);
    const directFlagged = await directJson<{ subjects: unknown[] }>(
      "/subjects?status=flagged",
    );
    expect(directFlagged.subjects).toHaveLength(0);

    // the committed fit is byte-equal to the service's stored view
    const directView = await directJson<RecoveryView>("/subjects/patient-002/recovery");
    expect(JSON.stringify([approved.tau_s, approved.r2, approved.start_index])).toBe(
      JSON.stringify([directView.fit.tau_s, directView.fit.r2, directView.fit.start_index]),
    );

    // the cohort report moved with the reselected tau
    const reportAfter = await directJson<CohortReport>("/reports/cohort?mode=with_qcs");
    const tauRowAfter = reportAfter.rows.find((r) => r.marker === "tau_rec_pcr_s")!;
    expect(tauRowAfter.patients!.mean).not.toBe(tauRowBefore.patients!.mean);
    expect(reportAfter.revision).toBe(reportBefore.revision + 1);
  });

  it("a second approval with the stale revision is rejected as a conflict", async () => {
    const stale = await fetch(`${BASE}/subjects/patient-002/recovery/start-index`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ index: 2, operator: "late", revision: 0 }),
    });
    expect(stale.status).toBe(409);
  });
}, 60_000);
