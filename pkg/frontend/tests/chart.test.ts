import { describe, expect, it } from "vitest";

import { renderRecoveryChart } from "../src/chart.js";
import type { ReviewViewModel } from "../src/state.js";

function viewModel(withCandidate: boolean): ReviewViewModel {
  return {
    subjectId: "p-1",
    series: { t: [0, 4, 8, 12], value: [20, 24, 27, 29] },
    currentOverlay: { t: [0, 4, 8, 12], value: [20.5, 23.8, 26.8, 29.1] },
    candidateOverlay: withCandidate
      ? { t: [4, 8, 12], value: [24.0, 27.0, 29.2] }
      : null,
    residuals: [-0.5, 0.2, 0.2, -0.1],
    qcScores: {},
    qcVariables: {},
    suggestedIndex: 1,
    candidateIndex: withCandidate ? 1 : null,
    before: { tau: 36.2, r2: 0.95 },
    after: withCandidate ? { tau: 33.9, r2: 0.98 } : null,
    revision: 0,
  };
}

describe("renderRecoveryChart", () => {
  it("renders one scatter point per frame and one residual bar each", () => {
    const svg = renderRecoveryChart(viewModel(false));
    expect(svg.startsWith("<svg")).toBe(true);
    expect(svg.match(/<circle class="pt"/g)).toHaveLength(4);
    expect(svg.match(/<rect class="res"/g)).toHaveLength(4);
    expect(svg).toContain('class="fit-current"');
    expect(svg).not.toContain('class="fit-candidate"');
  });

  it("adds the dashed candidate overlay only when a preview exists", () => {
    const svg = renderRecoveryChart(viewModel(true));
    expect(svg).toContain('class="fit-candidate"');
    expect(svg).toContain("stroke-dasharray");
  });

  it("scales residual bars relative to the largest residual", () => {
    const svg = renderRecoveryChart(viewModel(false), { residualStrip: 80 });
    const heights = [...svg.matchAll(/<rect class="res"[^>]*height="([0-9.]+)"/g)]
      .map((m) => Number(m[1]));
    expect(Math.max(...heights)).toBeCloseTo(36, 0); // strip/2 - 4
    // smallest residual (0.1 of 0.5) is a fifth of the tallest bar
    expect(Math.min(...heights)).toBeCloseTo(Math.max(...heights) / 5, 1);
  });

  it("is a pure string renderer (no DOM needed)", () => {
    const a = renderRecoveryChart(viewModel(true));
    const b = renderRecoveryChart(viewModel(true));
    expect(a).toBe(b);
  });
});
