/**
 * Dependency-free SVG rendering of the recovery pane: measured points as a
 * scatter, the current fit as a line, an optional candidate refit overlay,
 * and residual bars in a strip underneath.
 */

import type { ReviewViewModel } from "./state.js";

export interface ChartOptions {
  width?: number;
  height?: number;
  residualStrip?: number;
  margin?: number;
}

interface Scale {
  (value: number): number;
}

function linearScale(domainLo: number, domainHi: number, rangeLo: number, rangeHi: number): Scale {
  const span = domainHi - domainLo || 1;
  return (value: number) => rangeLo + ((value - domainLo) / span) * (rangeHi - rangeLo);
}

function polylinePoints(ts: number[], vs: number[], x: Scale, y: Scale): string {
  const pts: string[] = [];
  const n = Math.min(ts.length, vs.length);
  for (let i = 0; i < n; i++) {
    pts.push(`${x(ts[i]!).toFixed(2)},${y(vs[i]!).toFixed(2)}`);
  }
  return pts.join(" ");
}

export function renderRecoveryChart(view: ReviewViewModel, options: ChartOptions = {}): string {
  const width = options.width ?? 640;
  const height = options.height ?? 360;
  const strip = options.residualStrip ?? 80;
  const margin = options.margin ?? 32;

  const ts = view.series.t;
  const vs = view.series.value;
  const allValues = [...vs, ...view.currentOverlay.value, ...(view.candidateOverlay?.value ?? [])];
  const tLo = Math.min(...ts);
  const tHi = Math.max(...ts);
  const vLo = Math.min(...allValues);
  const vHi = Math.max(...allValues);

  const plotBottom = height - strip - margin;
  const x = linearScale(tLo, tHi, margin, width - margin);
  const y = linearScale(vLo, vHi, plotBottom, margin);

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" ` +
      `width="${width}" height="${height}" role="img" aria-label="recovery fit for ${view.subjectId}">`,
  );

  // measured points
  for (let i = 0; i < ts.length; i++) {
    parts.push(
      `<circle class="pt" cx="${x(ts[i]!).toFixed(2)}" cy="${y(vs[i]!).toFixed(2)}" r="2.5" />`,
    );
  }
  // current fit line
  parts.push(
    `<polyline class="fit-current" fill="none" stroke="#1965b0" stroke-width="1.5" ` +
      `points="${polylinePoints(view.currentOverlay.t, view.currentOverlay.value, x, y)}" />`,
  );
  // candidate overlay, when a preview has been fetched
  if (view.candidateOverlay !== null) {
    parts.push(
      `<polyline class="fit-candidate" fill="none" stroke="#dc050c" stroke-width="1.5" ` +
        `stroke-dasharray="5 3" ` +
        `points="${polylinePoints(view.candidateOverlay.t, view.candidateOverlay.value, x, y)}" />`,
    );
  }

  // residual bars in the bottom strip, symmetric about its midline
  const resAbs = Math.max(...view.residuals.map(Math.abs), 1e-9);
  const mid = height - margin - strip / 2;
  const rScale = linearScale(0, resAbs, 0, strip / 2 - 4);
  parts.push(`<line class="res-axis" x1="${margin}" y1="${mid}" x2="${width - margin}" y2="${mid}" stroke="#888" stroke-width="0.5" />`);
  for (let i = 0; i < view.residuals.length; i++) {
    const r = view.residuals[i]!;
    const barHeight = rScale(Math.abs(r));
    const top = r >= 0 ? mid - barHeight : mid;
    parts.push(
      `<rect class="res" x="${(x(ts[i]!) - 1).toFixed(2)}" y="${top.toFixed(2)}" ` +
        `width="2" height="${barHeight.toFixed(2)}" fill="#777" />`,
    );
  }

  parts.push("</svg>");
  return parts.join("");
}
