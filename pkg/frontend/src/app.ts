/**
 * Browser entry point: wires the session state to the DOM.
 *
 * Layout: a flagged-subject list on the left, the recovery pane (chart, QC
 * table, candidate buttons 0..3, preview/approve) on the right, a retry
 * banner and a conflict dialog.  All numbers displayed originate from
 * service responses.
 */

import { ConflictError, ReviewClient } from "./api.js";
import { renderRecoveryChart } from "./chart.js";
import { ReviewSession } from "./state.js";
import { MAX_CANDIDATE_INDEX } from "./types.js";

const serviceUrl = new URLSearchParams(window.location.search).get("service")
  ?? "http://127.0.0.1:8781";
const operator = new URLSearchParams(window.location.search).get("operator") ?? "operator";

const session = new ReviewSession(new ReviewClient(serviceUrl));

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

function renderBanner(): void {
  const banner = el<HTMLDivElement>("banner");
  if (session.retryBanner !== null) {
    banner.textContent = `${session.retryBanner} — `;
    const retry = document.createElement("a");
    retry.href = "#";
    retry.textContent = "retry";
    retry.onclick = (event) => {
      event.preventDefault();
      void refreshList();
    };
    banner.appendChild(retry);
    banner.hidden = false;
  } else {
    banner.hidden = true;
  }
}

function renderList(): void {
  const list = el<HTMLUListElement>("flagged-list");
  list.replaceChildren();
  if (session.isEmpty) {
    el<HTMLParagraphElement>("empty-state").hidden = false;
    return;
  }
  el<HTMLParagraphElement>("empty-state").hidden = true;
  for (const row of session.flagged ?? []) {
    const item = document.createElement("li");
    const link = document.createElement("a");
    link.href = "#";
    link.textContent =
      `${row.id} (${row.group}) QCS ex ${row.score_total_exercise} / rec ${row.score_total_recovery}` +
      (row.suggested_index !== null ? ` — suggest start ${row.suggested_index}` : "");
    link.onclick = (event) => {
      event.preventDefault();
      void openSubject(row.id);
    };
    item.appendChild(link);
    list.appendChild(item);
  }
}

function renderDetail(): void {
  const pane = el<HTMLDivElement>("detail");
  const view = session.view;
  if (view === null) {
    pane.hidden = true;
    return;
  }
  pane.hidden = false;
  el<HTMLHeadingElement>("detail-title").textContent = view.subjectId;
  el<HTMLDivElement>("chart").innerHTML = renderRecoveryChart(view);

  const before = el<HTMLSpanElement>("before-values");
  before.textContent = `tau ${view.before.tau.toFixed(2)} s, r2 ${view.before.r2.toFixed(4)}`;
  const after = el<HTMLSpanElement>("after-values");
  after.textContent = view.after === null
    ? "preview a candidate start"
    : `tau ${view.after.tau.toFixed(2)} s, r2 ${view.after.r2.toFixed(4)}`;

  const qc = el<HTMLTableSectionElement>("qc-body");
  qc.replaceChildren();
  for (const [name, score] of Object.entries(view.qcScores)) {
    const tr = document.createElement("tr");
    const value = view.qcVariables[name];
    tr.innerHTML =
      `<td>${name}</td><td>${value === null || value === undefined ? "—" : value.toFixed(3)}</td><td>${score}</td>`;
    qc.appendChild(tr);
  }

  const buttons = el<HTMLDivElement>("candidates");
  buttons.replaceChildren();
  for (let index = 0; index <= MAX_CANDIDATE_INDEX + 1; index++) {
    const button = document.createElement("button");
    button.textContent = `start ${index}`;
    button.disabled = !session.candidateSelectable(index);
    if (index === view.candidateIndex) button.classList.add("selected");
    if (index === view.suggestedIndex) button.classList.add("suggested");
    button.onclick = () => void previewCandidate(index);
    buttons.appendChild(button);
  }
  el<HTMLButtonElement>("approve").disabled = view.after === null;
}

function renderConflict(): void {
  const dialog = el<HTMLDivElement>("conflict");
  if (session.conflict === null) {
    dialog.hidden = true;
    return;
  }
  dialog.hidden = false;
  el<HTMLParagraphElement>("conflict-detail").textContent =
    `${session.conflict.detail} — server now has start index ` +
    `${session.conflict.serverView.fit.start_index}, tau ` +
    `${session.conflict.serverView.fit.tau_s.toFixed(2)} s.`;
}

function renderAll(): void {
  renderBanner();
  renderList();
  renderDetail();
  renderConflict();
}

async function refreshList(): Promise<void> {
  try {
    await session.loadFlagged();
  } catch {
    // banner carries the failure; previous state stays
  }
  renderAll();
}

async function openSubject(id: string): Promise<void> {
  await session.openSubject(id);
  renderAll();
}

async function previewCandidate(index: number): Promise<void> {
  try {
    await session.previewCandidate(index);
  } catch (err) {
    el<HTMLSpanElement>("after-values").textContent = `preview failed: ${String(err)}`;
    return;
  }
  renderAll();
}

async function approve(): Promise<void> {
  try {
    await session.approve(operator);
  } catch (err) {
    if (!(err instanceof ConflictError)) {
      el<HTMLSpanElement>("after-values").textContent = `approval failed: ${String(err)}`;
    }
  }
  renderAll();
}

export function boot(): void {
  el<HTMLButtonElement>("approve").onclick = () => void approve();
  el<HTMLButtonElement>("refresh").onclick = () => void refreshList();
  el<HTMLButtonElement>("conflict-accept").onclick = () => {
    void session.acceptConflict().then(renderAll);
  };
  void refreshList();
}

boot();
