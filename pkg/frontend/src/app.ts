// Booking console wiring: request form, scored proposal table, confirmed
// list, and the live route timeline. All state transitions come from
// server responses and streamed snapshots; the page never invents windows
// or recomputes costs.

import { ApiClient, ApiError } from "./api.js";
import {
  countdownText,
  gridStarts,
  isSortedByScore,
  proposalRows,
  windowLabel,
} from "./scoring.js";
import { layoutTimeline } from "./timeline.js";
import { LiveRoutes, StreamSource } from "./stream.js";
import { ProposalResponse, Snapshot } from "./types.js";

const DECISION_BUDGET_MS = 2000;

const api = new ApiClient("");
const el = (id: string) => document.getElementById(id) as HTMLElement;

let sessionId = "";
let latest: Snapshot | null = null;
let pending: ProposalResponse | null = null;
let countdownTimer: number | undefined;

function banner(text: string, kind: "error" | "info" = "error"): void {
  const box = el("banner");
  box.textContent = text;
  box.className = text ? `banner ${kind}` : "banner hidden";
}

function renderSnapshot(snap: Snapshot, ok: boolean): void {
  latest = snap;
  el("cost").textContent = String(snap.cost);
  el("status").textContent = snap.status;
  el("status").dataset.state = snap.status;
  el("audit").textContent = ok ? "" : "cost increased between confirms";
  const booked = el("booked");
  booked.innerHTML = "";
  for (const w of snap.windows) {
    const item = document.createElement("li");
    item.textContent = `trip ${w.trip}: ${windowLabel(w.start, w.end)}`;
    booked.appendChild(item);
  }
  renderTimeline(snap);
}

function renderTimeline(snap: Snapshot): void {
  const layout = layoutTimeline(snap.routes);
  const host = el("timeline");
  host.innerHTML = "";
  host.style.setProperty("--cols", String(Math.max(layout.cols, 1)));
  const ticks = document.createElement("div");
  ticks.className = "ticks";
  for (const tick of layout.ticks) {
    const t = document.createElement("span");
    t.className = "tick";
    t.style.gridColumnStart = String(tick.col + 1);
    t.textContent = tick.label;
    ticks.appendChild(t);
  }
  host.appendChild(ticks);
  layout.lanes.forEach((lane, i) => {
    const row = document.createElement("div");
    row.className = "lane";
    const span = document.createElement("div");
    span.className = "lane-span";
    span.style.gridColumn = `${lane.startCol + 1} / ${lane.endCol + 2}`;
    row.appendChild(span);
    for (const block of lane.blocks) {
      const b = document.createElement("div");
      b.className = `block ${block.kind}`;
      b.style.gridColumnStart = String(block.col + 1);
      b.title = `trip ${block.trip} ${block.kind}`;
      b.textContent = String(block.trip);
      row.appendChild(b);
    }
    const label = document.createElement("span");
    label.className = "lane-label";
    label.textContent = `route ${i + 1}`;
    host.appendChild(label);
    host.appendChild(row);
  });
}

function clearProposal(): void {
  pending = null;
  if (countdownTimer !== undefined) {
    clearInterval(countdownTimer);
    countdownTimer = undefined;
  }
  el("proposal").classList.add("hidden");
}

function startCountdown(): void {
  const deadline = performance.now() + DECISION_BUDGET_MS;
  const tick = () => {
    const left = deadline - performance.now();
    el("countdown").textContent = countdownText(left);
    if (left <= 0 && countdownTimer !== undefined) {
      clearInterval(countdownTimer);
      countdownTimer = undefined;
    }
  };
  tick();
  countdownTimer = window.setInterval(tick, 100);
}

async function confirmBy(action: () => Promise<{ snapshot: Snapshot }>): Promise<void> {
  try {
    const res = await action();
    clearProposal();
    banner("");
    renderSnapshot(res.snapshot, true);
  } catch (err) {
    banner(err instanceof ApiError ? `confirm failed: ${err.message}` : String(err));
  }
}

function renderProposal(proposal: ProposalResponse): void {
  if (proposal.candidates.length === 0) {
    banner("no feasible windows inside that broad window");
    return;
  }
  if (!isSortedByScore(proposal.candidates)) {
    banner("server sent candidates out of score order", "error");
    return;
  }
  pending = proposal;
  const rows = proposalRows(proposal, latest?.cost ?? 0);
  const table = el("candidates");
  table.innerHTML = "";
  for (const row of rows) {
    const tr = document.createElement("tr");
    if (row.recommended) {
      tr.className = "recommended";
    }
    const bar = `<div class="bar"><div class="bar-fill" style="width:${Math.round(row.bar * 100)}%"></div></div>`;
    const route = row.absorbedRoute === null ? "new route" : `route ${row.absorbedRoute + 1}`;
    const delta = `${row.costDelta >= 0 ? "+" : ""}${row.costDelta}`;
    tr.innerHTML =
      `<td>${row.label}${row.recommended ? " *" : ""}</td>` +
      `<td>${bar}</td><td>${route}</td><td class="num">${delta}</td><td></td>`;
    const btn = document.createElement("button");
    btn.textContent = "confirm";
    btn.onclick = () => confirmBy(() => api.confirmCandidate(sessionId, row.index));
    tr.lastElementChild!.appendChild(btn);
    table.appendChild(tr);
  }
  const starts = candidateGridStarts(proposal);
  const select = el("custom-start") as HTMLSelectElement;
  select.innerHTML = "";
  for (const s of starts) {
    const opt = document.createElement("option");
    opt.value = String(s);
    opt.textContent = windowLabel(s, s + windowLen(proposal));
    select.appendChild(opt);
  }
  el("proposal").classList.remove("hidden");
  startCountdown();
}

function windowLen(proposal: ProposalResponse): number {
  const w = proposal.candidates[0].window;
  return w.end - w.start;
}

// Offer exactly the grid the server validates: infer the step from the
// proposal spacing, anchored at the broad window start.
function candidateGridStarts(proposal: ProposalResponse): number[] {
  const cands = proposal.candidates;
  const sorted = cands.map((c) => c.window.start).sort((a, b) => a - b);
  const grid = sorted.length > 1 ? sorted[1] - sorted[0] : 900;
  const broad = currentBroad();
  return gridStarts(broad.start, broad.end, grid, windowLen(proposal));
}

function formNumber(id: string): number {
  return Number((el(id) as HTMLInputElement).value);
}

function currentBroad(): { start: number; end: number } {
  const [h, m] = (el("broad-start") as HTMLInputElement).value.split(":").map(Number);
  const start = h * 3600 + m * 60;
  return { start, end: start + formNumber("broad-hours") * 3600 };
}

async function submitRequest(ev: Event): Promise<void> {
  ev.preventDefault();
  if (pending) {
    banner("confirm or discard the open proposal first");
    return;
  }
  const broad = currentBroad();
  try {
    const proposal = await api.submitRequest(sessionId, {
      pickup: formNumber("pickup"),
      dropoff: formNumber("dropoff"),
      passengers: formNumber("passengers"),
      broad_window: broad,
    });
    banner(proposal.deadline_hit ? "decision budget hit, candidates truncated" : "", "info");
    renderProposal(proposal);
  } catch (err) {
    banner(err instanceof ApiError ? `request rejected (${err.status}): ${err.message}` : String(err));
  }
}

function browserSource(url: string): StreamSource {
  const es = new EventSource(url);
  const src: StreamSource = {
    onmessage: null,
    onerror: null,
    close: () => es.close(),
  };
  es.onmessage = (ev) => src.onmessage?.({ data: String(ev.data) });
  es.onerror = (ev) => src.onerror?.(ev);
  return src;
}

async function main(): Promise<void> {
  const session = await api.createSession();
  sessionId = session.session;
  el("session").textContent = sessionId;
  (el("request-form") as HTMLFormElement).onsubmit = submitRequest;
  (el("confirm-custom") as HTMLButtonElement).onclick = () => {
    const start = Number((el("custom-start") as HTMLSelectElement).value);
    void confirmBy(() => api.confirmStart(sessionId, start));
  };
  const live = new LiveRoutes(
    api.eventsUrl(sessionId),
    () => api.fetchRoutes(sessionId),
    {
      onSnapshot: renderSnapshot,
      onConnection: (up) => el("link").dataset.state = up ? "up" : "down",
    },
    browserSource,
  );
  live.start();
}

main().catch((err) => banner(`session start failed: ${err}`));
