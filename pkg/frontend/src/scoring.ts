// Proposal view-model: candidate rows with relative score bars.
//
// Scores are an internal cost proxy, so rows show them as bars scaled
// between the best and worst candidate of this proposal, never as raw
// numbers with units. Rendering order is the server's ascending-score
// order; the audit helper lets callers refuse out-of-order payloads.

import { CandidateDoc, ProposalResponse } from "./types.js";

export interface CandidateRow {
  index: number;
  label: string;
  qScore: number;
  bar: number; // 0 for the best score, 1 for the worst
  absorbedRoute: number | null;
  planCost: number;
  costDelta: number; // plan cost minus the current snapshot cost
  recommended: boolean;
}

export function fmtClock(seconds: number): string {
  const h = Math.floor(seconds / 3600) % 24;
  const m = Math.floor((seconds % 3600) / 60);
  return `${String(h).padStart(2, "0")}:${String(m).padStart(2, "0")}`;
}

export function windowLabel(start: number, end: number): string {
  return `${fmtClock(start)} to ${fmtClock(end)}`;
}

export function isSortedByScore(candidates: CandidateDoc[]): boolean {
  return candidates.every(
    (c, i) => i === 0 || candidates[i - 1].q_score <= c.q_score,
  );
}

export function proposalRows(
  proposal: ProposalResponse,
  currentCost: number,
): CandidateRow[] {
  const scores = proposal.candidates.map((c) => c.q_score);
  const lo = Math.min(...scores);
  const hi = Math.max(...scores);
  const span = hi - lo;
  return proposal.candidates.map((c, i) => ({
    index: c.index,
    label: windowLabel(c.window.start, c.window.end),
    qScore: c.q_score,
    bar: span > 0 ? (c.q_score - lo) / span : 0,
    absorbedRoute: c.plan_summary.absorbed_route,
    planCost: c.plan_summary.cost,
    costDelta: c.plan_summary.cost - currentCost,
    recommended: i === proposal.recommended,
  }));
}

// Grid starts the server will accept for a custom confirm: anchored at the
// broad window start, stepping by the booking grid, leaving room for one
// tight window. The UI only ever offers these, never free-typed times.
export function gridStarts(
  broadStart: number,
  broadEnd: number,
  grid: number,
  windowLen: number,
): number[] {
  const starts: number[] = [];
  for (let s = broadStart; s <= broadEnd - windowLen; s += grid) {
    starts.push(s);
  }
  return starts;
}

export function countdownText(msLeft: number): string {
  return `${(Math.max(0, msLeft) / 1000).toFixed(1)} s`;
}
