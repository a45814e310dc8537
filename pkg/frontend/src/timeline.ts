// Route timeline layout: one lane per route, stops as blocks on a
// 15-minute grid. Pure functions from snapshot routes to grid positions;
// the DOM layer only paints what this module computes.

import { RouteDoc } from "./types.js";

export const CELL_SECONDS = 900;

export interface Block {
  trip: number;
  kind: "pickup" | "dropoff";
  col: number; // grid column relative to the layout start
  arrival: number;
}

export interface Lane {
  blocks: Block[];
  startCol: number;
  endCol: number;
}

export interface HourTick {
  col: number;
  label: string;
}

export interface TimelineLayout {
  lanes: Lane[];
  startCol: number; // absolute 15-min cell index of column 0
  cols: number;
  ticks: HourTick[];
}

export function layoutTimeline(routes: RouteDoc[]): TimelineLayout {
  if (routes.length === 0 || routes.every((r) => r.stops.length === 0)) {
    return { lanes: [], startCol: 0, cols: 0, ticks: [] };
  }
  const cells = routes.flatMap((r) =>
    r.stops.map((s) => Math.floor(s.arrival / CELL_SECONDS)),
  );
  const first = Math.min(...cells);
  const last = Math.max(...cells);
  const lanes = routes.map((route) => {
    const blocks = route.stops.map((s) => ({
      trip: s.trip,
      kind: s.kind,
      col: Math.floor(s.arrival / CELL_SECONDS) - first,
      arrival: s.arrival,
    }));
    const cols = blocks.map((b) => b.col);
    return {
      blocks,
      startCol: cols.length > 0 ? Math.min(...cols) : 0,
      endCol: cols.length > 0 ? Math.max(...cols) : 0,
    };
  });
  const ticks: HourTick[] = [];
  for (let cell = first; cell <= last; cell += 1) {
    if ((cell * CELL_SECONDS) % 3600 === 0) {
      const hour = (cell * CELL_SECONDS) / 3600;
      ticks.push({ col: cell - first, label: `${String(hour % 24).padStart(2, "0")}:00` });
    }
  }
  return { lanes, startCol: first, cols: last - first + 1, ticks };
}
