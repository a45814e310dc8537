// Payload shapes of the booking service HTTP API.

export interface WindowDoc {
  start: number;
  end: number;
}

export interface StopDoc {
  trip: number;
  kind: "pickup" | "dropoff";
  location: number;
  arrival: number;
}

export interface RouteDoc {
  stops: StopDoc[];
}

export interface Snapshot {
  session: string;
  status: "idle" | "annealing" | "deciding";
  confirmed: number;
  confirms: number;
  windows: { trip: number; start: number; end: number }[];
  cost: number;
  routes: RouteDoc[];
}

export interface PlanSummary {
  cost: number;
  routes: number;
  absorbed_route: number | null;
}

export interface CandidateDoc {
  index: number;
  window: WindowDoc;
  q_score: number;
  plan_summary: PlanSummary;
}

export interface ProposalResponse {
  request: number;
  candidates: CandidateDoc[];
  recommended: number;
  deadline_hit: boolean;
}

export interface ConfirmResponse {
  window: WindowDoc;
  snapshot: Snapshot;
}

export interface SessionResponse {
  session: string;
  day: string;
}

export interface RequestBody {
  pickup: number;
  dropoff: number;
  passengers: number;
  broad_window: WindowDoc;
  booking_instant?: number;
}
