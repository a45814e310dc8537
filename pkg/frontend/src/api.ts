// Thin typed client over the booking service endpoints.

import {
  ConfirmResponse,
  ProposalResponse,
  RequestBody,
  SessionResponse,
  Snapshot,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

async function call<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  if (!response.ok) {
    const body = await response.json().catch(() => ({}));
    const detail =
      typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail ?? response.statusText);
    throw new ApiError(response.status, detail);
  }
  return response.json() as Promise<T>;
}

function post<T>(url: string, payload: unknown): Promise<T> {
  return call<T>(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  createSession(day: string = "weekday"): Promise<SessionResponse> {
    return post(`${this.base}/api/session`, { day });
  }

  submitRequest(sid: string, body: RequestBody): Promise<ProposalResponse> {
    return post(`${this.base}/api/session/${sid}/request`, body);
  }

  confirmCandidate(sid: string, candidate: number): Promise<ConfirmResponse> {
    return post(`${this.base}/api/session/${sid}/confirm`, { candidate });
  }

  confirmStart(sid: string, start: number): Promise<ConfirmResponse> {
    return post(`${this.base}/api/session/${sid}/confirm`, { start });
  }

  fetchRoutes(sid: string): Promise<Snapshot> {
    return call(`${this.base}/api/session/${sid}/routes`);
  }

  eventsUrl(sid: string): string {
    return `${this.base}/api/session/${sid}/events`;
  }
}
