// Live snapshot stream: SSE parsing, the non-increasing cost audit, and
// reconnect-with-refetch. The browser wiring injects EventSource and
// timers; everything stateful here is plain and testable.

import { Snapshot } from "./types.js";

// Parses server-sent event text incrementally; returns the data payloads
// of complete events and the unconsumed tail. Shared by the node-side
// contract tests, which read the stream with fetch instead of EventSource.
export function parseSse(buffer: string): { events: string[]; rest: string } {
  const events: string[] = [];
  let rest = buffer;
  for (;;) {
    const cut = rest.indexOf("\n\n");
    if (cut < 0) {
      return { events, rest };
    }
    const chunk = rest.slice(0, cut);
    rest = rest.slice(cut + 2);
    const data = chunk
      .split("\n")
      .filter((line) => line.startsWith("data:"))
      .map((line) => line.slice(5).trimStart())
      .join("\n");
    if (data) {
      events.push(data);
    }
  }
}

// Flags any cost increase between confirms. The solver only ever improves
// the plan while no new trip lands, so within one confirm generation the
// streamed cost must be non-increasing.
export class CostAudit {
  private confirms = -1;
  private cost = Infinity;
  violations = 0;

  apply(snap: Snapshot): boolean {
    const ok = snap.confirms !== this.confirms || snap.cost <= this.cost;
    if (!ok) {
      this.violations += 1;
    }
    this.confirms = snap.confirms;
    this.cost = snap.cost;
    return ok;
  }
}

// Doubling backoff for stream reconnects, capped, reset on success.
export class Reconnector {
  private attempt = 0;

  constructor(
    readonly baseMs: number = 1000,
    readonly capMs: number = 15000,
  ) {}

  nextDelay(): number {
    const delay = Math.min(this.baseMs * 2 ** this.attempt, this.capMs);
    this.attempt += 1;
    return delay;
  }

  reset(): void {
    this.attempt = 0;
  }
}

export interface StreamSource {
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  close(): void;
}

export type SourceFactory = (url: string) => StreamSource;
export type Scheduler = (fn: () => void, ms: number) => void;

export interface LiveHandlers {
  onSnapshot(snap: Snapshot, ok: boolean): void;
  onConnection(up: boolean): void;
}

// Owns one events subscription: applies every streamed snapshot through
// the audit, and on stream errors closes, waits, refetches the snapshot
// (the stream may have dropped events), then resubscribes.
export class LiveRoutes {
  readonly audit = new CostAudit();
  private source: StreamSource | null = null;
  private stopped = false;

  constructor(
    private readonly url: string,
    private readonly refetch: () => Promise<Snapshot>,
    private readonly handlers: LiveHandlers,
    private readonly factory: SourceFactory,
    private readonly schedule: Scheduler = (fn, ms) => setTimeout(fn, ms),
    private readonly backoff: Reconnector = new Reconnector(),
  ) {}

  start(): void {
    this.stopped = false;
    this.connect();
  }

  stop(): void {
    this.stopped = true;
    this.source?.close();
    this.source = null;
  }

  private connect(): void {
    if (this.stopped) {
      return;
    }
    const source = this.factory(this.url);
    this.source = source;
    source.onmessage = (ev) => {
      this.backoff.reset();
      this.handlers.onConnection(true);
      this.applyRaw(ev.data);
    };
    source.onerror = () => {
      if (this.source !== source) {
        return; // superseded by a newer subscription
      }
      source.close();
      this.source = null;
      this.handlers.onConnection(false);
      this.schedule(() => this.resume(), this.backoff.nextDelay());
    };
  }

  private applyRaw(data: string): void {
    let snap: Snapshot;
    try {
      snap = JSON.parse(data) as Snapshot;
    } catch {
      return; // tolerate malformed frames, the next snapshot supersedes
    }
    this.handlers.onSnapshot(snap, this.audit.apply(snap));
  }

  private async resume(): Promise<void> {
    if (this.stopped) {
      return;
    }
    try {
      const snap = await this.refetch();
      this.handlers.onSnapshot(snap, this.audit.apply(snap));
    } catch {
      this.handlers.onConnection(false);
      this.schedule(() => this.resume(), this.backoff.nextDelay());
      return;
    }
    this.connect();
  }
}
