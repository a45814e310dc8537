"""HTTP booking service: propose tight windows, confirm, anneal between calls.

Each session owns at most one background annealing worker improving the
confirmed routes. An incoming request pauses the worker (it stops within one
iteration), scores one candidate window per grid start, and holds them as the
session's single pending proposal until a confirm commits one and resumes
annealing. Snapshots read the worker's current best without blocking it.

Sessions live in memory; an optional append-only journal records creates and
confirms as JSON lines so a restarted server can replay its confirmed state.
"""

from __future__ import annotations

import asyncio
import json
import random
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel, Field

from .features import DecisionState, DemandModel, feature_vector
from .greedy import GreedyParams, Unserviceable
from .model import (
    Instance,
    ProblemConfig,
    Solution,
    TimeWindow,
    TravelTimeMatrix,
    TripRequest,
    check_feasibility,
    solution_cost,
    solution_to_dict,
)
from .policy import (
    DECISION_DEADLINE,
    ValueNet,
    plan_for_window,
    q_evaluate,
    state_runs,
)
from .simanneal import Annealer, SaParams

DEFAULT_ANNEAL_SECONDS = 600.0
EVENT_POLL_SECONDS = 0.5  # also the event-rate throttle: at most 2/s


class SessionBody(BaseModel):
    day: Literal["weekday", "weekend"] = "weekday"


class WindowBody(BaseModel):
    start: int = Field(ge=0)
    end: int = Field(gt=0)


class RequestBody(BaseModel):
    pickup: int
    dropoff: int
    passengers: int = Field(ge=1)
    broad_window: WindowBody
    booking_instant: int = Field(default=0, ge=0)


class ConfirmBody(BaseModel):
    candidate: int | None = None
    start: int | None = None


@dataclass(frozen=True, slots=True)
class Candidate:
    """One proposed tight window with its plan and score."""

    window: TimeWindow
    plan: Solution
    q: float


@dataclass(frozen=True, slots=True)
class Proposal:
    """The pending request plus its scored candidates, best first."""

    request: TripRequest
    candidates: tuple[Candidate, ...]
    deadline_hit: bool


class Session:
    """One booking conversation: confirmed trips, routes, and the worker."""

    def __init__(self, sid: str, day: str):
        self.id = sid
        self.day = day
        self.lock = threading.Lock()
        self.requests: list[TripRequest] = []
        self.windows: list[TimeWindow] = []
        self.routes = Solution(())
        self.pending: Proposal | None = None
        self.confirms = 0
        self._annealer: Annealer | None = None
        self._thread: threading.Thread | None = None

    @property
    def status(self) -> str:
        if self.pending is not None:
            return "deciding"
        if self._thread is not None and self._thread.is_alive():
            return "annealing"
        return "idle"

    def stop_worker(self) -> None:
        """Halt the annealing worker and adopt its best solution."""
        ann, thread = self._annealer, self._thread
        if ann is None:
            return
        ann.stop()
        if thread is not None:
            thread.join()
        self.routes = ann.best
        self._annealer = None
        self._thread = None

    def start_worker(self, st: "ServiceState") -> None:
        """Resume background annealing of the confirmed routes."""
        if not self.requests:
            return
        sa = replace(st.sa, budget_seconds=st.anneal_seconds, budget_iters=None,
                     rng_seed=st.rng.randrange(2 ** 32))
        ann = Annealer(self.routes, tuple(self.requests), tuple(self.windows),
                       sa, st.gp, st.cfg, st.matrix)
        self._annealer = ann
        # the worker mutates nothing on the session; handlers join it first
        self._thread = threading.Thread(target=ann.run, daemon=True)
        self._thread.start()

    def best_solution(self) -> Solution:
        ann = self._annealer
        return ann.best if ann is not None else self.routes

    def snapshot(self, st: "ServiceState") -> dict:
        doc = solution_to_dict(self.best_solution(), st.cfg, st.matrix)
        return {
            "session": self.id,
            "status": self.status,
            "confirmed": len(self.requests),
            "confirms": self.confirms,
            "windows": [{"trip": r.id, "start": w.start, "end": w.end}
                        for r, w in zip(self.requests, self.windows)],
            "cost": doc["cost"] if self.requests else 0,
            "routes": doc["routes"],
        }


@dataclass
class ServiceState:
    """Everything the endpoints need, loaded once at startup."""

    instance: Instance | None = None
    dm: DemandModel | None = None
    net: ValueNet | None = None
    gp: GreedyParams = field(default_factory=GreedyParams)
    sa: SaParams = field(default_factory=lambda: SaParams(budget_iters=1000))
    anneal_seconds: float = DEFAULT_ANNEAL_SECONDS
    deadline: float = DECISION_DEADLINE
    journal: Path | None = None
    rng_seed: int = 0
    sessions: dict[str, Session] = field(default_factory=dict)
    counter: int = 0
    rng: random.Random = field(init=False)

    def __post_init__(self) -> None:
        self.rng = random.Random(self.rng_seed)

    @property
    def cfg(self) -> ProblemConfig:
        return self.instance.config

    @property
    def matrix(self) -> TravelTimeMatrix:
        return self.instance.matrix

    def missing(self) -> list[str]:
        return [name for name, obj in (("instance", self.instance),
                                       ("demand model", self.dm),
                                       ("value net", self.net))
                if obj is None]

    def journal_write(self, record: dict) -> None:
        if self.journal is None:
            return
        with open(self.journal, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def _score_candidates(st: ServiceState, session: Session,
                      req: TripRequest) -> Proposal:
    """Plan and score every grid window for `req` against the session state."""
    state = DecisionState(tuple(session.requests) + (req,),
                          tuple(session.windows), session.routes,
                          st.instance.areas, day=session.day,
                          booking_clock=req.booking_instant)
    broad = req.broad_window
    runs = state_runs(state, st.cfg, st.matrix)
    t0 = time.monotonic()
    cands = []
    hit = False
    for start in range(broad.start, broad.end - st.cfg.window_len + 1,
                       st.cfg.grid):
        window = TimeWindow(start, start + st.cfg.window_len)
        try:
            plan = plan_for_window(state, runs, window, st.cfg, st.gp,
                                   st.matrix)
        except Unserviceable:
            continue
        f = feature_vector(state, window, plan, st.dm, st.cfg, st.matrix)
        cands.append(Candidate(window, plan, q_evaluate(st.net, f)))
        if time.monotonic() - t0 > st.deadline:
            hit = True
            break
    cands.sort(key=lambda c: c.q)  # stable: equal scores keep grid order
    return Proposal(req, tuple(cands), hit)


def _candidate_payload(st: ServiceState, idx: int, cand: Candidate,
                       trip_id: int) -> dict:
    absorbed = next((i for i, route in enumerate(cand.plan.routes)
                     if any(s.trip == trip_id for s in route.stops)), None)
    return {
        "index": idx,
        "window": {"start": cand.window.start, "end": cand.window.end},
        "q_score": cand.q,
        "plan_summary": {
            "cost": solution_cost(cand.plan, st.cfg, st.matrix),
            "routes": len(cand.plan.routes),
            "absorbed_route": absorbed,
        },
    }


def replay_journal(st: ServiceState) -> None:
    """Rebuild sessions from the journal: confirmed trips, no workers."""
    if st.journal is None or not st.journal.exists():
        return
    with open(st.journal, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["event"] == "session":
                st.counter += 1
                st.sessions[rec["id"]] = Session(rec["id"], rec["day"])
            elif rec["event"] == "confirm":
                session = st.sessions[rec["session"]]
                r = rec["request"]
                req = TripRequest(r["id"], r["pickup"], r["dropoff"],
                                  r["passengers"],
                                  TimeWindow(*r["broad_window"]),
                                  booking_instant=r["booking_instant"])
                window = TimeWindow(*rec["window"])
                state = DecisionState(tuple(session.requests) + (req,),
                                      tuple(session.windows), session.routes,
                                      st.instance.areas, day=session.day,
                                      booking_clock=req.booking_instant)
                runs = state_runs(state, st.cfg, st.matrix)
                plan = plan_for_window(state, runs, window, st.cfg, st.gp,
                                       st.matrix)
                session.requests.append(req)
                session.windows.append(window)
                session.routes = plan
                session.confirms += 1


def create_app(st: ServiceState) -> FastAPI:
    """Wire the booking endpoints around one loaded service state."""
    app = FastAPI(title="paraflex booking service")
    app.state.service = st

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def get_session(sid: str) -> Session:
        session = st.sessions.get(sid)
        if session is None:
            raise HTTPException(404, f"no session {sid!r}")
        return session

    @app.post("/api/session", status_code=201)
    def create_session(body: SessionBody | None = None):
        missing = st.missing()
        if missing:
            raise HTTPException(503, f"service not ready: missing "
                                     f"{', '.join(missing)}")
        day = body.day if body is not None else "weekday"
        st.counter += 1
        sid = f"s{st.counter}"
        st.sessions[sid] = Session(sid, day)
        st.journal_write({"event": "session", "id": sid, "day": day})
        return {"session": sid, "day": day}

    @app.post("/api/session/{sid}/request")
    def propose(sid: str, body: RequestBody):
        session = get_session(sid)
        with session.lock:
            if session.pending is not None:
                raise HTTPException(409, "a proposal is already pending")
            broad = TimeWindow(body.broad_window.start, body.broad_window.end)
            if broad.length < st.cfg.window_len:
                raise HTTPException(
                    422, f"broad window shorter than {st.cfg.window_len} s")
            n = st.matrix.size
            if not (0 <= body.pickup < n and 0 <= body.dropoff < n):
                raise HTTPException(422, "unknown pickup or dropoff location")
            if body.pickup == body.dropoff:
                raise HTTPException(422, "pickup equals dropoff")
            session.stop_worker()  # pause annealing while deciding
            req = TripRequest(len(session.requests) + 1, body.pickup,
                              body.dropoff, body.passengers, broad,
                              booking_instant=body.booking_instant)
            proposal = _score_candidates(st, session, req)
            if not proposal.candidates:
                session.start_worker(st)
                raise HTTPException(422, "no feasible window for this trip")
            session.pending = proposal
            recommended = min(range(len(proposal.candidates)),
                              key=lambda i: proposal.candidates[i].q)
            return {
                "request": req.id,
                "candidates": [_candidate_payload(st, i, c, req.id)
                               for i, c in enumerate(proposal.candidates)],
                "recommended": recommended,
                "deadline_hit": proposal.deadline_hit,
            }

    @app.post("/api/session/{sid}/confirm")
    def confirm(sid: str, body: ConfirmBody):
        session = get_session(sid)
        with session.lock:
            proposal = session.pending
            if proposal is None:
                raise HTTPException(409, "no pending proposal")
            if (body.candidate is None) == (body.start is None):
                raise HTTPException(422, "give exactly one of candidate/start")
            req = proposal.request
            broad = req.broad_window
            if body.candidate is not None:
                if not 0 <= body.candidate < len(proposal.candidates):
                    raise HTTPException(422, "candidate index out of range")
                chosen = proposal.candidates[body.candidate]
                window, plan = chosen.window, chosen.plan
            else:
                start = body.start
                if ((start - broad.start) % st.cfg.grid != 0
                        or not broad.start <= start
                        <= broad.end - st.cfg.window_len):
                    raise HTTPException(
                        422, "start is off-grid or outside the broad window")
                window = TimeWindow(start, start + st.cfg.window_len)
                match = next((c for c in proposal.candidates
                              if c.window == window), None)
                if match is not None:
                    plan = match.plan
                else:
                    state = DecisionState(
                        tuple(session.requests) + (req,),
                        tuple(session.windows), session.routes,
                        st.instance.areas, day=session.day,
                        booking_clock=req.booking_instant)
                    runs = state_runs(state, st.cfg, st.matrix)
                    try:
                        plan = plan_for_window(state, runs, window, st.cfg,
                                               st.gp, st.matrix)
                    except Unserviceable:
                        raise HTTPException(
                            422, "no feasible plan for that window") from None
            session.requests.append(req)
            session.windows.append(window)
            session.routes = plan
            audit = check_feasibility(plan, session.requests, session.windows,
                                      st.cfg, st.matrix)
            if audit:
                raise HTTPException(500, f"confirmed plan infeasible: {audit}")
            session.pending = None
            session.confirms += 1
            st.journal_write({
                "event": "confirm", "session": sid,
                "request": {"id": req.id, "pickup": req.pickup,
                            "dropoff": req.dropoff,
                            "passengers": req.passengers,
                            "broad_window": [broad.start, broad.end],
                            "booking_instant": req.booking_instant},
                "window": [window.start, window.end],
            })
            session.start_worker(st)
            return {
                "window": {"start": window.start, "end": window.end},
                "snapshot": session.snapshot(st),
            }

    @app.get("/api/session/{sid}/routes")
    def routes(sid: str):
        return get_session(sid).snapshot(st)

    @app.get("/api/session/{sid}/events")
    async def events(sid: str):
        session = get_session(sid)

        async def stream():
            last = None
            while True:
                snap = session.snapshot(st)
                key = (snap["cost"], snap["confirms"], snap["status"])
                if key != last:
                    last = key
                    yield f"data: {json.dumps(snap)}\n\n"
                await asyncio.sleep(EVENT_POLL_SECONDS)

        return StreamingResponse(stream(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache"})

    return app
