"""Domain types, feasibility checking, and the cost objective for the
offline vehicle routing problem with pickup time windows.

All times are integer seconds since service-day midnight; window bounds are
inclusive on both ends. Types are immutable value objects and operations are
pure functions.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

# Default problem constants (durations in integer seconds).
DEFAULT_CAPACITY = 9
DEFAULT_DWELL = 180
DEFAULT_MAX_ROUTE = 36000
DEFAULT_WINDOW_LEN = 1800
DEFAULT_ROUTE_OVERHEAD = 1800
DEFAULT_GRID = 900

PICKUP = "pickup"
DROPOFF = "dropoff"

VIOLATION_KINDS = (
    "duplicate-stop",
    "unserved-trip",
    "window-miss",
    "dropoff-late",
    "travel-time",
    "duration-exceeded",
    "capacity-exceeded",
    "pair-split",
)

TRIANGLE_TOLERANCE = 1  # seconds of slack allowed per audited triple


class EmptyRoute(ValueError):
    """An operation required at least one stop in the route."""


class PairOrder(ValueError):
    """A dropoff appears before its pickup inside a route."""


class InstanceError(ValueError):
    """An instance document failed validation."""


@dataclass(frozen=True, slots=True)
class Location:
    """A geocoded stop candidate with an opaque area code."""

    id: int
    lat: float
    lon: float
    area: str

    def __post_init__(self) -> None:
        if not self.area:
            raise ValueError(f"location {self.id}: empty area code")


@dataclass(frozen=True)
class TravelTimeMatrix:
    """Pairwise travel durations (seconds) and distances (meters) by location id."""

    seconds: tuple[tuple[int, ...], ...]
    meters: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        n = len(self.seconds)
        for name, rows in (("seconds", self.seconds), ("meters", self.meters)):
            if len(rows) != n or any(len(row) != n for row in rows):
                raise ValueError(f"matrix '{name}' is not {n}x{n}")
            for i, row in enumerate(rows):
                if row[i] != 0:
                    raise ValueError(f"matrix '{name}' diagonal nonzero at {i}")
                if any(v < 0 for v in row):
                    raise ValueError(f"matrix '{name}' has negative entry in row {i}")

    @property
    def size(self) -> int:
        return len(self.seconds)

    def travel(self, a: int, b: int) -> int:
        return self.seconds[a][b]

    def dist(self, a: int, b: int) -> int:
        return self.meters[a][b]

    def audit_triangle(self, tolerance: int = TRIANGLE_TOLERANCE,
                       max_triples: int = 20000) -> list[tuple[int, int, int]]:
        """Return triples (a, b, c) with travel(a,c) > travel(a,b)+travel(b,c)+tolerance.

        Checks all triples for small matrices, a seeded random sample otherwise.
        """
        n = self.size
        sec = self.seconds
        bad = []
        if n ** 3 <= 64000:
            triples = ((a, b, c) for a in range(n) for b in range(n) for c in range(n))
        else:
            rng = random.Random(0)
            triples = ((rng.randrange(n), rng.randrange(n), rng.randrange(n))
                       for _ in range(max_triples))
        for a, b, c in triples:
            if sec[a][c] > sec[a][b] + sec[b][c] + tolerance:
                bad.append((a, b, c))
        return bad


@dataclass(frozen=True, slots=True, order=True)
class TimeWindow:
    """Inclusive pickup interval in seconds since midnight."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad window [{self.start}, {self.end}]")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True, slots=True)
class TripRequest:
    """One booked trip: pickup/dropoff locations, party size, broad pickup window."""

    id: int
    pickup: int
    dropoff: int
    passengers: int
    broad_window: TimeWindow
    booking_instant: int = 0

    def __post_init__(self) -> None:
        if self.pickup == self.dropoff:
            raise ValueError(f"trip {self.id}: pickup equals dropoff")
        if self.passengers < 1:
            raise ValueError(f"trip {self.id}: passengers must be positive")


@dataclass(frozen=True, slots=True)
class ProblemConfig:
    """Global solver constants; see module docstring for units."""

    depot: int
    capacity: int = DEFAULT_CAPACITY
    dwell: int = DEFAULT_DWELL
    max_route: int = DEFAULT_MAX_ROUTE
    window_len: int = DEFAULT_WINDOW_LEN
    route_overhead: int = DEFAULT_ROUTE_OVERHEAD
    grid: int = DEFAULT_GRID

    def __post_init__(self) -> None:
        for name in ("dwell", "max_route", "window_len", "grid"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config {name} must be > 0")
        if self.capacity < 1:
            raise ValueError("config capacity must be >= 1")
        if self.route_overhead < 0:
            raise ValueError("config route_overhead must be >= 0")
        if self.window_len % self.grid != 0:
            raise ValueError("grid must divide window_len")


@dataclass(frozen=True, slots=True)
class Stop:
    """A timed visit: the vehicle arrives at `arrival` and dwells there."""

    trip: int
    kind: str  # PICKUP or DROPOFF
    location: int
    arrival: int

    def __post_init__(self) -> None:
        if self.kind not in (PICKUP, DROPOFF):
            raise ValueError(f"bad stop kind {self.kind!r}")
        if self.arrival < 0:
            raise ValueError("negative arrival")


@dataclass(frozen=True, slots=True)
class Route:
    """One vehicle's ordered, timed stop sequence."""

    stops: tuple[Stop, ...]


@dataclass(frozen=True, slots=True)
class Solution:
    """A set of routes; candidate answer to the offline problem."""

    routes: tuple[Route, ...]


@dataclass(frozen=True, slots=True)
class Violation:
    """One broken constraint, named by family."""

    kind: str
    trip: int | None
    route: int | None
    detail: str

    def __post_init__(self) -> None:
        if self.kind not in VIOLATION_KINDS:
            raise ValueError(f"unknown violation kind {self.kind!r}")


def route_bounds(route: Route, cfg: ProblemConfig, m: TravelTimeMatrix) -> tuple[int, int]:
    """Depot departure and return instants implied by the route's stops.

    start = min over stops of (arrival - travel(depot, loc));
    end   = max over stops of (arrival + dwell + travel(loc, depot)).
    Scans every stop rather than trusting endpoints.
    """
    if not route.stops:
        raise EmptyRoute("route has no stops")
    sec = m.seconds
    depot = cfg.depot
    start = min(s.arrival - sec[depot][s.location] for s in route.stops)
    end = max(s.arrival + cfg.dwell + sec[s.location][depot] for s in route.stops)
    return start, end


def route_duration(route: Route, cfg: ProblemConfig, m: TravelTimeMatrix) -> int:
    start, end = route_bounds(route, cfg, m)
    return end - start


def solution_cost(sol: Solution, cfg: ProblemConfig, m: TravelTimeMatrix) -> int:
    """Total duration of all routes plus a fixed per-route overhead."""
    total = 0
    for route in sol.routes:
        total += route_duration(route, cfg, m)
    return total + cfg.route_overhead * len(sol.routes)


def _requests_by_id(requests) -> Mapping[int, TripRequest]:
    if isinstance(requests, Mapping):
        return requests
    return {r.id: r for r in requests}


def occupancy_profile(route: Route, requests) -> list[int]:
    """Passengers on board after each stop; ends at 0 when all pairs complete."""
    by_id = _requests_by_id(requests)
    picked: set[int] = set()
    load = 0
    profile = []
    for stop in route.stops:
        req = by_id.get(stop.trip)
        if req is None:
            raise ValueError(f"stop references unknown trip {stop.trip}")
        if stop.kind == PICKUP:
            picked.add(stop.trip)
            load += req.passengers
        else:
            if stop.trip not in picked:
                raise PairOrder(f"trip {stop.trip}: dropoff before pickup")
            load -= req.passengers
        profile.append(load)
    return profile


def check_feasibility(sol: Solution, requests: Sequence[TripRequest],
                      windows: Sequence[TimeWindow], cfg: ProblemConfig,
                      m: TravelTimeMatrix) -> list[Violation]:
    """All broken constraints of `sol` for the given requests and tight windows.

    windows[i] pairs with requests[i]. Returns an empty list exactly when the
    solution is feasible; infeasibility is a return value, never an exception.
    """
    sec = m.seconds
    by_id = {r.id: r for r in requests}
    w_by_id = {r.id: w for r, w in zip(requests, windows)}
    out: list[Violation] = []

    # Where does each trip's pickup/dropoff occur? (route index, arrival)
    pickups: dict[int, list[tuple[int, int]]] = {r.id: [] for r in requests}
    dropoffs: dict[int, list[tuple[int, int]]] = {r.id: [] for r in requests}
    for ri, route in enumerate(sol.routes):
        for stop in route.stops:
            if stop.trip not in by_id:
                raise ValueError(f"stop references unknown trip {stop.trip}")
            side = pickups if stop.kind == PICKUP else dropoffs
            side[stop.trip].append((ri, stop.arrival))

    for req in requests:
        tid = req.id
        w = w_by_id[tid]
        ps, ds = pickups[tid], dropoffs[tid]
        if not ps and not ds:
            out.append(Violation("unserved-trip", tid, None, "never picked up"))
            continue
        if len(ps) > 1:
            out.append(Violation("duplicate-stop", tid, None,
                                 f"pickup appears {len(ps)} times"))
        if len(ds) > 1:
            out.append(Violation("duplicate-stop", tid, None,
                                 f"dropoff appears {len(ds)} times"))
        if not ps or not ds:
            out.append(Violation("pair-split", tid, (ps or ds)[0][0],
                                 "pickup without dropoff" if ps else "dropoff without pickup"))
        elif any(pr != dr for (pr, _), (dr, _) in zip(ps, ds)):
            out.append(Violation("pair-split", tid, ps[0][0],
                                 "pickup and dropoff on different routes"))
        elif len(ps) == 1 and len(ds) == 1 and ds[0][1] <= ps[0][1]:
            out.append(Violation("pair-split", tid, ps[0][0],
                                 "dropoff does not follow pickup"))
        for ri, t in ps:
            if not w.start <= t <= w.end:
                out.append(Violation("window-miss", tid, ri,
                                     f"pickup at {t} outside [{w.start}, {w.end}]"))
        deadline = w.end + sec[req.pickup][req.dropoff]
        for ri, t in ds:
            if t > deadline:
                out.append(Violation("dropoff-late", tid, ri,
                                     f"dropoff at {t} after deadline {deadline}"))

    for ri, route in enumerate(sol.routes):
        if not route.stops:
            continue
        for a, b in zip(route.stops, route.stops[1:]):
            need = a.arrival + cfg.dwell + sec[a.location][b.location]
            if need > b.arrival:
                out.append(Violation("travel-time", b.trip, ri,
                                     f"needs arrival >= {need}, scheduled {b.arrival}"))
        start, end = route_bounds(route, cfg, m)
        if end - start > cfg.max_route:
            out.append(Violation("duration-exceeded", None, ri,
                                 f"duration {end - start} > {cfg.max_route}"))
        load = 0
        worst = 0
        for stop in route.stops:
            req = by_id[stop.trip]
            load += req.passengers if stop.kind == PICKUP else -req.passengers
            worst = max(worst, load)
        if worst > cfg.capacity:
            out.append(Violation("capacity-exceeded", None, ri,
                                 f"peak occupancy {worst} > {cfg.capacity}"))
    return out


@dataclass(frozen=True)
class Instance:
    """A complete offline problem: geometry, constants, and requests.

    `windows` holds the per-request tight windows when the document pins them
    (None entries fall back to the broad window for offline solving).
    """

    locations: tuple[Location, ...]
    matrix: TravelTimeMatrix
    config: ProblemConfig
    requests: tuple[TripRequest, ...]
    windows: tuple[TimeWindow | None, ...] = ()

    def __post_init__(self) -> None:
        if not self.windows:
            object.__setattr__(self, "windows", (None,) * len(self.requests))
        if len(self.windows) != len(self.requests):
            raise ValueError("windows must pair with requests")

    @cached_property
    def areas(self) -> dict[int, str]:
        return {loc.id: loc.area for loc in self.locations}

    def solve_windows(self) -> list[TimeWindow]:
        """Tight windows for offline solving; broad stands in where unpinned."""
        return [w if w is not None else r.broad_window
                for r, w in zip(self.requests, self.windows)]


def _require_fields(obj: dict, allowed: set[str], required: set[str], what: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise InstanceError(f"{what}: unknown fields {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise InstanceError(f"{what}: missing fields {sorted(missing)}")


def _as_int(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceError(f"{what}: expected integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise InstanceError(f"{what}: expected integer, got {value!r}")
        value = int(value)
    return value


def _window_from_dict(obj, what: str) -> TimeWindow:
    if not isinstance(obj, dict):
        raise InstanceError(f"{what}: expected object with start/end")
    _require_fields(obj, {"start", "end"}, {"start", "end"}, what)
    try:
        return TimeWindow(_as_int(obj["start"], what), _as_int(obj["end"], what))
    except ValueError as exc:
        raise InstanceError(f"{what}: {exc}") from exc


def _matrix_from_dict(obj: dict) -> TravelTimeMatrix:
    _require_fields(obj, {"seconds", "meters"}, {"seconds", "meters"}, "matrix")
    rows_s = tuple(tuple(_as_int(v, "matrix.seconds") for v in row) for row in obj["seconds"])
    rows_m = tuple(tuple(_as_int(v, "matrix.meters") for v in row) for row in obj["meters"])
    try:
        return TravelTimeMatrix(rows_s, rows_m)
    except ValueError as exc:
        raise InstanceError(str(exc)) from exc


def instance_from_dict(doc: dict) -> Instance:
    """Validate and build an Instance from a parsed instance document."""
    _require_fields(doc, {"locations", "matrix", "depot", "config", "requests"},
                    {"locations", "matrix", "depot", "requests"}, "instance")
    locations = []
    seen_loc = set()
    for obj in doc["locations"]:
        _require_fields(obj, {"id", "lat", "lon", "area"},
                        {"id", "lat", "lon", "area"}, "location")
        loc = Location(_as_int(obj["id"], "location.id"),
                       float(obj["lat"]), float(obj["lon"]), str(obj["area"]))
        if loc.id in seen_loc:
            raise InstanceError(f"duplicate location id {loc.id}")
        seen_loc.add(loc.id)
        locations.append(loc)
    matrix = _matrix_from_dict(doc["matrix"])
    n = matrix.size
    if len(locations) != n:
        raise InstanceError(f"{len(locations)} locations but {n}x{n} matrix")
    if set(seen_loc) != set(range(n)):
        raise InstanceError("location ids must be 0..n-1 matching matrix rows")

    cfg_obj = dict(doc.get("config") or {})
    allowed_cfg = {"capacity", "dwell", "max_route", "window_len", "route_overhead", "grid"}
    _require_fields(cfg_obj, allowed_cfg, set(), "config")
    depot = _as_int(doc["depot"], "depot")
    if depot not in seen_loc:
        raise InstanceError(f"depot {depot} is not a location id")
    try:
        cfg = ProblemConfig(depot=depot,
                            **{k: _as_int(v, f"config.{k}") for k, v in cfg_obj.items()})
    except ValueError as exc:
        raise InstanceError(str(exc)) from exc

    requests = []
    windows: list[TimeWindow | None] = []
    seen_req = set()
    for obj in doc["requests"]:
        _require_fields(obj, {"id", "pickup", "dropoff", "passengers",
                              "booking_instant", "broad_window", "window"},
                        {"id", "pickup", "dropoff", "passengers", "broad_window"},
                        "request")
        rid = _as_int(obj["id"], "request.id")
        if rid in seen_req:
            raise InstanceError(f"duplicate request id {rid}")
        seen_req.add(rid)
        broad = _window_from_dict(obj["broad_window"], f"request {rid} broad_window")
        try:
            req = TripRequest(id=rid,
                              pickup=_as_int(obj["pickup"], "request.pickup"),
                              dropoff=_as_int(obj["dropoff"], "request.dropoff"),
                              passengers=_as_int(obj["passengers"], "request.passengers"),
                              broad_window=broad,
                              booking_instant=_as_int(obj.get("booking_instant", 0),
                                                      "request.booking_instant"))
        except ValueError as exc:
            raise InstanceError(str(exc)) from exc
        if req.pickup not in seen_loc or req.dropoff not in seen_loc:
            raise InstanceError(f"request {rid}: unknown pickup or dropoff location")
        if req.passengers > cfg.capacity:
            raise InstanceError(f"request {rid}: {req.passengers} passengers exceed "
                                f"capacity {cfg.capacity}")
        if broad.length < cfg.window_len:
            raise InstanceError(f"request {rid}: broad window shorter than {cfg.window_len}")
        tight = None
        if "window" in obj:
            tight = _window_from_dict(obj["window"], f"request {rid} window")
        requests.append(req)
        windows.append(tight)

    bad = matrix.audit_triangle()
    if bad:
        a, b, c = bad[0]
        raise InstanceError(f"matrix violates the triangle inequality, e.g. via "
                            f"({a}, {b}, {c})")
    return Instance(tuple(locations), matrix, cfg, tuple(requests), tuple(windows))


def load_instance(path: str | Path) -> Instance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InstanceError("instance document must be a JSON object")
    return instance_from_dict(doc)


def instance_to_dict(inst: Instance) -> dict:
    doc = {
        "locations": [{"id": l.id, "lat": l.lat, "lon": l.lon, "area": l.area}
                      for l in inst.locations],
        "matrix": {"seconds": [list(row) for row in inst.matrix.seconds],
                   "meters": [list(row) for row in inst.matrix.meters]},
        "depot": inst.config.depot,
        "config": {"capacity": inst.config.capacity, "dwell": inst.config.dwell,
                   "max_route": inst.config.max_route,
                   "window_len": inst.config.window_len,
                   "route_overhead": inst.config.route_overhead,
                   "grid": inst.config.grid},
        "requests": [],
    }
    for req, w in zip(inst.requests, inst.windows):
        obj = {"id": req.id, "pickup": req.pickup, "dropoff": req.dropoff,
               "passengers": req.passengers, "booking_instant": req.booking_instant,
               "broad_window": {"start": req.broad_window.start,
                                "end": req.broad_window.end}}
        if w is not None:
            obj["window"] = {"start": w.start, "end": w.end}
        doc["requests"].append(obj)
    return doc


def solution_to_dict(sol: Solution, cfg: ProblemConfig, m: TravelTimeMatrix) -> dict:
    """Solution document: timed stops per route plus the total cost."""
    return {
        "cost": solution_cost(sol, cfg, m),
        "routes": [{
            "stops": [{"trip": s.trip, "kind": s.kind, "location": s.location,
                       "arrival": s.arrival} for s in route.stops],
        } for route in sol.routes],
    }


def solution_from_dict(doc: dict) -> Solution:
    routes = []
    for robj in doc["routes"]:
        stops = tuple(Stop(s["trip"], s["kind"], s["location"], s["arrival"])
                      for s in robj["stops"])
        routes.append(Route(stops))
    return Solution(tuple(routes))
