"""Booking-day simulation: ingestion, day sampling, episodes, evaluation.

A booking day is replayed as a sequence of decisions: for each request the
policy picks a tight window and an insertion plan, then the anytime solver
improves the plan until the next booking call arrives. Day instances are
sampled from a fitted demand model; travel times for synthetic geometry are
great-circle distances at a fixed urban speed, rounded up to whole seconds
(which preserves the triangle inequality).

History CSV columns: date, pickup_lat, pickup_lon, dropoff_lat, dropoff_lon,
passengers, pickup_time, and optionally booking_time, pickup_area,
dropoff_area. Times are HH:MM or HH:MM:SS. Rows with empty coordinates are
skipped with a diagnostic; anything else malformed aborts with ParseError.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import random
import statistics
from bisect import bisect_right
from dataclasses import dataclass, replace
from functools import cached_property
from itertools import accumulate
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .features import (
    DecisionState,
    DemandModel,
    HistoricalTrip,
    feature_vector,
)
from .greedy import GreedyParams
from .model import (
    Instance,
    Location,
    ProblemConfig,
    Solution,
    TimeWindow,
    TravelTimeMatrix,
    TripRequest,
    solution_cost,
)
from .policy import (
    Experience,
    ValueNet,
    decide,
    plan_for_window,
    shaped_cost,
    state_runs,
)
from .simanneal import SaParams, anneal, anneal_plus_greedy

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_SPEED_KMPH = 30.0
ITERS_PER_SECOND = 30.0
BUDGET_CAP_ITERS = 9000
DEPOT_AREA = "depot"

# Fallback booking-call masses (period start, period end, mass) for histories
# without booking times: calls land in the morning, early afternoon, and late
# afternoon with decreasing weight. Overridable wherever it is consumed.
BOOKING_CURVE = (
    (9 * 3600, 12 * 3600, 0.40),
    (12 * 3600, 15 * 3600, 0.35),
    (15 * 3600, 17 * 3600, 0.25),
)

REQUIRED_COLUMNS = ("date", "pickup_lat", "pickup_lon", "dropoff_lat",
                    "dropoff_lon", "passengers", "pickup_time")
OPTIONAL_COLUMNS = ("booking_time", "pickup_area", "dropoff_area")
RESULT_COLUMNS = ("day", "arm", "cost", "routes", "decisions")
ARM_NAMES = ("a", "b", "c", "d")

PolicyFn = Callable[[DecisionState], tuple[TimeWindow, Solution]]


class ParseError(ValueError):
    """A history CSV row could not be parsed; carries the 1-based line."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# -------------------------------------------------------------- ingestion


@dataclass(frozen=True, slots=True)
class HistoryTable:
    """Validated historical trips plus diagnostics for skipped rows."""

    trips: tuple[HistoricalTrip, ...]
    diagnostics: tuple[str, ...]


def _parse_clock(text: str, line: int, what: str) -> int:
    parts = text.split(":")
    if len(parts) not in (2, 3) or not all(p.isdigit() for p in parts):
        raise ParseError(line, f"{what} {text!r} is not HH:MM[:SS]")
    h, mnt = int(parts[0]), int(parts[1])
    sec = int(parts[2]) if len(parts) == 3 else 0
    clock = h * 3600 + mnt * 60 + sec
    if mnt > 59 or sec > 59 or not 0 <= clock < 86400:
        raise ParseError(line, f"{what} {text!r} outside the day")
    return clock


def ingest_history(path: str | Path) -> HistoryTable:
    """Read a history CSV into validated trips, skipping coordinate-less rows."""
    trips: list[HistoricalTrip] = []
    diagnostics: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ParseError(1, f"missing required columns {missing}")
        for row in reader:
            line = reader.line_num
            if None in row or any(row.get(c) is None for c in REQUIRED_COLUMNS):
                raise ParseError(line, "wrong number of fields")
            coords = {}
            blank = [c for c in ("pickup_lat", "pickup_lon", "dropoff_lat",
                                 "dropoff_lon") if not row[c].strip()]
            if blank:
                diagnostics.append(f"line {line}: missing {', '.join(blank)}")
                continue
            try:
                for c in ("pickup_lat", "pickup_lon", "dropoff_lat",
                          "dropoff_lon"):
                    coords[c] = float(row[c])
            except ValueError:
                raise ParseError(line, "coordinate is not a number") from None
            try:
                date = dt.date.fromisoformat(row["date"].strip())
            except ValueError:
                raise ParseError(
                    line, f"date {row['date']!r} is not YYYY-MM-DD") from None
            if not row["passengers"].strip().isdigit():
                raise ParseError(
                    line, f"passengers {row['passengers']!r} is not a count")
            booking_raw = (row.get("booking_time") or "").strip()
            try:
                trips.append(HistoricalTrip(
                    date=date,
                    pickup_lat=coords["pickup_lat"],
                    pickup_lon=coords["pickup_lon"],
                    dropoff_lat=coords["dropoff_lat"],
                    dropoff_lon=coords["dropoff_lon"],
                    passengers=int(row["passengers"]),
                    pickup_time=_parse_clock(row["pickup_time"].strip(), line,
                                             "pickup_time"),
                    booking_time=(_parse_clock(booking_raw, line,
                                               "booking_time")
                                  if booking_raw else None),
                    pickup_area=(row.get("pickup_area") or "").strip() or None,
                    dropoff_area=(row.get("dropoff_area") or "").strip() or None,
                ))
            except ValueError as err:
                if isinstance(err, ParseError):
                    raise
                raise ParseError(line, str(err)) from None
    return HistoryTable(tuple(trips), tuple(diagnostics))


def synthesize_booking_times(
        trips: Sequence[HistoricalTrip], rng: random.Random,
        curve: Sequence[tuple[int, int, float]] = BOOKING_CURVE,
) -> list[HistoricalTrip]:
    """Fill in missing booking times by drawing from the call-mass curve."""
    cum = list(accumulate(mass for _, _, mass in curve))
    out = []
    for trip in trips:
        if trip.booking_time is not None:
            out.append(trip)
            continue
        pick = min(bisect_right(cum, rng.random() * cum[-1]), len(curve) - 1)
        lo, hi, _ = curve[pick]
        out.append(replace(trip, booking_time=lo + rng.randrange(hi - lo)))
    return out


# ------------------------------------------------------ synthetic geometry


def great_circle_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters on a spherical earth."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


def travel_matrix(points: Sequence[tuple[float, float]],
                  speed_kmph: float = DEFAULT_SPEED_KMPH) -> TravelTimeMatrix:
    """Great-circle travel times at a fixed speed, rounded up to whole units."""
    n = len(points)
    seconds = [[0] * n for _ in range(n)]
    meters = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = great_circle_m(*points[i], *points[j])
            meters[i][j] = meters[j][i] = math.ceil(d)
            seconds[i][j] = seconds[j][i] = math.ceil(d * 3.6 / speed_kmph)
    return TravelTimeMatrix(tuple(tuple(r) for r in seconds),
                            tuple(tuple(r) for r in meters))


@dataclass(frozen=True, slots=True)
class GenConfig:
    """Knobs for sampling synthetic booking days from a demand model."""

    broad_len: int = 10800
    speed_kmph: float = DEFAULT_SPEED_KMPH
    day_start: int = 0
    day_end: int = 86400
    pax_weights: tuple[float, ...] = (0.75, 0.20, 0.05)
    depot: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.broad_len <= 0 or self.speed_kmph <= 0:
            raise ValueError("broad_len and speed_kmph must be positive")
        if self.day_end - self.day_start < self.broad_len:
            raise ValueError("service day shorter than the broad window")
        if not self.pax_weights or any(w < 0 for w in self.pax_weights) \
                or sum(self.pax_weights) <= 0:
            raise ValueError("pax_weights must be nonneg with positive sum")


@dataclass(frozen=True)
class DayInstance:
    """One sampled booking day: requests in call order plus shared geometry."""

    requests: tuple[TripRequest, ...]
    broads: tuple[TimeWindow, ...]
    locations: tuple[Location, ...]
    matrix: TravelTimeMatrix
    day_class: str

    def __post_init__(self) -> None:
        if len(self.broads) != len(self.requests):
            raise ValueError("broad windows must pair with requests")
        lengths = {w.length for w in self.broads}
        if len(lengths) > 1:
            raise ValueError("broad windows must share one length")
        instants = [r.booking_instant for r in self.requests]
        if any(a > b for a, b in zip(instants, instants[1:])):
            raise ValueError("booking instants must be non-decreasing")
        for r, w in zip(self.requests, self.broads):
            if r.broad_window != w:
                raise ValueError(f"trip {r.id}: broad window mismatch")

    @cached_property
    def areas(self) -> dict[int, str]:
        return {loc.id: loc.area for loc in self.locations}


class _Cumulative:
    """Weighted choice over a fixed key order via a cumulative-sum table."""

    def __init__(self, items: Iterable[tuple[object, float]]):
        pairs = [(k, w) for k, w in items if w > 0]
        if not pairs:
            raise ValueError("no positive weights to sample from")
        self.keys = [k for k, _ in pairs]
        self.cum = list(accumulate(w for _, w in pairs))

    def draw(self, rng: random.Random):
        x = rng.random() * self.cum[-1]
        return self.keys[min(bisect_right(self.cum, x), len(self.keys) - 1)]


def _call_curve(dm: DemandModel, cls: str) -> tuple[float, ...]:
    """Hourly booking-call rates for a day class, with the mass fallback."""
    curve = dm.arrivals.get(cls, ())
    if sum(curve) > 0:
        return tuple(curve)
    hourly = [0.0] * 24
    for lo, hi, mass in BOOKING_CURVE:
        span = (hi - lo) // 3600
        for h in range(lo // 3600, hi // 3600):
            hourly[h] = mass / span
    return tuple(hourly)


def sample_day(dm: DemandModel, gen: GenConfig, rng: random.Random) -> DayInstance:
    """Draw one synthetic booking day from the fitted demand tables."""
    if not dm.day_totals or not dm.joint or not dm.area_boxes:
        raise ValueError("demand model lacks day totals, joint table, or boxes")
    classes = sorted(dm.day_totals)
    cls = _Cumulative((c, float(len(dm.day_totals[c]))) for c in classes).draw(rng)
    totals = dm.day_totals[cls]
    n = totals[rng.randrange(len(totals))]
    call_hours = _Cumulative(enumerate(_call_curve(dm, cls)))
    instants = sorted(call_hours.draw(rng) * 3600 + rng.randrange(3600)
                      for _ in range(n))
    triples = _Cumulative(sorted(dm.joint.items()))
    pax = _Cumulative((k + 1, w) for k, w in enumerate(gen.pax_weights))

    def point_in(area: str) -> tuple[float, float]:
        lo_lat, lo_lon, hi_lat, hi_lon = dm.area_boxes[area]
        return (lo_lat + rng.random() * (hi_lat - lo_lat),
                lo_lon + rng.random() * (hi_lon - lo_lon))

    if gen.depot is not None:
        depot_pt = gen.depot
    else:
        centers = [((b[0] + b[2]) / 2, (b[1] + b[3]) / 2)
                   for _, b in sorted(dm.area_boxes.items())]
        depot_pt = (statistics.fmean(c[0] for c in centers),
                    statistics.fmean(c[1] for c in centers))

    locations = [Location(0, depot_pt[0], depot_pt[1], DEPOT_AREA)]
    requests = []
    for k, instant in enumerate(instants, start=1):
        pa, da, hour = triples.draw(rng)
        p_lat, p_lon = point_in(pa)
        d_lat, d_lon = point_in(da)
        desired = hour * 3600 + rng.randrange(3600)
        start = max(gen.day_start,
                    min(desired - gen.broad_len // 2, gen.day_end - gen.broad_len))
        locations.append(Location(2 * k - 1, p_lat, p_lon, pa))
        locations.append(Location(2 * k, d_lat, d_lon, da))
        requests.append(TripRequest(
            id=k, pickup=2 * k - 1, dropoff=2 * k, passengers=pax.draw(rng),
            broad_window=TimeWindow(start, start + gen.broad_len),
            booking_instant=instant))
    matrix = travel_matrix([(loc.lat, loc.lon) for loc in locations],
                           gen.speed_kmph)
    return DayInstance(tuple(requests), tuple(r.broad_window for r in requests),
                       tuple(locations), matrix, cls)


def day_to_instance(day: DayInstance, cfg: ProblemConfig) -> Instance:
    """Repackage a sampled day as an offline problem instance."""
    return Instance(day.locations, day.matrix, cfg, day.requests)


# ---------------------------------------------------------------- episodes


def iteration_budget(dm: DemandModel, cls: str, clock: int, rng: random.Random,
                     scale: float = 1.0) -> int:
    """Solver iterations until the next booking call arrives.

    The inter-arrival gap is exponential with mean matched to the hourly
    call rate at `clock`, converted at 30 iterations/second and capped; a
    quiet or unknown hour grants the full cap. `scale` shrinks budgets
    proportionally for fast simulation runs.
    """
    curve = dm.arrivals.get(cls, ())
    h = clock // 3600
    rate = curve[h] if 0 <= h < len(curve) else 0.0
    raw = float(BUDGET_CAP_ITERS)
    if rate > 0:
        gap = rng.expovariate(rate / 3600.0)
        raw = min(raw, gap * ITERS_PER_SECOND)
    return round(raw * scale)


@dataclass(frozen=True, slots=True)
class DecisionRecord:
    """One decision in an episode trace; shaped is None unless collecting."""

    request_id: int
    booking_clock: int
    window: TimeWindow
    candidates: int
    shaped: float | None
    iterations: int


@dataclass(frozen=True, slots=True)
class EpisodeTrace:
    """Per-decision records plus the final solution of one booking day."""

    records: tuple[DecisionRecord, ...]
    windows: tuple[TimeWindow, ...]
    solution: Solution
    cost: int
    experiences: tuple[Experience, ...] = ()

    def __post_init__(self) -> None:
        if len(self.records) != len(self.windows):
            raise ValueError("one record per decided window required")


def naive_policy(state: DecisionState, cfg: ProblemConfig, gp: GreedyParams,
                 m: TravelTimeMatrix) -> tuple[TimeWindow, Solution]:
    """Middle of the broad window, snapped to its start-anchored grid."""
    broad = state.broad
    raw = (broad.start + broad.end) // 2 - cfg.window_len // 2
    snapped = broad.start + round((raw - broad.start) / cfg.grid) * cfg.grid
    start = max(broad.start, min(snapped, broad.end - cfg.window_len))
    window = TimeWindow(start, start + cfg.window_len)
    runs = state_runs(state, cfg, m)
    return window, plan_for_window(state, runs, window, cfg, gp, m)


def learned_policy(net: ValueNet, dm: DemandModel, cfg: ProblemConfig,
                   gp: GreedyParams, m: TravelTimeMatrix) -> PolicyFn:
    """Wrap the argmin-q decision rule as an episode policy."""
    def fn(state: DecisionState) -> tuple[TimeWindow, Solution]:
        d = decide(net, state, dm, cfg, gp, m)
        return d.window, d.plan
    return fn


def run_episode(day: DayInstance, policy: PolicyFn, cfg: ProblemConfig,
                gp: GreedyParams, sa: SaParams, dm: DemandModel, *,
                anytime: bool = True, collect: bool = False,
                rng: random.Random | None = None,
                budget_scale: float = 1.0) -> EpisodeTrace:
    """Replay one booking day: decide, then anneal until the next call.

    With `anytime` off the plan carries over unimproved between calls. With
    `collect` on, each decision also yields a training Experience and records
    its shaped cost, the greedy estimate that telescopes over the day to
    greedy(T, tight) - greedy(T, broad); it needs two full greedy solves per
    decision, so plain evaluation runs skip it and record None.
    """
    rng = rng if rng is not None else random.Random(0)
    routes = Solution(())
    tights: list[TimeWindow] = []
    records = []
    experiences = []
    n_slots = (day.broads[0].length - cfg.window_len) // cfg.grid + 1 \
        if day.broads else 0
    for i, req in enumerate(day.requests, start=1):
        state = DecisionState(day.requests[:i], tuple(tights), routes,
                              day.areas, day=day.day_class,
                              booking_clock=req.booking_instant)
        window, plan = policy(state)
        tights.append(window)
        shaped = None
        if collect:
            shaped = float(shaped_cost(day.requests, day.broads, tights, i,
                                       gp, cfg, day.matrix))
            experiences.append(Experience(
                feature_vector(state, window, plan, dm, cfg, day.matrix),
                shaped))
        iters = 0
        routes = plan
        if anytime:
            iters = iteration_budget(dm, day.day_class, req.booking_instant,
                                     rng, scale=budget_scale)
            run_sa = replace(sa, budget_iters=iters, budget_seconds=None,
                             rng_seed=rng.randrange(2 ** 32))
            routes = anneal(plan, day.requests[:i], tights, run_sa, gp, cfg,
                            day.matrix)
        records.append(DecisionRecord(req.id, req.booking_instant, window,
                                      n_slots, shaped, iters))
    return EpisodeTrace(tuple(records), tuple(tights), routes,
                        solution_cost(routes, cfg, day.matrix),
                        tuple(experiences))


# -------------------------------------------------------------- evaluation


@dataclass(frozen=True, slots=True)
class ArmResult:
    """Final offline cost of one strategy arm on one day."""

    day: int
    arm: str
    cost: int
    routes: int
    decisions: int


def _evaluate_arm(day: DayInstance, day_id: int, arm: str, net: ValueNet | None,
                  dm: DemandModel, cfg: ProblemConfig, gp: GreedyParams,
                  sa: SaParams, rng: random.Random,
                  budget_scale: float) -> ArmResult:
    naive = lambda state: naive_policy(state, cfg, gp, day.matrix)
    if arm in ("a", "b"):
        if net is None:
            raise ValueError(f"arm {arm!r} needs a value net")
        policy = learned_policy(net, dm, cfg, gp, day.matrix)
        trace = run_episode(day, policy, cfg, gp, sa, dm, anytime=(arm == "a"),
                            rng=rng, budget_scale=budget_scale)
        final, cost = trace.solution, trace.cost
    elif arm == "c":
        trace = run_episode(day, naive, cfg, gp, sa, dm, anytime=False, rng=rng)
        total = sum(iteration_budget(dm, day.day_class, r.booking_instant, rng,
                                     scale=budget_scale)
                    for r in day.requests)
        offline = replace(sa, budget_iters=total, budget_seconds=None,
                          rng_seed=rng.randrange(2 ** 32))
        final = anneal_plus_greedy(day.requests, trace.windows, trace.solution,
                                   offline, gp, cfg, day.matrix)
        cost = solution_cost(final, cfg, day.matrix)
    elif arm == "d":
        trace = run_episode(day, naive, cfg, gp, sa, dm, anytime=False, rng=rng)
        final, cost = trace.solution, trace.cost
    else:
        raise ValueError(f"unknown arm {arm!r}")
    return ArmResult(day_id, arm, cost, len(final.routes), len(day.requests))


def evaluate(days: Sequence[DayInstance], arms: Sequence[str],
             net: ValueNet | None, dm: DemandModel, cfg: ProblemConfig,
             gp: GreedyParams, sa: SaParams, *, seed: int = 0,
             budget_scale: float = 1.0) -> list[ArmResult]:
    """Final offline cost per (day, arm) for the four comparison strategies.

    Arms: (a) learned windows with anytime improvement, (b) learned windows
    without it, (c) naive middle windows solved offline with the same total
    iteration budget, (d) naive middle windows with greedy insertion only.
    """
    if not days:
        raise ValueError("need at least one day to evaluate")
    if not arms:
        raise ValueError("need at least one arm")
    for arm in arms:
        if arm not in ARM_NAMES:
            raise ValueError(f"unknown arm {arm!r}")
    results = []
    for day_id, day in enumerate(days):
        for arm in arms:
            rng = random.Random(f"{seed}:{day_id}:{arm}")
            results.append(_evaluate_arm(day, day_id, arm, net, dm, cfg, gp,
                                         sa, rng, budget_scale))
    return results


def percent_reduction(results: Sequence[ArmResult], base: str,
                      improved: str) -> list[float]:
    """Per-day percent cost reduction of `improved` relative to `base`."""
    costs = {(r.day, r.arm): r.cost for r in results}
    out = []
    for day in sorted({r.day for r in results}):
        b = costs[(day, base)]
        out.append(100.0 * (b - costs[(day, improved)]) / b)
    return out


def quartiles(values: Sequence[float]) -> tuple[float, float, float]:
    """(lower quartile, median, upper quartile) of a nonempty sample."""
    if not values:
        raise ValueError("no values")
    if len(values) == 1:
        return (values[0],) * 3
    q1, med, q3 = statistics.quantiles(values, n=4, method="inclusive")
    return q1, med, q3


def write_results_csv(path: str | Path, results: Sequence[ArmResult]) -> None:
    """Write evaluation rows as CSV with the documented column order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in results:
            writer.writerow([r.day, r.arm, r.cost, r.routes, r.decisions])
