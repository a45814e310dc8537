"""Decision features: empirical demand tables plus fit metrics for a window.

Eight scalars describe one candidate (window, plan) for a new trip request:
four busyness counts from the demand tables, the expected number of booking
calls still to come, the route-duration and driving-distance increases the
insertion causes, and the imbalance of the idle gaps around the new trip.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from .model import (
    DROPOFF,
    PICKUP,
    ProblemConfig,
    Route,
    Solution,
    TimeWindow,
    TravelTimeMatrix,
    TripRequest,
    route_duration,
)

WEEKDAY = "weekday"
WEEKEND = "weekend"
DAY_CLASSES = (WEEKDAY, WEEKEND)

GRID_CELL_METERS = 2000.0
METERS_PER_DEG_LAT = 111_320.0

DEMAND_MODEL_FORMAT = "paraflex-demand-model"
DEMAND_MODEL_VERSION = 1

FEATURE_NAMES = ("bn_full", "bn_pickup", "bn_dropoff", "bn_time",
                 "er", "ti", "di", "ts")


class TripNotServed(ValueError):
    """A feature was asked about a trip the plan does not serve."""

    def __init__(self, trip: int):
        super().__init__(f"trip {trip} is not served by the plan")
        self.trip = trip


def day_class(date: dt.date) -> str:
    """Two-class day-of-week conditioning of the demand tables."""
    return WEEKEND if date.weekday() >= 5 else WEEKDAY


@dataclass(frozen=True, slots=True)
class HistoricalTrip:
    """One past trip from the agency history used to estimate demand."""

    date: dt.date
    pickup_lat: float
    pickup_lon: float
    dropoff_lat: float
    dropoff_lon: float
    passengers: int
    pickup_time: int  # seconds since midnight
    booking_time: int | None = None
    pickup_area: str | None = None
    dropoff_area: str | None = None

    def __post_init__(self) -> None:
        if self.passengers < 1:
            raise ValueError("passengers must be positive")
        if not 0 <= self.pickup_time < 86400:
            raise ValueError(f"pickup_time {self.pickup_time} outside the day")
        if self.booking_time is not None and not 0 <= self.booking_time < 86400:
            raise ValueError(f"booking_time {self.booking_time} outside the day")


@dataclass(frozen=True)
class DemandModel:
    """Empirical demand: expected daily request counts and booking-call rates.

    Busyness tables hold expected requests per day keyed by area and by the
    hour of the scheduled pickup; each marginal must equal the joint table
    summed over the collapsed axes. `arrivals` maps a day class to 24 hourly
    booking-call rates; `day_totals` keeps the raw per-day request counts the
    daily-count distribution is sampled from; `area_boxes` bounds each area's
    observed coordinates for synthetic sampling.
    """

    n_days: int
    daily_mean: float
    joint: Mapping[tuple[str, str, int], float]
    by_pickup: Mapping[tuple[str, int], float]
    by_dropoff: Mapping[tuple[str, int], float]
    by_hour: Mapping[int, float]
    arrivals: Mapping[str, tuple[float, ...]]
    day_totals: Mapping[str, tuple[int, ...]]
    bucketing: Mapping[str, object]
    area_boxes: Mapping[str, tuple[float, float, float, float]]

    def __post_init__(self) -> None:
        for name in ("joint", "by_pickup", "by_dropoff", "by_hour"):
            if any(v < 0 for v in getattr(self, name).values()):
                raise ValueError(f"demand model: negative count in {name}")
        pick: dict = defaultdict(float)
        drop: dict = defaultdict(float)
        hour: dict = defaultdict(float)
        for (p, d, h), v in self.joint.items():
            pick[(p, h)] += v
            drop[(d, h)] += v
            hour[h] += v
        for table, agg, label in ((self.by_pickup, pick, "pickup"),
                                  (self.by_dropoff, drop, "dropoff"),
                                  (self.by_hour, hour, "hour")):
            if set(table) != set(agg) or not all(
                    math.isclose(table[k], agg[k], rel_tol=1e-9, abs_tol=1e-9)
                    for k in agg):
                raise ValueError(f"demand model: {label} marginal "
                                 "inconsistent with the joint table")
        if not math.isclose(self.daily_mean, sum(self.by_hour.values()),
                            rel_tol=1e-9, abs_tol=1e-9):
            raise ValueError("demand model: daily_mean inconsistent with tables")
        for cls, curve in self.arrivals.items():
            if len(curve) != 24 or any(r < 0 for r in curve):
                raise ValueError(f"demand model: bad arrival curve for {cls!r}")
        if any(c < 0 for counts in self.day_totals.values() for c in counts):
            raise ValueError("demand model: negative day total")

    @classmethod
    def empty(cls) -> "DemandModel":
        return cls(0, 0.0, {}, {}, {}, {}, {}, {},
                   {"kind": "grid", "cell_meters": GRID_CELL_METERS}, {})


def _grid_assigner(trips: Sequence[HistoricalTrip], cell_meters: float):
    """Square-grid area codes over the history's coordinate bounding box."""
    lats = [v for t in trips for v in (t.pickup_lat, t.dropoff_lat)]
    lons = [v for t in trips for v in (t.pickup_lon, t.dropoff_lon)]
    lat0, lon0 = min(lats), min(lons)
    mid = (min(lats) + max(lats)) / 2.0
    m_per_deg_lon = METERS_PER_DEG_LAT * math.cos(math.radians(mid))

    def area_of(lat: float, lon: float) -> str:
        iy = int((lat - lat0) * METERS_PER_DEG_LAT // cell_meters)
        ix = int((lon - lon0) * m_per_deg_lon // cell_meters)
        return f"g:{ix},{iy}"

    bucketing = {"kind": "grid", "cell_meters": cell_meters, "lat0": lat0,
                 "lon0": lon0, "meters_per_deg_lat": METERS_PER_DEG_LAT,
                 "meters_per_deg_lon": m_per_deg_lon}
    return area_of, bucketing


def build_demand_model(trips: Sequence[HistoricalTrip],
                       cell_meters: float = GRID_CELL_METERS) -> DemandModel:
    """Estimate the demand tables from historical trips.

    Areas come from the trips' own codes when every row carries both; else a
    square grid over the coordinate bounding box assigns them. Counts are
    normalized to expected-per-day by the number of distinct history dates.
    """
    if not trips:
        return DemandModel.empty()
    if all(t.pickup_area and t.dropoff_area for t in trips):
        assigned = [(t.pickup_area, t.dropoff_area) for t in trips]
        bucketing: dict = {"kind": "provided"}
    else:
        area_of, bucketing = _grid_assigner(trips, cell_meters)
        assigned = [(area_of(t.pickup_lat, t.pickup_lon),
                     area_of(t.dropoff_lat, t.dropoff_lon)) for t in trips]
    dates = sorted({t.date for t in trips})
    n_days = len(dates)
    class_days = Counter(day_class(d) for d in dates)
    joint: Counter = Counter()
    pick: Counter = Counter()
    drop: Counter = Counter()
    hour: Counter = Counter()
    per_day: Counter = Counter()
    calls = {cls: [0] * 24 for cls in DAY_CLASSES}
    boxes: dict[str, list[float]] = {}

    def stretch(area: str, lat: float, lon: float) -> None:
        box = boxes.setdefault(area, [lat, lon, lat, lon])
        box[0], box[1] = min(box[0], lat), min(box[1], lon)
        box[2], box[3] = max(box[2], lat), max(box[3], lon)

    for t, (pa, da) in zip(trips, assigned):
        h = t.pickup_time // 3600
        joint[(pa, da, h)] += 1
        pick[(pa, h)] += 1
        drop[(da, h)] += 1
        hour[h] += 1
        per_day[t.date] += 1
        stretch(pa, t.pickup_lat, t.pickup_lon)
        stretch(da, t.dropoff_lat, t.dropoff_lon)
        if t.booking_time is not None:
            calls[day_class(t.date)][t.booking_time // 3600] += 1
    return DemandModel(
        n_days=n_days,
        daily_mean=len(trips) / n_days,
        joint={k: v / n_days for k, v in joint.items()},
        by_pickup={k: v / n_days for k, v in pick.items()},
        by_dropoff={k: v / n_days for k, v in drop.items()},
        by_hour={k: v / n_days for k, v in hour.items()},
        arrivals={cls: tuple(v / class_days[cls] for v in calls[cls])
                  for cls in DAY_CLASSES if class_days[cls]},
        day_totals={cls: tuple(per_day[d] for d in dates if day_class(d) == cls)
                    for cls in DAY_CLASSES if class_days[cls]},
        bucketing=bucketing,
        area_boxes={a: tuple(b) for a, b in boxes.items()},
    )


def busyness(dm: DemandModel, pickup_area: str | None, dropoff_area: str | None,
             window: TimeWindow) -> tuple[float, float, float, float]:
    """Expected daily requests matching (pickup, dropoff, hour) plus marginals.

    The hour bucket is the one containing the window start; unknown areas
    count as zero (cold start), never as errors.
    """
    hour = window.start // 3600
    return (dm.joint.get((pickup_area, dropoff_area, hour), 0.0),
            dm.by_pickup.get((pickup_area, hour), 0.0),
            dm.by_dropoff.get((dropoff_area, hour), 0.0),
            dm.by_hour.get(hour, 0.0))


def expected_remaining(dm: DemandModel, day: str, booking_clock: int) -> float:
    """Expected booking calls still to come after `booking_clock` on that day class."""
    curve = dm.arrivals.get(day)
    if curve is None:
        return 0.0
    h = booking_clock // 3600
    if h >= len(curve):
        return 0.0
    frac = (booking_clock - h * 3600) / 3600.0
    return curve[h] * (1.0 - frac) + sum(curve[h + 1:])


def time_increase(before: Solution, after: Solution, cfg: ProblemConfig,
                  m: TravelTimeMatrix) -> int:
    """Total route duration of `after` minus `before`, in seconds."""
    return (sum(route_duration(r, cfg, m) for r in after.routes)
            - sum(route_duration(r, cfg, m) for r in before.routes))


def _route_distance(route: Route, cfg: ProblemConfig, m: TravelTimeMatrix) -> int:
    met = m.meters
    dist = met[cfg.depot][route.stops[0].location]
    for a, b in zip(route.stops, route.stops[1:]):
        dist += met[a.location][b.location]
    return dist + met[route.stops[-1].location][cfg.depot]


def distance_increase(before: Solution, after: Solution, cfg: ProblemConfig,
                      m: TravelTimeMatrix) -> int:
    """Total driving distance of `after` minus `before`, in meters.

    Each route's distance includes the depot departure and return legs,
    mirroring how durations span depot to depot.
    """
    return (sum(_route_distance(r, cfg, m) for r in after.routes)
            - sum(_route_distance(r, cfg, m) for r in before.routes))


def _trip_gap(a: Mapping[str, object], b: Mapping[str, object],
              cfg: ProblemConfig, m: TravelTimeMatrix) -> int:
    """Idle seconds between finishing trip a's dropoff and leaving for b's pickup."""
    done = a[DROPOFF].arrival + cfg.dwell
    leave = b[PICKUP].arrival - m.seconds[a[DROPOFF].location][b[PICKUP].location]
    return max(0, leave - done)


def tightness(after: Solution, trip: int, cfg: ProblemConfig,
              m: TravelTimeMatrix) -> float:
    """Imbalance |x - y| / (x + y) of the idle gaps around the trip; 0 when even.

    x and y are the waiting times between the trip and its neighbors on the
    same route (zero at route ends and for interleaved neighbors); both zero
    maps to 0.
    """
    for route in after.routes:
        if any(s.trip == trip and s.kind == PICKUP for s in route.stops):
            break
    else:
        raise TripNotServed(trip)
    stops: dict[int, dict[str, object]] = {}
    for s in route.stops:
        stops.setdefault(s.trip, {})[s.kind] = s
    order = sorted(stops, key=lambda tid: (stops[tid][PICKUP].arrival, tid))
    i = order.index(trip)
    x = _trip_gap(stops[order[i - 1]], stops[trip], cfg, m) if i > 0 else 0
    y = _trip_gap(stops[trip], stops[order[i + 1]], cfg, m) if i + 1 < len(order) else 0
    return abs(x - y) / (x + y) if x + y else 0.0


@dataclass(frozen=True, slots=True)
class FeatureVector:
    """The eight value-function inputs for one candidate (window, plan)."""

    bn_full: float
    bn_pickup: float
    bn_dropoff: float
    bn_time: float
    er: float
    ti: float  # seconds
    di: float  # meters
    ts: float  # dimensionless, in [0, 1]

    def __post_init__(self) -> None:
        if not all(math.isfinite(getattr(self, f.name)) for f in fields(self)):
            raise ValueError("feature vector has a non-finite entry")
        if not 0.0 <= self.ts <= 1.0:
            raise ValueError(f"ts {self.ts} outside [0, 1]")
        if not (self.bn_full <= self.bn_pickup <= self.bn_time
                and self.bn_full <= self.bn_dropoff <= self.bn_time):
            raise ValueError("busyness marginal dominance violated")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES],
                        dtype=float)


@dataclass(frozen=True, slots=True)
class DecisionState:
    """Everything known when choosing the i-th tight window.

    `requests` holds trips 1..i with the new request last; `windows` the
    i-1 already-confirmed tight windows; `routes` the current best plan for
    trips 1..i-1; `areas` maps location ids to area codes.
    """

    requests: tuple[TripRequest, ...]
    windows: tuple[TimeWindow, ...]
    routes: Solution
    areas: Mapping[int, str]
    day: str = WEEKDAY
    booking_clock: int = 0

    def __post_init__(self) -> None:
        if not self.requests:
            raise ValueError("state needs the incoming request")
        if len(self.windows) != len(self.requests) - 1:
            raise ValueError("windows must cover all but the new request")
        if self.booking_clock < 0:
            raise ValueError("negative booking clock")

    @property
    def broad(self) -> TimeWindow:
        return self.requests[-1].broad_window


def feature_vector(state: DecisionState, window: TimeWindow, plan: Solution,
                   dm: DemandModel, cfg: ProblemConfig,
                   m: TravelTimeMatrix) -> FeatureVector:
    """Assemble all eight features for the action (window, plan)."""
    req = state.requests[-1]
    bn_full, bn_pickup, bn_dropoff, bn_time = busyness(
        dm, state.areas.get(req.pickup), state.areas.get(req.dropoff), window)
    return FeatureVector(
        bn_full=bn_full, bn_pickup=bn_pickup, bn_dropoff=bn_dropoff,
        bn_time=bn_time,
        er=expected_remaining(dm, state.day, state.booking_clock),
        ti=float(time_increase(state.routes, plan, cfg, m)),
        di=float(distance_increase(state.routes, plan, cfg, m)),
        ts=tightness(plan, req.id, cfg, m),
    )


def demand_model_to_dict(dm: DemandModel) -> dict:
    """Plain-JSON document for a demand model; inverse of demand_model_from_dict."""
    return {
        "format": DEMAND_MODEL_FORMAT,
        "version": DEMAND_MODEL_VERSION,
        "bucketing": dict(dm.bucketing),
        "n_days": dm.n_days,
        "daily_mean": dm.daily_mean,
        "joint": [[p, d, h, v] for (p, d, h), v in sorted(dm.joint.items())],
        "by_pickup": [[a, h, v] for (a, h), v in sorted(dm.by_pickup.items())],
        "by_dropoff": [[a, h, v] for (a, h), v in sorted(dm.by_dropoff.items())],
        "by_hour": [[h, v] for h, v in sorted(dm.by_hour.items())],
        "arrivals": {cls: list(curve) for cls, curve in sorted(dm.arrivals.items())},
        "day_totals": {cls: list(v) for cls, v in sorted(dm.day_totals.items())},
        "area_boxes": {a: list(box) for a, box in sorted(dm.area_boxes.items())},
    }


def demand_model_from_dict(obj: dict) -> DemandModel:
    """Parse and validate a demand-model document."""
    if not isinstance(obj, dict) or obj.get("format") != DEMAND_MODEL_FORMAT:
        raise ValueError("not a demand-model document")
    if obj.get("version") != DEMAND_MODEL_VERSION:
        raise ValueError(f"unsupported demand-model version {obj.get('version')!r}")
    required = {"bucketing", "n_days", "daily_mean", "joint", "by_pickup",
                "by_dropoff", "by_hour", "arrivals", "day_totals", "area_boxes"}
    missing = required - obj.keys()
    if missing:
        raise ValueError(f"demand-model document missing {sorted(missing)}")
    return DemandModel(
        n_days=int(obj["n_days"]),
        daily_mean=float(obj["daily_mean"]),
        joint={(p, d, int(h)): float(v) for p, d, h, v in obj["joint"]},
        by_pickup={(a, int(h)): float(v) for a, h, v in obj["by_pickup"]},
        by_dropoff={(a, int(h)): float(v) for a, h, v in obj["by_dropoff"]},
        by_hour={int(h): float(v) for h, v in obj["by_hour"]},
        arrivals={cls: tuple(float(r) for r in curve)
                  for cls, curve in obj["arrivals"].items()},
        day_totals={cls: tuple(int(c) for c in counts)
                    for cls, counts in obj["day_totals"].items()},
        bucketing=dict(obj["bucketing"]),
        area_boxes={a: tuple(float(v) for v in box)
                    for a, box in obj["area_boxes"].items()},
    )


def load_demand_model(path: str) -> DemandModel:
    with open(path, encoding="utf-8") as fh:
        return demand_model_from_dict(json.load(fh))
