"""Shared test helpers: small deterministic geometries and request factories."""

from __future__ import annotations

import pytest

from paraflex.model import (
    Instance,
    Location,
    ProblemConfig,
    Route,
    Solution,
    Stop,
    TimeWindow,
    TravelTimeMatrix,
    TripRequest,
)


def line_matrix(n: int, step: int = 600, meter_step: int = 5000) -> TravelTimeMatrix:
    """Locations on a line: travel(a, b) = step * |a - b|. Triangle holds with equality."""
    seconds = tuple(tuple(step * abs(a - b) for b in range(n)) for a in range(n))
    meters = tuple(tuple(meter_step * abs(a - b) for b in range(n)) for a in range(n))
    return TravelTimeMatrix(seconds, meters)


def line_locations(n: int) -> tuple[Location, ...]:
    return tuple(Location(i, 52.0 + 0.01 * i, 13.0, f"a{i}") for i in range(n))


def make_request(rid: int, pickup: int, dropoff: int, passengers: int = 1,
                 broad: tuple[int, int] = (28800, 39600), booked: int = 0) -> TripRequest:
    return TripRequest(id=rid, pickup=pickup, dropoff=dropoff, passengers=passengers,
                       broad_window=TimeWindow(*broad), booking_instant=booked)


def make_stop(trip: int, kind: str, location: int, arrival: int) -> Stop:
    return Stop(trip=trip, kind=kind, location=location, arrival=arrival)


def make_solution(*routes: list[Stop]) -> Solution:
    return Solution(tuple(Route(tuple(stops)) for stops in routes))


@pytest.fixture
def cfg() -> ProblemConfig:
    return ProblemConfig(depot=0)


@pytest.fixture
def m5() -> TravelTimeMatrix:
    return line_matrix(5)


def line_instance(n_locs: int, requests, windows=None,
                  cfg: ProblemConfig | None = None) -> Instance:
    cfg = cfg or ProblemConfig(depot=0)
    return Instance(line_locations(n_locs), line_matrix(n_locs), cfg,
                    tuple(requests), tuple(windows or ()))


def random_line_trips(rng, n_trips: int, n_locs: int = 8,
                      span: tuple[int, int] = (28800, 39600),
                      window_len: int = 1800, max_pax: int = 3):
    """Random requests with tight windows on a line geometry.

    Every trip fits a fresh route on its own (window_len >= dwell), so
    instances are always serviceable. Returns (requests, windows).
    """
    requests, windows = [], []
    for rid in range(1, n_trips + 1):
        pickup = rng.randrange(n_locs)
        dropoff = rng.randrange(n_locs - 1)
        if dropoff >= pickup:
            dropoff += 1
        w_start = rng.randrange(span[0], span[1] - window_len)
        w = TimeWindow(w_start, w_start + window_len)
        broad = TimeWindow(max(0, w_start - 3600), w_start + window_len + 3600)
        requests.append(TripRequest(id=rid, pickup=pickup, dropoff=dropoff,
                                    passengers=rng.randint(1, max_pax),
                                    broad_window=broad))
        windows.append(w)
    return requests, windows
