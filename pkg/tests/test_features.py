"""Feature map: demand-table estimation, fit metrics, and composition."""

import datetime as dt
import json
import random

import pytest

from conftest import line_matrix, make_request, make_solution, make_stop
from paraflex.features import (
    FEATURE_NAMES,
    DecisionState,
    DemandModel,
    FeatureVector,
    HistoricalTrip,
    TripNotServed,
    build_demand_model,
    busyness,
    day_class,
    demand_model_from_dict,
    demand_model_to_dict,
    distance_increase,
    expected_remaining,
    feature_vector,
    tightness,
    time_increase,
)
from paraflex.greedy import GreedyParams, greedy_solve
from paraflex.model import (
    DROPOFF,
    PICKUP,
    ProblemConfig,
    Solution,
    TimeWindow,
    route_duration,
)

PARAMS = GreedyParams()

MONDAY = dt.date(2026, 3, 2)


def hist(date=MONDAY, p=(52.50, 13.40), d=(52.52, 13.45), pax=1,
         pickup_time=14 * 3600 + 600, booking_time=None, areas=None):
    pa, da = areas if areas else (None, None)
    return HistoricalTrip(date, p[0], p[1], d[0], d[1], pax, pickup_time,
                          booking_time, pa, da)


def weekdays(n, start=dt.date(2026, 1, 5)):
    """n consecutive weekday dates."""
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def arrivals_model(curves):
    """A demand model with arrival curves only (no busyness history)."""
    return DemandModel(0, 0.0, {}, {}, {}, {}, curves, {},
                       {"kind": "grid", "cell_meters": 2000.0}, {})


# --------------------------------------------------------------- busyness


def test_busyness_empty_model_is_zero():
    dm = DemandModel.empty()
    assert busyness(dm, "A", "B", TimeWindow(50400, 52200)) == (0.0, 0.0, 0.0, 0.0)


def test_busyness_single_trip_worked_example():
    dm = build_demand_model([hist(areas=("A", "B"))])
    w = TimeWindow(14 * 3600, 14 * 3600 + 1800)
    assert busyness(dm, "A", "B", w) == (1.0, 1.0, 1.0, 1.0)
    # one hour later the trip matches nothing, not even the hour bucket
    later = TimeWindow(15 * 3600, 15 * 3600 + 1800)
    assert busyness(dm, "A", "B", later) == (0.0, 0.0, 0.0, 0.0)
    # unknown pickup area degrades gracefully to the wider marginals
    assert busyness(dm, "Z", "B", w) == (0.0, 0.0, 1.0, 1.0)


def test_marginal_dominance_on_synthetic_model():
    rng = random.Random(7)
    dates = [MONDAY + dt.timedelta(days=i) for i in range(14)]
    areas = [f"z{i}" for i in range(6)]
    trips = [hist(date=rng.choice(dates),
                  pickup_time=rng.randrange(6, 20) * 3600 + rng.randrange(3600),
                  booking_time=rng.randrange(8, 18) * 3600 + rng.randrange(3600),
                  areas=(rng.choice(areas), rng.choice(areas)))
             for _ in range(1000)]
    dm = build_demand_model(trips)
    # independent recomputation of every table from the raw rows
    n_days = len({t.date for t in trips})
    joint, pick, drop, hour = {}, {}, {}, {}
    for t in trips:
        h = t.pickup_time // 3600
        for table, key in ((joint, (t.pickup_area, t.dropoff_area, h)),
                           (pick, (t.pickup_area, h)),
                           (drop, (t.dropoff_area, h)), (hour, h)):
            table[key] = table.get(key, 0) + 1
    assert dm.joint == pytest.approx({k: v / n_days for k, v in joint.items()})
    assert dm.by_pickup == pytest.approx({k: v / n_days for k, v in pick.items()})
    assert dm.by_dropoff == pytest.approx({k: v / n_days for k, v in drop.items()})
    assert dm.by_hour == pytest.approx({k: v / n_days for k, v in hour.items()})
    for (pa, da, h) in dm.joint:
        w = TimeWindow(h * 3600, h * 3600 + 1800)
        bn_full, bn_pickup, bn_dropoff, bn_time = busyness(dm, pa, da, w)
        assert bn_full <= bn_pickup <= bn_time
        assert bn_full <= bn_dropoff <= bn_time


# ------------------------------------------------------ expected remaining


def test_expected_remaining_uniform_midday_is_half():
    dm = arrivals_model({"weekday": (100.0 / 24,) * 24})
    assert expected_remaining(dm, "weekday", 43200) == pytest.approx(50.0)
    assert expected_remaining(dm, "weekday", 0) == pytest.approx(100.0)


def test_expected_remaining_past_last_call_is_zero():
    trips = [hist(booking_time=h * 3600 + 120, areas=("A", "B"))
             for h in range(9, 17)]
    dm = build_demand_model(trips)
    assert expected_remaining(dm, "weekday", 17 * 3600) == 0.0
    assert expected_remaining(dm, "weekday", 90000) == 0.0
    assert expected_remaining(dm, "weekday", 9 * 3600) == pytest.approx(8.0)
    # half of hour 9 elapsed: half its rate plus the seven later hours
    assert expected_remaining(dm, "weekday", 9 * 3600 + 1800) == pytest.approx(7.5)


def test_expected_remaining_conditions_on_day_class():
    sat = dt.date(2026, 3, 7)
    trips = [hist(booking_time=10 * 3600, areas=("A", "B")),
             hist(date=sat, booking_time=15 * 3600, areas=("A", "B"))]
    dm = build_demand_model(trips)
    assert expected_remaining(dm, "weekday", 9 * 3600) == 1.0
    assert expected_remaining(dm, "weekend", 9 * 3600) == 1.0
    assert expected_remaining(dm, "weekend", 16 * 3600) == 0.0
    assert expected_remaining(dm, "holiday", 0) == 0.0


def test_expected_remaining_matches_held_out_count():
    def sample_days(seed, n_days):
        rng = random.Random(seed)
        return [(date, sorted(rng.randrange(9 * 3600, 17 * 3600)
                              for _ in range(30)))
                for date in weekdays(n_days)]

    trips = [hist(date=date, booking_time=t, areas=("A", "B"))
             for date, calls in sample_days(1, 300) for t in calls]
    dm = build_demand_model(trips)
    held_out = sample_days(2, 300)
    for clock in (9 * 3600 + 1800, 12 * 3600, 13 * 3600 + 2700, 16 * 3600 + 3540):
        empirical = sum(sum(1 for t in calls if t > clock)
                        for _, calls in held_out) / len(held_out)
        assert abs(expected_remaining(dm, "weekday", clock) - empirical) <= 1.0


def test_day_class_splits_weekend():
    assert day_class(dt.date(2026, 3, 6)) == "weekday"  # Friday
    assert day_class(dt.date(2026, 3, 7)) == "weekend"  # Saturday
    assert day_class(dt.date(2026, 3, 8)) == "weekend"  # Sunday
    assert day_class(MONDAY) == "weekday"


# --------------------------------------------------- time and distance fit


def test_time_increase_identity_and_additivity(cfg, m5):
    base = make_solution([make_stop(1, PICKUP, 1, 30000),
                          make_stop(1, DROPOFF, 2, 30780)])
    assert time_increase(base, base, cfg, m5) == 0
    extra = [make_stop(2, PICKUP, 3, 40000), make_stop(2, DROPOFF, 4, 40780)]
    grown = make_solution(list(base.routes[0].stops), extra)
    added = route_duration(grown.routes[1], cfg, m5)
    assert time_increase(base, grown, cfg, m5) == added
    assert time_increase(grown, base, cfg, m5) == -added


def test_distance_increase_includes_depot_legs(cfg, m5):
    sol = make_solution([make_stop(1, PICKUP, 1, 30000),
                         make_stop(1, DROPOFF, 2, 30780)])
    # depot->1 (5000) + 1->2 (5000) + 2->depot (10000)
    assert distance_increase(Solution(()), sol, cfg, m5) == 20000


def test_increases_match_independent_recomputation(cfg):
    from conftest import random_line_trips

    m = line_matrix(6)
    rng = random.Random(21)
    for _ in range(20):
        requests, windows = random_line_trips(rng, 5, n_locs=6)
        before = greedy_solve(requests[:3], windows[:3], PARAMS, cfg, m)
        after = greedy_solve(requests, windows, PARAMS, cfg, m)

        def total_dist(sol):
            out = 0
            for r in sol.routes:
                legs = [cfg.depot] + [s.location for s in r.stops] + [cfg.depot]
                out += sum(m.meters[a][b] for a, b in zip(legs, legs[1:]))
            return out

        assert time_increase(before, after, cfg, m) == (
            sum(route_duration(r, cfg, m) for r in after.routes)
            - sum(route_duration(r, cfg, m) for r in before.routes))
        assert distance_increase(before, after, cfg, m) == (
            total_dist(after) - total_dist(before))


# ---------------------------------------------------------------- tightness


def chain_route(*pickup_times):
    """Trips 1..k, each pickup at loc 1 and dropoff at loc 2, timed as given."""
    stops = []
    for tid, t in enumerate(pickup_times, start=1):
        stops.append(make_stop(tid, PICKUP, 1, t))
        stops.append(make_stop(tid, DROPOFF, 2, t + 780))
    return make_solution(stops)


def test_tightness_even_gaps_is_zero(cfg, m5):
    # gaps after trip k: next pickup - travel(2,1) - (dropoff + dwell)
    sol = chain_route(10000, 11860, 13720)
    assert tightness(sol, 2, cfg, m5) == 0.0


def test_tightness_one_sided_gap_is_one(cfg, m5):
    sol = chain_route(10000, 12160)  # gap = 12160 - 600 - 10960 = 600
    assert tightness(sol, 2, cfg, m5) == 1.0
    assert tightness(sol, 1, cfg, m5) == 1.0


def test_tightness_uneven_gaps_pin(cfg, m5):
    sol = chain_route(10000, 11860, 14320)  # x = 300, y = 900
    assert tightness(sol, 2, cfg, m5) == pytest.approx(0.5)


def test_tightness_singleton_and_interleaved_are_zero(cfg, m5):
    assert tightness(chain_route(10000), 1, cfg, m5) == 0.0
    interleaved = make_solution([make_stop(1, PICKUP, 1, 10000),
                                 make_stop(2, PICKUP, 1, 10180),
                                 make_stop(1, DROPOFF, 2, 10960),
                                 make_stop(2, DROPOFF, 2, 11140)])
    assert tightness(interleaved, 2, cfg, m5) == 0.0


def test_tightness_unserved_trip_raises(cfg, m5):
    with pytest.raises(TripNotServed) as err:
        tightness(chain_route(10000), 99, cfg, m5)
    assert err.value.trip == 99


# ----------------------------------------------------------- feature vector


def test_feature_vector_cold_start(cfg, m5):
    dm = arrivals_model({"weekday": (2.0,) * 24})
    req = make_request(1, 1, 2, broad=(28800, 39600))
    state = DecisionState((req,), (), Solution(()), {1: "a1", 2: "a2"},
                          day="weekday", booking_clock=6 * 3600)
    w = TimeWindow(30000, 31800)
    plan = greedy_solve([req], [w], PARAMS, cfg, m5)
    f = feature_vector(state, w, plan, dm, cfg, m5)
    assert (f.bn_full, f.bn_pickup, f.bn_dropoff, f.bn_time) == (0, 0, 0, 0)
    assert f.er == pytest.approx(36.0)
    assert f.ti == route_duration(plan.routes[0], cfg, m5)
    assert f.di == 20000
    assert f.ts == 0.0


def test_feature_vector_matches_componentwise_recompute(cfg):
    from conftest import random_line_trips

    m = line_matrix(6)
    rng = random.Random(5)
    areas = {i: f"a{i}" for i in range(6)}
    dates = [MONDAY + dt.timedelta(days=i) for i in range(10)]
    history = [hist(date=rng.choice(dates),
                    pickup_time=rng.randrange(8, 12) * 3600 + rng.randrange(3600),
                    booking_time=rng.randrange(8, 18) * 3600,
                    areas=(f"a{rng.randrange(6)}", f"a{rng.randrange(6)}"))
               for _ in range(200)]
    dm = build_demand_model(history)
    for _ in range(10):
        requests, windows = random_line_trips(rng, 4, n_locs=6)
        routes = greedy_solve(requests[:-1], windows[:-1], PARAMS, cfg, m)
        plan = greedy_solve(requests, windows, PARAMS, cfg, m)
        state = DecisionState(tuple(requests), tuple(windows[:-1]), routes,
                              areas, booking_clock=rng.randrange(86400))
        f = feature_vector(state, windows[-1], plan, dm, cfg, m)
        assert f == feature_vector(state, windows[-1], plan, dm, cfg, m)
        req = requests[-1]
        bn = busyness(dm, areas[req.pickup], areas[req.dropoff], windows[-1])
        assert (f.bn_full, f.bn_pickup, f.bn_dropoff, f.bn_time) == bn
        assert f.er == expected_remaining(dm, "weekday", state.booking_clock)
        assert f.ti == time_increase(routes, plan, cfg, m)
        assert f.di == distance_increase(routes, plan, cfg, m)
        assert f.ts == tightness(plan, req.id, cfg, m)


def test_feature_vector_array_follows_name_order():
    f = FeatureVector(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 0.5)
    assert list(f.as_array()) == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 0.5]
    assert FEATURE_NAMES == ("bn_full", "bn_pickup", "bn_dropoff", "bn_time",
                             "er", "ti", "di", "ts")


def test_feature_vector_rejects_invalid_entries():
    with pytest.raises(ValueError):
        FeatureVector(0, 0, 0, 0, 0, 0, 0, 1.5)
    with pytest.raises(ValueError):
        FeatureVector(2.0, 1.0, 2.0, 2.0, 0, 0, 0, 0.0)  # bn_full > bn_pickup
    with pytest.raises(ValueError):
        FeatureVector(0, 0, 0, 0, float("nan"), 0, 0, 0.0)


def test_decision_state_validates_shape(cfg):
    req = make_request(1, 1, 2)
    with pytest.raises(ValueError):
        DecisionState((), (), Solution(()), {})
    with pytest.raises(ValueError):
        DecisionState((req,), (TimeWindow(0, 1),), Solution(()), {})
    state = DecisionState((req,), (), Solution(()), {})
    assert state.broad == req.broad_window


# ------------------------------------------------------------ serialization


def test_demand_model_round_trips_through_json():
    rng = random.Random(3)
    trips = [hist(date=MONDAY + dt.timedelta(days=rng.randrange(7)),
                  pickup_time=rng.randrange(86400),
                  booking_time=rng.randrange(86400),
                  areas=(f"z{rng.randrange(4)}", f"z{rng.randrange(4)}"))
             for _ in range(100)]
    dm = build_demand_model(trips)
    doc = json.loads(json.dumps(demand_model_to_dict(dm)))
    assert demand_model_from_dict(doc) == dm


def test_demand_model_document_validation():
    doc = demand_model_to_dict(build_demand_model([hist(areas=("A", "B"))]))
    for breakage in ({"format": "something-else"}, {"version": 99}):
        with pytest.raises(ValueError):
            demand_model_from_dict({**doc, **breakage})
    with pytest.raises(ValueError):
        demand_model_from_dict({k: v for k, v in doc.items() if k != "joint"})
    tampered = {**doc, "by_hour": [[h, v * 2] for h, v in doc["by_hour"]]}
    with pytest.raises(ValueError):
        demand_model_from_dict(tampered)
    negative = {**doc, "daily_mean": -1.0}
    with pytest.raises(ValueError):
        demand_model_from_dict(negative)


def test_grid_bucketing_separates_distant_points():
    near = hist(p=(52.500, 13.400), d=(52.5001, 13.4001), pickup_time=3600 * 10)
    far = hist(p=(52.550, 13.400), d=(52.5001, 13.4001), pickup_time=3600 * 10)
    dm = build_demand_model([near, far])
    assert dm.bucketing["kind"] == "grid"
    pickup_areas = {pa for (pa, _, _) in dm.joint}
    assert len(pickup_areas) == 2  # ~5.5 km apart on a 2 km grid
    # both endpoints of `near` fall in one cell at this scale
    (pa, da, _), = [k for k in dm.joint if k[0] == k[1]]
    assert pa == da
    for box in dm.area_boxes.values():
        assert box[0] <= box[2] and box[1] <= box[3]


def test_historical_trip_validation():
    with pytest.raises(ValueError):
        hist(pax=0)
    with pytest.raises(ValueError):
        hist(pickup_time=86400)
    with pytest.raises(ValueError):
        hist(booking_time=-1)
