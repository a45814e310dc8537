"""Greedy insertion solver: reachability-pruned placement search, duration-
minimal retiming, and route-by-route construction.

Solver-internal routes are `Run` objects: tuples of nodes (trip, kind,
location, window bounds, passenger delta) plus arrival times chosen to make
the route as short as possible for its stop order. Conversions to the public
Route/Solution types happen at the API edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .model import (
    DROPOFF,
    PICKUP,
    ProblemConfig,
    Route,
    Solution,
    Stop,
    TimeWindow,
    TravelTimeMatrix,
    TripRequest,
)

INFEASIBLE = math.inf

# Node layout: (trip id, kind, location, earliest, latest, passenger delta)
N_TRIP, N_KIND, N_LOC, N_LB, N_UB, N_DELTA = range(6)
K_PICKUP, K_DROPOFF = 0, 1


class Unserviceable(ValueError):
    """A request cannot be served even by a fresh empty route."""

    def __init__(self, trip: int):
        super().__init__(f"trip {trip} cannot be served by any route")
        self.trip = trip


@dataclass(frozen=True, slots=True)
class GreedyParams:
    """Weights of the insertion cost and admission threshold."""

    p_wait: float = 0.1
    p_ratio_cost: float = 0.1
    p_length: float = 10.0
    p_ratio_thres: float = 0.1
    p_const: float = 0.1

    def __post_init__(self) -> None:
        for name in ("p_wait", "p_ratio_cost", "p_length", "p_ratio_thres", "p_const"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True, slots=True)
class PlanTrip:
    """A request bound to its tight pickup window and derived dropoff window."""

    id: int
    pickup: int
    dropoff: int
    passengers: int
    w_start: int
    w_end: int
    dw_start: int
    dw_end: int

    @classmethod
    def bind(cls, req: TripRequest, w: TimeWindow, m: TravelTimeMatrix) -> "PlanTrip":
        direct = m.seconds[req.pickup][req.dropoff]
        return cls(req.id, req.pickup, req.dropoff, req.passengers,
                   w.start, w.end, w.start + direct, w.end + direct)

    def pickup_node(self) -> tuple:
        return (self.id, K_PICKUP, self.pickup, self.w_start, self.w_end,
                self.passengers)

    def dropoff_node(self) -> tuple:
        return (self.id, K_DROPOFF, self.dropoff, self.dw_start, self.dw_end,
                -self.passengers)


def bind_trips(requests: Sequence[TripRequest], windows: Sequence[TimeWindow],
               m: TravelTimeMatrix) -> list[PlanTrip]:
    if len(requests) != len(windows):
        raise ValueError(f"{len(requests)} requests but {len(windows)} windows")
    return [PlanTrip.bind(req, w, m) for req, w in zip(requests, windows)]


class Run:
    """One vehicle's node sequence with arrival times and depot bounds."""

    __slots__ = ("nodes", "times", "start", "end")

    def __init__(self, nodes: tuple, times: tuple, start: int, end: int):
        self.nodes = nodes
        self.times = times
        self.start = start
        self.end = end

    @property
    def duration(self) -> int:
        return self.end - self.start

    def trip_ids(self) -> list[int]:
        return [n[N_TRIP] for n in self.nodes if n[N_KIND] == K_PICKUP]

    def __repr__(self) -> str:
        stops = ",".join(f"{n[N_TRIP]}{'P' if n[N_KIND] == K_PICKUP else 'D'}@{t}"
                         for n, t in zip(self.nodes, self.times))
        return f"Run[{stops}]"


EMPTY_RUN = Run((), (), 0, 0)


def _schedule_times(nodes: tuple, cfg: ProblemConfig, m: TravelTimeMatrix) -> list[int] | None:
    """Duration-minimal arrivals for a fixed stop order, or None if infeasible.

    The first arrival t1 parametrizes the whole schedule (later stops follow
    at max(window start, previous + dwell + travel)). The route end stays flat
    in t1 while window-anchored stops dominate and then grows one-for-one,
    whereas the route start only grows, so the duration is unimodal in t1;
    the minimum sits where the no-wait chain from t1 catches up with the
    anchored end, clamped into the feasible first-arrival interval.
    """
    if not nodes:
        return []
    sec = m.seconds
    dwell = cfg.dwell
    depot = cfg.depot
    first = nodes[0]
    lb1 = first[N_LB]
    t1_max = first[N_UB]
    off = 0
    anchor = None
    chain_end = dwell + sec[first[N_LOC]][depot]
    anchored_end = None
    prev_loc = first[N_LOC]
    for nd in nodes[1:]:
        loc, lb, ub = nd[N_LOC], nd[N_LB], nd[N_UB]
        step = dwell + sec[prev_loc][loc]
        off += step
        anchor = lb if anchor is None else max(anchor + step, lb)
        if anchor > ub:
            return None
        if ub - off < t1_max:
            t1_max = ub - off
        tail = dwell + sec[loc][depot]
        if off + tail > chain_end:
            chain_end = off + tail
        if anchored_end is None or anchor + tail > anchored_end:
            anchored_end = anchor + tail
        prev_loc = loc
    if t1_max < lb1:
        return None
    t1 = lb1 if anchored_end is None else max(lb1, min(t1_max, anchored_end - chain_end))
    times = [t1]
    prev_loc = first[N_LOC]
    for nd in nodes[1:]:
        times.append(max(nd[N_LB], times[-1] + dwell + sec[prev_loc][nd[N_LOC]]))
        prev_loc = nd[N_LOC]
    return times


def _bounds(nodes: tuple, times: Sequence[int], cfg: ProblemConfig,
            m: TravelTimeMatrix) -> tuple[int, int]:
    sec = m.seconds
    depot = cfg.depot
    start = min(t - sec[depot][n[N_LOC]] for n, t in zip(nodes, times))
    end = max(t + cfg.dwell + sec[n[N_LOC]][depot] for n, t in zip(nodes, times))
    return start, end


def run_from_nodes(nodes: tuple, cfg: ProblemConfig, m: TravelTimeMatrix) -> Run | None:
    """Retime a node sequence; None when the windows cannot be met."""
    if not nodes:
        return EMPTY_RUN
    times = _schedule_times(nodes, cfg, m)
    if times is None:
        return None
    start, end = _bounds(nodes, times, cfg, m)
    return Run(tuple(nodes), tuple(times), start, end)


def remove_trip(run: Run, trip: int, cfg: ProblemConfig, m: TravelTimeMatrix) -> Run:
    """Drop a trip's pickup and dropoff and retime; always feasible."""
    nodes = tuple(n for n in run.nodes if n[N_TRIP] != trip)
    out = run_from_nodes(nodes, cfg, m)
    assert out is not None  # a subsequence retimed earlier keeps its deadlines
    return out


def run_to_route(run: Run) -> Route:
    stops = tuple(Stop(n[N_TRIP], PICKUP if n[N_KIND] == K_PICKUP else DROPOFF,
                       n[N_LOC], t)
                  for n, t in zip(run.nodes, run.times))
    return Route(stops)


def runs_to_solution(runs: Sequence[Run]) -> Solution:
    return Solution(tuple(run_to_route(r) for r in runs if r.nodes))


def runs_cost(runs: Sequence[Run], cfg: ProblemConfig) -> int:
    """Objective over solver-internal runs: durations plus per-route overhead."""
    return sum(r.duration for r in runs) + cfg.route_overhead * len(runs)


def gcost(params: GreedyParams, ratio: float, extra: int, wait: int) -> float:
    """Weighted insertion cost in seconds."""
    return extra + (params.p_wait + params.p_ratio_cost * ratio) * wait


def gthreshold(params: GreedyParams, ratio: float, duration: int) -> float:
    """Admission threshold; the duration term is expressed in hours."""
    return params.p_const + params.p_ratio_thres * ratio + params.p_length * (duration / 3600.0)


@dataclass(frozen=True)
class InsertionResult:
    """Outcome of one insertion attempt; cost is inf when infeasible."""

    run: Run | None
    cost: float
    extra: int
    wait: int


NO_INSERTION = InsertionResult(None, INFEASIBLE, 0, 0)


def get_placements(run: Run, node: tuple[int, int, int], from_index: int,
                   cfg: ProblemConfig, m: TravelTimeMatrix) -> list[int]:
    """Positions >= from_index where `node` is reachable from its neighbors.

    node = (location, earliest, latest). Position k means insertion before the
    current k-th node; k = len(nodes) appends at the end. Reachable(a, b) is
    a.earliest + dwell + travel(a, b) <= b.latest. Empty runs are the caller's
    case split.
    """
    nodes = run.nodes
    sec = m.seconds
    dwell = cfg.dwell
    loc, lb, ub = node
    last = len(nodes)
    out = []
    for k in range(max(0, from_index), last + 1):
        if k > 0:
            before = nodes[k - 1]
            if before[N_LB] + dwell + sec[before[N_LOC]][loc] > ub:
                continue
        if k < last:
            after = nodes[k]
            if lb + dwell + sec[loc][after[N_LOC]] > after[N_UB]:
                continue
        out.append(k)
    return out


def _price_insertion(run: Run, p_idx: int, d_idx: int, trip: PlanTrip,
                     cfg: ProblemConfig, m: TravelTimeMatrix) -> tuple[int, int, int] | None:
    """Feasibility walk for one placement pair; no Run allocation on failure.

    Returns (extra, wait, duration) or None. The would-be node sequence is
    built once by slicing; the first pass checks windows and capacity and
    finds the duration-minimal first arrival (the same unimodal argument as
    _schedule_times), the second takes the depot bounds at that arrival.
    """
    old = run.nodes
    n = len(old)
    sec = m.seconds
    dwell = cfg.dwell
    cap = cfg.capacity
    depot = cfg.depot
    seq = old[:p_idx] + (trip.pickup_node(),) + old[p_idx:d_idx - 1] \
        + (trip.dropoff_node(),) + old[d_idx - 1:]
    first = seq[0]
    load = first[N_DELTA]
    if load > cap:
        return None
    row = sec[first[N_LOC]]
    lb1 = first[N_LB]
    t1_max = first[N_UB]
    chain_end = dwell + row[depot]
    off = 0
    anchor = None
    anchored_end = None
    for node in seq[1:]:
        load += node[N_DELTA]
        if load > cap:
            return None
        loc = node[N_LOC]
        step = dwell + row[loc]
        off += step
        lb = node[N_LB]
        if anchor is None:
            anchor = lb
        else:
            anchor += step
            if lb > anchor:
                anchor = lb
        ub = node[N_UB]
        if anchor > ub:
            return None
        if ub - off < t1_max:
            t1_max = ub - off
        row = sec[loc]
        tail = dwell + row[depot]
        if off + tail > chain_end:
            chain_end = off + tail
        if anchored_end is None or anchor + tail > anchored_end:
            anchored_end = anchor + tail
    if t1_max < lb1:
        return None
    t1 = lb1 if anchored_end is None else max(lb1, min(t1_max, anchored_end - chain_end))
    depot_row = sec[depot]
    loc = first[N_LOC]
    row = sec[loc]
    t = t1
    start = t - depot_row[loc]
    end = t + dwell + row[depot]
    for node in seq[1:]:
        loc = node[N_LOC]
        t += dwell + row[loc]
        lb = node[N_LB]
        if lb > t:
            t = lb
        s = t - depot_row[loc]
        if s < start:
            start = s
        row = sec[loc]
        e = t + dwell + row[depot]
        if e > end:
            end = e
    if end - start > cfg.max_route:
        return None
    extra = (end - start) - run.duration
    wait = 0
    if old and p_idx == n and d_idx == n + 1:
        # Appending at the end: waiting for the new pickup window to open.
        prev = old[-1]
        reach = run.times[-1] + dwell + sec[prev[N_LOC]][trip.pickup]
        wait = max(0, trip.w_start - reach)
    return extra, wait, end - start


def _materialize(run: Run, p_idx: int, d_idx: int, trip: PlanTrip,
                 cfg: ProblemConfig, m: TravelTimeMatrix) -> Run:
    old = run.nodes
    nodes = old[:p_idx] + (trip.pickup_node(),) + old[p_idx:d_idx - 1] \
        + (trip.dropoff_node(),) + old[d_idx - 1:]
    out = run_from_nodes(nodes, cfg, m)
    assert out is not None  # the pricing walk already proved feasibility
    return out


def adjust(run: Run, p_idx: int, d_idx: int, trip: PlanTrip, ratio: float,
           params: GreedyParams, cfg: ProblemConfig, m: TravelTimeMatrix) -> InsertionResult:
    """Insert pickup at p_idx and dropoff at d_idx, retime, and price it.

    Indices address the post-insertion node list. Infeasible placements
    (window, capacity, or max duration) come back with cost inf.
    """
    if not 0 <= p_idx < d_idx <= len(run.nodes) + 1:
        raise ValueError(f"bad placement pair ({p_idx}, {d_idx})")
    priced = _price_insertion(run, p_idx, d_idx, trip, cfg, m)
    if priced is None:
        return NO_INSERTION
    extra, wait, _ = priced
    new_run = _materialize(run, p_idx, d_idx, trip, cfg, m)
    return InsertionResult(new_run, gcost(params, ratio, extra, wait), extra, wait)


_FAR = 1 << 62  # sentinel standing in for +/- infinity in integer time math


def insert_feasible(run: Run, trip: PlanTrip, ratio: float, params: GreedyParams,
                    cfg: ProblemConfig, m: TravelTimeMatrix) -> InsertionResult:
    """Best admissible placement pair for the trip, or cost inf.

    Empty runs take the trip directly (no threshold gate). Non-empty runs are
    skipped entirely unless the trip's dropoff deadline falls inside the
    route's duration horizon. The pair sweep shares one incremental
    feasibility state: per-position prefix snapshots seed each pickup slot,
    the stretch between pickup and dropoff extends it node by node, and the
    untouched tail folds in through precomputed suffix extrema. Only pairs
    that survive pay for the exact retiming pass.
    """
    if not run.nodes:
        return adjust(run, 0, 1, trip, ratio, params, cfg, m)
    if not trip.dw_end < run.start + cfg.max_route:
        return NO_INSERTION
    pickup_pl = get_placements(run, (trip.pickup, trip.w_start, trip.w_end),
                               0, cfg, m)
    if not pickup_pl:
        return NO_INSERTION
    dropoff_pl = get_placements(run, (trip.dropoff, trip.dw_start, trip.dw_end),
                                min(pickup_pl) - 1, cfg, m)
    if not dropoff_pl:
        return NO_INSERTION
    nodes = run.nodes
    n = len(nodes)
    sec = m.seconds
    dwell = cfg.dwell
    cap = cfg.capacity
    depot = cfg.depot
    depot_row = sec[depot]
    max_route = cfg.max_route
    run_duration = run.duration
    locs = [nd[N_LOC] for nd in nodes]
    lbs = [nd[N_LB] for nd in nodes]
    ubs = [nd[N_UB] for nd in nodes]
    deltas = [nd[N_DELTA] for nd in nodes]

    # Cumulative steps along the bare run, depot tails, and suffix extrema:
    # umin[j] = min over k >= j of (ub_k - bs_k) bounds both the anchor chain
    # entering the tail and the first-arrival headroom; ctail[j] = max of
    # (bs_k + tail_k) closes the depot-return and chain-end maxima; gmax[j] =
    # max of (lb_k - bs_k + ctail[k]) folds in window-forced late arrivals.
    bs = [0] * n
    tails = [0] * n
    row = sec[locs[0]]
    tails[0] = dwell + row[depot]
    for k in range(1, n):
        loc = locs[k]
        bs[k] = bs[k - 1] + dwell + row[loc]
        row = sec[loc]
        tails[k] = dwell + row[depot]
    umin = [0] * (n + 1)
    ctail = [0] * (n + 1)
    gmax = [0] * (n + 1)
    umin[n] = _FAR
    ctail[n] = gmax[n] = -_FAR
    for k in range(n - 1, -1, -1):
        v = ubs[k] - bs[k]
        umin[k] = v if v < umin[k + 1] else umin[k + 1]
        v = bs[k] + tails[k]
        ctail[k] = v if v > ctail[k + 1] else ctail[k + 1]
        v = lbs[k] - bs[k] + ctail[k]
        gmax[k] = v if v > gmax[k + 1] else gmax[k + 1]

    # Walk-state snapshots after consuming the first j bare nodes. The anchor
    # chain starts at the second consumed node, exactly as the per-pair walk
    # in _price_insertion does; base feasibility lets window and capacity
    # checks wait until inserted nodes enter the picture.
    pre = [(0, 0, -_FAR, _FAR, -_FAR, -_FAR, -_FAR)] * (n + 1)
    load = off = 0
    anchor = chain_end = anchored_end = lb1 = -_FAR
    t1_max = _FAR
    for j in range(n):
        load += deltas[j]
        if j == 0:
            lb1 = lbs[0]
            t1_max = ubs[0]
            chain_end = tails[0]
        else:
            off = bs[j]
            v = anchor + (bs[j] - bs[j - 1])
            anchor = v if v > lbs[j] else lbs[j]
            v = ubs[j] - off
            if v < t1_max:
                t1_max = v
            v = off + tails[j]
            if v > chain_end:
                chain_end = v
            v = anchor + tails[j]
            if v > anchored_end:
                anchored_end = v
        pre[j + 1] = (load, off, anchor, t1_max, chain_end, anchored_end, lb1)

    pnode = trip.pickup_node()
    dnode = trip.dropoff_node()
    pk_loc, pk_lb, pk_ub, pax = trip.pickup, trip.w_start, trip.w_end, trip.passengers
    dp_loc, dp_lb, dp_ub = trip.dropoff, trip.dw_start, trip.dw_end
    pk_row = sec[pk_loc]
    pk_tail = dwell + pk_row[depot]
    dp_tail = dwell + sec[dp_loc][depot]

    best_cost = INFEASIBLE
    best_pair = None
    best_extra = best_wait = 0
    for p in pickup_pl:
        load, off, anchor, t1_max, chain_end, anchored_end, lb1 = pre[p]
        load += pax
        if load > cap:
            continue
        if p == 0:
            lb1, t1_max, chain_end = pk_lb, pk_ub, pk_tail
            off = 0
            anchor = anchored_end = -_FAR
        else:
            step = dwell + sec[locs[p - 1]][pk_loc]
            off += step
            v = anchor + step
            anchor = v if v > pk_lb else pk_lb
            if anchor > pk_ub:
                continue
            v = pk_ub - off
            if v < t1_max:
                t1_max = v
            v = off + pk_tail
            if v > chain_end:
                chain_end = v
            v = anchor + pk_tail
            if v > anchored_end:
                anchored_end = v
        mid = (load, off, anchor, t1_max, chain_end, anchored_end)
        mid_idx = p
        prev_loc = pk_loc
        dead = False
        for d in dropoff_pl:
            if d < p:
                continue  # dropoff must land after the pickup
            while mid_idx < d:
                mload, moff, manchor, mt1, mchain, mend = mid
                j = mid_idx
                loc = locs[j]
                mload += deltas[j]
                if mload > cap:
                    dead = True
                    break
                step = dwell + sec[prev_loc][loc]
                moff += step
                v = manchor + step
                manchor = v if v > lbs[j] else lbs[j]
                if manchor > ubs[j]:
                    dead = True
                    break
                v = ubs[j] - moff
                if v < mt1:
                    mt1 = v
                v = moff + tails[j]
                if v > mchain:
                    mchain = v
                v = manchor + tails[j]
                if v > mend:
                    mend = v
                mid = (mload, moff, manchor, mt1, mchain, mend)
                mid_idx += 1
                prev_loc = loc
            if dead:
                break  # every later dropoff extends the same failing stretch
            _, moff, manchor, mt1, mchain, mend = mid
            step = dwell + sec[prev_loc][dp_loc]
            doff = moff + step
            v = manchor + step
            danchor = v if v > dp_lb else dp_lb
            if danchor > dp_ub:
                continue
            v = dp_ub - doff
            dt1 = v if v < mt1 else mt1
            v = doff + dp_tail
            dchain = v if v > mchain else mchain
            v = danchor + dp_tail
            dend = v if v > mend else mend
            if d < n:
                step = dwell + sec[dp_loc][locs[d]]
                a_d = danchor + step
                if lbs[d] > a_d:
                    a_d = lbs[d]
                if a_d - bs[d] > umin[d]:
                    continue
                off_d = doff + step
                v = umin[d] + bs[d] - off_d
                if v < dt1:
                    dt1 = v
                v = off_d - bs[d] + ctail[d]
                if v > dchain:
                    dchain = v
                v = a_d - bs[d] + ctail[d]
                if v > dend:
                    dend = v
                if gmax[d + 1] > dend:
                    dend = gmax[d + 1]
            if dt1 < lb1:
                continue
            t1 = dend - dchain
            if dt1 < t1:
                t1 = dt1
            if lb1 > t1:
                t1 = lb1
            # Exact retiming pass for the surviving pair.
            seq = nodes[:p] + (pnode,) + nodes[p:d] + (dnode,) + nodes[d:]
            first = seq[0]
            loc = first[N_LOC]
            row = sec[loc]
            t = t1
            start = t - depot_row[loc]
            end = t + dwell + row[depot]
            for node2 in seq[1:]:
                loc = node2[N_LOC]
                t += dwell + row[loc]
                lb = node2[N_LB]
                if lb > t:
                    t = lb
                s = t - depot_row[loc]
                if s < start:
                    start = s
                row = sec[loc]
                e = t + dwell + row[depot]
                if e > end:
                    end = e
            duration = end - start
            if duration > max_route:
                continue
            extra = duration - run_duration
            wait = 0
            if p == n and d == n:
                # Appending at the end: waiting for the pickup window to open.
                prev = nodes[-1]
                reach = run.times[-1] + dwell + sec[prev[N_LOC]][pk_loc]
                if pk_lb > reach:
                    wait = pk_lb - reach
            cost = gcost(params, ratio, extra, wait)
            if cost >= best_cost:
                continue
            if cost / 3600.0 < gthreshold(params, ratio, duration):
                best_cost = cost
                best_pair = (p, d + 1)
                best_extra, best_wait = extra, wait
    if best_pair is None:
        return NO_INSERTION
    new_run = _materialize(run, best_pair[0], best_pair[1], trip, cfg, m)
    return InsertionResult(new_run, best_cost, best_extra, best_wait)


def best_assignment(run: Run, unserved: Sequence[PlanTrip], ratio: float,
                    params: GreedyParams, cfg: ProblemConfig,
                    m: TravelTimeMatrix) -> tuple[PlanTrip | None, InsertionResult]:
    """Unserved trip with the cheapest admissible insertion into `run`.

    Ties keep the earliest trip in `unserved` order (lowest id when the
    caller sorts by id).
    """
    best_trip = None
    best = NO_INSERTION
    for trip in unserved:
        res = insert_feasible(run, trip, ratio, params, cfg, m)
        if res.cost < best.cost:
            best = res
            best_trip = trip
    return best_trip, best


def greedy_runs(requests: Sequence[TripRequest], windows: Sequence[TimeWindow],
                params: GreedyParams, cfg: ProblemConfig,
                m: TravelTimeMatrix) -> list[Run]:
    """Route-by-route construction over solver-internal runs."""
    trips = sorted(bind_trips(requests, windows, m), key=lambda t: t.id)
    unserved = list(trips)
    total = len(trips)
    runs: list[Run] = []
    current = EMPTY_RUN
    while unserved:
        ratio = len(unserved) / total
        trip, res = best_assignment(current, unserved, ratio, params, cfg, m)
        if trip is None:
            if not current.nodes:
                # Even a fresh route rejects every remaining trip.
                raise Unserviceable(unserved[0].id)
            runs.append(current)
            current = EMPTY_RUN
            continue
        current = res.run
        unserved.remove(trip)
    if current.nodes:
        runs.append(current)
    return runs


def greedy_solve(requests: Sequence[TripRequest], windows: Sequence[TimeWindow],
                 params: GreedyParams, cfg: ProblemConfig,
                 m: TravelTimeMatrix) -> Solution:
    """Feasible solution serving every request, built by cheapest insertion."""
    return runs_to_solution(greedy_runs(requests, windows, params, cfg, m))
