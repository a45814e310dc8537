"""Exact solver for tiny instances by exhaustive enumeration.

Enumerates every set-partition of trips into routes and every stop ordering
with pickup before dropoff; for a fixed stop sequence the minimal-duration
schedule is found in closed form. The route duration is unimodal in the
first arrival time, so the optimum is the point where the no-wait chain
catches up with the window-anchored route end, clamped into the feasible
first-arrival interval. Heuristic solvers time routes with the same rule,
so they can match but never undercut the returned cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

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
    solution_cost,
)

DEFAULT_TRIP_LIMIT = 5


class TooLarge(ValueError):
    """Instance exceeds the exhaustive-search trip limit."""


class Infeasible(ValueError):
    """No feasible solution exists (some trip cannot be served alone)."""


@dataclass(frozen=True)
class OracleResult:
    """Optimal solution, its cost, and the number of partitions examined."""

    best: Solution
    cost: int
    explored: int


def _sequences(pax: Sequence[int], capacity: int) -> Iterator[tuple[tuple[int, int], ...]]:
    """All stop orders for k trips, pickup before dropoff, capacity-pruned.

    Yields tuples of (trip position, 0 pickup / 1 dropoff), deterministic order.
    """
    k = len(pax)
    seq: list[tuple[int, int]] = []

    def rec(load: int, started: int, done: int):
        if len(seq) == 2 * k:
            yield tuple(seq)
            return
        for i in range(k):
            bit = 1 << i
            if not started & bit:
                if load + pax[i] <= capacity:
                    seq.append((i, 0))
                    yield from rec(load + pax[i], started | bit, done)
                    seq.pop()
            elif not done & bit:
                seq.append((i, 1))
                yield from rec(load - pax[i], started, done | bit)
                seq.pop()

    yield from rec(0, 0, 0)


def _schedule(nodes: list[tuple[int, int, int]], cfg: ProblemConfig,
              m: TravelTimeMatrix) -> tuple[int, list[int]] | None:
    """Minimal route duration for a fixed node order, or None when infeasible.

    nodes: (location, earliest, latest) per stop. The route end is flat in
    the first arrival t1 while window anchors dominate and linear once the
    no-wait chain takes over, and the start is non-decreasing in t1, so the
    duration is minimal where the chain end meets the anchored end, clamped
    to the feasible first-arrival interval.
    """
    sec = m.seconds
    dwell = cfg.dwell
    depot = cfg.depot
    k = len(nodes)
    loc0, lb1, t1_max = nodes[0]
    offset = 0
    anchor = None
    chain_end = dwell + sec[loc0][depot]
    anchored_end = None
    for j in range(1, k):
        loc, lb, ub = nodes[j]
        step = dwell + sec[nodes[j - 1][0]][loc]
        offset += step
        anchor = lb if anchor is None else max(anchor + step, lb)
        if anchor > ub:
            return None
        t1_max = min(t1_max, ub - offset)
        tail = dwell + sec[loc][depot]
        chain_end = max(chain_end, offset + tail)
        anchored_end = (anchor + tail if anchored_end is None
                        else max(anchored_end, anchor + tail))
    if t1_max < lb1:
        return None
    if anchored_end is None:
        t1 = lb1
    else:
        t1 = max(lb1, min(t1_max, anchored_end - chain_end))
    times = [t1]
    for j in range(1, k):
        times.append(max(nodes[j][1],
                         times[-1] + dwell + sec[nodes[j - 1][0]][nodes[j][0]]))
    start = min(t - sec[depot][loc] for t, (loc, _, _) in zip(times, nodes))
    end = max(t + dwell + sec[loc][depot] for t, (loc, _, _) in zip(times, nodes))
    if end - start > cfg.max_route:
        return None
    return end - start, times


def _best_route(block: Sequence[tuple[TripRequest, TimeWindow]], cfg: ProblemConfig,
                m: TravelTimeMatrix) -> tuple[int, tuple[Stop, ...]] | None:
    """Cheapest feasible single route serving exactly the given trips."""
    sec = m.seconds
    pax = [req.passengers for req, _ in block]
    specs = []
    for req, w in block:
        direct = sec[req.pickup][req.dropoff]
        specs.append(((req.pickup, w.start, w.end),
                      (req.dropoff, 0, w.end + direct)))
    best = None
    for seq in _sequences(pax, cfg.capacity):
        nodes = [specs[i][kind] for i, kind in seq]
        sched = _schedule(nodes, cfg, m)
        if sched is None:
            continue
        duration, times = sched
        if best is None or duration < best[0]:
            stops = tuple(
                Stop(block[i][0].id, PICKUP if kind == 0 else DROPOFF,
                     nodes[j][0], times[j])
                for j, (i, kind) in enumerate(seq))
            best = (duration, stops)
    return best


def _partitions(items: tuple) -> Iterator[list[list]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield part + [[first]]


def solve_exact(requests: Sequence[TripRequest], windows: Sequence[TimeWindow],
                cfg: ProblemConfig, m: TravelTimeMatrix,
                limit: int = DEFAULT_TRIP_LIMIT) -> OracleResult:
    """Minimum-cost solution over every partition, ordering, and schedule.

    `explored` counts the candidate route-set partitions examined (Bell numbers
    of the trip count). Raises TooLarge past `limit` trips and Infeasible when
    no partition admits a feasible schedule.
    """
    if len(requests) > limit:
        raise TooLarge(f"{len(requests)} trips exceed the exhaustive limit {limit}")
    pairs = tuple(sorted(zip(requests, windows), key=lambda p: p[0].id))
    cache: dict[frozenset[int], tuple[int, tuple[Stop, ...]] | None] = {}
    explored = 0
    best_total: int | None = None
    best_parts: list[tuple[Stop, ...]] | None = None
    for partition in _partitions(pairs):
        explored += 1
        total = 0
        parts: list[tuple[Stop, ...]] = []
        feasible = True
        for block in partition:
            key = frozenset(req.id for req, _ in block)
            if key not in cache:
                cache[key] = _best_route(block, cfg, m)
            entry = cache[key]
            if entry is None:
                feasible = False
                break
            total += entry[0]
            parts.append(entry[1])
        if not feasible:
            continue
        total += cfg.route_overhead * len(partition)
        if best_total is None or total < best_total:
            best_total = total
            best_parts = parts
    if best_total is None:
        raise Infeasible("some trip cannot be served by any route")
    assert best_parts is not None
    ordered = sorted(best_parts, key=lambda stops: (stops[0].arrival, stops[0].trip))
    best = Solution(tuple(Route(stops) for stops in ordered))
    assert solution_cost(best, cfg, m) == best_total
    return OracleResult(best=best, cost=best_total, explored=explored)
