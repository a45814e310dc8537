"""Anytime simulated annealing over insertion-built routes.

Neighbors come from two operators, trip swaps between overlapping routes and
midpoint split-and-merge, plus a relocation kick that fires only when a drawn
operator degenerates: it returns its input unchanged (single route, no time
overlap) or rebuilds the very same routes (splits with an empty half).
Acceptance follows an adaptive schedule where the temperature decays
geometrically and worsening moves are taken with probability
exp(-delta / (delta_avg * H)).
"""

from __future__ import annotations

import math
import random
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

from .greedy import (
    EMPTY_RUN,
    K_PICKUP,
    N_KIND,
    N_TRIP,
    GreedyParams,
    PlanTrip,
    Run,
    bind_trips,
    greedy_solve,
    insert_feasible,
    remove_trip,
    run_from_nodes,
    runs_cost,
    runs_to_solution,
)
from .model import (
    PICKUP,
    ProblemConfig,
    Solution,
    TimeWindow,
    TravelTimeMatrix,
    TripRequest,
    check_feasibility,
    solution_cost,
)


class InfeasibleStart(ValueError):
    """The initial solution already violates the problem constraints."""


@dataclass(frozen=True, slots=True)
class SaParams:
    """Annealing knobs: acceptance endpoints, alter rate, budget, and seed."""

    p_start: float = 0.9
    p_end: float = 0.5
    p_alter: float = 0.4
    budget_iters: int | None = None
    budget_seconds: float | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.p_end <= self.p_start < 1.0:
            raise ValueError("need 0 < p_end <= p_start < 1")
        if not 0.0 < self.p_alter <= 1.0:
            raise ValueError("p_alter must be in (0, 1]")
        if (self.budget_iters is None) == (self.budget_seconds is None):
            raise ValueError("set exactly one of budget_iters or budget_seconds")
        budget = self.budget_iters if self.budget_iters is not None else self.budget_seconds
        if budget < 0:
            raise ValueError("budget must be >= 0")

    @property
    def h_start(self) -> float:
        return -1.0 / math.log(self.p_start)

    @property
    def h_end(self) -> float:
        return -1.0 / math.log(self.p_end)


@dataclass
class SaState:
    """Mutable view of one annealing run."""

    current: Solution
    best: Solution
    temperature: float
    delta_avg: float
    accepted: int
    elapsed: float


# ------------------------------------------------------- neighbor operators


def _overlapping_pairs(runs: Sequence[Run]) -> list[tuple[int, int]]:
    out = []
    for i in range(len(runs)):
        a = runs[i]
        for j in range(i + 1, len(runs)):
            b = runs[j]
            if a.start <= b.end and b.start <= a.end:
                out.append((i, j))
    return out


def _swap_runs(runs: tuple[Run, ...], trips: Mapping[int, PlanTrip],
               rng: random.Random, params: GreedyParams, cfg: ProblemConfig,
               m: TravelTimeMatrix) -> tuple[Run, ...]:
    """Exchange one random trip between two overlapping routes."""
    pairs = _overlapping_pairs(runs)
    if not pairs:
        return runs
    i, j = pairs[rng.randrange(len(pairs))]
    trip_a = rng.choice(runs[i].trip_ids())
    trip_b = rng.choice(runs[j].trip_ids())
    res_a = insert_feasible(remove_trip(runs[i], trip_a, cfg, m),
                            trips[trip_b], 0.0, params, cfg, m)
    if res_a.run is None:
        return runs
    res_b = insert_feasible(remove_trip(runs[j], trip_b, cfg, m),
                            trips[trip_a], 0.0, params, cfg, m)
    if res_b.run is None:
        return runs
    new = list(runs)
    new[i] = res_a.run
    new[j] = res_b.run
    return tuple(new)


def _split_run(run: Run, cfg: ProblemConfig, m: TravelTimeMatrix) -> tuple[Run, Run]:
    """Trip-complete halves split at the route's temporal midpoint.

    The cut goes before the first stop past (start+end)/2; a trip whose pickup
    falls in the first half keeps its dropoff there too.
    """
    if not run.nodes:
        return EMPTY_RUN, EMPTY_RUN
    mid2 = run.start + run.end
    split = len(run.times)
    for k, t in enumerate(run.times):
        if 2 * t > mid2:
            split = k
            break
    first_ids = {n[N_TRIP] for n in run.nodes[:split] if n[N_KIND] == K_PICKUP}
    h1 = tuple(n for n in run.nodes if n[N_TRIP] in first_ids)
    h2 = tuple(n for n in run.nodes if n[N_TRIP] not in first_ids)
    r1 = run_from_nodes(h1, cfg, m)
    r2 = run_from_nodes(h2, cfg, m)
    assert r1 is not None and r2 is not None  # halves of a feasible run retime
    return r1, r2


def _merge_runs(first: Run, second: Run, trips: Mapping[int, PlanTrip],
                params: GreedyParams, cfg: ProblemConfig,
                m: TravelTimeMatrix) -> Run | None:
    """Insert the second half's trips into the first; None when one rejects."""
    run = first
    for tid in second.trip_ids():
        res = insert_feasible(run, trips[tid], 0.0, params, cfg, m)
        if res.run is None:
            return None
        run = res.run
    return run


def _cross_merge(runs: tuple[Run, ...], i: int, j: int,
                 trips: Mapping[int, PlanTrip], params: GreedyParams,
                 cfg: ProblemConfig, m: TravelTimeMatrix) -> tuple[Run, ...]:
    if i == j:
        return runs  # degenerate draw: re-merging a route's own halves
    a1, a2 = _split_run(runs[i], cfg, m)
    b1, b2 = _split_run(runs[j], cfg, m)
    merged_a = _merge_runs(a1, b2, trips, params, cfg, m)
    if merged_a is None:
        return runs
    merged_b = _merge_runs(b1, a2, trips, params, cfg, m)
    if merged_b is None:
        return runs
    new = list(runs)
    new[i] = merged_a
    new[j] = merged_b
    return tuple(r for r in new if r.nodes)


def _split_and_merge_runs(runs: tuple[Run, ...], trips: Mapping[int, PlanTrip],
                          rng: random.Random, params: GreedyParams,
                          cfg: ProblemConfig, m: TravelTimeMatrix) -> tuple[Run, ...]:
    """Split two overlapping routes at their midpoints and cross-merge."""
    pairs = _overlapping_pairs(runs)
    if not pairs:
        return runs
    i, j = pairs[rng.randrange(len(pairs))]
    return _cross_merge(runs, i, j, trips, params, cfg, m)


def _runs_equal(a: Sequence[Run], b: Sequence[Run]) -> bool:
    """True when both sequences hold the same routes in the same order."""
    return len(a) == len(b) and all(
        x is y or (x.nodes == y.nodes and x.times == y.times)
        for x, y in zip(a, b))


def _reinsert_trip(runs: tuple[Run, ...], trips: Mapping[int, PlanTrip],
                   rng: random.Random, params: GreedyParams, cfg: ProblemConfig,
                   m: TravelTimeMatrix) -> tuple[Run, ...]:
    """Move one random trip to its best slot in a random route (or a new one).

    Escape hatch for states the exchange operators cannot leave: a single
    route, routes without time overlap, or a lone trip that midpoint splits
    keep intact.
    """
    if not runs:
        return runs
    i = rng.randrange(len(runs))
    tid = rng.choice(runs[i].trip_ids())
    pool = list(runs)
    pool[i] = remove_trip(runs[i], tid, cfg, m)
    j = rng.randrange(len(pool) + 1)  # index len(pool) opens a fresh route
    target = pool[j] if j < len(pool) else EMPTY_RUN
    res = insert_feasible(target, trips[tid], 0.0, params, cfg, m)
    if res.run is None:
        return runs
    if j < len(pool):
        pool[j] = res.run
    else:
        pool.append(res.run)
    return tuple(r for r in pool if r.nodes)


def _random_neighbor_runs(runs: tuple[Run, ...], trips: Mapping[int, PlanTrip],
                          p_alter: float, rng: random.Random,
                          params: GreedyParams, cfg: ProblemConfig,
                          m: TravelTimeMatrix) -> tuple[Run, ...]:
    count = max(1, int(len(runs) * p_alter))
    out = runs
    for _ in range(count):
        if rng.randrange(2) == 0:
            new = _swap_runs(out, trips, rng, params, cfg, m)
        else:
            new = _split_and_merge_runs(out, trips, rng, params, cfg, m)
        if new is out or _runs_equal(new, out):
            new = _reinsert_trip(out, trips, rng, params, cfg, m)
        out = new
    return out


# -------------------------------------------------- solution-level wrappers


def _trip_context(requests: Sequence[TripRequest], windows: Sequence[TimeWindow],
                  m: TravelTimeMatrix) -> dict[int, PlanTrip]:
    return {t.id: t for t in bind_trips(requests, windows, m)}


def _solution_to_runs(sol: Solution, trips: Mapping[int, PlanTrip],
                      cfg: ProblemConfig, m: TravelTimeMatrix) -> tuple[Run, ...]:
    runs = []
    for route in sol.routes:
        nodes = tuple(trips[s.trip].pickup_node() if s.kind == PICKUP
                      else trips[s.trip].dropoff_node()
                      for s in route.stops)
        run = run_from_nodes(nodes, cfg, m)
        if run is None:
            raise InfeasibleStart("route cannot be scheduled within its windows")
        if run.nodes:
            runs.append(run)
    return tuple(runs)


def swap(sol: Solution, requests: Sequence[TripRequest],
         windows: Sequence[TimeWindow], rng: random.Random,
         params: GreedyParams, cfg: ProblemConfig, m: TravelTimeMatrix) -> Solution:
    """One random trip exchange between two time-overlapping routes."""
    if len(sol.routes) < 2:
        return sol
    trips = _trip_context(requests, windows, m)
    runs = _solution_to_runs(sol, trips, cfg, m)
    out = _swap_runs(runs, trips, rng, params, cfg, m)
    return sol if out is runs else runs_to_solution(out)


def split_and_merge(sol: Solution, requests: Sequence[TripRequest],
                    windows: Sequence[TimeWindow], rng: random.Random,
                    params: GreedyParams, cfg: ProblemConfig,
                    m: TravelTimeMatrix) -> Solution:
    """Cross-merge the midpoint halves of two time-overlapping routes."""
    if len(sol.routes) < 2:
        return sol
    trips = _trip_context(requests, windows, m)
    runs = _solution_to_runs(sol, trips, cfg, m)
    out = _split_and_merge_runs(runs, trips, rng, params, cfg, m)
    return sol if out is runs else runs_to_solution(out)


def random_neighbor(sol: Solution, requests: Sequence[TripRequest],
                    windows: Sequence[TimeWindow], p_alter: float,
                    rng: random.Random, params: GreedyParams,
                    cfg: ProblemConfig, m: TravelTimeMatrix) -> Solution:
    """Apply max(1, floor(routes * p_alter)) random operators in sequence."""
    trips = _trip_context(requests, windows, m)
    runs = _solution_to_runs(sol, trips, cfg, m)
    out = _random_neighbor_runs(runs, trips, p_alter, rng, params, cfg, m)
    return sol if out is runs else runs_to_solution(out)


# -------------------------------------------------------------- the annealer


def _accept_probability(delta: float, delta_avg: float, h_t: float) -> float:
    denom = delta_avg * h_t
    if denom == 0.0:
        return 0.0  # degenerate average: fall back to improving-only search
    x = -delta / denom
    if x >= 0.0:
        return 1.0
    return math.exp(x)


class Annealer:
    """One interruptible annealing run over a fixed request set.

    Driven by a single caller via run(); other threads may call stop() and
    read `best` at any time. Each instance owns its rng and state.
    """

    def __init__(self, initial: Solution, requests: Sequence[TripRequest],
                 windows: Sequence[TimeWindow], sa: SaParams,
                 params: GreedyParams, cfg: ProblemConfig, m: TravelTimeMatrix):
        if check_feasibility(initial, requests, windows, cfg, m):
            raise InfeasibleStart("initial solution violates constraints")
        self._sa = sa
        self._params = params
        self._cfg = cfg
        self._m = m
        self._trips = _trip_context(requests, windows, m)
        self._rng = random.Random(sa.rng_seed)
        self._stop = threading.Event()
        self._runs = _solution_to_runs(initial, self._trips, cfg, m)
        self._current_cost = runs_cost(self._runs, cfg)
        self._best_cost = solution_cost(initial, cfg, m)
        self.state = SaState(current=initial, best=initial,
                             temperature=sa.h_start, delta_avg=0.0,
                             accepted=1, elapsed=0.0)

    def stop(self) -> None:
        """Ask the running loop to return after its current iteration."""
        self._stop.set()

    @property
    def best(self) -> Solution:
        return self.state.best

    @property
    def best_cost(self) -> int:
        return self._best_cost

    def run(self) -> Solution:
        sa = self._sa
        state = self.state
        rng = self._rng
        iter_mode = sa.budget_iters is not None
        t_run = sa.budget_iters if iter_mode else sa.budget_seconds
        h_start = sa.h_start
        rate = (sa.h_end / h_start) ** (1.0 / (t_run - 1)) if t_run > 1 else 1.0
        h_t = h_start
        t0 = time.monotonic()
        k = 0
        while not self._stop.is_set():
            elapsed = k if iter_mode else time.monotonic() - t0
            if elapsed >= t_run:
                break
            neighbor = _random_neighbor_runs(self._runs, self._trips, sa.p_alter,
                                             rng, self._params, self._cfg, self._m)
            new_cost = runs_cost(neighbor, self._cfg)
            delta = new_cost - self._current_cost
            if k == 0:
                state.delta_avg = float(delta) if delta != 0 else 1.0
            if delta < 0 or _accept_probability(delta, state.delta_avg, h_t) > rng.random():
                self._runs = neighbor
                self._current_cost = new_cost
                state.delta_avg += (delta - state.delta_avg) / state.accepted
                state.accepted += 1
                state.current = runs_to_solution(neighbor)
                if new_cost < self._best_cost:
                    self._best_cost = new_cost
                    state.best = state.current
            k += 1
            h_t = h_start * rate ** (k if iter_mode else time.monotonic() - t0)
            state.temperature = h_t
            state.elapsed = k if iter_mode else time.monotonic() - t0
        return state.best


def anneal(initial: Solution, requests: Sequence[TripRequest],
           windows: Sequence[TimeWindow], sa: SaParams, params: GreedyParams,
           cfg: ProblemConfig, m: TravelTimeMatrix) -> Solution:
    """Improve a feasible solution; returns the best accepted solution."""
    return Annealer(initial, requests, windows, sa, params, cfg, m).run()


def anneal_plus_greedy(requests: Sequence[TripRequest],
                       windows: Sequence[TimeWindow], hint: Solution | None,
                       sa: SaParams, params: GreedyParams, cfg: ProblemConfig,
                       m: TravelTimeMatrix) -> Solution:
    """Greedy construction refined by annealing, seeded by a better hint if given."""
    base = greedy_solve(requests, windows, params, cfg, m)
    seed = base
    if hint is not None and solution_cost(hint, cfg, m) < solution_cost(base, cfg, m):
        seed = hint
    return anneal(seed, requests, windows, sa, params, cfg, m)
