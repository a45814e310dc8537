#!/usr/bin/env python3
"""Build the committed test fixtures: demand model, value net, replay buffer.

Regenerate with:  python3 scripts/make_fixtures.py --out tests/fixtures
Every draw is seeded, so reruns rewrite identical files. The script ends by
evaluating the trained net against the naive baselines on held-out sampled
days and printing the per-day costs, so a bad fixture is visible immediately.
"""

import argparse
import datetime as dt
import json
import math
import random
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from paraflex.features import (
    HistoricalTrip,
    build_demand_model,
    demand_model_to_dict,
)
from paraflex.greedy import GreedyParams
from paraflex.model import ProblemConfig
from paraflex.policy import (
    FEATURE_NAMES,
    TrainConfig,
    enumerate_actions,
    train,
    value_net_to_dict,
)
from paraflex.simanneal import SaParams
from paraflex.simulator import (
    GenConfig,
    evaluate,
    percent_reduction,
    quartiles,
    run_episode,
    sample_day,
    synthesize_booking_times,
)

CITY_CENTER = (52.46, 13.39)
AREA_BOXES = {
    "z1": (52.470, 13.370, 52.500, 13.410),  # center
    "z2": (52.505, 13.330, 52.535, 13.370),
    "z3": (52.505, 13.410, 52.535, 13.450),
    "z4": (52.420, 13.300, 52.450, 13.340),
    "z5": (52.420, 13.440, 52.450, 13.480),
    "z6": (52.380, 13.370, 52.410, 13.410),
}
SUBURBS = ("z2", "z3", "z4", "z5", "z6")


def box_point(rng, area):
    lo_lat, lo_lon, hi_lat, hi_lon = AREA_BOXES[area]
    return rng.uniform(lo_lat, hi_lat), rng.uniform(lo_lon, hi_lon)


def pickup_hour(rng, weekend):
    """Bimodal weekday pickups (morning and mid-afternoon), flat weekends."""
    if weekend:
        return rng.randrange(9, 18)
    mode = 8.0 if rng.random() < 0.55 else 15.0
    return min(19, max(6, round(rng.gauss(mode, 1.6))))


def trip_areas(rng, hour):
    """Morning flows run suburb -> center, afternoons reverse, else mixed."""
    suburb = rng.choice(SUBURBS)
    if hour < 12:
        pair = (suburb, "z1") if rng.random() < 0.7 else (suburb, rng.choice(SUBURBS))
    else:
        pair = ("z1", suburb) if rng.random() < 0.7 else (rng.choice(SUBURBS), suburb)
    if pair[0] == pair[1]:
        pair = (pair[0], "z1" if pair[0] != "z1" else "z2")
    return pair


def make_history(seed, n_dates):
    """Synthetic agency history with hour-dependent spatial structure."""
    rng = random.Random(seed)
    trips = []
    start = dt.date(2026, 1, 5)  # a Monday
    for i in range(n_dates):
        date = start + dt.timedelta(days=i)
        weekend = date.weekday() >= 5
        mean, spread, lo, hi = (20, 4, 10, 30) if weekend else (45, 6, 30, 65)
        count = min(hi, max(lo, round(rng.gauss(mean, spread))))
        for _ in range(count):
            hour = pickup_hour(rng, weekend)
            pa, da = trip_areas(rng, hour)
            p, q = box_point(rng, pa), box_point(rng, da)
            pax = rng.choices((1, 2, 3), weights=(0.75, 0.2, 0.05))[0]
            trips.append(HistoricalTrip(
                date, p[0], p[1], q[0], q[1], pax,
                pickup_time=hour * 3600 + rng.randrange(3600),
                pickup_area=pa, dropoff_area=da))
    return synthesize_booking_times(trips, rng)


def collect_buffer(dm, gen, cfg, gp, sa, seed, size):
    """Gather experiences from episodes driven by a random-candidate policy."""
    rng = random.Random(seed)
    experiences = []
    while len(experiences) < size:
        day = sample_day(dm, gen, random.Random(rng.randrange(2 ** 32)))

        def explore(state):
            cands = enumerate_actions(state, dm, cfg, gp, day.matrix)
            pick = cands[rng.randrange(len(cands))]
            return pick.window, pick.plan

        trace = run_episode(day, explore, cfg, gp, sa, dm, collect=True,
                            rng=random.Random(rng.randrange(2 ** 32)),
                            budget_scale=0.05)
        experiences.extend(trace.experiences)
    return experiences[:size]


def dump(path, doc):
    path.write_text(json.dumps(doc, separators=(",", ":")) + "\n",
                    encoding="utf-8")
    print(f"wrote {path} ({path.stat().st_size} bytes)")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("tests/fixtures"))
    ap.add_argument("--history-days", type=int, default=140)
    ap.add_argument("--episodes", type=int, default=150)
    ap.add_argument("--buffer-size", type=int, default=500)
    ap.add_argument("--eval-days", type=int, default=8)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    cfg = ProblemConfig(depot=0)
    gp = GreedyParams()
    sa = SaParams(budget_iters=1000)
    gen = GenConfig(day_start=5 * 3600, day_end=23 * 3600, depot=CITY_CENTER)

    t0 = time.time()
    history = make_history(args.seed, args.history_days)
    dm = build_demand_model(history)
    print(f"history: {len(history)} trips over {dm.n_days} days, "
          f"mean {dm.daily_mean:.1f}/day  [{time.time() - t0:.0f}s]")
    dump(args.out / "demand-model.json", demand_model_to_dict(dm))

    buffer = collect_buffer(dm, gen, cfg, gp, sa, args.seed + 1,
                            args.buffer_size)
    targets = sorted(e.target for e in buffer)
    print(f"buffer: {len(buffer)} experiences, target range "
          f"[{targets[0]:.0f}, {targets[-1]:.0f}], "
          f"median {targets[len(targets) // 2]:.0f}  [{time.time() - t0:.0f}s]")
    dump(args.out / "experience-buffer.json", {
        "format": "paraflex-experience-buffer", "version": 1,
        "feature_names": list(FEATURE_NAMES),
        "experiences": [{"features": list(e.features.as_array()),
                         "target": e.target} for e in buffer],
    })

    tc = TrainConfig(episodes=args.episodes, learning_rate=3e-3,
                     budget_scale=0.1, rng_seed=args.seed + 2)
    net = train(tc, dm, gen, cfg, gp, sa)
    print(f"trained: {net.step} gradient steps  [{time.time() - t0:.0f}s]")
    dump(args.out / "value-net.json", value_net_to_dict(net))

    days = [sample_day(dm, gen, random.Random(1000 + i))
            for i in range(args.eval_days)]
    rows = evaluate(days, "abcd", net, dm, cfg, gp, sa,
                    seed=args.seed + 3, budget_scale=0.1)
    by_arm = {arm: [r.cost for r in rows if r.arm == arm] for arm in "abcd"}
    for arm in "abcd":
        print(f"arm {arm}: median {sorted(by_arm[arm])[len(days) // 2]}  "
              f"costs {by_arm[arm]}")
    for other in "bc":
        red = percent_reduction(rows, other, "a")
        q1, med, q3 = quartiles(red)
        print(f"reduction a vs {other}: median {med:.1f}% "
              f"(q1 {q1:.1f}%, q3 {q3:.1f}%)  [{time.time() - t0:.0f}s]")


if __name__ == "__main__":
    main()
