"""Command-line entry points for solving, demand modeling, training, and serving.

Subcommands: solve, oracle, demand-model build, train, evaluate, simulate,
serve. Every randomized command takes --seed and reruns byte-identically.
Exit code 0 on success, 2 on any validation problem.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import random
import sys
from pathlib import Path

from .features import (
    GRID_CELL_METERS,
    HistoricalTrip,
    build_demand_model,
    demand_model_to_dict,
    load_demand_model,
)
from .greedy import GreedyParams, Unserviceable, greedy_solve
from .model import (
    InstanceError,
    ProblemConfig,
    load_instance,
    solution_to_dict,
)
from .oracle import solve_exact
from .policy import TrainConfig, TrainingDiverged, load_value_net, train, value_net_to_dict
from .simanneal import SaParams, anneal, anneal_plus_greedy
from .simulator import (
    ARM_NAMES,
    RESULT_COLUMNS,
    DayInstance,
    GenConfig,
    ParseError,
    evaluate,
    ingest_history,
    percent_reduction,
    quartiles,
    sample_day,
    synthesize_booking_times,
    write_results_csv,
)

ORACLE_TRIP_LIMIT = 8


class CliError(ValueError):
    """A user-facing validation problem; reported on stderr with exit 2."""


def _load_instance(path: str):
    try:
        return load_instance(path)
    except FileNotFoundError:
        raise CliError(f"instance file not found: {path}") from None
    except (InstanceError, json.JSONDecodeError, ValueError) as exc:
        raise CliError(f"bad instance {path}: {exc}") from None


def _load_model(path: str):
    try:
        return load_value_net(path)
    except FileNotFoundError:
        raise CliError(f"model file not found: {path}") from None
    except (json.JSONDecodeError, ValueError) as exc:
        raise CliError(f"bad model {path}: {exc}") from None


def _load_demand(path: str):
    try:
        return load_demand_model(path)
    except FileNotFoundError:
        raise CliError(f"demand model file not found: {path}") from None
    except (json.JSONDecodeError, ValueError) as exc:
        raise CliError(f"bad demand model {path}: {exc}") from None


def _emit_json(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _parse_arms(text: str) -> str:
    arms = text.replace(",", "").strip()
    if not arms:
        raise CliError("no arms given")
    for arm in arms:
        if arm not in ARM_NAMES:
            raise CliError(f"unknown arm {arm!r}; choose from {ARM_NAMES}")
    return arms


def _emit_results(results, out: str | None) -> None:
    if out is None:
        writer = csv.writer(sys.stdout)
        writer.writerow(RESULT_COLUMNS)
        for r in results:
            writer.writerow([r.day, r.arm, r.cost, r.routes, r.decisions])
    else:
        write_results_csv(out, results)


def _report_arms(results, arms: str) -> None:
    for arm in arms:
        costs = sorted(r.cost for r in results if r.arm == arm)
        if costs:
            median = costs[len(costs) // 2]
            print(f"arm {arm}: median cost {median} over {len(costs)} days",
                  file=sys.stderr)
    if "a" in arms:
        for base in "bcd":
            if base in arms:
                q1, med, q3 = quartiles(percent_reduction(results, base, "a"))
                print(f"reduction a vs {base}: median {med:.1f}% "
                      f"(q1 {q1:.1f}%, q3 {q3:.1f}%)", file=sys.stderr)


def cmd_solve(args) -> int:
    inst = _load_instance(args.instance)
    if not inst.requests:
        raise CliError(f"{args.instance} has no requests to solve")
    windows = inst.solve_windows()
    gp = GreedyParams()
    try:
        if args.algo == "greedy":
            sol = greedy_solve(inst.requests, windows, gp, inst.config,
                               inst.matrix)
        else:
            iters = args.iters
            if iters is None and args.seconds is None:
                iters = 10000
            sa = SaParams(budget_iters=iters, budget_seconds=args.seconds,
                          rng_seed=args.seed)
            if args.algo == "sa":
                base = greedy_solve(inst.requests, windows, gp, inst.config,
                                    inst.matrix)
                sol = anneal(base, inst.requests, windows, sa, gp, inst.config,
                             inst.matrix)
            else:
                sol = anneal_plus_greedy(inst.requests, windows, None, sa, gp,
                                         inst.config, inst.matrix)
    except Unserviceable as exc:
        raise CliError(f"instance is unserviceable: {exc}") from None
    doc = solution_to_dict(sol, inst.config, inst.matrix)
    print(f"cost {doc['cost']}, {len(doc['routes'])} routes", file=sys.stderr)
    _emit_json(doc, args.out)
    return 0


def cmd_oracle(args) -> int:
    inst = _load_instance(args.instance)
    if not inst.requests:
        raise CliError(f"{args.instance} has no requests to solve")
    if len(inst.requests) > ORACLE_TRIP_LIMIT:
        raise CliError(f"oracle enumerates all partitions; refusing "
                       f"{len(inst.requests)} trips (limit "
                       f"{ORACLE_TRIP_LIMIT})")
    try:
        result = solve_exact(inst.requests, inst.solve_windows(), inst.config,
                             inst.matrix)
    except Unserviceable as exc:
        raise CliError(f"instance is unserviceable: {exc}") from None
    doc = solution_to_dict(result.best, inst.config, inst.matrix)
    print(f"cost {doc['cost']}, {len(doc['routes'])} routes", file=sys.stderr)
    _emit_json(doc, args.out)
    return 0


def cmd_demand_build(args) -> int:
    try:
        table = ingest_history(args.history)
    except FileNotFoundError:
        raise CliError(f"history file not found: {args.history}") from None
    except ParseError as exc:
        raise CliError(f"bad history {args.history}: {exc}") from None
    for note in table.diagnostics:
        print(f"skipped {note}", file=sys.stderr)
    if not table.trips:
        raise CliError(f"{args.history} holds no usable trips")
    trips = synthesize_booking_times(table.trips, random.Random(args.seed))
    dm = build_demand_model(trips, cell_meters=args.cell_meters)
    print(f"{len(trips)} trips over {dm.n_days} days, "
          f"mean {dm.daily_mean:.1f}/day", file=sys.stderr)
    _emit_json(demand_model_to_dict(dm), args.out)
    return 0


def cmd_train(args) -> int:
    dm = _load_demand(args.demand)
    tc = TrainConfig(episodes=args.episodes, epsilon=args.epsilon,
                     learning_rate=args.lr, budget_scale=args.budget_scale,
                     rng_seed=args.seed)
    gen = GenConfig(day_start=args.day_start * 3600,
                    day_end=args.day_end * 3600)
    try:
        net = train(tc, dm, gen, ProblemConfig(depot=0), GreedyParams(),
                    SaParams(budget_iters=1000))
    except TrainingDiverged as exc:
        raise CliError(f"training diverged: {exc}") from None
    print(f"trained {net.step} gradient steps over {args.episodes} episodes",
          file=sys.stderr)
    _emit_json(value_net_to_dict(net), args.out)
    return 0


def _day_from_instance(path: str, day_class: str) -> tuple[DayInstance, ProblemConfig]:
    inst = _load_instance(path)
    if not inst.requests:
        raise CliError(f"{path} has no requests")
    order = sorted(range(len(inst.requests)),
                   key=lambda i: inst.requests[i].booking_instant)
    requests = tuple(inst.requests[i] for i in order)
    broads = tuple(r.broad_window for r in requests)
    try:
        day = DayInstance(requests, broads, inst.locations, inst.matrix,
                          day_class)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None
    return day, inst.config


def cmd_evaluate(args) -> int:
    arms = _parse_arms(args.arms)
    dm = _load_demand(args.demand)
    net = _load_model(args.model) if args.model else None
    if net is None and ("a" in arms or "b" in arms):
        raise CliError("arms a and b need --model")
    days, configs = [], []
    for path in args.instances:
        day, cfg = _day_from_instance(path, args.day_class)
        days.append(day)
        configs.append(cfg)
    if any(cfg != configs[0] for cfg in configs):
        raise CliError("instances disagree on solver constants")
    results = evaluate(days, arms, net, dm, configs[0], GreedyParams(),
                       SaParams(budget_iters=1000), seed=args.seed,
                       budget_scale=args.budget_scale)
    for r in results:
        print(f"{args.instances[r.day]}: arm {r.arm} cost {r.cost} "
              f"({r.routes} routes)", file=sys.stderr)
    _report_arms(results, arms)
    _emit_results(results, args.out)
    return 0


def _builtin_demand(seed: int):
    """Small synthetic trip history so simulate works without input files."""
    rng = random.Random(f"{seed}:demand")
    boxes = {
        "core": (52.46, 13.36, 52.50, 13.42),
        "north": (52.52, 13.34, 52.55, 13.44),
        "south": (52.40, 13.34, 52.43, 13.44),
        "east": (52.44, 13.46, 52.52, 13.52),
    }
    areas = sorted(boxes)
    trips = []
    start = dt.date(2026, 1, 5)
    for offset in range(56):
        date = start + dt.timedelta(days=offset)
        weekday = date.weekday() < 5
        n = max(3, round(rng.gauss(12, 3))) if weekday \
            else max(2, round(rng.gauss(6, 2)))
        for _ in range(n):
            pickup_area, dropoff_area = rng.sample(areas, 2)
            if weekday:
                peak = 8 if rng.random() < 0.5 else 15
                hour = min(19, max(6, round(rng.gauss(peak, 2))))
            else:
                hour = rng.randrange(9, 18)
            pb = boxes[pickup_area]
            db = boxes[dropoff_area]
            trips.append(HistoricalTrip(
                date=date,
                pickup_lat=rng.uniform(pb[0], pb[2]),
                pickup_lon=rng.uniform(pb[1], pb[3]),
                dropoff_lat=rng.uniform(db[0], db[2]),
                dropoff_lon=rng.uniform(db[1], db[3]),
                passengers=rng.choices((1, 2, 3), (0.8, 0.15, 0.05))[0],
                pickup_time=hour * 3600 + rng.randrange(3600),
                pickup_area=pickup_area, dropoff_area=dropoff_area))
    return build_demand_model(synthesize_booking_times(trips, rng))


def cmd_simulate(args) -> int:
    arms = _parse_arms(args.arms)
    dm = _load_demand(args.demand) if args.demand else _builtin_demand(args.seed)
    net = _load_model(args.model) if args.model else None
    if net is None and ("a" in arms or "b" in arms):
        raise CliError("arms a and b need --model")
    if args.days < 1:
        raise CliError("need at least one day")
    gen = GenConfig(day_start=args.day_start * 3600,
                    day_end=args.day_end * 3600)
    days = [sample_day(dm, gen, random.Random(f"{args.seed}:day:{i}"))
            for i in range(args.days)]
    results = evaluate(days, arms, net, dm, ProblemConfig(depot=0),
                       GreedyParams(), SaParams(budget_iters=1000),
                       seed=args.seed, budget_scale=args.budget_scale)
    _report_arms(results, arms)
    _emit_results(results, args.out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from fastapi.staticfiles import StaticFiles

    from .service import ServiceState, create_app, replay_journal

    st = ServiceState(
        instance=_load_instance(args.instance) if args.instance else None,
        dm=_load_demand(args.demand) if args.demand else None,
        net=_load_model(args.model) if args.model else None,
        anneal_seconds=args.anneal_seconds,
        journal=Path(args.journal) if args.journal else None,
        rng_seed=args.seed)
    if st.journal is not None and st.journal.exists():
        if st.instance is None:
            raise CliError("replaying a journal needs --instance")
        replay_journal(st)
        print(f"replayed {len(st.sessions)} sessions from {st.journal}",
              file=sys.stderr)
    app = create_app(st)
    console = Path(args.console)
    if console.is_dir():
        app.mount("/", StaticFiles(directory=console, html=True),
                  name="console")
        print(f"serving console from {console}", file=sys.stderr)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="paraflex",
        description="Offline vehicle routing with online booking decisions.")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve one instance file")
    ps.add_argument("instance")
    ps.add_argument("--algo", choices=("greedy", "sa", "sa+greedy"),
                    default="greedy")
    budget = ps.add_mutually_exclusive_group()
    budget.add_argument("--iters", type=int, default=None,
                        help="annealing iteration budget (default 10000)")
    budget.add_argument("--seconds", type=float, default=None,
                        help="annealing wall-clock budget")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("-o", "--out", default=None,
                    help="solution file (default stdout)")
    ps.set_defaults(fn=cmd_solve)

    po = sub.add_parser("oracle", help="exact solver for tiny instances")
    po.add_argument("instance")
    po.add_argument("-o", "--out", default=None)
    po.set_defaults(fn=cmd_oracle)

    pd = sub.add_parser("demand-model", help="demand model tools")
    dsub = pd.add_subparsers(dest="subcommand", required=True)
    db = dsub.add_parser("build", help="estimate demand tables from history")
    db.add_argument("--history", required=True, help="trip history CSV")
    db.add_argument("--cell-meters", type=float, default=GRID_CELL_METERS,
                    help="area grid cell size when area codes are absent")
    db.add_argument("--seed", type=int, default=0,
                    help="seed for synthesizing missing booking times")
    db.add_argument("-o", "--out", default=None)
    db.set_defaults(fn=cmd_demand_build)

    pt = sub.add_parser("train", help="train the window-scoring network")
    pt.add_argument("--demand", required=True)
    pt.add_argument("--episodes", type=int, required=True)
    pt.add_argument("--epsilon", type=float, default=0.3)
    pt.add_argument("--lr", type=float, default=3e-3)
    pt.add_argument("--budget-scale", type=float, default=1.0,
                    help="scale on sampled in-episode solver budgets")
    pt.add_argument("--day-start", type=int, default=0, help="hour")
    pt.add_argument("--day-end", type=int, default=24, help="hour")
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("-o", "--out", default=None)
    pt.set_defaults(fn=cmd_train)

    pe = sub.add_parser("evaluate",
                        help="run booking episodes on instance files")
    pe.add_argument("instances", nargs="+")
    pe.add_argument("--demand", required=True)
    pe.add_argument("--model", default=None)
    pe.add_argument("--arms", default="a")
    pe.add_argument("--day-class", choices=("weekday", "weekend"),
                    default="weekday")
    pe.add_argument("--budget-scale", type=float, default=1.0)
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("-o", "--out", default=None,
                    help="results CSV (default stdout)")
    pe.set_defaults(fn=cmd_evaluate)

    pm = sub.add_parser("simulate", help="compare strategies on sampled days")
    pm.add_argument("--days", type=int, required=True)
    pm.add_argument("--seed", type=int, default=0)
    pm.add_argument("--arms", default="cd",
                    help="subset of abcd, commas optional")
    pm.add_argument("--demand", default=None,
                    help="demand model file (default: built-in synthetic)")
    pm.add_argument("--model", default=None, help="needed for arms a/b")
    pm.add_argument("--budget-scale", type=float, default=1.0)
    pm.add_argument("--day-start", type=int, default=6, help="hour")
    pm.add_argument("--day-end", type=int, default=22, help="hour")
    pm.add_argument("-o", "--out", default=None,
                    help="results CSV (default stdout)")
    pm.set_defaults(fn=cmd_simulate)

    pv = sub.add_parser("serve", help="run the booking HTTP service")
    pv.add_argument("--host", default="127.0.0.1")
    pv.add_argument("--port", type=int, default=8000)
    pv.add_argument("--instance", default=None,
                    help="instance file providing geometry and constants")
    pv.add_argument("--model", default=None)
    pv.add_argument("--demand", default=None)
    pv.add_argument("--journal", default=None,
                    help="append-only JSONL journal to replay and extend")
    pv.add_argument("--console", default="frontend/dist",
                    help="static console bundle directory")
    pv.add_argument("--anneal-seconds", type=float, default=600.0,
                    help="budget per background annealing cycle")
    pv.add_argument("--seed", type=int, default=0)
    pv.set_defaults(fn=cmd_serve)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
