"""Window decisions: candidate enumeration, the value net, and training.

For each incoming request the decision policy enumerates one candidate tight
window per grid start inside the broad window, plans the insertion for each,
scores the candidates with a small regression network approximating shaped
cost, and picks the argmin. Training is plain supervised regression on
(features, shaped cost) pairs collected from simulated booking days.
"""

from __future__ import annotations

import math
import random
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .features import (
    FEATURE_NAMES,
    DecisionState,
    DemandModel,
    FeatureVector,
    feature_vector,
)
from .greedy import (
    EMPTY_RUN,
    GreedyParams,
    PlanTrip,
    Run,
    Unserviceable,
    bind_trips,
    insert_feasible,
    run_from_nodes,
    runs_to_solution,
    greedy_solve,
)
from .model import (
    PICKUP,
    ProblemConfig,
    Solution,
    TimeWindow,
    TravelTimeMatrix,
    TripRequest,
    solution_cost,
)
from .simanneal import SaParams, anneal

VALUE_NET_FORMAT = "paraflex-value-net"
VALUE_NET_VERSION = 1
DEFAULT_HIDDEN = 64
DECISION_DEADLINE = 2.0  # seconds; worst-case budget for one decision


class TrainingDiverged(RuntimeError):
    """Training aborted on a non-finite loss."""


@dataclass(frozen=True, slots=True)
class ActionCandidate:
    """One admissible tight window with its insertion plan and features."""

    window: TimeWindow
    plan: Solution
    features: FeatureVector


@dataclass(frozen=True, slots=True)
class Decision:
    """The chosen candidate plus its score and the deadline flag."""

    window: TimeWindow
    plan: Solution
    features: FeatureVector
    q: float
    deadline_hit: bool


@dataclass(frozen=True, slots=True)
class Experience:
    """One training example: decision features and the shaped-cost target."""

    features: FeatureVector
    target: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.target):
            raise ValueError("experience target must be finite")


@dataclass(frozen=True, slots=True)
class TrainConfig:
    """Knobs for the supervised training loop."""

    episodes: int
    epsilon: float = 0.3
    epsilon_decay: float = 0.95
    minibatch: int = 32
    replay_capacity: int = 10_000
    learning_rate: float = 1e-3
    budget_scale: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError("epsilon_decay must be in (0, 1]")
        if self.minibatch < 1 or self.replay_capacity < 1:
            raise ValueError("minibatch and replay_capacity must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.budget_scale <= 0:
            raise ValueError("budget_scale must be > 0")


# ------------------------------------------------------------ value network


@dataclass(eq=False)
class ValueNet:
    """Regression net: 8 standardized features -> 64 rectified units -> scalar.

    Carries its own input standardization and adaptive-moment optimizer state
    so a serialized model is self-contained.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    mean: np.ndarray
    std: np.ndarray
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m1: dict[str, np.ndarray] = field(default_factory=dict)
    m2: dict[str, np.ndarray] = field(default_factory=dict)
    fingerprint: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n_in = len(FEATURE_NAMES)
        hidden = self.b1.shape[0]
        if self.w1.shape != (hidden, n_in) or self.w2.shape != (hidden,):
            raise ValueError("value net weight shapes are inconsistent")
        if self.mean.shape != (n_in,) or self.std.shape != (n_in,):
            raise ValueError("standardization stats must be per-feature")
        if np.any(self.std <= 0):
            raise ValueError("standardization std must be positive")
        for name, arr in self._params().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite weights in {name}")
        for store in (self.m1, self.m2):
            for name in self._params():
                store.setdefault(name, np.zeros_like(self._params()[name]))

    @classmethod
    def new(cls, rng_seed: int = 0, hidden: int = DEFAULT_HIDDEN,
            learning_rate: float = 1e-3) -> "ValueNet":
        """Fresh net with variance-preserving random weights and unit stats."""
        n_in = len(FEATURE_NAMES)
        rng = np.random.default_rng(rng_seed)
        return cls(
            w1=rng.normal(0.0, math.sqrt(2.0 / n_in), (hidden, n_in)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, math.sqrt(2.0 / hidden), hidden),
            b2=0.0,
            mean=np.zeros(n_in),
            std=np.ones(n_in),
            learning_rate=learning_rate,
        )

    def _params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2,
                "b2": np.atleast_1d(np.asarray(self.b2, dtype=float))}

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batched forward pass; x has shape (n, 8), output shape (n,)."""
        xs = (x - self.mean) / self.std
        h = np.maximum(xs @ self.w1.T + self.b1, 0.0)
        return h @ self.w2 + self.b2


def q_evaluate(net: ValueNet, f: FeatureVector) -> float:
    """Predicted shaped cost for one feature vector."""
    return float(net.forward(f.as_array()[None, :])[0])


def loss_and_gradients(net: ValueNet, x: np.ndarray,
                       y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error and its analytic gradients for a batch."""
    xs = (x - net.mean) / net.std
    z = xs @ net.w1.T + net.b1
    h = np.maximum(z, 0.0)
    pred = h @ net.w2 + net.b2
    err = pred - y
    g = 2.0 * err / len(y)
    gz = np.outer(g, net.w2) * (z > 0)
    grads = {"w1": gz.T @ xs, "b1": gz.sum(axis=0), "w2": h.T @ g,
             "b2": np.atleast_1d(g.sum())}
    return float(np.mean(err * err)), grads


def adam_step(net: ValueNet, grads: Mapping[str, np.ndarray]) -> None:
    """One adaptive-moment update of every parameter, in place."""
    net.step += 1
    t = net.step
    for name, param in net._params().items():
        g = grads[name]
        net.m1[name] = net.beta1 * net.m1[name] + (1 - net.beta1) * g
        net.m2[name] = net.beta2 * net.m2[name] + (1 - net.beta2) * g * g
        m_hat = net.m1[name] / (1 - net.beta1 ** t)
        v_hat = net.m2[name] / (1 - net.beta2 ** t)
        update = net.learning_rate * m_hat / (np.sqrt(v_hat) + net.eps)
        if name == "b2":
            net.b2 = float(param[0] - update[0])
        else:
            param -= update


def fit_buffer(net: ValueNet, buffer: Sequence[Experience], epochs: int,
               minibatch: int, rng: random.Random) -> list[float]:
    """Fit the net to a fixed buffer; returns the loss after each epoch.

    Standardization stats are set once from the whole buffer. Targets are
    fitted in standardized units with the scale folded into the linear
    output layer before and after the loop, so step sizes suit any target
    magnitude while predictions and the returned losses stay in raw target
    units. Raises TrainingDiverged on a non-finite loss.
    """
    x = np.array([e.features.as_array() for e in buffer])
    y = np.array([e.target for e in buffer], dtype=float)
    net.mean = x.mean(axis=0)
    std = x.std(axis=0)
    net.std = np.where(std > 1e-9, std, 1.0)
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std <= 1e-9:
        y_std = 1.0
    net.w2 /= y_std
    net.b2 = (net.b2 - y_mean) / y_std
    yz = (y - y_mean) / y_std
    losses = []
    order = list(range(len(buffer)))
    for _ in range(epochs):
        rng.shuffle(order)
        for lo in range(0, len(order), minibatch):
            idx = order[lo:lo + minibatch]
            _, grads = loss_and_gradients(net, x[idx], yz[idx])
            adam_step(net, grads)
        loss, _ = loss_and_gradients(net, x, yz)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} during buffer fit")
        losses.append(loss * y_std * y_std)
    net.w2 *= y_std
    net.b2 = net.b2 * y_std + y_mean
    return losses


# --------------------------------------------------------------- candidates


def state_runs(state: DecisionState, cfg: ProblemConfig,
                m: TravelTimeMatrix) -> tuple[Run, ...]:
    """Rebuild solver runs for the already-planned trips 1..i-1."""
    trips = {t.id: t for t in bind_trips(state.requests[:-1], state.windows, m)}
    runs = []
    for route in state.routes.routes:
        try:
            nodes = tuple(trips[s.trip].pickup_node() if s.kind == PICKUP
                          else trips[s.trip].dropoff_node()
                          for s in route.stops)
        except KeyError as err:
            raise ValueError(f"state routes serve unknown trip {err}") from None
        run = run_from_nodes(nodes, cfg, m)
        if run is None:
            raise ValueError("state routes cannot be scheduled within their windows")
        runs.append(run)
    return tuple(runs)


def _grid_starts(broad: TimeWindow, cfg: ProblemConfig) -> range:
    """Admissible tight-window starts: broad start, stepping by the grid."""
    if broad.length < cfg.window_len:
        raise ValueError("broad window shorter than the tight window length")
    return range(broad.start, broad.end - cfg.window_len + 1, cfg.grid)


def plan_for_window(state: DecisionState, runs: tuple[Run, ...],
                     window: TimeWindow, cfg: ProblemConfig, gp: GreedyParams,
                     m: TravelTimeMatrix) -> Solution:
    """Best insertion of the new request under `window`; singleton fallback."""
    trip = PlanTrip.bind(state.requests[-1], window, m)
    best = None
    for i, run in enumerate(runs):
        res = insert_feasible(run, trip, 0.0, gp, cfg, m)
        if res.run is not None and (best is None or res.cost < best[0]):
            best = (res.cost, i, res.run)
    if best is not None:
        _, i, new_run = best
        return runs_to_solution(runs[:i] + (new_run,) + runs[i + 1:])
    res = insert_feasible(EMPTY_RUN, trip, 0.0, gp, cfg, m)
    if res.run is None:
        raise Unserviceable(trip.id)
    return runs_to_solution(runs + (res.run,))


def enumerate_actions(state: DecisionState, dm: DemandModel, cfg: ProblemConfig,
                      gp: GreedyParams, m: TravelTimeMatrix) -> list[ActionCandidate]:
    """One scored candidate per grid start inside the broad window."""
    runs = state_runs(state, cfg, m)
    out = []
    for s in _grid_starts(state.broad, cfg):
        window = TimeWindow(s, s + cfg.window_len)
        plan = plan_for_window(state, runs, window, cfg, gp, m)
        out.append(ActionCandidate(
            window, plan, feature_vector(state, window, plan, dm, cfg, m)))
    return out


def decide(net: ValueNet, state: DecisionState, dm: DemandModel,
           cfg: ProblemConfig, gp: GreedyParams, m: TravelTimeMatrix,
           deadline: float = DECISION_DEADLINE) -> Decision:
    """Argmin-q candidate; ties go to the earliest window start.

    Candidates are evaluated in grid order against a wall-clock deadline;
    running out of time returns the best so far with the flag set.
    """
    t0 = time.monotonic()
    runs = state_runs(state, cfg, m)
    best: tuple[float, ActionCandidate] | None = None
    hit = False
    for s in _grid_starts(state.broad, cfg):
        window = TimeWindow(s, s + cfg.window_len)
        plan = plan_for_window(state, runs, window, cfg, gp, m)
        cand = ActionCandidate(
            window, plan, feature_vector(state, window, plan, dm, cfg, m))
        q = q_evaluate(net, cand.features)
        if best is None or q < best[0]:
            best = (q, cand)
        if time.monotonic() - t0 > deadline:
            hit = True
            break
    q, cand = best
    return Decision(cand.window, cand.plan, cand.features, q, hit)


# -------------------------------------------------------------- shaped cost


def _greedy_cost(requests: Sequence[TripRequest], windows: Sequence[TimeWindow],
                 gp: GreedyParams, cfg: ProblemConfig, m: TravelTimeMatrix) -> int:
    return solution_cost(greedy_solve(requests, windows, gp, cfg, m), cfg, m)


def shaped_cost(requests: Sequence[TripRequest], broads: Sequence[TimeWindow],
                tights: Sequence[TimeWindow], i: int, gp: GreedyParams,
                cfg: ProblemConfig, m: TravelTimeMatrix,
                solver: Callable[..., int] | None = None) -> int:
    """Cost increase from tightening window i, holding later windows broad.

    Computes solver(T, w_1..w_i, W_{i+1}..) - solver(T, w_1..w_{i-1}, W_i..)
    for 1-based decision index i; `solver(requests, windows, cfg, m) -> cost`
    defaults to the greedy estimate with `gp`. May be negative under a
    heuristic solver. Summed over i the differences telescope to the cost gap
    between the fully tightened and the all-broad instance.
    """
    if not 1 <= i <= len(requests):
        raise ValueError(f"decision index {i} outside 1..{len(requests)}")
    if len(tights) < i or len(broads) != len(requests):
        raise ValueError("windows do not cover the requests")
    if solver is None:
        solver = lambda req, win, c, mat: _greedy_cost(req, win, gp, c, mat)
    with_i = list(tights[:i]) + list(broads[i:])
    without_i = list(tights[:i - 1]) + list(broads[i - 1:])
    return solver(requests, with_i, cfg, m) - solver(requests, without_i, cfg, m)


# ----------------------------------------------------------------- training


class _RunningStats:
    """Per-feature running mean and variance over the experiences seen."""

    def __init__(self, width: int):
        self.count = 0
        self.mean = np.zeros(width)
        self.m2 = np.zeros(width)

    def add(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def std(self) -> np.ndarray:
        if self.count == 0:
            return np.ones_like(self.mean)
        s = np.sqrt(self.m2 / self.count)
        return np.where(s > 1e-9, s, 1.0)


def train(tc: TrainConfig, dm: DemandModel, gen, cfg: ProblemConfig,
          gp: GreedyParams, sa: SaParams) -> ValueNet:
    """Learn the value net from simulated booking days.

    Per episode: sample a day, then for each request pick a candidate
    epsilon-greedily, record (features, shaped cost), take one minibatch
    gradient step from the replay buffer, and advance the plan with the
    anytime solver for the sampled inter-arrival budget. `gen` is the
    synthetic-geometry config used for day sampling.
    """
    rng = random.Random(tc.rng_seed)
    net = ValueNet.new(tc.rng_seed, learning_rate=tc.learning_rate)
    net.fingerprint = asdict(tc)
    if tc.episodes == 0:
        return net
    from .simulator import iteration_budget, sample_day
    replay: deque[Experience] = deque(maxlen=tc.replay_capacity)
    stats = _RunningStats(len(FEATURE_NAMES))
    epsilon = tc.epsilon
    for _ in range(tc.episodes):
        day = sample_day(dm, gen, random.Random(rng.randrange(2 ** 32)))
        routes = Solution(())
        tights: list[TimeWindow] = []
        for i, req in enumerate(day.requests, start=1):
            state = DecisionState(day.requests[:i], tuple(tights), routes,
                                  day.areas, day=day.day_class,
                                  booking_clock=req.booking_instant)
            cands = enumerate_actions(state, dm, cfg, gp, day.matrix)
            if rng.random() < epsilon:
                cand = cands[rng.randrange(len(cands))]
            else:
                cand = min(cands, key=lambda c: q_evaluate(net, c.features))
            target = shaped_cost(day.requests, day.broads,
                                 tights + [cand.window], i, gp, cfg, day.matrix)
            replay.append(Experience(cand.features, float(target)))
            stats.add(cand.features.as_array())
            net.mean = stats.mean.copy()
            net.std = stats.std()
            batch = [replay[rng.randrange(len(replay))]
                     for _ in range(min(tc.minibatch, len(replay)))]
            x = np.array([e.features.as_array() for e in batch])
            y = np.array([e.target for e in batch])
            loss, grads = loss_and_gradients(net, x, y)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} during training")
            adam_step(net, grads)
            tights.append(cand.window)
            budget = iteration_budget(dm, day.day_class, req.booking_instant,
                                      rng, scale=tc.budget_scale)
            run_sa = replace(sa, budget_iters=budget, budget_seconds=None,
                             rng_seed=rng.randrange(2 ** 32))
            routes = anneal(cand.plan, day.requests[:i], tights, run_sa, gp,
                            cfg, day.matrix)
        epsilon *= tc.epsilon_decay
    return net


# ------------------------------------------------------------ serialization


def value_net_to_dict(net: ValueNet) -> dict:
    """Plain-JSON document for a value net; inverse of value_net_from_dict."""
    return {
        "format": VALUE_NET_FORMAT,
        "version": VALUE_NET_VERSION,
        "hidden": int(net.b1.shape[0]),
        "weights": {"w1": net.w1.tolist(), "b1": net.b1.tolist(),
                    "w2": net.w2.tolist(), "b2": net.b2},
        "standardization": {"mean": net.mean.tolist(), "std": net.std.tolist()},
        "optimizer": {
            "learning_rate": net.learning_rate, "beta1": net.beta1,
            "beta2": net.beta2, "eps": net.eps, "step": net.step,
            "m1": {k: v.tolist() for k, v in sorted(net.m1.items())},
            "m2": {k: v.tolist() for k, v in sorted(net.m2.items())},
        },
        "fingerprint": dict(net.fingerprint),
    }


def value_net_from_dict(obj: dict) -> ValueNet:
    """Parse and validate a value-net document."""
    if not isinstance(obj, dict) or obj.get("format") != VALUE_NET_FORMAT:
        raise ValueError("not a value-net document")
    if obj.get("version") != VALUE_NET_VERSION:
        raise ValueError(f"unsupported value-net version {obj.get('version')!r}")
    try:
        w = obj["weights"]
        s = obj["standardization"]
        opt = obj["optimizer"]
        net = ValueNet(
            w1=np.array(w["w1"], dtype=float),
            b1=np.array(w["b1"], dtype=float),
            w2=np.array(w["w2"], dtype=float),
            b2=float(w["b2"]),
            mean=np.array(s["mean"], dtype=float),
            std=np.array(s["std"], dtype=float),
            learning_rate=float(opt["learning_rate"]),
            beta1=float(opt["beta1"]), beta2=float(opt["beta2"]),
            eps=float(opt["eps"]), step=int(opt["step"]),
            m1={k: np.array(v, dtype=float) for k, v in opt["m1"].items()},
            m2={k: np.array(v, dtype=float) for k, v in opt["m2"].items()},
            fingerprint=dict(obj.get("fingerprint", {})),
        )
    except (KeyError, TypeError) as err:
        raise ValueError(f"malformed value-net document: {err}") from None
    if int(obj["hidden"]) != net.b1.shape[0]:
        raise ValueError("hidden size disagrees with the weight shapes")
    return net


def load_value_net(path: str) -> ValueNet:
    import json

    with open(path, encoding="utf-8") as fh:
        return value_net_from_dict(json.load(fh))
