"""Slot-driven experiment engine on the mobile grid.

Composes mobility, arrivals, the back-pressure policy, and the queue updates
into deterministic seeded runs; records per-slot traces, classifies runs as
stable or unstable from backlog growth, and bisects for the largest
stabilizable symmetric arrival rate.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelParams
from .classify import (
    StabilityThresholds,
    StabilityVerdict,
    VERDICT_STABLE,
    VERDICT_UNSTABLE,
    classify_from_stats,
    slope_of_series,
)
from .grid import GridSpec, MobilityParams, NetworkTopology, stationary_distribution, step_mobility
from .policy import PolicyConfig, StaleSnapshot, decide
from .queues import (
    BS,
    ArrivalConfig,
    QueueState,
    ServiceSummary,
    draw_arrivals,
    lyapunov_value,
    update_queues,
    MODE_CONSERVING,
)

TOPOLOGY_RANDOM_WALK = "random-walk"
TOPOLOGY_IID = "iid-from-pi"

WORKERS_ENV = "D2DRELAY_WORKERS"

TRACE_HEADER = ["slot", "sumX", "sumY", "sumU", "power", "lyapunov"]


@dataclass
class SimConfig:
    """Full description of one seeded run."""

    grid: GridSpec
    channel: ChannelParams
    mobility: MobilityParams
    arrivals: ArrivalConfig
    policy: PolicyConfig
    n_ms: int
    horizon: int
    seed: int
    topology_process: str = TOPOLOGY_RANDOM_WALK
    queue_mode: str = MODE_CONSERVING
    initial_positions: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.n_ms < 1:
            raise ValueError("n_ms must be >= 1")
        if self.topology_process not in (TOPOLOGY_RANDOM_WALK, TOPOLOGY_IID):
            raise ValueError(f"unknown topology process {self.topology_process!r}")
        if self.mobility.n_ms != self.n_ms or self.arrivals.lam.size != self.n_ms:
            raise ValueError("mobility/arrival configs must cover every MS")
        if self.policy.p_bar_mw.size not in (1, self.n_ms):
            raise ValueError("power budget must be scalar or per-MS")
        if self.initial_positions is not None:
            pos = np.asarray(self.initial_positions, dtype=np.int64)
            if pos.shape != (self.n_ms, 2) or not np.all(self.grid.contains_index(pos)):
                raise ValueError("initial_positions must be (N, 2) grid indices inside the grid")
            self.initial_positions = pos


@dataclass
class MetricsTrace:
    """Per-slot aggregates and end-of-run averages of one seeded run."""

    sum_x: np.ndarray
    sum_y: np.ndarray
    sum_u: np.ndarray
    power: np.ndarray
    lyapunov: np.ndarray
    avg_power_mw: np.ndarray  # (N,) realized time-average power
    mu_matrix: np.ndarray  # (N, N+1), column N is the BS
    mu_own_bs: np.ndarray
    mu_relay_bs: np.ndarray
    max_u: np.ndarray  # (N,)
    mean_backlog: np.ndarray  # (N,) time-average X+Y per MS
    n_ms: int
    horizon: int
    seed: int

    def total_backlog(self) -> np.ndarray:
        return self.sum_x + self.sum_y


def run(config: SimConfig) -> MetricsTrace:
    """Execute one run: snapshot refresh, mobility, decision, service, arrivals,
    queue update, in that order each slot.  Deterministic given the seed."""
    rng = np.random.default_rng(config.seed)
    grid, channel = config.grid, config.channel
    n, horizon = config.n_ms, config.horizon
    epoch_len = config.policy.epoch_len
    p_bar = np.broadcast_to(config.policy.p_bar_mw, (n,))

    if config.initial_positions is not None:
        topo = NetworkTopology(slot=0, positions=config.initial_positions.copy())
    else:
        flat0 = rng.integers(0, grid.n_points, size=n)
        topo = NetworkTopology(slot=0, positions=grid.unflatten_index(flat0))

    pis = None
    cum_pis = None
    if config.topology_process == TOPOLOGY_IID:
        if np.all(config.mobility.weights == config.mobility.weights[0]):
            shared = stationary_distribution(grid, config.mobility, ms=0)
            pis = [shared] * n
        else:
            pis = [stationary_distribution(grid, config.mobility, ms=i) for i in range(n)]
        cum_pis = np.cumsum(np.stack(pis), axis=1)

    state = QueueState.zeros(n)
    snapshot = None

    sum_x = np.zeros(horizon)
    sum_y = np.zeros(horizon)
    sum_u = np.zeros(horizon)
    power_t = np.zeros(horizon)
    lyap = np.zeros(horizon)
    power_acc = np.zeros(n)
    mu_acc = np.zeros((n, n + 1))
    own_acc = np.zeros(n)
    relay_acc = np.zeros(n)
    max_u = np.zeros(n)
    backlog_acc = np.zeros(n)
    idx = np.arange(n)

    for slot in range(horizon):
        if slot % epoch_len == 0:
            snapshot = StaleSnapshot.take(state, slot, epoch_len)
        if config.topology_process == TOPOLOGY_RANDOM_WALK:
            topo = step_mobility(topo, config.mobility, grid, rng)
        else:
            u = rng.random(n)
            flat = np.array(
                [np.searchsorted(cum_pis[i], u[i], side="right") for i in range(n)]
            )
            flat = np.minimum(flat, grid.n_points - 1)
            topo = NetworkTopology(slot=slot + 1, positions=grid.unflatten_index(flat))
        decision = decide(slot, snapshot, topo, config.policy, channel, grid)
        service = ServiceSummary(
            decision.receiver, decision.rate, decision.own_selected, decision.power_mw
        )
        arrivals = draw_arrivals(config.arrivals, rng)
        state = update_queues(state, service, arrivals, p_bar, config.queue_mode)

        sum_x[slot] = state.x.sum()
        sum_y[slot] = state.y.sum()
        sum_u[slot] = state.u.sum()
        power_t[slot] = service.power_mw.sum()
        lyap[slot] = lyapunov_value(state)
        power_acc += service.power_mw
        to_ms = service.receiver >= 0
        to_bs = service.receiver == BS
        mu_acc[idx[to_ms], service.receiver[to_ms]] += service.rate[to_ms]
        mu_acc[idx[to_bs], n] += service.rate[to_bs]
        own_acc += np.where(to_bs & service.own_selected, service.rate, 0)
        relay_acc += np.where(to_bs & ~service.own_selected, service.rate, 0)
        np.maximum(max_u, state.u, out=max_u)
        backlog_acc += state.x + state.y

    avg_power = power_acc / horizon
    # Virtual-queue arithmetic guarantees this bound; a violation is a bug.
    bound = p_bar + max_u / horizon + 1e-9
    if np.any(avg_power > bound):
        raise RuntimeError("average power exceeded the virtual-queue bound")
    return MetricsTrace(
        sum_x,
        sum_y,
        sum_u,
        power_t,
        lyap,
        avg_power,
        mu_acc / horizon,
        own_acc / horizon,
        relay_acc / horizon,
        max_u,
        backlog_acc / horizon,
        n,
        horizon,
        config.seed,
    )


def classify_stability(
    trace: MetricsTrace, thresholds: StabilityThresholds | None = None
) -> StabilityVerdict:
    """Stability verdict from the backlog slope over the trace's second half."""
    if trace.horizon < 2000:
        raise ValueError("classification needs a horizon of at least 2000 slots")
    total = trace.total_backlog()
    slope, ci = slope_of_series(total)
    window = trace.horizon - trace.horizon // 2
    return classify_from_stats(
        slope, float(total[-1]), trace.n_ms, window, thresholds, ci
    )


def write_trace_csv(trace: MetricsTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for t in range(trace.horizon):
            writer.writerow(
                [
                    t,
                    int(trace.sum_x[t]),
                    int(trace.sum_y[t]),
                    repr(float(trace.sum_u[t])),
                    repr(float(trace.power[t])),
                    repr(float(trace.lyapunov[t])),
                ]
            )


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Parse a trace CSV back into per-column arrays (exact round trip)."""
    cols: dict[str, list[float]] = {name: [] for name in TRACE_HEADER}
    with open(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        for row in reader:
            for name in TRACE_HEADER:
                cols[name].append(float(row[name]))
    return {name: np.array(vals) for name, vals in cols.items()}


def config_with(template: SimConfig, rate: float | None = None, seed: int | None = None) -> SimConfig:
    """Copy a config with a new symmetric arrival rate and/or seed."""
    cfg = template
    if rate is not None:
        cfg = replace(cfg, arrivals=ArrivalConfig.symmetric(cfg.n_ms, rate))
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_seeds(template: SimConfig, seeds) -> list[MetricsTrace]:
    """Run one config under several seeds, optionally in a thread pool.

    Results are ordered by seed index regardless of completion order.
    """
    configs = [config_with(template, seed=s) for s in seeds]
    workers = _n_workers()
    if workers == 1 or len(configs) == 1:
        return [run(c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, configs))


@dataclass
class CapacityBracket:
    lo: float
    hi: float
    probes: dict  # rate -> list of verdict strings, one per seed


def _majority_stable(verdicts: list[StabilityVerdict]) -> bool:
    stable = sum(1 for v in verdicts if v.verdict == VERDICT_STABLE)
    return stable > len(verdicts) / 2


def _majority_unstable(verdicts: list[StabilityVerdict]) -> bool:
    unstable = sum(1 for v in verdicts if v.verdict == VERDICT_UNSTABLE)
    return unstable > len(verdicts) / 2


def search_capacity(
    template: SimConfig,
    rate_lo: float,
    rate_hi: float,
    resolution: float,
    seeds,
    thresholds: StabilityThresholds | None = None,
) -> CapacityBracket:
    """Bisect for the largest stabilizable symmetric arrival rate.

    Verifies first that ``rate_lo`` is majority-stable and ``rate_hi``
    majority-unstable across the seeds, then narrows the bracket until its
    width is at most ``resolution``.  Probes that are neither majority-stable
    nor conclusive count as unstable for bracketing purposes.
    """
    if len(seeds) < 3:
        raise ValueError("capacity probes need at least 3 seeds for a majority verdict")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if rate_lo >= rate_hi:
        raise ValueError("rate_lo must be below rate_hi")
    probes: dict[float, list[str]] = {}

    def probe(rate: float) -> list[StabilityVerdict]:
        traces = run_seeds(config_with(template, rate=rate), seeds)
        verdicts = [classify_stability(t, thresholds) for t in traces]
        probes[rate] = [v.verdict for v in verdicts]
        return verdicts

    lo_v = probe(rate_lo)
    if not _majority_stable(lo_v):
        raise ValueError(
            f"rate_lo={rate_lo} is not majority-stable (verdicts: {probes[rate_lo]})"
        )
    hi_v = probe(rate_hi)
    if not _majority_unstable(hi_v):
        raise ValueError(
            f"rate_hi={rate_hi} is not majority-unstable (verdicts: {probes[rate_hi]})"
        )
    lo, hi = float(rate_lo), float(rate_hi)
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if _majority_stable(probe(mid)):
            lo = mid
        else:
            hi = mid
    return CapacityBracket(lo, hi, probes)
