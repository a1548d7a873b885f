"""Per-MS queues and their slot-by-slot dynamics.

Each MS carries three queues: the own queue X (exogenous packets), the relay
queue Y (packets received from other MSs, bound for the BS), and a virtual
power queue U whose stability enforces the long-run average power budget.
X and Y are exact integer packet counts; U is kept in linear milliwatt units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import math

import numpy as np

# Receiver codes used across scheduling and queue updates.
BS = -1
SILENT = -2

MODE_FAITHFUL = "equation-faithful"
MODE_CONSERVING = "packet-conserving"


@dataclass
class QueueState:
    """Backlogs of all MSs: x, y in packets (int), u in milliwatts (float)."""

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.u = np.asarray(self.u, dtype=np.float64)
        if not (self.x.shape == self.y.shape == self.u.shape):
            raise ValueError("x, y, u must have identical shapes")
        if np.any(self.x < 0) or np.any(self.y < 0) or np.any(self.u < 0):
            raise ValueError("queue backlogs must be nonnegative")

    @classmethod
    def zeros(cls, n_ms: int) -> "QueueState":
        return cls(np.zeros(n_ms, np.int64), np.zeros(n_ms, np.int64), np.zeros(n_ms))

    @property
    def n_ms(self) -> int:
        return self.x.shape[0]

    def copy(self) -> "QueueState":
        return QueueState(self.x.copy(), self.y.copy(), self.u.copy())


@dataclass(frozen=True)
class ArrivalConfig:
    """IID Poisson arrivals, truncated at a hard per-slot cap."""

    lam: np.ndarray  # (N,) mean packets/slot
    a_max: int

    def __post_init__(self):
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=np.float64))
        if np.any(self.lam < 0):
            raise ValueError("arrival rates must be nonnegative")
        if self.a_max < np.max(self.lam, initial=0.0):
            raise ValueError("a_max must be at least the largest arrival rate")

    @classmethod
    def symmetric(cls, n_ms: int, rate: float, a_max: int | None = None) -> "ArrivalConfig":
        if a_max is None:
            a_max = max(1, math.ceil(3.0 * rate))
        return cls(np.full(n_ms, float(rate)), a_max)


@dataclass
class ServiceSummary:
    """Scheduled service of one slot.

    ``receiver[i]`` is the MS index served by transmitter i, ``BS`` for the
    base station or ``SILENT`` for no transmission; with one receiver per
    transmitter this encodes the whole rate assignment.  ``rate`` is the
    offered rate of the active link in packets/slot, ``own_selected`` says
    whether a BS link drains the own queue (True) or the relay queue, and
    ``power_mw`` is the transmit power spent this slot.
    """

    receiver: np.ndarray
    rate: np.ndarray
    own_selected: np.ndarray
    power_mw: np.ndarray

    def __post_init__(self):
        self.receiver = np.asarray(self.receiver, dtype=np.int64)
        self.rate = np.asarray(self.rate, dtype=np.int64)
        self.own_selected = np.asarray(self.own_selected, dtype=bool)
        self.power_mw = np.asarray(self.power_mw, dtype=np.float64)
        n = self.receiver.shape[0]
        if not (self.rate.shape[0] == self.own_selected.shape[0] == self.power_mw.shape[0] == n):
            raise ValueError("service arrays must share one length")
        if np.any(self.rate < 0) or np.any(self.power_mw < 0):
            raise ValueError("rates and powers must be nonnegative")
        silent = self.receiver == SILENT
        if np.any(self.rate[silent] != 0) or np.any(self.power_mw[silent] != 0):
            raise ValueError("silent transmitters must have zero rate and power")
        if np.any(self.receiver == np.arange(n)):
            raise ValueError("an MS cannot transmit to itself")

    @classmethod
    def idle(cls, n_ms: int) -> "ServiceSummary":
        return cls(
            np.full(n_ms, SILENT, np.int64),
            np.zeros(n_ms, np.int64),
            np.zeros(n_ms, bool),
            np.zeros(n_ms),
        )

    @property
    def n_ms(self) -> int:
        return self.receiver.shape[0]


def draw_arrivals(cfg: ArrivalConfig, rng: np.random.Generator) -> np.ndarray:
    """Poisson draws per MS, capped at a_max; deterministic given rng state."""
    raw = rng.poisson(cfg.lam)
    return np.minimum(raw, cfg.a_max).astype(np.int64)


def update_queues(
    state: QueueState,
    service: ServiceSummary,
    arrivals: np.ndarray,
    p_bar_mw: np.ndarray,
    mode: str = MODE_CONSERVING,
) -> QueueState:
    """One slot of queue dynamics; returns a new state.

    Own queue:    X' = max(X - served_own, 0) + A, where served_own counts the
    MS-to-MS rate plus the BS rate when the own queue was selected.
    Relay queue:  Y' = max(Y - bs_rate*(1 - own_selected), 0) + inflow.
    Virtual queue U' = max(U - p_bar, 0) + power spent this slot.

    In equation-faithful mode the relay inflow credits the full scheduled
    rate of every incoming link; packet-conserving mode credits only packets
    the sender actually had, so total packets change each slot by exactly
    arrivals minus deliveries to the BS.
    """
    if mode not in (MODE_FAITHFUL, MODE_CONSERVING):
        raise ValueError(f"unknown mode {mode!r}")
    arrivals = np.asarray(arrivals, dtype=np.int64)
    if np.any(arrivals < 0):
        raise ValueError("arrivals must be nonnegative")
    p_bar_mw = np.broadcast_to(np.asarray(p_bar_mw, dtype=np.float64), state.u.shape)

    to_ms = service.receiver >= 0
    to_bs = service.receiver == BS
    own_rate = np.where(to_ms | (to_bs & service.own_selected), service.rate, 0)
    relay_rate = np.where(to_bs & ~service.own_selected, service.rate, 0)

    new_x = np.maximum(state.x - own_rate, 0) + arrivals

    if mode == MODE_FAITHFUL:
        moved = np.where(to_ms, service.rate, 0)
    else:
        moved = np.where(to_ms, np.minimum(state.x, service.rate), 0)
    inflow = np.zeros_like(state.y)
    np.add.at(inflow, service.receiver[to_ms], moved[to_ms])

    new_y = np.maximum(state.y - relay_rate, 0) + inflow
    new_u = np.maximum(state.u - p_bar_mw, 0.0) + service.power_mw
    return QueueState(new_x, new_y, new_u)


def delivered_to_bs(state: QueueState, service: ServiceSummary) -> np.ndarray:
    """Packets actually handed to the BS this slot (packet-conserving count)."""
    to_bs = service.receiver == BS
    own = np.minimum(state.x, service.rate)
    relay = np.minimum(state.y, service.rate)
    return np.where(to_bs, np.where(service.own_selected, own, relay), 0)


@dataclass
class LongRunMetrics:
    """Time averages over a service trace.

    ``mu_matrix[i, j]`` is the average scheduled rate from MS i to MS j, with
    column ``n_ms`` standing for the BS.  ``mu_own_bs`` / ``mu_relay_bs``
    split BS service by the queue-selection indicator.
    """

    avg_power_mw: np.ndarray
    mu_matrix: np.ndarray
    mu_own_bs: np.ndarray
    mu_relay_bs: np.ndarray
    n_slots: int


def long_run_metrics(trace: Sequence[ServiceSummary]) -> LongRunMetrics:
    """Running time-averages of power and per-link service rates."""
    if len(trace) == 0:
        raise ValueError("trace must contain at least one slot")
    n = trace[0].n_ms
    power = np.zeros(n)
    mu = np.zeros((n, n + 1))
    own_bs = np.zeros(n)
    relay_bs = np.zeros(n)
    idx = np.arange(n)
    for svc in trace:
        power += svc.power_mw
        to_ms = svc.receiver >= 0
        to_bs = svc.receiver == BS
        mu[idx[to_ms], svc.receiver[to_ms]] += svc.rate[to_ms]
        mu[idx[to_bs], n] += svc.rate[to_bs]
        own_bs += np.where(to_bs & svc.own_selected, svc.rate, 0)
        relay_bs += np.where(to_bs & ~svc.own_selected, svc.rate, 0)
    t = float(len(trace))
    return LongRunMetrics(power / t, mu / t, own_bs / t, relay_bs / t, len(trace))


def lyapunov_value(state: QueueState) -> float:
    """Quadratic Lyapunov value: sum of squared backlogs across all queues."""
    x = state.x.astype(np.float64)
    y = state.y.astype(np.float64)
    return float(np.dot(x, x) + np.dot(y, y) + np.dot(state.u, state.u))
