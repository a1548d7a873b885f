"""Online back-pressure scheduling with power control and PRB allocation.

Every slot the policy scores each transmitter's candidate links with a
back-pressure weight (queue differential times link rate, minus the virtual
power queue times transmit power), evaluated on queue lengths frozen at the
start of the current T-slot epoch but on the current topology.  PRBs are
then assigned by maximum-weight bipartite matching; because rates are
PRB-independent under orthogonal PRBs, the matching collapses to picking the
best-weight transmitters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import max_weight_matching
from .channel import ChannelParams, dbm_to_mw, link_rate, path_loss_matrix, rates_for_levels
from .grid import GridSpec, NetworkTopology
from .queues import BS, SILENT, QueueState

MODE_RELAY = "relay"
MODE_NO_RELAY = "no-relay"

PAPER_LEVELS_DBM = (20.0, 23.01, 24.77, 26.02, 26.99, 27.78, 28.45, 29.03, 29.54, 30.0)


@dataclass
class PowerLevelSet:
    """Strictly increasing transmit power levels in dBm, plus implicit silence."""

    dbm: np.ndarray
    mw: np.ndarray = field(init=False)

    def __post_init__(self):
        self.dbm = np.atleast_1d(np.asarray(self.dbm, dtype=np.float64))
        if self.dbm.size == 0:
            raise ValueError("power level set must be nonempty")
        if np.any(np.diff(self.dbm) <= 0):
            raise ValueError("power levels must be strictly increasing")
        self.mw = dbm_to_mw(self.dbm)

    @classmethod
    def default(cls) -> "PowerLevelSet":
        """100..1000 mW in 100 mW steps, expressed in dBm."""
        return cls(np.array(PAPER_LEVELS_DBM))

    @property
    def n_levels(self) -> int:
        return self.dbm.size

    @property
    def max_dbm(self) -> float:
        return float(self.dbm[-1])


@dataclass
class StaleSnapshot:
    """Queue lengths frozen at an epoch boundary (slot = epoch * epoch_len)."""

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    epoch: int
    epoch_len: int

    @classmethod
    def take(cls, state: QueueState, slot: int, epoch_len: int) -> "StaleSnapshot":
        if epoch_len < 1:
            raise ValueError("epoch_len must be >= 1")
        if slot % epoch_len != 0:
            raise ValueError(f"snapshot must be taken at an epoch boundary, got slot {slot}")
        return cls(state.x.copy(), state.y.copy(), state.u.copy(), slot // epoch_len, epoch_len)

    @property
    def n_ms(self) -> int:
        return self.x.shape[0]


@dataclass
class PolicyConfig:
    """Scheduling policy parameters."""

    epoch_len: int
    p_bar_mw: np.ndarray
    mode: str
    levels: PowerLevelSet
    n_prb: int

    def __post_init__(self):
        if self.epoch_len < 1:
            raise ValueError("epoch_len must be >= 1")
        self.p_bar_mw = np.atleast_1d(np.asarray(self.p_bar_mw, dtype=np.float64))
        if np.any(self.p_bar_mw <= 0):
            raise ValueError("power budgets must be positive")
        if self.mode not in (MODE_RELAY, MODE_NO_RELAY):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.n_prb < 1:
            raise ValueError("n_prb must be >= 1")


@dataclass
class SchedulingDecision:
    """Per-slot PRB assignment with receiver, power and queue selection.

    ``prb_of_ms[i]`` is the PRB held by MS i or -1; silent MSs hold no PRB.
    ``receiver`` uses MS indices with ``BS``/``SILENT`` codes, ``power_dbm``
    is -inf for silent MSs, and ``own_selected`` marks BS links draining the
    own queue.  ``objective`` is the realized back-pressure objective value.
    """

    prb_of_ms: np.ndarray
    receiver: np.ndarray
    power_dbm: np.ndarray
    power_mw: np.ndarray
    rate: np.ndarray
    own_selected: np.ndarray
    objective: float
    n_prb: int

    def validate(self) -> None:
        held = self.prb_of_ms[self.prb_of_ms >= 0]
        if np.any(self.prb_of_ms >= self.n_prb):
            raise ValueError("PRB index out of range")
        if held.size != np.unique(held).size:
            raise ValueError("a PRB is assigned to more than one MS")
        active = self.receiver != SILENT
        if np.any(active != (self.prb_of_ms >= 0)):
            raise ValueError("active transmitters and PRB holders must coincide")
        if np.any(self.receiver == np.arange(self.receiver.size)):
            raise ValueError("an MS cannot transmit to itself")
        if np.any(self.own_selected & (self.receiver != BS)):
            raise ValueError("queue selection is defined only for BS links")

    def ms_of_prb(self) -> np.ndarray:
        """Inverse map: for each PRB the transmitting MS, or -1 if unused."""
        out = np.full(self.n_prb, -1, dtype=np.int64)
        for i, p in enumerate(self.prb_of_ms):
            if p >= 0:
                out[p] = i
        return out


def link_rate_tables(
    topology: NetworkTopology, levels: PowerLevelSet, channel: ChannelParams, grid: GridSpec
):
    """Rates for all links at all levels: (L, N, N) MS-to-MS and (L, N) MS-to-BS."""
    pos_m = topology.positions_m(grid)
    bs_m = np.asarray(grid.bs_position, dtype=np.float64)
    pl_ms, pl_bs = path_loss_matrix(pos_m, bs_m, channel, grid)
    return rates_for_levels(pl_ms, levels.dbm, channel), rates_for_levels(pl_bs, levels.dbm, channel)


def _best_links(snapshot: StaleSnapshot, rates_ms, rates_bs, levels: PowerLevelSet, mode: str):
    """Per-transmitter best (gamma, receiver, level index, rate).

    Scan order realizes the tie-breaking contract: the BS receiver precedes
    MS receivers in index order, and lower power wins within a receiver.
    Candidates that cannot beat the zero-valued silence option are reported
    with SILENT receiver and zero weight.
    """
    n = snapshot.n_ms
    L = levels.n_levels
    u_cost = snapshot.u[:, None] * levels.mw[None, :]  # (N, L)
    if mode == MODE_NO_RELAY:
        gamma_bs = snapshot.x[:, None] * rates_bs.T - u_cost  # (N, L)
        cand = gamma_bs[:, None, :]  # (N, 1, L): receiver axis has BS only
        n_recv = 1
    else:
        maxxy = np.maximum(snapshot.x, snapshot.y)
        gamma_bs = maxxy[:, None] * rates_bs.T - u_cost
        diff = snapshot.x[:, None] - snapshot.y[None, :]  # (N, N) tx, rx
        gamma_ms = diff[None, :, :] * rates_ms - snapshot.u[None, :, None] * levels.mw[:, None, None]
        gamma_ms = np.moveaxis(gamma_ms, 0, 2)  # (N, N, L) tx, rx, level
        gamma_ms[np.arange(n), np.arange(n), :] = -np.inf
        cand = np.concatenate([gamma_bs[:, None, :], gamma_ms], axis=1)  # (N, 1+N, L)
        n_recv = 1 + n
    flat = cand.reshape(n, n_recv * L)
    best_flat = np.argmax(flat, axis=1)
    best_gamma = flat[np.arange(n), best_flat]
    recv_axis = best_flat // L
    level_idx = (best_flat % L).astype(np.int64)
    if mode == MODE_NO_RELAY:
        receiver = np.full(n, BS, dtype=np.int64)
    else:
        receiver = np.where(recv_axis == 0, BS, recv_axis - 1).astype(np.int64)
    rate = np.where(
        receiver == BS,
        rates_bs[level_idx, np.arange(n)],
        rates_ms[level_idx, np.arange(n), np.maximum(receiver, 0)],
    )
    silent = best_gamma <= 0.0
    best_gamma = np.where(silent, 0.0, best_gamma)
    receiver = np.where(silent, SILENT, receiver)
    level_idx = np.where(silent, -1, level_idx)
    rate = np.where(silent, 0, rate)
    return best_gamma, receiver, level_idx, rate


def opt_pow(
    tx: int,
    rx: int,
    snapshot: StaleSnapshot,
    topology: NetworkTopology,
    levels: PowerLevelSet,
    to_bs: bool,
    channel: ChannelParams,
    grid: GridSpec,
) -> tuple[float | None, float]:
    """Best transmit power and its back-pressure weight for one link.

    For a BS link the weight is max(X_tx, Y_tx) * rate(P) - U_tx * P; for an
    MS link it is (X_tx - Y_rx) * rate(P) - U_tx * P.  The implicit
    no-transmission option has weight 0, and ties go to the lowest power, so
    the returned power is None whenever no level beats staying silent.
    """
    if not to_bs and tx == rx:
        raise ValueError("transmitter and receiver must differ")
    pos_m = topology.positions_m(grid)
    rx_m = np.asarray(grid.bs_position, dtype=np.float64) if to_bs else pos_m[rx]
    if to_bs:
        backlog = max(int(snapshot.x[tx]), int(snapshot.y[tx]))
    else:
        backlog = int(snapshot.x[tx]) - int(snapshot.y[rx])
    best_power: float | None = None
    best_gamma = 0.0
    for l in range(levels.n_levels):
        rate = link_rate(pos_m[tx], rx_m, float(levels.dbm[l]), channel, grid)
        gamma = backlog * rate - snapshot.u[tx] * levels.mw[l]
        if gamma > best_gamma:
            best_gamma = gamma
            best_power = float(levels.dbm[l])
    return best_power, float(best_gamma)


@dataclass
class LinkWeights:
    """Bipartite (MS x PRB) edge weights with the per-edge best link choice.

    Rates do not depend on the PRB, so every PRB column of one MS carries the
    same weight; the matrix form is materialized on demand.
    """

    weight: np.ndarray
    receiver: np.ndarray
    level_idx: np.ndarray
    rate: np.ndarray
    n_prb: int
    levels: PowerLevelSet

    def matrix(self) -> np.ndarray:
        return np.tile(self.weight[:, None], (1, self.n_prb))

    def power_dbm(self) -> np.ndarray:
        return np.where(self.level_idx >= 0, self.levels.dbm[np.maximum(self.level_idx, 0)], -np.inf)


def build_link_weights(
    snapshot: StaleSnapshot,
    topology: NetworkTopology,
    levels: PowerLevelSet,
    channel: ChannelParams,
    grid: GridSpec,
    n_prb: int = 1,
    mode: str = MODE_RELAY,
) -> LinkWeights:
    """Best back-pressure weight per transmitter over all receivers and powers."""
    rates_ms, rates_bs = link_rate_tables(topology, levels, channel, grid)
    gamma, receiver, level_idx, rate = _best_links(snapshot, rates_ms, rates_bs, levels, mode)
    return LinkWeights(gamma, receiver, level_idx, rate, n_prb, levels)


def decide(
    slot: int,
    snapshot: StaleSnapshot,
    topology: NetworkTopology,
    config: PolicyConfig,
    channel: ChannelParams,
    grid: GridSpec,
    solver: str = "collapse",
) -> SchedulingDecision:
    """Scheduling decision for one slot from stale queues and current topology.

    The decision maximizes the slot objective over all PRB matchings: since
    all PRB columns of one MS carry equal weight, the default solver keeps
    the min(N, n_prb) highest positive weights (ties to the lower MS index);
    ``solver="matching"`` runs the general bipartite matcher instead, which
    must produce the same objective value.
    """
    if slot // config.epoch_len != snapshot.epoch:
        raise ValueError(
            f"slot {slot} is outside snapshot epoch {snapshot.epoch} (T={config.epoch_len})"
        )
    links = build_link_weights(
        snapshot, topology, config.levels, channel, grid, config.n_prb, config.mode
    )
    n = snapshot.n_ms
    if solver == "collapse":
        positive = np.flatnonzero(links.weight > 0.0)
        order = positive[np.lexsort((positive, -links.weight[positive]))]
        selected = np.sort(order[: config.n_prb])
    elif solver == "matching":
        match = max_weight_matching(links.matrix())
        selected = np.array(sorted(i for i, _ in match.pairs), dtype=np.int64)
    else:
        raise ValueError(f"unknown solver {solver!r}")

    prb_of_ms = np.full(n, -1, dtype=np.int64)
    prb_of_ms[selected] = np.arange(selected.size)
    receiver = np.full(n, SILENT, dtype=np.int64)
    receiver[selected] = links.receiver[selected]
    rate = np.zeros(n, dtype=np.int64)
    rate[selected] = links.rate[selected]
    power_dbm = np.full(n, -np.inf)
    power_mw = np.zeros(n)
    level_idx = links.level_idx[selected]
    power_dbm[selected] = config.levels.dbm[level_idx]
    power_mw[selected] = config.levels.mw[level_idx]
    own = np.zeros(n, dtype=bool)
    bs_links = receiver == BS
    if config.mode == MODE_NO_RELAY:
        own[bs_links] = True
    else:
        own[bs_links] = snapshot.x[bs_links] >= snapshot.y[bs_links]
    objective = float(sum(float(links.weight[i]) for i in selected))
    decision = SchedulingDecision(
        prb_of_ms, receiver, power_dbm, power_mw, rate, own, objective, config.n_prb
    )
    decision.validate()
    return decision
