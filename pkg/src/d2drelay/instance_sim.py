"""Slot-driven simulation of explicit stability instances, batched over runs.

Topologies are drawn IID from the instance's stationary probabilities.  Two
policies are supported: replaying a fixed randomized policy (w, q), and the
online back-pressure policy choosing the best power vector from the
instance's action list each slot using epoch-stale queue lengths.  All runs
in a batch advance in lockstep, which keeps 10^5-slot sweeps over hundreds
of rate points affordable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classify import SlopeAccumulator, StabilityThresholds, StabilityVerdict, classify_from_stats
from .queues import BS, SILENT, MODE_CONSERVING, MODE_FAITHFUL
from .stability import RandomizedPolicy, StabilityInstance


@dataclass
class BatchStats:
    """Per-run outcomes of a lockstep batch simulation."""

    slope: np.ndarray
    ci_halfwidth: np.ndarray
    final_sum: np.ndarray
    max_u: np.ndarray  # (B, N)
    avg_power_mw: np.ndarray  # (B, N)
    horizon: int
    n_ms: int

    def verdicts(self, thresholds: StabilityThresholds | None = None) -> list[StabilityVerdict]:
        window = self.horizon - self.horizon // 2
        return [
            classify_from_stats(
                float(self.slope[b]),
                float(self.final_sum[b]),
                self.n_ms,
                window,
                thresholds,
                float(self.ci_halfwidth[b]),
            )
            for b in range(self.slope.size)
        ]


def _action_tables(inst: StabilityInstance):
    """Tables indexed by action 0 = silence, action k+1 = instance vector k."""
    S, M, N = inst.rates.shape
    recv = np.full((M + 1, N), SILENT, dtype=np.int64)
    power = np.zeros((M + 1, N))
    rate = np.zeros((S, M + 1, N))
    for k, vec in enumerate(inst.vectors):
        recv[k + 1] = vec.receiver
        power[k + 1] = vec.power_mw
        rate[:, k + 1, :] = inst.rates[:, k, :]
    return recv, power, rate


def _step_queues(x, y, u, recv_b, rate_b, own_b, pow_b, arrivals, p_bar, mode):
    """One batched queue update; arrays are (B, N) float64."""
    to_ms = recv_b >= 0
    to_bs = recv_b == BS
    own_rate = np.where(to_ms | (to_bs & own_b), rate_b, 0.0)
    relay_rate = np.where(to_bs & ~own_b, rate_b, 0.0)
    if mode == MODE_FAITHFUL:
        moved = np.where(to_ms, rate_b, 0.0)
    else:
        moved = np.where(to_ms, np.minimum(x, rate_b), 0.0)
    b_idx, ms_idx = np.nonzero(to_ms)
    inflow = np.zeros_like(y)
    np.add.at(inflow, (b_idx, recv_b[b_idx, ms_idx]), moved[b_idx, ms_idx])
    x_new = np.maximum(x - own_rate, 0.0) + arrivals
    y_new = np.maximum(y - relay_rate, 0.0) + inflow
    u_new = np.maximum(u - p_bar, 0.0) + pow_b
    return x_new, y_new, u_new


def _run_batch(inst, lam, horizon, seed, mode, choose_action):
    """Common lockstep loop; ``choose_action`` returns per-run action rows."""
    if mode not in (MODE_FAITHFUL, MODE_CONSERVING):
        raise ValueError(f"unknown mode {mode!r}")
    lam = np.asarray(lam, dtype=np.float64)
    B, N = lam.shape
    rng = np.random.default_rng(seed)
    recv, power, rate = _action_tables(inst)
    cum_pi = np.cumsum(inst.pi)
    a_max = np.maximum(1, np.ceil(3.0 * lam.max(axis=1, keepdims=True)))
    p_bar = np.broadcast_to(inst.p_bar_mw, (B, N))

    x = np.zeros((B, N))
    y = np.zeros((B, N))
    u = np.zeros((B, N))
    rows = np.arange(B)
    start = horizon // 2
    acc = SlopeAccumulator(B, start, horizon - start)
    max_u = np.zeros((B, N))
    power_sum = np.zeros((B, N))

    state = {}
    for n in range(horizon):
        s_b = np.searchsorted(cum_pi, rng.random(B), side="right")
        s_b = np.minimum(s_b, inst.n_topologies - 1)
        act_b, own_b = choose_action(n, s_b, x, y, u, rng, state)
        recv_b = recv[act_b]
        rate_b = rate[s_b, act_b]
        pow_b = power[act_b]
        arrivals = np.minimum(rng.poisson(lam), a_max)
        x, y, u = _step_queues(x, y, u, recv_b, rate_b, own_b, pow_b, arrivals, p_bar, mode)
        np.maximum(max_u, u, out=max_u)
        power_sum += pow_b
        acc.add(n, x.sum(axis=1) + y.sum(axis=1))
    slope, ci = acc.slopes()
    return BatchStats(slope, ci, acc.final, max_u, power_sum / horizon, horizon, N)


def simulate_randomized_batch(
    inst: StabilityInstance,
    policies: list[RandomizedPolicy],
    lam: np.ndarray,
    horizon: int,
    seed: int,
    mode: str = MODE_FAITHFUL,
) -> BatchStats:
    """Replay one fixed randomized policy per run, all runs in lockstep."""
    lam = np.asarray(lam, dtype=np.float64)
    B, N = lam.shape
    if len(policies) != B:
        raise ValueError("need one policy per run")
    M = inst.n_vectors
    w = np.stack([p.w for p in policies])  # (B, S, M)
    q = np.stack([p.q for p in policies])  # (B, S, M, N)
    rows = np.arange(B)

    def choose(n, s_b, x, y, u, rng, state):
        w_b = w[rows, s_b]  # (B, M)
        cum = np.cumsum(w_b, axis=1)
        pick = rng.random((B, 1))
        k_b = (cum < pick).sum(axis=1)  # M means silence
        silent = k_b >= M
        q_b = q[rows, s_b, np.minimum(k_b, M - 1)]  # (B, N)
        own_b = rng.random((B, N)) < q_b
        own_b[silent] = False
        act_b = np.where(silent, 0, k_b + 1)
        return act_b, own_b

    return _run_batch(inst, lam, horizon, seed, mode, choose)


def simulate_backpressure_batch(
    inst: StabilityInstance,
    lam: np.ndarray,
    epoch_len: int,
    horizon: int,
    seed: int,
    mode: str = MODE_FAITHFUL,
) -> BatchStats:
    """Online back-pressure over the instance's power vectors, epoch-stale queues.

    Each slot picks the action (including silence) maximizing the sum over
    MSs of backlog-differential times rate minus virtual-power cost, with
    queue lengths frozen at the last epoch boundary; BS links drain the own
    queue iff its frozen backlog is at least the relay queue's.
    """
    if epoch_len < 1:
        raise ValueError("epoch_len must be >= 1")
    lam = np.asarray(lam, dtype=np.float64)
    B, N = lam.shape
    recv, power, rate = _action_tables(inst)
    is_bs = recv == BS
    is_ms = recv >= 0
    target = np.maximum(recv, 0)  # dummy 0 where not an MS link

    def choose(n, s_b, x, y, u, rng, state):
        if n % epoch_len == 0:
            state["xs"], state["ys"], state["us"] = x.copy(), y.copy(), u.copy()
        xs, ys, us = state["xs"], state["ys"], state["us"]
        maxxy = np.maximum(xs, ys)  # (B, N)
        y_t = ys[:, target]  # (B, A, N)
        diff = np.where(is_bs[None], maxxy[:, None, :], xs[:, None, :] - y_t)
        rate_b = rate[s_b]  # (B, A, N)
        contrib = np.where(is_ms[None] | is_bs[None], diff * rate_b, 0.0)
        obj = contrib.sum(axis=2) - (us[:, :, None] * power.T[None]).sum(axis=1)
        act_b = np.argmax(obj, axis=1)  # silence is action 0: wins ties
        own_b = (xs >= ys) & is_bs[act_b]
        return act_b, own_b

    return _run_batch(inst, lam, horizon, seed, mode, choose)
