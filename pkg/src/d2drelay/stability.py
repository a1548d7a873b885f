"""Stability-region membership for small explicit network instances.

An instance lists the topology set with its stationary probabilities, the
power vectors (per-MS receiver and transmit power, one receiver per MS), a
rate table, and per-MS average power budgets.  An arrival-rate vector lies
inside the region iff some randomized policy - pick power vector k with
probability w_sk in topology s, and let MS i drain its own queue toward the
BS with probability q_isk - serves every own queue at least at its arrival
rate, serves every relay queue at least at its inflow rate, and respects
every power budget.  Membership reduces to a linear feasibility problem via
the exact substitution v_isk = w_sk * q_isk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .channel import ChannelParams, link_rate
from .grid import GridSpec, MobilityParams, NetworkTopology, stationary_distribution
from .policy import PowerLevelSet
from .queues import BS, SILENT

VERDICT_INSIDE = "inside"
VERDICT_OUTSIDE = "outside"


class MembershipSolveError(RuntimeError):
    """The LP solver failed to produce a usable answer."""


@dataclass
class PowerVector:
    """One joint action: per-MS receiver (BS/SILENT/MS index) and power in mW."""

    receiver: np.ndarray
    power_mw: np.ndarray

    def __post_init__(self):
        self.receiver = np.asarray(self.receiver, dtype=np.int64)
        self.power_mw = np.asarray(self.power_mw, dtype=np.float64)
        if self.receiver.shape != self.power_mw.shape:
            raise ValueError("receiver and power_mw must share a shape")
        if np.any(self.receiver == np.arange(self.receiver.size)):
            raise ValueError("an MS cannot transmit to itself")
        silent = self.receiver == SILENT
        if np.any(self.power_mw[silent] != 0):
            raise ValueError("silent MSs must have zero power")
        if np.any(self.power_mw[~silent] <= 0):
            raise ValueError("active MSs must have positive power")

    @property
    def n_ms(self) -> int:
        return self.receiver.size

    def key(self) -> tuple:
        return tuple(zip(self.receiver.tolist(), self.power_mw.tolist()))


@dataclass
class StabilityInstance:
    """Explicit tables defining a small instance of the stability problem."""

    pi: np.ndarray  # (S,) topology probabilities
    vectors: list  # M power vectors
    rates: np.ndarray  # (S, M, N): rate of MS i's active link under (s, k)
    p_bar_mw: np.ndarray  # (N,)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.p_bar_mw = np.asarray(self.p_bar_mw, dtype=np.float64)
        if abs(self.pi.sum() - 1.0) > 1e-9 or np.any(self.pi <= 0):
            raise ValueError("pi must be strictly positive and sum to 1")
        s, m, n = self.rates.shape
        if s != self.pi.size or m != len(self.vectors) or n != self.p_bar_mw.size:
            raise ValueError("rate table shape inconsistent with pi/vectors/budgets")
        if np.any(self.rates < 0):
            raise ValueError("rates must be nonnegative")
        for k, vec in enumerate(self.vectors):
            if vec.n_ms != n:
                raise ValueError("power vector arity mismatch")
            if np.any(self.rates[:, k, :][:, vec.receiver == SILENT] != 0):
                raise ValueError("silent links must have zero rate")

    @property
    def n_topologies(self) -> int:
        return self.pi.size

    @property
    def n_vectors(self) -> int:
        return len(self.vectors)

    @property
    def n_ms(self) -> int:
        return self.p_bar_mw.size

    def bs_rate(self) -> np.ndarray:
        """(S, M, N) rate toward the BS (zero where the receiver is not the BS)."""
        recv = np.stack([v.receiver for v in self.vectors])  # (M, N)
        return np.where(recv[None, :, :] == BS, self.rates, 0.0)

    def ms_rate(self) -> np.ndarray:
        """(S, M, N) rate toward another MS."""
        recv = np.stack([v.receiver for v in self.vectors])
        return np.where(recv[None, :, :] >= 0, self.rates, 0.0)

    def inflow(self) -> np.ndarray:
        """(S, M, N) scheduled relay inflow into each MS."""
        recv = np.stack([v.receiver for v in self.vectors])
        n = self.n_ms
        out = np.zeros_like(self.rates)
        for k in range(self.n_vectors):
            for j in range(n):
                r = recv[k, j]
                if r >= 0:
                    out[:, k, r] += self.rates[:, k, j]
        return out

    def power(self) -> np.ndarray:
        """(M, N) transmit power of each MS under each vector."""
        return np.stack([v.power_mw for v in self.vectors])

    def service_ceiling(self) -> np.ndarray:
        """(N,) upper bound on any policy's own-queue service rate per MS."""
        total = self.bs_rate() + self.ms_rate()
        best = total.max(axis=1)  # (S, N)
        return (self.pi[:, None] * best).sum(axis=0)


@dataclass
class RandomizedPolicy:
    """Constants (w, q) of a stationary randomized policy."""

    w: np.ndarray  # (S, M)
    q: np.ndarray  # (S, M, N)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.w.ndim != 2 or self.q.shape[:2] != self.w.shape:
            raise ValueError("w must be (S, M) and q (S, M, N)")
        if np.any(self.w < -1e-12) or np.any(self.w.sum(axis=1) > 1 + 1e-9):
            raise ValueError("w rows must be probabilities summing to at most 1")
        if np.any(self.q < -1e-12) or np.any(self.q > 1 + 1e-12):
            raise ValueError("q entries must lie in [0, 1]")


@dataclass
class MembershipResult:
    verdict: str
    witness: RandomizedPolicy
    slack: float

    @property
    def inside(self) -> bool:
        return self.verdict == VERDICT_INSIDE


def enumerate_power_vectors(
    n_ms: int,
    levels: PowerLevelSet,
    max_active: int | None = None,
    cap: int = 10**6,
) -> list:
    """All joint (receiver, level) assignments with one receiver per MS.

    Each MS is silent or transmits to the BS or to one other MS at one of the
    configured levels; vectors with more than ``max_active`` simultaneous
    transmitters are dropped.  Raises if the enumeration would exceed ``cap``.
    """
    if max_active is None:
        max_active = n_ms
    per_ms = 1 + (n_ms - 1 + 1) * levels.n_levels  # silence + receivers x levels
    est = per_ms**n_ms
    if est > cap:
        raise ValueError(
            f"power vector enumeration would produce about {est} vectors (cap {cap})"
        )
    choices = [(SILENT, 0.0)]
    vectors: list[PowerVector] = []

    def options(i: int):
        opts = [(SILENT, 0.0)]
        for l in range(levels.n_levels):
            opts.append((BS, float(levels.mw[l])))
            for j in range(n_ms):
                if j != i:
                    opts.append((j, float(levels.mw[l])))
        return opts

    all_opts = [options(i) for i in range(n_ms)]
    idx = [0] * n_ms
    seen = set()
    while True:
        recv = np.array([all_opts[i][idx[i]][0] for i in range(n_ms)], dtype=np.int64)
        pw = np.array([all_opts[i][idx[i]][1] for i in range(n_ms)])
        if int((recv != SILENT).sum()) <= max_active:
            vec = PowerVector(recv, pw)
            key = vec.key()
            if key not in seen:
                seen.add(key)
                vectors.append(vec)
        # odometer increment
        pos = n_ms - 1
        while pos >= 0:
            idx[pos] += 1
            if idx[pos] < len(all_opts[pos]):
                break
            idx[pos] = 0
            pos -= 1
        if pos < 0:
            return vectors


def check_membership(lam: np.ndarray, inst: StabilityInstance, tol: float = 1e-9) -> MembershipResult:
    """Maximum-slack membership test of an arrival-rate vector.

    Solves, in variables w_sk and v_isk = w_sk * q_isk (the substitution is
    exact since 0 <= v <= w recovers q = v/w on the support), the largest t
    such that every own-queue service exceeds lambda_i + t, every relay queue
    drains its inflow with margin t, and every power budget holds with margin
    t.  Inside iff the best margin is nonnegative (within ``tol``).
    """
    lam = np.asarray(lam, dtype=np.float64)
    S, M, N = inst.rates.shape
    if lam.shape != (N,):
        raise ValueError(f"lambda must have shape ({N},)")
    n_w = S * M
    n_var = n_w + S * M * N + 1  # w, v, t
    t_col = n_var - 1

    def wcol(s, k):
        return s * M + k

    def vcol(s, k, i):
        return n_w + (s * M + k) * N + i

    bs = inst.bs_rate()
    ms = inst.ms_rate()
    inflow = inst.inflow()
    power = inst.power()

    rows = []
    rhs = []

    def add_row(cols, vals, b):
        rows.append((cols, vals))
        rhs.append(b)

    # sum_k w_sk <= 1
    for s in range(S):
        add_row([wcol(s, k) for k in range(M)], [1.0] * M, 1.0)
    # v <= w
    for s in range(S):
        for k in range(M):
            for i in range(N):
                add_row([vcol(s, k, i), wcol(s, k)], [1.0, -1.0], 0.0)
    # own-queue service: sum pi * (bs * v + ms * w) >= lam_i + t
    for i in range(N):
        cols, vals = [], []
        for s in range(S):
            for k in range(M):
                if bs[s, k, i] != 0.0:
                    cols.append(vcol(s, k, i))
                    vals.append(-inst.pi[s] * bs[s, k, i])
                if ms[s, k, i] != 0.0:
                    cols.append(wcol(s, k))
                    vals.append(-inst.pi[s] * ms[s, k, i])
        cols.append(t_col)
        vals.append(1.0)
        add_row(cols, vals, -lam[i])
    # relay queue: sum pi * bs * (w - v) >= sum pi * inflow * w + t
    for i in range(N):
        cols, vals = [], []
        for s in range(S):
            for k in range(M):
                coeff_w = -inst.pi[s] * bs[s, k, i] + inst.pi[s] * inflow[s, k, i]
                if coeff_w != 0.0:
                    cols.append(wcol(s, k))
                    vals.append(coeff_w)
                if bs[s, k, i] != 0.0:
                    cols.append(vcol(s, k, i))
                    vals.append(inst.pi[s] * bs[s, k, i])
        cols.append(t_col)
        vals.append(1.0)
        add_row(cols, vals, 0.0)
    # power budget: sum pi * power_i(k) * w + t <= P_bar_i
    for i in range(N):
        cols, vals = [], []
        for s in range(S):
            for k in range(M):
                if power[k, i] != 0.0:
                    cols.append(wcol(s, k))
                    vals.append(inst.pi[s] * power[k, i])
        cols.append(t_col)
        vals.append(1.0)
        add_row(cols, vals, inst.p_bar_mw[i])

    A = np.zeros((len(rows), n_var))
    for r, (cols, vals) in enumerate(rows):
        for c, v in zip(cols, vals):
            A[r, c] += v
    b = np.array(rhs)
    c = np.zeros(n_var)
    c[t_col] = -1.0  # maximize t
    bounds = [(0.0, None)] * (n_var - 1) + [(None, None)]
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if not res.success:
        raise MembershipSolveError(f"LP solver failed: {res.message}")
    slack = float(res.x[t_col])
    w = res.x[:n_w].reshape(S, M)
    v = res.x[n_w : n_w + S * M * N].reshape(S, M, N)
    w = np.clip(w, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(w[:, :, None] > 1e-12, v / np.maximum(w[:, :, None], 1e-300), 0.0)
    q = np.clip(q, 0.0, 1.0)
    verdict = VERDICT_INSIDE if slack >= -tol else VERDICT_OUTSIDE
    return MembershipResult(verdict, RandomizedPolicy(w, q), slack)


def sample_randomized_policy(
    policy: RandomizedPolicy, s: int, rng: np.random.Generator
) -> tuple[int | None, np.ndarray]:
    """Draw one slot's action: power vector index (None = silence) and per-MS
    own-queue choices for the BS links."""
    w = policy.w[s]
    cum = np.cumsum(w)
    u = rng.random()
    n = policy.q.shape[2]
    if u >= cum[-1]:
        return None, np.zeros(n, dtype=bool)
    k = int(np.searchsorted(cum, u, side="right"))
    own = rng.random(n) < policy.q[s, k]
    return k, own


def instance_from_grid(
    grid: GridSpec,
    channel: ChannelParams,
    mobility: MobilityParams,
    levels: PowerLevelSet,
    p_bar_mw: np.ndarray,
    n_ms: int,
    max_active: int | None = None,
    cap_topologies: int = 4096,
) -> StabilityInstance:
    """Build an explicit instance from a tiny grid.

    Topologies enumerate all joint MS placements (positions ** n_ms), with
    probabilities from the product of the per-MS stationary distributions;
    rates come from the physical link-rate model.
    """
    n_pts = grid.n_points
    n_topo = n_pts**n_ms
    if n_topo > cap_topologies:
        raise ValueError(f"{n_topo} joint topologies exceed cap {cap_topologies}")
    pis = [stationary_distribution(grid, mobility, ms=i) for i in range(n_ms)]
    vectors = enumerate_power_vectors(n_ms, levels, max_active=max_active)
    level_of_mw = {float(levels.mw[l]): float(levels.dbm[l]) for l in range(levels.n_levels)}

    pi = np.ones(n_topo)
    rates = np.zeros((n_topo, len(vectors), n_ms))
    bs_m = np.asarray(grid.bs_position, dtype=np.float64)
    for t in range(n_topo):
        flat = []
        rem = t
        for _ in range(n_ms):
            flat.append(rem % n_pts)
            rem //= n_pts
        idx = grid.unflatten_index(np.array(flat))
        topo = NetworkTopology(slot=0, positions=idx)
        pos_m = topo.positions_m(grid)
        for i in range(n_ms):
            pi[t] *= pis[i][flat[i]]
        for k, vec in enumerate(vectors):
            for i in range(n_ms):
                r = vec.receiver[i]
                if r == SILENT:
                    continue
                dbm = level_of_mw[float(vec.power_mw[i])]
                rx_m = bs_m if r == BS else pos_m[r]
                rates[t, k, i] = link_rate(pos_m[i], rx_m, dbm, channel, grid)
    return StabilityInstance(pi, vectors, rates, np.asarray(p_bar_mw, dtype=np.float64))


# ---------------------------------------------------------------------------
# Instance files: self-describing key-value text.

def save_instance(inst: StabilityInstance, path) -> None:
    lines = [
        "# stability instance: topologies, power vectors, rate table, budgets",
        f"n_ms = {inst.n_ms}",
        f"n_topologies = {inst.n_topologies}",
        f"n_vectors = {inst.n_vectors}",
        "pi = " + " ".join(repr(float(p)) for p in inst.pi),
        "p_bar_mw = " + " ".join(repr(float(p)) for p in inst.p_bar_mw),
        "# action <vector> <ms> = <receiver> <power_mw>; receiver: bs, none, or an MS index",
    ]
    for k, vec in enumerate(inst.vectors):
        for i in range(inst.n_ms):
            r = vec.receiver[i]
            name = "bs" if r == BS else ("none" if r == SILENT else str(int(r)))
            lines.append(f"action {k} {i} = {name} {repr(float(vec.power_mw[i]))}")
    lines.append("# rate <topology> <vector> <ms> = packets/slot on that MS's active link")
    for s in range(inst.n_topologies):
        for k in range(inst.n_vectors):
            for i in range(inst.n_ms):
                r = inst.rates[s, k, i]
                if r != 0.0:
                    lines.append(f"rate {s} {k} {i} = {repr(float(r))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_instance(path) -> StabilityInstance:
    scalars: dict[str, str] = {}
    actions: dict[tuple[int, int], tuple[int, float]] = {}
    rate_entries: dict[tuple[int, int, int], float] = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            parts = key.split()
            if parts[0] == "action":
                k, i = int(parts[1]), int(parts[2])
                rname, pw = value.split()
                recv = BS if rname == "bs" else (SILENT if rname == "none" else int(rname))
                actions[(k, i)] = (recv, float(pw))
            elif parts[0] == "rate":
                s, k, i = int(parts[1]), int(parts[2]), int(parts[3])
                rate_entries[(s, k, i)] = float(value)
            else:
                scalars[key] = value
    try:
        n_ms = int(scalars["n_ms"])
        n_topo = int(scalars["n_topologies"])
        n_vec = int(scalars["n_vectors"])
        pi = np.array([float(x) for x in scalars["pi"].split()])
        p_bar = np.array([float(x) for x in scalars["p_bar_mw"].split()])
    except KeyError as exc:
        raise ValueError(f"instance file missing field {exc}") from exc
    vectors = []
    for k in range(n_vec):
        recv = np.full(n_ms, SILENT, dtype=np.int64)
        pw = np.zeros(n_ms)
        for i in range(n_ms):
            if (k, i) in actions:
                recv[i], pw[i] = actions[(k, i)]
        vectors.append(PowerVector(recv, pw))
    rates = np.zeros((n_topo, n_vec, n_ms))
    for (s, k, i), r in rate_entries.items():
        rates[s, k, i] = r
    return StabilityInstance(pi, vectors, rates, p_bar)


def region_sweep(inst: StabilityInstance, lam_grid: np.ndarray) -> list[MembershipResult]:
    """Membership results for each row of an (n_points, N) grid of rate vectors."""
    return [check_membership(lam, inst) for lam in np.asarray(lam_grid, dtype=np.float64)]
