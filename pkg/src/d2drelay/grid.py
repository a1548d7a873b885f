"""Square-grid geometry and reflected random-walk mobility.

Mobile stations (MSs) live on the points of a uniform square grid and move
once per slot to an adjacent grid point or stay put.  Moves that would leave
the grid get their probability reassigned by renormalizing over the feasible
moves, which keeps every row of the transition kernel stochastic and realizes
the reflection at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

# Move order: stay, up (+y), down (-y), left (-x), right (+x).
MOVE_OFFSETS = np.array([[0, 0], [0, 1], [0, -1], [-1, 0], [1, 0]], dtype=np.int64)
N_MOVES = 5


class ConvergenceError(RuntimeError):
    """Iterative computation failed to reach the requested tolerance."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform square grid with a base station pinned on one of its points.

    Distances are in meters.  ``same_point_distance`` is the distance charged
    to a transmitter/receiver pair that occupies the same grid point.
    """

    extent_x: float
    extent_y: float
    spacing: float
    bs_position: tuple[float, float] = (0.0, 0.0)
    same_point_distance: float = 1.0

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError(f"spacing must be > 0, got {self.spacing}")
        if self.extent_x < 0 or self.extent_y < 0:
            raise ValueError("grid extents must be nonnegative")
        if self.same_point_distance <= 0:
            raise ValueError("same_point_distance must be > 0")
        for name, extent in (("extent_x", self.extent_x), ("extent_y", self.extent_y)):
            k = extent / self.spacing
            if abs(k - round(k)) > 1e-9:
                raise ValueError(f"{name}={extent} is not divisible by spacing={self.spacing}")
        bx, by = self.bs_position
        for name, coord in (("x", bx), ("y", by)):
            k = coord / self.spacing
            if abs(k - round(k)) > 1e-9:
                raise ValueError(f"bs_position {name}={coord} not on a grid point")
        if not (0 <= bx <= self.extent_x and 0 <= by <= self.extent_y):
            raise ValueError("bs_position outside the grid extent")

    @property
    def nx(self) -> int:
        """Number of grid points along x."""
        return int(round(self.extent_x / self.spacing)) + 1

    @property
    def ny(self) -> int:
        """Number of grid points along y."""
        return int(round(self.extent_y / self.spacing)) + 1

    @property
    def n_points(self) -> int:
        return self.nx * self.ny

    @property
    def bs_index(self) -> tuple[int, int]:
        bx, by = self.bs_position
        return int(round(bx / self.spacing)), int(round(by / self.spacing))

    def to_meters(self, idx: np.ndarray) -> np.ndarray:
        """Map integer grid indices (..., 2) to coordinates in meters."""
        return np.asarray(idx, dtype=np.float64) * self.spacing

    def flat_index(self, idx: np.ndarray) -> np.ndarray:
        """Flatten (ix, iy) pairs to a single index ix * ny + iy."""
        idx = np.asarray(idx)
        return idx[..., 0] * self.ny + idx[..., 1]

    def unflatten_index(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat)
        return np.stack([flat // self.ny, flat % self.ny], axis=-1)

    def contains_index(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        return (
            (idx[..., 0] >= 0)
            & (idx[..., 0] < self.nx)
            & (idx[..., 1] >= 0)
            & (idx[..., 1] < self.ny)
        )


@dataclass
class NetworkTopology:
    """Positions of all MSs in one slot, as integer grid indices (N, 2)."""

    slot: int
    positions: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must have shape (N, 2)")

    @property
    def n_ms(self) -> int:
        return self.positions.shape[0]

    def validate(self, grid: GridSpec) -> None:
        if not np.all(grid.contains_index(self.positions)):
            raise ValueError("topology has positions outside the grid")

    def positions_m(self, grid: GridSpec) -> np.ndarray:
        return grid.to_meters(self.positions)


@dataclass
class MobilityParams:
    """Per-MS base weights over the moves {stay, up, down, left, right}.

    The effective move distribution at a given position renormalizes the base
    weights over the feasible moves there, so boundary positions never assign
    probability to moves leaving the grid.
    """

    weights: np.ndarray  # (N, 5) nonnegative, each row sums > 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[1] != N_MOVES:
            raise ValueError("weights must have shape (N, 5)")
        if np.any(self.weights < 0):
            raise ValueError("move weights must be nonnegative")
        if np.any(self.weights.sum(axis=1) <= 0):
            raise ValueError("each MS needs positive total move weight")

    @classmethod
    def uniform(cls, n_ms: int) -> "MobilityParams":
        """Equally likely to stay or step to any feasible neighbor."""
        return cls(np.ones((n_ms, N_MOVES)))

    @classmethod
    def stationary(cls, n_ms: int) -> "MobilityParams":
        """Degenerate walk that never moves."""
        w = np.zeros((n_ms, N_MOVES))
        w[:, 0] = 1.0
        return cls(w)

    @property
    def n_ms(self) -> int:
        return self.weights.shape[0]

    def probabilities(self, positions: np.ndarray, grid: GridSpec) -> np.ndarray:
        """Feasible-move probabilities (N, 5) at the given positions."""
        positions = np.asarray(positions, dtype=np.int64)
        cand = positions[:, None, :] + MOVE_OFFSETS[None, :, :]  # (N, 5, 2)
        feasible = grid.contains_index(cand)  # (N, 5)
        w = self.weights * feasible
        tot = w.sum(axis=1, keepdims=True)
        if np.any(tot <= 0):
            raise ValueError("no feasible move with positive weight at some position")
        return w / tot


def step_mobility(
    topology: NetworkTopology,
    params: MobilityParams,
    grid: GridSpec,
    rng: np.random.Generator,
) -> NetworkTopology:
    """Advance every MS by one reflected random-walk step.

    Each MS independently stays or moves to an adjacent grid point according
    to its feasibility-renormalized move distribution.  Deterministic given
    the generator state.
    """
    probs = params.probabilities(topology.positions, grid)
    u = rng.random(topology.n_ms)
    moves = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
    moves = np.minimum(moves, N_MOVES - 1)  # guard against cumsum rounding
    new_pos = topology.positions + MOVE_OFFSETS[moves]
    return NetworkTopology(slot=topology.slot + 1, positions=new_pos)


def transition_matrix(grid: GridSpec, params: MobilityParams, ms: int = 0) -> sp.csr_array:
    """Sparse one-step transition kernel of one MS's walk over flat indices."""
    n = grid.n_points
    ix, iy = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny), indexing="ij")
    pos = np.stack([ix.ravel(), iy.ravel()], axis=1)  # (n, 2)
    single = MobilityParams(params.weights[ms : ms + 1])
    rows, cols, vals = [], [], []
    cand = pos[:, None, :] + MOVE_OFFSETS[None, :, :]
    feasible = grid.contains_index(cand)
    w = single.weights[0] * feasible  # (n, 5)
    tot = w.sum(axis=1)
    if np.any(tot <= 0):
        raise ValueError("no feasible move with positive weight at some position")
    probs = w / tot[:, None]
    flat_from = grid.flat_index(pos)
    for m in range(N_MOVES):
        mask = feasible[:, m] & (probs[:, m] > 0)
        rows.append(flat_from[mask])
        cols.append(grid.flat_index(cand[mask, m]))
        vals.append(probs[mask, m])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_array((vals, (rows, cols)), shape=(n, n))


def stationary_distribution(
    grid: GridSpec,
    params: MobilityParams,
    ms: int = 0,
    tol: float = 1e-12,
    max_iter: int = 500_000,
) -> np.ndarray:
    """Stationary distribution pi of one MS's walk, by power iteration.

    Requires the chain to be irreducible and aperiodic (a positive stay
    weight suffices for aperiodicity).  Returns pi over flat grid indices
    with pi @ P = pi and sum(pi) = 1, to within ``tol`` in L1.
    """
    P = transition_matrix(grid, params, ms)
    n = grid.n_points
    if n == 1:
        return np.array([1.0])
    n_comp, _ = connected_components(P, directed=True, connection="strong")
    if n_comp != 1:
        raise ValueError(f"mobility chain is not irreducible ({n_comp} strongly connected components)")
    if params.weights[ms, 0] <= 0:
        raise ValueError("mobility chain may be periodic: stay weight is zero")
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise ConvergenceError(
        f"stationary distribution did not converge below {tol} within {max_iter} iterations"
    )
