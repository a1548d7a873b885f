"""Empirical stability classification from backlog trajectories.

A run is classified from the least-squares slope of the total backlog over
the second half of the horizon: stable when the slope is small and the final
backlog is moderate, unstable when the backlog grows fast, inconclusive in
between.  Thresholds scale with the number of MSs and are configurable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VERDICT_STABLE = "stable"
VERDICT_UNSTABLE = "unstable"
VERDICT_INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class StabilityThresholds:
    """Slope thresholds in packets/slot per MS; final bound in packets total.

    ``final_bound=None`` defaults to the backlog an unstable-slope run would
    accumulate over the measured window: slope_unstable * n_ms * window.
    """

    slope_stable_per_ms: float = 0.01
    slope_unstable_per_ms: float = 0.1
    final_bound: float | None = None

    def resolve_final_bound(self, n_ms: int, window: int) -> float:
        if self.final_bound is not None:
            return self.final_bound
        return self.slope_unstable_per_ms * n_ms * window


@dataclass
class StabilityVerdict:
    verdict: str
    slope: float
    ci_halfwidth: float
    final_sum: float
    n_ms: int
    window: int
    thresholds: StabilityThresholds

    @property
    def stable(self) -> bool:
        return self.verdict == VERDICT_STABLE


class SlopeAccumulator:
    """Online least-squares slope of per-slot series over a fixed window.

    Feed one value per slot (vectorized over runs); slots before the window
    start are ignored.  Keeps O(runs) memory regardless of horizon.
    """

    def __init__(self, n_runs: int, start: int, window: int):
        if window < 2:
            raise ValueError("window must span at least 2 slots")
        self.start = start
        self.window = window
        self._count = 0
        self.s_y = np.zeros(n_runs)
        self.s_ty = np.zeros(n_runs)
        self.s_yy = np.zeros(n_runs)
        self.final = np.zeros(n_runs)

    def add(self, slot: int, values: np.ndarray) -> None:
        if slot < self.start:
            return
        tau = slot - self.start
        if tau >= self.window:
            raise ValueError("more slots fed than the configured window")
        values = np.asarray(values, dtype=np.float64)
        self._count += 1
        self.s_y += values
        self.s_ty += tau * values
        self.s_yy += values * values
        self.final = values

    def slopes(self) -> tuple[np.ndarray, np.ndarray]:
        """Least-squares slope and its 95% CI halfwidth per run."""
        w = self._count
        if w != self.window:
            raise ValueError(f"accumulator saw {w} slots, expected {self.window}")
        s_t = w * (w - 1) / 2.0
        s_tt = (w - 1) * w * (2 * w - 1) / 6.0
        sxx = s_tt - s_t * s_t / w
        sxy = self.s_ty - s_t * self.s_y / w
        syy = self.s_yy - self.s_y * self.s_y / w
        slope = sxy / sxx
        sse = np.maximum(syy - slope * sxy, 0.0)
        dof = max(w - 2, 1)
        se = np.sqrt(sse / dof / sxx)
        return slope, 1.96 * se


def slope_of_series(y: np.ndarray) -> tuple[float, float]:
    """Slope and CI halfwidth of the last half of a 1-D backlog series."""
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    start = n // 2
    win = y[start:]
    w = win.size
    acc = SlopeAccumulator(1, 0, w)
    acc._count = w
    acc.s_y[0] = win.sum()
    acc.s_ty[0] = np.dot(np.arange(w, dtype=np.float64), win)
    acc.s_yy[0] = np.dot(win, win)
    acc.final[0] = win[-1]
    slope, ci = acc.slopes()
    return float(slope[0]), float(ci[0])


def classify_from_stats(
    slope: float,
    final_sum: float,
    n_ms: int,
    window: int,
    thresholds: StabilityThresholds | None = None,
    ci_halfwidth: float = 0.0,
) -> StabilityVerdict:
    th = thresholds or StabilityThresholds()
    s_lo = th.slope_stable_per_ms * n_ms
    s_hi = th.slope_unstable_per_ms * n_ms
    bound = th.resolve_final_bound(n_ms, window)
    if slope >= s_hi:
        verdict = VERDICT_UNSTABLE
    elif slope <= s_lo and final_sum <= bound:
        verdict = VERDICT_STABLE
    else:
        verdict = VERDICT_INCONCLUSIVE
    return StabilityVerdict(verdict, slope, ci_halfwidth, final_sum, n_ms, window, th)
