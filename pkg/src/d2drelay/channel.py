"""Physical channel: ABG path loss and Shannon-capacity link rates.

Path loss follows the alpha-beta-gamma model
``PL(d) = 10*alpha*log10(d/1m) + beta + 10*gamma*log10(f/1GHz)`` with the
UMi-NLOS constants as defaults.  A link's rate in whole packets per slot is
``floor(B * T_slot * log2(1 + SNR) / bits_per_packet)`` over one PRB of
bandwidth B, against thermal noise plus receiver noise figure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec

LN10_OVER_10 = math.log(10.0) / 10.0


@dataclass(frozen=True)
class ChannelParams:
    """Channel and framing constants.

    The noise and slot-length values are calibration defaults, not measured
    constants: one 200 kHz PRB (10 MHz / 50 PRBs), -174 dBm/Hz thermal noise
    with a 7 dB noise figure, and a 1 s slot so that the default packet size
    of 25000 bits yields double-digit packet rates at cell-scale distances.
    """

    abg_alpha: float = 3.5
    abg_beta_db: float = 24.4
    abg_gamma: float = 1.9
    carrier_freq_ghz: float = 3.5
    prb_bandwidth_hz: float = 200e3
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 7.0
    bits_per_packet: int = 25000
    slot_duration_s: float = 1.0

    def __post_init__(self):
        for name in (
            "abg_alpha",
            "abg_gamma",
            "carrier_freq_ghz",
            "prb_bandwidth_hz",
            "noise_figure_db",
            "bits_per_packet",
            "slot_duration_s",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if (
            self.prb_bandwidth_hz <= 0
            or self.bits_per_packet <= 0
            or self.slot_duration_s <= 0
            or self.carrier_freq_ghz <= 0
        ):
            raise ValueError(
                "prb_bandwidth_hz, bits_per_packet, slot_duration_s and carrier_freq_ghz must be positive"
            )

    @property
    def noise_dbm(self) -> float:
        """Total noise power over one PRB, in dBm."""
        return self.noise_psd_dbm_hz + 10.0 * math.log10(self.prb_bandwidth_hz) + self.noise_figure_db

    @property
    def packets_per_bpcu(self) -> float:
        """Packets per slot per bit/s/Hz of spectral efficiency."""
        return self.prb_bandwidth_hz * self.slot_duration_s / self.bits_per_packet


def distance(a, b, grid: GridSpec) -> float:
    """Euclidean distance in meters; same-point pairs use the configured floor."""
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    if ax == bx and ay == by:
        return grid.same_point_distance
    return math.hypot(ax - bx, ay - by)


def path_loss_db(d: float, ch: ChannelParams) -> float:
    """ABG path loss in dB at distance d meters (d > 0)."""
    if d <= 0:
        raise ValueError(f"distance must be > 0, got {d}")
    return (
        10.0 * ch.abg_alpha * math.log10(d)
        + ch.abg_beta_db
        + 10.0 * ch.abg_gamma * math.log10(ch.carrier_freq_ghz)
    )


def snr_db(power_dbm: float, pl_db: float, ch: ChannelParams) -> float:
    return power_dbm - pl_db - ch.noise_dbm


def link_rate(tx, rx, power_dbm: float | None, ch: ChannelParams, grid: GridSpec) -> int:
    """Rate in whole packets per slot for a single link.

    ``power_dbm=None`` means no transmission and always yields 0.  Positions
    are in meters.  The rate is nondecreasing in power and nonincreasing in
    distance.
    """
    if power_dbm is None or power_dbm == -math.inf:
        return 0
    d = distance(tx, rx, grid)
    gamma_db = snr_db(power_dbm, path_loss_db(d, ch), ch)
    snr = math.exp(gamma_db * LN10_OVER_10)
    return int(ch.packets_per_bpcu * math.log2(1.0 + snr))


def rates_for_levels(pl_db: np.ndarray, levels_dbm: np.ndarray, ch: ChannelParams) -> np.ndarray:
    """Vectorized rates, shape (L,) + pl_db.shape, in whole packets per slot."""
    pl_db = np.asarray(pl_db, dtype=np.float64)
    levels = np.asarray(levels_dbm, dtype=np.float64).reshape((-1,) + (1,) * pl_db.ndim)
    gamma_db = levels - pl_db - ch.noise_dbm
    snr = np.exp(gamma_db * LN10_OVER_10)
    rate = np.floor(ch.packets_per_bpcu * np.log2(1.0 + snr))
    return rate.astype(np.int64)


def path_loss_matrix(pos_m: np.ndarray, bs_m: np.ndarray, ch: ChannelParams, grid: GridSpec):
    """Path loss between all MS pairs and from each MS to the BS.

    Returns ``(pl_ms, pl_bs)`` with shapes (N, N) and (N,).  Same-point pairs
    (including an MS sharing the BS grid point) use ``same_point_distance``.
    The diagonal of ``pl_ms`` is not meaningful (an MS never transmits to
    itself) but is filled with the same-point value.
    """
    pos_m = np.asarray(pos_m, dtype=np.float64)
    diff = pos_m[:, None, :] - pos_m[None, :, :]
    d_ms = np.sqrt((diff * diff).sum(axis=-1))
    d_ms[d_ms == 0.0] = grid.same_point_distance
    db = pos_m - np.asarray(bs_m, dtype=np.float64)[None, :]
    d_bs = np.sqrt((db * db).sum(axis=-1))
    d_bs[d_bs == 0.0] = grid.same_point_distance
    const = ch.abg_beta_db + 10.0 * ch.abg_gamma * math.log10(ch.carrier_freq_ghz)
    pl_ms = 10.0 * ch.abg_alpha * np.log10(d_ms) + const
    pl_bs = 10.0 * ch.abg_alpha * np.log10(d_bs) + const
    return pl_ms, pl_bs


def dbm_to_mw(dbm) -> np.ndarray | float:
    return np.power(10.0, np.asarray(dbm, dtype=np.float64) / 10.0)
