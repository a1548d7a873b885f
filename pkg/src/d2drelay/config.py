"""Experiment configuration files: flat, commented ``key = value`` text.

Keys use dotted section names (``grid.spacing``, ``policy.mode``).  Parsing
fills every documented default, rejects unknown keys, and can echo the fully
resolved configuration back out; re-parsing the echo reproduces the same
experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams
from .classify import StabilityThresholds
from .grid import GridSpec, MobilityParams
from .policy import MODE_NO_RELAY, MODE_RELAY, PAPER_LEVELS_DBM, PolicyConfig, PowerLevelSet
from .queues import ArrivalConfig, MODE_CONSERVING, MODE_FAITHFUL
from .sim import SimConfig, TOPOLOGY_IID, TOPOLOGY_RANDOM_WALK

KINDS = ("run", "sweep", "capacity", "region")


class ConfigError(ValueError):
    """Configuration file violates the schema; the message names the key."""


def _parse_float(text: str) -> float:
    return float(text)

def _parse_int(text: str) -> int:
    return int(text)

def _parse_str(text: str) -> str:
    return text

def _parse_floats(text: str) -> tuple[float, ...]:
    if not text.strip():
        return ()
    return tuple(float(x) for x in text.replace(",", " ").split())

def _parse_ints(text: str) -> tuple[int, ...]:
    if not text.strip():
        return ()
    return tuple(int(x) for x in text.replace(",", " ").split())


def _positive(value):
    if value <= 0:
        raise ValueError("must be positive")
    return value

def _nonnegative(value):
    if value < 0:
        raise ValueError("must be nonnegative")
    return value

def _choice(*allowed):
    def check(value):
        if value not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}")
        return value
    return check

def _five_weights(value):
    if len(value) != 5:
        raise ValueError("need exactly 5 weights: stay, up, down, left, right")
    if any(w < 0 for w in value) or sum(value) <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    return value

def _nonempty_levels(value):
    if len(value) == 0:
        raise ValueError("need at least one power level")
    return value

def _identity(value):
    return value


@dataclass(frozen=True)
class _Key:
    parse: callable
    default: object
    check: callable = _identity
    help: str = ""


SCHEMA: dict[str, _Key] = {
    "kind": _Key(_parse_str, "run", _choice(*KINDS), "experiment kind"),
    "seeds": _Key(_parse_ints, (0,), help="rng seeds, comma separated"),
    "out": _Key(_parse_str, "out", help="output directory"),
    "grid.extent_x": _Key(_parse_float, 400.0, _nonnegative, "grid width in meters"),
    "grid.extent_y": _Key(_parse_float, 400.0, _nonnegative, "grid height in meters"),
    "grid.spacing": _Key(_parse_float, 10.0, _positive, "grid point spacing in meters"),
    "grid.bs_x": _Key(_parse_float, 200.0, _nonnegative, "BS x position in meters"),
    "grid.bs_y": _Key(_parse_float, 200.0, _nonnegative, "BS y position in meters"),
    "grid.same_point_distance": _Key(_parse_float, 1.0, _positive, "distance charged at zero separation"),
    "channel.abg_alpha": _Key(_parse_float, 3.5, _nonnegative, "ABG distance exponent"),
    "channel.abg_beta_db": _Key(_parse_float, 24.4, help="ABG offset in dB"),
    "channel.abg_gamma": _Key(_parse_float, 1.9, _nonnegative, "ABG frequency exponent"),
    "channel.carrier_freq_ghz": _Key(_parse_float, 3.5, _positive, "carrier frequency in GHz"),
    "channel.prb_bandwidth_hz": _Key(_parse_float, 200e3, _positive, "bandwidth of one PRB"),
    "channel.noise_psd_dbm_hz": _Key(_parse_float, -174.0, help="noise PSD in dBm/Hz"),
    "channel.noise_figure_db": _Key(_parse_float, 7.0, _nonnegative, "receiver noise figure"),
    "channel.bits_per_packet": _Key(_parse_int, 25000, _positive, "packet size in bits"),
    "channel.slot_duration_s": _Key(_parse_float, 1.0, _positive, "slot length in seconds"),
    "mobility.weights": _Key(
        _parse_floats,
        (1.0, 1.0, 1.0, 1.0, 1.0),
        _five_weights,
        "move weights: stay, up, down, left, right",
    ),
    "arrival.rate": _Key(_parse_float, 0.0, _nonnegative, "symmetric mean packets/slot"),
    "arrival.a_max": _Key(_parse_int, 0, _nonnegative, "arrival cap; 0 = 3x the rate"),
    "power.levels_dbm": _Key(
        _parse_floats, PAPER_LEVELS_DBM, _nonempty_levels, "transmit power levels in dBm"
    ),
    "power.budget_dbm": _Key(_parse_float, 28.0, help="average power budget per MS in dBm"),
    "policy.mode": _Key(_parse_str, MODE_RELAY, _choice(MODE_RELAY, MODE_NO_RELAY)),
    "policy.epoch_len": _Key(_parse_int, 1, _positive, "T: slots per stale-snapshot epoch"),
    "sim.n_ms": _Key(_parse_int, 2, _positive, "number of mobile stations"),
    "sim.n_prb": _Key(_parse_int, 2, _positive, "number of PRBs"),
    "sim.horizon": _Key(_parse_int, 10000, _positive, "slots per run"),
    "sim.topology": _Key(
        _parse_str, TOPOLOGY_RANDOM_WALK, _choice(TOPOLOGY_RANDOM_WALK, TOPOLOGY_IID)
    ),
    "sim.queue_mode": _Key(
        _parse_str, MODE_CONSERVING, _choice(MODE_CONSERVING, MODE_FAITHFUL)
    ),
    "classify.slope_stable": _Key(_parse_float, 0.01, _positive, "stable slope per MS"),
    "classify.slope_unstable": _Key(_parse_float, 0.1, _positive, "unstable slope per MS"),
    "classify.final_bound": _Key(_parse_float, 0.0, _nonnegative, "final backlog bound; 0 = auto"),
    "sweep.rates": _Key(_parse_floats, (), help="arrival rates for kind=sweep"),
    "capacity.rate_lo": _Key(_parse_float, 1.0, _positive, "verified-stable start rate"),
    "capacity.rate_hi": _Key(_parse_float, 100.0, _positive, "verified-unstable end rate"),
    "capacity.resolution": _Key(_parse_float, 1.0, _positive, "bracket width target"),
    "region.instance": _Key(_parse_str, "", help="stability instance file for kind=region"),
    "region.lambda_max": _Key(_parse_float, 1.0, _positive, "rate grid upper corner"),
    "region.grid_points": _Key(_parse_int, 20, _positive, "rate grid points per axis"),
}


@dataclass
class ExperimentSpec:
    """A fully resolved experiment: kind, seeds, outputs, and sub-configs."""

    kind: str
    seeds: tuple[int, ...]
    out: str
    values: dict = field(repr=False)
    explicit: frozenset = frozenset()

    def sim_config(self, mode: str | None = None, rate: float | None = None) -> SimConfig:
        v = self.values
        grid = GridSpec(
            extent_x=v["grid.extent_x"],
            extent_y=v["grid.extent_y"],
            spacing=v["grid.spacing"],
            bs_position=(v["grid.bs_x"], v["grid.bs_y"]),
            same_point_distance=v["grid.same_point_distance"],
        )
        channel = ChannelParams(
            abg_alpha=v["channel.abg_alpha"],
            abg_beta_db=v["channel.abg_beta_db"],
            abg_gamma=v["channel.abg_gamma"],
            carrier_freq_ghz=v["channel.carrier_freq_ghz"],
            prb_bandwidth_hz=v["channel.prb_bandwidth_hz"],
            noise_psd_dbm_hz=v["channel.noise_psd_dbm_hz"],
            noise_figure_db=v["channel.noise_figure_db"],
            bits_per_packet=v["channel.bits_per_packet"],
            slot_duration_s=v["channel.slot_duration_s"],
        )
        n_ms = v["sim.n_ms"]
        weights = np.tile(np.asarray(v["mobility.weights"]), (n_ms, 1))
        arr_rate = v["arrival.rate"] if rate is None else rate
        a_max = v["arrival.a_max"] if v["arrival.a_max"] > 0 else None
        levels = PowerLevelSet(np.asarray(v["power.levels_dbm"]))
        budget_mw = float(10 ** (v["power.budget_dbm"] / 10.0))
        policy = PolicyConfig(
            epoch_len=v["policy.epoch_len"],
            p_bar_mw=np.full(n_ms, budget_mw),
            mode=v["policy.mode"] if mode is None else mode,
            levels=levels,
            n_prb=v["sim.n_prb"],
        )
        return SimConfig(
            grid=grid,
            channel=channel,
            mobility=MobilityParams(weights),
            arrivals=ArrivalConfig.symmetric(n_ms, arr_rate, a_max),
            policy=policy,
            n_ms=n_ms,
            horizon=v["sim.horizon"],
            seed=self.seeds[0],
            topology_process=v["sim.topology"],
            queue_mode=v["sim.queue_mode"],
        )

    def thresholds(self) -> StabilityThresholds:
        v = self.values
        final = v["classify.final_bound"]
        return StabilityThresholds(
            slope_stable_per_ms=v["classify.slope_stable"],
            slope_unstable_per_ms=v["classify.slope_unstable"],
            final_bound=None if final == 0 else final,
        )


def _parse_lines(lines, source: str) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, text = line.partition("=")
        key = key.strip()
        text = text.strip()
        if not eq:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entry = SCHEMA[key]
        try:
            values[key] = entry.check(entry.parse(text))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
    return values


def _resolve(values: dict, overrides: dict | None) -> ExperimentSpec:
    if overrides:
        for key, val in overrides.items():
            if key not in SCHEMA:
                raise ConfigError(f"override: unknown key {key!r}")
            try:
                values[key] = SCHEMA[key].check(val)
            except ValueError as exc:
                raise ConfigError(f"override: {key}: {exc}") from None
    explicit = frozenset(values)
    resolved = {key: values.get(key, entry.default) for key, entry in SCHEMA.items()}
    spec = ExperimentSpec(
        kind=resolved["kind"],
        seeds=tuple(resolved["seeds"]),
        out=resolved["out"],
        values=resolved,
        explicit=explicit,
    )
    if not spec.seeds:
        raise ConfigError("seeds: need at least one seed")
    if spec.kind != "region":
        try:
            spec.sim_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
    else:
        if not resolved["region.instance"]:
            raise ConfigError("region.instance: required for kind=region")
    return spec


def parse_config(path, overrides: dict | None = None) -> ExperimentSpec:
    """Read, validate, and fully resolve a config file.

    ``overrides`` maps schema keys to already-typed values (used for CLI
    flags) and is applied after the file's own values.
    """
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return _resolve(_parse_lines(lines, str(path)), overrides)


def default_spec(overrides: dict | None = None) -> ExperimentSpec:
    """A spec built purely from documented defaults plus overrides."""
    return _resolve({}, overrides)


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(spec: ExperimentSpec) -> str:
    """Render the fully resolved configuration, ready to be re-parsed."""
    lines = ["# resolved experiment configuration"]
    for key, entry in SCHEMA.items():
        comment = f"  # {entry.help}" if entry.help else ""
        lines.append(f"{key} = {_format_value(spec.values[key])}{comment}")
    return "\n".join(lines) + "\n"
