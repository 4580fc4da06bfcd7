"""Scenario parameters: loading, validation, unit conversion and seed policy.

Config files are TOML with the sections ``[radio]``, ``[traffic]``,
``[learning]``, ``[channel]``, ``[mobility]`` and ``[run]``.  Powers are
written in dBm (noise density in dBm/Hz), times in ms and rates in bit/s;
everything is converted to SI linear units on load.  Every key is optional
and defaults to the reference scenario (K=N=20, 10 dBm per RB, 17 dBm budget,
3 ms slots, 2.5 Mbit/s status traffic, 500 B packets, d=10 ms, M=200).
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w

__all__ = [
    "ConfigError",
    "ChannelParams",
    "MobilityParams",
    "LearningParams",
    "ScenarioConfig",
    "SeedStreams",
    "dbm_to_watt",
    "watt_to_dbm",
    "derive_arrival",
    "load_config",
    "loads_config",
    "dump_config",
    "dumps_config",
    "config_to_dict",
    "env_overrides",
]


class ConfigError(ValueError):
    """Raised for unparsable or invalid scenario files.

    ``problems`` lists every violated constraint, one string per field.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt * 1000.0)


def derive_arrival(arrival_rate: float, tau: float, Z: float) -> float:
    """Packets generated per slot, ``arrival_rate * tau / Z`` (may be fractional)."""
    return arrival_rate * tau / Z


@dataclass(frozen=True)
class ChannelParams:
    # Log-distance path loss, PL = ref_loss + 10 n log10(d / ref_distance).
    ref_loss_db: float = 63.3
    ref_distance: float = 10.0
    los_exponent: float = 1.77
    nlos_exponent: float = 2.9
    wlos_corner_loss_db: float = 10.0
    nlos_corner_loss_db: float = 10.0
    shadow_std_los_db: float = 3.0
    shadow_std_wlos_db: float = 3.0
    shadow_std_nlos_db: float = 3.0
    shadow_ar: float = 0.9
    fading: str = "rayleigh"
    fading_ar: float = 0.0
    min_distance: float = 1.0

    def problems(self) -> list[str]:
        out = []
        if self.los_exponent <= 0:
            out.append("channel.los_exponent must be > 0")
        if self.nlos_exponent <= 0:
            out.append("channel.nlos_exponent must be > 0")
        if self.ref_distance <= 0:
            out.append("channel.ref_distance_m must be > 0")
        for name in ("shadow_std_los_db", "shadow_std_wlos_db", "shadow_std_nlos_db"):
            if getattr(self, name) < 0:
                out.append(f"channel.{name} must be >= 0")
        for name in ("shadow_ar", "fading_ar"):
            if not 0.0 <= getattr(self, name) < 1.0:
                out.append(f"channel.{name} must be in [0, 1)")
        if self.fading not in ("rayleigh", "none"):
            out.append("channel.fading must be 'rayleigh' or 'none'")
        if self.min_distance <= 0:
            out.append("channel.min_distance_m must be > 0")
        return out


@dataclass(frozen=True)
class MobilityParams:
    area: float = 250.0
    block: float = 50.0
    speed: float = 60.0 / 3.6
    speed_jitter: float = 0.0
    gap_mean: float = 15.0
    gap_min: float = 5.0
    gap_max: float = 30.0
    gap_reversion: float = 0.01
    gap_noise: float = 0.3
    p_straight: float = 0.5
    p_left: float = 0.25
    p_right: float = 0.25
    boundary: str = "wrap"

    def problems(self) -> list[str]:
        out = []
        if self.area <= 0 or self.block <= 0:
            out.append("mobility.area_m and mobility.block_m must be > 0")
        else:
            ratio = self.area / self.block
            if abs(ratio - round(ratio)) > 1e-9:
                out.append("mobility.block_m must divide mobility.area_m")
        if self.speed < 0:
            out.append("mobility.speed_kmh must be >= 0")
        if not 0.0 <= self.speed_jitter < 1.0:
            out.append("mobility.speed_jitter must be in [0, 1)")
        if not 0 < self.gap_min <= self.gap_mean <= self.gap_max:
            out.append("mobility gap bounds must satisfy 0 < gap_min <= gap_mean <= gap_max")
        if not 0.0 <= self.gap_reversion <= 1.0:
            out.append("mobility.gap_reversion must be in [0, 1]")
        if self.gap_noise < 0:
            out.append("mobility.gap_noise_m must be >= 0")
        probs = (self.p_straight, self.p_left, self.p_right)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
            out.append("mobility turn probabilities must be >= 0 and sum to 1")
        if self.boundary not in ("wrap", "reflect"):
            out.append("mobility.boundary must be 'wrap' or 'reflect'")
        return out


@dataclass(frozen=True)
class LearningParams:
    """GPR agent knobs.

    ``h0`` is in ms; ``None`` means "use the AoI threshold d".  ``candidates``
    is either ``"exhaustive"`` or an integer cap S on evaluated actions.
    ``objective_unit`` is the unit in which the acquisition weighs the
    predictive variance: ``"ms"`` (sigma^2 in ms^2, the default) or ``"s"``.
    """

    refit_period: int = 50
    min_fit_size: int = 10
    nu: float = 0.5
    h0: float | None = None
    lambda0: float = 1.0
    jitter_ratio: float = 1e-6
    max_jitter_ratio: float = 1e-2
    candidates: int | str = 512
    fit_restarts: int = 3
    fit_max_evals: int = 200
    bound_ratio: float = 1e3
    standard_scaling: bool = False
    center: bool = False
    objective_unit: str = "ms"

    def problems(self) -> list[str]:
        out = []
        if self.refit_period < 1:
            out.append("learning.refit_period must be >= 1")
        if self.min_fit_size < 1:
            out.append("learning.min_fit_size must be >= 1")
        if self.nu <= 0:
            out.append("learning.nu must be > 0")
        if self.h0 is not None and self.h0 <= 0:
            out.append("learning.h0_ms must be > 0")
        if self.lambda0 <= 0:
            out.append("learning.lambda0 must be > 0")
        if self.jitter_ratio < 0:
            out.append("learning.jitter_ratio must be >= 0")
        if self.max_jitter_ratio < self.jitter_ratio:
            out.append("learning.max_jitter_ratio must be >= learning.jitter_ratio")
        if isinstance(self.candidates, str):
            if self.candidates != "exhaustive":
                out.append("learning.candidates must be 'exhaustive' or an integer >= 2")
        elif self.candidates < 2:
            out.append("learning.candidates must be 'exhaustive' or an integer >= 2")
        if self.fit_restarts < 1 or self.fit_max_evals < 1:
            out.append("learning.fit_restarts and learning.fit_max_evals must be >= 1")
        if self.bound_ratio < 1:
            out.append("learning.bound_ratio must be >= 1")
        if self.objective_unit not in ("s", "ms"):
            out.append("learning.objective_unit must be 's' or 'ms'")
        return out


@dataclass(frozen=True)
class ScenarioConfig:
    """All scenario parameters in SI units (W, W/Hz, s, Hz, bits, bit/s)."""

    K: int = 20
    N: int = 20
    W: float = 180e3
    tau: float = 3e-3
    p: float = dbm_to_watt(10.0)
    L: int = 1
    P_max: float = dbm_to_watt(17.0)
    Z: float = 4000.0
    N0: float = dbm_to_watt(-174.0)
    arrival_rate: float = 2.5e6
    d: float = 10e-3
    M: int = 200
    alpha_c: float = 1.0
    alpha_i: float = 100.0
    T: int = 5000
    seed: int = 0
    warmup: int = -1
    supersede: bool = False
    ccdf_step: float = 1e-3
    channel: ChannelParams = field(default_factory=ChannelParams)
    mobility: MobilityParams = field(default_factory=MobilityParams)
    learning: LearningParams = field(default_factory=LearningParams)

    @property
    def A(self) -> float:
        return derive_arrival(self.arrival_rate, self.tau, self.Z)

    @property
    def d_ms(self) -> float:
        return self.d * 1e3

    @property
    def h0_ms(self) -> float:
        return self.learning.h0 if self.learning.h0 is not None else self.d_ms

    @property
    def warmup_slots(self) -> int:
        """Slots excluded from metrics; ``warmup=-1`` means ``max(M, 100)``."""
        return max(self.M, 100) if self.warmup < 0 else self.warmup

    def problems(self) -> list[str]:
        out = []
        for name in ("K", "N", "L", "T", "M"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        for name in ("tau", "W", "Z", "d", "p", "P_max"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0")
        if self.N0 < 0:
            out.append("N0 must be >= 0")
        if self.arrival_rate < 0:
            out.append("arrival_rate must be >= 0")
        for name in ("alpha_c", "alpha_i"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        if not 0 <= self.seed < 2**64:
            out.append("seed must be a 64-bit unsigned integer")
        if self.ccdf_step <= 0:
            out.append("ccdf_step must be > 0")
        out += self.channel.problems()
        out += self.mobility.problems()
        out += self.learning.problems()
        return out

    def validate(self) -> "ScenarioConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def with_(self, **changes) -> "ScenarioConfig":
        """Copy with top-level or dotted (``"learning.nu"``) fields replaced."""
        nested: dict[str, dict[str, Any]] = {}
        top = {}
        for key, value in changes.items():
            if "." in key:
                section, name = key.split(".", 1)
                nested.setdefault(section, {})[name] = value
            else:
                top[key] = value
        for section, sub in nested.items():
            top[section] = replace(getattr(self, section), **sub)
        return replace(self, **top)


# File schema: (section, file key, config path, converter, type).
# Converters are (file -> internal, internal -> file) pairs.
_ID = (lambda v: v, lambda v: v)
_MS = (lambda v: v * 1e-3, lambda v: v * 1e3)
_DBM = (dbm_to_watt, watt_to_dbm)
_KMH = (lambda v: v / 3.6, lambda v: v * 3.6)

_SCHEMA = [
    ("radio", "K", "K", _ID, int),
    ("radio", "N", "N", _ID, int),
    ("radio", "W_hz", "W", _ID, float),
    ("radio", "tau_ms", "tau", _MS, float),
    ("radio", "p_dbm", "p", _DBM, float),
    ("radio", "L", "L", _ID, int),
    ("radio", "P_max_dbm", "P_max", _DBM, float),
    ("radio", "N0_dbm_hz", "N0", _DBM, float),
    ("traffic", "arrival_rate_bps", "arrival_rate", _ID, float),
    ("traffic", "Z_bits", "Z", _ID, float),
    ("traffic", "d_ms", "d", _MS, float),
    ("traffic", "supersede", "supersede", _ID, bool),
    ("learning", "M", "M", _ID, int),
    ("learning", "alpha_c", "alpha_c", _ID, float),
    ("learning", "alpha_i", "alpha_i", _ID, float),
    ("learning", "refit_period", "learning.refit_period", _ID, int),
    ("learning", "min_fit_size", "learning.min_fit_size", _ID, int),
    ("learning", "nu", "learning.nu", _ID, float),
    ("learning", "h0_ms", "learning.h0", _ID, float),
    ("learning", "lambda0", "learning.lambda0", _ID, float),
    ("learning", "jitter_ratio", "learning.jitter_ratio", _ID, float),
    ("learning", "max_jitter_ratio", "learning.max_jitter_ratio", _ID, float),
    ("learning", "candidates", "learning.candidates", _ID, "candidates"),
    ("learning", "fit_restarts", "learning.fit_restarts", _ID, int),
    ("learning", "fit_max_evals", "learning.fit_max_evals", _ID, int),
    ("learning", "bound_ratio", "learning.bound_ratio", _ID, float),
    ("learning", "standard_scaling", "learning.standard_scaling", _ID, bool),
    ("learning", "center", "learning.center", _ID, bool),
    ("learning", "objective_unit", "learning.objective_unit", _ID, str),
    ("channel", "ref_loss_db", "channel.ref_loss_db", _ID, float),
    ("channel", "ref_distance_m", "channel.ref_distance", _ID, float),
    ("channel", "los_exponent", "channel.los_exponent", _ID, float),
    ("channel", "nlos_exponent", "channel.nlos_exponent", _ID, float),
    ("channel", "wlos_corner_loss_db", "channel.wlos_corner_loss_db", _ID, float),
    ("channel", "nlos_corner_loss_db", "channel.nlos_corner_loss_db", _ID, float),
    ("channel", "shadow_std_los_db", "channel.shadow_std_los_db", _ID, float),
    ("channel", "shadow_std_wlos_db", "channel.shadow_std_wlos_db", _ID, float),
    ("channel", "shadow_std_nlos_db", "channel.shadow_std_nlos_db", _ID, float),
    ("channel", "shadow_ar", "channel.shadow_ar", _ID, float),
    ("channel", "fading", "channel.fading", _ID, str),
    ("channel", "fading_ar", "channel.fading_ar", _ID, float),
    ("channel", "min_distance_m", "channel.min_distance", _ID, float),
    ("mobility", "area_m", "mobility.area", _ID, float),
    ("mobility", "block_m", "mobility.block", _ID, float),
    ("mobility", "speed_kmh", "mobility.speed", _KMH, float),
    ("mobility", "speed_jitter", "mobility.speed_jitter", _ID, float),
    ("mobility", "gap_mean_m", "mobility.gap_mean", _ID, float),
    ("mobility", "gap_min_m", "mobility.gap_min", _ID, float),
    ("mobility", "gap_max_m", "mobility.gap_max", _ID, float),
    ("mobility", "gap_reversion", "mobility.gap_reversion", _ID, float),
    ("mobility", "gap_noise_m", "mobility.gap_noise", _ID, float),
    ("mobility", "p_straight", "mobility.p_straight", _ID, float),
    ("mobility", "p_left", "mobility.p_left", _ID, float),
    ("mobility", "p_right", "mobility.p_right", _ID, float),
    ("mobility", "boundary", "mobility.boundary", _ID, str),
    ("run", "T", "T", _ID, int),
    ("run", "seed", "seed", _ID, int),
    ("run", "warmup", "warmup", _ID, int),
    ("run", "ccdf_step_ms", "ccdf_step", _MS, float),
]


def _coerce(value, kind, where):
    if kind == "candidates":
        if value == "exhaustive":
            return value
        kind = int
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _from_mapping(doc: dict) -> ScenarioConfig:
    known: dict[str, dict[str, tuple]] = {}
    for section, key, path, conv, kind in _SCHEMA:
        known.setdefault(section, {})[key] = (path, conv, kind)
    changes = {}
    problems = []
    for section, body in doc.items():
        if section not in known:
            problems.append(f"unknown section [{section}]")
            continue
        if not isinstance(body, dict):
            problems.append(f"[{section}] must be a table")
            continue
        for key, value in body.items():
            if key not in known[section]:
                problems.append(f"unknown key {section}.{key}")
                continue
            path, conv, kind = known[section][key]
            try:
                value = _coerce(value, kind, f"{section}.{key}")
                changes[path] = conv[0](value) if kind in (float,) else value
            except ConfigError as exc:
                problems.extend(exc.problems)
            except (ValueError, OverflowError) as exc:
                problems.append(f"{section}.{key}: {exc}")
    if problems:
        raise ConfigError(problems)
    return ScenarioConfig().with_(**changes).validate()


ENV_PREFIX = "AOIGPR_"


def env_overrides(environ=None, prefix: str = ENV_PREFIX) -> dict:
    """Config overrides from ``AOIGPR_<SECTION>__<KEY>`` environment variables.

    Section and key match case-insensitively (``AOIGPR_RUN__T=500``,
    ``AOIGPR_LEARNING__CANDIDATES=exhaustive``).  Values are read as TOML
    scalars, so ``true``, ``1e-3`` and ``"text"`` keep their types; anything
    that is not a valid TOML value is taken as a bare string.
    """
    import os

    environ = os.environ if environ is None else environ
    lookup = {}
    for section, key, *_ in _SCHEMA:
        lookup[(section.lower(), key.lower())] = (section, key)
    out: dict[str, dict[str, Any]] = {}
    problems = []
    for name in sorted(environ):
        if not name.startswith(prefix):
            continue
        rest = name[len(prefix):]
        if "__" not in rest:
            continue
        section, key = rest.split("__", 1)
        hit = lookup.get((section.lower(), key.lower()))
        if hit is None:
            problems.append(f"{name}: no config key {section.lower()}.{key}")
            continue
        raw = environ[name]
        try:
            value = tomli.loads(f"v = {raw}")["v"]
        except tomli.TOMLDecodeError:
            value = raw
        out.setdefault(hit[0], {})[hit[1]] = value
    if problems:
        raise ConfigError(problems)
    return out


def _merge(doc: dict, overrides: dict | None) -> dict:
    if not overrides:
        return doc
    merged = {k: dict(v) if isinstance(v, dict) else v for k, v in doc.items()}
    for section, body in overrides.items():
        target = merged.setdefault(section, {})
        if isinstance(target, dict):
            target.update(body)
    return merged


def loads_config(text: str, overrides: dict | None = None) -> ScenarioConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    return _from_mapping(_merge(doc, overrides))


def load_config(path, overrides: dict | None = None) -> ScenarioConfig:
    """Read a TOML scenario file; missing keys take the reference defaults.

    ``overrides`` is a ``{section: {key: value}}`` mapping in file units
    applied on top of the file (see :func:`env_overrides`).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return loads_config(text, overrides)
    except ConfigError as exc:
        raise ConfigError([f"{path}: {p}" for p in exc.problems]) from None


def _get(cfg, path):
    obj = cfg
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _exact_file_value(value: float, conv) -> float:
    """File-unit value that converts back to exactly ``value``.

    Unit conversions are not bit-exact inverses, so nudge the file value by a
    few ulps until the round trip is exact (falls back to the plain value).
    """
    to_internal, to_file = conv
    guess = to_file(value)
    if to_internal(guess) == value:
        return guess
    for direction in (math.inf, -math.inf):
        g = guess
        for _ in range(64):
            g = math.nextafter(g, direction)
            if to_internal(g) == value:
                return g
    return guess


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """File-unit nested mapping (the inverse of loading)."""
    doc: dict[str, dict[str, Any]] = {}
    for section, key, path, conv, kind in _SCHEMA:
        value = _get(cfg, path)
        if value is None:
            continue
        if kind is float:
            value = _exact_file_value(float(value), conv)
        doc.setdefault(section, {})[key] = value
    return doc


def dumps_config(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def dump_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))


def config_snapshot(cfg: ScenarioConfig) -> dict:
    """SI-unit nested dict, for manifests."""
    return dataclasses.asdict(cfg)


class SeedStreams:
    """Independent named random substreams spawned from one master seed.

    Each stream name (optionally with integer keys such as an agent index)
    maps to its own :class:`numpy.random.SeedSequence` child, so drawing
    more or fewer numbers in one subsystem never shifts another.
    """

    NAMES = ("mobility", "fading", "agent-init", "baseline-policy", "tie-breaking", "agent")

    def __init__(self, seed: int):
        self.seed = int(seed)

    def seed_sequence(self, name: str, *keys: int) -> np.random.SeedSequence:
        tag = zlib.crc32(name.encode("ascii"))
        return np.random.SeedSequence(self.seed, spawn_key=(tag, *map(int, keys)))

    def generator(self, name: str, *keys: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence(name, *keys)))

