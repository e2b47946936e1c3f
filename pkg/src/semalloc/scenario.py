"""Uplink network model: users, path loss, SNR, rate and delay.

Scenario files are INI text (see ``load_scenario``).  All randomness in
``sample_users`` comes from counter-based Philox streams keyed on
``(seed, user, draw)``, so one user's draws never depend on how many other
values were drawn before it.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace

import numpy as np

# per-user draw keys; append only, never renumber
DRAW_DISTANCE = 0
DRAW_DATA = 1
DRAW_DELAY = 2
DRAW_SNR = 3
DRAW_XI = 4
DRAW_MIN_BANDWIDTH = 5
DRAW_STRICT_TARGET = 6


class ScenarioError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class UndeliverableError(ArithmeticError):
    """Positive payload with zero rate."""


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(x)


def dbm_per_hz_to_w_per_hz(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    user_count: int = 10
    total_bandwidth_hz: float = 15e6
    max_power_w: float = 0.5
    noise_psd_w_per_hz: float = dbm_per_hz_to_w_per_hz(-173.0)
    penalty_exponent: float = 2.0
    cell_radius_m: float = 100.0
    min_user_distance_m: float = 1.0
    pathloss_exponent: float = 3.76
    # free-space gain (lambda / 4 pi)^2 at 1 m for a 2 GHz carrier
    pathloss_ref_gain: float = 1.42e-4
    rng_seed: int = 0
    raw_data_bits_range: tuple[float, float] = (3e6, 5e6)
    delay_bound_s_range: tuple[float, float] = (0.4e-3, 0.6e-3)
    snr_threshold_db_range: tuple[float, float] = (20.0, 25.0)
    xi_range: tuple[float, float] = (0.6, 0.9)
    min_bandwidth_hz_range: tuple[float, float] = (0.5e6, 1.5e6)

    def __post_init__(self):
        if int(self.user_count) != self.user_count or self.user_count < 1:
            raise ScenarioError("user_count", "must be a positive integer")
        for name in ("total_bandwidth_hz", "max_power_w", "noise_psd_w_per_hz", "pathloss_ref_gain"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ScenarioError(name, f"must be positive, got {v}")
        if not self.penalty_exponent >= 1:
            raise ScenarioError("penalty_exponent", "must be >= 1")
        if not self.min_user_distance_m > 0:
            raise ScenarioError("min_user_distance_m", "must be positive")
        if not self.cell_radius_m > self.min_user_distance_m:
            raise ScenarioError("cell_radius_m", "must exceed min_user_distance_m")
        if not self.pathloss_exponent > 0:
            raise ScenarioError("pathloss_exponent", "must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ScenarioError("rng_seed", "must be a 64-bit unsigned integer")
        for name in ("raw_data_bits_range", "delay_bound_s_range", "snr_threshold_db_range",
                     "xi_range", "min_bandwidth_hz_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ScenarioError(name, "lower bound exceeds upper bound")
        lo, hi = self.xi_range
        if not 0 < lo <= hi <= 1:
            raise ScenarioError("xi_range", "must lie in (0, 1]")
        for name in ("raw_data_bits_range", "delay_bound_s_range", "min_bandwidth_hz_range"):
            if getattr(self, name)[0] <= 0:
                raise ScenarioError(name, "must be positive")

    def with_bandwidth(self, total_bandwidth_hz: float) -> "ScenarioConfig":
        return replace(self, total_bandwidth_hz=float(total_bandwidth_hz))

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, rng_seed=int(seed))


@dataclass(frozen=True)
class UserProfile:
    id: int
    distance_m: float
    raw_data_bits: float
    snr_threshold_linear: float
    xi_min: float
    xi_max: float
    delay_bound_s: float
    min_bandwidth_hz: float

    def __post_init__(self):
        if not 0 < self.xi_min <= 1:
            raise ScenarioError("xi_min", f"must lie in (0, 1], got {self.xi_min}")
        if not 0 < self.xi_max <= 1:
            raise ScenarioError("xi_max", f"must lie in (0, 1], got {self.xi_max}")
        if self.xi_min > self.xi_max:
            raise ScenarioError("xi_min", "xi_min exceeds xi_max")
        for name in ("snr_threshold_linear", "raw_data_bits", "delay_bound_s",
                     "min_bandwidth_hz", "distance_m"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ScenarioError(name, f"must be positive, got {v}")

    @property
    def snr_threshold_db(self) -> float:
        return linear_to_db(self.snr_threshold_linear)


@dataclass(frozen=True)
class ChannelRealization:
    gains_linear: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        g = np.array(self.gains_linear, dtype=float)
        if g.ndim != 1 or not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise ScenarioError("gains_linear", "every gain must be positive and finite")
        g.setflags(write=False)
        object.__setattr__(self, "gains_linear", g)

    def __len__(self):
        return self.gains_linear.size

    def __getitem__(self, i):
        return float(self.gains_linear[i])


# --------------------------------------------------------------------------
# physics
# --------------------------------------------------------------------------

def channel_gain(distance_m: float, config: ScenarioConfig) -> float:
    if distance_m < config.min_user_distance_m * (1 - 1e-12):
        raise ScenarioError("distance_m", f"{distance_m} m is below the minimum user distance")
    return config.pathloss_ref_gain * distance_m ** (-config.pathloss_exponent)


def snr(power_w: float, gain: float, bandwidth_hz: float, noise_psd: float) -> float:
    """Received SNR ``P h / (beta N0)`` (linear)."""
    if not (power_w > 0 and gain > 0 and bandwidth_hz > 0 and noise_psd > 0):
        raise ValueError("snr arguments must be strictly positive")
    return power_w * gain / (bandwidth_hz * noise_psd)


def transmission_rate(bandwidth_hz: float, snr_linear: float) -> float:
    if bandwidth_hz <= 0 or snr_linear < 0:
        raise ValueError("bandwidth must be positive and snr non-negative")
    return bandwidth_hz * math.log2(1.0 + snr_linear)


def transmission_delay(raw_data_bits: float, compression_rate: float, rate_bps: float) -> float:
    if not 0 <= compression_rate <= 1:
        raise ValueError("compression rate must lie in [0, 1]")
    payload = raw_data_bits * (1.0 - compression_rate)
    if payload <= 0:
        return 0.0
    if rate_bps <= 0:
        raise UndeliverableError("payload cannot be delivered at zero rate")
    return payload / rate_bps


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def user_stream(seed: int, user: int, draw: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(user), int(draw)))
    return np.random.Generator(np.random.Philox(ss))


def sample_users(config: ScenarioConfig) -> tuple[list[UserProfile], ChannelRealization]:
    seed = config.rng_seed
    r0, r1 = config.min_user_distance_m, config.cell_radius_m
    users = []
    for i in range(config.user_count):
        # area-uniform over the annulus
        u = user_stream(seed, i, DRAW_DISTANCE).random()
        dist = math.sqrt(r0 * r0 + u * (r1 * r1 - r0 * r0))
        d0 = user_stream(seed, i, DRAW_DATA).uniform(*config.raw_data_bits_range)
        tau = user_stream(seed, i, DRAW_DELAY).uniform(*config.delay_bound_s_range)
        snr_db = user_stream(seed, i, DRAW_SNR).uniform(*config.snr_threshold_db_range)
        lo, hi = np.sort(user_stream(seed, i, DRAW_XI).uniform(*config.xi_range, size=2))
        bmin = user_stream(seed, i, DRAW_MIN_BANDWIDTH).uniform(*config.min_bandwidth_hz_range)
        users.append(UserProfile(
            id=i, distance_m=dist, raw_data_bits=float(d0),
            snr_threshold_linear=float(db_to_linear(snr_db)),
            xi_min=float(lo), xi_max=float(hi), delay_bound_s=float(tau),
            min_bandwidth_hz=float(bmin),
        ))
    return users, channel_realization(users, config)


def channel_realization(users, config: ScenarioConfig) -> ChannelRealization:
    return ChannelRealization(np.array([channel_gain(u.distance_m, config) for u in users]))


# --------------------------------------------------------------------------
# scenario files
# --------------------------------------------------------------------------

_SCALAR_KEYS = {
    "user_count": int,
    "total_bandwidth_hz": float,
    "max_power_w": float,
    "noise_psd_w_per_hz": float,
    "penalty_exponent": float,
    "cell_radius_m": float,
    "min_user_distance_m": float,
    "pathloss_exponent": float,
    "pathloss_ref_gain": float,
    "rng_seed": int,
}
_RANGE_KEYS = ("raw_data_bits_range", "delay_bound_s_range", "snr_threshold_db_range",
               "xi_range", "min_bandwidth_hz_range")
_USER_KEYS = ("distance_m", "raw_data_bits", "snr_threshold_db", "snr_threshold_linear",
              "xi_min", "xi_max", "delay_bound_s", "min_bandwidth_hz")
_UNITS = {"_dbm_per_hz": "dbm/hz", "_db": "db"}


def _number(key: str, text: str) -> float:
    parts = text.split()
    if not parts:
        raise ScenarioError(key, "missing value")
    if len(parts) > 2:
        raise ScenarioError(key, f"cannot parse {text!r}")
    if len(parts) == 2:
        unit = next((u for suffix, u in _UNITS.items() if key.endswith(suffix)), None)
        if unit is None or parts[1].lower() != unit:
            raise ScenarioError(key, f"unexpected unit {parts[1]!r}")
    try:
        return float(parts[0])
    except ValueError:
        raise ScenarioError(key, f"not a number: {parts[0]!r}") from None


def _range(key: str, text: str) -> tuple[float, float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ScenarioError(key, "expected two numbers")
    return _number(key, parts[0]), _number(key, parts[1])


def parse_config(section) -> ScenarioConfig:
    kwargs = {}
    for key, text in section.items():
        if key == "noise_dbm_per_hz":
            kwargs["noise_psd_w_per_hz"] = dbm_per_hz_to_w_per_hz(_number(key, text))
        elif key in _SCALAR_KEYS:
            value = _number(key, text)
            if _SCALAR_KEYS[key] is int:
                if value != int(value):
                    raise ScenarioError(key, "must be an integer")
                value = int(value)
            kwargs[key] = value
        elif key in _RANGE_KEYS:
            kwargs[key] = _range(key, text)
        else:
            raise ScenarioError(key, "unknown scenario key")
    return ScenarioConfig(**kwargs)


def load_scenario(config_text: str, seed: int | None = None):
    """Parse scenario text into a config and its user list.

    The ``[scenario]`` section holds network-wide keys; users are sampled
    from it and then patched by optional ``[user.<id>]`` blocks.  ``seed``,
    if given, overrides ``rng_seed``.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(config_text)
    except configparser.Error as exc:
        raise ScenarioError("config", f"parse failure: {exc}") from None
    sections = parser.sections()
    unknown = [s for s in sections if s != "scenario" and not s.startswith("user.")]
    if unknown:
        raise ScenarioError(unknown[0], "unknown section")
    config = parse_config(parser["scenario"]) if "scenario" in sections else ScenarioConfig()
    if seed is not None:
        config = config.with_seed(seed)
    users, _ = sample_users(config)
    for name in sections:
        if not name.startswith("user."):
            continue
        try:
            uid = int(name.split(".", 1)[1])
        except ValueError:
            raise ScenarioError(name, "user block id must be an integer") from None
        if not 0 <= uid < len(users):
            raise ScenarioError(name, "user id out of range")
        changes = {}
        for key, text in parser[name].items():
            if key not in _USER_KEYS:
                raise ScenarioError(f"{name}.{key}", "unknown user key")
            value = _number(key, text)
            if key == "snr_threshold_db":
                changes["snr_threshold_linear"] = db_to_linear(value)
            else:
                changes[key] = value
        users[uid] = replace(users[uid], **changes)
    for u in users:
        channel_gain(u.distance_m, config)
    return config, users


def dump_config(config: ScenarioConfig) -> str:
    lines = ["[scenario]"]
    for key in _SCALAR_KEYS:
        value = getattr(config, key)
        lines.append(f"{key} = {value!r}")
    for key in _RANGE_KEYS:
        lo, hi = getattr(config, key)
        lines.append(f"{key} = {lo!r}, {hi!r}")
    return "\n".join(lines) + "\n"
