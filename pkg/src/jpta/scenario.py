"""System configuration, user placement and line-of-sight channel synthesis.

All quantities are SI internally. The human-editable scenario file uses dBm
and nanoseconds and is converted at load time (see :func:`load_config`).
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

FieldTag = Literal["near", "far"]


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt * 1000.0)


@dataclass(frozen=True)
class SystemConfig:
    """Scalar system parameters plus solver knobs.

    Defaults reproduce the reference setup: 100 GHz carrier, 10 GHz band,
    64-element ULA, 16 subbands, 16 TTDs, 40 dBm transmit power and a
    -174 dBm/Hz noise floor.
    """

    carrier_frequency_hz: float = 100e9
    bandwidth_hz: float = 10e9
    num_antennas: int = 64
    num_subbands: int = 16
    num_ttds: int = 16
    transmit_power_w: float = 10.0
    noise_psd_w_per_hz: float = dbm_to_watt(-174.0)
    max_delay_s: float = 5e-9
    ttd_grid_points: int = 2000
    num_nf_users: int = 1
    num_ff_users: int = 1
    ao_max_iters: int = 30
    ao_tolerance: float = 1e-5
    penalty_init: float = 1e-5
    speed_of_light_m_s: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if self.num_antennas < 1 or self.num_subbands < 1:
            raise ValueError("num_antennas and num_subbands must be positive")
        if self.num_ttds < 0:
            raise ValueError("num_ttds must be nonnegative")
        if self.num_ttds > 0 and self.num_antennas % self.num_ttds:
            raise ValueError(
                f"num_antennas={self.num_antennas} is not divisible by "
                f"num_ttds={self.num_ttds}"
            )
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.carrier_frequency_hz <= self.bandwidth_hz / 2:
            raise ValueError("carrier_frequency_hz must exceed bandwidth_hz / 2")
        if self.max_delay_s < 0:
            raise ValueError("max_delay_s must be nonnegative")
        if self.transmit_power_w <= 0:
            raise ValueError("transmit_power_w must be positive")
        if self.noise_psd_w_per_hz <= 0:
            raise ValueError("noise_psd_w_per_hz must be positive")
        if self.ttd_grid_points < 2:
            raise ValueError("ttd_grid_points must be at least 2")
        if self.num_nf_users < 0 or self.num_ff_users < 0:
            raise ValueError("user counts must be nonnegative")
        if self.num_users < 1:
            raise ValueError("at least one user is required")
        if self.num_subbands < self.num_users:
            raise ValueError(
                f"num_subbands={self.num_subbands} < num_users={self.num_users}"
            )
        if self.ao_max_iters < 1 or self.ao_tolerance <= 0 or self.penalty_init <= 0:
            raise ValueError("solver knobs must be positive")

    @property
    def num_users(self) -> int:
        return self.num_nf_users + self.num_ff_users

    @property
    def subarray_size(self) -> int:
        return self.num_antennas // self.num_ttds if self.num_ttds else self.num_antennas

    @property
    def wavelength(self) -> float:
        return self.speed_of_light_m_s / self.carrier_frequency_hz

    @property
    def element_spacing(self) -> float:
        return self.wavelength / 2.0

    @property
    def subband_bandwidth_hz(self) -> float:
        return self.bandwidth_hz / self.num_subbands

    @property
    def noise_power_w(self) -> float:
        """Noise power in one subband."""
        return self.noise_psd_w_per_hz * self.subband_bandwidth_hz

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class UserPosition:
    angle_rad: float
    range_m: float
    field_tag: FieldTag

    def __post_init__(self):
        if not 0.0 < self.angle_rad < math.pi:
            raise ValueError(f"angle {self.angle_rad} rad outside (0, pi)")
        if self.range_m <= 0:
            raise ValueError("user range must be positive")
        if self.field_tag not in ("near", "far"):
            raise ValueError(f"unknown field tag {self.field_tag!r}")

    @classmethod
    def at(cls, angle_deg: float, range_m: float, cfg: SystemConfig) -> "UserPosition":
        """Place a user and classify its field region against ``cfg``."""
        tag = "near" if range_m <= rayleigh_distance(cfg) else "far"
        return cls(math.radians(angle_deg), range_m, tag)

    @property
    def angle_deg(self) -> float:
        return math.degrees(self.angle_rad)


def check_user(user: UserPosition, cfg: SystemConfig) -> None:
    """Raise if the user's field tag disagrees with the Rayleigh distance."""
    expected = "near" if user.range_m <= rayleigh_distance(cfg) else "far"
    if user.field_tag != expected:
        raise ValueError(
            f"user at {user.range_m} m tagged {user.field_tag!r}, "
            f"but Rayleigh distance {rayleigh_distance(cfg):.3f} m implies {expected!r}"
        )


@dataclass(frozen=True)
class ChannelSet:
    """Channels ``h[m, k]`` (shape ``(M, K, N)``) and subband centre frequencies."""

    h: np.ndarray
    subband_frequencies_hz: np.ndarray
    users: tuple[UserPosition, ...] = ()

    @property
    def num_subbands(self) -> int:
        return self.h.shape[0]

    @property
    def num_users(self) -> int:
        return self.h.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.h.shape[2]


def subband_frequencies(cfg: SystemConfig) -> np.ndarray:
    m = np.arange(1, cfg.num_subbands + 1)
    M = cfg.num_subbands
    return cfg.carrier_frequency_hz + cfg.bandwidth_hz * (2 * m - 1 - M) / (2 * M)


def rayleigh_distance(cfg: SystemConfig) -> float:
    """``2 D^2 / lambda`` with aperture ``D = (N - 1) d``."""
    aperture = (cfg.num_antennas - 1) * cfg.element_spacing
    return 2.0 * aperture**2 / cfg.wavelength


def element_offsets(cfg: SystemConfig) -> np.ndarray:
    """Dimensionless element positions ``x_n = n - (N + 1) / 2``, n = 1..N."""
    n = np.arange(1, cfg.num_antennas + 1)
    return n - (cfg.num_antennas + 1) / 2.0


def element_offset(n: int, cfg: SystemConfig) -> float:
    """Signed coordinate (meters) of the 1-based element ``n``."""
    if not 1 <= n <= cfg.num_antennas:
        raise IndexError(f"element index {n} outside 1..{cfg.num_antennas}")
    return (n - (cfg.num_antennas + 1) / 2.0) * cfg.element_spacing


def path_differences(user: UserPosition, cfg: SystemConfig) -> np.ndarray:
    """``r_{k,n} - r_k`` for every element, computed without forming ``r_{k,n}``.

    Near-field users keep the second-order (Fresnel) term; far-field users use
    the planar-wave model.
    """
    x = element_offsets(cfg) * cfg.element_spacing
    theta = user.angle_rad
    diff = -x * math.cos(theta)
    if user.field_tag == "near":
        diff = diff + x**2 * math.sin(theta) ** 2 / (2.0 * user.range_m)
    return diff


def propagation_distances(user: UserPosition, cfg: SystemConfig) -> np.ndarray:
    """Approximate distance from every element to ``user`` (near or far model)."""
    return user.range_m + path_differences(user, cfg)


def propagation_distance(user: UserPosition, n: int, cfg: SystemConfig) -> float:
    if not 1 <= n <= cfg.num_antennas:
        raise IndexError(f"element index {n} outside 1..{cfg.num_antennas}")
    return float(propagation_distances(user, cfg)[n - 1])


def exact_distances(user: UserPosition, cfg: SystemConfig) -> np.ndarray:
    """Exact Euclidean element-to-user distances (no wavefront approximation)."""
    x = element_offsets(cfg) * cfg.element_spacing
    ux = user.range_m * math.cos(user.angle_rad)
    uy = user.range_m * math.sin(user.angle_rad)
    return np.hypot(ux - x, uy)


def array_response(user: UserPosition, f_hz: float, cfg: SystemConfig) -> np.ndarray:
    if f_hz <= 0:
        raise ValueError("frequency must be positive")
    delta = path_differences(user, cfg)
    return np.exp(-2j * np.pi * f_hz * delta / cfg.speed_of_light_m_s)


def path_gain(range_m: float, f_hz: float, cfg: SystemConfig) -> float:
    """Free-space amplitude gain ``c / (4 pi f r)``."""
    return cfg.speed_of_light_m_s / (4.0 * math.pi * f_hz * range_m)


def synthesize_channels(users: Sequence[UserPosition], cfg: SystemConfig) -> ChannelSet:
    if not users:
        raise ValueError("at least one user is required")
    freqs = subband_frequencies(cfg)
    c = cfg.speed_of_light_m_s
    h = np.empty((len(freqs), len(users), cfg.num_antennas), dtype=complex)
    for k, user in enumerate(users):
        if user.range_m <= 0:
            raise ValueError("user range must be positive")
        delta = path_differences(user, cfg)
        for m, f in enumerate(freqs):
            gain = path_gain(user.range_m, f, cfg)
            common = np.exp(-2j * np.pi * f * user.range_m / c)
            h[m, k] = gain * common * np.exp(-2j * np.pi * f * delta / c)
    return ChannelSet(h=h, subband_frequencies_hz=freqs, users=tuple(users))


# Placement grid: 0.5 degree / 0.5 m steps. The angular end points 0 and 180
# degrees lie on the array axis and are excluded.
ANGLE_GRID_DEG = np.arange(1, 360) * 0.5
RANGE_GRID_M = np.arange(2, 41) * 0.5


def sample_users(seed: int, cfg: SystemConfig) -> list[UserPosition]:
    """Draw ``K_NF`` near-field then ``K_FF`` far-field users on the grid."""
    rng = np.random.default_rng(seed)
    r_ray = rayleigh_distance(cfg)
    near = RANGE_GRID_M[RANGE_GRID_M <= r_ray]
    far = RANGE_GRID_M[RANGE_GRID_M > r_ray]
    if cfg.num_nf_users and near.size == 0:
        raise ValueError("range grid has no near-field points for this config")
    if cfg.num_ff_users and far.size == 0:
        raise ValueError("range grid has no far-field points for this config")
    users = []
    for count, ranges, tag in ((cfg.num_nf_users, near, "near"), (cfg.num_ff_users, far, "far")):
        for _ in range(count):
            angle = float(rng.choice(ANGLE_GRID_DEG))
            rng_m = float(rng.choice(ranges))
            users.append(UserPosition(math.radians(angle), rng_m, tag))
    return users


CONFIG_KEYS = (
    "carrier_frequency_hz",
    "bandwidth_hz",
    "num_antennas",
    "num_subbands",
    "num_ttds",
    "transmit_power_dbm",
    "noise_psd_dbm_hz",
    "max_delay_ns",
    "ttd_grid_points",
    "num_nf_users",
    "num_ff_users",
    "ao_max_iters",
    "ao_tolerance",
    "penalty_init",
    "seed",
)
_INT_KEYS = {"num_antennas", "num_subbands", "num_ttds", "ttd_grid_points",
             "num_nf_users", "num_ff_users", "ao_max_iters", "seed"}


def config_to_dict(cfg: SystemConfig, seed: int = 0) -> dict:
    return {
        "carrier_frequency_hz": cfg.carrier_frequency_hz,
        "bandwidth_hz": cfg.bandwidth_hz,
        "num_antennas": cfg.num_antennas,
        "num_subbands": cfg.num_subbands,
        "num_ttds": cfg.num_ttds,
        "transmit_power_dbm": watt_to_dbm(cfg.transmit_power_w),
        "noise_psd_dbm_hz": watt_to_dbm(cfg.noise_psd_w_per_hz),
        "max_delay_ns": cfg.max_delay_s * 1e9,
        "ttd_grid_points": cfg.ttd_grid_points,
        "num_nf_users": cfg.num_nf_users,
        "num_ff_users": cfg.num_ff_users,
        "ao_max_iters": cfg.ao_max_iters,
        "ao_tolerance": cfg.ao_tolerance,
        "penalty_init": cfg.penalty_init,
        "seed": seed,
    }


def config_from_dict(values: dict) -> tuple[SystemConfig, int]:
    unknown = set(values) - set(CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    merged = config_to_dict(SystemConfig())
    for key, raw in values.items():
        merged[key] = int(raw) if key in _INT_KEYS else float(raw)
    cfg = SystemConfig(
        carrier_frequency_hz=merged["carrier_frequency_hz"],
        bandwidth_hz=merged["bandwidth_hz"],
        num_antennas=merged["num_antennas"],
        num_subbands=merged["num_subbands"],
        num_ttds=merged["num_ttds"],
        transmit_power_w=dbm_to_watt(merged["transmit_power_dbm"]),
        noise_psd_w_per_hz=dbm_to_watt(merged["noise_psd_dbm_hz"]),
        max_delay_s=merged["max_delay_ns"] * 1e-9,
        ttd_grid_points=merged["ttd_grid_points"],
        num_nf_users=merged["num_nf_users"],
        num_ff_users=merged["num_ff_users"],
        ao_max_iters=merged["ao_max_iters"],
        ao_tolerance=merged["ao_tolerance"],
        penalty_init=merged["penalty_init"],
    )
    return cfg, merged["seed"]


def load_config(path: str | Path) -> tuple[SystemConfig, int]:
    """Read a ``key = value`` scenario file; missing keys take the defaults.

    An optional ``[scenario]`` header is accepted; ``#`` starts a comment.
    """
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[scenario]\n" + text
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string(text)
    return config_from_dict(dict(parser["scenario"]))


def dump_config(cfg: SystemConfig, path: str | Path, seed: int = 0) -> None:
    lines = [f"{key} = {value!r}" for key, value in config_to_dict(cfg, seed).items()]
    Path(path).write_text("\n".join(lines) + "\n")
