"""Beamformer algebra for joint phase-time arrays.

A JPTA feeds ``N_T`` true-time-delay lines from one RF chain; line ``i``
drives a subarray of ``N / N_T`` phase shifters. On a subband with centre
frequency ``f`` the effective weight of element ``j`` of subarray ``i`` is::

    exp(1j * phase[i, j]) * exp(-2j * pi * f * delay[i]) / sqrt(N)

Phases are stored in radians, which makes the unit-modulus constraint on the
phase shifters structural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .scenario import ChannelSet, SystemConfig

UtilityKind = Literal["sum", "log"]


@dataclass(frozen=True)
class PhaseShifterBank:
    phases: np.ndarray  # (N_T, N / N_T), radians

    @property
    def num_ttds(self) -> int:
        return self.phases.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.phases.size


@dataclass(frozen=True)
class TtdBank:
    delays: np.ndarray  # (N_T,), seconds

    def check(self, max_delay_s: float, atol: float = 1e-18) -> None:
        if np.any(self.delays < -atol) or np.any(self.delays > max_delay_s + atol):
            raise ValueError("TTD delay outside [0, max_delay_s]")


@dataclass(frozen=True)
class JptaBeamformer:
    ps: PhaseShifterBank
    ttd: TtdBank

    def __post_init__(self):
        if self.ps.num_ttds != self.ttd.delays.shape[0]:
            raise ValueError("phase-shifter bank and TTD bank disagree on N_T")

    @property
    def num_antennas(self) -> int:
        return self.ps.num_antennas

    def weights(self, freqs: np.ndarray) -> np.ndarray:
        """Effective beamformers for every frequency, shape ``(len(freqs), N)``."""
        freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
        ps = np.exp(1j * self.ps.phases) / math.sqrt(self.num_antennas)
        ttd = np.exp(-2j * np.pi * freqs[:, None] * self.ttd.delays[None, :])
        return (ttd[:, :, None] * ps[None, :, :]).reshape(len(freqs), -1)

    @classmethod
    def zeros(cls, cfg: SystemConfig) -> "JptaBeamformer":
        nt = cfg.num_ttds
        return cls(
            PhaseShifterBank(np.zeros((nt, cfg.num_antennas // nt))),
            TtdBank(np.zeros(nt)),
        )


@dataclass
class AllocationPlan:
    """One-hot subband assignment plus per-subband power.

    ``assignment[m]`` is the (0-based) user served on subband ``m``;
    ``relaxed`` optionally keeps the fractional allocation the SCA produced.
    """

    assignment: np.ndarray
    power: np.ndarray
    relaxed: Optional[np.ndarray] = None
    rates: Optional[np.ndarray] = field(default=None, compare=False)

    def one_hot(self, num_users: int) -> np.ndarray:
        b = np.zeros((self.assignment.size, num_users))
        b[np.arange(self.assignment.size), self.assignment] = 1.0
        return b

    def check(self, num_users: int, transmit_power_w: float) -> None:
        if self.assignment.shape != self.power.shape:
            raise ValueError("assignment and power lengths differ")
        if np.any(self.assignment < 0) or np.any(self.assignment >= num_users):
            raise ValueError("assignment refers to an unknown user")
        if np.any(self.power < 0):
            raise ValueError("negative subband power")
        if self.power.sum() > transmit_power_w + 1e-9:
            raise ValueError("power budget exceeded")
        if self.relaxed is not None:
            if np.any(self.relaxed < -1e-12) or np.any(self.relaxed > 1 + 1e-12):
                raise ValueError("relaxed allocation outside [0, 1]")
            if not np.allclose(self.relaxed.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError("relaxed allocation rows must sum to one")


def beamformer_weights(bf, freqs: np.ndarray) -> np.ndarray:
    """Per-subband beamformer stack for any architecture (or a raw array)."""
    if isinstance(bf, np.ndarray):
        return bf
    return bf.weights(freqs)


def ttd_phase_vector(ttd: TtdBank, f_hz: float) -> np.ndarray:
    if f_hz <= 0:
        raise ValueError("frequency must be positive")
    return np.exp(-2j * np.pi * f_hz * ttd.delays)


def effective_beamformer(bf: JptaBeamformer, f_hz: float) -> np.ndarray:
    if f_hz <= 0:
        raise ValueError("frequency must be positive")
    return bf.weights(np.array([f_hz]))[0]


def array_gain(a: np.ndarray, w: np.ndarray) -> float:
    """``|a^H w|^2``."""
    a = np.asarray(a)
    w = np.asarray(w)
    if a.shape != w.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {w.shape}")
    return float(abs(np.vdot(a, w)) ** 2)


def cnr_matrix(channels: ChannelSet, weights: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Effective channel-to-noise ratios ``delta[m, k] = |h_mk^H w_m|^2 / sigma^2``."""
    proj = np.einsum("mkn,mn->mk", channels.h.conj(), weights)
    return np.abs(proj) ** 2 / cfg.noise_power_w


def effective_cnr(m: int, k: int, channels: ChannelSet, bf, cfg: SystemConfig) -> float:
    w = beamformer_weights(bf, channels.subband_frequencies_hz)[m]
    return abs(np.vdot(channels.h[m, k], w)) ** 2 / cfg.noise_power_w


def rates_from_cnr(assignment: np.ndarray, power: np.ndarray, cnr: np.ndarray,
                   cfg: SystemConfig) -> np.ndarray:
    """User rates (bits/s) for a one-hot assignment given ``cnr[m, k]``."""
    M, K = cnr.shape
    per_band = np.log2(1.0 + power * cnr[np.arange(M), assignment])
    rates = np.zeros(K)
    np.add.at(rates, assignment, per_band)
    return rates * cfg.subband_bandwidth_hz


def user_rates(plan: AllocationPlan, channels: ChannelSet, bf, cfg: SystemConfig) -> np.ndarray:
    w = beamformer_weights(bf, channels.subband_frequencies_hz)
    return rates_from_cnr(plan.assignment, plan.power, cnr_matrix(channels, w, cfg), cfg)


def user_rate(k: int, plan: AllocationPlan, channels: ChannelSet, bf, cfg: SystemConfig) -> float:
    return float(user_rates(plan, channels, bf, cfg)[k])


def utility(rates, kind: UtilityKind) -> float:
    """Sum of ``F(R_k)`` with ``F`` the identity or the natural log.

    A zero rate under the log utility gives ``-inf`` rather than raising, so
    callers can rank infeasible candidates.
    """
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0):
        raise ValueError("rates must be nonnegative")
    if kind == "sum":
        return float(rates.sum())
    if kind == "log":
        if np.any(rates == 0):
            return -math.inf
        return float(np.log(rates).sum())
    raise ValueError(f"unknown utility kind {kind!r}")


# -- serialization ---------------------------------------------------------

def beamformer_to_record(bf) -> dict:
    """Flat JSON-compatible record, tagged with the architecture."""
    from .baselines import FdBeamformer, PaBeamformer

    if isinstance(bf, JptaBeamformer):
        return {
            "arch": "jpta",
            "phases": bf.ps.phases.tolist(),
            "delays_ns": (bf.ttd.delays * 1e9).tolist(),
        }
    if isinstance(bf, PaBeamformer):
        return {"arch": "pa", "phases": [bf.phases.tolist()], "delays_ns": []}
    if isinstance(bf, FdBeamformer):
        return {"arch": "fd", "w_real": bf.w.real.tolist(), "w_imag": bf.w.imag.tolist()}
    raise TypeError(f"cannot serialize {type(bf).__name__}")


def beamformer_from_record(record: dict):
    from .baselines import FdBeamformer, PaBeamformer

    arch = record.get("arch", "jpta")
    if arch == "jpta":
        return JptaBeamformer(
            PhaseShifterBank(np.asarray(record["phases"], dtype=float)),
            TtdBank(np.asarray(record["delays_ns"], dtype=float) * 1e-9),
        )
    if arch == "pa":
        return PaBeamformer(np.asarray(record["phases"][0], dtype=float))
    if arch == "fd":
        return FdBeamformer(np.asarray(record["w_real"]) + 1j * np.asarray(record["w_imag"]))
    raise ValueError(f"unknown architecture {arch!r}")


def plan_to_record(plan: AllocationPlan) -> dict:
    record = {"assignment": plan.assignment.tolist(), "power_w": plan.power.tolist()}
    if plan.rates is not None:
        record["rates_bps"] = plan.rates.tolist()
    return record


def plan_from_record(record: dict) -> AllocationPlan:
    rates = record.get("rates_bps")
    return AllocationPlan(
        assignment=np.asarray(record["assignment"], dtype=int),
        power=np.asarray(record["power_w"], dtype=float),
        rates=None if rates is None else np.asarray(rates, dtype=float),
    )
