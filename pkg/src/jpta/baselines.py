"""Fully-digital (upper bound) and phased-array (phase shifters only) baselines.

Both reuse the alternating-optimization scaffold of :mod:`jpta.optimizer`;
only the beamformer update differs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .arrays import UtilityKind
from .optimizer import (
    AoOptions,
    BeamformerFit,
    SolverState,
    align_rotation,
    fit_objective,
    joint_delay_search,
    run_alternating,
)
from .scenario import ChannelSet, SystemConfig, subband_frequencies


@dataclass(frozen=True)
class FdBeamformer:
    """One unconstrained unit-norm beamformer per subband, shape ``(M, N)``."""

    w: np.ndarray

    def weights(self, freqs: np.ndarray) -> np.ndarray:
        if len(np.atleast_1d(freqs)) != self.w.shape[0]:
            raise ValueError("FD beamformer is defined per subband; frequency count differs")
        return self.w


@dataclass(frozen=True)
class PaBeamformer:
    """A single frequency-flat unit-modulus vector (scaled by ``1/sqrt(N)``)."""

    phases: np.ndarray

    def vector(self) -> np.ndarray:
        return np.exp(1j * self.phases) / math.sqrt(self.phases.size)

    def weights(self, freqs: np.ndarray) -> np.ndarray:
        n = len(np.atleast_1d(freqs))
        return np.broadcast_to(self.vector(), (n, self.phases.size)).copy()


def fd_beamformer(assignment, channels: ChannelSet) -> FdBeamformer:
    """Per-subband matched filter ``h_mk / ||h_mk||`` for the assigned user."""
    h = channels.h[np.arange(channels.num_subbands), assignment]
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms == 0):
        raise ValueError("matched filter undefined for a zero channel")
    return FdBeamformer(h / norms[:, None])


def pa_fit(ideal_w, cfg: SystemConfig, max_rounds: int = 30, tol: float = 1e-5,
           align_phase: bool = True) -> BeamformerFit:
    """Fit one frequency-flat phase vector to all per-subband ideal beamformers.

    Without phase alignment this is ``phases = angle(sum_m w_m)``. With it, the
    per-subband phase references start from the best common delay (a single
    delay line is gain-equivalent to a PA) and then alternate with the phases.
    """
    freqs = subband_frequencies(cfg)
    M = ideal_w.shape[0]
    if align_phase:
        common = joint_delay_search(ideal_w, cfg.replace(num_ttds=1)).delays[0]
        rotation = 2.0 * np.pi * freqs * common
    else:
        rotation = np.zeros(M)

    def phases_for(rot):
        acc = np.sum(ideal_w * np.exp(1j * rot)[:, None], axis=0)
        return np.where(np.abs(acc) > 1e-12 * np.abs(ideal_w).max(), np.angle(acc), 0.0)

    bf = PaBeamformer(phases_for(rotation))
    trace = [fit_objective(ideal_w, bf.weights(freqs), rotation)]
    if align_phase:
        for _ in range(max_rounds):
            rotation = align_rotation(ideal_w, bf.weights(freqs))
            bf = PaBeamformer(phases_for(rotation))
            trace.append(fit_objective(ideal_w, bf.weights(freqs), rotation))
            if trace[-1] - trace[-2] <= tol * abs(trace[-2]):
                break
    return BeamformerFit(bf, np.array(trace), rotation)


def fd_optimize(channels: ChannelSet, cfg: SystemConfig, kind: UtilityKind = "log",
                opts: AoOptions | None = None, trace_stream: TextIO | None = None) -> SolverState:
    """Allocation and power with matched-filter beamforming on every subband."""

    def fit(ideal_w, assignment, previous):
        return fd_beamformer(assignment, channels), 0.0

    return run_alternating(channels, cfg, kind, fit, opts, trace_stream)


def pa_optimize(channels: ChannelSet, cfg: SystemConfig, kind: UtilityKind = "log",
                opts: AoOptions | None = None, trace_stream: TextIO | None = None) -> SolverState:
    """Allocation and power with a phased array (no delay lines)."""
    opts = opts or AoOptions()
    tol = cfg.ao_tolerance if opts.fit_tol is None else opts.fit_tol

    def fit(ideal_w, assignment, previous):
        result = pa_fit(ideal_w, cfg, opts.fit_rounds, tol, opts.align_phase)
        return result.bf, result.residual

    return run_alternating(channels, cfg, kind, fit, opts, trace_stream)
