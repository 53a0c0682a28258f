"""Three-block alternating optimization: subband allocation, analog
beamforming and power allocation.

Allocation is relaxed to the product of per-subband simplices and pushed back
to binary with a linearized concavity penalty whose weight grows every outer
round. Analog beamforming first picks the unit-modulus beamformer that
phase-conjugates each subband's assigned channel, then fits phase shifters
and delay lines to it by block coordinate ascent. Power is water-filling for
the sum rate and an exact KKT solve for the log utility.
"""

from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, TextIO

import numpy as np

from . import kernels
from .arrays import (
    AllocationPlan,
    JptaBeamformer,
    PhaseShifterBank,
    TtdBank,
    UtilityKind,
    cnr_matrix,
    rates_from_cnr,
    utility,
)
from .scenario import ChannelSet, SystemConfig, subband_frequencies


@dataclass
class ScaOptions:
    max_iters: int = 30          # SCA rounds when allocation is solved on its own
    inner_step: float = 1.0      # first projected-gradient step, relative to 1 / max|grad|
    inner_tol: float = 1e-9
    inner_max_steps: int = 500
    penalty_growth: float = 5.0
    penalty_init: float = 1e-5

    def __post_init__(self):
        if min(self.max_iters, self.inner_step, self.inner_tol, self.inner_max_steps,
               self.penalty_growth, self.penalty_init) <= 0:
            raise ValueError("SCA options must be positive")


@dataclass
class AoOptions:
    sca: ScaOptions = field(default_factory=ScaOptions)
    fit_rounds: int = 30
    fit_tol: Optional[float] = None   # None -> cfg.ao_tolerance
    align_phase: bool = True
    nested_start: bool = True         # JPTA: warm start from the single-delay-line solution


@dataclass
class SolverState:
    plan: AllocationPlan
    bf: object
    ideal_w: np.ndarray
    penalty: float
    iteration: int
    utility_trace: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def utility(self) -> float:
        return self.utility_trace[-1]


@dataclass
class BeamformerFit:
    bf: object
    objective_trace: np.ndarray
    rotation: np.ndarray

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])

    @property
    def residual(self) -> float:
        """``sum_m ||e^{j psi_m} w_m - Phi T_m||^2`` for unit-norm targets."""
        return 2.0 * len(self.rotation) - 2.0 * self.objective


# -- subband allocation ----------------------------------------------------

def rate_coefficients(cnr: np.ndarray, power: np.ndarray) -> np.ndarray:
    """Per-subband spectral efficiency ``log2(1 + p_m delta_mk)`` (rate / (B/M))."""
    return np.log2(1.0 + power[:, None] * cnr)


def penalty_violation(relaxed: np.ndarray) -> float:
    """How far ``b`` is from binary: ``sum(b - b^2) >= 0``, zero iff binary."""
    return float(np.sum(relaxed - relaxed**2))


def _check_simplex_rows(b: np.ndarray, atol: float = 1e-9) -> None:
    if np.any(b < -atol) or np.any(b > 1 + atol) or not np.allclose(b.sum(axis=1), 1.0, atol=atol):
        raise ValueError("relaxed allocation rows must lie on the probability simplex")


def relaxed_allocation_step(relaxed, cnr, power, kind: UtilityKind, penalty: float,
                            opts: ScaOptions | None = None):
    """One SCA round on the relaxed allocation.

    The penalty ``sum(b^2 - b)`` is linearized at ``relaxed``; the concave
    surrogate ``sum_k F(R_k) + penalty * Omega`` is then maximized over the
    per-subband simplices. Rates are measured in units of ``B / M`` so that the
    penalty schedule does not depend on the bandwidth.

    Returns the new relaxed allocation and the surrogate value after every
    accepted projected-gradient step (nondecreasing).
    """
    opts = opts or ScaOptions()
    b = np.asarray(relaxed, dtype=float)
    _check_simplex_rows(b)
    M, K = b.shape
    if K == 1:
        return np.ones((M, 1)), np.zeros(1)
    c = rate_coefficients(cnr, power)
    lin = penalty * (2.0 * b - 1.0)
    start = b
    if kind == "log" and np.any((b * c).sum(axis=0) <= 0):
        start = 0.5 * b + 0.5 / K
    if kind not in ("sum", "log"):
        raise ValueError(f"unknown utility kind {kind!r}")
    new, trace = kernels.sca_ascent(start, c, lin, kind == "log", opts.inner_tol,
                                    opts.inner_max_steps, opts.inner_step)
    return new, trace


def round_allocation(relaxed: np.ndarray) -> np.ndarray:
    """Hard assignment: per subband the user with the largest share, ties to the lowest index."""
    return np.argmax(np.asarray(relaxed), axis=1)


def repair_allocation(assignment, cnr, power, kind: UtilityKind) -> np.ndarray:
    """Give every starved user one subband under the log utility.

    Rounding a relaxed solution can leave a user with no subband (log utility
    ``-inf``). Each starved user takes the subband whose transfer keeps the
    log utility highest, drawn from users holding more than one subband.
    """
    assignment = np.array(assignment)
    M = assignment.size
    K = cnr.shape[1]
    if kind != "log" or M < K:
        return assignment
    c = rate_coefficients(np.asarray(cnr), np.asarray(power))
    for k in range(K):
        if np.any(assignment == k):
            continue
        counts = np.bincount(assignment, minlength=K)
        best, best_m = -math.inf, None
        for m in np.flatnonzero(counts[assignment] > 1):
            trial = assignment.copy()
            trial[m] = k
            rates = np.bincount(trial, weights=c[np.arange(M), trial], minlength=K)
            covered = rates[np.bincount(trial, minlength=K) > 0]
            value = float(np.sum(np.log(np.maximum(covered, 1e-300))))
            if value > best:
                best, best_m = value, m
        assignment[best_m] = k
    return assignment


def sca_allocate(cnr, power, kind: UtilityKind, opts: ScaOptions | None = None,
                 start: np.ndarray | None = None, tol: float = 1e-5):
    """Run SCA rounds with a geometrically growing penalty, then round.

    Returns ``(relaxed, assignment)``.
    """
    opts = opts or ScaOptions()
    M, K = cnr.shape
    b = np.full((M, K), 1.0 / K) if start is None else np.asarray(start, dtype=float)
    rho = opts.penalty_init
    for _ in range(opts.max_iters):
        b, _ = relaxed_allocation_step(b, cnr, power, kind, rho, opts)
        if penalty_violation(b) < tol:
            break
        rho *= opts.penalty_growth
    return b, repair_allocation(round_allocation(b), cnr, power, kind)


def greedy_allocation(cnr, power, kind: UtilityKind) -> np.ndarray:
    """Initial assignment from fixed beamformers and power.

    Sum utility decomposes per subband, so the per-subband argmax is optimal.
    For the log utility every user first takes its best remaining subband,
    then remaining subbands go to the largest marginal gain in ``sum log R``.
    """
    c = rate_coefficients(np.asarray(cnr), np.asarray(power))
    M, K = c.shape
    if kind == "sum" or K == 1:
        return np.argmax(c, axis=1)
    if kind != "log":
        raise ValueError(f"unknown utility kind {kind!r}")
    assignment = np.full(M, -1)
    rates = np.zeros(K)
    free = np.ones(M, dtype=bool)
    for k in range(min(K, M)):
        m = int(np.argmax(np.where(free, c[:, k], -np.inf)))
        assignment[m] = k
        rates[k] += c[m, k]
        free[m] = False
    while free.any():
        with np.errstate(divide="ignore"):
            gain = np.log(rates[None, :] + c) - np.log(rates[None, :])
        gain[~free] = -np.inf
        m, k = np.unravel_index(int(np.argmax(gain)), gain.shape)
        assignment[m] = k
        rates[k] += c[m, k]
        free[m] = False
    return assignment


# -- analog beamforming ----------------------------------------------------

def ideal_beamformer(assignment: np.ndarray, channels: ChannelSet) -> np.ndarray:
    """Unit-modulus beamformer per subband that co-phases the assigned user's channel."""
    h = channels.h[np.arange(channels.num_subbands), assignment]
    return np.exp(1j * np.angle(h)) / math.sqrt(channels.num_antennas)


def _subarrays(w: np.ndarray, num_ttds: int) -> np.ndarray:
    return w.reshape(w.shape[0], num_ttds, -1)


def _rotated(ideal_w: np.ndarray, rotation: np.ndarray | None) -> np.ndarray:
    if rotation is None:
        return ideal_w
    return ideal_w * np.exp(1j * rotation)[:, None]


_TIE_RTOL = 1e-10


@functools.lru_cache(maxsize=32)
def delay_grid(max_delay_s: float, points: int) -> np.ndarray:
    return np.linspace(0.0, max_delay_s, points)


@functools.lru_cache(maxsize=32)
def _grid_tables(freqs: tuple, max_delay_s: float, points: int):
    theta = 2.0 * np.pi * np.outer(delay_grid(max_delay_s, points), np.asarray(freqs))
    return np.cos(theta), np.sin(theta)


def ps_update(ideal_w, ttd: TtdBank, cfg: SystemConfig, rotation=None) -> PhaseShifterBank:
    """Optimal phase shifters for fixed delays.

    ``phi_i = angle(sum_m w_mi exp(j 2 pi f_m tau_i))``; a vanishing sum leaves
    the phase at 0.
    """
    freqs = subband_frequencies(cfg)
    w = _subarrays(_rotated(ideal_w, rotation), len(ttd.delays))
    steer = np.exp(2j * np.pi * np.outer(freqs, ttd.delays))
    acc = np.einsum("mil,mi->il", w, steer)
    scale = np.abs(w).max(initial=0.0)
    phases = np.where(np.abs(acc) > 1e-12 * max(scale, 1e-300), np.angle(acc), 0.0)
    return PhaseShifterBank(phases)


def _delay_coefficients(ideal_w, ps: PhaseShifterBank, rotation=None) -> np.ndarray:
    w = _subarrays(_rotated(ideal_w, rotation), ps.num_ttds)
    return np.einsum("mil,il->im", w.conj(), np.exp(1j * ps.phases))


def ttd_update(ideal_w, ps: PhaseShifterBank, cfg: SystemConfig, rotation=None) -> TtdBank:
    """Grid search per delay line over ``{0, tau_max/(I_T-1), ..., tau_max}``.

    Scores within a relative ``1e-10`` of the best count as ties and resolve
    to the smaller delay.
    """
    freqs = subband_frequencies(cfg)
    cos_tab, sin_tab = _grid_tables(tuple(freqs), cfg.max_delay_s, cfg.ttd_grid_points)
    idx, _ = kernels.ttd_grid_argmax(_delay_coefficients(ideal_w, ps, rotation), cos_tab, sin_tab,
                                     _TIE_RTOL)
    return TtdBank(delay_grid(cfg.max_delay_s, cfg.ttd_grid_points)[idx])


def joint_delay_search(ideal_w, cfg: SystemConfig, rotation=None) -> TtdBank:
    """Delays maximizing the fit with the phase shifters optimized jointly.

    For fixed ``tau_i`` the best phases give subarray objective
    ``sum_j |sum_m w_mij exp(j 2 pi f_m tau_i)|``, so the pair ``(phi_i, tau_i)``
    is solved exactly on the delay grid.
    """
    freqs = subband_frequencies(cfg)
    grid = delay_grid(cfg.max_delay_s, cfg.ttd_grid_points)
    steer = np.exp(2j * np.pi * np.outer(grid, freqs))
    acc = np.abs(steer @ _rotated(ideal_w, rotation))
    score = acc.reshape(len(grid), cfg.num_ttds, -1).sum(axis=2)
    # near-equal scores (the response is periodic in tau) resolve to the smaller delay
    tol = _TIE_RTOL * np.abs(_subarrays(ideal_w, cfg.num_ttds)).sum(axis=(0, 2))
    return TtdBank(grid[np.argmax(score >= score.max(axis=0) - tol, axis=0)])


def fit_objective(ideal_w, weights, rotation=None) -> float:
    """``sum_m Re{(e^{j psi_m} w_m)^H Phi T_m}``."""
    return float(np.real(np.sum(_rotated(ideal_w, rotation).conj() * weights)))


def align_rotation(ideal_w, weights) -> np.ndarray:
    """Per-subband phase reference that best aligns the target with ``weights``.

    Array gain ignores a common phase on ``w_m``, so this block is free.
    """
    return np.angle(np.sum(ideal_w.conj() * weights, axis=1))


def fit_beamformer(ideal_w, cfg: SystemConfig, max_rounds: int = 30, tol: float = 1e-5,
                   align_phase: bool = True, init: JptaBeamformer | None = None) -> BeamformerFit:
    """Fit phase shifters and delays to the ideal per-subband beamformers.

    Alternates ``ps_update`` and ``ttd_update`` (plus the per-subband phase
    reference when ``align_phase``) until the fractional objective increase
    drops below ``tol``. Without ``init`` the delays start from the joint
    phase/delay grid search.
    """
    if cfg.num_ttds < 1:
        raise ValueError("fit_beamformer needs at least one TTD")
    freqs = subband_frequencies(cfg)
    rotation = np.zeros(ideal_w.shape[0])
    if init is None:
        ttd = joint_delay_search(ideal_w, cfg)
        ps = ps_update(ideal_w, ttd, cfg)
    else:
        ps, ttd = init.ps, init.ttd
    bf = JptaBeamformer(ps, ttd)
    trace = [fit_objective(ideal_w, bf.weights(freqs), rotation)]
    for _ in range(max_rounds):
        if align_phase:
            rotation = align_rotation(ideal_w, bf.weights(freqs))
        ps = ps_update(ideal_w, bf.ttd, cfg, rotation)
        ttd = ttd_update(ideal_w, ps, cfg, rotation)
        cand = JptaBeamformer(ps, ttd)
        value = fit_objective(ideal_w, cand.weights(freqs), rotation)
        incumbent = fit_objective(ideal_w, bf.weights(freqs), rotation)
        if value < incumbent:
            # tie-broken delays can cost up to the tie tolerance; keep the incumbent
            trace.append(incumbent)
            break
        bf = cand
        trace.append(value)
        if trace[-1] - trace[-2] <= tol * abs(trace[-2]):
            break
    return BeamformerFit(bf, np.array(trace), rotation)


# -- power allocation ------------------------------------------------------

def waterfill(gains, budget: float, rtol: float = 1e-12):
    """Water-filling over parallel channels with power gains ``gains``.

    Returns ``(power, water_level)``. With no usable channel the budget is
    split uniformly and a warning is raised.
    """
    gains = np.asarray(gains, dtype=float)
    power = np.zeros_like(gains)
    active = gains > 0
    if not active.any():
        warnings.warn("all channel gains are zero; using uniform power", RuntimeWarning)
        return np.full_like(gains, budget / gains.size), math.inf
    inv = 1.0 / gains[active]
    mu = kernels.waterfill_level(inv, budget, rtol)
    on = inv < mu
    exact = (budget + inv[on].sum()) / on.sum()
    if np.all(inv[on] < exact) and np.all(inv[~on] >= exact):
        mu = exact
    power[active] = np.maximum(mu - inv, 0.0)
    return power, mu


def waterfill_sum_rate(assignment, cnr, cfg: SystemConfig) -> np.ndarray:
    gains = np.asarray(cnr)[np.arange(len(assignment)), assignment]
    return waterfill(gains, cfg.transmit_power_w)[0]


def power_log_utility(assignment, cnr, cfg: SystemConfig, rtol: float = 1e-13) -> np.ndarray:
    """Power maximizing ``sum_k ln R_k`` for a fixed assignment.

    At the optimum each user water-fills its own subbands with a level
    ``mu_k`` and ``mu_k * R_k`` is the same for every user; the common value
    is found by bisection on the total power.
    """
    assignment = np.asarray(assignment)
    K = np.asarray(cnr).shape[1]
    gains = np.asarray(cnr)[np.arange(len(assignment)), assignment]
    usable = gains > 0
    for k in range(K):
        if not np.any(usable & (assignment == k)):
            raise ValueError(f"user {k} has no subband with positive gain; log utility is -inf")
    inv = 1.0 / gains[usable]
    owner = assignment[usable]
    mu = kernels.log_power_levels(inv, owner, K, cfg.transmit_power_w, rtol)
    power = np.zeros(len(assignment))
    power[usable] = np.maximum(mu[owner] - inv, 0.0)
    return power * (cfg.transmit_power_w / power.sum())


def power_step(assignment, cnr, kind: UtilityKind, cfg: SystemConfig) -> np.ndarray:
    if kind == "sum":
        return waterfill_sum_rate(assignment, cnr, cfg)
    if kind == "log":
        return power_log_utility(assignment, cnr, cfg)
    raise ValueError(f"unknown utility kind {kind!r}")


def log_utility_gradient(power, assignment, cnr) -> np.ndarray:
    """Gradient of ``sum_k ln r_k`` (rates in units of B/M) with respect to ``power``."""
    gains = np.asarray(cnr)[np.arange(len(assignment)), assignment]
    per_band = np.log2(1.0 + power * gains)
    rates = np.zeros(np.asarray(cnr).shape[1])
    np.add.at(rates, assignment, per_band)
    return gains / ((1.0 + power * gains) * math.log(2.0) * rates[assignment])


def projected_gradient_norm(power, grad, budget: float) -> float:
    """Stationarity measure ``||p - P(p + g)||`` on ``{p >= 0, sum p <= budget}``."""
    y = power + grad
    clipped = np.maximum(y, 0.0)
    if clipped.sum() > budget:
        proj = kernels.project_simplex_rows((y / budget)[None, :])[0] * budget
    else:
        proj = clipped
    return float(np.linalg.norm(power - proj))


# -- alternating optimization ----------------------------------------------

FitFn = Callable[[np.ndarray, np.ndarray, object], tuple]


def matched_cnr(channels: ChannelSet, cfg: SystemConfig) -> np.ndarray:
    """Best achievable ``delta[m, k]`` with any unit-norm beamformer: ``||h_mk||^2 / sigma^2``."""
    return np.sum(np.abs(channels.h) ** 2, axis=2) / cfg.noise_power_w


def _evaluate(assignment, power, cnr, kind, cfg):
    rates = rates_from_cnr(assignment, power, cnr, cfg)
    return utility(rates, kind), rates


def run_alternating(channels: ChannelSet, cfg: SystemConfig, kind: UtilityKind,
                    fit: FitFn, opts: AoOptions | None = None,
                    trace_stream: TextIO | None = None,
                    start: tuple | None = None) -> SolverState:
    """Shared alternating-optimization scaffold.

    ``fit(ideal_w, assignment, previous_bf)`` returns ``(beamformer, fit_residual)`` for the
    architecture at hand. The incumbent solution is only replaced by a
    candidate with equal or better utility, so ``utility_trace`` never
    decreases. ``start = (assignment, power, bf)`` replaces the default
    initialization (greedy allocation on matched-filter CNRs, uniform power).
    """
    opts = opts or AoOptions()
    sca = opts.sca
    M, K = channels.num_subbands, channels.num_users
    if kind == "log" and M < K:
        raise ValueError("log utility needs at least one subband per user")
    freqs = channels.subband_frequencies_hz
    eps = cfg.ao_tolerance

    if start is None:
        power = np.full(M, cfg.transmit_power_w / M)
        assignment = greedy_allocation(matched_cnr(channels, cfg), power, kind)
        ideal_w = ideal_beamformer(assignment, channels)
        bf, residual = fit(ideal_w, assignment, None)
    else:
        assignment, power, bf = start
        assignment = np.asarray(assignment)
        power = np.asarray(power, dtype=float)
        ideal_w = ideal_beamformer(assignment, channels)
    cnr = cnr_matrix(channels, bf.weights(freqs), cfg)
    best_u, rates = _evaluate(assignment, power, cnr, kind, cfg)
    state = SolverState(
        plan=AllocationPlan(assignment, power, rates=rates),
        bf=bf, ideal_w=ideal_w, penalty=sca.penalty_init, iteration=0,
        utility_trace=[best_u],
    )
    relaxed = state.plan.one_hot(K)
    rho = sca.penalty_init

    for it in range(1, cfg.ao_max_iters + 1):
        cur = state.plan
        cur_cnr = cnr_matrix(channels, state.bf.weights(freqs), cfg)
        relaxed, _ = relaxed_allocation_step(relaxed, cur_cnr, cur.power, kind, rho, sca)
        assignment = repair_allocation(round_allocation(relaxed), cur_cnr, cur.power, kind)

        ideal_w = ideal_beamformer(assignment, channels)
        cand_bf, residual = fit(ideal_w, assignment, state.bf)
        cand_cnr = cnr_matrix(channels, cand_bf.weights(freqs), cfg)
        u_new, _ = _evaluate(assignment, cur.power, cand_cnr, kind, cfg)
        u_old, _ = _evaluate(assignment, cur.power, cur_cnr, kind, cfg)
        if u_new < u_old:
            cand_bf, cand_cnr = state.bf, cur_cnr
        try:
            power = power_step(assignment, cand_cnr, kind, cfg)
        except ValueError:
            power = cur.power
        u, rates = _evaluate(assignment, power, cand_cnr, kind, cfg)

        prev_best = best_u
        if u >= best_u:
            best_u = u
            state.plan = AllocationPlan(assignment, power, relaxed=relaxed.copy(), rates=rates)
            state.bf, state.ideal_w = cand_bf, ideal_w
        state.utility_trace.append(best_u)
        state.iteration = it
        state.penalty = rho
        violation = penalty_violation(relaxed)
        record = {"iter": it, "utility": best_u, "penalty": rho,
                  "constraint_violation": violation, "fit_residual": residual}
        state.trace.append(record)
        if trace_stream is not None:
            trace_stream.write(json.dumps(record) + "\n")
        rho *= sca.penalty_growth
        gain = best_u - prev_best
        stalled = gain <= eps * abs(prev_best) if math.isfinite(prev_best) else False
        if violation < eps and stalled:
            break
    return state


def alternating_optimize(channels: ChannelSet, cfg: SystemConfig, kind: UtilityKind = "log",
                         opts: AoOptions | None = None,
                         trace_stream: TextIO | None = None) -> SolverState:
    """Joint subband, JPTA beamformer and power optimization.

    With ``opts.nested_start`` (default) and ``num_ttds > 1`` the problem is
    first solved with a single delay line, whose beamformer embeds exactly
    into any larger bank; the full problem then starts from that solution.
    The single-line problem favors contiguous subband blocks, which keeps the
    full solver away from the interleaved allocations a greedy start produces.
    """
    opts = opts or AoOptions()
    if cfg.num_ttds < 1:
        raise ValueError("JPTA needs num_ttds >= 1; use baselines.pa_optimize for N_T = 0")
    tol = cfg.ao_tolerance if opts.fit_tol is None else opts.fit_tol

    def fit(ideal_w, assignment, previous):
        result = fit_beamformer(ideal_w, cfg, opts.fit_rounds, tol, opts.align_phase)
        return result.bf, result.residual

    start = None
    if opts.nested_start and cfg.num_ttds > 1:
        base = alternating_optimize(channels, cfg.replace(num_ttds=1), kind, opts)
        start = (base.plan.assignment, base.plan.power, embed_beamformer(base.bf, cfg.num_ttds))
    return run_alternating(channels, cfg, kind, fit, opts, trace_stream, start)


def embed_beamformer(bf: JptaBeamformer, num_ttds: int) -> JptaBeamformer:
    """Same weights on a bank of ``num_ttds`` lines (must be a multiple of the current count)."""
    cur = bf.ps.num_ttds
    if num_ttds % cur:
        raise ValueError(f"cannot embed {cur} delay lines into {num_ttds}")
    rep = num_ttds // cur
    phases = bf.ps.phases.reshape(num_ttds, -1)
    return JptaBeamformer(PhaseShifterBank(phases), TtdBank(np.repeat(bf.ttd.delays, rep)))
