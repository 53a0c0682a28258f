import io
import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jpta.arrays import (
    JptaBeamformer,
    PhaseShifterBank,
    TtdBank,
    array_gain,
    cnr_matrix,
    rates_from_cnr,
    utility,
)
from jpta.optimizer import (
    AoOptions,
    ScaOptions,
    alternating_optimize,
    delay_grid,
    embed_beamformer,
    fit_beamformer,
    fit_objective,
    greedy_allocation,
    ideal_beamformer,
    log_utility_gradient,
    penalty_violation,
    power_log_utility,
    projected_gradient_norm,
    ps_update,
    rate_coefficients,
    relaxed_allocation_step,
    repair_allocation,
    round_allocation,
    sca_allocate,
    ttd_update,
    waterfill,
    waterfill_sum_rate,
)
from jpta.scenario import (
    ChannelSet,
    SystemConfig,
    UserPosition,
    array_response,
    rayleigh_distance,
    sample_users,
    subband_frequencies,
    synthesize_channels,
)


def enumerate_best(c, kind):
    """Exhaustive search over all K**M assignments of rate coefficients ``c``."""
    M, K = c.shape
    best, arg = -math.inf, None
    for a in itertools.product(range(K), repeat=M):
        a = np.array(a)
        rates = np.bincount(a, weights=c[np.arange(M), a], minlength=K)
        u = utility(rates, kind)
        if u > best:
            best, arg = u, a
    return best, arg


def _value(c, a, kind):
    M, K = c.shape
    return utility(np.bincount(a, weights=c[np.arange(M), a], minlength=K), kind)


def random_ideal(rng, M, N):
    return np.exp(1j * rng.uniform(-np.pi, np.pi, (M, N))) / math.sqrt(N)


# -- allocation -------------------------------------------------------------

def test_relaxed_step_single_user():
    b, _ = relaxed_allocation_step(np.ones((3, 1)), np.ones((3, 1)), np.ones(3), "log", 1.0)
    assert np.array_equal(b, np.ones((3, 1)))


def test_relaxed_step_binary_fixed_point():
    b0 = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    cnr = np.array([[5.0, 4.0], [3.0, 4.0], [2.0, 1.0]])
    b, _ = relaxed_allocation_step(b0, cnr, np.ones(3), "sum", 1e6)
    assert np.allclose(b, b0)


def test_relaxed_step_rejects_non_simplex():
    with pytest.raises(ValueError):
        relaxed_allocation_step(np.array([[0.7, 0.7]]), np.ones((1, 2)), np.ones(1), "sum", 1.0)


def test_relaxed_step_sum_two_by_two():
    rng = np.random.default_rng(0)
    for _ in range(50):
        cnr = 10 ** rng.uniform(-1, 3, (2, 2))
        p = rng.uniform(0.1, 2.0, 2)
        b = np.full((2, 2), 0.5)
        for rho in (1e-5, 5e-5, 2.5e-4):
            b, _ = relaxed_allocation_step(b, cnr, p, "sum", rho)
        _, best = enumerate_best(rate_coefficients(cnr, p), "sum")
        assert np.array_equal(round_allocation(b), best)


@pytest.mark.parametrize("kind", ["sum", "log"])
def test_relaxed_step_surrogate_nondecreasing(kind):
    rng = np.random.default_rng(1)
    for _ in range(20):
        M, K = rng.integers(2, 8), rng.integers(2, 4)
        b0 = rng.dirichlet(np.ones(K), M)
        _, trace = relaxed_allocation_step(b0, 10 ** rng.uniform(0, 3, (M, K)),
                                           rng.uniform(0.1, 1, M), kind, 0.1)
        assert np.all(np.diff(trace) >= -1e-12 * np.abs(trace).max())


def test_round_allocation():
    assert round_allocation(np.array([[0.1, 0.9]]))[0] == 1
    assert round_allocation(np.array([[0.5, 0.5]]))[0] == 0
    eye = np.eye(3)
    assert np.array_equal(round_allocation(eye), [0, 1, 2])


def test_penalty_violation():
    assert penalty_violation(np.eye(2)) == 0.0
    assert penalty_violation(np.full((1, 2), 0.5)) == pytest.approx(0.5)


def test_greedy_single_user_and_sum_optimality():
    rng = np.random.default_rng(2)
    assert np.array_equal(greedy_allocation(np.ones((4, 1)), np.ones(4), "log"), np.zeros(4))
    for _ in range(100):
        M, K = rng.integers(1, 5), rng.integers(1, 4)
        cnr, p = 10 ** rng.uniform(-1, 3, (M, K)), rng.uniform(0.1, 1, M)
        c = rate_coefficients(cnr, p)
        a = greedy_allocation(cnr, p, "sum")
        assert _value(c, a, "sum") == pytest.approx(enumerate_best(c, "sum")[0], rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(0, 6), st.integers(0, 10_000))
def test_greedy_log_serves_everyone(K, extra, seed):
    rng = np.random.default_rng(seed)
    M = K + extra
    cnr = 10 ** rng.uniform(-1, 3, (M, K))
    a = greedy_allocation(cnr, np.ones(M), "log")
    assert set(a) == set(range(K))


def test_repair_allocation_serves_starved_user():
    cnr = np.array([[10.0, 1.0], [10.0, 2.0], [10.0, 3.0]])
    fixed = repair_allocation(np.array([0, 0, 0]), cnr, np.ones(3), "log")
    assert set(fixed) == {0, 1}
    assert fixed[2] == 1  # the subband user 1 uses best
    # sum utility and complete assignments are left alone
    assert np.array_equal(repair_allocation(np.array([0, 0, 0]), cnr, np.ones(3), "sum"), [0, 0, 0])
    assert np.array_equal(repair_allocation(np.array([0, 1, 0]), cnr, np.ones(3), "log"), [0, 1, 0])


def test_sca_allocate_sum_matches_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(100):
        M, K = rng.integers(1, 5), rng.integers(1, 4)
        cnr, p = 10 ** rng.uniform(-1, 3, (M, K)), rng.dirichlet(np.ones(M))
        _, a = sca_allocate(cnr, p, "sum")
        c = rate_coefficients(cnr, p)
        assert _value(c, a, "sum") == pytest.approx(enumerate_best(c, "sum")[0], rel=1e-9)


# -- beamforming --------------------------------------------------------------

def test_ideal_beamformer_gain_identity(two_user_setup):
    _, ch, assignment = two_user_setup
    w = ideal_beamformer(assignment, ch)
    assert np.allclose(np.abs(w), 1 / 8)
    for m in range(16):
        h = ch.h[m, assignment[m]]
        a = h / np.abs(h)
        assert array_gain(a, w[m]) == pytest.approx(64.0, rel=1e-9)
    real = ChannelSet(np.full((2, 1, 4), 0.3 + 0j), np.array([1e11, 1.01e11]))
    assert np.allclose(ideal_beamformer(np.array([0, 0]), real), 0.5)


def test_ps_update_single_subband_aligns():
    rng = np.random.default_rng(4)
    cfg = SystemConfig(num_antennas=16, num_ttds=4, num_subbands=1, num_ff_users=0)
    w = random_ideal(rng, 1, 16)
    ps = ps_update(w, TtdBank(np.zeros(4)), cfg)
    assert np.allclose(np.exp(1j * ps.phases.ravel()), w[0] * 4)


def test_ps_update_beats_random_search():
    rng = np.random.default_rng(5)
    cfg = SystemConfig(num_antennas=8, num_ttds=2, num_subbands=4)
    w = random_ideal(rng, 4, 8)
    ttd = TtdBank(rng.uniform(0, 5e-9, 2))
    freqs = subband_frequencies(cfg)
    best = fit_objective(w, JptaBeamformer(ps_update(w, ttd, cfg), ttd).weights(freqs))
    draws = rng.uniform(-np.pi, np.pi, (10_000, 2, 4))
    ttd_phase = np.exp(-2j * np.pi * np.outer(freqs, ttd.delays))  # (M, N_T)
    sub = w.reshape(4, 2, 4)
    # objective for every draw at once
    vals = np.real(np.einsum("mil,mi,dil->d", sub.conj(), ttd_phase, np.exp(1j * draws))) / math.sqrt(8)
    assert best >= vals.max() - 1e-12


def test_ps_update_zero_sum_defaults_to_zero():
    cfg = SystemConfig(num_antennas=4, num_ttds=1, num_subbands=2)
    w = np.zeros((2, 4), complex)
    assert np.array_equal(ps_update(w, TtdBank(np.zeros(1)), cfg).phases, np.zeros((1, 4)))


def test_ttd_update_zero_delay_when_aligned():
    rng = np.random.default_rng(6)
    cfg = SystemConfig(num_antennas=16, num_ttds=4, num_subbands=1, num_ff_users=0)
    w = random_ideal(rng, 1, 16)
    ps = PhaseShifterBank(np.angle(w[0]).reshape(4, 4))
    assert np.array_equal(ttd_update(w, ps, cfg).delays, np.zeros(4))


def test_ttd_update_matches_independent_grid_search():
    rng = np.random.default_rng(7)
    cfg = SystemConfig(num_antennas=8, num_ttds=2, num_subbands=4, ttd_grid_points=301)
    w = random_ideal(rng, 4, 8)
    ps = PhaseShifterBank(rng.uniform(-np.pi, np.pi, (2, 4)))
    got = ttd_update(w, ps, cfg).delays
    grid = delay_grid(cfg.max_delay_s, cfg.ttd_grid_points)
    freqs = subband_frequencies(cfg)
    for i in range(2):
        scores = []
        for tau in grid:
            s = 0.0
            for m, f in enumerate(freqs):
                seg = w[m, 4 * i:4 * i + 4]
                s += np.real(np.vdot(seg, np.exp(1j * ps.phases[i])) * np.exp(-2j * np.pi * f * tau))
            scores.append(s)
        scores = np.array(scores)
        ties = scores >= scores.max() - 1e-10 * np.abs(w[:, 4 * i:4 * i + 4]).sum()
        assert got[i] == grid[int(np.argmax(ties))]
        assert got[i] in grid and 0 <= got[i] <= cfg.max_delay_s


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 4, 8]), st.booleans())
def test_fit_objective_monotone(seed, num_ttds, align):
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(num_antennas=16, num_ttds=num_ttds, num_subbands=8, ttd_grid_points=200)
    fit = fit_beamformer(random_ideal(rng, 8, 16), cfg, align_phase=align)
    assert np.all(np.diff(fit.objective_trace) >= -1e-12 * abs(fit.objective_trace).max())


def test_fit_exact_when_one_ttd_per_element():
    rng = np.random.default_rng(8)
    cfg = SystemConfig(num_antennas=16, num_ttds=16, num_subbands=1, num_ff_users=0)
    w = random_ideal(rng, 1, 16)
    fit = fit_beamformer(w, cfg)
    weights = fit.bf.weights(subband_frequencies(cfg))
    assert np.sum(np.abs(w * np.exp(1j * fit.rotation)[:, None] - weights) ** 2) <= 1e-10
    assert fit.residual <= 1e-10


def test_fit_more_ttds_more_on_band_gain(two_user_setup, cfg):
    _, ch, assignment = two_user_setup
    w = ideal_beamformer(assignment, ch)
    freqs = ch.subband_frequencies_hz

    def on_band(num_ttds):
        bf = fit_beamformer(w, cfg.replace(num_ttds=num_ttds)).bf
        weights = bf.weights(freqs)
        return sum(array_gain(ch.h[m, k] / np.abs(ch.h[m, k]), weights[m])
                   for m, k in enumerate(assignment))

    assert on_band(64) > on_band(16)


def test_fit_requires_a_delay_line():
    with pytest.raises(ValueError):
        fit_beamformer(np.ones((2, 4)) / 2, SystemConfig(num_antennas=4, num_ttds=0, num_subbands=2))


def test_embed_beamformer_preserves_weights():
    rng = np.random.default_rng(9)
    bf = JptaBeamformer(PhaseShifterBank(rng.uniform(-3, 3, (2, 8))), TtdBank(np.array([1e-9, 3e-9])))
    big = embed_beamformer(bf, 8)
    freqs = np.linspace(95e9, 105e9, 5)
    assert big.ps.num_ttds == 8
    assert np.allclose(big.weights(freqs), bf.weights(freqs), atol=1e-15)
    with pytest.raises(ValueError):
        embed_beamformer(bf, 3)


# -- power ----------------------------------------------------------------------

def test_waterfill_examples():
    p, _ = waterfill(np.array([1.0, 1.0]), 10.0)
    assert np.allclose(p, [5.0, 5.0])
    p, mu = waterfill(np.array([1.0, 0.5]), 3.0)
    assert np.allclose(p, [2.0, 1.0], rtol=1e-12) and mu == pytest.approx(3.0)
    with pytest.warns(RuntimeWarning):
        p, _ = waterfill(np.zeros(4), 2.0)
    assert np.allclose(p, 0.5)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 16), st.integers(0, 10_000), st.floats(0.01, 100))
def test_waterfill_kkt(M, seed, budget):
    rng = np.random.default_rng(seed)
    g = 10 ** rng.uniform(-3, 3, M)
    p, mu = waterfill(g, budget)
    assert p.sum() == pytest.approx(budget, rel=1e-9)
    scale = max(mu, 1.0)
    on = p > 0
    assert np.all(np.abs(mu - 1 / g[on] - p[on]) < 1e-9 * scale)
    assert np.all(mu <= 1 / g[~on] + 1e-9 * scale)


def test_waterfill_sum_rate_picks_assigned_gains():
    cnr = np.array([[1.0, 9.0], [0.5, 9.0]])
    cfg = SystemConfig(transmit_power_w=3.0, num_subbands=2)
    assert np.allclose(waterfill_sum_rate(np.array([0, 0]), cnr, cfg), [2.0, 1.0])


def test_power_log_single_user_is_waterfilling():
    rng = np.random.default_rng(10)
    cfg = SystemConfig(num_subbands=6, num_ff_users=0)
    cnr = 10 ** rng.uniform(-1, 1, (6, 1))
    a = np.zeros(6, int)
    assert np.allclose(power_log_utility(a, cnr, cfg), waterfill_sum_rate(a, cnr, cfg), rtol=1e-9)


def test_power_log_symmetric():
    cfg = SystemConfig(num_subbands=2)
    p = power_log_utility(np.array([0, 1]), np.array([[2.0, 0.0], [0.0, 2.0]]), cfg)
    assert np.allclose(p, [5.0, 5.0])


def test_power_log_matches_grid_search():
    cfg = SystemConfig(num_subbands=2)
    cnr = np.array([[4.0, 0.0], [0.0, 1.0]])
    a = np.array([0, 1])
    p = power_log_utility(a, cnr, cfg)
    u = utility(rates_from_cnr(a, p, cnr, cfg), "log")
    grid = np.linspace(0, cfg.transmit_power_w, 10_001)[1:-1]
    vals = [utility(rates_from_cnr(a, np.array([x, 10 - x]), cnr, cfg), "log") for x in grid]
    assert abs(u - max(vals)) < 1e-4
    assert u >= max(vals) - 1e-12


def test_power_log_stationary():
    rng = np.random.default_rng(11)
    cfg = SystemConfig()
    for _ in range(20):
        cnr = 10 ** rng.uniform(8, 12, (16, 2))
        a = greedy_allocation(cnr, np.full(16, 10 / 16), "log")
        p = power_log_utility(a, cnr, cfg)
        assert p.sum() == pytest.approx(cfg.transmit_power_w, rel=1e-12)
        g = log_utility_gradient(p, a, cnr)
        # step scaled so the gradient moves power by O(budget)
        step = cfg.transmit_power_w / np.abs(g).max()
        assert projected_gradient_norm(p, step * g, cfg.transmit_power_w) < 1e-6 * cfg.transmit_power_w


def test_power_log_names_starved_user():
    cfg = SystemConfig(num_subbands=3)
    with pytest.raises(ValueError, match="user 1"):
        power_log_utility(np.array([0, 0, 0]), np.ones((3, 2)), cfg)


# -- alternating optimization ---------------------------------------------------

def test_single_user_single_subband_reaches_matched_filter():
    cfg = SystemConfig(num_subbands=1, num_ttds=64, num_ff_users=0)
    user = UserPosition.at(70.0, 3.0, cfg)
    ch = synthesize_channels([user], cfg)
    state = alternating_optimize(ch, cfg, "log")
    w = state.bf.weights(ch.subband_frequencies_hz)[0]
    h = ch.h[0, 0]
    assert array_gain(h / np.abs(h), w) == pytest.approx(64.0, rel=1e-6)
    snr = cfg.transmit_power_w * np.linalg.norm(h) ** 2 / cfg.noise_power_w
    assert state.plan.rates[0] == pytest.approx(cfg.bandwidth_hz * math.log2(1 + snr), rel=1e-6)


@pytest.mark.parametrize("kind", ["log", "sum"])
def test_alternating_optimize_contract(cfg, kind):
    users = sample_users(3, cfg)
    ch = synthesize_channels(users, cfg)
    stream = io.StringIO()
    state = alternating_optimize(ch, cfg, kind, trace_stream=stream)
    trace = state.utility_trace
    assert np.all(np.diff(trace) >= 0)
    assert trace[-1] >= trace[0]
    state.plan.check(cfg.num_users, cfg.transmit_power_w)
    state.bf.ttd.check(cfg.max_delay_s)
    assert state.bf.ps.phases.shape == (cfg.num_ttds, cfg.num_antennas // cfg.num_ttds)
    records = [json.loads(line) for line in stream.getvalue().splitlines()]
    assert len(records) == state.iteration
    assert set(records[0]) == {"iter", "utility", "penalty", "constraint_violation", "fit_residual"}
    penalties = [r["penalty"] for r in records]
    assert np.allclose(np.array(penalties[1:]) / penalties[:-1], 5.0)
    assert penalties[0] == cfg.penalty_init
    rates = state.plan.rates
    assert utility(rates, kind) == pytest.approx(state.utility)
    cnr = cnr_matrix(ch, state.bf.weights(ch.subband_frequencies_hz), cfg)
    assert np.allclose(rates, rates_from_cnr(state.plan.assignment, state.plan.power, cnr, cfg))


def test_alternating_optimize_without_nested_start(cfg):
    ch = synthesize_channels(sample_users(4, cfg), cfg)
    state = alternating_optimize(ch, cfg, "log", AoOptions(nested_start=False))
    assert np.all(np.diff(state.utility_trace) >= 0)


def test_alternating_optimize_rejects_zero_ttds(cfg):
    ch = synthesize_channels(sample_users(0, cfg), cfg)
    with pytest.raises(ValueError):
        alternating_optimize(ch, cfg.replace(num_ttds=0), "log")


def test_sca_options_validation():
    with pytest.raises(ValueError):
        ScaOptions(inner_tol=0.0)
