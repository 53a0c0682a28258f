"""Metrics, gain maps and the seeded batch/sweep runner.

All tables are lists of flat dicts with a fixed column order and are written
as CSV with ``repr``-formatted floats, so ``parse_csv(to_csv(rows))``
reproduces the rows exactly.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .arrays import beamformer_weights, utility
from .baselines import fd_optimize, pa_optimize
from .optimizer import AoOptions, alternating_optimize
from .scenario import (
    SystemConfig,
    UserPosition,
    array_response,
    rayleigh_distance,
    sample_users,
    subband_frequencies,
    synthesize_channels,
)

ARCHS = ("fd", "pa", "jpta")
UTILITIES = ("sum", "log")

GAIN_MAP_COLUMNS = ("angle_deg", "range_m", "f_hz", "gain")
BATCH_COLUMNS = ("seed", "scenario", "arch", "utility", "user", "rate_bps", "log_rate",
                 "se", "ee", "runtime_s", "status")
_INT_COLUMNS = {"seed", "scenario", "user"}
_STR_COLUMNS = {"arch", "utility", "status", "parameter"}


@dataclass(frozen=True)
class PowerModel:
    """Hardware power draw per component, watts."""

    p_baseband_w: float = 0.3
    p_rfchain_w: float = 0.2
    p_ps_w: float = 0.03
    p_ttd_w: float = 0.1

    def __post_init__(self):
        if min(self.p_baseband_w, self.p_rfchain_w, self.p_ps_w, self.p_ttd_w) < 0:
            raise ValueError("component powers must be nonnegative")


def architecture_power(arch: str, cfg: SystemConfig, model: PowerModel | None = None) -> float:
    """Total consumed power (W) of one architecture, transmit power included."""
    model = model or PowerModel()
    arch, num_ttds = parse_arch(arch, cfg)
    base = cfg.transmit_power_w + model.p_baseband_w
    if arch == "fd":
        return base + cfg.num_antennas * model.p_rfchain_w
    pa = base + model.p_rfchain_w + cfg.num_antennas * model.p_ps_w
    if arch == "pa":
        return pa
    return pa + num_ttds * model.p_ttd_w


def energy_efficiency(se: float, arch: str, cfg: SystemConfig,
                      model: PowerModel | None = None) -> float:
    """Spectral efficiency per consumed watt (bits/s/Hz/W)."""
    return se / architecture_power(arch, cfg, model)


def parse_arch(arch: str, cfg: SystemConfig) -> tuple[str, int]:
    """Split ``"jpta:64"`` into ``("jpta", 64)``; a bare ``"jpta"`` uses ``cfg.num_ttds``.

    A JPTA with zero delay lines is the phased array.
    """
    name, _, count = arch.partition(":")
    if name not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHS}")
    if name != "jpta":
        if count:
            raise ValueError(f"architecture {name!r} takes no delay-line count")
        return name, 0
    num_ttds = int(count) if count else cfg.num_ttds
    if num_ttds < 0:
        raise ValueError("delay-line count must be nonnegative")
    if num_ttds == 0:
        return "pa", 0
    return "jpta", num_ttds


# -- gain maps ------------------------------------------------------------


@dataclass(frozen=True)
class GainMapSpec:
    """Spatial grid and subband selection for :func:`gain_map`.

    ``mode`` is ``"one"`` (subband ``subband``, 0-based), ``"all"`` (every
    subband) or ``"averaged"`` (per user, the mean over its assigned
    subbands). ``carrier_referenced`` evaluates every steering vector at the
    carrier instead of the subband frequency (narrowband array model).
    """

    angle_min_deg: float = 0.5
    angle_max_deg: float = 179.5
    angle_step_deg: float = 0.5
    range_min_m: float = 1.0
    range_max_m: float = 20.0
    range_step_m: float = 0.5
    mode: str = "all"
    subband: int = 0
    carrier_referenced: bool = False

    def angles(self) -> np.ndarray:
        return _grid(self.angle_min_deg, self.angle_max_deg, self.angle_step_deg, "angle")

    def ranges(self) -> np.ndarray:
        return _grid(self.range_min_m, self.range_max_m, self.range_step_m, "range")


def _grid(lo: float, hi: float, step: float, name: str) -> np.ndarray:
    if step <= 0 or hi < lo:
        raise ValueError(f"empty {name} grid")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def steering_vector(angle_deg: float, range_m: float, f_hz: float, cfg: SystemConfig) -> np.ndarray:
    """Unit-modulus response toward a point, near or far field by its range."""
    return array_response(UserPosition.at(angle_deg, range_m, cfg), f_hz, cfg)


def gain_map(bf, spec: GainMapSpec, cfg: SystemConfig, assignment=None) -> list[dict]:
    """Array gain ``|a^H w_m|^2`` of ``bf`` over the grid in ``spec``.

    Returns rows with columns ``angle_deg, range_m, f_hz, gain``. In averaged
    mode ``assignment`` is required; each user contributes one row per grid
    point with ``f_hz`` the mean of its subband frequencies.
    """
    freqs = subband_frequencies(cfg)
    weights = beamformer_weights(bf, freqs)
    angles, ranges = spec.angles(), spec.ranges()
    if not np.all((angles > 0) & (angles < 180)):
        raise ValueError("gain map angles must lie in (0, 180) degrees")
    if ranges[0] <= 0:
        raise ValueError("gain map ranges must be positive")

    if spec.mode == "one":
        if not 0 <= spec.subband < len(freqs):
            raise ValueError(f"subband {spec.subband} outside 0..{len(freqs) - 1}")
        groups = [(freqs[spec.subband], [spec.subband])]
    elif spec.mode == "all":
        groups = [(f, [m]) for m, f in enumerate(freqs)]
    elif spec.mode == "averaged":
        if assignment is None:
            raise ValueError("averaged mode needs the subband assignment")
        assignment = np.asarray(assignment)
        groups = [(float(freqs[assignment == k].mean()), list(np.flatnonzero(assignment == k)))
                  for k in np.unique(assignment)]
    else:
        raise ValueError(f"unknown gain map mode {spec.mode!r}")

    rows = []
    for angle in angles:
        for rng in ranges:
            user = UserPosition.at(float(angle), float(rng), cfg)
            if spec.carrier_referenced:
                a_fc = array_response(user, cfg.carrier_frequency_hz, cfg)
            for f_label, subbands in groups:
                gains = []
                for m in subbands:
                    a = a_fc if spec.carrier_referenced else array_response(user, freqs[m], cfg)
                    gains.append(abs(np.vdot(a, weights[m])) ** 2)
                rows.append({"angle_deg": float(angle), "range_m": float(rng),
                             "f_hz": float(f_label), "gain": float(np.mean(gains))})
    return rows


# -- batch results and metrics --------------------------------------------


@dataclass
class BatchResult:
    """One row per (scenario, arch, utility, user)."""

    rows: list = field(default_factory=list)
    bandwidth_hz: float = 0.0

    def select(self, arch: str | None = None, kind: str | None = None, ok_only: bool = True):
        return [r for r in self.rows
                if (arch is None or r["arch"] == arch)
                and (kind is None or r["utility"] == kind)
                and (not ok_only or r["status"] == "ok")]

    def scenario_table(self, arch: str, kind: str) -> dict:
        """``scenario -> per-user rates`` for one (arch, utility) pair."""
        out: dict = {}
        for r in self.select(arch, kind):
            out.setdefault(r["scenario"], []).append(r["rate_bps"])
        return {s: np.asarray(v) for s, v in sorted(out.items())}

    def mean_utility(self, arch: str, kind: str = "log", measure: str | None = None) -> float:
        """Batch mean of the per-scenario utility ``measure`` (defaults to ``kind``)."""
        table = self.scenario_table(arch, kind)
        if not table:
            raise ValueError(f"no successful rows for {arch}/{kind}")
        return float(np.mean([utility(v, measure or kind) for v in table.values()]))

    def min_rates(self, arch: str, kind: str) -> dict:
        return {s: float(v.min()) for s, v in self.scenario_table(arch, kind).items()}


def rate_cdf(batch: BatchResult | Sequence[float], arch: str | None = None,
             kind: str | None = None) -> np.ndarray:
    """Empirical CDF of per-user rates pooled across scenarios, shape ``(n, 2)``."""
    if isinstance(batch, BatchResult):
        rates = [r["rate_bps"] for r in batch.select(arch, kind)]
    else:
        rates = list(batch)
    if not rates:
        raise ValueError("no rates to build a CDF from")
    x = np.sort(np.asarray(rates, dtype=float), kind="stable")
    return np.column_stack([x, np.arange(1, x.size + 1) / x.size])


def spectral_efficiency(batch: BatchResult, arch: str, kind: str = "log") -> float:
    """Batch mean of ``sum_k R_k / B`` (bits/s/Hz)."""
    table = batch.scenario_table(arch, kind)
    if not table:
        raise ValueError(f"no successful rows for {arch}/{kind}")
    return float(np.mean([v.sum() / batch.bandwidth_hz for v in table.values()]))


# -- batch runner ------------------------------------------------------------


def scenario_seed(seed: int, index: int) -> int:
    """Deterministic per-scenario seed derived from the batch seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def solve(channels, cfg: SystemConfig, arch: str, kind: str, opts: AoOptions | None = None,
          trace_stream=None):
    """Dispatch to the solver for ``arch`` (see :func:`parse_arch`)."""
    name, num_ttds = parse_arch(arch, cfg)
    if name == "fd":
        return fd_optimize(channels, cfg, kind, opts, trace_stream)
    if name == "pa":
        return pa_optimize(channels, cfg, kind, opts, trace_stream)
    return alternating_optimize(channels, cfg.replace(num_ttds=num_ttds), kind, opts, trace_stream)


def _scenario_rows(args) -> list[dict]:
    cfg, seed, index, archs, kinds, model, opts = args
    users = sample_users(scenario_seed(seed, index), cfg)
    channels = synthesize_channels(users, cfg)
    rows = []
    for arch in archs:
        for kind in kinds:
            start = time.perf_counter()
            try:
                state = solve(channels, cfg, arch, kind, opts)
                rates, status = state.plan.rates, "ok"
            except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
                rates, status = np.full(len(users), math.nan), f"error: {exc}"
            runtime = time.perf_counter() - start
            se = float(rates.sum() / cfg.bandwidth_hz)
            ee = energy_efficiency(se, arch, cfg, model)
            for k, rate in enumerate(rates):
                rate = float(rate)
                rows.append({
                    "seed": seed, "scenario": index, "arch": arch, "utility": kind, "user": k,
                    "rate_bps": rate,
                    "log_rate": math.log(rate) if rate > 0 else -math.inf if rate == 0 else math.nan,
                    "se": se, "ee": ee, "runtime_s": runtime, "status": status,
                })
    return rows


def run_batch(cfg: SystemConfig, n_scenarios: int, seed: int,
              archs: Iterable[str] = ARCHS, kinds: Iterable[str] = ("log",),
              model: PowerModel | None = None, opts: AoOptions | None = None,
              workers: int = 1) -> BatchResult:
    """Solve ``n_scenarios`` seeded scenarios for every (arch, utility) pair.

    Scenario ``i`` draws its users from ``scenario_seed(seed, i)``, so any two
    batches with the same seed and placement settings see the same users.
    Solver failures become rows with ``status`` starting with ``"error"``.
    Rows are ordered by scenario regardless of ``workers``.
    """
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be at least 1")
    archs, kinds = list(archs), list(kinds)
    for arch in archs:
        parse_arch(arch, cfg)
    for kind in kinds:
        if kind not in UTILITIES:
            raise ValueError(f"unknown utility {kind!r}")
    jobs = [(cfg, seed, i, archs, kinds, model, opts) for i in range(n_scenarios)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_scenario_rows, jobs))
    else:
        chunks = [_scenario_rows(job) for job in jobs]
    return BatchResult([row for chunk in chunks for row in chunk], cfg.bandwidth_hz)


SWEEP_PARAMETERS = {
    "num_ttds": int,
    "max_delay_s": float,
    "bandwidth_hz": float,
}


def sweep(parameter: str, values: Sequence, cfg: SystemConfig, n_scenarios: int, seed: int,
          archs: Iterable[str] = ("jpta",), kinds: Iterable[str] = ("log",),
          model: PowerModel | None = None, opts: AoOptions | None = None,
          workers: int = 1) -> dict:
    """One :func:`run_batch` per value of ``parameter``, all with the same seed.

    Returns ``{value: BatchResult}`` in the order given. For ``num_ttds`` a
    value of 0 runs the phased array in place of JPTA.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"cannot sweep {parameter!r}; choose from {sorted(SWEEP_PARAMETERS)}")
    if len(values) == 0:
        raise ValueError("sweep needs at least one value")
    out = {}
    for value in values:
        value = SWEEP_PARAMETERS[parameter](value)
        out[value] = run_batch(cfg.replace(**{parameter: value}), n_scenarios, seed,
                               archs, kinds, model, opts, workers)
    return out


def sweep_rows(parameter: str, results: dict) -> list[dict]:
    """Flatten a sweep into batch rows prefixed by ``parameter`` and ``value``."""
    return [{"parameter": parameter, "value": value, **row}
            for value, batch in results.items() for row in batch.rows]


# -- CSV -------------------------------------------------------------------


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None, stream=None,
           exclude: Sequence[str] = ()) -> str:
    """Serialize rows; returns the text (also written to ``stream`` when given)."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    columns = [c for c in columns if c not in exclude]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(row[c]) for c in columns])
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def parse_csv(text: str) -> list[dict]:
    """Inverse of :func:`to_csv` for the tables produced here."""
    reader = csv.reader(io.StringIO(text))
    try:
        columns = next(reader)
    except StopIteration:
        return []
    rows = []
    for record in reader:
        row = {}
        for col, raw in zip(columns, record):
            if col in _STR_COLUMNS:
                row[col] = raw
            elif col in _INT_COLUMNS:
                row[col] = int(raw)
            else:
                row[col] = float(raw)
        rows.append(row)
    return rows


def batch_csv(batch: BatchResult, include_runtime: bool = True) -> str:
    exclude = () if include_runtime else ("runtime_s",)
    return to_csv(batch.rows, BATCH_COLUMNS, exclude=exclude)
