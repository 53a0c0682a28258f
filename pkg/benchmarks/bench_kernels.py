"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints one line per kernel with the median time of each backend and the
speed-up. The compiled backend is skipped when the extension is not built.
"""

import argparse
import timeit

import numpy as np

from jpta import _fallback
from jpta.optimizer import _grid_tables
from jpta.scenario import SystemConfig, subband_frequencies

try:
    from jpta import _core
except ImportError:
    _core = None


def cases(rng):
    cfg = SystemConfig()
    M, K = cfg.num_subbands, 5
    c = rng.uniform(1.0, 20.0, (M, K))
    lin = 1e-3 * rng.standard_normal((M, K))
    b0 = np.full((M, K), 1.0 / K)
    cos_tab, sin_tab = _grid_tables(tuple(subband_frequencies(cfg)), cfg.max_delay_s,
                                    cfg.ttd_grid_points)
    coef = rng.standard_normal((cfg.num_ttds, M)) + 1j * rng.standard_normal((cfg.num_ttds, M))
    inv_gain = 10 ** rng.uniform(-3, 0, M)
    owner = np.arange(M) % K
    y = rng.standard_normal((M, K))
    return {
        "project_simplex_rows": lambda k: k.project_simplex_rows(y),
        "sca_ascent": lambda k: k.sca_ascent(b0, c, lin, True, 1e-9, 500),
        "ttd_grid_argmax": lambda k: k.ttd_grid_argmax(coef, cos_tab, sin_tab),
        "waterfill_level": lambda k: k.waterfill_level(inv_gain, 10.0, 1e-12),
        "log_power_levels": lambda k: k.log_power_levels(inv_gain, owner, K, 10.0, 1e-12),
    }


def median_time(fn, repeat):
    return float(np.median(timeit.repeat(fn, number=1, repeat=repeat)))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'cython [ms]':>13}{'speed-up':>10}")
    for name, run in cases(rng).items():
        t_py = median_time(lambda: run(_fallback), args.repeat)
        if _core is None:
            print(f"{name:<22}{1e3 * t_py:>12.3f}{'n/a':>13}{'':>10}")
            continue
        t_cy = median_time(lambda: run(_core), args.repeat)
        print(f"{name:<22}{1e3 * t_py:>12.3f}{1e3 * t_cy:>13.3f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
