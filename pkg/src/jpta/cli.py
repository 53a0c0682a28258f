"""Command-line entry point: ``jpta {optimize,gain-map,batch,sweep}``.

Errors are reported on stderr as one JSON object ``{"error": ..., "message": ...}``
with exit status 1 (2 for command-line usage errors).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .arrays import beamformer_from_record, beamformer_to_record, plan_from_record, plan_to_record
from .scenario import SystemConfig, config_to_dict, load_config, sample_users, synthesize_channels


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        json.dump({"error": "UsageError", "message": message}, sys.stderr)
        sys.stderr.write("\n")
        self.exit(2)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="scenario file (key = value lines)")
    parser.add_argument("--seed", type=int, help="overrides the seed in --config")
    parser.add_argument("--out", type=Path, help="output file (default: stdout)")


def _csv_list(kind):
    def parse(text):
        return [kind(v) for v in text.split(",") if v.strip()]
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jpta", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="solve one scenario and write the solution as JSON")
    _common(p)
    p.add_argument("--arch", default="jpta", help="fd, pa, jpta or jpta:<num_ttds>")
    p.add_argument("--utility", default="log", choices=harness.UTILITIES)
    p.add_argument("--trace", type=Path, help="write per-iteration JSON lines here")

    p = sub.add_parser("gain-map", help="array gain over an angle/range grid as CSV")
    _common(p)
    p.add_argument("--arch", default="jpta")
    p.add_argument("--utility", default="log", choices=harness.UTILITIES)
    p.add_argument("--solution", type=Path, help="solution JSON from 'optimize' (skips solving)")
    p.add_argument("--mode", default="averaged", choices=("one", "all", "averaged"))
    p.add_argument("--subband", type=int, default=0, help="0-based subband for --mode one")
    p.add_argument("--angles", type=_csv_list(float), default=[0.5, 179.5, 0.5],
                   metavar="MIN,MAX,STEP", help="degrees")
    p.add_argument("--ranges", type=_csv_list(float), default=[1.0, 20.0, 0.5],
                   metavar="MIN,MAX,STEP", help="meters")
    p.add_argument("--carrier-referenced", action="store_true",
                   help="evaluate steering vectors at the carrier frequency")

    for name, helptext in (("batch", "seeded batch of scenarios as CSV"),
                           ("sweep", "one batch per parameter value as CSV")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--arch", type=_csv_list(str), default=list(harness.ARCHS),
                       help="comma-separated list, e.g. fd,pa,jpta:64")
        p.add_argument("--utility", type=_csv_list(str), default=["log"],
                       help="comma-separated subset of sum,log")
        p.add_argument("--scenarios", type=int, default=50)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--no-runtime", action="store_true",
                       help="omit the runtime_s column (byte-reproducible output)")
        if name == "sweep":
            p.add_argument("--parameter", required=True, choices=sorted(harness.SWEEP_PARAMETERS))
            p.add_argument("--values", required=True, type=_csv_list(float))
    return parser


def _load(args) -> tuple[SystemConfig, int]:
    cfg, seed = load_config(args.config) if args.config else (SystemConfig(), 0)
    if args.seed is not None:
        if args.seed < 0:
            raise ValueError("seed must be nonnegative")
        seed = args.seed
    return cfg, seed


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _solve(cfg, seed, arch, kind, trace_stream=None):
    users = sample_users(seed, cfg)
    channels = synthesize_channels(users, cfg)
    return users, harness.solve(channels, cfg, arch, kind, trace_stream=trace_stream)


def cmd_optimize(args) -> None:
    cfg, seed = _load(args)
    name, num_ttds = harness.parse_arch(args.arch, cfg)
    if name == "jpta":
        cfg = cfg.replace(num_ttds=num_ttds)
    stream = open(args.trace, "w") if args.trace else None
    try:
        users, state = _solve(cfg, seed, args.arch, args.utility, stream)
    finally:
        if stream is not None:
            stream.close()
    record = {
        "config": config_to_dict(cfg, seed),
        "arch": args.arch,
        "utility_kind": args.utility,
        "users": [{"angle_deg": u.angle_deg, "range_m": u.range_m, "field": u.field_tag}
                  for u in users],
        "utility": state.utility,
        "iterations": state.iteration,
        "plan": plan_to_record(state.plan),
        "beamformer": beamformer_to_record(state.bf),
    }
    _emit(json.dumps(record, indent=2) + "\n", args.out)


def cmd_gain_map(args) -> None:
    if args.solution is not None:
        from .scenario import config_from_dict

        record = json.loads(args.solution.read_text())
        cfg, _ = config_from_dict(record["config"])
        bf = beamformer_from_record(record["beamformer"])
        assignment = plan_from_record(record["plan"]).assignment
    else:
        cfg, seed = _load(args)
        _, state = _solve(cfg, seed, args.arch, args.utility)
        bf, assignment = state.bf, state.plan.assignment
    for name, grid in (("--angles", args.angles), ("--ranges", args.ranges)):
        if len(grid) != 3:
            raise ValueError(f"{name} expects MIN,MAX,STEP")
    spec = harness.GainMapSpec(*args.angles, *args.ranges, mode=args.mode,
                               subband=args.subband,
                               carrier_referenced=args.carrier_referenced)
    rows = harness.gain_map(bf, spec, cfg, assignment)
    _emit(harness.to_csv(rows, harness.GAIN_MAP_COLUMNS), args.out)


def cmd_batch(args) -> None:
    cfg, seed = _load(args)
    batch = harness.run_batch(cfg, args.scenarios, seed, args.arch, args.utility,
                              workers=args.workers)
    _emit(harness.batch_csv(batch, include_runtime=not args.no_runtime), args.out)


def cmd_sweep(args) -> None:
    cfg, seed = _load(args)
    results = harness.sweep(args.parameter, args.values, cfg, args.scenarios, seed,
                            args.arch, args.utility, workers=args.workers)
    columns = ("parameter", "value") + harness.BATCH_COLUMNS
    exclude = ("runtime_s",) if args.no_runtime else ()
    _emit(harness.to_csv(harness.sweep_rows(args.parameter, results), columns, exclude=exclude),
          args.out)


COMMANDS = {
    "optimize": cmd_optimize,
    "gain-map": cmd_gain_map,
    "batch": cmd_batch,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with np.errstate(all="ignore"):
            COMMANDS[args.command](args)
    except Exception as exc:  # reported as machine-readable JSON
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
