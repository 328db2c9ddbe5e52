"""Command-line front end: ``qcsb {simulate,sweep,thermo,glass-map,validate}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 validation failure.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config, experiments, glass, io, thermo
from .dynamics import StiffnessError
from .statespace import TruncationError

log = logging.getLogger("qcsb")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VALIDATION = 3

GLASS_DIGITS = 9
MIN_COMPUTED_FRACTION = 0.9


def _load(args) -> dict:
    cfg = config.load(args.config) if args.config else config.normalize({})
    if args.tol is not None:
        if not args.tol > 0:
            raise config.ConfigError(f"--tol: must be positive, got {args.tol}")
        cfg["numerics"]["tol"] = args.tol
        cfg["glass"]["epsrel"] = args.tol
    return cfg


@contextlib.contextmanager
def _executor(threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex
    else:
        yield None


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    try:
        traj, summary = experiments.simulate(cfg)
    except StiffnessError as exc:
        if exc.partial is not None:
            io.atomic_write_text(out / "trajectory.csv.partial", io.trajectory_csv_text(exc.partial))
            log.error("partial trajectory written to %s", out / "trajectory.csv.partial")
        raise
    io.write_trajectory(out / "trajectory.csv", traj)
    io.write_json(out / "summary.json", io.SUMMARY_SCHEMA, summary)
    for w in traj.warnings:
        log.warning("%s", w)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.axis is not None:
        cfg["sweep"]["axis"] = args.axis
    out = Path(args.out)
    with _executor(args.threads) as ex:
        columns, payload = experiments.sweep(cfg, ex)
    io.write_csv(out / "sweep.csv", io.SWEEP_SCHEMA, columns)
    io.write_json(out / "fits.json", io.SWEEP_SCHEMA, payload)
    for v in payload["failed_points"]:
        log.warning("sweep point %s failed; see the flag column of sweep.csv", v)
    return EXIT_OK


def cmd_thermo(args) -> int:
    cfg = _load(args)
    params = config.model_params(cfg)
    t = cfg["thermo"]
    data = thermo.summary(params, t["force"], t["x"], config.bath_spectrum(cfg))
    payload = {"config": config.public(cfg), "thermo": data}
    text = io.json_text(io.SUMMARY_SCHEMA, payload)
    if args.out:
        io.atomic_write_text(Path(args.out) / "thermo.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def material_from_config(cfg) -> glass.GlassMaterial:
    g = cfg["glass"]
    if g["material"] is not None:
        return glass.GlassMaterial.from_mapping(g["material"])
    if g["material_file"] is not None:
        path = Path(g["material_file"])
        if not path.is_absolute() and "_path" in cfg:
            path = Path(cfg["_path"]).parent / path
        return glass.GlassMaterial.from_file(path)
    return glass.silica()


def cmd_glass_map(args) -> int:
    cfg = _load(args)
    g = cfg["glass"]
    try:
        material = material_from_config(cfg)
    except (OSError, ValueError, KeyError) as exc:
        raise config.ConfigError(f"glass material: {exc}") from None
    with _executor(args.threads) as ex:
        grid = glass.rs_grid(
            material, (g["freq_min"], g["freq_max"]), (g["temp_min"], g["temp_max"]),
            (g["n_freq"], g["n_temp"]), g["epsrel"], ex,
        )
    TT, WW = np.meshgrid(grid.temps, grid.freqs, indexing="ij")
    out = Path(args.out)
    io.write_csv(out / "rsgrid.csv", io.RSGRID_SCHEMA, {
        "T": TT.ravel(), "omega_p": WW.ravel(), "R_s": grid.values.ravel(),
        "flag": [str(f) for f in grid.flags.ravel()],
    }, GLASS_DIGITS)
    io.write_csv(out / "boundary.csv", io.BOUNDARY_SCHEMA,
                 {"T": grid.temps, "omega_p": grid.boundary}, GLASS_DIGITS)
    for msg in grid.messages:
        print(f"flagged cell: {msg}", file=sys.stderr)
    frac = grid.computed_fraction
    if frac < MIN_COMPUTED_FRACTION:
        log.error("only %.1f%% of grid cells computed", 100 * frac)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import run_validation

    counts = tuple(int(c) for c in args.spin_counts.split(","))
    report = run_validation(spin_counts=counts, t_end=args.t_end, gain_scale=args.gain_scale)
    text = io.json_text(io.VALIDATION_SCHEMA, report)
    if args.out:
        io.atomic_write_text(Path(args.out) / "validation.json", text)
    sys.stdout.write(text)
    if not report["passed"]:
        log.error("validation failed: %s", ", ".join(report["failed"]))
        return EXIT_VALIDATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config; defaults apply when omitted")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps and grids")
    common.add_argument("--tol", type=float, default=None, help="override the integrator/quadrature tolerance")
    common.add_argument("--seed", type=int, default=None, help="reserved; nothing here is stochastic")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="qcsb", description="Entropic-spring (QCSB) simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="one trajectory -> trajectory.csv, summary.json")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("sweep", parents=[common], help="sweep N or omega -> sweep.csv, fits.json")
    p.add_argument("--axis", choices=("N", "omega"), default=None, help="overrides sweep.axis")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("thermo", parents=[common], help="closed-form thermodynamics -> stdout (and thermo.json)")
    p.set_defaults(func=cmd_thermo, out=None)
    p = sub.add_parser("glass-map", parents=[common], help="R_s map -> rsgrid.csv, boundary.csv")
    p.set_defaults(func=cmd_glass_map)
    p = sub.add_parser("validate", parents=[common], help="oracle and invariant checks -> JSON report")
    p.add_argument("--spin-counts", default="1,2,3", help=argparse.SUPPRESS)
    p.add_argument("--t-end", type=float, default=20.0, help=argparse.SUPPRESS)
    p.add_argument("--gain-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate, out=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="qcsb: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (config.ConfigError, TruncationError) as exc:
        print(f"qcsb: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StiffnessError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"qcsb: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
