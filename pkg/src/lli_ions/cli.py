"""Simulate and analyze an entangled-ion Lorentz-invariance test.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__, csvio, pipelines
from .config import ConfigError, dump_ini, load_config

log = logging.getLogger("lli_ions")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI configuration file")
    p.add_argument("--seed", type=int, help="master seed (overrides [pipeline] seed)")
    p.add_argument("--out", type=Path, help="output directory (overrides [pipeline] out)")
    p.add_argument("--svg", action="store_true", help="also render SVG figures (needs matplotlib)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lli-ions", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gate-dynamics", help="population dynamics of the calibrated MS gate")
    _common(p)

    p = sub.add_parser("simulate", help="simulate a measurement campaign")
    _common(p)
    p.add_argument("--scheme", choices=("entangled", "mixed"))

    p = sub.add_parser("analyze", help="frequencies, Allan deviation, sidereal fit and bounds")
    _common(p)
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--field-log", type=Path)
    p.add_argument("--trap-log", type=Path)

    p = sub.add_parser("reproduce", help="bundled preset runs compared to published numbers")
    _common(p)
    p.add_argument("--preset", required=True, choices=pipelines.PRESETS)

    p = sub.add_parser("calibrate-shots", help="shots per point for a target Allan prefactor")
    _common(p)
    p.add_argument("--target", type=float, default=1.72, help="Hz sqrt(s)")
    return ap


def _resolve(args):
    cfg = load_config(args.config)
    pipe = cfg.pipeline
    if args.seed is not None:
        pipe = replace(pipe, seed=args.seed)
    if args.out is not None:
        pipe = replace(pipe, out=str(args.out))
    if args.svg:
        pipe = replace(pipe, svg=True)
    cfg = replace(cfg, pipeline=pipe)
    if getattr(args, "scheme", None):
        cfg = replace(cfg, run=replace(cfg.run, scheme=args.scheme))
    return cfg


def _snapshot(cfg, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    csvio.write_json(out / "resolved_config.json", cfg.snapshot())
    (out / "resolved_config.ini").write_text(dump_ini(cfg), encoding="utf-8")


def _run(args) -> int:
    cfg = _resolve(args)
    out = Path(cfg.pipeline.out)
    _snapshot(cfg, out)
    seed = cfg.pipeline.seed
    if args.command == "gate-dynamics":
        g = pipelines.gate_dynamics(cfg, out)
        print(f"P_SS={g['p_ss']:.4f} P_DD={g['p_dd']:.4f} transient={g['transient']:.2e} "
              f"oracle fidelity={g['oracle_fidelity']:.9f}")
        if cfg.pipeline.svg:
            from . import plots

            plots.gate_svg(out / "gate_dynamics.csv", out / "gate_dynamics.svg")
    elif args.command == "simulate":
        rl = pipelines.simulate(cfg, out, seed)
        print(f"{rl.n_blocks} blocks, {len(rl.records)} records, scheme {rl.scheme} -> {out}")
    elif args.command == "analyze":
        records = csvio.read_records(args.records)
        field_log = csvio.read_log(args.field_log) if args.field_log else None
        if field_log is None:
            print("warning: no field log given; frequencies are not Zeeman-corrected", file=sys.stderr)
        trap_log = csvio.read_log(args.trap_log, csvio.TRAP_LOG_COLUMNS) if args.trap_log else None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = pipelines.analyze_records(records, field_log, trap_log, cfg)
        pipelines.write_analysis(res, cfg, out)
        print(res.bounds.table())
        if cfg.pipeline.svg:
            from . import plots

            plots.allan_svg(out / "allan.csv", out / "allan.svg")
            plots.series_svg(out / "binned_series.csv", out / "binned_series.svg")
    elif args.command == "reproduce":
        summary = pipelines.reproduce(args.preset, cfg, out, seed)
        for c in summary["comparisons"]:
            flag = "PASS" if c["pass"] else "FAIL"
            print(f"{flag} {c['quantity']}: {c['produced']:.4g} (reference {c['reference']:.4g}, {c['tolerance']})")
    elif args.command == "calibrate-shots":
        from .runner import calibrate_shots_per_point, projection_prefactor

        n = calibrate_shots_per_point(args.target, cfg.run, cfg.environment)
        print(f"shots_per_point={n} (prefactor {projection_prefactor(n, cfg.run, cfg.environment):.3f} Hz sqrt(s))")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, csvio.SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
