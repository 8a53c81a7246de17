"""Command-line front end.

Subcommands:
  run         one closed-loop simulation, writes metrics/summary to --out
  montecarlo  seeded batch with per-tick envelopes
  baseline    the no-robots burn, for comparison curves
  calibrate   search charger/consumption rates so robots survive the horizon
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .export import write_json
from .sim import SimConfig, load_config, monte_carlo, run


def _base_parser(sub, name: str, help_text: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", type=Path, default=None, help="TOML config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--robots", type=int, default=None)
    p.add_argument(
        "--mode",
        choices=("centralized", "decentralized", "none"),
        default=None,
    )
    p.add_argument("--out", type=Path, default=None, help="output directory")
    return p


def _load(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "robots", None) is not None:
        cfg.team.n_robots = args.robots
    if getattr(args, "mode", None) is not None:
        cfg.control.mode = args.mode
    if args.out is not None:
        cfg.out_dir = str(args.out)
    cfg.validate()
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args)
    if getattr(args, "snapshot_every", None) is not None:
        cfg.snapshot_every = args.snapshot_every
    res = run(cfg)
    print(
        f"peak fire area {res.peak_area:.3f} m^2, "
        f"integral {res.area_integral:.2f} m^2*s, "
        f"extinction {res.extinction_time}"
    )
    if res.world.robots:
        hs = res.metric_array("h_s")
        me = res.metric_array("min_energy")
        print(f"min h_s {hs.min():.4f}, min energy {me.min():.4f}")
        print(f"charger visits {res.charger_visits}")
    print("FAILED: " + res.fail_reason if res.failed else "OK")
    if cfg.out_dir:
        print(f"outputs in {cfg.out_dir}")
    return 1 if res.failed else 0


def _cmd_montecarlo(args) -> int:
    cfg = _load(args)
    out = str(args.out) if args.out else None
    cfg.out_dir = None
    mc = monte_carlo(cfg, args.runs, out_dir=out)
    peaks = mc.scalar(lambda r: r.peak_area)
    ints = mc.scalar(lambda r: r.area_integral)
    print(f"{args.runs} runs, {mc.n_failed} failed")
    print(f"peak area  mean {peaks.mean():.3f}  range [{peaks.min():.3f}, {peaks.max():.3f}]")
    print(f"area integral mean {ints.mean():.2f} range [{ints.min():.2f}, {ints.max():.2f}]")
    exts = [r.extinction_time for r in mc.runs]
    done = [e for e in exts if e is not None]
    print(f"extinguished in {len(done)}/{args.runs} runs"
          + (f", mean t {np.mean(done):.1f} s" if done else ""))
    if out:
        print(f"outputs in {out}")
    return 1 if mc.n_failed else 0


def _cmd_baseline(args) -> int:
    cfg = _load(args)
    cfg.team.n_robots = 0
    cfg.control.mode = "none"
    res = run(cfg)
    print(
        f"baseline burn: peak area {res.peak_area:.3f} m^2, "
        f"integral {res.area_integral:.2f} m^2*s, "
        f"burnout {res.extinction_time}"
    )
    return 0


def _cmd_calibrate(args) -> int:
    """Grid-search charge/drain rates until every robot logs at least the
    requested charger visits without dipping below the energy floor."""
    cfg = _load(args)
    best = None
    report = []
    for r_charge in args.r_charge:
        for c2 in args.c2:
            trial = replace(cfg, out_dir=None)
            trial.energy.r_charge = r_charge
            trial.energy.c2 = c2
            res = run(trial)
            min_vis = min(res.charger_visits) if res.charger_visits else 0
            me = res.metric_array("min_energy")
            floor = float(np.nanmin(me)) if len(me) else 1.0
            ok = (not res.failed) and min_vis >= args.min_visits
            report.append(
                {
                    "r_charge": r_charge,
                    "c2": c2,
                    "min_visits": min_vis,
                    "min_energy": floor,
                    "failed": res.failed,
                    "ok": ok,
                }
            )
            print(
                f"r_charge={r_charge:<6g} c2={c2:<6g} visits>={min_vis} "
                f"minE={floor:.3f} {'ok' if ok else 'reject'}"
            )
            if ok and (best is None or floor > best[0]):
                best = (floor, r_charge, c2)
    doc = {"trials": report}
    if best is not None:
        doc["selected"] = {"r_charge": best[1], "c2": best[2], "min_energy": best[0]}
        print(f"selected r_charge={best[1]} c2={best[2]}")
    else:
        print("no trial met the visit/energy requirements")
    if args.out:
        write_json(Path(args.out) / "calibration.json", doc)
    return 0 if best is not None else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="emberswarm",
        description="density-based multi-robot wildfire suppression sandbox",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = _base_parser(sub, "run", "single closed-loop simulation")
    p_run.add_argument("--snapshot-every", type=int, default=None,
                       help="write field images every k ticks (0 disables)")
    p_run.set_defaults(fn=_cmd_run)

    p_mc = _base_parser(sub, "montecarlo", "seeded batch of runs")
    p_mc.add_argument("--runs", type=int, default=10)
    p_mc.set_defaults(fn=_cmd_montecarlo)

    p_base = _base_parser(sub, "baseline", "uncontrolled burn")
    p_base.set_defaults(fn=_cmd_baseline)

    p_cal = _base_parser(sub, "calibrate", "search recharge/idle-drain rates")
    p_cal.add_argument("--r-charge", type=float, nargs="+", dest="r_charge",
                       default=[0.05, 0.1, 0.2])
    p_cal.add_argument("--c2", type=float, nargs="+", default=[0.02, 0.03, 0.05])
    p_cal.add_argument("--min-visits", type=int, default=2)
    p_cal.set_defaults(fn=_cmd_calibrate)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
