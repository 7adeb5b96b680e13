"""Mission-runner command line: config in, telemetry/events/summary/plots out.

Exit codes: 0 mission success, 1 configuration/validation error, 2 mission
failure (non-convergence, infeasible detumbling, unreachable grasp),
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import model as model_mod
from . import plotting, sim
from .errors import ConfigError, InfeasibleError, KinematicsError, SimulationError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MISSION = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spinsim",
                description="Run the capture-and-detumble mission simulation.")
    p.add_argument("--config", required=True, help="mission configuration (JSON)")
    p.add_argument("--out", default=None,
                   help="output directory (default: $SPINSIM_OUT or ./spinsim_out)")
    p.add_argument("--dt", type=float, default=None, help="integration step override (s)")
    p.add_argument("--duration", type=float, default=None,
                   help="mission horizon override (s)")
    p.add_argument("--plot", action="store_true", help="emit SVG telemetry figures")
    p.add_argument("--phase", choices=("A", "B", "C"), default=None,
                   help="run a single phase from its canonical start state")
    p.add_argument("--appendix-literal", action="store_true",
                   help="use the printed (literal) wheel-constraint constant in the "
                        "decay-rate optimizer")
    p.add_argument("--sweep", default=None,
                   help="JSON batch file: [{name, overrides{dotted.key: value}}]")
    return p


def _set_dotted(cfg: dict, key: str, value):
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"sweep override {key}: path element {part!r} not found")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"sweep override {key}: field {parts[-1]!r} not found")
    node[parts[-1]] = value


def _run_one(model, args, out_dir: Path) -> int:
    try:
        result = sim.run_mission(model, duration=args.duration, dt=args.dt,
                                 phase_only=args.phase,
                                 appendix_literal=args.appendix_literal)
    except (SimulationError, InfeasibleError, KinematicsError) as exc:
        print(f"mission failed: {exc}", file=sys.stderr)
        return EXIT_MISSION

    out_dir.mkdir(parents=True, exist_ok=True)
    result.telemetry.to_csv(out_dir / "telemetry.csv")
    sim.write_events(result, out_dir / "events.csv")
    report = sim.emit_summary(result)
    (out_dir / "summary.txt").write_text(report + "\n")
    if args.plot:
        plotting.mission_figures(result, str(out_dir))
    print(report)
    print(f"\noutputs written to {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE

    out_root = Path(args.out or os.environ.get("SPINSIM_OUT", "spinsim_out"))

    try:
        base_cfg = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"{args.config}: invalid JSON ({exc})", file=sys.stderr)
        return EXIT_CONFIG

    if args.sweep is None:
        try:
            model = model_mod.parse_config(base_cfg)
        except ConfigError as exc:
            print(f"invalid configuration: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return _run_one(model, args, out_root)

    try:
        entries = json.loads(Path(args.sweep).read_text())
        if not isinstance(entries, list):
            raise ConfigError("sweep file must hold a JSON list")
    except FileNotFoundError:
        print(f"sweep file not found: {args.sweep}", file=sys.stderr)
        return EXIT_CONFIG
    except (json.JSONDecodeError, ConfigError) as exc:
        print(f"{args.sweep}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    worst = EXIT_OK
    rows = []
    for i, entry in enumerate(entries):
        name = str(entry.get("name", f"run{i:03d}"))
        cfg = json.loads(json.dumps(base_cfg))
        try:
            for key, value in entry.get("overrides", {}).items():
                _set_dotted(cfg, key, value)
            model = model_mod.parse_config(cfg)
        except ConfigError as exc:
            print(f"[{name}] invalid configuration: {exc}", file=sys.stderr)
            worst = max(worst, EXIT_CONFIG)
            continue
        print(f"=== {name} ===")
        code = _run_one(model, args, out_root / name)
        worst = max(worst, code)
        rows.append((name, code))
    with open(out_root / "sweep_summary.csv", "w") as f:
        f.write("name,exit_code\n")
        for name, code in rows:
            f.write(f"{name},{code}\n")
    return worst


if __name__ == "__main__":
    sys.exit(main())
