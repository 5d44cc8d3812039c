"""Command-line entry point: ``run``, ``mesh`` and ``validate``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import driver
from .linalg import SolverError
from .mesh import MeshError, write_msh

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3


def _read_config(path: str | None) -> driver.ScenarioConfig:
    if path is None:
        return driver.ScenarioConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise driver.ConfigError(f"{path}: {exc.strerror}") from exc
    return driver.load_config(text)


def cmd_run(args) -> int:
    cfg = _read_config(args.config)
    if args.scenario:
        cfg = cfg.replace(scenario=args.scenario.upper())
    if args.mesh:
        cfg = cfg.replace(mesh_path=args.mesh)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg = cfg.replace(output=driver.OutputConfig(str(out / "timeseries.csv"), str(out),
                                                     cfg.output.snapshot_years))
    res = driver.run(cfg, n_steps=args.steps)
    last = res.records[-1]
    print(f"{cfg.scenario}: {len(res.records) - 1} steps, t = {last['t_days']:g} d, "
          f"corg_total = {last['corg_total']:.6g}, T_max = {last['T_max_K']:.6g} K")
    return EXIT_OK


def cmd_mesh(args) -> int:
    try:
        data = json.loads(Path(args.spec).read_text())
    except OSError as exc:
        raise driver.ConfigError(f"{args.spec}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise driver.ConfigError(f"{args.spec}: invalid JSON ({exc.msg})") from exc
    spec = driver._section(driver.GeometrySpec, data, "$")
    mesh, pipes = driver.generate_alveolus(spec)
    with open(args.out, "w") as fh:
        write_msh(mesh, fh)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_tets} tets, {len(pipes)} pipes")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _read_config(args.config)
    print(f"ok: {cfg.scenario}, {cfg.n_steps} steps of {cfg.dt_days:g} d")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alveolus", description="Bioreactor landfill cell simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--config")
    r.add_argument("--scenario", choices=[s.lower() for s in driver.SCENARIOS] + list(driver.SCENARIOS))
    r.add_argument("--out")
    r.add_argument("--mesh")
    r.add_argument("--steps", type=int)
    r.set_defaults(func=cmd_run)
    m = sub.add_parser("mesh", help="generate the alveolus mesh as MSH 2.2")
    m.add_argument("--spec", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mesh)
    v = sub.add_parser("validate", help="check a configuration file")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (driver.ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
