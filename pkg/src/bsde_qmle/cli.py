"""Command-line front end: ``simulate``, ``estimate``, ``experiment``, ``rates``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import config as cfgmod
from .errors import BsdeQmleError, ConfigError
from .estimator import build_blocks, maximize_quasi_lik
from .experiments import ExperimentConfig, atomic_write_text, run_replications, write_outputs
from .rates import grid_csv, schedule
from .sde_sim import read_observation_csv, simulate_scenario, write_observation_csv

log = logging.getLogger("bsde_qmle")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsde-qmle", description=__doc__)
    p.add_argument("subcommand", choices=["simulate", "estimate", "experiment", "rates"])
    p.add_argument("--config", help="JSON run configuration (not needed for rates)")
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dot-path override, repeatable")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args) -> tuple:
    if not args.config:
        raise ConfigError(f"{args.subcommand} requires --config", key="--config")
    raw = cfgmod.apply_overrides(cfgmod.load_config(args.config), args.overrides)
    return cfgmod.resolve(raw)


def _step_and_block(section: dict, n: int, where: str) -> tuple:
    """``h`` and ``c`` from explicit values or from the (l, k) rate schedule."""
    if "l" in section and "k" in section:
        sched = schedule(n, int(section["l"]), int(section["k"]))
        return section.get("h", sched.h), section.get("c", sched.c)
    return section.get("h"), section.get("c")


def cmd_simulate(args) -> int:
    cfg, notes = _load(args)
    sim = cfgmod.require(cfg, "simulate", "config")
    n = int(cfgmod.require(sim, "n", "simulate"))
    h, _ = _step_and_block(sim, n, "simulate")
    if h is None:
        raise ConfigError("simulate.h (or simulate.l and simulate.k) is required", key="simulate.h")
    spec = cfgmod.build_scenario(cfg)
    obs = simulate_scenario(spec, n, float(h), int(sim.get("seed", 0)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".observations.", suffix=".tmp")
    os.close(fd)
    try:
        write_observation_csv(obs, tmp)
        os.replace(tmp, out / "observations.csv")
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    for note in notes:
        log.info(note)
    print(out / "observations.csv")
    return 0


def cmd_estimate(args) -> int:
    cfg, notes = _load(args)
    est = cfgmod.require(cfg, "estimate", "config")
    path = Path(args.config).parent / cfgmod.require(est, "observations", "estimate")
    if not path.is_file():
        raise ConfigError(f"observation file not found: {path}", key="estimate.observations")
    obs = read_observation_csv(path, h=est.get("h"))
    h, c = _step_and_block(est, obs.n, "estimate")
    if c is None:
        raise ConfigError("estimate.c (or estimate.l and estimate.k) is required", key="estimate.c")
    if h is not None and abs(float(h) - obs.h) > 1e-9 * obs.h:
        obs = read_observation_csv(path, h=float(h))
    driver = cfgmod.build_driver(cfg)
    box = cfgmod.build_box(cfg)
    res = maximize_quasi_lik(obs, build_blocks(obs.n, int(c)), driver, box)
    doc = res.to_dict()
    doc["c"] = int(c)
    doc["h"] = obs.h
    doc["n"] = obs.n
    doc["driver"] = cfg["driver"]
    doc["notes"] = notes
    atomic_write_text(Path(args.out) / "estimate.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"theta_hat": doc["theta_hat"], "std_errors": doc["std_errors"]}))
    return 0


def experiment_config(cfg: dict) -> ExperimentConfig:
    exp = cfg["experiment"]
    rates = cfg["rates"]
    return ExperimentConfig(
        scenario=cfgmod.build_scenario(cfg),
        theta_box=cfgmod.build_box(cfg),
        n_set=exp["n_set"],
        lk_pairs=[tuple(p) for p in rates["lk_pairs"]],
        reps=int(exp["reps"]),
        base_seed=int(exp["base_seed"]),
        driver=cfgmod.build_driver(cfg),
        allow_invalid_rates=bool(rates.get("allow_invalid", False)),
    )


def cmd_experiment(args) -> int:
    cfg, notes = _load(args)
    config = experiment_config(cfg)
    results = run_replications(config, threads=args.threads)
    paths = write_outputs(args.out, cfg, config, results, notes)
    for p in paths.values():
        print(p)
    return 0


def cmd_rates(args) -> int:
    sys.stdout.write(grid_csv())
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "experiment": cmd_experiment,
    "rates": cmd_rates,
}


def run_cli(argv=None) -> int:
    """Exit codes: 0 success, 1 configuration error, 2 runtime failure."""
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.subcommand](args)
    except ConfigError as exc:
        where = f" [{exc.key}]" if exc.key else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return 1
    except (BsdeQmleError, ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
