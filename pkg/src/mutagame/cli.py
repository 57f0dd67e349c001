"""Command-line interface and persisted outputs.

Subcommands: ``simulate`` (epochs.csv, summary.json), ``sweep`` (sweep.csv,
threshold.json), ``solve`` (values.csv, abandonment.json), and ``threshold``
(re-detect thresholds from an existing sweep.csv). Every command finishes by
writing ``manifest.json`` with the config snapshot, master seed, tool
version, wall-clock timestamps, and SHA-256 digests of the emitted files.

Output conventions: CSV files are RFC 4180 (CRLF, UTF-8, header row first),
floats carry 17 significant digits so they round-trip exactly, and reruns
with identical inputs are byte-identical except for the manifest timestamps.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
non-convergence. ``MUTAGAME_LOG`` (error|warn|info|debug) controls logging.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace

import click

from . import __version__
from .config import ConfigError, SimConfig, load_config, parse_grid
from .dp import (
    NonConvergenceError,
    abandonment_volatility,
    build_state_space,
    value_iterate,
)
from .games import analyze_incentives, game_critical_delta
from .harness import (
    SimulationError,
    SweepCellError,
    SweepResult,
    detect_threshold,
    run_sweep,
    simulate,
)
from .model import Action, amortization_epochs
from .seeds import derive_seed

log = logging.getLogger("mutagame")

_EXIT_CONFIG = 2
_EXIT_IO = 3
_EXIT_NUMERIC = 4


def _setup_logging():
    level = os.environ.get("MUTAGAME_LOG", "warn").lower()
    levels = {
        "error": logging.ERROR,
        "warn": logging.WARNING,
        "info": logging.INFO,
        "debug": logging.DEBUG,
    }
    logging.basicConfig(
        level=levels.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _fmt(value) -> str:
    """Fixed textual form: 17 significant digits for floats."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return format(value, ".17g")
    if value is None:
        return ""
    return str(value)


def _json_default(value):
    if isinstance(value, Action):
        return value.label
    raise TypeError(f"not JSON-serializable: {value!r}")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, cfg: SimConfig, files, started, command):
    from .config import config_to_dict

    manifest = {
        "command": command,
        "config": config_to_dict(cfg),
        "master_seed": cfg.seed,
        "tool_version": __version__,
        "started_utc": started,
        "finished_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": {os.path.basename(p): _sha256(p) for p in files},
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _load(config_path, seed) -> SimConfig:
    try:
        return load_config(config_path, seed_override=seed)
    except ConfigError as exc:
        for message in exc.errors:
            click.echo(f"config error: {message}", err=True)
        sys.exit(_EXIT_CONFIG)


def _out_dir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        click.echo(f"cannot create output directory {path}: {exc}", err=True)
        sys.exit(_EXIT_IO)
    return path


@click.group()
@click.version_option(version=__version__, prog_name="mutagame")
def main():
    """Deterministic miner-strategy simulator under mutable protocol rules."""
    _setup_logging()


@main.command()
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=str)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def simulate_cmd(config_path, out_dir, seed):
    """Run one simulation and write epochs.csv + summary.json."""
    cfg = _load(config_path, seed)
    out_dir = _out_dir(out_dir)
    started = _now()
    try:
        sim = simulate(cfg)
    except SimulationError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)
    try:
        epochs_path = os.path.join(out_dir, "epochs.csv")
        _write_epochs_csv(epochs_path, sim, cfg)
        summary_path = os.path.join(out_dir, "summary.json")
        _write_json(summary_path, _summary_payload(sim, cfg))
        _write_manifest(out_dir, cfg, [epochs_path, summary_path], started, "simulate")
    except OSError as exc:
        click.echo(f"i/o failure: {exc}", err=True)
        sys.exit(_EXIT_IO)


main.add_command(simulate_cmd, name="simulate")


def _write_epochs_csv(path, sim, cfg: SimConfig):
    n = len(sim.shares)
    header = [
        "epoch",
        "shock_occurred",
        "shock_magnitude",
        "block_size_limit",
        "relay_strictness",
        "fee_threshold",
        "validation_overhead",
        "sigma2",
        "deviant_fraction",
    ]
    for i in range(n):
        header += [f"agent{i}_action", f"agent{i}_payoff", f"agent{i}_discount", f"agent{i}_confidence"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in sim.records:
            row = [
                rec.epoch,
                _fmt(rec.shock_occurred),
                _fmt(rec.shock_magnitude),
                _fmt(rec.protocol.block_size_limit),
                _fmt(rec.protocol.relay_strictness),
                _fmt(rec.protocol.fee_threshold),
                _fmt(rec.protocol.validation_overhead),
                _fmt(rec.sigma2),
                _fmt(rec.deviant_fraction),
            ]
            for action, payoff, delta, psi in rec.per_agent:
                row += [action.label, _fmt(payoff), _fmt(delta), _fmt(psi)]
            writer.writerow(row)


def _summary_payload(sim, cfg: SimConfig) -> dict:
    agents = cfg.build_agents()
    utilities = sim.agent_utilities()
    coop_payoff = analyze_incentives(agents, cfg.protocol, cfg.reward, cfg.actions).coop
    per_agent = []
    for i, agent in enumerate(agents):
        margin = float(coop_payoff[i])
        horizon = amortization_epochs(agent, margin)
        per_agent.append(
            {
                "id": agent.id,
                "hash_share": agent.hash_share,
                "discounted_utility": utilities[i],
                "first_deviation_epoch": sim.first_deviation[i],
                "amortization_epochs": None if horizon == float("inf") else horizon,
            }
        )
    return {
        "epochs": cfg.epochs,
        "incidence": sim.incidence(),
        "cooperation_index": sim.cooperation_index(),
        "mean_churn": sim.mean_churn(),
        "shock_count": sum(1 for r in sim.records if r.shock_occurred),
        "final_sigma2": sim.records[-1].sigma2,
        "agents": per_agent,
    }


@main.command()
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=str)
@click.option("--seed", type=int, default=None)
@click.option("--eps", "eps_spec", type=str, default=None, help="Grid start:stop:count.")
@click.option("--kappa", "kappa_spec", type=str, default=None)
@click.option("--gamma", "gamma_spec", type=str, default=None)
@click.option("--replicates", type=int, default=None)
@click.option("--jobs", type=int, default=1, help="Worker processes for the sweep.")
def sweep_cmd(config_path, out_dir, seed, eps_spec, kappa_spec, gamma_spec, replicates, jobs):
    """Run the parameter sweep and write sweep.csv + threshold.json."""
    cfg = _load(config_path, seed)
    grids = cfg.sweep
    try:
        if eps_spec is not None:
            grids = replace(grids, eps=parse_grid(eps_spec))
        if kappa_spec is not None:
            grids = replace(grids, kappa=parse_grid(kappa_spec))
        if gamma_spec is not None:
            grids = replace(grids, gamma=parse_grid(gamma_spec))
        if replicates is not None:
            if replicates < 1:
                raise ValueError("replicates must be >= 1")
            grids = replace(grids, replicates=replicates)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)
    out_dir = _out_dir(out_dir)
    started = _now()
    try:
        result = run_sweep(cfg, grids=grids, replicates=grids.replicates, jobs=max(jobs, 1))
    except SweepCellError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)
    try:
        sweep_path = os.path.join(out_dir, "sweep.csv")
        _write_sweep_csv(sweep_path, result)
        threshold_path = os.path.join(out_dir, "threshold.json")
        _write_json(threshold_path, _threshold_payload(result))
        _write_manifest(out_dir, cfg, [sweep_path, threshold_path], started, "sweep")
    except OSError as exc:
        click.echo(f"i/o failure: {exc}", err=True)
        sys.exit(_EXIT_IO)


main.add_command(sweep_cmd, name="sweep")

_SWEEP_HEADER = [
    "eps",
    "kappa",
    "gamma",
    "incidence",
    "cooperation_index",
    "mean_churn",
    "first_deviation_gamma_hi",
    "first_deviation_gamma_lo",
    "replicates",
]


def _write_sweep_csv(path, result: SweepResult):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SWEEP_HEADER)
        for cell in result.cells:
            writer.writerow(
                [
                    _fmt(cell.eps),
                    _fmt(cell.kappa),
                    _fmt(cell.gamma),
                    _fmt(cell.incidence),
                    _fmt(cell.cooperation_index),
                    _fmt(cell.mean_churn),
                    _fmt(cell.first_deviation_gamma_hi),
                    _fmt(cell.first_deviation_gamma_lo),
                    cell.replicates,
                ]
            )


def _threshold_payload(result: SweepResult) -> dict:
    slices = []
    for ki, kappa in enumerate(result.kappa_grid):
        for gi, gamma in enumerate(result.gamma_grid):
            entry = {"kappa": kappa, "gamma": gamma}
            curve = result.eps_curve(ki, gi)
            if len(curve) >= 5:
                eps_star, sharpness = detect_threshold(curve)
                entry["eps_star"] = eps_star
                entry["sharpness"] = sharpness
            else:
                entry["eps_star"] = None
                entry["sharpness"] = None
                entry["note"] = "eps grid too short for detection"
            slices.append(entry)
    return {"slices": slices}


@main.command()
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=str)
@click.option("--seed", type=int, default=None)
@click.option("--grid-levels", type=int, default=None, help="Override dp.grid_levels.")
def solve_cmd(config_path, out_dir, seed, grid_levels):
    """Solve the protocol-state dynamic program; write values.csv + abandonment.json."""
    cfg = _load(config_path, seed)
    if grid_levels is not None:
        cfg = replace(cfg, dp=replace(cfg.dp, grid_levels=grid_levels))
    out_dir = _out_dir(out_dir)
    started = _now()
    agents = cfg.build_agents()
    try:
        space = build_state_space(
            cfg.mutation,
            cfg.dp.grid_levels,
            cfg.dp.kernel_samples,
            derive_seed(cfg.seed, 0xB311),
            discount=cfg.discount,
        )
        solution = value_iterate(
            space,
            agents,
            0,
            cfg.reward,
            cfg.actions,
            tolerance=cfg.dp.tolerance,
            max_iter=cfg.dp.max_iter,
        )
    except NonConvergenceError as exc:
        click.echo(f"non-convergence: {exc}", err=True)
        sys.exit(_EXIT_NUMERIC)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)

    incent = analyze_incentives(agents, cfg.protocol, cfg.reward, cfg.actions)
    delta_star = game_critical_delta(incent)
    dp_params = cfg.discount
    if cfg.dp.bridge_phi and 0.0 < delta_star < cfg.agents.delta0:
        from .dp import bridge_phi_linear

        dp_params = replace(
            dp_params,
            phi_linear=bridge_phi_linear(
                delta_star, cfg.agents.delta0, cfg.mutation, cfg.agents.kappa, cfg.epochs
            ),
            phi_quad=0.0,
        )
    abandonment = abandonment_volatility(
        cfg.dp.mutability_grid,
        cfg.mutation,
        agents,
        0,
        cfg.reward,
        cfg.actions,
        dp_params,
        cfg.protocol,
        grid_levels=cfg.dp.grid_levels,
        samples=cfg.dp.abandonment_samples,
        seed=derive_seed(cfg.seed, 0xAB4D),
    )
    try:
        values_path = os.path.join(out_dir, "values.csv")
        with open(values_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "state_index",
                    "block_size_limit",
                    "relay_strictness",
                    "fee_threshold",
                    "validation_overhead",
                    "value",
                    "policy",
                    "delta",
                    "sigma2",
                ]
            )
            for idx, state in enumerate(space.states):
                writer.writerow(
                    [
                        idx,
                        _fmt(state.block_size_limit),
                        _fmt(state.relay_strictness),
                        _fmt(state.fee_threshold),
                        _fmt(state.validation_overhead),
                        _fmt(float(solution.values[idx])),
                        solution.policy[idx].label,
                        _fmt(float(space.delta_per_state[idx])),
                        _fmt(float(space.local_sigma2[idx])),
                    ]
                )
        abandonment_path = os.path.join(out_dir, "abandonment.json")
        _write_json(
            abandonment_path,
            {
                "abandonment_mutability": abandonment,
                "mutability_grid": list(cfg.dp.mutability_grid),
                "iterations": solution.iterations,
                "residual": solution.residual,
            },
        )
        _write_manifest(out_dir, cfg, [values_path, abandonment_path], started, "solve")
    except OSError as exc:
        click.echo(f"i/o failure: {exc}", err=True)
        sys.exit(_EXIT_IO)


main.add_command(solve_cmd, name="solve")


@main.command()
@click.option("--sweep-csv", "sweep_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=str)
def threshold_cmd(sweep_path, out_dir):
    """Re-run threshold detection on an existing sweep.csv."""
    out_dir = _out_dir(out_dir)
    try:
        with open(sweep_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(_SWEEP_HEADER) - set(reader.fieldnames):
                click.echo("config error: sweep.csv missing expected columns", err=True)
                sys.exit(_EXIT_CONFIG)
            rows = list(reader)
    except OSError as exc:
        click.echo(f"config error: cannot read {sweep_path}: {exc}", err=True)
        sys.exit(_EXIT_CONFIG)
    slices = {}
    for row in rows:
        key = (float(row["kappa"]), float(row["gamma"]))
        slices.setdefault(key, []).append((float(row["eps"]), float(row["incidence"])))
    payload = {"slices": []}
    for (kappa, gamma), curve in sorted(slices.items()):
        curve.sort()
        entry = {"kappa": kappa, "gamma": gamma}
        if len(curve) >= 5:
            eps_star, sharpness = detect_threshold(curve)
            entry["eps_star"] = eps_star
            entry["sharpness"] = sharpness
        else:
            entry["eps_star"] = None
            entry["sharpness"] = None
            entry["note"] = "eps grid too short for detection"
        payload["slices"].append(entry)
    try:
        _write_json(os.path.join(out_dir, "threshold.json"), payload)
    except OSError as exc:
        click.echo(f"i/o failure: {exc}", err=True)
        sys.exit(_EXIT_IO)


main.add_command(threshold_cmd, name="threshold")


if __name__ == "__main__":
    main()
