"""Command-line entry point: ``piconet <subcommand> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, parse_config
from .minenergy import InfeasibleRateError, phi_lower, phi_upper, phi_upper_unoptimized
from .phy import db_to_linear, effective_rate_mu
from .sim import episode_seed, pool_replicates, sweep_v

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_UNSTABLE = 0, 2, 3, 4


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba", "PyYAML"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig, seeds, files) -> None:
    manifest = {
        "manifest_version": 1,
        "subcommand": command,
        "config_sha256": hashlib.sha256(cfg.text.encode()).hexdigest(),
        "config_text": cfg.text,
        "seed": cfg.seed,
        "episode_seeds": seeds,
        "versions": _versions(),
        "outputs": {p.name: _sha256(p) for p in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- subcommands -----------------------------------------------------------


def cmd_phy_curves(cfg: ExperimentConfig, out: Path, jobs: int):
    modes = cfg.modes
    start, stop, num = cfg.snr_db_grid
    snr_db = np.linspace(start, stop, num)
    snr = db_to_linear(snr_db)
    rows = []
    P = modes.success_matrix(snr)
    mu, best = effective_rate_mu(modes, snr)
    for j, x_db in enumerate(snr_db):
        for ell, label in enumerate(modes.labels):
            rows.append((x_db, label, P[ell, j], modes.rates[ell] * P[ell, j]))
        rows.append((x_db, "best:" + modes.labels[best[j]], P[best[j], j], mu[j]))
    path = _write_csv(out / "phy_curves.csv", ("snr_db", "mode_label", "p_success", "effective_rate"), rows)
    return [path], [], EXIT_OK


def _bounds_row(args):
    lam, cfg_bits = args
    modes, channel, K, grid, n_samples, seed = cfg_bits
    lo = phi_lower([lam] * K, modes, channel, K, seed=seed, n_samples=n_samples)
    up = phi_upper([lam] * K, modes, channel, K, grid_per_dim=grid, seed=seed, n_samples=n_samples)
    un = phi_upper_unoptimized([lam] * K, modes, channel, K, seed=seed, n_samples=n_samples)
    omega = ";".join(_fmt(w) for w in up.omega)
    return (lam, lo.value, up.value, un.value, omega, up.iterations)


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_bounds(cfg: ExperimentConfig, out: Path, jobs: int):
    bits = (cfg.modes, cfg.channel, cfg.bounds_K, cfg.grid_per_dim, cfg.n_samples, cfg.seed)
    rows = _map(_bounds_row, [(lam, bits) for lam in cfg.lambdas], jobs)
    header = ("lambda", "phi_lower", "phi_upper", "phi_upper_unoptimized", "omega", "iterations")
    return [_write_csv(out / "bounds.csv", header, rows)], [cfg.seed], EXIT_OK


def cmd_min_energy(cfg: ExperimentConfig, out: Path, jobs: int):
    if not cfg.sensors:
        raise ConfigError("min-energy needs at least one sensor")
    lam = [s.rate for s in cfg.sensors]
    K = len(lam)
    kw = dict(seed=cfg.seed, n_samples=cfg.n_samples)
    results = [
        ("phi_lower", phi_lower(lam, cfg.modes, cfg.channel, K, **kw)),
        ("phi_upper", phi_upper(lam, cfg.modes, cfg.channel, K, grid_per_dim=cfg.grid_per_dim, **kw)),
        ("phi_upper_unoptimized", phi_upper_unoptimized(lam, cfg.modes, cfg.channel, K, **kw)),
    ]
    rows = [
        (name, r.value, ";".join(_fmt(w) for w in r.omega), ";".join(_fmt(c) for c in r.rate_achieved),
         r.iterations, r.converged)
        for name, r in results
    ]
    header = ("bound", "value", "omega", "rate_achieved", "iterations", "converged")
    return [_write_csv(out / "min_energy.csv", header, rows)], [cfg.seed], EXIT_OK


SWEEP_HEADER_TAIL = ("null_energy", "reconnect_energy", "unstable_flag", "energy_se", "delay_se", "replicates")


def _sweep_rows(cfg: ExperimentConfig, policy: str, tau: float, jobs: int):
    base = cfg.scenario_for(policy, cfg.V[0], tau)
    results = sweep_v(base, list(cfg.V), cfg.T, cfg.warmup, cfg.seed, cfg.replicates, jobs)
    rows, unstable = [], False
    K = len(cfg.sensors)
    for V, runs in results:
        pooled = pool_replicates(V, runs)
        queues = np.mean([m.avg_queue for m in runs], axis=0)
        rows.append(
            (V, pooled.energy, pooled.delay, *queues,
             float(np.mean([m.null_energy for m in runs])),
             float(np.mean([m.reconnect_energy for m in runs])),
             pooled.unstable, pooled.energy_se, pooled.delay_se, len(runs))
        )
        unstable |= pooled.unstable
    header = ("V", "avg_energy", "avg_delay", *[f"avg_queue_{k + 1}" for k in range(K)], *SWEEP_HEADER_TAIL)
    return header, rows, unstable


def _seeds(cfg: ExperimentConfig):
    return [episode_seed(cfg.seed, iv, rep) for iv in range(len(cfg.V)) for rep in range(cfg.replicates)]


def _runs(cfg: ExperimentConfig, policies):
    for policy in policies:
        taus = cfg.tau if policy == "opportunistic_sleep" else (None,)
        for tau in taus:
            yield policy, tau


def _tag(policy, tau):
    return policy if tau is None else f"{policy}_tau{_fmt(float(tau))}"


def _simulate(cfg: ExperimentConfig, out: Path, jobs: int, policies, gnuplot: bool):
    if not cfg.sensors:
        raise ConfigError("simulation needs at least one sensor")
    files, any_unstable = [], False
    for policy, tau in _runs(cfg, policies):
        header, rows, unstable = _sweep_rows(cfg, policy, 10.0 if tau is None else tau, jobs)
        tag = _tag(policy, tau)
        files.append(_write_csv(out / f"sweep_{tag}.csv", header, rows))
        if gnuplot:
            dat = out / f"tradeoff_{tag}.dat"
            with dat.open("w") as fh:
                fh.write("# avg_delay avg_energy\n")
                for row in rows:
                    fh.write(f"{_fmt(row[2])} {_fmt(row[1])}\n")
            files.append(dat)
        any_unstable |= unstable
        if unstable:
            print(f"warning: instability flag raised for {tag}", file=sys.stderr)
    return files, _seeds(cfg), EXIT_UNSTABLE if any_unstable else EXIT_OK


def cmd_simulate(cfg, out, jobs):
    first = cfg.policies[0]
    sub = replace(cfg, tau=cfg.tau[:1])
    return _simulate(sub, out, jobs, [first], gnuplot=False)


def cmd_sweep(cfg, out, jobs):
    return _simulate(cfg, out, jobs, cfg.policies, gnuplot=True)


COMMANDS = {
    "phy-curves": cmd_phy_curves,
    "bounds": cmd_bounds,
    "min-energy": cmd_min_energy,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML experiment file (or a manifest.json)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override run.seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    parser = argparse.ArgumentParser(prog="piconet", description="Energy-delay scheduling for body-area piconets")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "phy-curves": "packet success and goodput versus SNR",
        "bounds": "lower and upper minimum-energy bounds over a rate grid",
        "min-energy": "minimum-energy bounds at the configured sensor rates",
        "simulate": "simulate the first configured policy over the V list",
        "sweep": "simulate every configured policy and tau over the V list",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg = replace(cfg, seed=args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files, seeds, status = COMMANDS[args.command](cfg, out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleRateError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _write_manifest(out, args.command, cfg, seeds, files)
    if status == EXIT_UNSTABLE:
        print("unstable: queue growth detected (see unstable_flag column)", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
