"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime failure (partial
outputs are left in place).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dynamics import Trajectory, random_initial_state, simulate
from .harness import (ConfigError, ExperimentConfig, SweepConfig, appendixA_compare, build_system,
                      emit_plot_data, hpo_data, read_json, run_ensemble_experiment, write_sweep)
from .harness.experiment import member_seeds
from .hpo import GridSpec, evaluate_grid, rank, score_and_select, write_results
from .reservoir import load_model, predict_closed_loop, save_model, train

log = logging.getLogger("artifact")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(read_json(args.config))
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    return cfg.with_(**changes) if changes else cfg


def grid_from_config(cfg: ExperimentConfig) -> GridSpec:
    if cfg.grid is None:
        raise ConfigError("config has no 'grid' section")
    grid = dict(cfg.grid)
    grid.setdefault("base", cfg.hyperparams)
    grid.setdefault("seed", cfg.seed)
    try:
        return GridSpec.from_dict(grid)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from None


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    data = read_json(args.config)
    if "hyperparams" in data:
        cfg = _experiment(args)
        sys_ = cfg.build_system()
        seeds = member_seeds(cfg.seed, 0)
        t_start = -(cfg.observed + cfg.spinup_length)
        t_end = cfg.horizon if cfg.horizon > 0 else 0.0
        x0 = random_initial_state(sys_, seeds.initial)
        seed = seeds.simulation
    else:
        unknown = set(data) - {"system", "t_start", "t_end", "x0", "seed"}
        if unknown:
            raise ConfigError(f"unknown simulate keys: {sorted(unknown)}")
        if "system" not in data or "t_start" not in data or "t_end" not in data:
            raise ConfigError("simulate config needs system, t_start and t_end")
        sys_ = build_system(data["system"])
        t_start, t_end = float(data["t_start"]), float(data["t_end"])
        seed = int(args.seed if args.seed is not None else data.get("seed", 0))
        x0 = data.get("x0")
        x0 = random_initial_state(sys_, seed) if x0 is None else np.asarray(x0, dtype=float)
    traj = simulate(sys_, x0, t_start, t_end, seed)
    out = _out(args)
    traj.save(out / "trajectory.dctr")
    traj.to_csv(out / "trajectory.csv")
    print(f"{len(traj)} samples over [{traj.t0:g}, {traj.t_end:g}] diverged={traj.diverged} -> {out}")
    return EXIT_RUNTIME if traj.diverged else EXIT_OK


def cmd_sweep(args):
    cfg = SweepConfig.from_dict(read_json(args.config))
    table = cfg.run(args.workers, args.seed)
    manifest = write_sweep(cfg, table, _out(args), args.seed)
    print(f"{len(table)} parameter values, {int(table.diverged.sum())} diverged -> {args.out} ({manifest.digest[:12]})")
    return EXIT_OK


def _training_data(args, cfg: ExperimentConfig) -> Trajectory:
    if args.data:
        return Trajectory.load(args.data)
    seeds = member_seeds(cfg.seed, 0)
    sys_ = cfg.build_system()
    x0 = random_initial_state(sys_, seeds.initial)
    return simulate(sys_, x0, -(cfg.observed + cfg.spinup_length), 0.0, seeds.simulation)


def cmd_train(args):
    cfg = _experiment(args)
    hp = cfg.build_hyperparams()
    data = _training_data(args, cfg)
    if data.t_end > 1e-9:
        data = data.window(data.t0, 0.0)
    obs = data.window(-cfg.observed, 0.0)
    scales = np.sqrt(np.mean(obs.states ** 2, axis=0))
    model = train(data.window(-hp.train_length, 0.0), hp, member_seeds(cfg.seed, 0).reservoir, scales,
                  cfg.build_knowledge())
    out = _out(args)
    save_model(model, out / "model.dcrm")
    print(f"trained {hp.architecture} reservoir (N={hp.n_nodes}) -> {out / 'model.dcrm'}")
    return EXIT_OK


def cmd_predict(args):
    if not args.model or not args.data:
        raise ConfigError("predict needs --model and --data")
    model = load_model(args.model)
    data = Trajectory.load(args.data)
    t0 = 0.0 if args.start is None else args.start
    sync = data.window(t0 - args.sync, t0)
    n_steps = int(round(args.horizon / model.dt))
    seed = 0 if args.seed is None else args.seed
    pred = predict_closed_loop(model, sync, n_steps, not args.deterministic, seed)
    out = _out(args)
    pred.save(out / "prediction.dctr")
    pred.to_csv(out / "prediction.csv")
    print(f"{n_steps} steps from t={sync.t_end:g}, diverged={pred.diverged} -> {out}")
    return EXIT_OK


def cmd_hpo(args):
    cfg = _experiment(args)
    grid = grid_from_config(cfg)
    data = Trajectory.load(args.data) if args.data else hpo_data(cfg, grid)
    cands = evaluate_grid(grid, data, cfg.workers, cfg.build_knowledge())
    score_and_select(cands, grid.weight, args.objective)
    ranked = [cands[i] for i in rank(cands)]
    out = _out(args)
    write_results(ranked, out / "hpo_results.csv")
    (out / "best_hyperparams.json").write_text(json.dumps(ranked[0].hyperparams.to_dict(), indent=2) + "\n")
    print(f"{len(cands)} candidates; best t_v={ranked[0].median_valid_time:g} E_W={ranked[0].mean_wasserstein:g}")
    return EXIT_OK


def cmd_ensemble(args):
    cfg = _experiment(args)
    manifest = run_ensemble_experiment(cfg, _out(args))
    r = manifest.result
    print(f"{cfg.ensemble_size} members, {len(manifest.diverged)} diverged, {len(manifest.failed)} failed; "
          f"predicted transitions {r.fraction_transitioned('pred'):.2f}, digest {manifest.digest[:12]}")
    return EXIT_RUNTIME if manifest.failed else EXIT_OK


def cmd_compare(args):
    cfg = _experiment(args)
    report = appendixA_compare(cfg, grid_from_config(cfg), _out(args))
    print(json.dumps({"late_gamma": report.late_gamma, "same_winner": report.same_winner}))
    return EXIT_OK


def cmd_emit(args):
    if not args.run:
        raise ConfigError("emit needs a run directory")
    paths = emit_plot_data(args.run, args.what, args.out, args.t)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artifact", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON config path or bundled config name")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--workers", type=int, default=None)
        return p

    common(sub.add_parser("simulate", help="integrate a system")).set_defaults(func=cmd_simulate)
    common(sub.add_parser("sweep", help="stationary bifurcation / hysteresis sweep")).set_defaults(func=cmd_sweep)
    p = common(sub.add_parser("train", help="train one reservoir"))
    p.add_argument("--data", help="trajectory (.dctr) with samples up to t = 0")
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("predict", help="closed-loop prediction from a saved model"), config=False)
    p.add_argument("--config", default=None, help="unused; accepted for uniformity")
    p.add_argument("--model", required=False)
    p.add_argument("--data", required=False, help="trajectory supplying the synchronization segment")
    p.add_argument("--start", type=float, default=None, help="prediction start time (default 0)")
    p.add_argument("--sync", type=float, default=1.0, help="synchronization length")
    p.add_argument("--horizon", type=float, default=120.0)
    p.add_argument("--deterministic", action="store_true", help="no residual noise in the loop")
    p.set_defaults(func=cmd_predict)
    p = common(sub.add_parser("hpo", help="grid search with the two-horizon score"))
    p.add_argument("--data", help="observed trajectory (default: simulated from the config)")
    p.add_argument("--objective", choices=("combined", "valid_time"), default="combined")
    p.set_defaults(func=cmd_hpo)
    common(sub.add_parser("ensemble", help="ensemble experiment")).set_defaults(func=cmd_ensemble)
    common(sub.add_parser("compare-hpo", help="combined vs valid-time-only selection")).set_defaults(func=cmd_compare)
    p = common(sub.add_parser("emit", help="plot data from a finished run"), config=False)
    p.add_argument("run", nargs="?", help="run directory (or its manifest.json)")
    p.add_argument("--what", required=True, choices=("gamma", "cdf", "events", "snapshot", "sweep"))
    p.add_argument("--t", type=float, default=None, help="snapshot time")
    p.add_argument("--config", default=None, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_emit, out=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
