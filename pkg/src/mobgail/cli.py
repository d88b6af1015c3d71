"""Command-line entry point: ``mobgail <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .aggregation import budget_for
from .config import RunConfig
from .core import DomainError, make_rng
from .evaluation import evaluate
from .experiments import (Corpus, attack, desk_run, generate, load_discriminators, load_policy, make_corpus,
                          sweep, sweep_table)
from .fileio import load_trajectories, load_trajectory_list, read_header, save_generated, save_trajectories

log = logging.getLogger("mobgail")


def _load_config(path: str | None) -> RunConfig:
    cfg = RunConfig.load(path) if path else RunConfig()
    return cfg.check()


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- subcommands ----------------------------------------------------------------


def cmd_init_config(args) -> int:
    path = RunConfig().write(args.out)
    print(path)
    return 0


def cmd_synth_data(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = make_corpus(cfg)
    grid = cfg.location_grid()
    save_trajectories(out / "train.txt", corpus.clients, grid, cfg.slots_per_day)
    save_trajectories(out / "heldout.txt", corpus.heldout, grid, cfg.slots_per_day)
    cfg.write(out / "config.json")
    print(f"wrote {len(corpus.clients)} users to {out / 'train.txt'} and "
          f"{len(corpus.heldout)} held-out users to {out / 'heldout.txt'}")
    return 0


def cmd_train(args) -> int:
    from .plotting import plot_history, plot_metric_report

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.rounds is not None:
        cfg = replace(cfg, rounds=replace(cfg.rounds, num_rounds=args.rounds))
    out = Path(args.out or cfg.out_dir)
    cfg = replace(cfg, out_dir=str(out)).check()
    corpus = None
    if args.train_data:
        grid = cfg.location_grid()
        clients = load_trajectories(args.train_data, grid)
        heldout = load_trajectories(args.heldout_data, grid) if args.heldout_data else make_corpus(cfg).heldout
        if len(clients) != cfg.data.num_users:
            cfg = replace(cfg, data=replace(cfg.data, num_users=len(clients)))
        corpus = Corpus(clients, heldout)
    run = desk_run(cfg, corpus, out)
    history = [r.to_dict() for r in run.history]
    if history:
        plot_history(history, out / "history.png")
    plot_metric_report(run.trained, out / "metrics.png")
    print(run.trained.to_text(), end="")
    print(f"# run directory: {out}")
    return 0


def cmd_generate(args) -> int:
    policy, cfg = load_policy(args.run)
    seed = cfg.seed if args.seed is None else args.seed
    trajs = generate(policy, cfg.env_config(), args.n, cfg.rounds.episode_length, make_rng(seed, "generate"))
    path = save_generated(args.out, trajs, cfg.location_grid(), cfg.slots_per_day)
    print(f"wrote {len(trajs)} trajectories to {path}")
    return 0


def cmd_evaluate(args) -> int:
    from .plotting import plot_metric_report

    header = read_header(args.real)
    if header is None:
        raise DomainError(f"{args.real}: empty file")
    grid, _ = header
    real = load_trajectory_list(args.real, grid)
    synthetic = load_trajectory_list(args.synthetic, grid)
    report = evaluate(real, synthetic, grid)
    out = Path(args.out)
    report.write(out)
    plot_metric_report(report, out / "metrics.png")
    print(report.to_text(), end="")
    return 0


def cmd_attack(args) -> int:
    from .plotting import plot_attack

    run = Path(args.run)
    cfg = RunConfig.load(run / "config.json").check()
    grid = cfg.location_grid()
    discs = load_discriminators(run, cfg)
    members = load_trajectories(run / "train.txt", grid)
    nonmembers = load_trajectories(run / "heldout.txt", grid)
    synthetic = load_trajectory_list(args.synthetic or run / "generated.txt", grid)
    report = attack(cfg, discs, members, nonmembers, synthetic, n=args.n)
    out = Path(args.out or run)
    out.mkdir(parents=True, exist_ok=True)
    (out / "attack.tsv").write_text(report.to_text())
    plot_attack(report, out / "attack.png")
    print(report.to_text(), end="")
    return 0


def cmd_dp_budget(args) -> int:
    b = budget_for(args.epsilon, args.users, args.kappa)
    summary = f"λ={b.lambda_mean:g}"
    if args.kappa is not None:
        summary += f", λ_c={b.lambda_var:g}"
    print(summary)
    print(b.report())
    return 0


def cmd_sweep(args) -> int:
    from .plotting import plot_sweep

    cfg = _load_config(args.config)
    if args.rounds is not None:
        cfg = replace(cfg, rounds=replace(cfg.rounds, num_rounds=args.rounds))
    out = Path(args.out)
    rows = sweep(cfg, args.epsilons, args.seeds, out, with_attack=not args.no_attack)
    text = sweep_table(rows)
    (out / "sweep.tsv").write_text(text)
    plot_sweep(rows, out / "sweep.png")
    print(text, end="")
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mobgail", description="Federated imitation learning of mobility trajectories "
                                "with private reward aggregation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init-config", help="write the default run configuration")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init_config)

    s = sub.add_parser("synth-data", help="write ground-truth training and held-out trajectory files")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="federated training; writes checkpoints, history, metrics and figures")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--rounds", type=int)
    s.add_argument("--train-data", help="trajectory file of the clients (default: synthesize from config)")
    s.add_argument("--heldout-data", help="trajectory file used for evaluation")
    s.add_argument("--out", help="run directory (default: out_dir from config)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="sample trajectories from a trained run")
    s.add_argument("--run", required=True, help="run directory written by train")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output trajectory file")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="JSD report of synthetic against real trajectories")
    s.add_argument("--real", required=True)
    s.add_argument("--synthetic", required=True)
    s.add_argument("--out", required=True, help="output directory for metrics.tsv, histograms and metrics.png")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("attack", help="membership inference and uniqueness test against a trained run")
    s.add_argument("--run", required=True)
    s.add_argument("--synthetic", help="generated trajectory file (default: the run's generated.txt)")
    s.add_argument("--n", type=int, default=250, help="members and non-members each")
    s.add_argument("--out", help="output directory (default: the run directory)")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("dp-budget", help="Laplace scales for a privacy budget")
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--users", type=int, required=True)
    s.add_argument("--kappa", type=float)
    s.set_defaults(func=cmd_dp_budget)

    s = sub.add_parser("sweep", help="train and attack across privacy budgets and seeds")
    s.add_argument("--config")
    s.add_argument("--epsilons", type=_floats, default=[math.inf, 1.0, 0.1])
    s.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    s.add_argument("--rounds", type=int)
    s.add_argument("--no-attack", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DomainError, OSError, json.JSONDecodeError) as exc:
        print(f"mobgail {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
