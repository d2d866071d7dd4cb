"""Command line: train-av, train-attacker, evaluate, report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from advhighway.config import ENV_CAR_CHOICES, ConfigError, ExperimentConfig, load_config, save_config
from advhighway.dqn import DivergenceError
from advhighway.qnet import CheckpointError
from advhighway.report import ReportError, load_histogram, render_table, save_histogram

log = logging.getLogger("advhighway")

EXIT_USAGE = 2
EXIT_FAILURE = 1


def _build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out"] = args.out
    if getattr(args, "no_safety_check", False):
        over["safety_check"] = False
    if getattr(args, "with_attacker", False):
        over["with_attacker"] = True
    env = getattr(args, "env_cars", None)
    if env:
        over["n_env_cars"] = env[0]
    cfg = dataclasses.replace(cfg, **over)
    if args.seed is not None:
        # one seed flag drives every stochastic stage
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed),
                                  av_train=dataclasses.replace(cfg.av_train, seed=args.seed))
    if args.episodes is not None:
        if args.command == "train-av":
            cfg = dataclasses.replace(cfg, av_train=dataclasses.replace(cfg.av_train, episodes=args.episodes))
        elif args.command == "train-attacker":
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, episodes=args.episodes))
        else:
            cfg = dataclasses.replace(cfg, n_eval_episodes=args.episodes)
    return cfg


def cmd_train_av(args) -> int:
    from advhighway.experiment import run_train_av
    cfg = _build_config(args)
    out = Path(cfg.out)
    save_config(cfg, out / "config.json")
    path = run_train_av(cfg, out)
    print(path)
    return 0


def cmd_train_attacker(args) -> int:
    from advhighway.experiment import run_train_attacker
    cfg = _build_config(args)
    if not Path(args.av).is_file():
        raise FileNotFoundError(f"AV checkpoint not found: {args.av}")
    out = Path(cfg.out)
    save_config(cfg, out / "config.json")

    def progress(r, ep, mean, std):
        log.info("repeat %d episode %d eval mean %.4f std %.4f", r, ep, mean, std)

    paths = run_train_attacker(cfg, Path(args.av), out, repeats=args.repeats, progress=progress)
    for p in paths["checkpoints"] + [paths["aggregate"]]:
        print(p)
    print(f"selected {paths['selected']}")
    return 0


def cmd_evaluate(args) -> int:
    from advhighway.experiment import run_evaluate
    cfg = _build_config(args)
    if not Path(args.av).is_file():
        raise FileNotFoundError(f"AV checkpoint not found: {args.av}")
    attacker = None
    if cfg.with_attacker:
        if not args.attacker:
            raise ConfigError("--with-attacker needs --attacker CHECKPOINT")
        if not Path(args.attacker).is_file():
            raise FileNotFoundError(f"attacker checkpoint not found: {args.attacker}")
        attacker = Path(args.attacker)
    out = Path(cfg.out)
    save_config(cfg, out / "config.json")
    tag = "with" if attacker else "without"
    for n in (args.env_cars or [cfg.n_env_cars]):
        hist, traces = run_evaluate(cfg, Path(args.av), attacker, n, cfg.n_eval_episodes, out,
                                    workers=args.workers)
        path = save_histogram(hist, out / f"hist_{tag}_{n}.json")
        print(f"{path} crashes={hist.crashes} traces={len(traces)} FC={hist.total}")
    return 0


def cmd_report(args) -> int:
    hists = [load_histogram(p) for p in args.histograms]
    text = render_table(hists, extended=args.extended)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advhighway", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=str, help="flat JSON config (group.key: value)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--out", type=str)
        sp.add_argument("--env-cars", type=int, nargs="+", choices=ENV_CAR_CHOICES)
        sp.add_argument("--no-safety-check", action="store_true")

    sp = sub.add_parser("train-av", help="train the victim AV without an attacker")
    common(sp)
    sp.set_defaults(func=cmd_train_av)

    sp = sub.add_parser("train-attacker", help="train the attacker against a frozen AV")
    common(sp)
    sp.add_argument("--av", required=True, help="AV checkpoint")
    sp.add_argument("--repeats", type=int, default=1)
    sp.set_defaults(func=cmd_train_attacker)

    sp = sub.add_parser("evaluate", help="failure-code histogram over evaluation episodes")
    common(sp)
    sp.add_argument("--av", required=True, help="AV checkpoint")
    sp.add_argument("--attacker", help="attacker checkpoint (with --with-attacker)")
    sp.add_argument("--with-attacker", action="store_true")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="crash table from histogram files")
    sp.add_argument("histograms", nargs="+")
    sp.add_argument("--extended", action="store_true", help="include the FC 0 column")
    sp.add_argument("--out", type=str)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if getattr(args, "repeats", 1) < 1:
        parser.error("--repeats must be >= 1")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, CheckpointError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
