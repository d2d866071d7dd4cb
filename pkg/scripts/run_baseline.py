"""Train the victim AV and evaluate it without an attacker at 10, 15 and 20 env cars.

    python scripts/run_baseline.py --out runs/baseline --episodes 10000 --eval 10000
"""

import argparse
import dataclasses
import logging
import time
from pathlib import Path

from advhighway.config import ENV_CAR_CHOICES, ExperimentConfig, load_config, save_config
from advhighway.experiment import run_evaluate, run_train_av
from advhighway.report import render_table, save_histogram


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/baseline")
    ap.add_argument("--episodes", type=int, default=10_000, help="AV training episodes")
    ap.add_argument("--eval", type=int, default=10_000, help="evaluation episodes per car count")
    ap.add_argument("--env-cars", type=int, nargs="+", default=list(ENV_CAR_CHOICES))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--av", help="reuse an existing AV checkpoint instead of training")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = dataclasses.replace(cfg, av_train=dataclasses.replace(cfg.av_train, episodes=args.episodes))
    out = Path(args.out)
    save_config(cfg, out / "config.json")

    t0 = time.time()
    av = Path(args.av) if args.av else run_train_av(cfg, out)
    logging.info("AV checkpoint %s (%.0f s)", av, time.time() - t0)

    hists = []
    for n in args.env_cars:
        h, traces = run_evaluate(cfg, av, None, n, args.eval, out, workers=args.workers)
        save_histogram(h, out / f"hist_without_{n}.json")
        logging.info("%d cars: %d crashes in %d episodes, FC %s", n, h.crashes, h.episodes, h.total)
        hists.append(h)
    print(render_table(hists, extended=True), end="")


if __name__ == "__main__":
    main()
