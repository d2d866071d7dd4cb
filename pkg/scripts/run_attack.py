"""Train R attackers against a frozen AV, then evaluate the best-trained one at each car count.

    python scripts/run_attack.py --av runs/baseline/av.json --out runs/attack --repeats 3
"""

import argparse
import dataclasses
import logging
import time
from pathlib import Path

from advhighway.config import ENV_CAR_CHOICES, ExperimentConfig, load_config, save_config
from advhighway.experiment import decile_means, read_curve, run_evaluate, run_train_attacker
from advhighway.report import render_table, save_histogram


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--av", required=True)
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/attack")
    ap.add_argument("--episodes", type=int, default=10_000)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--eval", type=int, default=1000)
    ap.add_argument("--env-cars", type=int, nargs="+", default=list(ENV_CAR_CHOICES))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = dataclasses.replace(cfg, with_attacker=True,
                              train=dataclasses.replace(cfg.train, episodes=args.episodes))
    out = Path(args.out)
    save_config(cfg, out / "config.json")

    t0 = time.time()

    def progress(r, ep, mean, std):
        if ep % 1000 == 0:
            logging.info("repeat %d episode %d: %.3f +- %.3f (%.0f s)", r, ep, mean, std, time.time() - t0)

    paths = run_train_attacker(cfg, Path(args.av), out, repeats=args.repeats, progress=progress)
    first, last = decile_means(read_curve(paths["aggregate"]))
    logging.info("aggregate curve: first decile %.3f, final decile %.3f", first, last)
    logging.info("evaluating %s", paths["selected"])

    hists = []
    for n in args.env_cars:
        h, _ = run_evaluate(cfg, Path(args.av), paths["selected"], n, args.eval, out,
                            workers=args.workers)
        save_histogram(h, out / f"hist_with_{n}.json")
        logging.info("%d cars: FC %s, attacker-involved %s, %s", n, h.total, h.attacker, h.terminations)
        hists.append(h)
    print(render_table(hists, extended=True), end="")


if __name__ == "__main__":
    main()
