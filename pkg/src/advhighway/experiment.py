"""Experiment orchestration shared by the CLI, the scripts and the acceptance tests."""

from __future__ import annotations

import csv
import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from advhighway import sim
from advhighway.attacker import GreedyAttacker, run_episode, train_attacker
from advhighway.av import FrozenPolicy, train_av
from advhighway.config import ExperimentConfig
from advhighway.qnet import load_checkpoint, save_checkpoint
from advhighway.report import FcHistogram
from advhighway.rng import derive_seed
from advhighway.traces import write_trace

log = logging.getLogger(__name__)


def episode_seed(seed: int, n_env_cars: int, episode: int) -> int:
    return derive_seed(seed, 4, n_env_cars, episode)


def _stamp(cfg: ExperimentConfig, role: str) -> dict:
    return {"role": role, "config_hash": cfg.config_hash()}


# --------------------------------------------------------------------------
# training

def run_train_av(cfg: ExperimentConfig, out: Path) -> Path:
    out = Path(out)
    res = train_av(cfg.av_train, road=cfg.road, traffic=cfg.traffic, reward=cfg.reward,
                   n_env_cars=cfg.n_env_cars, safety=cfg.safety_check)
    res.checkpoint.meta.update(_stamp(cfg, "av"))
    out.mkdir(parents=True, exist_ok=True)
    with (out / "av_train.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return", "crashed"])
        for i, (r, c) in enumerate(zip(res.episode_returns, res.episode_crashes)):
            w.writerow([i, repr(r), int(c)])
    if res.validation:
        with (out / "av_validation.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "crashes", "mean_step_reward", "selected"])
            for ep, crashes, mean_r in res.validation:
                w.writerow([ep, crashes, repr(mean_r), int(ep == res.selected_episode)])
    return save_checkpoint(res.checkpoint, out / "av.json")


def write_curve(rows, path: Path) -> Path:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "mean", "std"])
        for ep, mean, std in rows:
            w.writerow([int(ep), repr(float(mean)), repr(float(std))])
    return Path(path)


def read_curve(path: Path) -> list[tuple[int, float, float]]:
    with Path(path).open() as fh:
        return [(int(r["episode"]), float(r["mean"]), float(r["std"])) for r in csv.DictReader(fh)]


def aggregate_curves(curves: list[list[tuple[int, float, float]]]) -> list[tuple[int, float, float]]:
    """Pointwise mean and (population) std of the per-repeat mean rewards."""
    episodes = [[p[0] for p in c] for c in curves]
    if any(e != episodes[0] for e in episodes):
        raise ValueError("repeat curves are logged at different episodes")
    means = np.array([[p[1] for p in c] for c in curves])
    return [(ep, float(m), float(s))
            for ep, m, s in zip(episodes[0], means.mean(axis=0), means.std(axis=0))]


def decile_means(curve) -> tuple[float, float]:
    """Mean logged reward over the first and the final 10% of curve points."""
    means = np.array([m for _, m, _ in curve])
    k = max(1, len(means) // 10)
    return float(means[:k].mean()), float(means[-k:].mean())


def select_repeat(curves) -> int:
    """Repeat whose own greedy evaluation ended highest (final-decile mean); ties go to the lower index."""
    finals = [decile_means(c)[1] for c in curves]
    return int(np.argmax(finals))


def run_train_attacker(cfg: ExperimentConfig, av_checkpoint: Path, out: Path,
                       repeats: int = 1, progress=None) -> dict:
    """Train ``repeats`` attackers with seeds ``train.seed + r``; write checkpoints and curves."""
    frozen = FrozenPolicy.from_checkpoint(load_checkpoint(av_checkpoint), safety=cfg.safety_check)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    curves, paths = [], {"checkpoints": [], "curves": []}
    for r in range(repeats):
        tc = dataclasses.replace(cfg.train, seed=cfg.train.seed + r)
        res = train_attacker(tc, frozen, road=cfg.road, traffic=cfg.traffic,
                             n_env_cars=cfg.n_env_cars, eval_every=cfg.eval_every,
                             eval_rollouts=cfg.eval_rollouts,
                             progress=(lambda ep, m, s, r=r: progress(r, ep, m, s)) if progress else None)
        res.checkpoint.meta.update(_stamp(cfg, "attacker"), repeat=r,
                                   at_fault_training_episodes=res.at_fault_episodes)
        suffix = "" if repeats == 1 else f"_r{r}"
        paths["checkpoints"].append(save_checkpoint(res.checkpoint, out / f"attacker{suffix}.json"))
        paths["curves"].append(write_curve(res.curve, out / f"curve_r{r}.csv"))
        curves.append(res.curve)
    paths["aggregate"] = write_curve(aggregate_curves(curves), out / "curve.csv")
    paths["selected"] = paths["checkpoints"][select_repeat(curves)]
    return paths


# --------------------------------------------------------------------------
# evaluation

@dataclasses.dataclass(frozen=True)
class EvalJob:
    cfg: ExperimentConfig
    av_checkpoint: str
    attacker_checkpoint: str | None
    n_env_cars: int
    episodes: tuple[int, ...]
    trace_dir: str | None


def _eval_chunk(job: EvalJob) -> tuple[FcHistogram, list[str]]:
    cfg = job.cfg
    frozen = FrozenPolicy.from_checkpoint(load_checkpoint(job.av_checkpoint), safety=cfg.safety_check)
    attacker = (GreedyAttacker.from_checkpoint(load_checkpoint(job.attacker_checkpoint))
                if job.attacker_checkpoint else None)
    with_attacker = attacker is not None
    hist = FcHistogram(job.n_env_cars, with_attacker, cfg.config_hash())
    written = []
    for i in job.episodes:
        seed = episode_seed(cfg.seed, job.n_env_cars, i)
        world = sim.init_world(seed, job.n_env_cars, with_attacker, cfg.road, cfg.traffic)
        header = {"config_hash": cfg.config_hash(), "seed": seed, "episode": i,
                  "n_env_cars": job.n_env_cars, "with_attacker": with_attacker,
                  "road": dataclasses.asdict(cfg.road), "traffic": dataclasses.asdict(cfg.traffic)}
        keep = job.trace_dir is not None
        outcome, trace = run_episode(world, frozen, attacker, cfg.train.steps_per_episode,
                                     cfg.reward, header=header, record=keep)
        hist.episodes += 1
        hist.terminations[outcome.termination] = hist.terminations.get(outcome.termination, 0) + 1
        if outcome.verdict is not None:
            # every AV collision counts, including ones the attacker is blamed for
            v = outcome.verdict
            hist.add(v.failure_code, outcome.attacker_involved, v.av_at_fault)
        if keep and (outcome.verdict is not None or cfg.save_all_traces):
            written.append(str(write_trace(trace, Path(job.trace_dir) / f"ep{i:07d}.jsonl")))
    return hist, written


def run_evaluate(cfg: ExperimentConfig, av_checkpoint: Path, attacker_checkpoint: Path | None,
                 n_env_cars: int, episodes: int, out: Path | None, workers: int = 1,
                 chunk: int = 50) -> tuple[FcHistogram, list[str]]:
    """Evaluate ``episodes`` episodes; counts are independent of ``workers``."""
    trace_dir = None
    if out is not None:
        tag = "with" if attacker_checkpoint else "without"
        trace_dir = str(Path(out) / "traces" / f"{tag}_{n_env_cars}")
    ids = list(range(episodes))
    jobs = [EvalJob(cfg, str(av_checkpoint), str(attacker_checkpoint) if attacker_checkpoint else None,
                    n_env_cars, tuple(ids[i:i + chunk]), trace_dir) for i in range(0, episodes, chunk)]
    hist = FcHistogram(n_env_cars, attacker_checkpoint is not None, cfg.config_hash())
    written: list[str] = []
    if workers <= 1:
        results = map(_eval_chunk, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_eval_chunk, jobs)
    try:
        for h, w in results:
            hist.merge(h)
            written += w
    finally:
        if workers > 1:
            pool.shutdown()
    return hist, written
