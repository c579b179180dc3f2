"""Synthetic benchmark: MFVB writing against the two least-squares baselines on shared episodes."""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .baselines import BaselineConfig, BaselineKind, baseline_write
from .engine import InferenceConfig, write_episode
from .episodes import SynthConfig, generate_synthetic_episode
from .errors import InvalidArgument
from .models import ModelSpec, Variant

CSV_HEADER = ("episode_id", "algorithm", "iters", "elbo", "elbo_per_frame", "wall_ms", "seed")
ALGORITHMS = ("mfvb", "dkm_online", "dkm_batched")
BASELINES = ("dkm_online", "dkm_batched")


@dataclass(frozen=True)
class BenchConfig:
    episodes: int = 64
    timesteps: int = 32
    K: int = 32
    C: int = 50
    sigma_z2: float = 1.0
    sweeps: int = 30
    seed: int = 0
    R0_scale: float = 1.0
    timing: bool = False

    def __post_init__(self):
        for name in ("episodes", "timesteps", "K", "C", "sweeps"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be positive")
        if not self.sigma_z2 > 0:
            raise InvalidArgument("sigma_z2 must be positive")


@dataclass(frozen=True)
class BenchRecord:
    episode_id: int
    algorithm: str
    iters: int
    elbo: float
    elbo_per_frame: float
    wall_ms: float
    seed: int

    def row(self) -> list:
        return [self.episode_id, self.algorithm, self.iters, repr(self.elbo),
                repr(self.elbo_per_frame), repr(self.wall_ms), self.seed]


def episode_seeds(seed: int, episodes: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(episodes)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def run_episode(cfg: BenchConfig, episode_id: int, seed: int) -> list[BenchRecord]:
    """Generate one episode and score all three writers on it."""
    rng = np.random.default_rng(seed)
    synth = SynthConfig(cfg.timesteps, cfg.K, cfg.C, cfg.sigma_z2, cfg.R0_scale, seed)
    episode, truth = generate_synthetic_episode(synth, rng)
    # the model is given the prior the episode was generated from
    spec = ModelSpec(Variant.GAUSSIAN, cfg.K, cfg.C, sigma_z2=cfg.sigma_z2, R0=truth.R0)
    runs = [
        ("mfvb", cfg.sweeps,
         lambda: write_episode(spec, episode, InferenceConfig(sweeps=cfg.sweeps, rng_seed=seed))),
        ("dkm_online", cfg.timesteps,
         lambda: baseline_write(spec, episode, BaselineConfig(BaselineKind.ONLINE))),
        ("dkm_batched", cfg.sweeps,
         lambda: baseline_write(spec, episode, BaselineConfig(BaselineKind.BATCHED, cfg.sweeps))),
    ]
    records = []
    for name, iters, fn in runs:
        start = time.perf_counter()
        result = fn()
        ms = (time.perf_counter() - start) * 1e3 if cfg.timing else 0.0
        elbo = result.elbo_trace[-1]
        records.append(BenchRecord(episode_id, name, iters, elbo, elbo / cfg.timesteps, ms, seed))
    return records


def _run_episode_args(args):
    return run_episode(*args)


def run_bench(cfg: BenchConfig, jobs: int | None = None) -> list[BenchRecord]:
    """All episodes, gathered in episode order regardless of worker scheduling."""
    seeds = episode_seeds(cfg.seed, cfg.episodes)
    tasks = [(cfg, i, s) for i, s in enumerate(seeds)]
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1:
        batches = [run_episode(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(_run_episode_args, tasks))
    return [r for batch in batches for r in batch]


@dataclass(frozen=True)
class BaselineSummary:
    baseline: str
    win_rate: float  # fraction of episodes with MFVB ELBO >= baseline ELBO
    gap_min: float
    gap_q25: float
    gap_median: float
    gap_q75: float
    gap_max: float
    median_ratio: float  # baseline ELBO / MFVB ELBO; > 1 means MFVB is better when both are negative


def elbo_table(records) -> dict:
    table: dict = {}
    for r in records:
        table.setdefault(r.algorithm, {})[r.episode_id] = r.elbo
    return table


def summarize(records) -> list[BaselineSummary]:
    table = elbo_table(records)
    ids = sorted(table["mfvb"])
    mfvb = np.array([table["mfvb"][i] for i in ids])
    out = []
    for name in BASELINES:
        base = np.array([table[name][i] for i in ids])
        gap = mfvb - base
        q = np.quantile(gap, [0.0, 0.25, 0.5, 0.75, 1.0])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = float(np.median(base / mfvb))
        out.append(BaselineSummary(name, float(np.mean(gap >= 0)), *map(float, q), ratio))
    return out


def render_csv(records, summaries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(r.row())
    for s in summaries:
        fields = " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in asdict(s).items())
        buf.write(f"# summary {fields}\n")
    return buf.getvalue()


def read_csv_records(text: str) -> list[BenchRecord]:
    rows = [line for line in text.splitlines() if line and not line.startswith("#")]
    reader = csv.DictReader(rows)
    return [BenchRecord(int(r["episode_id"]), r["algorithm"], int(r["iters"]), float(r["elbo"]),
                        float(r["elbo_per_frame"]), float(r["wall_ms"]), int(r["seed"])) for r in reader]
