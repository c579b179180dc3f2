"""``vbmem`` command-line interface.

Values are resolved as command-line flag, then the ``--config`` JSON file,
then the built-in default.  A missing ``--seed`` falls back to the
``VBM_SEED`` environment variable.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import bench as bench_mod
from .checks import SUITES, run_suite
from .elbo import elbo_closed_form
from .engine import InferenceConfig, write_episode
from .episodes import SynthConfig, generate_synthetic_episode, load_episode, save_episode
from .errors import InvalidArgument
from .models import CLI_NAMES, ModelSpec
from .readout import generate_direct, generate_iterative
from .serialize import load_result, save_result


def _load_config(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.BadParameter(f"cannot read config: {exc}", param_hint="--config")
    if not isinstance(doc, dict):
        raise click.BadParameter("config must be a JSON object", param_hint="--config")
    return doc


def _resolve(flags: dict, config: dict, defaults: dict) -> dict:
    unknown = set(config) - set(defaults)
    if unknown:
        raise click.BadParameter(f"unknown config keys: {sorted(unknown)}", param_hint="--config")
    return {k: flags[k] if flags.get(k) is not None else config.get(k, d) for k, d in defaults.items()}


def _seed(value):
    if value is not None:
        return value
    env = os.environ.get("VBM_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise click.BadParameter(f"VBM_SEED must be an integer, got {env!r}", param_hint="VBM_SEED")


def _write_text(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise click.FileError(str(path), hint=str(exc))


class _Guard:
    """Report library argument errors as clean CLI errors."""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, InvalidArgument):
            raise click.ClickException(f"{exc_type.__name__}: {exc}")
        return False


@click.group()
def main():
    """Mean-field variational Bayes for episodic memory models."""


@main.command()
@click.option("--timesteps", "T", type=int, help="Episode length (default 32).")
@click.option("--k", "K", type=int, help="Memory rows (default 32).")
@click.option("--c", "C", type=int, help="Code dimension (default 50).")
@click.option("--sigma2", "sigma_z2", type=float, help="Code noise variance (default 1.0).")
@click.option("--r0-scale", "R0_scale", type=float, help="Std. dev. of prior mean entries (default 1.0).")
@click.option("--seed", type=int)
@click.option("--config", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--truth", type=click.Path(dir_okay=False), help="Also write the sampled R0, M and w as JSON.")
def synth(T, K, C, sigma_z2, R0_scale, seed, config, out, truth):
    """Sample one synthetic linear-Gaussian episode."""
    d = SynthConfig()
    opts = _resolve(dict(T=T, K=K, C=C, sigma_z2=sigma_z2, R0_scale=R0_scale, seed=seed),
                    _load_config(config),
                    dict(T=d.T, K=d.K, C=d.C, sigma_z2=d.sigma_z2, R0_scale=d.R0_scale, seed=None))
    opts["seed"] = _seed(opts["seed"])
    with _Guard():
        cfg = SynthConfig(**opts)
        episode, gt = generate_synthetic_episode(cfg, np.random.default_rng(cfg.seed))
    try:
        save_episode(episode, out)
    except OSError as exc:
        raise click.FileError(out, hint=str(exc))
    if truth:
        _write_text(truth, json.dumps({"R0": gt.R0.tolist(), "M": gt.M.tolist(), "w": gt.w.tolist()}))


@main.command("synth-bench")
@click.option("--episodes", type=int, help="Number of episodes (default 64).")
@click.option("--timesteps", type=int, help="Episode length (default 32).")
@click.option("--k", "K", type=int, help="Memory rows (default 32).")
@click.option("--c", "C", type=int, help="Code dimension (default 50).")
@click.option("--sigma2", "sigma_z2", type=float, help="Code noise variance (default 1.0).")
@click.option("--sweeps", type=int, help="MFVB sweeps and batched-baseline iterations (default 30).")
@click.option("--r0-scale", "R0_scale", type=float, help="Std. dev. of prior mean entries (default 1.0).")
@click.option("--seed", type=int)
@click.option("--jobs", type=int, help="Worker processes (default: logical cores).")
@click.option("--timing/--no-timing", default=None, help="Record wall-clock times (makes output non-reproducible).")
@click.option("--config", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--figure", type=click.Path(dir_okay=False), help="Also render an outperformance heatmap.")
def synth_bench(episodes, timesteps, K, C, sigma_z2, sweeps, R0_scale, seed, jobs, timing, config, out, figure):
    """Compare MFVB against the least-squares baselines on synthetic episodes."""
    d = bench_mod.BenchConfig()
    opts = _resolve(
        dict(episodes=episodes, timesteps=timesteps, K=K, C=C, sigma_z2=sigma_z2, sweeps=sweeps,
             R0_scale=R0_scale, seed=seed, timing=timing, jobs=jobs),
        _load_config(config),
        dict(episodes=d.episodes, timesteps=d.timesteps, K=d.K, C=d.C, sigma_z2=d.sigma_z2, sweeps=d.sweeps,
             R0_scale=d.R0_scale, seed=None, timing=False, jobs=None))
    opts["seed"] = _seed(opts["seed"])
    jobs = opts.pop("jobs")
    if jobs is not None and jobs < 1:
        raise click.BadParameter("must be at least 1", param_hint="--jobs")
    with _Guard():
        cfg = bench_mod.BenchConfig(**opts)
        records = bench_mod.run_bench(cfg, jobs)
        summaries = bench_mod.summarize(records)
    _write_text(out, bench_mod.render_csv(records, summaries))
    if figure:
        from .plotting import render_heatmap

        render_heatmap(records, figure)
    for s in summaries:
        click.echo(f"{s.baseline}: MFVB >= baseline on {s.win_rate:.1%} of episodes, "
                   f"median ELBO gap {s.gap_median:.4g}, median ratio {s.median_ratio:.3g}")


def _spec_for(model, path, K, H, G, sigma_z2, C) -> ModelSpec:
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise click.BadParameter(f"cannot read spec: {exc}", param_hint="--spec")
        spec = ModelSpec.from_dict(doc)
        if model is not None and CLI_NAMES[model] is not spec.variant:
            raise click.BadParameter(f"--model {model} contradicts the spec file", param_hint="--model")
        return spec
    if model is None:
        raise click.UsageError("either --model or --spec is required")
    if model not in CLI_NAMES:
        raise click.BadParameter(f"unknown model {model!r}", param_hint="--model")
    return ModelSpec(CLI_NAMES[model], K, C, H, G, sigma_z2)


@main.command()
@click.option("--model", type=click.Choice(sorted(CLI_NAMES)))
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False), help="ModelSpec JSON (overrides model flags).")
@click.option("--episode", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", "K", type=int, help="Memory rows (default 8).")
@click.option("--h", "H", type=int, help="Clusters (default 1).")
@click.option("--g", "G", type=int, help="Partitions (default 1).")
@click.option("--sigma2", "sigma_z2", type=float, help="Code noise variance (default 1.0).")
@click.option("--sweeps", type=int, help="Coordinate-ascent sweeps (default 20).")
@click.option("--init", "init_mode", type=click.Choice(["prior", "random", "data"]))
@click.option("--seed", type=int)
@click.option("--config", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def infer(model, spec_path, episode, K, H, G, sigma_z2, sweeps, init_mode, seed, config, out):
    """Write an episode into memory and save the posterior as JSON."""
    opts = _resolve(dict(model=model, spec=spec_path, K=K, H=H, G=G, sigma_z2=sigma_z2, sweeps=sweeps,
                         init_mode=init_mode, seed=seed),
                    _load_config(config),
                    dict(model=None, spec=None, K=8, H=1, G=1, sigma_z2=1.0, sweeps=20,
                         init_mode="prior", seed=None))
    with _Guard():
        ep = load_episode(episode)
        spec = _spec_for(opts["model"], opts["spec"], opts["K"], opts["H"], opts["G"], opts["sigma_z2"], ep.C)
        cfg = InferenceConfig(sweeps=opts["sweeps"], init_mode=opts["init_mode"], rng_seed=_seed(opts["seed"]))
        result = write_episode(spec, ep, cfg)
        breakdown = elbo_closed_form(spec, ep, result)
    try:
        save_result(out, result, spec, {"elbo": breakdown.to_dict()})
    except OSError as exc:
        raise click.FileError(out, hint=str(exc))
    click.echo(f"ELBO {breakdown.total:.6g} ({breakdown.total / ep.T:.6g} per frame)")


@main.command()
@click.option("--posterior", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n", type=int, help="Samples (direct) or chain steps (iterative); default 1.")
@click.option("--mode", type=click.Choice(["direct", "iterative"]))
@click.option("--seed", type=int)
@click.option("--config", type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def generate(posterior, n, mode, seed, config, out):
    """Sample codes from a written memory."""
    opts = _resolve(dict(n=n, mode=mode, seed=seed), _load_config(config),
                    dict(n=1, mode="direct", seed=None))
    rng = np.random.default_rng(_seed(opts["seed"]))
    with _Guard():
        result, spec = load_result(posterior)
        if spec is None:
            raise click.ClickException("posterior file carries no model spec")
        if opts["mode"] == "direct":
            samples = generate_direct(spec, result.memory, opts["n"], rng)
        else:
            samples = generate_iterative(spec, result.memory, opts["n"], rng)
    _write_text(out, json.dumps([np.asarray(s).tolist() for s in samples]))


@main.command()
@click.option("--suite", required=True, type=click.Choice(SUITES))
@click.option("--seed", type=int)
@click.option("--quick", is_flag=True, help="Fewer instances, for smoke testing.")
def check(suite, seed, quick):
    """Run a property suite; prints a JSON report and exits 1 on failure."""
    report = run_suite(suite, np.random.default_rng(_seed(seed)), quick=quick)
    click.echo(json.dumps(report.to_dict(), default=float))
    sys.exit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
