"""Command-line entry point: ``approxcd run|coverage|figure1|oracle-check``."""

from __future__ import annotations

import sys
import time
from pathlib import Path

import click

from .core import ApproxCDError, RngStream, ValidationError
from .harness import (
    FIGURE1_FIELDS,
    FIGURE1_SUMMARY_FIELDS,
    ORACLE_FIELDS,
    REPLICATE_FIELDS,
    emit_figure1_data,
    load_config,
    oracle_suite,
    run_coverage,
    run_single,
    save_coverage,
    simulate_dataset,
    write_csv,
    write_sidecar,
)
from .models import load_dataset

EXIT_VALIDATION = 2
EXIT_FAILURES = 3


def _config(path, seed, workers, paper_scale):
    try:
        return load_config(path, paper_scale=paper_scale, seed=seed, workers=workers)
    except (ValidationError, OSError) as exc:
        click.echo(f"invalid configuration: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


def _common(f):
    f = click.option("--out", type=click.Path(dir_okay=False), required=True, help="Output CSV path.")(f)
    f = click.option("--paper-scale", is_flag=True, help="Apply the config's full-scale overrides.")(f)
    f = click.option("--workers", type=click.IntRange(min=1), default=None, help="Worker processes.")(f)
    f = click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Master seed.")(f)
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     required=True, help="Experiment YAML file.")(f)
    return f


@click.group()
def main():
    """Approximate confidence distribution computing experiments."""


@main.command()
@_common
@click.option("--data", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Observed dataset (plain text); simulated at theta0 when omitted.")
def run(config_path, seed, workers, paper_scale, out, data):
    """Run one experiment on a single dataset."""
    cfg = _config(config_path, seed, workers, paper_scale)
    t0 = time.perf_counter()
    x = load_dataset(data) if data else simulate_dataset(cfg, 0)
    try:
        result = run_single(cfg, x, RngStream(cfg.seed, (0,)))
    except ApproxCDError as exc:
        click.echo(f"run failed: {exc}", err=True)
        sys.exit(1)
    write_csv(out, result.rows, REPLICATE_FIELDS)
    write_sidecar(out, wall_time=time.perf_counter() - t0, seed=cfg.seed, data=data or "simulated")
    click.echo(f"wrote {len(result.rows)} rows to {out}")


@main.command()
@_common
def coverage(config_path, seed, workers, paper_scale, out):
    """Replication study: coverage and median width/volume per tolerance."""
    cfg = _config(config_path, seed, workers, paper_scale)
    result = run_coverage(cfg)
    save_coverage(result, cfg, out)
    for row in result.summary:
        click.echo(f"{row['setting']} {row['method']} {row['tolerance_mode']}={row['tolerance']:g} "
                   f"adjusted={row['adjusted']} param={row['param']} "
                   f"coverage={row['coverage']:.3f} median_size={row['median_size']:.4g}")
    if result.failures:
        click.echo(f"{len(result.failures)} of {cfg.replications} replications failed", err=True)
    if result.failed:
        sys.exit(EXIT_FAILURES)


@main.command()
@click.option("--n", "sizes", type=int, multiple=True, default=(50, 5000), show_default=True)
@click.option("--epsilon", "epsilons", type=float, multiple=True, default=(0.1, 0.01, 0.001), show_default=True)
@click.option("--particles", type=int, default=2000, show_default=True)
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=0)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def figure1(sizes, epsilons, particles, seed, out):
    """Plot data: reference posterior and ABC densities under mean/median summaries."""
    t0 = time.perf_counter()
    summaries = []
    for n in sizes:
        grid, summary = emit_figure1_data(n, epsilons, seed, particles=particles)
        p = Path(out)
        write_csv(p.with_name(f"{p.stem}_n{n}{p.suffix}"), grid, FIGURE1_FIELDS)
        summaries.extend(summary)
    write_csv(out, summaries, FIGURE1_SUMMARY_FIELDS)
    write_sidecar(out, wall_time=time.perf_counter() - t0, seed=seed)
    for r in summaries:
        click.echo(f"n={r['n']} eps={r['epsilon']:g} {r['summary']}: iqr={r['iqr']:.4g} ks={r['ks_target']:.3f}")


@main.command("oracle-check")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=0)
@click.option("--accepted", type=int, default=5000, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def oracle_check(seed, accepted, out):
    """Gaussian closed-form suite; exits nonzero if any setting misses by > 4 SE."""
    t0 = time.perf_counter()
    rows = oracle_suite(seed=seed, accepted=accepted)
    write_csv(out, rows, ORACLE_FIELDS)
    write_sidecar(out, wall_time=time.perf_counter() - t0, seed=seed)
    bad = [r for r in rows if not r["passed"]]
    click.echo(f"{len(rows) - len(bad)}/{len(rows)} settings within 4 standard errors")
    if bad:
        sys.exit(1)


if __name__ == "__main__":
    main()
