"""Shared driver for the experiment scripts."""

import argparse
import logging
import time
from dataclasses import replace
from pathlib import Path

from coprimary import ScenarioConfig, emit_csv, emit_plot, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def run(config_name: str, description: str, **overrides):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--samples", type=int, help="Monte Carlo samples per point")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--out-dir", default=str(ROOT / "results"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    config = ScenarioConfig.from_json(ROOT / "configs" / config_name)
    overrides["workers"] = args.workers
    if args.samples is not None:
        overrides["samples"] = args.samples
    config = replace(config, **overrides)

    start = time.perf_counter()
    table = run_experiment(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / Path(config_name).stem
    emit_csv(table, stem.with_suffix(".csv"))
    emit_plot(table, config.sweep, stem.with_suffix(".svg"))
    print(f"{len(table)} rows, {table.failures} failed samples, {time.perf_counter() - start:.1f}s -> {stem}.csv/.svg")
    for row in table.select():
        if config.sweep != "iterations" or row.sweep_value % 10 == 0:
            print(f"{row.method:>15} {row.sweep_value:>6g} {row.snr_db:>5g} dB  {row.mean_wsr:8.3f} +- {row.std_error:.3f}")
    return table
