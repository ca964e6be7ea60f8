"""``simulate`` command: run one experiment from a JSON scenario file."""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .allocation import GALE_SHAPLEY, TRANSPORTATION
from .harness import (
    BOTH,
    SWEEPS,
    ConfigError,
    SampleFailureError,
    ScenarioConfig,
    emit_csv,
    emit_plot,
    run_experiment,
)

METHOD_TOKENS = {"gs": GALE_SHAPLEY, "tp": TRANSPORTATION, "both": BOTH}
TOKEN_OF = {v: k for k, v in METHOD_TOKENS.items()}

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SAMPLES = 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="simulate",
        description="Monte Carlo weighted sum rate of two-cell co-primary spectrum sharing.",
    )
    p.add_argument("--config", required=True, help="JSON scenario file")
    p.add_argument("--method", choices=sorted(METHOD_TOKENS), help="gs, tp or both (overrides the file)")
    p.add_argument("--sweep", choices=SWEEPS, help="quantity on the x axis (overrides the file)")
    p.add_argument("--samples", type=int, help="Monte Carlo samples per point")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out-dir", default=".", help="output directory (default: current)")
    p.add_argument("--emit-plots", action="store_true", help="also write an SVG chart")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> ScenarioConfig:
    config = ScenarioConfig.from_json(args.config)
    overrides = {}
    if args.method is not None:
        overrides["method"] = METHOD_TOKENS[args.method]
    if args.samples is not None:
        overrides["samples"] = args.samples
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.sweep is not None and args.sweep != config.sweep:
        # sweep values of the file belong to the old sweep kind
        overrides["sweep"] = args.sweep
        overrides["sweep_values"] = None
    if not overrides:
        return config
    try:
        return replace(config, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        table = run_experiment(config)
    except SampleFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SAMPLES

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{config.sweep}_{TOKEN_OF[config.method]}"
    emit_csv(table, stem.with_suffix(".csv"))
    written = [stem.with_suffix(".csv")]
    if args.emit_plots and table.rows:
        emit_plot(table, config.sweep, stem.with_suffix(".svg"))
        written.append(stem.with_suffix(".svg"))
    if table.failures:
        print(f"warning: {table.failures} of {table.attempted} samples failed and were excluded", file=sys.stderr)
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
