"""Two-cell co-primary spectrum sharing: subcarrier matching followed by WMMSE transceiver design."""

from .allocation import GALE_SHAPLEY, TRANSPORTATION, allocate_two_stage, gale_shapley, transportation_assign
from .channel import ChannelSet, Topology, build_channel_set
from .harness import MetricsTable, ScenarioConfig, emit_csv, emit_plot, read_csv, run_experiment, run_sample
from .wmmse import CellProblem, WmmseSettings, cell_problem, wmmse_solve

__version__ = "0.1.0"

__all__ = [
    "GALE_SHAPLEY",
    "TRANSPORTATION",
    "ChannelSet",
    "Topology",
    "build_channel_set",
    "allocate_two_stage",
    "gale_shapley",
    "transportation_assign",
    "CellProblem",
    "WmmseSettings",
    "cell_problem",
    "wmmse_solve",
    "ScenarioConfig",
    "MetricsTable",
    "run_experiment",
    "run_sample",
    "emit_csv",
    "emit_plot",
    "read_csv",
]
