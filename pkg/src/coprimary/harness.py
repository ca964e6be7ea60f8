"""
Monte Carlo driver: scenario configuration, per-sample pipeline, metric
aggregation, and CSV / SVG output.

One sample draws a channel set, assigns subcarriers in both cells, and runs
the WMMSE iteration on the resulting links. Samples are keyed by index, so
the same channels are reused across methods and SNR points, and the
aggregate does not depend on execution order.
"""

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .allocation import GALE_SHAPLEY, METHODS, TRANSPORTATION, AllocationError, allocate_two_stage
from .channel import Topology, build_channel_set, substream
from .linalg import LinalgError
from .wmmse import WmmseSettings, cell_problem, init_precoders, wmmse_solve

__all__ = [
    "SWEEPS",
    "ConfigError",
    "SampleFailureError",
    "ScenarioConfig",
    "SampleResult",
    "MetricsRow",
    "MetricsTable",
    "snr_to_power",
    "run_sample",
    "run_experiment",
    "emit_csv",
    "read_csv",
    "emit_plot",
]

log = logging.getLogger(__name__)

SWEEPS = ("iterations", "snr", "users")
BOTH = "both"
NOISE_VARIANCE = 1.0
FAILURE_LIMIT = 0.01
CSV_HEADER = ["method", "sweep", "sweep_value", "snr_db", "mean_wsr", "std_error", "samples", "mean_iters"]

_INIT_TAG = 1


class ConfigError(ValueError):
    pass


class SampleFailureError(RuntimeError):
    def __init__(self, failed, attempted):
        super().__init__(f"{failed} of {attempted} samples failed (limit {FAILURE_LIMIT:.0%})")
        self.failed = failed
        self.attempted = attempted


@dataclass(frozen=True)
class ScenarioConfig:
    """Inputs of one experiment.

    ``i_k``/``i_j`` are the users per cell, ``n``/``m`` the dedicated
    subcarriers per cell, ``n_share`` the shared pool, ``n_t``/``n_r`` the
    antenna counts (equal in both cells). SNR points are in dB,
    ``10 log10(p_max / sigma^2)`` with ``sigma^2 = 1``.

    ``sweep_values`` depends on ``sweep``:

    - ``iterations``: iteration indices to report (default ``0..max_iterations``)
    - ``snr``: the SNR grid in dB (default ``snr_db``)
    - ``users``: users per cell, applied to both cells (required)

    ``weights`` gives one priority per user index, shared by both cells.
    """

    i_k: int = 10
    i_j: int = 10
    n: int = 3
    m: int = 3
    n_share: int = 1
    n_t: int = 4
    n_r: int = 2
    snr_db: tuple = (10.0,)
    samples: int = 200
    master_seed: int = 0
    method: str = BOTH
    weights: tuple | None = None
    wmmse: WmmseSettings = field(default_factory=WmmseSettings)
    sweep: str = "snr"
    sweep_values: tuple | None = None
    workers: int = 1

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if isinstance(self.wmmse, dict):
            try:
                set_("wmmse", WmmseSettings(**self.wmmse))
            except TypeError as exc:
                raise ConfigError(f"bad wmmse settings: {exc}") from None
        set_("snr_db", tuple(float(v) for v in np.atleast_1d(self.snr_db)))
        if self.weights is not None:
            set_("weights", tuple(float(w) for w in self.weights))
        if self.sweep not in SWEEPS:
            raise ConfigError(f"sweep must be one of {SWEEPS}, got {self.sweep!r}")
        if self.method not in METHODS + (BOTH,):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.snr_db:
            raise ConfigError("snr_db must not be empty")
        if not all(math.isfinite(v) for v in self.snr_db):
            raise ConfigError("snr_db entries must be finite")

        values = self.sweep_values
        if values is None:
            if self.sweep == "iterations":
                values = range(self.wmmse.max_iterations + 1)
            elif self.sweep == "snr":
                values = self.snr_db
            else:
                raise ConfigError("a users sweep needs sweep_values")
        values = tuple(values)
        if not values:
            raise ConfigError("sweep_values must not be empty")
        if self.sweep == "snr":
            values = tuple(float(v) for v in values)
            if not all(math.isfinite(v) for v in values):
                raise ConfigError("SNR sweep values must be finite")
            set_("snr_db", values)
        else:
            if any(int(v) != v for v in values):
                raise ConfigError(f"{self.sweep} sweep values must be integers")
            values = tuple(int(v) for v in values)
            if self.sweep == "iterations" and not all(0 <= v <= self.wmmse.max_iterations for v in values):
                raise ConfigError("iteration indices must lie in [0, max_iterations]")
        set_("sweep_values", values)

        for users in self.user_counts():
            try:
                self.topology(users)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            if self.weights is not None and len(self.weights) < max(users):
                raise ConfigError(f"weights cover {len(self.weights)} users, need {max(users)}")
        if self.weights is not None and any(w < 0 for w in self.weights):
            raise ConfigError("weights must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["snr_db"] = list(self.snr_db)
        out["sweep_values"] = list(self.sweep_values)
        out["weights"] = None if self.weights is None else list(self.weights)
        return out

    def methods(self) -> tuple:
        return METHODS if self.method == BOTH else (self.method,)

    def user_counts(self) -> list:
        """(I_k, I_j) pairs visited by the experiment."""
        if self.sweep == "users":
            return [(v, v) for v in self.sweep_values]
        return [(self.i_k, self.i_j)]

    def topology(self, users=None) -> Topology:
        users = (self.i_k, self.i_j) if users is None else users
        return Topology(
            tuple(users),
            (self.n_t, self.n_t),
            (self.n_r, self.n_r),
            (self.n, self.m),
            self.n_share,
        )


@dataclass
class SampleResult:
    trace: list
    final_wsr: float
    iterations: int
    converged: bool
    matched: tuple
    unmatched: tuple


@dataclass(frozen=True)
class MetricsRow:
    method: str
    sweep: str
    sweep_value: float
    snr_db: float
    mean_wsr: float
    std_error: float
    samples: int
    mean_iters: float

    def key(self):
        return (self.method, self.sweep_value, self.snr_db)


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)
    failures: int = 0
    attempted: int = 0

    def sorted(self) -> "MetricsTable":
        return MetricsTable(sorted(self.rows, key=MetricsRow.key), self.failures, self.attempted)

    def select(self, method=None, snr_db=None) -> list:
        return [
            r
            for r in sorted(self.rows, key=MetricsRow.key)
            if (method is None or r.method == method) and (snr_db is None or r.snr_db == snr_db)
        ]

    def __len__(self):
        return len(self.rows)


def _sig6(x) -> float:
    return float(f"{float(x):.6g}")


def snr_to_power(snr_db: float) -> float:
    """Transmit power budget for an SNR in dB at unit noise variance."""
    return NOISE_VARIANCE * 10.0 ** (snr_db / 10.0)


def run_sample(
    config: ScenarioConfig,
    sample_index: int,
    method: str = GALE_SHAPLEY,
    snr_db: float | None = None,
    users=None,
    p_max: float | None = None,
    channels=None,
    assignments=None,
    callback=None,
) -> SampleResult:
    """One channel draw pushed through assignment and WMMSE.

    `p_max` overrides the power implied by `snr_db` (the first configured SNR
    by default). `channels` and `assignments` let callers reuse the draw and
    the matching across SNR points; both are derived from
    ``(master_seed, sample_index)`` when omitted. `callback` is handed to
    the WMMSE iteration.
    """
    topo = config.topology(users)
    if p_max is None:
        p_max = snr_to_power(config.snr_db[0] if snr_db is None else snr_db)
    if channels is None:
        channels = build_channel_set(topo, NOISE_VARIANCE, config.master_seed, sample_index)
    if assignments is None:
        assignments = [allocate_two_stage(channels, c, method) for c in range(2)]

    problems = []
    for c, asg in enumerate(assignments):
        p = cell_problem(channels, c, asg.links(), p_max, weights=config.weights)
        init_precoders(p, substream(config.master_seed, _INIT_TAG, sample_index, c))
        problems.append(p)
    result = wmmse_solve(problems, config.wmmse, callback=callback)
    matched = tuple(len(a.matched()) for a in assignments)
    unmatched = tuple(len(a.unmatched) for a in assignments)
    return SampleResult(result.trace, result.trace[-1], result.iterations, result.converged, matched, unmatched)


def _sample_outcomes(config: ScenarioConfig, users, sample_index: int) -> dict:
    # every (method, snr) outcome of one sample; None marks a numerical failure
    topo = config.topology(users)
    channels = build_channel_set(topo, NOISE_VARIANCE, config.master_seed, sample_index)
    out = {}
    for method in config.methods():
        try:
            assignments = [allocate_two_stage(channels, c, method) for c in range(2)]
        except AllocationError as exc:
            log.warning("sample %d, %s: allocation failed: %s", sample_index, method, exc)
            out.update({(method, snr): None for snr in config.snr_db})
            continue
        for snr in config.snr_db:
            try:
                out[method, snr] = run_sample(
                    config, sample_index, method, snr, users, channels=channels, assignments=assignments
                )
            except (LinalgError, FloatingPointError) as exc:
                log.warning("sample %d, %s, %g dB: %s", sample_index, method, snr, exc)
                out[method, snr] = None
    return out


def _worker(args):
    return _sample_outcomes(*args)


def _std_error(x) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


def run_experiment(config: ScenarioConfig) -> MetricsTable:
    """Average final (or per-iteration) weighted sum rates over the samples.

    Failed samples are logged and left out of the averages; if more than 1%
    of all attempted samples fail, SampleFailureError is raised.
    """
    table = MetricsTable()
    for users in config.user_counts():
        jobs = [(config, users, s) for s in range(config.samples)]
        if config.workers > 1:
            with ProcessPoolExecutor(config.workers) as pool:
                outcomes = list(pool.map(_worker, jobs, chunksize=max(1, len(jobs) // (4 * config.workers))))
        else:
            outcomes = [_worker(j) for j in jobs]

        for method in config.methods():
            for snr in config.snr_db:
                results = [o[method, snr] for o in outcomes]
                good = [r for r in results if r is not None]
                table.attempted += len(results)
                table.failures += len(results) - len(good)
                if good:
                    table.rows.extend(_aggregate(config, method, snr, users, good))

    if table.failures > FAILURE_LIMIT * table.attempted:
        raise SampleFailureError(table.failures, table.attempted)
    return table.sorted()


def _aggregate(config, method, snr, users, results) -> list:
    iters = _sig6(np.mean([r.iterations for r in results]))

    def row(value, wsr):
        return MetricsRow(
            method, config.sweep, _sig6(value), _sig6(snr), _sig6(np.mean(wsr)), _sig6(_std_error(wsr)), len(wsr), iters
        )

    if config.sweep == "iterations":
        # converged samples keep their final value for the remaining iterations
        width = config.wmmse.max_iterations + 1
        padded = np.array([r.trace + [r.trace[-1]] * (width - len(r.trace)) for r in results])
        return [row(b, padded[:, b]) for b in config.sweep_values]
    value = snr if config.sweep == "snr" else users[0]
    return [row(value, np.array([r.final_wsr for r in results]))]


def _fmt(x) -> str:
    return x if isinstance(x, str) else f"{x:.6g}"


def emit_csv(table: MetricsTable, path) -> None:
    """Write the table sorted by method, sweep value and SNR."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in sorted(table.rows, key=MetricsRow.key):
            writer.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])


def read_csv(path) -> MetricsTable:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        rows = [
            MetricsRow(
                d["method"],
                d["sweep"],
                float(d["sweep_value"]),
                float(d["snr_db"]),
                float(d["mean_wsr"]),
                float(d["std_error"]),
                int(d["samples"]),
                float(d["mean_iters"]),
            )
            for d in reader
        ]
    return MetricsTable(rows)


# --- SVG ---------------------------------------------------------------

_X_LABELS = {
    "iterations": "Number of iterations",
    "snr": "SNR (dB)",
    "users": "Number of users per cell",
}
_Y_LABEL = "Weighted sum rate (bits/s/Hz)"
_METHOD_NAMES = {GALE_SHAPLEY: "Gale-Shapley", TRANSPORTATION: "Transportation"}
_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"]
_W, _H = 640, 420
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 170, 20, 50


def _series(table: MetricsTable, kind: str) -> dict:
    # (method, secondary) -> sorted [(x, y)]; SNR is the secondary axis except in SNR sweeps
    out = {}
    for r in sorted(table.rows, key=MetricsRow.key):
        label = _METHOD_NAMES.get(r.method, r.method)
        if kind != "snr":
            label += f", {r.snr_db:g} dB"
        out.setdefault(label, []).append((r.sweep_value, r.mean_wsr))
    return out


def axis_range(values) -> tuple:
    """``[min, max]`` widened by 5% of the span on each side."""
    lo, hi = min(values), max(values)
    span = hi - lo
    if span == 0:
        span = abs(hi) if hi else 1.0
    return lo - 0.05 * span, hi + 0.05 * span


def _ticks(lo, hi, count=5) -> list:
    step = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(step))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= step), default=10 * mag)
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def emit_plot(table: MetricsTable, kind: str, path) -> None:
    """Line chart of mean WSR against the sweep variable as a standalone SVG."""
    if not table.rows:
        raise ValueError("cannot plot an empty table")
    if kind not in SWEEPS:
        raise ValueError(f"kind must be one of {SWEEPS}")
    series = _series(table, kind)
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = axis_range(xs)
    y0, y1 = axis_range(ys)
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def px(x):
        return _LEFT + (x - x0) / (x1 - x0) * pw

    def py(y):
        return _TOP + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" data-x-range="{x0:.6g} {x1:.6g}" data-y-range="{y0:.6g} {y1:.6g}">',
        f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.2f}" y="{_TOP + ph + 16}" font-size="11" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{_LEFT - 6}" y="{py(t) + 4:.2f}" font-size="11" text-anchor="end">{t:g}</text>')
        out.append(f'<line x1="{_LEFT}" y1="{py(t):.2f}" x2="{_LEFT + pw}" y2="{py(t):.2f}" stroke="#ddd"/>')
    out.append(
        f'<text x="{_LEFT + pw / 2:.1f}" y="{_H - 12}" font-size="13" text-anchor="middle">{_X_LABELS[kind]}</text>'
    )
    out.append(
        f'<text x="16" y="{_TOP + ph / 2:.1f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {_TOP + ph / 2:.1f})">{_Y_LABEL}</text>'
    )
    for i, (label, pts) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = _TOP + 14 + 18 * i
        lx = _LEFT + pw + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" font-size="11">{label}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
