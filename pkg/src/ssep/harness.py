"""Experiment runner: config parsing, replica fan-out, summary merging and CSV tables.

Replica ``r`` always uses the event stream ``(seed, r)``.  Replicas are grouped into
fixed chunks of ``CHUNK_SIZE`` whose summaries are merged in chunk order, so the output
does not depend on how many worker processes ran the chunks.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import exact
from .dynamics import RECORD_DTYPE, trajectory
from .lattice import DEFAULT_TAIL_BOUND, EventStream, build_window, sample_initial
from .stats import McSummary, jittered_ks, moment_tests, variance_with_se

log = logging.getLogger(__name__)

EXPERIMENTS = ("variance-flux", "clt-flux", "tagged", "exact-tables", "identity-check",
               "decomposition")
CSV_COLUMNS = ("experiment", "rho", "t", "n_replicas", "estimator", "estimate", "std_error",
               "prediction", "z_score", "seed")
CHUNK_SIZE = 250
DEFAULT_REPLICAS = 10000
DEFAULT_TIMES = (1.0, 4.0, 16.0, 64.0)
# spawn key for the KS jitter draws; replica streams use one-element keys
JITTER_KEY = (0, 0)

TEMPLATE = """\
# ssep experiment configuration: one `key = value` per line, `#` starts a comment.
# experiment: variance-flux | clt-flux | tagged | exact-tables | identity-check | decomposition
experiment = variance-flux
rho = 0.5
times = 1, 4, 16, 64
replicas = 10000
seed = 42
tail_bound = 1e-12
output_path = variance-flux.csv
"""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    rho: float
    times: tuple = DEFAULT_TIMES
    replicas: int = DEFAULT_REPLICAS
    seed: int = 0
    tail_bound: float = DEFAULT_TAIL_BOUND
    output_path: str = ""

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.experiment == "tagged" and self.rho == 0.0:
            raise ConfigError("tagged experiment needs rho > 0")
        if not self.times:
            raise ConfigError("times must be non-empty")
        if any(t < 0 or not math.isfinite(t) for t in self.times):
            raise ConfigError("times must be finite and non-negative")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("times must be strictly increasing")
        if self.replicas < 1:
            raise ConfigError("replicas must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not 0.0 < self.tail_bound < 1.0:
            raise ConfigError("tail_bound must lie in (0, 1)")
        if not self.output_path:
            object.__setattr__(self, "output_path", f"{self.experiment}.csv")

    @property
    def simulated(self) -> bool:
        return self.experiment != "exact-tables"

    @property
    def tagged(self) -> bool:
        return self.experiment in ("tagged", "identity-check")


def _parse_value(key: str, raw: str):
    try:
        if key in ("experiment", "output_path"):
            if not raw:
                raise ValueError("empty value")
            return raw
        if key in ("rho", "tail_bound"):
            return float(raw)
        if key in ("replicas", "seed"):
            return int(raw)
        if key == "times":
            return tuple(float(v) for v in raw.split(","))
    except ValueError as err:
        raise ConfigError(f"malformed value for {key}: {raw!r} ({err})") from None
    raise ConfigError(f"unknown key {key!r}")


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse the ``key = value`` grammar; ``overrides`` replace keys after parsing."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")
    if "rho" not in values:
        if values["experiment"] != "exact-tables":
            raise ConfigError("missing required key 'rho'")
        values["rho"] = 0.5
    return ExperimentConfig(**values)


# ---------------------------------------------------------------------------
# simulation

@dataclass
class ChunkResult:
    summaries: dict
    max_violations: dict
    samples: dict


@dataclass
class SimulationResult:
    config: ExperimentConfig
    summaries: dict  # (t, quantity) -> McSummary
    max_violations: dict = field(default_factory=dict)  # t -> int
    samples: dict = field(default_factory=dict)  # t -> flux samples in replica order


def _run_chunk(config: ExperimentConfig, start: int, stop: int) -> ChunkResult:
    window = build_window(config.times[-1], config.tail_bound)
    recs = np.empty((stop - start, len(config.times)), dtype=RECORD_DTYPE)
    for i, r in enumerate(range(start, stop)):
        stream = EventStream(config.seed, r, window.n_bonds)
        initial = sample_initial(config.rho, window, stream, tag_origin=config.tagged)
        recs[i] = trajectory(initial, stream, config.times, track_tag=config.tagged)
    rho = config.rho
    summaries, maxima, samples = {}, {}, {}
    for k, t in enumerate(config.times):
        col = recs[:, k]
        J = col["J_cross"].astype(np.float64)
        K = col["K_plus"].astype(np.float64)
        quantities = {
            "J": J,
            "K": K,
            "M": col["M"],
            "wald": J * J - 2.0 * rho * (1.0 - rho) * K,
            "A_plus": col["A_plus"],
            "A_minus": col["A_minus"],
        }
        if config.tagged:
            X = col["X"].astype(np.float64)
            quantities["X2"] = X * X
            if rho > 0:
                quantities["D2"] = (X - J / rho) ** 2
        for name, values in quantities.items():
            summaries[(t, name)] = McSummary.of(values)
        maxima[t] = int(col["violations"].max())
        samples[t] = col["J_cross"].copy()
    return ChunkResult(summaries, maxima, samples)


def merge_worker_outputs(partials) -> dict:
    """Merge per-chunk summary maps, in the order given."""
    partials = list(partials)
    if not partials:
        raise ValueError("nothing to merge")
    keys = set(partials[0])
    merged = dict(partials[0])
    for part in partials[1:]:
        if set(part) != keys:
            raise KeyError("partial summaries have different keys")
        for key in merged:
            merged[key] = merged[key].merge(part[key])
    return merged


def chunks(n: int, size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def simulate(config: ExperimentConfig, workers: int = 1) -> SimulationResult:
    if not config.simulated:
        raise ValueError(f"{config.experiment} does not simulate")
    spans = chunks(config.replicas)
    if workers <= 1:
        results = [_run_chunk(config, a, b) for a, b in spans]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, [config] * len(spans),
                                    [a for a, _ in spans], [b for _, b in spans]))
    summaries = merge_worker_outputs(r.summaries for r in results)
    maxima = {t: max(r.max_violations[t] for r in results) for t in config.times}
    samples = {t: np.concatenate([r.samples[t] for r in results]) for t in config.times}
    return SimulationResult(config, summaries, maxima, samples)


# ---------------------------------------------------------------------------
# tables

@dataclass(frozen=True)
class Row:
    experiment: str
    rho: float
    t: float
    n_replicas: int
    estimator: str
    estimate: float | None
    std_error: float | None
    prediction: float | None
    kind: str  # exact: |z| <= 3, bound: z <= 3, limit / table: not enforced
    seed: int

    @property
    def z_score(self) -> float | None:
        if self.estimate is None or self.prediction is None or self.std_error is None:
            return None
        diff = self.estimate - self.prediction
        if self.std_error > 0:
            return diff / self.std_error
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)

    @property
    def breach(self) -> bool:
        z = self.z_score
        if z is None:
            return False
        if self.kind == "exact":
            return abs(z) > 3.0
        if self.kind == "bound":
            return z > 3.0
        return False

    def csv_fields(self) -> list[str]:
        return [self.experiment, _fmt(self.rho), _fmt(self.t), str(self.n_replicas),
                self.estimator, _fmt(self.estimate), _fmt(self.std_error),
                _fmt(self.prediction), _fmt(self.z_score), str(self.seed)]


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def build_rows(config: ExperimentConfig, result: SimulationResult | None = None) -> list[Row]:
    """Rows for ``config.experiment``; ``result`` may come from a run of a sibling experiment."""
    rho = config.rho
    table = exact.exact_table(config.times)
    rows = []

    def row(t, n, name, est, se, pred, kind):
        rows.append(Row(config.experiment, rho, t, n, name, est, se, pred, kind, config.seed))

    if config.experiment == "exact-tables":
        for t in config.times:
            R, EK = table[t]
            pred = exact.predicted_flux_variance(rho, t)
            row(t, 0, "R_t", None, 0.0, R, "table")
            row(t, 0, "EK", None, 0.0, EK, "table")
            row(t, 0, "EJ2", None, 0.0, pred, "table")
            row(t, 0, "EJ2_over_sqrt_t", None, 0.0, pred / math.sqrt(t) if t > 0 else None,
                "table")
            row(t, 0, "sigma2", None, 0.0, exact.flux_sigma2(rho), "table")
            if rho > 0:
                row(t, 0, "sigma_bar2", None, 0.0, exact.asymptotic_constants(rho).sigma_bar2,
                    "table")
        return rows

    if result is None:
        raise ValueError("simulation experiments need a SimulationResult")
    S = result.summaries
    for t in config.times:
        R, EK = table[t]
        n = S[(t, "J")].n
        if config.experiment == "variance-flux":
            var, se = variance_with_se(S[(t, "J")]) if n > 1 else (None, None)
            row(t, n, "EJ2", var, se, exact.predicted_flux_variance(rho, t), "exact")
            row(t, n, "EK", S[(t, "K")].mean, S[(t, "K")].std_error, EK, "exact")
            var, se = variance_with_se(S[(t, "K")]) if n > 1 else (None, None)
            row(t, n, "VarK", var, se, EK, "bound")
            var, se = variance_with_se(S[(t, "M")]) if n > 1 else (None, None)
            row(t, n, "EM2", var, se, t * rho * (1.0 - rho), "exact")
        elif config.experiment == "clt-flux":
            try:
                skew, kurt = moment_tests(S[(t, "J")])
            except ValueError:
                skew = kurt = None
            row(t, n, "skew", skew, math.sqrt(6.0 / n), 0.0, "exact")
            row(t, n, "excess_kurt", kurt, math.sqrt(24.0 / n), 0.0, "limit")
            sigma2 = exact.predicted_flux_variance(rho, t)
            d = None
            if sigma2 > 0:
                jitter = np.random.Generator(np.random.PCG64(
                    np.random.SeedSequence(config.seed, spawn_key=JITTER_KEY)))
                d = jittered_ks(result.samples[t], sigma2, jitter).d_stat
            row(t, n, "ks_d", d, None, 0.0, "limit")
        elif config.experiment == "tagged":
            root = math.sqrt(t)
            ok = root > 0
            x2, d2 = S[(t, "X2")], S[(t, "D2")]
            row(t, n, "VX_over_sqrt_t", x2.mean / root if ok else None,
                x2.std_error / root if ok else None,
                exact.asymptotic_constants(rho).sigma_bar2, "limit")
            row(t, n, "E_XminusJoverRho_sq_over_sqrt_t", d2.mean / root if ok else None,
                d2.std_error / root if ok else None, 0.0, "limit")
        elif config.experiment == "identity-check":
            row(t, n, "max_pathwise_violations", float(result.max_violations[t]), 0.0, 0.0,
                "exact")
        elif config.experiment == "decomposition":
            total_k = S[(t, "K")].mean * n
            target = rho * (1.0 - rho)
            for name in ("A_plus", "A_minus"):
                if total_k > 0:
                    p = S[(t, name)].mean * n / total_k
                    se = math.sqrt(p * (1.0 - p) / total_k)
                else:
                    p = se = None
                row(t, n, "P_" + name, p, se, target, "exact")
            w = S[(t, "wald")]
            row(t, n, "wald_gap", w.mean, w.std_error, 0.0, "exact")
    return rows


def write_csv(rows, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow(r.csv_fields())


def run_experiment(config: ExperimentConfig, workers: int = 1) -> list[Row]:
    """Run ``config`` and write its table to ``config.output_path``."""
    result = simulate(config, workers) if config.simulated else None
    rows = build_rows(config, result)
    directory = os.path.dirname(config.output_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    write_csv(rows, config.output_path)
    log.info("wrote %d rows to %s", len(rows), config.output_path)
    return rows


__all__ = ["ConfigError", "ExperimentConfig", "Row", "SimulationResult", "TEMPLATE",
           "build_rows", "merge_worker_outputs", "parse_config", "run_experiment", "simulate",
           "write_csv"]
