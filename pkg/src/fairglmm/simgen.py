"""Synthetic stratified populations and the replication harness.

A population has ``n_strata`` strata of ``stratum_size`` rows, three N(0, 1)
covariates and a Bernoulli(0.5) sensitive feature.  The five-entry ``beta``
vector is (intercept, x1, x2, x3, s).  Each replication draws a population,
keeps 3 to 5 rows per stratum for training, fits the six estimators and scores
them on the remaining rows.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_model import Dataset, FitConfig, build_dataset
from .estimators import DISPLAY_NAMES, ESTIMATORS, fit_estimator
from .logit_math import sigmoid
from .metrics import evaluate

logger = logging.getLogger(__name__)

UNFAIR_BETA = (-2.0, 0.4, 0.8, 0.5, 3.0)
FAIR_BETA = (-0.1, 1.0, 1.0, 1.0, 0.1)


@dataclass(frozen=True)
class ScenarioSpec:
    beta: tuple[float, ...]
    strata_effect: bool
    b_variance: float = 9.0
    n_strata: int = 100
    stratum_size: int = 1000
    c: float = 0.1
    rho: float = 0.8
    lam: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if len(self.beta) != 5:
            raise ValueError("beta must have 5 entries: intercept, x1, x2, x3, s")
        if self.n_strata < 1:
            raise ValueError("n_strata must be at least 1")
        if self.stratum_size < 5:
            raise ValueError("stratum_size must be at least 5")
        if self.strata_effect and self.b_variance <= 0:
            raise ValueError("b_variance must be positive")

    def fit_config(self, base: FitConfig | None = None) -> FitConfig:
        return replace(base or FitConfig(), lam=self.lam, rho=self.rho, c=self.c)


SCENARIOS = {
    "unfair-strata": ScenarioSpec(UNFAIR_BETA, strata_effect=True),
    "fair-strata": ScenarioSpec(FAIR_BETA, strata_effect=True),
    "unfair-nostrata": ScenarioSpec(UNFAIR_BETA, strata_effect=False),
    "fair-nostrata": ScenarioSpec(FAIR_BETA, strata_effect=False),
}


def generate_population(spec: ScenarioSpec, include_sensitive: bool = True) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    n_rows = spec.n_strata * spec.stratum_size
    x = rng.standard_normal((n_rows, 3))
    s = rng.integers(0, 2, size=n_rows).astype(float)
    strata = np.repeat(np.arange(1, spec.n_strata + 1), spec.stratum_size)
    beta = np.asarray(spec.beta)
    eta = beta[0] + x @ beta[1:4] + beta[4] * s
    if spec.strata_effect:
        b = rng.normal(0.0, np.sqrt(spec.b_variance), size=spec.n_strata)
        eta = eta + b[strata - 1]
    y = (rng.random(n_rows) < sigmoid(eta)).astype(float)
    if include_sensitive:
        features, names = np.column_stack([x, s]), ("x1", "x2", "x3", "s")
    else:
        features, names = x, ("x1", "x2", "x3")
    return build_dataset(features, y, strata, s, feature_names=names)


def split_train_test(dataset: Dataset, seed) -> tuple[Dataset, Dataset]:
    """Keep a uniform draw of 3, 4 or 5 rows per stratum for training."""
    if np.any(dataset.stratum_sizes < 5):
        raise ValueError("every stratum needs at least 5 rows")
    rng = np.random.default_rng(seed)
    keys = rng.random(dataset.n_rows)
    take = rng.integers(3, 6, size=dataset.n_strata)
    order = np.lexsort((keys, dataset.group))
    starts = np.concatenate([[0], np.cumsum(dataset.stratum_sizes)[:-1]])
    rank = np.empty(dataset.n_rows, dtype=int)
    rank[order] = np.arange(dataset.n_rows) - starts[dataset.group[order]]
    train_mask = rank < take[dataset.group]
    return dataset.subset(np.flatnonzero(train_mask)), dataset.subset(np.flatnonzero(~train_mask))


@dataclass
class EstimatorOutcome:
    accuracy: float
    disparate_impact: float
    converged: bool
    seconds: float
    error: str = ""


@dataclass
class ReplicationReport:
    rep: int
    seed: int
    outcomes: dict[str, EstimatorOutcome] = field(default_factory=dict)


def run_replication(
    spec: ScenarioSpec,
    rep: int,
    config: FitConfig,
    estimators: Sequence[str] = ESTIMATORS,
) -> ReplicationReport:
    seed = spec.seed + rep
    population = generate_population(
        replace(spec, seed=seed), include_sensitive=config.include_sensitive_as_covariate
    )
    train, test = split_train_test(population, (seed, 1))
    report = ReplicationReport(rep=rep, seed=seed)
    for name in estimators:
        start = time.perf_counter()
        try:
            fit = fit_estimator(name, train, config)
            pair = evaluate(fit.params, test, train.stratum_ids)
            outcome = EstimatorOutcome(
                pair.accuracy, pair.disparate_impact, fit.converged, time.perf_counter() - start
            )
        except Exception as exc:  # recorded per replication, never fatal
            logger.warning("rep %d %s failed: %s", rep, name, exc)
            outcome = EstimatorOutcome(
                np.nan, np.nan, False, time.perf_counter() - start, f"{type(exc).__name__}: {exc}"
            )
        report.outcomes[name] = outcome
    return report


def _run_one(args):
    return run_replication(*args)


def run_replications(
    spec: ScenarioSpec,
    n_reps: int,
    config: FitConfig | None = None,
    estimators: Sequence[str] = ESTIMATORS,
    jobs: int = 1,
) -> list[ReplicationReport]:
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    config = config or spec.fit_config()
    tasks = [(spec, rep, config, tuple(estimators)) for rep in range(n_reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    metric: str
    mean: float
    p25: float
    median: float
    p75: float
    p95: float
    std: float
    n: int


def summarize_values(estimator: str, metric: str, values) -> SummaryRow:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        nan = float("nan")
        return SummaryRow(estimator, metric, nan, nan, nan, nan, nan, nan, 0)
    p25, med, p75, p95 = np.percentile(v, [25, 50, 75, 95])
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return SummaryRow(
        estimator, metric, float(v.mean()), float(p25), float(med), float(p75), float(p95), std, int(v.size)
    )


def summarize(reports: Sequence[ReplicationReport]) -> list[SummaryRow]:
    if not reports:
        raise ValueError("no replication reports to summarize")
    names = [e for e in ESTIMATORS if e in reports[0].outcomes]
    rows = []
    for metric, attr in (("ac", "accuracy"), ("di", "disparate_impact")):
        for name in names:
            values = [getattr(r.outcomes[name], attr) for r in reports]
            rows.append(summarize_values(name, metric, values))
    return rows


def mean_of(rows: Sequence[SummaryRow], estimator: str, metric: str) -> float:
    for row in rows:
        if row.estimator == estimator and row.metric == metric:
            return row.mean
    raise KeyError((estimator, metric))


REPLICATION_HEADER = ["rep", "estimator", "ac", "di", "converged", "seconds"]
SUMMARY_HEADER = ["estimator", "metric", "mean", "p25", "median", "p75", "p95", "std", "n"]


def write_replications_csv(reports: Sequence[ReplicationReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPLICATION_HEADER)
        for r in reports:
            for name, o in r.outcomes.items():
                w.writerow(
                    [r.rep, name, f"{o.accuracy:.6f}", f"{o.disparate_impact:.6f}",
                     int(o.converged), f"{o.seconds:.4f}"]
                )


def write_summary_csv(rows: Sequence[SummaryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for row in rows:
            w.writerow(
                [row.estimator, row.metric]
                + [f"{getattr(row, k):.6f}" for k in ("mean", "p25", "median", "p75", "p95", "std")]
                + [row.n]
            )


def summary_markdown(rows: Sequence[SummaryRow], title: str = "") -> str:
    """Two tables (accuracy, disparate impact) in the usual six-column layout."""
    out = []
    if title:
        out += [f"# {title}", ""]
    for metric, caption in (("ac", "Accuracy"), ("di", "Disparate impact")):
        out += [f"## {caption}", "", "| Algorithm | Mean | p25 | Median | p75 | p95 | std |",
                "|---|---|---|---|---|---|---|"]
        for row in rows:
            if row.metric != metric:
                continue
            vals = " | ".join(
                f"{getattr(row, k):.2f}" for k in ("mean", "p25", "median", "p75", "p95", "std")
            )
            out.append(f"| {DISPLAY_NAMES.get(row.estimator, row.estimator)} | {vals} |")
        out.append("")
    return "\n".join(out)


def write_outputs(reports, rows, out_dir, title="") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "replications.csv", out / "summary.csv", out / "summary.md"]
    write_replications_csv(reports, paths[0])
    write_summary_csv(rows, paths[1])
    paths[2].write_text(summary_markdown(rows, title))
    return paths
