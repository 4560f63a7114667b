"""Result artifacts: accuracy-vs-budget curves, sampling-time tables, and
OOD-rejection summaries, emitted as CSV (canonical) with optional plots.

Curve and timing CSVs are pure functions of the run results, so re-emitting
them over the same inputs is byte-identical. Absolute timings are hardware
bound; only orderings between strategies are meaningful.
"""
from __future__ import annotations

import csv
import gc
import re
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alloop import aggregate_runs
from .errors import AggregationError, ContractError, EmptyPoolError
from .sampling import random_select, select_weibull, uncertain_selection

CURVE_CSV_COLUMNS = [
    "strategy",
    "variant",
    "optimizer",
    "stage",
    "labeled_count",
    "labeled_fraction",
    "acc_mean",
    "acc_std",
    "n_seeds",
]
TIMING_CSV_COLUMNS = ["strategy", "pool_size", "mean_seconds", "std_seconds", "repetitions"]
REJECTION_CSV_COLUMNS = ["label", "stage", "rejected_mean"]


# ---------------------------------------------------------------------------
# sampling-time measurement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimingResult:
    strategy: str
    pool_size: int
    mean_seconds: float
    std_seconds: float
    repetitions: int
    times: tuple


def time_sampling(
    strategy: str,
    model,
    unlabeled_ids,
    unlabeled_features,
    repetitions: int = 5,
    b: int = 1,
    labeled_ids=None,
    labeled_features=None,
    labeled_labels=None,
    tail_fraction: float = 1.0,
    reject_threshold: float = 1.0,
    seed: int = 0,
) -> TimingResult:
    """Wall-clock timing of full scoring+selection passes over a fixed pool.

    Runs one warm-up pass (excluded) plus ``repetitions`` timed passes and
    reports their mean and sample standard deviation. The weibull strategy
    additionally needs the labeled pool it fits its class models on.
    """
    unlabeled_ids = list(unlabeled_ids)
    if not unlabeled_ids:
        raise EmptyPoolError("cannot time selection over an empty pool")
    if repetitions < 3:
        raise ContractError(f"repetitions must be >= 3, got {repetitions}")

    if strategy == "random":
        def one_pass():
            random_select(unlabeled_ids, b, np.random.default_rng(seed))
    elif strategy == "uncertainty":
        x = np.asarray(unlabeled_features, dtype=np.float64)

        def one_pass():
            uncertain_selection(model, unlabeled_ids, x, b)
    elif strategy == "weibull":
        if labeled_ids is None or labeled_features is None or labeled_labels is None:
            raise ContractError("weibull timing needs the labeled pool")
        x = np.asarray(unlabeled_features, dtype=np.float64)
        lx = np.asarray(labeled_features, dtype=np.float64)
        ly = list(labeled_labels)
        lids = list(labeled_ids)

        def one_pass():
            select_weibull(
                model,
                unlabeled_ids,
                x,
                lids,
                lx,
                ly,
                b,
                tail_fraction=tail_fraction,
                reject_threshold=reject_threshold,
            )
    else:
        raise ContractError(f"unknown strategy {strategy!r}")

    one_pass()  # warm-up, excluded from the statistics
    times = []
    # collector pauses from unrelated garbage would land on random passes,
    # so timing runs with gc off, the way timeit does
    gc.collect()
    gc.disable()
    try:
        for _ in range(repetitions):
            tic = time.perf_counter()
            one_pass()
            times.append(time.perf_counter() - tic)
    finally:
        gc.enable()
    return TimingResult(
        strategy=strategy,
        pool_size=len(unlabeled_ids),
        mean_seconds=float(np.mean(times)),
        std_seconds=float(np.std(times, ddof=1)),
        repetitions=repetitions,
        times=tuple(times),
    )


def write_timing_csv(results: list, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMING_CSV_COLUMNS)
        for r in results:
            writer.writerow(
                [r.strategy, r.pool_size, repr(r.mean_seconds), repr(r.std_seconds), r.repetitions]
            )
    return path


# ---------------------------------------------------------------------------
# accuracy curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurveSet:
    label: str
    strategy: str
    variant: str
    optimizer: str
    stages: tuple
    x: tuple  # labeled counts, mean across seeds
    x_fraction: tuple
    y_mean: tuple
    y_std: tuple
    n_seeds: int
    single_seed: bool

    def __post_init__(self):
        lengths = {
            len(self.stages),
            len(self.x),
            len(self.x_fraction),
            len(self.y_mean),
            len(self.y_std),
        }
        if lengths != {len(self.x)}:
            raise ContractError("curve series lengths disagree")
        if any(b <= a for a, b in zip(self.x, self.x[1:])):
            raise ContractError(f"labeled counts must strictly increase, got {self.x}")
        if any(not 0.0 <= y <= 1.0 for y in self.y_mean):
            raise ContractError("curve accuracies must lie in [0,1]")


def _slug(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", label.lower()).strip("-") or "curve"


def _fmt(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def build_curve(label: str, results: list) -> CurveSet:
    """Aggregate one config's runs into a plottable curve."""
    if not results:
        raise AggregationError(f"curve {label!r} has no runs")
    agg = aggregate_runs(results)
    snapshot = results[0].config_snapshot
    n_train = results[0].n_train
    return CurveSet(
        label=label,
        strategy=snapshot["strategy"],
        variant=snapshot["variant"],
        optimizer=snapshot["train"]["optimizer"],
        stages=tuple(int(t) for t in agg.stages),
        x=tuple(float(c) for c in agg.labeled_mean),
        x_fraction=tuple(float(c) / n_train for c in agg.labeled_mean),
        y_mean=tuple(float(a) for a in agg.acc_mean),
        y_std=tuple(float(s) for s in agg.acc_std),
        n_seeds=agg.n_seeds,
        single_seed=agg.single_seed,
    )


def write_curve_csv(curve: CurveSet, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_CSV_COLUMNS)
        for i, stage in enumerate(curve.stages):
            writer.writerow(
                [
                    curve.strategy,
                    curve.variant,
                    curve.optimizer,
                    stage,
                    _fmt(curve.x[i]),
                    repr(curve.x_fraction[i]),
                    repr(curve.y_mean[i]),
                    repr(curve.y_std[i]),
                    curve.n_seeds,
                ]
            )
    return path


def emit_curves(named_results: dict, out_dir, plot: bool = False) -> list:
    """Write one CSV per curve (plus an optional combined plot image).

    ``named_results`` maps a curve label to that config's list of RunResults.
    Returns (curve, csv_path) pairs ordered by final accuracy descending,
    which is also the plot's legend order.
    """
    if not named_results:
        raise AggregationError("no result groups to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = [build_curve(label, results) for label, results in named_results.items()]
    curves.sort(key=lambda c: (-c.y_mean[-1], c.label))
    emitted = []
    for curve in curves:
        path = write_curve_csv(curve, out_dir / f"curve-{_slug(curve.label)}.csv")
        emitted.append((curve, path))
    if plot:
        _render_plot(curves, out_dir / "curves.png")
    return emitted


def _render_plot(curves: list, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for curve in curves:  # already in legend order
        x = np.asarray(curve.x)
        y = np.asarray(curve.y_mean)
        line = ax.plot(x, y, marker="o", label=curve.label)[0]
        if not curve.single_seed:
            std = np.asarray(curve.y_std)
            ax.fill_between(x, y - std, y + std, alpha=0.15, color=line.get_color())
    ax.set_xlabel("labeled samples")
    ax.set_ylabel("eval accuracy")
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# OOD-rejection summary
# ---------------------------------------------------------------------------

def rejection_summary(named_results: dict) -> list:
    """Per-stage mean count of oracle-rejected OOD queries for each group."""
    rows = []
    for label, results in named_results.items():
        if not results:
            raise AggregationError(f"group {label!r} has no runs")
        stages = [rec.stage for rec in results[0].records]
        counts = np.array(
            [[rec.rejected_ood for rec in r.records] for r in results], dtype=np.float64
        )
        means = counts.mean(axis=0)
        rows.extend(
            {"label": label, "stage": t, "rejected_mean": float(means[i])}
            for i, t in enumerate(stages)
        )
    return rows


def write_rejection_csv(named_results: dict, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REJECTION_CSV_COLUMNS)
        for row in rejection_summary(named_results):
            writer.writerow([row["label"], row["stage"], _fmt(row["rejected_mean"])])
    return path
