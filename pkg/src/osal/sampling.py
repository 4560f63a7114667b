"""Acquisition strategies: least-confidence, Weibull open-set, random.

The Weibull strategy models, per class, the distribution of latent distances
between correctly classified labeled samples and their class mean. Extreme
value theory motivates a Weibull fit on those distances; the CDF then turns a
distance into the probability that a sample belongs to no known class.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import compress
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import (
    BudgetError,
    DegenerateStatsError,
    EmptyPoolError,
    FitError,
)
from .vnn.model import VnnModel, encode, predict_proba

TAIL_FRACTION_DEFAULT = 0.25
REJECT_THRESHOLD_DEFAULT = 0.95
MIN_TAIL_SIZE = 8
MLE_MAX_ITER = 200
MLE_TOL = 1e-8


# NamedTuple rather than a dataclass: a scoring pass builds one per pool
# record, and tuple construction keeps that off the profile
class UncertaintyScore(NamedTuple):
    sample_id: str
    max_class_probability: float


@dataclass(frozen=True)
class WeibullClassModel:
    class_index: int
    latent_mean: np.ndarray
    shape: float
    scale: float
    tail_size: int
    n_correct: int

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise FitError(
                f"class {self.class_index}: non-positive Weibull parameters "
                f"(k={self.shape}, lam={self.scale})"
            )


@dataclass(frozen=True)
class SelectionResult:
    selected_ids: tuple[str, ...]
    scores: dict[str, float] = field(default_factory=dict)
    rejected_ood_ids: tuple[str, ...] = ()
    shortfall: int = 0


# ---------------------------------------------------------------------------
# least-confidence uncertainty
# ---------------------------------------------------------------------------

def uncertainty_scores(model: VnnModel, ids, features) -> list[UncertaintyScore]:
    """Max class probability per record, scored on the posterior mean."""
    ids = list(ids)
    if not ids:
        raise EmptyPoolError("no unlabeled records to score")
    probs = predict_proba(model, np.asarray(features, dtype=np.float64))
    top = probs.max(axis=1).tolist()
    return [UncertaintyScore(s, p) for s, p in zip(ids, top)]


def _take_smallest(keys: np.ndarray, ids, b: int) -> list[str]:
    """The b ids with the smallest keys, ties broken by ascending id.

    An O(n) partition bounds the boundary value, then only the records at
    or below it are sorted; a full sort of the pool never happens.
    """
    if b == 0 or len(ids) == 0:
        return []
    kth = min(b, len(ids)) - 1
    cutoff = keys[np.argpartition(keys, kth)[kth]]
    candidates = np.flatnonzero(keys <= cutoff)
    ranked = sorted((keys[i], ids[i]) for i in candidates)
    return [sid for _, sid in ranked[:b]]


def select_uncertain(scores: list[UncertaintyScore], b: int) -> SelectionResult:
    """The b least-confident ids, ties broken by ascending id."""
    if b < 0 or b > len(scores):
        raise BudgetError(f"budget {b} outside [0, {len(scores)}]")
    if not scores:
        return SelectionResult(selected_ids=(), scores={})
    ids, probs = zip(*scores)
    selected = _take_smallest(np.asarray(probs), ids, b)
    return SelectionResult(selected_ids=tuple(selected), scores=dict(zip(ids, probs)))


def uncertain_selection(model: VnnModel, ids, features, b: int) -> SelectionResult:
    """One least-confidence pass: score the pool and take the b least
    confident, without materializing per-record score objects."""
    ids = list(ids)
    if not ids:
        raise EmptyPoolError("no unlabeled records to score")
    if b < 0 or b > len(ids):
        raise BudgetError(f"budget {b} outside [0, {len(ids)}]")
    top = predict_proba(model, np.asarray(features, dtype=np.float64)).max(axis=1)
    selected = _take_smallest(top, ids, b)
    return SelectionResult(selected_ids=tuple(selected), scores=dict(zip(ids, top.tolist())))


# ---------------------------------------------------------------------------
# Weibull open-set
# ---------------------------------------------------------------------------

def class_latent_means(model: VnnModel, ids, features, labels):
    """Mean latent vector per class over correctly classified samples.

    Returns {class: (mean, correct_ids)}; classes with no correct sample are
    absent from the map.
    """
    ids = list(ids)
    if not ids:
        raise DegenerateStatsError("labeled pool is empty")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    post = encode(model, x)
    preds = np.argmax(predict_proba(model, x), axis=1)
    correct = preds == y
    out = {}
    for c in range(model.num_classes):
        mask = correct & (y == c)
        if not mask.any():
            continue
        out[c] = (
            post.mean[mask].mean(axis=0),
            [sid for sid, keep in zip(ids, mask) if keep],
        )
    if not out:
        raise DegenerateStatsError("no class has a correctly classified sample")
    return out


def _weibull_fixed_point(x: np.ndarray) -> float | None:
    """Damped fixed-point iteration for the shape MLE; None if it fails."""
    lx = np.log(x)
    mean_lx = lx.mean()
    sd = lx.std()
    if sd < 1e-12:
        return None
    k = 1.2825 / sd  # moment-based starting point
    for _ in range(MLE_MAX_ITER):
        xk = x**k
        num = float((xk * lx).sum() / xk.sum() - mean_lx)
        if num <= 0 or not np.isfinite(num):
            return None
        k_next = 1.0 / num
        k_new = k + 0.5 * (k_next - k)
        if not np.isfinite(k_new) or k_new <= 0:
            return None
        if abs(k_new - k) < MLE_TOL:
            return k_new
        k = k_new
    return None


def _weibull_bisect(x: np.ndarray) -> float:
    """Bisection on the profile-likelihood stationarity condition in k."""
    lx = np.log(x)
    mean_lx = lx.mean()

    def g(k):
        xk = x**k
        return float((xk * lx).sum() / xk.sum() - 1.0 / k - mean_lx)

    lo, hi = 1e-3, 1.0
    while g(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise FitError("Weibull shape bracket not found")
    if g(lo) > 0:
        raise FitError("Weibull shape bracket not found")
    for _ in range(MLE_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < MLE_TOL:
            break
    return 0.5 * (lo + hi)


def fit_weibull(distances, tail_fraction: float = TAIL_FRACTION_DEFAULT):
    """Maximum-likelihood (shape, scale) on the largest tail of distances."""
    if not (0.0 < tail_fraction <= 1.0):
        raise DegenerateStatsError(f"tail_fraction must lie in (0,1], got {tail_fraction}")
    d = np.sort(np.asarray(distances, dtype=np.float64))
    n_tail = int(np.ceil(tail_fraction * len(d)))
    tail = d[len(d) - n_tail :]
    tail = tail[tail > 0]  # Weibull support is strictly positive
    if len(tail) < MIN_TAIL_SIZE:
        raise DegenerateStatsError(
            f"need at least {MIN_TAIL_SIZE} positive distances in the tail, got {len(tail)}"
        )
    if np.ptp(tail) < 1e-12:
        raise DegenerateStatsError("constant distances cannot be fitted")
    k = _weibull_fixed_point(tail)
    if k is None:
        k = _weibull_bisect(tail)
    lam = float(np.mean(tail**k) ** (1.0 / k))
    if not (np.isfinite(k) and np.isfinite(lam)) or k <= 0 or lam <= 0:
        raise FitError(f"Weibull fit produced k={k}, lam={lam}")
    return float(k), lam


def fit_class_models(
    model: VnnModel, ids, features, labels, tail_fraction: float = TAIL_FRACTION_DEFAULT
) -> dict[int, WeibullClassModel]:
    """One Weibull model per fittable class of the labeled pool."""
    means = class_latent_means(model, ids, features, labels)
    x = np.asarray(features, dtype=np.float64)
    post_means = encode(model, x).mean
    index = {sid: i for i, sid in enumerate(ids)}
    out = {}
    for c, (mu, correct_ids) in means.items():
        rows = [index[s] for s in correct_ids]
        dists = np.sqrt(
            kernels.pairwise_sq_dists(post_means[rows], mu[None, :])
        ).ravel()
        try:
            k, lam = fit_weibull(dists, tail_fraction)
        except DegenerateStatsError:
            continue  # class with too few spread-out correct samples
        n_tail = int(np.ceil(tail_fraction * len(dists)))
        out[c] = WeibullClassModel(
            class_index=c,
            latent_mean=mu,
            shape=k,
            scale=lam,
            tail_size=n_tail,
            n_correct=len(correct_ids),
        )
    if not out:
        raise DegenerateStatsError("no class could be fitted")
    return out


def outlier_probabilities(
    z: np.ndarray, models: dict[int, WeibullClassModel]
) -> np.ndarray:
    """Min-over-classes Weibull CDF of latent distances, for a [N, z] batch."""
    if not models:
        raise DegenerateStatsError("no class models")
    z = np.asarray(z, dtype=np.float64)
    mus = np.stack([m.latent_mean for m in models.values()])
    shapes = np.array([m.shape for m in models.values()])
    scales = np.array([m.scale for m in models.values()])
    d = np.sqrt(kernels.pairwise_sq_dists(np.ascontiguousarray(z), mus))
    cdf = 1.0 - np.exp(-np.power(d / scales[None, :], shapes[None, :]))
    return cdf.min(axis=1)


def outlier_probability(z: np.ndarray, models: dict[int, WeibullClassModel]) -> float:
    """Probability that one latent vector belongs to no known class."""
    z = np.asarray(z, dtype=np.float64)
    return float(outlier_probabilities(z[None, :], models)[0])


def select_weibull(
    model: VnnModel,
    unlabeled_ids,
    unlabeled_features,
    labeled_ids,
    labeled_features,
    labeled_labels,
    b: int,
    tail_fraction: float = TAIL_FRACTION_DEFAULT,
    reject_threshold: float = REJECT_THRESHOLD_DEFAULT,
) -> SelectionResult:
    """Open-set selection: reject likely-foreign records, then take the b
    most novel of the remainder (highest outlier probability first)."""
    unlabeled_ids = list(unlabeled_ids)
    if not unlabeled_ids:
        raise EmptyPoolError("no unlabeled records to score")
    class_models = fit_class_models(
        model, labeled_ids, labeled_features, labeled_labels, tail_fraction
    )
    z = encode(model, np.asarray(unlabeled_features, dtype=np.float64)).mean
    probs = outlier_probabilities(z, class_models)
    scores = dict(zip(unlabeled_ids, probs.tolist()))

    if reject_threshold >= 1.0:  # threshold disabled
        rejected = []
        cand_ids = unlabeled_ids
        cand_probs = probs
    else:
        keep = probs < reject_threshold
        rejected = list(compress(unlabeled_ids, ~keep))
        cand_ids = list(compress(unlabeled_ids, keep))
        cand_probs = probs[keep]
    # highest outlier probability first, ties broken by ascending id
    selected = _take_smallest(-cand_probs, cand_ids, b)
    return SelectionResult(
        selected_ids=tuple(selected),
        scores=scores,
        rejected_ood_ids=tuple(rejected),
        shortfall=max(0, b - len(selected)),
    )


# ---------------------------------------------------------------------------
# random baseline
# ---------------------------------------------------------------------------

def random_select(unlabeled_ids, b: int, seed) -> SelectionResult:
    """Uniform draw without replacement, reproducible per seed."""
    ids = list(unlabeled_ids)
    if b < 0 or b > len(ids):
        raise BudgetError(f"budget {b} outside [0, {len(ids)}]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    picks = rng.choice(len(ids), size=b, replace=False)
    return SelectionResult(selected_ids=tuple(ids[i] for i in picks))


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

SELECTION_CSV_COLUMNS = ["stage", "sample_id", "strategy", "score", "selected", "rejected_ood"]


def append_selection_csv(path, stage: int, strategy: str, result: SelectionResult):
    """Append one row per scored (or selected) id; writes the header once."""
    path = Path(path)
    new_file = not path.exists()
    row_ids = list(result.scores) if result.scores else list(result.selected_ids)
    selected = set(result.selected_ids)
    rejected = set(result.rejected_ood_ids)
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(SELECTION_CSV_COLUMNS)
        for sid in row_ids:
            score = result.scores.get(sid, "")
            writer.writerow(
                [
                    stage,
                    sid,
                    strategy,
                    repr(score) if score != "" else "",
                    int(sid in selected),
                    int(sid in rejected),
                ]
            )
