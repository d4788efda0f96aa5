"""Confidence intervals for any metric by resampling images with replacement.

Each round draws N images (with replacement) from the N evaluated images and
recomputes the metric from precomputed per-image results; the interval is
obtained by discarding the lower and upper alpha fraction of the sorted round
values (linear-interpolation quantiles, so the interval always lies within
the observed range). The generator is NumPy's PCG64, which is seedable and
produces identical streams across platforms, making every interval
reproducible from its seed.

For mean-over-images metrics resampling is a weighted mean. For mAP the
greedy matching is image-local, so a cached (score, flag, truth-count) table
per category suffices: an image drawn m times contributes its detections and
its truth instances m times, exactly as if it were physically duplicated.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .detection import CategoryCache, DetectionCache

_EXACT_ENUMERATION_CAP = 2_000_000


@dataclass(frozen=True)
class BootstrapConfig:
    rounds: int = 20000
    alpha: float = 0.0005  # tail fraction per side; 0.0005 -> 99.9% interval
    seed: int = 0
    convergence_tol: float = 1e-4

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must be in (0, 0.5)")


@dataclass(frozen=True)
class ConfidenceInterval:
    point: float
    lower: float
    upper: float
    rounds_used: int

    def __post_init__(self) -> None:
        if not self.lower <= self.upper:
            raise ValueError("lower endpoint above upper endpoint")

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "lower": self.lower,
            "upper": self.upper,
            "rounds_used": self.rounds_used,
        }


def _quantiles(values: np.ndarray, alpha: float) -> tuple[float, float]:
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha], method="linear")
    return float(lo), float(hi)


def _score_vector(per_image_scores: Mapping[str, float] | Sequence[float]) -> np.ndarray:
    if isinstance(per_image_scores, Mapping):
        if not per_image_scores:
            raise ValueError("empty score table")
        values = [float(per_image_scores[k]) for k in sorted(per_image_scores)]
    else:
        if len(per_image_scores) == 0:
            raise ValueError("empty score table")
        values = [float(v) for v in per_image_scores]
    return np.asarray(values, dtype=np.float64)


def bootstrap_mean_metric(
    per_image_scores: Mapping[str, float] | Sequence[float],
    cfg: BootstrapConfig,
    exact: bool = False,
) -> ConfidenceInterval:
    """Interval for a metric that is the mean of precomputed per-image scores.

    With `exact=True` every one of the N^N equally likely resamples is
    enumerated instead of sampling rounds; only feasible for tiny N but then
    the interval is the exact quantile of the resampling distribution.
    """
    scores = _score_vector(per_image_scores)
    n = scores.size
    point = float(scores.mean())
    if exact:
        total = n**n
        if total > _EXACT_ENUMERATION_CAP:
            raise ValueError(
                f"exact enumeration infeasible: {n}^{n} resamples exceeds cap"
            )
        means = np.fromiter(
            (scores[list(draw)].mean() for draw in itertools.product(range(n), repeat=n)),
            dtype=np.float64,
            count=total,
        )
        lo, hi = _quantiles(means, cfg.alpha)
        return ConfidenceInterval(point=point, lower=lo, upper=hi, rounds_used=total)

    rng = np.random.default_rng(cfg.seed)
    means = np.empty(cfg.rounds, dtype=np.float64)
    chunk = max(1, min(cfg.rounds, 2_000_000 // max(1, n)))
    done = 0
    while done < cfg.rounds:
        take = min(chunk, cfg.rounds - done)
        draws = rng.integers(0, n, size=(take, n))
        means[done : done + take] = scores[draws].mean(axis=1)
        done += take
    lo, hi = _quantiles(means, cfg.alpha)
    return ConfidenceInterval(point=point, lower=lo, upper=hi, rounds_used=cfg.rounds)


# ---------------------------------------------------------------------------
# mAP bootstrap from the detection cache
# ---------------------------------------------------------------------------


def _tie_boundaries(scores: np.ndarray) -> np.ndarray:
    if scores.size == 0:
        return np.empty(0, dtype=np.int64)
    return np.nonzero(np.append(scores[1:] != scores[:-1], True))[0]


def _weighted_ap(
    cc: CategoryCache, boundaries: np.ndarray, counts: np.ndarray
) -> float | None:
    """AP for one category under per-image multiplicities; None if no truth left."""
    if cc.truth_image.size == 0:
        return None
    n_truth = float(counts[cc.truth_image] @ cc.truth_count)
    if n_truth == 0.0:
        return None
    if cc.det_score.size == 0:
        return 0.0
    w = counts[cc.det_image].astype(np.float64)
    tp = np.cumsum(w * cc.det_z)[boundaries]
    det = np.cumsum(w)[boundaries]
    keep = det > 0
    if not keep.any():
        return 0.0
    recall = tp[keep] / n_truth
    precision = tp[keep] / det[keep]
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev) * envelope))


def map_from_cache(cache: DetectionCache, counts: np.ndarray | None = None) -> float:
    """Mean AP over categories with remaining truth, under given multiplicities."""
    if counts is None:
        counts = np.ones(len(cache.image_ids), dtype=np.int64)
    aps = []
    for cat in sorted(cache.per_category):
        cc = cache.per_category[cat]
        ap = _weighted_ap(cc, _tie_boundaries(cc.det_score), counts)
        if ap is not None:
            aps.append(ap)
    if not aps:
        raise ValueError("no category has truth instances under these multiplicities")
    return float(np.mean(aps))


def bootstrap_map(cache: DetectionCache, cfg: BootstrapConfig) -> ConfidenceInterval:
    """Interval on mAP by image resampling over the cached matching results.

    Rounds in which every category loses all truth are dropped; if more than
    10% of rounds are dropped the dataset is too small to resample and an
    error is raised.
    """
    n = len(cache.image_ids)
    if n == 0:
        raise ValueError("cache covers no images")
    cats = sorted(cache.per_category)
    boundaries = {c: _tie_boundaries(cache.per_category[c].det_score) for c in cats}
    point = map_from_cache(cache)

    rng = np.random.default_rng(cfg.seed)
    maps: list[float] = []
    dropped = 0
    for _ in range(cfg.rounds):
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
        aps = []
        for c in cats:
            ap = _weighted_ap(cache.per_category[c], boundaries[c], counts)
            if ap is not None:
                aps.append(ap)
        if aps:
            maps.append(float(np.mean(aps)))
        else:
            dropped += 1
    if dropped > 0.1 * cfg.rounds:
        raise ValueError(
            f"{dropped}/{cfg.rounds} resampling rounds lost all truth instances"
        )
    values = np.asarray(maps, dtype=np.float64)
    lo, hi = _quantiles(values, cfg.alpha)
    return ConfidenceInterval(point=point, lower=lo, upper=hi, rounds_used=len(maps))


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------


def check_convergence(history: Sequence[ConfidenceInterval], tol: float) -> bool:
    """True when both interval endpoints moved less than `tol` at the last doubling."""
    if len(history) < 2:
        return False
    prev, last = history[-2], history[-1]
    return abs(last.lower - prev.lower) < tol and abs(last.upper - prev.upper) < tol


def bootstrap_until_converged(
    run: Callable[[BootstrapConfig], ConfidenceInterval],
    cfg: BootstrapConfig,
    max_doublings: int = 6,
) -> tuple[ConfidenceInterval, list[ConfidenceInterval]]:
    """Double the round count from cfg.rounds until the interval stabilizes."""
    history: list[ConfidenceInterval] = []
    rounds = cfg.rounds
    for _ in range(max_doublings + 1):
        ci = run(replace(cfg, rounds=rounds))
        history.append(ci)
        if check_convergence(history, cfg.convergence_tol):
            break
        rounds *= 2
    return history[-1], history
