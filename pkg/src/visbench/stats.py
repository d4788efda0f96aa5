"""Dataset-difficulty metrics and per-class analysis.

Per-category descriptors:

* average scale: mean fraction of image area occupied by an instance;
* instances per positive image and neighbors per instance (same-category
  instances whose boxes overlap; the adjacency gap is configurable, 0 by
  default meaning strictly positive intersection area);
* chance localization: the expected hit rate of reusing one instance's box
  as the proposed window for every other instance of the class, after
  rescaling every image to the unit square, i.e.
  sum over ordered pairs i != j of [IOU(B_i, B_j) >= 0.5] / (N(N-1));
* clutter: log2 of the mean, over a class's images, of the rank of the
  first class-generic objectness window that overlaps a truth instance with
  IOU >= 0.5; images not localized within the 1000 ranked windows count as
  1001.

Also here: best-of-any-entry per-class summaries, the scale/accuracy Pearson
correlation, and the scale-normalized property-bin machinery (greedily
discard the largest-scale class from the currently largest-mean bin until all
bin mean scales agree, then bootstrap the bins at the class level).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .bootstrap import BootstrapConfig
from .geometry import BoundingBox, ImageRef, box_area_fraction, intersection_area, iou, normalized_box
from .ingest import GroundTruthStore

DEFAULT_MIN_BIN_SIZE = 5

# canonical bin orders for averaging ordinal bins onto merged categories
PROPERTY_BIN_ORDER: dict[str, tuple[str, ...]] = {
    "real_world_size": ("XS", "S", "M", "L", "XL"),
    "deformability": ("rigid", "deformable"),
    "texture": ("none", "low", "medium", "high"),
    "natural_man_made": ("natural", "man-made"),
}


@dataclass(frozen=True)
class ClassStats:
    category: str
    avg_scale: float
    instances_per_positive_image: float
    neighbors_per_instance: float
    cpl: float | None
    clutter: float | None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "avg_scale": self.avg_scale,
            "instances_per_positive_image": self.instances_per_positive_image,
            "neighbors_per_instance": self.neighbors_per_instance,
            "cpl": self.cpl,
            "clutter": self.clutter,
            "flags": list(self.flags),
        }


def _dilated_overlap(a: BoundingBox, b: BoundingBox, gap: float) -> bool:
    if gap > 0:
        a = BoundingBox(a.xmin - gap, a.ymin - gap, a.xmax + gap, a.ymax + gap)
        b = BoundingBox(b.xmin - gap, b.ymin - gap, b.xmax + gap, b.ymax + gap)
    return intersection_area(a, b) > 0.0


def class_scale_and_instances(
    instances_by_image: Mapping[str, Sequence[BoundingBox]],
    images: Mapping[str, ImageRef],
    gap: float = 0.0,
) -> tuple[float, float, float]:
    """(avg scale, instances per positive image, neighbors per instance).

    Only images with at least one instance participate. Two instances are
    neighbors when their boxes, dilated by `gap` on each side, overlap with
    positive area.
    """
    scales: list[float] = []
    counts: list[int] = []
    neighbor_counts: list[int] = []
    for image_id, boxes in instances_by_image.items():
        if not boxes:
            continue
        image = images[image_id]
        counts.append(len(boxes))
        for i, box in enumerate(boxes):
            scales.append(box_area_fraction(box, image))
            neighbor_counts.append(
                sum(
                    1
                    for j, other in enumerate(boxes)
                    if j != i and _dilated_overlap(box, other, gap)
                )
            )
    if not counts:
        raise ValueError("category has no instances")
    return (
        float(np.mean(scales)),
        float(np.mean(counts)),
        float(np.mean(neighbor_counts)),
    )


def chance_localization(instances: Sequence[tuple[BoundingBox, ImageRef]]) -> float:
    """Fraction of ordered instance pairs whose unit-square boxes overlap >= 0.5."""
    n = len(instances)
    if n < 2:
        raise ValueError("chance localization needs at least 2 instances")
    normalized = [normalized_box(box, image) for box, image in instances]
    hits = 0
    for i in range(n):
        for j in range(n):
            if i != j and iou(normalized[i], normalized[j]) >= 0.5:
                hits += 1
    return hits / (n * (n - 1))


def clutter(
    windows_by_image: Mapping[str, Sequence[tuple[int, BoundingBox]]],
    truth_by_image: Mapping[str, Sequence[BoundingBox]],
    miss_rank: int = 1001,
) -> tuple[float, tuple[str, ...]]:
    """log2 of the mean first-localizing window rank over a class's images.

    For each positive image the cost is the smallest window rank whose box
    overlaps some truth instance with IOU >= 0.5, or `miss_rank` when no
    provided window does. Images with no windows at all are charged
    `miss_rank` and flagged.
    """
    if not truth_by_image:
        raise ValueError("clutter needs at least one positive image")
    flags: list[str] = []
    ranks: list[int] = []
    for image_id in sorted(truth_by_image):
        boxes = truth_by_image[image_id]
        windows = windows_by_image.get(image_id, ())
        if not windows:
            flags.append(f"no windows for image {image_id}")
            ranks.append(miss_rank)
            continue
        found = miss_rank
        for rank, window in windows:
            if any(iou(window, b) >= 0.5 for b in boxes):
                found = rank
                break
        ranks.append(found)
    return math.log2(sum(ranks) / len(ranks)), tuple(flags)


def compute_class_stats(
    store: GroundTruthStore,
    windows: Mapping[str, Sequence[tuple[int, BoundingBox]]] | None = None,
    gap: float = 0.0,
) -> dict[str, ClassStats]:
    """Assemble every per-category descriptor available from a truth store."""
    by_category: dict[str, dict[str, list[BoundingBox]]] = {}
    for (image_id, category), boxes in store.boxes.items():
        by_category.setdefault(category, {}).setdefault(image_id, []).extend(boxes)
    out: dict[str, ClassStats] = {}
    for category in sorted(store.categories):
        per_image = by_category.get(category)
        if not per_image:
            out[category] = ClassStats(
                category, 0.0, 0.0, 0.0, None, None, flags=("no instances",)
            )
            continue
        flags: list[str] = []
        avg_scale, instances_ppi, neighbors = class_scale_and_instances(
            per_image, store.images, gap=gap
        )
        flat = [
            (box, store.images[image_id])
            for image_id, boxes in sorted(per_image.items())
            for box in boxes
        ]
        if len(flat) >= 2:
            cpl_value: float | None = chance_localization(flat)
        else:
            cpl_value = None
            flags.append("cpl undefined: fewer than 2 instances")
        clutter_value: float | None = None
        if windows is not None:
            clutter_value, clutter_flags = clutter(windows, per_image)
            flags.extend(clutter_flags)
        out[category] = ClassStats(
            category=category,
            avg_scale=avg_scale,
            instances_per_positive_image=instances_ppi,
            neighbors_per_instance=neighbors,
            cpl=cpl_value,
            clutter=clutter_value,
            flags=tuple(flags),
        )
    return out


# ---------------------------------------------------------------------------
# Per-class score summaries
# ---------------------------------------------------------------------------


def optimistic_per_class(entries: Sequence[Mapping[str, float]]) -> dict[str, float]:
    """Best score any entry achieved on each category."""
    if not entries:
        raise ValueError("need at least one entry")
    out: dict[str, float] = {}
    for entry in entries:
        for category, score in entry.items():
            if category not in out or score > out[category]:
                out[category] = float(score)
    return out


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Plain Pearson correlation; rejects degenerate inputs."""
    if len(xs) != len(ys):
        raise ValueError("length mismatch")
    if len(xs) < 3:
        raise ValueError("need at least 3 pairs")
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        raise ValueError("zero variance in one of the variables")
    return float(xc @ yc) / denom


def scale_accuracy_correlation(
    stats: Mapping[str, ClassStats], scores: Mapping[str, float]
) -> float:
    """Pearson correlation between average object scale and per-class score."""
    cats = sorted(set(stats) & set(scores))
    xs = [stats[c].avg_scale for c in cats]
    ys = [scores[c] for c in cats]
    return pearson(xs, ys)


def average_descendant_bins(
    descendants: Mapping[str, Sequence[str]],
    class_bins: Mapping[str, str],
    order: Sequence[str],
) -> dict[str, str]:
    """Assign a merged category the mean of its descendants' ordinal bins.

    The mean bin index is rounded half-up onto the given bin order.
    """
    index = {label: i for i, label in enumerate(order)}
    out: dict[str, str] = {}
    for category, kids in descendants.items():
        idxs = []
        for kid in kids:
            if kid not in class_bins:
                raise KeyError(f"no bin annotation for descendant {kid!r}")
            idxs.append(index[class_bins[kid]])
        if not idxs:
            raise ValueError(f"category {category!r} has no annotated descendants")
        mean_idx = sum(idxs) / len(idxs)
        out[category] = order[min(len(order) - 1, math.floor(mean_idx + 0.5))]
    return out


# ---------------------------------------------------------------------------
# Scale-normalized property bins
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaleNormalization:
    """Result of equalizing bin mean scales by greedy discarding."""

    retained: dict[str, tuple[str, ...]]
    discarded: tuple[tuple[str, str], ...]  # (bin, category) in discard order
    dropped_bins: tuple[str, ...]  # emptied or below the minimum size
    mean_scale: dict[str, float]  # per surviving bin
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "retained": {b: list(v) for b, v in sorted(self.retained.items())},
            "discarded": [list(d) for d in self.discarded],
            "dropped_bins": list(self.dropped_bins),
            "mean_scale": dict(sorted(self.mean_scale.items())),
            "tolerance": self.tolerance,
        }


def _normalize_items(
    items_by_bin: dict[str, list[tuple[str, float]]],
    tol: float,
    min_bin_size: int,
) -> tuple[dict[str, list[tuple[str, float]]], list[tuple[str, str]], list[str]]:
    """Greedy core over (category, scale) items; duplicates are distinct items."""
    active = {b: list(items) for b, items in items_by_bin.items() if items}
    emptied = [b for b, items in items_by_bin.items() if not items]
    discarded: list[tuple[str, str]] = []

    def means() -> dict[str, float]:
        return {b: sum(s for _, s in items) / len(items) for b, items in active.items()}

    while len(active) > 1:
        m = means()
        high_bin = max(m, key=lambda b: (m[b], b))
        low = min(m.values())
        if m[high_bin] - low <= tol:
            break
        items = active[high_bin]
        victim = max(range(len(items)), key=lambda i: (items[i][1], items[i][0]))
        discarded.append((high_bin, items[victim][0]))
        items.pop(victim)
        if not items:
            del active[high_bin]
            emptied.append(high_bin)

    dropped = sorted(
        set(emptied) | {b for b, items in active.items() if len(items) < min_bin_size}
    )
    return active, discarded, dropped


def normalize_bins_by_scale(
    assignment: Mapping[str, str],
    scales: Mapping[str, float],
    tol: float,
    min_bin_size: int = DEFAULT_MIN_BIN_SIZE,
) -> ScaleNormalization:
    """Equalize the mean object scale across property bins.

    Repeatedly discards the largest-scale category from whichever bin
    currently has the highest mean scale until all remaining bin means agree
    within `tol`. A bin emptied along the way, or left with fewer than
    `min_bin_size` categories, is reported as dropped (its retained list is
    still returned for inspection).
    """
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    items_by_bin: dict[str, list[tuple[str, float]]] = {}
    for category in sorted(assignment):
        if category not in scales:
            raise KeyError(f"no scale for category {category!r}")
        items_by_bin.setdefault(assignment[category], []).append(
            (category, float(scales[category]))
        )
    active, discarded, dropped = _normalize_items(items_by_bin, tol, min_bin_size)
    retained = {b: tuple(c for c, _ in items) for b, items in active.items()}
    mean_scale = {
        b: sum(s for _, s in items) / len(items) for b, items in active.items()
    }
    return ScaleNormalization(
        retained=retained,
        discarded=tuple(discarded),
        dropped_bins=tuple(dropped),
        mean_scale=mean_scale,
        tolerance=tol,
    )


@dataclass(frozen=True)
class BinScore:
    bin: str
    point: float | None
    lower: float | None
    upper: float | None
    rounds_used: int
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "bin": self.bin,
            "point": self.point,
            "lower": self.lower,
            "upper": self.upper,
            "rounds_used": self.rounds_used,
            "flags": list(self.flags),
        }


def bin_score_ci(
    assignment: Mapping[str, str],
    scales: Mapping[str, float],
    scores: Mapping[str, float],
    tol: float,
    cfg: BootstrapConfig,
    min_bin_size: int = DEFAULT_MIN_BIN_SIZE,
) -> dict[str, BinScore]:
    """Mean score per scale-normalized bin, with class-level bootstrap intervals.

    Every round resamples each bin's assigned categories with replacement,
    re-runs the scale normalization jointly across bins, and averages the
    scores of the classes that survive. The interval endpoints are the alpha
    quantiles of those round means (use alpha=0.025 for a 95% interval).
    """
    for category in assignment:
        if category not in scores:
            raise KeyError(f"no score for category {category!r}")

    base = normalize_bins_by_scale(assignment, scales, tol, min_bin_size)
    bins = sorted({assignment[c] for c in assignment})
    members = {b: sorted(c for c in assignment if assignment[c] == b) for b in bins}

    point: dict[str, float | None] = {}
    for b in bins:
        kept = base.retained.get(b, ())
        point[b] = sum(scores[c] for c in kept) / len(kept) if kept else None

    rng = np.random.default_rng(cfg.seed)
    samples: dict[str, list[float]] = {b: [] for b in bins}
    for _ in range(cfg.rounds):
        items_by_bin: dict[str, list[tuple[str, float]]] = {}
        for b in bins:
            pool = members[b]
            draw = rng.integers(0, len(pool), size=len(pool))
            items_by_bin[b] = [(pool[i], float(scales[pool[i]])) for i in draw]
        active, _, _ = _normalize_items(items_by_bin, tol, min_bin_size)
        for b, items in active.items():
            if items:
                samples[b].append(sum(scores[c] for c, _ in items) / len(items))

    out: dict[str, BinScore] = {}
    for b in bins:
        flags: list[str] = []
        if b in base.dropped_bins:
            flags.append("dropped by scale normalization")
        if len(members[b]) == 1:
            flags.append("single-category bin: degenerate interval")
        values = samples[b]
        if not values or point[b] is None:
            out[b] = BinScore(b, point[b], None, None, len(values), tuple(flags))
            continue
        arr = np.asarray(values, dtype=np.float64)
        lo, hi = np.quantile(arr, [cfg.alpha, 1.0 - cfg.alpha], method="linear")
        if len(values) < cfg.rounds:
            flags.append(f"bin survived only {len(values)}/{cfg.rounds} rounds")
        out[b] = BinScore(b, point[b], float(lo), float(hi), len(values), tuple(flags))
    return out
