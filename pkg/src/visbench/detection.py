"""Object-detection scoring: greedy matching, PR curves, AP/mAP, winner tallies.

Matching is greedy per (image, category): detections are visited in
descending confidence and each claims the still-unmatched truth box it
overlaps best, provided the overlap reaches that truth box's adaptive
threshold. The threshold is min(0.5, wh / ((w+10)(h+10))), which relaxes the
usual 0.5 for truth boxes smaller than roughly 25x25 pixels to tolerate ~5 px
of annotation slack per side, and is exactly 0.5 at 25x25 and above.

PR aggregation is global per category across images; average precision is the
area under the precision envelope over all achieved recall levels (all-points
interpolation, no 11-point sampling). A team wins a category by having the
highest AP on it (ties credit every tied team); the challenge winner is the
team winning the most categories, with mAP reported alongside.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BoundingBox, ScoredBox, iou
from .ingest import DetectionSubmission, GroundTruthStore


def adaptive_iou_threshold(box: BoundingBox) -> float:
    """Per-truth-box overlap threshold in (0, 0.5], loosened for small boxes."""
    w = box.width
    h = box.height
    return min(0.5, (w * h) / ((w + 10.0) * (h + 10.0)))


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome for one (image, category) group.

    Entries are in descending-score order (stable for ties). `z[i]` is 1 when
    detection i claimed a truth box, `matched[i]` is that truth box's index or
    None, and `input_order[i]` is the detection's position in the submission.
    """

    scores: tuple[float, ...]
    z: tuple[int, ...]
    matched: tuple[int | None, ...]
    truth_count: int
    input_order: tuple[int, ...]


def match_detections(
    detections: Sequence[ScoredBox], truths: Sequence[BoundingBox]
) -> MatchResult:
    """Greedily assign detections to truth boxes for one image and category.

    Ties in confidence keep submission order; ties in overlap go to the
    lowest truth index. Each truth box is claimed at most once, so a
    duplicate detection of an already-claimed instance is a false positive.
    """
    order = sorted(range(len(detections)), key=lambda j: -detections[j].score)
    thresholds = [adaptive_iou_threshold(t) for t in truths]
    unmatched = list(range(len(truths)))
    scores: list[float] = []
    z: list[int] = []
    matched: list[int | None] = []
    for j in order:
        det = detections[j]
        best_k: int | None = None
        best_overlap = -1.0
        for k in unmatched:
            overlap = iou(truths[k], det.box)
            if overlap >= thresholds[k] and overlap > best_overlap:
                best_overlap = overlap
                best_k = k
        scores.append(det.score)
        if best_k is not None:
            unmatched.remove(best_k)
            z.append(1)
            matched.append(best_k)
        else:
            z.append(0)
            matched.append(None)
    return MatchResult(
        scores=tuple(scores),
        z=tuple(z),
        matched=tuple(matched),
        truth_count=len(truths),
        input_order=tuple(order),
    )


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    recall: float
    precision: float


@dataclass(frozen=True)
class PRCurve:
    points: tuple[PRPoint, ...]
    total_truth: int


def pr_curve(results: Iterable[MatchResult]) -> PRCurve:
    """Precision/recall swept over the distinct confidence values, descending.

    Pools the matched flags of one category across all images. Raises
    ValueError when the category has no truth instances anywhere (such
    categories are excluded from mAP upstream).
    """
    scores: list[float] = []
    flags: list[int] = []
    total_truth = 0
    for r in results:
        scores.extend(r.scores)
        flags.extend(r.z)
        total_truth += r.truth_count
    if total_truth == 0:
        raise ValueError("category has no truth instances; cannot form a PR curve")
    if not scores:
        return PRCurve(points=(), total_truth=total_truth)
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(flags, dtype=np.float64)
    desc = np.argsort(-s, kind="stable")
    s = s[desc]
    y = y[desc]
    tp = np.cumsum(y)
    det = np.arange(1, len(s) + 1, dtype=np.float64)
    # one point per distinct threshold: the last index of each tie group
    boundary = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    points = tuple(
        PRPoint(
            threshold=float(s[b]),
            recall=float(tp[b] / total_truth),
            precision=float(tp[b] / det[b]),
        )
        for b in boundary
    )
    return PRCurve(points=points, total_truth=total_truth)


def average_precision(curve: PRCurve) -> float:
    """Area under the precision envelope across recall steps, in [0, 1]."""
    if not curve.points:
        return 0.0
    recalls = np.array([p.recall for p in curve.points])
    precisions = np.array([p.precision for p in curve.points])
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    prev = np.concatenate(([0.0], recalls[:-1]))
    return float(np.sum((recalls - prev) * envelope))


# ---------------------------------------------------------------------------
# Whole-dataset evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CategoryCache:
    """Per-category flat arrays for resampling: detections sorted by score.

    det_image (int indices into the image universe), det_z, det_score are
    aligned; truth_image/truth_count give instance counts per image.
    """

    det_image: np.ndarray
    det_score: np.ndarray
    det_z: np.ndarray
    truth_image: np.ndarray
    truth_count: np.ndarray

    def to_dict(self) -> dict:
        return {
            "det_image": self.det_image.tolist(),
            "det_score": self.det_score.tolist(),
            "det_z": self.det_z.tolist(),
            "truth_image": self.truth_image.tolist(),
            "truth_count": self.truth_count.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CategoryCache":
        return cls(
            det_image=np.asarray(d["det_image"], dtype=np.int64),
            det_score=np.asarray(d["det_score"], dtype=np.float64),
            det_z=np.asarray(d["det_z"], dtype=np.float64),
            truth_image=np.asarray(d["truth_image"], dtype=np.int64),
            truth_count=np.asarray(d["truth_count"], dtype=np.float64),
        )


@dataclass(frozen=True)
class DetectionCache:
    """Everything needed to re-score under image resampling without rematching."""

    image_ids: tuple[str, ...]
    per_category: dict[str, CategoryCache]

    def to_dict(self) -> dict:
        return {
            "image_ids": list(self.image_ids),
            "per_category": {c: cc.to_dict() for c, cc in sorted(self.per_category.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionCache":
        return cls(
            image_ids=tuple(d["image_ids"]),
            per_category={
                c: CategoryCache.from_dict(cc) for c, cc in d["per_category"].items()
            },
        )


@dataclass(frozen=True)
class DetectionReport:
    team: str
    ap_per_category: dict[str, float]
    mean_ap: float
    zero_truth_categories: tuple[str, ...]
    curves: dict[str, PRCurve] | None = None
    cache: DetectionCache | None = None
    task: str = field(default="detection", init=False)

    def to_dict(self) -> dict:
        out = {
            "task": self.task,
            "team": self.team,
            "map": self.mean_ap,
            "ap_per_category": dict(sorted(self.ap_per_category.items())),
            "zero_truth_categories": sorted(self.zero_truth_categories),
        }
        if self.curves is not None:
            out["curves"] = {
                c: {
                    "total_truth": curve.total_truth,
                    "points": [
                        [p.threshold, p.recall, p.precision] for p in curve.points
                    ],
                }
                for c, curve in sorted(self.curves.items())
            }
        if self.cache is not None:
            out["cache"] = self.cache.to_dict()
        return out


def evaluate_detection(
    truth: GroundTruthStore,
    sub: DetectionSubmission,
    include_curves: bool = False,
    include_cache: bool = True,
    threads: int = 1,
) -> DetectionReport:
    """Match, pool and integrate a detection submission over every category.

    Detections on blacklisted images or (image, category) pairs are ignored
    and their truth instances removed from the denominators. Categories with
    zero remaining truth are excluded from the mean and listed separately.
    """
    image_ids = tuple(truth.image_order())
    image_index = {img: i for i, img in enumerate(image_ids)}

    def blacklisted(img: str, cat: str) -> bool:
        return img in truth.blacklisted_images or (img, cat) in truth.blacklisted_pairs

    truth_by_category: dict[str, dict[str, tuple[BoundingBox, ...]]] = {}
    for (img, cat), boxes in truth.boxes.items():
        if blacklisted(img, cat):
            continue
        truth_by_category.setdefault(cat, {})[img] = boxes

    # group submitted detections by category, keeping submission order
    det_by_category: dict[str, list[tuple[str, tuple[ScoredBox, ...]]]] = {}
    for (img, cat), dets in sub.detections.items():
        if cat not in truth.categories:
            raise ValueError(f"submission references unknown category {cat!r}")
        if img not in image_index:
            raise ValueError(f"submission references unknown image {img!r}")
        if blacklisted(img, cat):
            continue
        det_by_category.setdefault(cat, []).append((img, dets))

    def score_category(cat: str):
        truths = truth_by_category.get(cat, {})
        entries = sorted(det_by_category.get(cat, []), key=lambda e: e[0])
        results: list[tuple[str, MatchResult]] = []
        matched_imgs = set()
        for img, dets in entries:
            results.append((img, match_detections(dets, truths.get(img, ()))))
            matched_imgs.add(img)
        # images with truth but no detections still contribute to N
        extra_truth = sum(
            len(boxes) for img, boxes in truths.items() if img not in matched_imgs
        )
        total_truth = extra_truth + sum(r.truth_count for _, r in results)
        if total_truth == 0:
            return cat, None, None, _empty_cache()
        padded = [r for _, r in results]
        if extra_truth:
            padded.append(
                MatchResult(scores=(), z=(), matched=(), truth_count=extra_truth, input_order=())
            )
        curve = pr_curve(padded)
        ap = average_precision(curve)
        cache = _category_cache(results, truths, image_index)
        return cat, ap, curve, cache

    categories = sorted(truth.categories)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(score_category, categories))
    else:
        scored = [score_category(c) for c in categories]

    ap_per_category: dict[str, float] = {}
    curves: dict[str, PRCurve] = {}
    caches: dict[str, CategoryCache] = {}
    zero_truth: list[str] = []
    for cat, ap, curve, cache in scored:
        caches[cat] = cache
        if ap is None:
            zero_truth.append(cat)
            continue
        ap_per_category[cat] = ap
        if curve is not None:
            curves[cat] = curve
    if not ap_per_category:
        raise ValueError("no category has truth instances; nothing to evaluate")
    mean_ap = sum(ap_per_category.values()) / len(ap_per_category)
    return DetectionReport(
        team=sub.team,
        ap_per_category=ap_per_category,
        mean_ap=mean_ap,
        zero_truth_categories=tuple(sorted(zero_truth)),
        curves=curves if include_curves else None,
        cache=DetectionCache(image_ids=image_ids, per_category=caches)
        if include_cache
        else None,
    )


def _empty_cache() -> CategoryCache:
    return CategoryCache(
        det_image=np.empty(0, dtype=np.int64),
        det_score=np.empty(0, dtype=np.float64),
        det_z=np.empty(0, dtype=np.float64),
        truth_image=np.empty(0, dtype=np.int64),
        truth_count=np.empty(0, dtype=np.float64),
    )


def _category_cache(
    results: list[tuple[str, MatchResult]],
    truths: Mapping[str, tuple[BoundingBox, ...]],
    image_index: Mapping[str, int],
) -> CategoryCache:
    det_image: list[int] = []
    det_score: list[float] = []
    det_z: list[int] = []
    for img, r in results:
        idx = image_index[img]
        det_image.extend([idx] * len(r.scores))
        det_score.extend(r.scores)
        det_z.extend(r.z)
    score_arr = np.asarray(det_score, dtype=np.float64)
    order = np.argsort(-score_arr, kind="stable")
    truth_items = sorted((image_index[img], len(boxes)) for img, boxes in truths.items())
    return CategoryCache(
        det_image=np.asarray(det_image, dtype=np.int64)[order],
        det_score=score_arr[order],
        det_z=np.asarray(det_z, dtype=np.float64)[order],
        truth_image=np.asarray([i for i, _ in truth_items], dtype=np.int64),
        truth_count=np.asarray([n for _, n in truth_items], dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# Multi-team ranking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankResult:
    winners_per_category: dict[str, tuple[str, ...]]
    wins_per_team: dict[str, int]
    # teams ordered by the winner rule: categories won, then mAP
    ranking: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "winners_per_category": {
                c: list(w) for c, w in sorted(self.winners_per_category.items())
            },
            "wins_per_team": dict(sorted(self.wins_per_team.items())),
            "ranking": list(self.ranking),
        }


def rank_teams(reports: Mapping[str, DetectionReport]) -> RankResult:
    """Tally per-category winners across teams evaluated on the same truth.

    Ties on a category credit every tied team. Teams are ranked by categories
    won, breaking ties by mAP, then name.
    """
    if not reports:
        raise ValueError("no reports to rank")
    category_sets = [set(r.ap_per_category) for r in reports.values()]
    common = set.intersection(*category_sets)
    if not common:
        raise ValueError("reports share no categories; were they scored on the same truth?")
    winners: dict[str, tuple[str, ...]] = {}
    wins = {team: 0 for team in reports}
    for cat in sorted(common):
        best = max(r.ap_per_category[cat] for r in reports.values())
        tied = tuple(
            sorted(t for t, r in reports.items() if r.ap_per_category[cat] == best)
        )
        winners[cat] = tied
        for t in tied:
            wins[t] += 1
    ranking = tuple(
        sorted(reports, key=lambda t: (-wins[t], -reports[t].mean_ap, t))
    )
    return RankResult(winners_per_category=winners, wins_per_team=wins, ranking=ranking)
