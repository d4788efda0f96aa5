"""Independent reference implementations used to check the library.

Everything in here is written directly from first principles (naive
enumeration, double loops, literal pseudocode transcription) and must stay
independent of the code paths it checks.
"""
from __future__ import annotations

import itertools
from typing import Mapping, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def iou_ref(a, b) -> float:
    """(xmin, ymin, xmax, ymax) tuples; half-open coordinates, no +1."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def thr_ref(truth_box) -> float:
    w = truth_box[2] - truth_box[0]
    h = truth_box[3] - truth_box[1]
    return min(0.5, (w * h) / ((w + 10.0) * (h + 10.0)))


# ---------------------------------------------------------------------------
# Greedy matching: line-by-line transcription of the published pseudocode
# ---------------------------------------------------------------------------


def match_ref(detections: Sequence[tuple[tuple, float]], truths: Sequence[tuple]):
    """detections: [(box, score)]; truths: [box]; boxes are 4-tuples.

    Returns (scores, z, matched) in descending-score order, stable for ties,
    with overlap ties going to the lowest truth index.
    """
    order = sorted(range(len(detections)), key=lambda j: -detections[j][1])
    unmatched = set(range(len(truths)))
    scores, z, matched = [], [], []
    for j in order:
        box, score = detections[j]
        candidates = [k for k in sorted(unmatched) if iou_ref(truths[k], box) >= thr_ref(truths[k])]
        scores.append(score)
        if candidates:
            best_k = candidates[0]
            best_v = iou_ref(truths[best_k], box)
            for k in candidates[1:]:
                v = iou_ref(truths[k], box)
                if v > best_v:
                    best_k, best_v = k, v
            unmatched.remove(best_k)
            z.append(1)
            matched.append(best_k)
        else:
            z.append(0)
            matched.append(None)
    return tuple(scores), tuple(z), tuple(matched)


# ---------------------------------------------------------------------------
# Average precision: brute-force precision-envelope integration
# ---------------------------------------------------------------------------


def ap_ref(points: Sequence[tuple[float, float]]) -> float:
    """points: (recall, precision) pairs. Integrates max precision at
    recall >= r over each distinct recall step, starting from recall 0."""
    if not points:
        return 0.0
    levels = sorted({r for r, _ in points})
    ap = 0.0
    prev = 0.0
    for r in levels:
        envelope = max(p for r2, p in points if r2 >= r)
        ap += (r - prev) * envelope
        prev = r
    return ap


def pr_points_ref(scored_flags: Sequence[tuple[float, int]], total_truth: int):
    """(score, z) pairs pooled over images -> (recall, precision) per distinct
    score, sweeping thresholds descending."""
    thresholds = sorted({s for s, _ in scored_flags}, reverse=True)
    points = []
    for t in thresholds:
        selected = [(s, z) for s, z in scored_flags if s >= t]
        tp = sum(z for _, z in selected)
        points.append((tp / total_truth, tp / len(selected)))
    return points


# ---------------------------------------------------------------------------
# DAG heights / minimum-height common ancestors by enumeration
# ---------------------------------------------------------------------------


def heights_ref(edges: Sequence[tuple[str, str]], nodes: Sequence[str]) -> dict[str, int]:
    children: dict[str, list[str]] = {n: [] for n in nodes}
    for p, c in edges:
        children[p].append(c)

    memo: dict[str, int] = {}

    def height(n: str) -> int:
        if n not in memo:
            memo[n] = 0 if not children[n] else 1 + max(height(c) for c in children[n])
        return memo[n]

    return {n: height(n) for n in nodes}


def ancestors_ref(edges: Sequence[tuple[str, str]], node: str) -> set[str]:
    parents: dict[str, list[str]] = {}
    for p, c in edges:
        parents.setdefault(c, []).append(p)
    out = {node}
    frontier = [node]
    while frontier:
        n = frontier.pop()
        for p in parents.get(n, []):
            if p not in out:
                out.add(p)
                frontier.append(p)
    return out


def lca_cost_ref(edges: Sequence[tuple[str, str]], nodes: Sequence[str], a: str, b: str):
    common = ancestors_ref(edges, a) & ancestors_ref(edges, b)
    if not common:
        return None
    heights = heights_ref(edges, nodes)
    return min(heights[n] for n in common)


# ---------------------------------------------------------------------------
# Chance localization by double loop
# ---------------------------------------------------------------------------


def cpl_ref(instances: Sequence[tuple[tuple, tuple[int, int]]]) -> float:
    """instances: [(box, (width, height))] -> fraction of ordered pairs whose
    unit-square-normalized boxes overlap with IOU >= 0.5."""
    normalized = []
    for (x0, y0, x1, y1), (w, h) in instances:
        normalized.append((x0 / w, y0 / h, x1 / w, y1 / h))
    n = len(normalized)
    hits = 0
    for i in range(n):
        for j in range(n):
            if i != j and iou_ref(normalized[i], normalized[j]) >= 0.5:
                hits += 1
    return hits / (n * (n - 1))


# ---------------------------------------------------------------------------
# Exhaustive bootstrap enumeration
# ---------------------------------------------------------------------------


def exhaustive_bootstrap_ci(scores: Sequence[float], alpha: float):
    """All n^n equally likely with-replacement resamples, linear quantiles."""
    arr = np.asarray(scores, dtype=np.float64)
    n = arr.size
    means = [
        arr[list(draw)].mean() for draw in itertools.product(range(n), repeat=n)
    ]
    lo, hi = np.quantile(np.asarray(means), [alpha, 1.0 - alpha], method="linear")
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Exhaustive per-leaf annotation
# ---------------------------------------------------------------------------


def exhaustive_leaf_labels(
    leaf_bindings: Mapping[str, str], positives: set[str]
) -> dict[str, str]:
    """Ask every bound leaf question directly."""
    return {
        q: ("yes" if cat in positives else "no") for q, cat in leaf_bindings.items()
    }
