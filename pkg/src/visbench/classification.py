"""Image-classification scoring: flat top-k error and hierarchical error.

Each image carries a single truth label and a submission carries up to five
ranked guesses per image. The flat error charges an image 1 unless one of the
first k guesses matches; the aggregate is the fraction of charged images.
The hierarchical variant replaces the 0/1 charge with the minimum
common-ancestor cost between any of the k guesses and the truth label.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from .hierarchy import SynsetGraph
from .ingest import ClassificationSubmission, GroundTruthStore, MAX_PREDICTIONS_PER_IMAGE


@dataclass(frozen=True)
class ClassificationReport:
    team: str
    evaluated_count: int
    top_k_error: dict[int, float]
    per_image_flat: dict[int, dict[str, int]]
    hierarchical_error: float | None = None
    per_image_hierarchical: dict[str, int] | None = None
    # categories seen in truth/predictions that are not graph leaves; costs
    # against internal nodes are permitted but worth surfacing
    non_leaf_labels: tuple[str, ...] = ()
    task: str = field(default="classification", init=False)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "team": self.team,
            "evaluated_count": self.evaluated_count,
            "top_k_error": {str(k): v for k, v in sorted(self.top_k_error.items())},
            "per_image_flat": {
                str(k): dict(sorted(v.items())) for k, v in sorted(self.per_image_flat.items())
            },
            "hierarchical_error": self.hierarchical_error,
            "per_image_hierarchical": (
                dict(sorted(self.per_image_hierarchical.items()))
                if self.per_image_hierarchical is not None
                else None
            ),
            "non_leaf_labels": sorted(self.non_leaf_labels),
        }


def _evaluated_images(
    truth: GroundTruthStore, exclude_blacklisted: bool
) -> list[str]:
    images = truth.image_order()
    if exclude_blacklisted:
        images = [i for i in images if i not in truth.blacklisted_images]
    if not images:
        raise ValueError("no images left to evaluate")
    return images


def _check_coverage(images: list[str], sub: ClassificationSubmission) -> None:
    for image_id in images:
        preds = sub.predictions.get(image_id)
        if preds is None:
            raise ValueError(f"submission has no predictions for image {image_id!r}")
        if not 1 <= len(preds) <= MAX_PREDICTIONS_PER_IMAGE:
            raise ValueError(
                f"image {image_id!r}: expected 1-{MAX_PREDICTIONS_PER_IMAGE} predictions"
            )


def top_k_error(
    truth: GroundTruthStore,
    sub: ClassificationSubmission,
    k: int,
    exclude_blacklisted: bool = False,
) -> tuple[float, dict[str, int]]:
    """Fraction of evaluated images whose first k guesses all miss the label.

    Returns (error, per-image 0/1 charges). Fewer than k guesses on an image
    simply means the missing ranks cannot hit.
    """
    if not 1 <= k <= MAX_PREDICTIONS_PER_IMAGE:
        raise ValueError(f"k must be in 1..{MAX_PREDICTIONS_PER_IMAGE}")
    images = _evaluated_images(truth, exclude_blacklisted)
    _check_coverage(images, sub)
    per_image: dict[str, int] = {}
    for image_id in images:
        label = truth.labels[image_id]
        guesses = sub.predictions[image_id][:k]
        per_image[image_id] = 0 if label in guesses else 1
    error = sum(per_image.values()) / len(images)
    return error, per_image


def hierarchical_error(
    truth: GroundTruthStore,
    sub: ClassificationSubmission,
    graph: SynsetGraph,
    k: int = MAX_PREDICTIONS_PER_IMAGE,
    exclude_blacklisted: bool = False,
) -> tuple[float, dict[str, int], tuple[str, ...]]:
    """Mean over images of the cheapest common-ancestor cost among k guesses.

    Every label must be a graph node. Returns (mean cost, per-image costs,
    non-leaf labels encountered).
    """
    if not 1 <= k <= MAX_PREDICTIONS_PER_IMAGE:
        raise ValueError(f"k must be in 1..{MAX_PREDICTIONS_PER_IMAGE}")
    images = _evaluated_images(truth, exclude_blacklisted)
    _check_coverage(images, sub)
    per_image: dict[str, int] = {}
    non_leaf: set[str] = set()
    for image_id in images:
        label = truth.labels[image_id]
        if not graph.is_leaf(label):
            non_leaf.add(label)
        costs = []
        for guess in sub.predictions[image_id][:k]:
            if not graph.is_leaf(guess):
                non_leaf.add(guess)
            costs.append(graph.hierarchical_cost(guess, label))
        per_image[image_id] = min(costs)
    mean_cost = sum(per_image.values()) / len(images)
    return mean_cost, per_image, tuple(sorted(non_leaf))


def evaluate_classification(
    truth: GroundTruthStore,
    sub: ClassificationSubmission,
    ks: tuple[int, ...] = (1, 5),
    graph: SynsetGraph | None = None,
    hierarchical_k: int = MAX_PREDICTIONS_PER_IMAGE,
    exclude_blacklisted: bool = False,
) -> ClassificationReport:
    errors: dict[int, float] = {}
    flat: dict[int, dict[str, int]] = {}
    for k in ks:
        errors[k], flat[k] = top_k_error(truth, sub, k, exclude_blacklisted)
    hier = None
    per_hier = None
    non_leaf: tuple[str, ...] = ()
    if graph is not None:
        hier, per_hier, non_leaf = hierarchical_error(
            truth, sub, graph, hierarchical_k, exclude_blacklisted
        )
    evaluated = len(next(iter(flat.values()))) if flat else 0
    return ClassificationReport(
        team=sub.team,
        evaluated_count=evaluated,
        top_k_error=errors,
        per_image_flat=flat,
        hierarchical_error=hier,
        per_image_hierarchical=per_hier,
        non_leaf_labels=non_leaf,
    )
