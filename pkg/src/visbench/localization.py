"""Single-object localization scoring.

A prediction counts only if its label matches the truth label AND its box
overlaps some truth instance with ratio strictly greater than the threshold
(default 0.5). Note the deliberate asymmetry with detection matching, which
uses >= against a per-box adaptive threshold: here a tie at exactly 0.5 is a
miss. Images on the difficult-image blacklist are excluded from the
denominator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .geometry import iou
from .ingest import GroundTruthStore, LocalizationSubmission, MAX_PREDICTIONS_PER_IMAGE


@dataclass(frozen=True)
class LocalizationReport:
    team: str
    evaluated_count: int
    blacklisted_count: int
    top5_error: float
    per_image: dict[str, int]
    per_class_error: dict[str, float]
    iou_threshold: float
    task: str = field(default="localization", init=False)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "team": self.team,
            "evaluated_count": self.evaluated_count,
            "blacklisted_count": self.blacklisted_count,
            "top5_error": self.top5_error,
            "per_image": dict(sorted(self.per_image.items())),
            "per_class_error": dict(sorted(self.per_class_error.items())),
            "iou_threshold": self.iou_threshold,
        }


def localization_error(
    truth: GroundTruthStore,
    sub: LocalizationSubmission,
    iou_threshold: float = 0.5,
    k: int = MAX_PREDICTIONS_PER_IMAGE,
) -> LocalizationReport:
    """Score a localization submission against truth boxes.

    Per prediction, the charge is max(label mismatch, box miss) where the box
    miss is 0 iff some truth instance overlaps it with IOU > threshold; the
    per-image charge is the best (minimum) over the first k predictions.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must be in (0, 1)")
    images = [i for i in truth.image_order() if i not in truth.blacklisted_images]
    if not images:
        raise ValueError("no images left to evaluate after blacklist")
    per_image: dict[str, int] = {}
    per_class_counts: dict[str, list[int]] = {}
    for image_id in images:
        preds = sub.predictions.get(image_id)
        if preds is None:
            raise ValueError(f"submission has no predictions for image {image_id!r}")
        label = truth.labels[image_id]
        instances = truth.truth_boxes(image_id, label)
        if not instances:
            raise ValueError(
                f"malformed truth: image {image_id!r} has no boxes for its label {label!r}"
            )
        best = 1
        for cat, box in preds[:k]:
            label_miss = 0 if cat == label else 1
            box_miss = 0 if any(iou(box, t) > iou_threshold for t in instances) else 1
            charge = max(label_miss, box_miss)
            if charge < best:
                best = charge
                if best == 0:
                    break
        per_image[image_id] = best
        per_class_counts.setdefault(label, []).append(best)
    error = sum(per_image.values()) / len(images)
    per_class = {
        cat: sum(charges) / len(charges) for cat, charges in per_class_counts.items()
    }
    return LocalizationReport(
        team=sub.team,
        evaluated_count=len(images),
        blacklisted_count=len(truth.blacklisted_images),
        top5_error=error,
        per_image=per_image,
        per_class_error=per_class,
        iou_threshold=iou_threshold,
    )
