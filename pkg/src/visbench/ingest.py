"""Strict parsers and writers for every external file format.

This is the only module that touches raw bytes. All formats are
whitespace-separated UTF-8 text with LF line endings. Parsers reject any
malformed input with a `FormatError` carrying the 1-based line number; they
never raise anything else on arbitrary bytes. Writers emit a canonical form
(records sorted by image id, floats as shortest round-trip decimals) so that
parse(write(x)) == x for every record type.

Formats
-------
classification submission   one line per test image, in lexicographic image
                            order: 1-5 whitespace-separated category ids,
                            highest-confidence first
localization submission     same line order; 1-5 groups of
                            `category xmin ymin xmax ymax`
detection submission        one detection per line:
                            `image_id category_id score xmin ymin xmax ymax`
ground-truth directory      images.txt        `image_id width height`
                            categories.txt    `category_id`
                            labels.txt        `image_id category_id`
                            boxes.txt         `image_id category_id xmin ymin xmax ymax`
                            blacklist_images.txt  `image_id`            (optional)
                            blacklist_pairs.txt   `image_id category_id` (optional)
hierarchy                   edges file `parent_id<TAB>child_id` plus a leaf
                            manifest with one category id per line
window rankings             `image_id rank xmin ymin xmax ymax`, rank 1..1000
question tree               `edge<TAB>parent<TAB>child` and
                            `leaf<TAB>question_id<TAB>category_id` lines
property bins               `category<TAB>property<TAB>bin`
class scores                `category score`
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .annotation import QuestionTree
from .geometry import BoundingBox, ImageRef, ScoredBox
from .hierarchy import SynsetGraph

CLASSIFICATION = "classification"
LOCALIZATION = "localization"
DETECTION = "detection"
TASKS = (CLASSIFICATION, LOCALIZATION, DETECTION)

MAX_PREDICTIONS_PER_IMAGE = 5
MAX_WINDOW_RANK = 1000


class FormatError(ValueError):
    """A malformed external file. Always carries a 1-based line number."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += str(path)
        if line is not None:
            prefix += f":{line}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


# ---------------------------------------------------------------------------
# Low-level helpers
# ---------------------------------------------------------------------------


def _lines(data: bytes | str, path: str | None = None) -> list[tuple[int, str]]:
    """Decode into (line_number, text) pairs, rejecting invalid UTF-8 per line."""
    if isinstance(data, str):
        raw_lines = data.split("\n")
        decoded = list(enumerate(raw_lines, start=1))
    else:
        decoded = []
        for i, chunk in enumerate(data.split(b"\n"), start=1):
            try:
                decoded.append((i, chunk.decode("utf-8")))
            except UnicodeDecodeError as exc:
                raise FormatError(f"invalid UTF-8: {exc}", line=i, path=path) from exc
    # drop a single trailing empty chunk produced by a final newline
    if decoded and decoded[-1][1] == "":
        decoded.pop()
    return decoded


def _parse_float(token: str, what: str, line: int, path: str | None) -> float:
    try:
        value = float(token)
    except ValueError:
        raise FormatError(f"bad {what} {token!r}", line=line, path=path) from None
    if not math.isfinite(value):
        raise FormatError(f"non-finite {what} {token!r}", line=line, path=path)
    return value


def _parse_int(token: str, what: str, line: int, path: str | None) -> int:
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"bad {what} {token!r}", line=line, path=path) from None


def _parse_box(
    tokens: Sequence[str], line: int, path: str | None
) -> BoundingBox:
    xmin = _parse_float(tokens[0], "xmin", line, path)
    ymin = _parse_float(tokens[1], "ymin", line, path)
    xmax = _parse_float(tokens[2], "xmax", line, path)
    ymax = _parse_float(tokens[3], "ymax", line, path)
    try:
        return BoundingBox(xmin, ymin, xmax, ymax)
    except ValueError as exc:
        raise FormatError(str(exc), line=line, path=path) from None


def _fmt(value: float) -> str:
    """Shortest decimal that round-trips back to the same float."""
    return repr(float(value))


# ---------------------------------------------------------------------------
# Domain records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassificationSubmission:
    team: str
    predictions: dict[str, tuple[str, ...]]  # image -> ranked labels, rank 1 first
    task: str = field(default=CLASSIFICATION, init=False)


@dataclass(frozen=True)
class LocalizationSubmission:
    team: str
    predictions: dict[str, tuple[tuple[str, BoundingBox], ...]]
    task: str = field(default=LOCALIZATION, init=False)


@dataclass(frozen=True)
class DetectionSubmission:
    team: str
    # (image, category) -> detections in submission order
    detections: dict[tuple[str, str], tuple[ScoredBox, ...]]
    task: str = field(default=DETECTION, init=False)

    def detection_count(self) -> int:
        return sum(len(v) for v in self.detections.values())


@dataclass(frozen=True)
class GroundTruthStore:
    """Server-side truth for one task. Immutable after load."""

    task: str
    images: dict[str, ImageRef]
    categories: frozenset[str]
    labels: dict[str, str]
    boxes: dict[tuple[str, str], tuple[BoundingBox, ...]]
    blacklisted_images: frozenset[str] = frozenset()
    blacklisted_pairs: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        for img, cat in [(i, c) for (i, c) in self.boxes]:
            if img not in self.images:
                raise ValueError(f"box references unknown image {img!r}")
            if cat not in self.categories:
                raise ValueError(f"box references unknown category {cat!r}")
        for img, cat in self.labels.items():
            if img not in self.images:
                raise ValueError(f"label references unknown image {img!r}")
            if cat not in self.categories:
                raise ValueError(f"label references unknown category {cat!r}")
        for img in self.blacklisted_images:
            if img not in self.images:
                raise ValueError(f"blacklist references unknown image {img!r}")
        for img, cat in self.blacklisted_pairs:
            if img not in self.images:
                raise ValueError(f"pair blacklist references unknown image {img!r}")
            if cat not in self.categories:
                raise ValueError(f"pair blacklist references unknown category {cat!r}")
        if self.task in (CLASSIFICATION, LOCALIZATION):
            missing = set(self.images) - set(self.labels)
            if missing:
                raise ValueError(
                    f"{self.task} truth must label every image; missing {sorted(missing)[:5]}"
                )

    def image_order(self) -> list[str]:
        """Dataset order for line-per-image submission files."""
        return sorted(self.images)

    def truth_boxes(self, image_id: str, category: str) -> tuple[BoundingBox, ...]:
        return self.boxes.get((image_id, category), ())


# ---------------------------------------------------------------------------
# Submission parsers / writers
# ---------------------------------------------------------------------------


def parse_classification_submission(
    data: bytes | str,
    categories: Iterable[str],
    image_order: Sequence[str],
    team: str = "",
    path: str | None = None,
) -> ClassificationSubmission:
    cats = set(categories)
    lines = _lines(data, path)
    if len(lines) != len(image_order):
        raise FormatError(
            f"expected {len(image_order)} lines (one per test image), got {len(lines)}",
            line=len(lines) + 1 if len(lines) < len(image_order) else len(image_order) + 1,
            path=path,
        )
    predictions: dict[str, tuple[str, ...]] = {}
    for (lineno, text), image_id in zip(lines, image_order):
        tokens = text.split()
        if not 1 <= len(tokens) <= MAX_PREDICTIONS_PER_IMAGE:
            raise FormatError(
                f"expected 1-{MAX_PREDICTIONS_PER_IMAGE} labels, got {len(tokens)}",
                line=lineno,
                path=path,
            )
        for tok in tokens:
            if tok not in cats:
                raise FormatError(f"unknown category {tok!r}", line=lineno, path=path)
        predictions[image_id] = tuple(tokens)
    return ClassificationSubmission(team=team, predictions=predictions)


def write_classification_submission(
    sub: ClassificationSubmission, image_order: Sequence[str]
) -> bytes:
    missing = set(image_order) - set(sub.predictions)
    if missing:
        raise ValueError(f"submission lacks predictions for {sorted(missing)[:5]}")
    out = []
    for image_id in image_order:
        out.append(" ".join(sub.predictions[image_id]))
    return ("\n".join(out) + "\n").encode("utf-8")


def parse_localization_submission(
    data: bytes | str,
    categories: Iterable[str],
    image_order: Sequence[str],
    team: str = "",
    path: str | None = None,
) -> LocalizationSubmission:
    cats = set(categories)
    lines = _lines(data, path)
    if len(lines) != len(image_order):
        raise FormatError(
            f"expected {len(image_order)} lines (one per test image), got {len(lines)}",
            line=min(len(lines), len(image_order)) + 1,
            path=path,
        )
    predictions: dict[str, tuple[tuple[str, BoundingBox], ...]] = {}
    for (lineno, text), image_id in zip(lines, image_order):
        tokens = text.split()
        if not tokens or len(tokens) % 5 != 0:
            raise FormatError(
                "expected groups of `category xmin ymin xmax ymax` (5 fields each), "
                f"got {len(tokens)} fields",
                line=lineno,
                path=path,
            )
        groups = len(tokens) // 5
        if groups > MAX_PREDICTIONS_PER_IMAGE:
            raise FormatError(
                f"at most {MAX_PREDICTIONS_PER_IMAGE} predictions per image, got {groups}",
                line=lineno,
                path=path,
            )
        preds = []
        for g in range(groups):
            cat = tokens[5 * g]
            if cat not in cats:
                raise FormatError(f"unknown category {cat!r}", line=lineno, path=path)
            box = _parse_box(tokens[5 * g + 1 : 5 * g + 5], lineno, path)
            preds.append((cat, box))
        predictions[image_id] = tuple(preds)
    return LocalizationSubmission(team=team, predictions=predictions)


def write_localization_submission(
    sub: LocalizationSubmission, image_order: Sequence[str]
) -> bytes:
    missing = set(image_order) - set(sub.predictions)
    if missing:
        raise ValueError(f"submission lacks predictions for {sorted(missing)[:5]}")
    out = []
    for image_id in image_order:
        fields = []
        for cat, box in sub.predictions[image_id]:
            fields += [cat, _fmt(box.xmin), _fmt(box.ymin), _fmt(box.xmax), _fmt(box.ymax)]
        out.append(" ".join(fields))
    return ("\n".join(out) + "\n").encode("utf-8")


def parse_detection_submission(
    data: bytes | str,
    categories: Iterable[str],
    image_ids: Iterable[str],
    team: str = "",
    path: str | None = None,
) -> DetectionSubmission:
    cats = set(categories)
    imgs = set(image_ids)
    grouped: dict[tuple[str, str], list[ScoredBox]] = {}
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 7:
            raise FormatError(
                f"expected `image_id category_id score xmin ymin xmax ymax`, got "
                f"{len(tokens)} fields",
                line=lineno,
                path=path,
            )
        image_id, category = tokens[0], tokens[1]
        if image_id not in imgs:
            raise FormatError(f"unknown image {image_id!r}", line=lineno, path=path)
        if category not in cats:
            raise FormatError(f"unknown category {category!r}", line=lineno, path=path)
        score = _parse_float(tokens[2], "score", lineno, path)
        box = _parse_box(tokens[3:7], lineno, path)
        grouped.setdefault((image_id, category), []).append(ScoredBox(box, score))
    return DetectionSubmission(
        team=team, detections={k: tuple(v) for k, v in grouped.items()}
    )


def write_detection_submission(sub: DetectionSubmission) -> bytes:
    out = []
    for image_id, category in sorted(sub.detections):
        for det in sub.detections[(image_id, category)]:
            b = det.box
            out.append(
                f"{image_id} {category} {_fmt(det.score)} "
                f"{_fmt(b.xmin)} {_fmt(b.ymin)} {_fmt(b.xmax)} {_fmt(b.ymax)}"
            )
    return ("\n".join(out) + "\n").encode("utf-8") if out else b""


def parse_submission(
    data: bytes | str, task: str, truth: GroundTruthStore, team: str = "", path: str | None = None
):
    """Task dispatch used by the service and the CLI."""
    if task == CLASSIFICATION:
        return parse_classification_submission(
            data, truth.categories, truth.image_order(), team=team, path=path
        )
    if task == LOCALIZATION:
        return parse_localization_submission(
            data, truth.categories, truth.image_order(), team=team, path=path
        )
    if task == DETECTION:
        return parse_detection_submission(
            data, truth.categories, truth.images, team=team, path=path
        )
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------


def parse_images_manifest(data: bytes | str, path: str | None = None) -> dict[str, ImageRef]:
    images: dict[str, ImageRef] = {}
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 3:
            raise FormatError(
                f"expected `image_id width height`, got {len(tokens)} fields",
                line=lineno,
                path=path,
            )
        image_id = tokens[0]
        if image_id in images:
            raise FormatError(f"duplicate image {image_id!r}", line=lineno, path=path)
        width = _parse_int(tokens[1], "width", lineno, path)
        height = _parse_int(tokens[2], "height", lineno, path)
        try:
            images[image_id] = ImageRef(image_id, width, height)
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno, path=path) from None
    return images


def parse_category_list(data: bytes | str, path: str | None = None) -> list[str]:
    cats: list[str] = []
    seen: set[str] = set()
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 1:
            raise FormatError(
                f"expected one category id per line, got {len(tokens)} fields",
                line=lineno,
                path=path,
            )
        if tokens[0] in seen:
            raise FormatError(f"duplicate category {tokens[0]!r}", line=lineno, path=path)
        seen.add(tokens[0])
        cats.append(tokens[0])
    return cats


def parse_labels(data: bytes | str, path: str | None = None) -> dict[str, str]:
    labels: dict[str, str] = {}
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 2:
            raise FormatError(
                f"expected `image_id category_id`, got {len(tokens)} fields",
                line=lineno,
                path=path,
            )
        image_id, category = tokens
        if image_id in labels:
            raise FormatError(
                f"duplicate label for image {image_id!r}", line=lineno, path=path
            )
        labels[image_id] = category
    return labels


def parse_boxes(
    data: bytes | str, path: str | None = None
) -> dict[tuple[str, str], tuple[BoundingBox, ...]]:
    grouped: dict[tuple[str, str], list[BoundingBox]] = {}
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 6:
            raise FormatError(
                f"expected `image_id category_id xmin ymin xmax ymax`, got "
                f"{len(tokens)} fields",
                line=lineno,
                path=path,
            )
        box = _parse_box(tokens[2:6], lineno, path)
        grouped.setdefault((tokens[0], tokens[1]), []).append(box)
    return {k: tuple(v) for k, v in grouped.items()}


def parse_id_list(data: bytes | str, path: str | None = None) -> frozenset[str]:
    ids: set[str] = set()
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 1:
            raise FormatError(
                f"expected one id per line, got {len(tokens)} fields", line=lineno, path=path
            )
        ids.add(tokens[0])
    return frozenset(ids)


def parse_pair_list(data: bytes | str, path: str | None = None) -> frozenset[tuple[str, str]]:
    pairs: set[tuple[str, str]] = set()
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 2:
            raise FormatError(
                f"expected `image_id category_id`, got {len(tokens)} fields",
                line=lineno,
                path=path,
            )
        pairs.add((tokens[0], tokens[1]))
    return frozenset(pairs)


def load_ground_truth(directory: str | Path, task: str) -> GroundTruthStore:
    """Assemble a GroundTruthStore from the documented directory layout."""
    d = Path(directory)

    def read(name: str, required: bool = True) -> bytes | None:
        p = d / name
        if not p.exists():
            if required:
                raise FormatError(f"missing required file {name}", path=str(p))
            return None
        return p.read_bytes()

    images = parse_images_manifest(read("images.txt"), path=str(d / "images.txt"))
    categories = frozenset(
        parse_category_list(read("categories.txt"), path=str(d / "categories.txt"))
    )
    labels: dict[str, str] = {}
    boxes: dict[tuple[str, str], tuple[BoundingBox, ...]] = {}
    if task in (CLASSIFICATION, LOCALIZATION):
        labels = parse_labels(read("labels.txt"), path=str(d / "labels.txt"))
    if task in (LOCALIZATION, DETECTION):
        boxes = parse_boxes(read("boxes.txt"), path=str(d / "boxes.txt"))
    bl_imgs_data = read("blacklist_images.txt", required=False)
    bl_pairs_data = read("blacklist_pairs.txt", required=False)
    blacklisted_images = (
        parse_id_list(bl_imgs_data, path=str(d / "blacklist_images.txt"))
        if bl_imgs_data is not None
        else frozenset()
    )
    blacklisted_pairs = (
        parse_pair_list(bl_pairs_data, path=str(d / "blacklist_pairs.txt"))
        if bl_pairs_data is not None
        else frozenset()
    )
    try:
        return GroundTruthStore(
            task=task,
            images=images,
            categories=categories,
            labels=labels,
            boxes=boxes,
            blacklisted_images=blacklisted_images,
            blacklisted_pairs=blacklisted_pairs,
        )
    except ValueError as exc:
        raise FormatError(str(exc), path=str(d)) from None


def write_ground_truth(store: GroundTruthStore, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    img_lines = [
        f"{img.id} {img.width} {img.height}" for img in
        (store.images[i] for i in sorted(store.images))
    ]
    (d / "images.txt").write_bytes(_joined(img_lines))
    (d / "categories.txt").write_bytes(_joined(sorted(store.categories)))
    if store.task in (CLASSIFICATION, LOCALIZATION):
        label_lines = [f"{i} {store.labels[i]}" for i in sorted(store.labels)]
        (d / "labels.txt").write_bytes(_joined(label_lines))
    if store.task in (LOCALIZATION, DETECTION):
        box_lines = []
        for image_id, category in sorted(store.boxes):
            for b in store.boxes[(image_id, category)]:
                box_lines.append(
                    f"{image_id} {category} "
                    f"{_fmt(b.xmin)} {_fmt(b.ymin)} {_fmt(b.xmax)} {_fmt(b.ymax)}"
                )
        (d / "boxes.txt").write_bytes(_joined(box_lines))
    (d / "blacklist_images.txt").write_bytes(_joined(sorted(store.blacklisted_images)))
    pair_lines = [f"{i} {c}" for i, c in sorted(store.blacklisted_pairs)]
    (d / "blacklist_pairs.txt").write_bytes(_joined(pair_lines))


def _joined(lines: list[str]) -> bytes:
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


# ---------------------------------------------------------------------------
# Hierarchy, window rankings, question tree, properties, scores
# ---------------------------------------------------------------------------


def parse_hierarchy_edges(
    data: bytes | str, path: str | None = None
) -> list[tuple[str, str]]:
    edges: list[tuple[str, str]] = []
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 2:
            raise FormatError(
                f"expected `parent_id<TAB>child_id`, got {len(tokens)} fields",
                line=lineno,
                path=path,
            )
        edges.append((tokens[0], tokens[1]))
    return edges


def load_hierarchy(
    edges_path: str | Path, leaves_path: str | Path | None = None
) -> SynsetGraph:
    edges = parse_hierarchy_edges(Path(edges_path).read_bytes(), path=str(edges_path))
    leaves: list[str] = []
    if leaves_path is not None:
        leaves = parse_category_list(Path(leaves_path).read_bytes(), path=str(leaves_path))
    try:
        return SynsetGraph(edges, leaf_set=leaves)
    except ValueError as exc:
        raise FormatError(str(exc), path=str(edges_path)) from None


def write_hierarchy(
    graph: SynsetGraph, edges_path: str | Path, leaves_path: str | Path | None = None
) -> None:
    edge_lines = []
    for parent in sorted(graph.nodes):
        for child in sorted(graph.children(parent)):
            edge_lines.append(f"{parent}\t{child}")
    Path(edges_path).write_bytes(_joined(edge_lines))
    if leaves_path is not None:
        Path(leaves_path).write_bytes(_joined(sorted(graph.leaf_set)))


def parse_window_rankings(
    data: bytes | str, path: str | None = None
) -> dict[str, tuple[tuple[int, BoundingBox], ...]]:
    """Objectness windows per image as (rank, box) pairs, ordered by rank.

    Missing ranks are permitted (the rank value, not the list position, is
    what matters downstream), but each (image, rank) must be unique.
    """
    per_image: dict[str, dict[int, BoundingBox]] = {}
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 6:
            raise FormatError(
                f"expected `image_id rank xmin ymin xmax ymax`, got {len(tokens)} fields",
                line=lineno,
                path=path,
            )
        image_id = tokens[0]
        rank = _parse_int(tokens[1], "rank", lineno, path)
        if not 1 <= rank <= MAX_WINDOW_RANK:
            raise FormatError(
                f"rank must be in 1..{MAX_WINDOW_RANK}, got {rank}", line=lineno, path=path
            )
        box = _parse_box(tokens[2:6], lineno, path)
        ranks = per_image.setdefault(image_id, {})
        if rank in ranks:
            raise FormatError(
                f"duplicate rank {rank} for image {image_id!r}", line=lineno, path=path
            )
        ranks[rank] = box
    return {
        img: tuple((r, ranks[r]) for r in sorted(ranks))
        for img, ranks in per_image.items()
    }


def write_window_rankings(
    windows: Mapping[str, Sequence[tuple[int, BoundingBox]]]
) -> bytes:
    lines = []
    for image_id in sorted(windows):
        for rank, b in sorted(windows[image_id]):
            lines.append(
                f"{image_id} {rank} {_fmt(b.xmin)} {_fmt(b.ymin)} {_fmt(b.xmax)} {_fmt(b.ymax)}"
            )
    return _joined(lines)


def parse_question_tree(data: bytes | str, path: str | None = None) -> QuestionTree:
    edges: list[tuple[str, str]] = []
    bindings: dict[str, str] = {}
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 3 or tokens[0] not in ("edge", "leaf"):
            raise FormatError(
                "expected `edge parent child` or `leaf question category`",
                line=lineno,
                path=path,
            )
        if tokens[0] == "edge":
            edges.append((tokens[1], tokens[2]))
        else:
            if tokens[1] in bindings:
                raise FormatError(
                    f"duplicate binding for question {tokens[1]!r}", line=lineno, path=path
                )
            bindings[tokens[1]] = tokens[2]
    try:
        return QuestionTree(edges, bindings)
    except ValueError as exc:
        raise FormatError(str(exc), path=path) from None


def load_question_tree(path: str | Path) -> QuestionTree:
    return parse_question_tree(Path(path).read_bytes(), path=str(path))


def write_question_tree(tree: QuestionTree) -> bytes:
    lines = []
    for parent in sorted(tree.queries):
        for child in sorted(tree.children(parent)):
            lines.append(f"edge\t{parent}\t{child}")
    for q in sorted(tree.leaf_bindings):
        lines.append(f"leaf\t{q}\t{tree.leaf_bindings[q]}")
    return _joined(lines)


def parse_property_bins(
    data: bytes | str, path: str | None = None
) -> dict[str, dict[str, str]]:
    """property -> category -> bin label."""
    out: dict[str, dict[str, str]] = {}
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 3:
            raise FormatError(
                "expected `category<TAB>property<TAB>bin`", line=lineno, path=path
            )
        category, prop, bin_label = tokens
        per_prop = out.setdefault(prop, {})
        if category in per_prop:
            raise FormatError(
                f"duplicate bin for ({category!r}, {prop!r})", line=lineno, path=path
            )
        per_prop[category] = bin_label
    return out


def write_property_bins(bins: Mapping[str, Mapping[str, str]]) -> bytes:
    lines = []
    for prop in sorted(bins):
        for category in sorted(bins[prop]):
            lines.append(f"{category}\t{prop}\t{bins[prop][category]}")
    return _joined(lines)


def parse_class_scores(data: bytes | str, path: str | None = None) -> dict[str, float]:
    scores: dict[str, float] = {}
    for lineno, text in _lines(data, path):
        tokens = text.split()
        if len(tokens) != 2:
            raise FormatError(
                f"expected `category score`, got {len(tokens)} fields", line=lineno, path=path
            )
        if tokens[0] in scores:
            raise FormatError(f"duplicate category {tokens[0]!r}", line=lineno, path=path)
        scores[tokens[0]] = _parse_float(tokens[1], "score", lineno, path)
    return scores


def write_class_scores(scores: Mapping[str, float]) -> bytes:
    return _joined([f"{c} {_fmt(scores[c])}" for c in sorted(scores)])
