import random

import pytest

from visbench.geometry import BoundingBox, ImageRef, ScoredBox
from visbench.ingest import (
    CLASSIFICATION,
    DETECTION,
    LOCALIZATION,
    ClassificationSubmission,
    DetectionSubmission,
    GroundTruthStore,
    LocalizationSubmission,
)


def box(x0, y0, x1, y1) -> BoundingBox:
    return BoundingBox(float(x0), float(y0), float(x1), float(y1))


def random_box(rng: random.Random, frame: int = 200, max_side: int = 80) -> BoundingBox:
    # integer coordinates keep IOU arithmetic exactly reproducible across
    # independent implementations
    w = rng.randint(1, max_side)
    h = rng.randint(1, max_side)
    x0 = rng.randint(0, frame - w)
    y0 = rng.randint(0, frame - h)
    return box(x0, y0, x0 + w, y0 + h)


def make_images(n: int, width: int = 200, height: int = 200) -> dict[str, ImageRef]:
    return {f"im{i:04d}": ImageRef(f"im{i:04d}", width, height) for i in range(n)}


def make_cls_store(labels: dict[str, str], categories=None, blacklisted=(),
                   width: int = 200, height: int = 200) -> GroundTruthStore:
    cats = frozenset(categories) if categories else frozenset(labels.values())
    images = {i: ImageRef(i, width, height) for i in labels}
    return GroundTruthStore(
        task=CLASSIFICATION,
        images=images,
        categories=cats,
        labels=dict(labels),
        boxes={},
        blacklisted_images=frozenset(blacklisted),
    )


def make_loc_store(labels: dict[str, str], boxes: dict[tuple[str, str], list],
                   categories=None, blacklisted=(), width=200, height=200) -> GroundTruthStore:
    cats = frozenset(categories) if categories else frozenset(labels.values())
    images = {i: ImageRef(i, width, height) for i in labels}
    return GroundTruthStore(
        task=LOCALIZATION,
        images=images,
        categories=cats,
        labels=dict(labels),
        boxes={k: tuple(v) for k, v in boxes.items()},
        blacklisted_images=frozenset(blacklisted),
    )


def make_det_store(image_ids, categories, boxes: dict[tuple[str, str], list],
                   blacklisted_images=(), blacklisted_pairs=(),
                   width=200, height=200) -> GroundTruthStore:
    images = {i: ImageRef(i, width, height) for i in image_ids}
    return GroundTruthStore(
        task=DETECTION,
        images=images,
        categories=frozenset(categories),
        labels={},
        boxes={k: tuple(v) for k, v in boxes.items()},
        blacklisted_images=frozenset(blacklisted_images),
        blacklisted_pairs=frozenset(blacklisted_pairs),
    )


def make_det_sub(team: str, dets: dict[tuple[str, str], list[tuple[BoundingBox, float]]]) -> DetectionSubmission:
    return DetectionSubmission(
        team=team,
        detections={
            k: tuple(ScoredBox(b, s) for b, s in v) for k, v in dets.items()
        },
    )


def make_cls_sub(team: str, predictions: dict[str, list[str]]) -> ClassificationSubmission:
    return ClassificationSubmission(
        team=team, predictions={k: tuple(v) for k, v in predictions.items()}
    )


def make_loc_sub(team: str, predictions: dict[str, list]) -> LocalizationSubmission:
    return LocalizationSubmission(
        team=team, predictions={k: tuple(v) for k, v in predictions.items()}
    )


def random_dag(rng: random.Random, n_nodes: int) -> tuple[list[tuple[str, str]], list[str]]:
    """Random multi-parent DAG over nodes n0..n{k-1}; edges only go to higher ids."""
    nodes = [f"n{i}" for i in range(n_nodes)]
    edges = []
    for i in range(1, n_nodes):
        # at least one parent keeps everything reachable from some root
        parents = rng.sample(range(i), k=min(i, 1 + (rng.random() < 0.3)))
        for p in parents:
            edges.append((nodes[p], nodes[i]))
    return edges, nodes


def layered_question_tree(rng: random.Random, n_roots=4, mids_per_root=2,
                          leaves_per_mid=3, extra_parent_prob=0.2):
    """Root/mid/leaf question DAG with occasional multi-parent mid nodes."""
    from visbench.annotation import QuestionTree

    edges = []
    bindings = {}
    for r in range(n_roots):
        root = f"root{r}"
        for m in range(mids_per_root):
            mid = f"mid{r}_{m}"
            edges.append((root, mid))
            if rng.random() < extra_parent_prob and r > 0:
                edges.append((f"root{rng.randrange(r)}", mid))
            for l in range(leaves_per_mid):
                leaf = f"leaf{r}_{m}_{l}"
                edges.append((mid, leaf))
                bindings[leaf] = f"cat{r}_{m}_{l}"
    return QuestionTree(edges, bindings)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20140107)


class FakeClock:
    """Deterministic, manually advanced time source for service tests."""

    def __init__(self, start: float = 1_700_000_000.0) -> None:
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


def write_service_env(tmp_path, stores: dict[str, GroundTruthStore],
                      tokens: dict[str, str], **config_overrides):
    """Materialize truth dirs, a token file and a ServiceConfig under tmp_path."""
    import json

    from visbench.ingest import write_ground_truth
    from visbench.service import ServiceConfig

    truth_dirs = {}
    for task, store in stores.items():
        d = tmp_path / f"truth_{task}"
        write_ground_truth(store, d)
        truth_dirs[task] = str(d)
    tokens_path = tmp_path / "tokens.json"
    tokens_path.write_text(json.dumps(tokens))
    storage = tmp_path / "storage"
    return ServiceConfig(
        truth_dirs=truth_dirs,
        tokens_path=str(tokens_path),
        storage_dir=str(storage),
        **config_overrides,
    )
