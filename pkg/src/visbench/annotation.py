"""Annotation planning and crowd-work simulation.

Three pieces of machinery live here:

* a query DAG of yes/no questions ("is there a ... in the image?") whose
  bound leaves correspond one-to-one with target categories, plus the
  frontier-based planner that labels an image with the presence/absence of
  every query while skipping entire subtrees once a "no" is obtained;
* sequential consensus labeling driven by a vote-tally confidence table;
* the three-subtask bounding-box workflow (draw one box, verify its quality,
  verify coverage) as a simulation over pluggable worker oracles, and the
  post-hoc overlap audits used to find duplicate or ambiguous boxes.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .geometry import BoundingBox, iou

YES = "yes"
NO = "no"


# ---------------------------------------------------------------------------
# Question tree
# ---------------------------------------------------------------------------


class QuestionTree:
    """Immutable DAG of yes/no queries with leaf-to-category bindings.

    Multiple parents are permitted. Every childless query must be bound to
    exactly one category and every category to exactly one childless query.
    """

    def __init__(
        self,
        edges: Iterable[tuple[str, str]],
        leaf_bindings: Mapping[str, str],
    ) -> None:
        children: dict[str, list[str]] = {}
        parents: dict[str, list[str]] = {}
        order: list[str] = []
        seen: set[str] = set()

        def add(q: str) -> None:
            if not q:
                raise ValueError("query ids must be nonempty")
            if q not in seen:
                seen.add(q)
                order.append(q)
                children[q] = []
                parents[q] = []

        for parent, child in edges:
            add(parent)
            add(child)
            if child in children[parent]:
                raise ValueError(f"duplicate edge {parent!r} -> {child!r}")
            children[parent].append(child)
            parents[child].append(parent)
        for q in leaf_bindings:
            add(q)

        self.queries: tuple[str, ...] = tuple(order)
        self._children = {q: tuple(c) for q, c in children.items()}
        self._parents = {q: tuple(p) for q, p in parents.items()}
        self.roots: tuple[str, ...] = tuple(q for q in order if not parents[q])

        topo = self._topological_order()

        childless = {q for q in order if not children[q]}
        bound = set(leaf_bindings)
        if bound != childless:
            raise ValueError(
                "leaf bindings must cover exactly the childless queries; "
                f"unbound={sorted(childless - bound)} nonleaf={sorted(bound - childless)}"
            )
        cats = list(leaf_bindings.values())
        if len(set(cats)) != len(cats):
            raise ValueError("each category may be bound by at most one leaf query")
        self.leaf_bindings: dict[str, str] = dict(leaf_bindings)
        self.categories: frozenset[str] = frozenset(cats)

        # categories reachable below each query, used by truthful oracles
        below: dict[str, frozenset[str]] = {}
        for q in reversed(topo):
            acc: set[str] = set()
            if q in self.leaf_bindings:
                acc.add(self.leaf_bindings[q])
            for c in self._children[q]:
                acc |= below[c]
            below[q] = frozenset(acc)
        self._categories_below = below

    def _topological_order(self) -> list[str]:
        indeg = {q: len(self._parents[q]) for q in self.queries}
        queue = deque(q for q in self.queries if indeg[q] == 0)
        topo: list[str] = []
        while queue:
            q = queue.popleft()
            topo.append(q)
            for c in self._children[q]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(topo) != len(self.queries):
            raise ValueError("question graph contains a cycle")
        return topo

    def children(self, q: str) -> tuple[str, ...]:
        return self._children[q]

    def parents(self, q: str) -> tuple[str, ...]:
        return self._parents[q]

    def descendants(self, q: str) -> frozenset[str]:
        """All strict descendants of `q`."""
        out: set[str] = set()
        stack = list(self._children[q])
        while stack:
            n = stack.pop()
            if n not in out:
                out.add(n)
                stack.extend(self._children[n])
        return frozenset(out)

    def ancestors(self, q: str) -> frozenset[str]:
        out: set[str] = set()
        stack = list(self._parents[q])
        while stack:
            n = stack.pop()
            if n not in out:
                out.add(n)
                stack.extend(self._parents[n])
        return frozenset(out)

    def categories_below(self, q: str) -> frozenset[str]:
        """Categories bound at or below `q`."""
        return self._categories_below[q]

    def leaf_for_category(self, category: str) -> str:
        for q, c in self.leaf_bindings.items():
            if c == category:
                return q
        raise KeyError(f"no leaf query bound to category {category!r}")


# ---------------------------------------------------------------------------
# Planner
# ---------------------------------------------------------------------------


@dataclass
class LabelState:
    """Outcome of labeling one image: per-query answers plus an audit trail."""

    labels: dict[str, str]
    queries_issued: int
    log: list[tuple] = field(default_factory=list)

    def leaf_labels(self, tree: QuestionTree) -> dict[str, str]:
        """Per-category yes/no derived from the bound leaf queries."""
        return {cat: self.labels[q] for q, cat in tree.leaf_bindings.items()}


class TruthfulOracle:
    """Answers queries from a per-image positive-category table.

    An internal query is answered yes exactly when some category bound below
    it is present. An optional flip probability injects independent noise per
    issued query.
    """

    def __init__(
        self,
        tree: QuestionTree,
        positives_by_image: Mapping[str, Iterable[str]],
        flip_prob: float = 0.0,
        seed: int = 0,
    ) -> None:
        self._tree = tree
        self._positives = {
            img: frozenset(cats) for img, cats in positives_by_image.items()
        }
        self._flip_prob = flip_prob
        self._rng = random.Random(seed)

    def answer(self, image_id: str, query: str) -> bool:
        truthful = bool(
            self._tree.categories_below(query) & self._positives.get(image_id, frozenset())
        )
        if self._flip_prob and self._rng.random() < self._flip_prob:
            return not truthful
        return truthful


def initial_labels_for_category(tree: QuestionTree, category: str) -> dict[str, str]:
    """Seed labels for an image already known to contain `category`.

    Marks the bound leaf and all of its ancestors yes, which is what lets
    pre-labeled images skip their guaranteed-yes queries.
    """
    leaf = tree.leaf_for_category(category)
    labels = {leaf: YES}
    for q in tree.ancestors(leaf):
        labels[q] = YES
    return labels


def plan_and_label(
    image_id: str,
    tree: QuestionTree,
    oracle,
    initial_labels: Mapping[str, str] | None = None,
) -> LabelState:
    """Label every query for one image, issuing as few oracle calls as possible.

    Frontier processing is breadth-first (FIFO) so traces are deterministic.
    A yes enqueues the still-unset children; a no marks every still-unset
    descendant no and drops it from the frontier. Pre-set labels are never
    asked: their consequences are applied directly. Terminates with every
    query labeled.
    """
    labels: dict[str, str] = {}
    log: list[tuple] = []
    issued = 0

    if initial_labels:
        for q, v in initial_labels.items():
            if q not in tree.queries:
                raise ValueError(f"initial label for unknown query {q!r}")
            if v not in (YES, NO):
                raise ValueError(f"initial label for {q!r} must be yes or no, got {v!r}")
            labels[q] = v
            log.append(("preset", q, v))
        # a yes below a no is inconsistent input
        for q, v in list(labels.items()):
            if v == NO:
                for d in tree.descendants(q):
                    if labels.get(d) == YES:
                        raise ValueError(
                            f"inconsistent initial labels: {d!r} is yes below no {q!r}"
                        )

    def sweep_no(source: str) -> None:
        for d in tree.descendants(source):
            if d not in labels:
                labels[d] = NO
                log.append(("sweep", d, NO, source))

    for q, v in list(labels.items()):
        if v == NO:
            sweep_no(q)

    frontier: deque[str] = deque()
    queued: set[str] = set()

    def enqueue(q: str) -> None:
        if q not in queued:
            queued.add(q)
            frontier.append(q)

    for q in tree.roots:
        enqueue(q)
    # pre-set yes queries must still propagate to their children even if no
    # parent ever answers yes at runtime
    for q in tree.queries:
        if labels.get(q) == YES:
            enqueue(q)

    while frontier:
        q = frontier.popleft()
        answer = labels.get(q)
        if answer is None:
            answer = YES if oracle.answer(image_id, q) else NO
            labels[q] = answer
            issued += 1
            log.append(("ask", q, answer))
        elif answer == NO:
            # already swept; its descendants were handled by the same sweep
            continue
        if answer == YES:
            for child in tree.children(q):
                if child not in labels:
                    enqueue(child)
        else:
            sweep_no(q)

    assert len(labels) == len(tree.queries), "planner left queries unset"
    return LabelState(labels=labels, queries_issued=issued, log=log)


@dataclass(frozen=True)
class CostReport:
    """Query-cost accounting for a batch of images against one tree."""

    images: int
    leaf_count: int
    query_count: int
    root_count: int
    naive_queries: int
    total_queries: int
    per_image: dict[str, int]
    mean_per_image: float
    ratio_vs_naive: float


def annotation_cost_report(
    image_ids: Sequence[str],
    tree: QuestionTree,
    oracle,
    initial_labels_by_image: Mapping[str, Mapping[str, str]] | None = None,
) -> CostReport:
    """Run the planner over a batch and compare against asking every category."""
    per_image: dict[str, int] = {}
    for img in image_ids:
        init = initial_labels_by_image.get(img) if initial_labels_by_image else None
        state = plan_and_label(img, tree, oracle, init)
        per_image[img] = state.queries_issued
    total = sum(per_image.values())
    k = len(tree.categories)
    naive = len(image_ids) * k
    return CostReport(
        images=len(image_ids),
        leaf_count=k,
        query_count=len(tree.queries),
        root_count=len(tree.roots),
        naive_queries=naive,
        total_queries=total,
        per_image=per_image,
        mean_per_image=total / len(image_ids) if image_ids else 0.0,
        ratio_vs_naive=total / naive if naive else 0.0,
    )


# ---------------------------------------------------------------------------
# Consensus labeling
# ---------------------------------------------------------------------------


class ConsensusTable:
    """Maps a (yes, no) vote tally to the posterior that the item is good."""

    def __init__(self, probs: Mapping[tuple[int, int], float]) -> None:
        for (y, n), p in probs.items():
            if y < 0 or n < 0:
                raise ValueError(f"negative tally ({y}, {n})")
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"posterior for ({y}, {n}) out of [0,1]: {p}")
        self._probs = dict(probs)

    @classmethod
    def from_prefix_samples(
        cls, samples: Iterable[tuple[Sequence[bool], bool]]
    ) -> "ConsensusTable":
        """Estimate the table by empirical frequency over a labeled seed sample.

        Each sample is a full vote sequence plus the item's true goodness.
        Every prefix tally of every sequence contributes one observation, so
        the sequential stopping rule can look up partial tallies too.
        """
        good: dict[tuple[int, int], int] = {}
        total: dict[tuple[int, int], int] = {}
        for votes, is_good in samples:
            y = n = 0
            for v in votes:
                if v:
                    y += 1
                else:
                    n += 1
                total[(y, n)] = total.get((y, n), 0) + 1
                if is_good:
                    good[(y, n)] = good.get((y, n), 0) + 1
        probs = {t: good.get(t, 0) / c for t, c in total.items()}
        return cls(probs)

    def lookup(self, yes: int, no: int) -> tuple[float, bool]:
        """Posterior for a tally; falls back to the nearest known tally.

        Returns (posterior, exact) where exact is False when the fallback was
        used. Nearest means minimal |dy| + |dn|, ties broken deterministically.
        """
        key = (yes, no)
        if key in self._probs:
            return self._probs[key], True
        if not self._probs:
            raise ValueError("empty confidence table")
        best = min(
            self._probs,
            key=lambda t: (abs(t[0] - yes) + abs(t[1] - no), t),
        )
        return self._probs[best], False


@dataclass(frozen=True)
class ConsensusDecision:
    status: str  # accept | reject | undecided
    votes_used: int
    posterior: float
    used_fallback: bool


def consensus_label(
    votes: Iterable[bool],
    table: ConsensusTable,
    threshold: float,
    vote_cap: int = 25,
) -> ConsensusDecision:
    """Sequential accept/reject decision over a vote stream.

    After each vote the tally's posterior is looked up; the item is accepted
    once the posterior reaches `threshold`, rejected once it drops to
    1 - threshold, and left undecided if the stream or the vote cap runs out
    first.
    """
    if not 0.5 < threshold <= 1.0:
        raise ValueError("threshold must be in (0.5, 1]")
    yes = no = 0
    posterior = 0.5
    fallback = False
    for vote in votes:
        if vote:
            yes += 1
        else:
            no += 1
        posterior, exact = table.lookup(yes, no)
        fallback = fallback or not exact
        if posterior >= threshold:
            return ConsensusDecision("accept", yes + no, posterior, fallback)
        if posterior <= 1.0 - threshold:
            return ConsensusDecision("reject", yes + no, posterior, fallback)
        if yes + no >= vote_cap:
            break
    return ConsensusDecision("undecided", yes + no, posterior, fallback)


# ---------------------------------------------------------------------------
# Bounding-box workflow
# ---------------------------------------------------------------------------

DrawFn = Callable[[tuple[BoundingBox, ...]], BoundingBox | None]
JudgeFn = Callable[[BoundingBox], bool]
CoverageFn = Callable[[tuple[BoundingBox, ...]], bool]


@dataclass(frozen=True)
class WorkflowResult:
    boxes: tuple[BoundingBox, ...]
    complete: bool
    budget_exhausted: bool
    draw_tasks: int
    quality_tasks: int
    coverage_tasks: int
    log: tuple[tuple, ...]


def run_box_workflow(
    draw: DrawFn,
    quality: JudgeFn,
    coverage: CoverageFn,
    initial_boxes: Sequence[BoundingBox] = (),
    budget: int = 1000,
) -> WorkflowResult:
    """Drive the draw / quality-verify / coverage-verify loop for one image.

    Each iteration draws one box, verifies it (a rejection triggers a redraw),
    and once a box is accepted asks whether every instance is now covered.
    When `initial_boxes` is nonempty the coverage question is asked first, so
    re-running the workflow on its own output adds nothing. `budget` caps the
    total number of worker tasks; exhausting it yields a flagged partial
    result.
    """
    boxes: list[BoundingBox] = list(initial_boxes)
    log: list[tuple] = []
    draws = checks = coverages = 0

    def spent() -> int:
        return draws + checks + coverages

    if boxes:
        coverages += 1
        done = coverage(tuple(boxes))
        log.append(("coverage", done))
        if done:
            return WorkflowResult(tuple(boxes), True, False, draws, checks, coverages, tuple(log))

    while spent() < budget:
        candidate = draw(tuple(boxes))
        draws += 1
        log.append(("draw", candidate))
        if candidate is None:
            # the drawing worker sees nothing left to box; trust a fresh
            # coverage check, otherwise the workflow is stuck
            coverages += 1
            done = coverage(tuple(boxes))
            log.append(("coverage", done))
            return WorkflowResult(
                tuple(boxes), done, not done, draws, checks, coverages, tuple(log)
            )
        checks += 1
        ok = quality(candidate)
        log.append(("quality", ok))
        if not ok:
            continue
        boxes.append(candidate)
        coverages += 1
        done = coverage(tuple(boxes))
        log.append(("coverage", done))
        if done:
            return WorkflowResult(tuple(boxes), True, False, draws, checks, coverages, tuple(log))

    return WorkflowResult(tuple(boxes), False, True, draws, checks, coverages, tuple(log))


def make_perfect_workers(
    truth_boxes: Sequence[BoundingBox],
) -> tuple[DrawFn, JudgeFn, CoverageFn]:
    """Workers that know the ground truth exactly.

    The drawer produces the first truth box not yet in the accepted set, the
    quality check accepts exactly the truth boxes, and the coverage check
    passes once every truth box is present.
    """
    truth = tuple(truth_boxes)

    def draw(accepted: tuple[BoundingBox, ...]) -> BoundingBox | None:
        have = set(accepted)
        for b in truth:
            if b not in have:
                return b
        return None

    def quality(box: BoundingBox) -> bool:
        return box in truth

    def coverage(accepted: tuple[BoundingBox, ...]) -> bool:
        have = set(accepted)
        return all(b in have for b in truth)

    return draw, quality, coverage


def make_noisy_workers(
    truth_boxes: Sequence[BoundingBox],
    rng: random.Random,
    bad_draw_prob: float = 0.0,
    quality_flip_prob: float = 0.0,
    coverage_flip_prob: float = 0.0,
    jitter: float = 0.3,
) -> tuple[DrawFn, JudgeFn, CoverageFn]:
    """Workers with independent per-task error rates, for calibration studies.

    A bad draw perturbs the intended truth box far enough to drop its overlap
    below one half; flipped judgements invert the perfect worker's answer.
    """
    truth = tuple(truth_boxes)
    perfect_draw, perfect_quality, perfect_coverage = make_perfect_workers(truth)

    def draw(accepted: tuple[BoundingBox, ...]) -> BoundingBox | None:
        intended = perfect_draw(accepted)
        if intended is None:
            return None
        if rng.random() < bad_draw_prob:
            shift = max(intended.width, intended.height) * (1.0 + jitter)
            return BoundingBox(
                intended.xmin + shift,
                intended.ymin + shift,
                intended.xmax + shift,
                intended.ymax + shift,
            )
        return intended

    def quality(box: BoundingBox) -> bool:
        verdict = any(iou(box, t) > 0.5 for t in truth)
        if rng.random() < quality_flip_prob:
            return not verdict
        return verdict

    def coverage(accepted: tuple[BoundingBox, ...]) -> bool:
        verdict = perfect_coverage(accepted)
        if rng.random() < coverage_flip_prob:
            return not verdict
        return verdict

    return draw, quality, coverage


# ---------------------------------------------------------------------------
# Overlap audits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OverlapFlag:
    image_id: str
    category_a: str
    index_a: int
    category_b: str
    index_b: int
    iou: float
    kind: str  # duplicate | ambiguous


def audit_overlaps(
    boxes_by_image: Mapping[str, Sequence[tuple[str, BoundingBox]]],
    same_category_threshold: float = 0.5,
    cross_category_threshold: float = 0.5,
) -> list[OverlapFlag]:
    """Flag annotation pairs that overlap suspiciously much.

    Same-category pairs above `same_category_threshold` are duplicate-box
    candidates; cross-category pairs above `cross_category_threshold` are
    ambiguous-label candidates. Both comparisons are strict (> threshold).
    Returns a review worklist ordered by image, then indices.
    """
    flags: list[OverlapFlag] = []
    for image_id in sorted(boxes_by_image):
        entries = list(boxes_by_image[image_id])
        for i in range(len(entries)):
            cat_i, box_i = entries[i]
            for j in range(i + 1, len(entries)):
                cat_j, box_j = entries[j]
                overlap = iou(box_i, box_j)
                if cat_i == cat_j:
                    if overlap > same_category_threshold:
                        flags.append(
                            OverlapFlag(image_id, cat_i, i, cat_j, j, overlap, "duplicate")
                        )
                elif overlap > cross_category_threshold:
                    flags.append(
                        OverlapFlag(image_id, cat_i, i, cat_j, j, overlap, "ambiguous")
                    )
    return flags
