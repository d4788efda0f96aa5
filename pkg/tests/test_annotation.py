import random

import pytest

from visbench.annotation import (
    ConsensusTable,
    QuestionTree,
    TruthfulOracle,
    annotation_cost_report,
    audit_overlaps,
    consensus_label,
    initial_labels_for_category,
    make_noisy_workers,
    make_perfect_workers,
    plan_and_label,
    run_box_workflow,
)

from conftest import box, layered_question_tree as layered_tree, random_box
from oracles import exhaustive_leaf_labels


def animal_tree() -> QuestionTree:
    return QuestionTree(
        [("animal", "dog_q"), ("animal", "cat_q")],
        {"dog_q": "dog", "cat_q": "cat"},
    )


# ---------------------------------------------------------------------------
# tree validation
# ---------------------------------------------------------------------------


def test_tree_requires_bijective_bindings():
    with pytest.raises(ValueError, match="childless"):
        QuestionTree([("a", "b"), ("a", "c")], {"b": "x"})
    with pytest.raises(ValueError, match="at most one leaf"):
        QuestionTree([("a", "b"), ("a", "c")], {"b": "x", "c": "x"})
    with pytest.raises(ValueError, match="cycle"):
        QuestionTree([("a", "b"), ("b", "a")], {})


def test_tree_categories_below():
    tree = animal_tree()
    assert tree.categories_below("animal") == {"dog", "cat"}
    assert tree.categories_below("dog_q") == {"dog"}


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------


def test_empty_image_costs_one_root_query():
    tree = animal_tree()
    oracle = TruthfulOracle(tree, {"im": set()})
    state = plan_and_label("im", tree, oracle)
    assert state.queries_issued == 1  # vs naive K=2
    assert state.labels == {"animal": "no", "dog_q": "no", "cat_q": "no"}


def test_dog_image_costs_three_queries():
    tree = animal_tree()
    oracle = TruthfulOracle(tree, {"im": {"dog"}})
    state = plan_and_label("im", tree, oracle)
    assert state.queries_issued == 3  # root yes, dog yes, cat no
    assert state.leaf_labels(tree) == {"dog": "yes", "cat": "no"}


def test_labels_match_exhaustive_querying(rng):
    for _ in range(40):
        tree = layered_tree(rng, n_roots=rng.randint(2, 4))
        cats = sorted(tree.categories)
        positives = set(rng.sample(cats, k=rng.randint(0, min(4, len(cats)))))
        oracle = TruthfulOracle(tree, {"im": positives})
        state = plan_and_label("im", tree, oracle)
        got = state.leaf_labels(tree)
        expected = {
            tree.leaf_bindings[q]: v
            for q, v in exhaustive_leaf_labels(tree.leaf_bindings, positives).items()
        }
        assert got == expected
        assert len(tree.roots) <= state.queries_issued <= len(tree.queries)


def test_all_positive_asks_every_query(rng):
    tree = layered_tree(rng)
    oracle = TruthfulOracle(tree, {"im": set(tree.categories)})
    state = plan_and_label("im", tree, oracle)
    assert state.queries_issued == len(tree.queries)


def test_no_is_permanent(rng):
    # once a query is answered or swept no, none of its descendants is asked
    for _ in range(20):
        tree = layered_tree(rng, n_roots=3)
        cats = sorted(tree.categories)
        positives = set(rng.sample(cats, k=rng.randint(0, 3)))
        oracle = TruthfulOracle(tree, {"im": positives})
        state = plan_and_label("im", tree, oracle)
        no_at: dict[str, int] = {}
        for step, event in enumerate(state.log):
            kind, q = event[0], event[1]
            if kind in ("ask", "sweep") and event[2] == "no":
                no_at.setdefault(q, step)
            if kind == "ask":
                for earlier_no, when in no_at.items():
                    if when < step:
                        assert q not in tree.descendants(earlier_no)


def test_initial_labels_skip_known_queries():
    tree = animal_tree()
    oracle = TruthfulOracle(tree, {"im": {"dog"}})
    init = initial_labels_for_category(tree, "dog")
    state = plan_and_label("im", tree, oracle, init)
    # animal and dog are preset; only the cat query costs
    assert state.queries_issued == 1
    assert state.leaf_labels(tree) == {"dog": "yes", "cat": "no"}


def test_inconsistent_initial_labels_rejected():
    tree = animal_tree()
    oracle = TruthfulOracle(tree, {"im": set()})
    with pytest.raises(ValueError, match="inconsistent"):
        plan_and_label("im", tree, oracle, {"animal": "no", "dog_q": "yes"})


def test_preset_no_sweeps_descendants():
    tree = animal_tree()
    oracle = TruthfulOracle(tree, {"im": {"dog"}})
    state = plan_and_label("im", tree, oracle, {"animal": "no"})
    assert state.queries_issued == 0
    assert state.labels == {"animal": "no", "dog_q": "no", "cat_q": "no"}


def test_multi_parent_child_asked_once(rng):
    # one mid question under two roots; both answer yes, child asked once
    tree = QuestionTree(
        [("r1", "shared"), ("r2", "shared")],
        {"shared": "cat"},
    )
    oracle = TruthfulOracle(tree, {"im": {"cat"}})
    state = plan_and_label("im", tree, oracle)
    asked = [e[1] for e in state.log if e[0] == "ask"]
    assert asked.count("shared") == 1
    assert state.queries_issued == 3


def test_cost_report_all_negative_is_root_count(rng):
    tree = layered_tree(rng)
    images = [f"im{i}" for i in range(10)]
    oracle = TruthfulOracle(tree, {i: set() for i in images})
    report = annotation_cost_report(images, tree, oracle)
    assert report.total_queries == 10 * len(tree.roots)
    assert report.naive_queries == 10 * len(tree.categories)


def test_cost_report_sparse_batch_beats_naive(rng):
    tree = layered_tree(rng, n_roots=5, mids_per_root=2, leaves_per_mid=4)
    cats = sorted(tree.categories)
    images = [f"im{i}" for i in range(50)]
    positives = {
        i: set(rng.sample(cats, k=rng.randint(0, 2))) for i in images
    }
    oracle = TruthfulOracle(tree, positives)
    report = annotation_cost_report(images, tree, oracle)
    assert report.ratio_vs_naive < 1.0


# ---------------------------------------------------------------------------
# consensus labeling
# ---------------------------------------------------------------------------


def unanimity_table(max_votes=6):
    probs = {}
    for y in range(max_votes + 1):
        for n in range(max_votes + 1 - y):
            if y + n == 0:
                continue
            probs[(y, n)] = y / (y + n) * (1 - 0.5 ** (y + n)) + 0.5 * 0.5 ** (y + n)
    probs[(5, 0)] = 0.99
    probs[(0, 5)] = 0.01
    return ConsensusTable(probs)


def test_accept_after_unanimous_yes():
    table = unanimity_table()
    decision = consensus_label([True] * 10, table, threshold=0.97)
    assert decision.status == "accept"
    assert decision.votes_used == 5
    assert decision.posterior == 0.99


def test_reject_mirrors_accept():
    table = unanimity_table()
    decision = consensus_label([False] * 10, table, threshold=0.97)
    assert decision.status == "reject"
    assert decision.votes_used == 5


def test_alternating_votes_hit_cap_undecided():
    table = unanimity_table(max_votes=30)
    votes = [True, False] * 20
    decision = consensus_label(votes, table, threshold=0.97, vote_cap=12)
    assert decision.status == "undecided"
    assert decision.votes_used == 12


def test_tally_outside_table_falls_back_to_nearest():
    # (3,0) onward are missing; the nearest known tally (2,0) keeps answering
    table = ConsensusTable({(1, 0): 0.6, (0, 1): 0.4, (2, 0): 0.9})
    decision = consensus_label([True] * 8, table, threshold=0.95, vote_cap=8)
    assert decision.status == "undecided"
    assert decision.used_fallback
    assert decision.posterior == 0.9
    # a fallback lookup can also drive the decision itself
    sparse = ConsensusTable({(4, 1): 0.99})
    decision = consensus_label([True] * 3, sparse, threshold=0.95)
    assert decision.status == "accept"
    assert decision.votes_used == 1
    assert decision.used_fallback


def test_stream_exhausted_undecided():
    table = unanimity_table()
    decision = consensus_label([True, True], table, threshold=0.99)
    assert decision.status == "undecided"
    assert decision.votes_used == 2


def test_table_from_prefix_samples():
    samples = [
        ([True, True], True),
        ([True, False], False),
        ([False, False], False),
        ([True, True], True),
    ]
    table = ConsensusTable.from_prefix_samples(samples)
    # tally (1,0) arises in three sequences; two of those items are good
    assert table.lookup(1, 0) == (2 / 3, True)
    assert table.lookup(2, 0) == (1.0, True)
    assert table.lookup(0, 1) == (0.0, True)
    assert table.lookup(1, 1) == (0.0, True)


def test_consensus_montecarlo_precision_tracks_table():
    # workers flip the true judgement 10% of the time; the accepted set's
    # empirical precision must stay near the table's promised posterior
    rng = random.Random(99)
    flip = 0.10
    p_good = 0.7
    threshold = 0.9

    def vote(is_good):
        honest = is_good
        return (not honest) if rng.random() < flip else honest

    seed_samples = []
    for _ in range(4000):
        is_good = rng.random() < p_good
        seed_samples.append(([vote(is_good) for _ in range(10)], is_good))
    table = ConsensusTable.from_prefix_samples(seed_samples)

    accepted_good = accepted = 0
    posteriors = []
    for _ in range(500):
        is_good = rng.random() < p_good
        votes = (vote(is_good) for _ in range(25))
        decision = consensus_label(votes, table, threshold=threshold, vote_cap=25)
        if decision.status == "accept":
            accepted += 1
            posteriors.append(decision.posterior)
            if is_good:
                accepted_good += 1
    assert accepted > 100
    precision = accepted_good / accepted
    promised = sum(posteriors) / len(posteriors)
    assert precision >= promised - 0.03


# ---------------------------------------------------------------------------
# box workflow
# ---------------------------------------------------------------------------


def test_perfect_workflow_counts_forced():
    truth = [box(0, 0, 10, 10), box(20, 20, 40, 40), box(50, 50, 80, 90)]
    draw, quality, coverage = make_perfect_workers(truth)
    result = run_box_workflow(draw, quality, coverage)
    assert result.complete
    assert set(result.boxes) == set(truth)
    assert (result.draw_tasks, result.quality_tasks, result.coverage_tasks) == (3, 3, 3)


def test_rejecting_quality_doubles_draw_tasks():
    truth = [box(0, 0, 10, 10), box(20, 20, 40, 40)]
    draw, quality, coverage = make_perfect_workers(truth)
    rejected = set()

    def picky_quality(b):
        if b not in rejected:
            rejected.add(b)
            return False
        return quality(b)

    result = run_box_workflow(draw, picky_quality, coverage)
    assert result.complete
    assert result.draw_tasks == 4  # each instance drawn twice
    assert result.quality_tasks == 4
    assert result.coverage_tasks == 2


def test_workflow_idempotent_on_own_output():
    truth = [box(0, 0, 10, 10), box(20, 20, 40, 40)]
    draw, quality, coverage = make_perfect_workers(truth)
    first = run_box_workflow(draw, quality, coverage)
    again = run_box_workflow(draw, quality, coverage, initial_boxes=first.boxes)
    assert again.complete
    assert again.boxes == first.boxes
    assert again.draw_tasks == 0


def test_workflow_budget_exhaustion_flagged():
    truth = [box(0, 0, 10, 10)]
    draw, _, coverage = make_perfect_workers(truth)
    result = run_box_workflow(draw, lambda b: False, coverage, budget=10)
    assert not result.complete
    assert result.budget_exhausted
    assert result.boxes == ()


def test_noisy_workflow_near_reported_operating_point():
    # error rates tuned so that ~97.9% of images end up fully covered and
    # ~99.2% of accepted boxes are accurate; simulation should land nearby
    rng = random.Random(42)
    images = 800
    covered = 0
    accurate = 0
    total_boxes = 0
    for i in range(images):
        truth = [random_box(rng, frame=500, max_side=120) for _ in range(rng.randint(1, 3))]
        draw, quality, coverage = make_noisy_workers(
            truth,
            rng,
            bad_draw_prob=0.08,
            quality_flip_prob=0.08,
            coverage_flip_prob=0.008,
        )
        result = run_box_workflow(draw, quality, coverage, budget=200)
        truth_set = set(truth)
        if truth_set <= set(result.boxes):
            covered += 1
        for b in result.boxes:
            total_boxes += 1
            if b in truth_set:
                accurate += 1
    coverage_rate = covered / images
    accuracy_rate = accurate / total_boxes
    assert coverage_rate == pytest.approx(0.979, abs=0.02)
    assert accuracy_rate == pytest.approx(0.992, abs=0.008)


# ---------------------------------------------------------------------------
# overlap audits
# ---------------------------------------------------------------------------


def test_identical_same_category_boxes_flagged_duplicate():
    flags = audit_overlaps({"im": [("a", box(0, 0, 10, 10)), ("a", box(0, 0, 10, 10))]})
    assert len(flags) == 1
    assert flags[0].kind == "duplicate"
    assert flags[0].iou == 1.0


def test_disjoint_boxes_not_flagged():
    flags = audit_overlaps({"im": [("a", box(0, 0, 10, 10)), ("b", box(50, 50, 60, 60))]})
    assert flags == []


def test_half_overlap_is_not_flagged():
    # strictly-more-than comparison: exactly 0.5 passes the audit
    a = box(0, 0, 20, 10)
    b = box(0, 0, 10, 10)  # IOU = 100/200 = 0.5
    assert audit_overlaps({"im": [("a", a), ("a", b)]}) == []


def test_cross_category_threshold_configurable():
    a = box(0, 0, 10, 10)
    b = box(1, 0, 11, 10)  # IOU = 9/11
    flags = audit_overlaps({"im": [("x", a), ("y", b)]}, cross_category_threshold=0.9)
    assert flags == []
    flags = audit_overlaps({"im": [("x", a), ("y", b)]}, cross_category_threshold=0.5)
    assert len(flags) == 1 and flags[0].kind == "ambiguous"


def test_audit_matches_quadratic_oracle(rng):
    from visbench.geometry import iou as lib_iou

    for _ in range(20):
        entries = [
            (rng.choice("ab"), random_box(rng, frame=60, max_side=40))
            for _ in range(rng.randint(0, 8))
        ]
        flags = audit_overlaps({"im": entries})
        expected = set()
        for i in range(len(entries)):
            for j in range(i + 1, len(entries)):
                ci, bi = entries[i]
                cj, bj = entries[j]
                v = lib_iou(bi, bj)
                if ci == cj and v > 0.5:
                    expected.add((i, j, "duplicate"))
                elif ci != cj and v > 0.5:
                    expected.add((i, j, "ambiguous"))
        got = {(f.index_a, f.index_b, f.kind) for f in flags}
        assert got == expected
