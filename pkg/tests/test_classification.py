import itertools

import pytest

from visbench.classification import (
    evaluate_classification,
    hierarchical_error,
    top_k_error,
)
from visbench.hierarchy import SynsetGraph

from conftest import make_cls_store, make_cls_sub, random_dag
from oracles import lca_cost_ref


def test_truth_at_rank_five_counts():
    store = make_cls_store({"im1": "e"}, categories=["a", "b", "c", "d", "e"])
    sub = make_cls_sub("t", {"im1": ["a", "b", "c", "d", "e"]})
    err5, per5 = top_k_error(store, sub, 5)
    assert err5 == 0.0 and per5["im1"] == 0
    err1, per1 = top_k_error(store, sub, 1)
    assert err1 == 1.0 and per1["im1"] == 1


def test_all_wrong_is_one():
    labels = {f"im{i}": "truth" for i in range(10)}
    store = make_cls_store(labels, categories=["truth", "w1", "w2", "w3", "w4", "w5"])
    sub = make_cls_sub("t", {i: ["w1", "w2", "w3", "w4", "w5"] for i in labels})
    err, _ = top_k_error(store, sub, 5)
    assert err == 1.0


def test_exact_miss_count():
    # 1000 images, exactly 67 misses at k=5
    labels = {f"im{i:04d}": "truth" for i in range(1000)}
    store = make_cls_store(labels, categories=["truth", "wrong"])
    preds = {}
    for i, img in enumerate(sorted(labels)):
        preds[img] = ["wrong"] * 5 if i < 67 else ["wrong", "truth"]
    sub = make_cls_sub("t", preds)
    err, _ = top_k_error(store, sub, 5)
    assert err == pytest.approx(0.067)


def test_missing_image_is_an_error():
    store = make_cls_store({"im1": "a", "im2": "a"})
    sub = make_cls_sub("t", {"im1": ["a"]})
    with pytest.raises(ValueError, match="no predictions"):
        top_k_error(store, sub, 5)


def test_top1_at_least_top5():
    store = make_cls_store({"im1": "a", "im2": "b", "im3": "c"})
    sub = make_cls_sub(
        "t", {"im1": ["b", "a"], "im2": ["b"], "im3": ["a", "b", "c"]}
    )
    report = evaluate_classification(store, sub)
    assert report.top_k_error[1] >= report.top_k_error[5]


def test_permuting_predictions_keeps_top5(rng):
    labels = {f"im{i}": rng.choice("abc") for i in range(20)}
    store = make_cls_store(labels, categories=list("abcde"))
    base = {img: rng.sample("abcde", 5) for img in labels}
    err, _ = top_k_error(store, make_cls_sub("t", base), 5)
    for _ in range(5):
        shuffled = {img: rng.sample(p, len(p)) for img, p in base.items()}
        err2, _ = top_k_error(store, make_cls_sub("t", shuffled), 5)
        assert err2 == err


def test_blacklist_switch_default_off():
    labels = {"im1": "a", "im2": "a"}
    store = make_cls_store(labels, blacklisted=["im2"])
    sub = make_cls_sub("t", {"im1": ["a"], "im2": ["b"]})
    err_all, _ = top_k_error(store, sub, 5)
    assert err_all == 0.5
    err_bl, per = top_k_error(store, sub, 5, exclude_blacklisted=True)
    assert err_bl == 0.0
    assert "im2" not in per


# ---------------------------------------------------------------------------
# hierarchical error
# ---------------------------------------------------------------------------


def sibling_graph():
    return SynsetGraph([("parent", "dog"), ("parent", "cat")])


def test_correct_leaf_any_rank_costs_zero():
    g = sibling_graph()
    store = make_cls_store({"im1": "dog"}, categories=["dog", "cat"])
    sub = make_cls_sub("t", {"im1": ["cat", "cat", "cat", "cat", "dog"]})
    mean, per, _ = hierarchical_error(store, sub, g)
    assert mean == 0.0 and per["im1"] == 0


def test_wrong_sibling_costs_one():
    g = sibling_graph()
    store = make_cls_store({"im1": "dog"}, categories=["dog", "cat"])
    sub = make_cls_sub("t", {"im1": ["cat"]})
    mean, per, _ = hierarchical_error(store, sub, g)
    assert mean == 1.0 and per["im1"] == 1


def test_label_outside_graph_errors():
    g = sibling_graph()
    store = make_cls_store({"im1": "dog"}, categories=["dog", "ghost"])
    sub = make_cls_sub("t", {"im1": ["ghost"]})
    with pytest.raises(KeyError):
        hierarchical_error(store, sub, g)


def test_non_leaf_labels_flagged():
    g = sibling_graph()
    store = make_cls_store({"im1": "dog"}, categories=["dog", "parent"])
    sub = make_cls_sub("t", {"im1": ["parent"]})
    mean, _, non_leaf = hierarchical_error(store, sub, g)
    assert non_leaf == ("parent",)
    # cost against an internal node is its own height
    assert mean == 1.0


def test_hierarchical_matches_bruteforce_on_random_dag(rng):
    edges, nodes = random_dag(rng, 20)
    g = SynsetGraph(edges)
    cats = nodes
    labels = {f"im{i}": rng.choice(cats) for i in range(30)}
    store = make_cls_store(labels, categories=cats)
    preds = {img: [rng.choice(cats) for _ in range(5)] for img in labels}
    sub = make_cls_sub("t", preds)
    mean, per, _ = hierarchical_error(store, sub, g, k=5)
    for img in labels:
        expected = min(
            lca_cost_ref(edges, nodes, c, labels[img]) for c in preds[img]
        )
        assert per[img] == expected
    assert mean == pytest.approx(sum(per.values()) / len(per))


def test_flat_correct_implies_hierarchical_zero(rng):
    edges, nodes = random_dag(rng, 15)
    g = SynsetGraph(edges)
    leaves = [n for n in nodes if g.is_leaf(n)]
    labels = {f"im{i}": rng.choice(leaves) for i in range(50)}
    store = make_cls_store(labels, categories=nodes)
    preds = {
        img: list(
            itertools.islice(
                itertools.chain([labels[img]], (rng.choice(nodes) for _ in range(4))), 5
            )
        )
        for img in labels
    }
    sub = make_cls_sub("t", preds)
    err, _ = top_k_error(store, sub, 5)
    assert err == 0.0
    mean, per, _ = hierarchical_error(store, sub, g, k=5)
    assert mean == 0.0


def test_report_to_dict_round_shape():
    g = sibling_graph()
    store = make_cls_store({"im1": "dog", "im2": "cat"})
    sub = make_cls_sub("t", {"im1": ["dog"], "im2": ["dog", "cat"]})
    report = evaluate_classification(store, sub, graph=g)
    d = report.to_dict()
    assert d["task"] == "classification"
    assert d["top_k_error"]["1"] == 0.5
    assert d["top_k_error"]["5"] == 0.0
    assert d["hierarchical_error"] == 0.0
    assert d["evaluated_count"] == 2
