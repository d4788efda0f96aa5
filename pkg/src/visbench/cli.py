"""Operator command line: evaluate, rank, bootstrap, analyze, simulate, serve.

Every subcommand is deterministic given identical inputs and seeds. JSON is
the canonical machine output (sorted keys); table-shaped reports are also
emitted as CSV. Stdout carries a short human summary; files carry the data.

Exit codes: 0 success, 1 validation / usage error, 2 internal error.
"""
from __future__ import annotations

import csv
import json
import random
import sys
import traceback
from pathlib import Path

import click

from . import __version__
from .annotation import TruthfulOracle, annotation_cost_report, audit_overlaps
from .bootstrap import (
    BootstrapConfig,
    bootstrap_map,
    bootstrap_mean_metric,
    bootstrap_until_converged,
    check_convergence,
)
from .classification import evaluate_classification
from .detection import DetectionCache, DetectionReport, evaluate_detection, rank_teams
from .ingest import (
    CLASSIFICATION,
    DETECTION,
    LOCALIZATION,
    FormatError,
    load_ground_truth,
    load_hierarchy,
    load_question_tree,
    parse_class_scores,
    parse_property_bins,
    parse_submission,
    parse_window_rankings,
)
from .localization import localization_error
from .stats import bin_score_ci, compute_class_stats, normalize_bins_by_scale, scale_accuracy_correlation


def _write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


@click.group()
@click.version_option(version=__version__)
def cli() -> None:
    """Evaluation engine for image classification, localization and detection."""


truth_opt = click.option(
    "--truth", required=True, type=click.Path(exists=True, file_okay=False),
    help="Ground-truth directory.",
)
sub_opt = click.option(
    "--sub", required=True, type=click.Path(exists=True, dir_okay=False),
    help="Submission text file.",
)
out_opt = click.option("--out", required=True, type=click.Path(), help="Output JSON path.")
team_opt = click.option("--team", default="anonymous", show_default=True)


@cli.command("eval-cls")
@truth_opt
@sub_opt
@out_opt
@team_opt
@click.option("--hierarchy", type=click.Path(exists=True, dir_okay=False),
              help="Edge list for hierarchical error (parent<TAB>child).")
@click.option("--leaves", type=click.Path(exists=True, dir_okay=False),
              help="Leaf manifest accompanying --hierarchy.")
@click.option("--exclude-blacklisted", is_flag=True, default=False,
              help="Drop blacklisted images from the denominator.")
def eval_cls(truth, sub, out, team, hierarchy, leaves, exclude_blacklisted):
    """Top-1/top-5 flat error, optionally hierarchical error."""
    store = load_ground_truth(truth, CLASSIFICATION)
    record = parse_submission(Path(sub).read_bytes(), CLASSIFICATION, store, team=team, path=sub)
    graph = load_hierarchy(hierarchy, leaves) if hierarchy else None
    report = evaluate_classification(
        store, record, graph=graph, exclude_blacklisted=exclude_blacklisted
    )
    _write_json(out, report.to_dict())
    click.echo(
        f"evaluated {report.evaluated_count} images: "
        + " ".join(f"top-{k} error {v:.4f}" for k, v in sorted(report.top_k_error.items()))
    )


@cli.command("eval-loc")
@truth_opt
@sub_opt
@out_opt
@team_opt
@click.option("--iou-threshold", default=0.5, show_default=True,
              help="A prediction's box must overlap a truth instance strictly above this.")
def eval_loc(truth, sub, out, team, iou_threshold):
    """Single-object localization error with the difficult-image blacklist."""
    store = load_ground_truth(truth, LOCALIZATION)
    record = parse_submission(Path(sub).read_bytes(), LOCALIZATION, store, team=team, path=sub)
    report = localization_error(store, record, iou_threshold=iou_threshold)
    _write_json(out, report.to_dict())
    click.echo(
        f"evaluated {report.evaluated_count} images "
        f"({report.blacklisted_count} blacklisted): error {report.top5_error:.4f}"
    )


@cli.command("eval-det")
@truth_opt
@sub_opt
@out_opt
@team_opt
@click.option("--curves", is_flag=True, default=False, help="Embed full PR curves.")
@click.option("--cache/--no-cache", "with_cache", default=True, show_default=True,
              help="Embed the per-image matching cache used by `bootstrap`.")
@click.option("--threads", default=1, show_default=True)
def eval_det(truth, sub, out, team, curves, with_cache, threads):
    """Greedy matching, per-category AP and mAP."""
    store = load_ground_truth(truth, DETECTION)
    record = parse_submission(Path(sub).read_bytes(), DETECTION, store, team=team, path=sub)
    report = evaluate_detection(
        store, record, include_curves=curves, include_cache=with_cache, threads=threads
    )
    _write_json(out, report.to_dict())
    click.echo(
        f"mAP {report.mean_ap:.4f} over {len(report.ap_per_category)} categories "
        f"({len(report.zero_truth_categories)} with zero truth excluded)"
    )


@cli.command("rank")
@click.option("--report", "reports", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Detection report JSON; repeat per team.")
@out_opt
def rank(reports, out):
    """Per-category winner tallies across detection reports."""
    table: dict[str, DetectionReport] = {}
    for path in reports:
        raw = _read_json(path)
        if raw.get("task") != DETECTION:
            raise click.UsageError(f"{path}: not a detection report")
        team = raw.get("team") or Path(path).stem
        if team in table:
            raise click.UsageError(f"duplicate team {team!r}")
        table[team] = DetectionReport(
            team=team,
            ap_per_category=dict(raw["ap_per_category"]),
            mean_ap=raw["map"],
            zero_truth_categories=tuple(raw.get("zero_truth_categories", ())),
        )
    result = rank_teams(table)
    _write_json(out, result.to_dict())
    top = result.ranking[0]
    click.echo(f"winner: {top} with {result.wins_per_team[top]} categories")


@cli.command("bootstrap")
@click.option("--report", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Report JSON produced by eval-cls / eval-loc / eval-det.")
@click.option("--rounds", default=20000, show_default=True)
@click.option("--alpha", default=0.0005, show_default=True,
              help="Tail fraction per side (0.0005 = 99.9% interval).")
@click.option("--seed", default=0, show_default=True)
@click.option("--tol", default=0.0, show_default=True,
              help="If > 0, double rounds until both endpoints move less than this.")
@click.option("--out", type=click.Path(),
              help="Write here instead of appending to the report in place.")
def bootstrap_cmd(report, rounds, alpha, seed, tol, out):
    """Append a resampling confidence interval to an existing report."""
    raw = _read_json(report)
    cfg = BootstrapConfig(rounds=rounds, alpha=alpha, seed=seed,
                          convergence_tol=tol if tol > 0 else 1e-4)
    task = raw.get("task")
    if task == DETECTION:
        if "cache" not in raw:
            raise click.UsageError(
                "report has no matching cache; re-run eval-det with --cache"
            )
        cache = DetectionCache.from_dict(raw["cache"])
        run = lambda c: bootstrap_map(cache, c)  # noqa: E731
        metric = "map"
    elif task == CLASSIFICATION:
        scores = {i: float(v) for i, v in raw["per_image_flat"]["5"].items()}
        run = lambda c: bootstrap_mean_metric(scores, c)  # noqa: E731
        metric = "top5_error"
    elif task == LOCALIZATION:
        scores = {i: float(v) for i, v in raw["per_image"].items()}
        run = lambda c: bootstrap_mean_metric(scores, c)  # noqa: E731
        metric = "top5_error"
    else:
        raise click.UsageError(f"unrecognized report task {task!r}")
    if tol > 0:
        ci, history = bootstrap_until_converged(run, cfg)
        converged = check_convergence(history, tol)
    else:
        ci, converged = run(cfg), None
    block = {
        "metric": metric,
        "alpha": alpha,
        "seed": seed,
        **ci.to_dict(),
    }
    if converged is not None:
        block["converged"] = converged
    raw["bootstrap"] = block
    _write_json(out or report, raw)
    click.echo(
        f"{metric}: {ci.point:.4f} in [{ci.lower:.4f}, {ci.upper:.4f}] "
        f"({ci.rounds_used} rounds)"
    )


@cli.command("stats")
@truth_opt
@click.option("--task", default=DETECTION, show_default=True,
              type=click.Choice([LOCALIZATION, DETECTION]))
@click.option("--out-prefix", required=True, type=click.Path(),
              help="Writes <prefix>.json and <prefix>.csv (+ <prefix>_bins.json).")
@click.option("--windows", type=click.Path(exists=True, dir_okay=False),
              help="Ranked objectness windows for the clutter metric.")
@click.option("--gap", default=0.0, show_default=True,
              help="Adjacency gap for the neighbor count.")
@click.option("--scores", type=click.Path(exists=True, dir_okay=False),
              help="Per-class scores (`category score`) for correlation and bins.")
@click.option("--properties", type=click.Path(exists=True, dir_okay=False),
              help="Property bins (`category<TAB>property<TAB>bin`).")
@click.option("--tol", default=0.01, show_default=True,
              help="Scale-normalization tolerance for property bins.")
@click.option("--min-bin-size", default=5, show_default=True)
@click.option("--rounds", default=2000, show_default=True)
@click.option("--alpha", default=0.025, show_default=True)
@click.option("--seed", default=0, show_default=True)
def stats_cmd(truth, task, out_prefix, windows, gap, scores, properties, tol,
              min_bin_size, rounds, alpha, seed):
    """Per-class difficulty metrics and scale-normalized property bins."""
    store = load_ground_truth(truth, task)
    window_map = None
    if windows:
        window_map = parse_window_rankings(Path(windows).read_bytes(), path=windows)
    table = compute_class_stats(store, windows=window_map, gap=gap)

    payload: dict = {"classes": {c: s.to_dict() for c, s in sorted(table.items())}}
    score_map = None
    if scores:
        score_map = parse_class_scores(Path(scores).read_bytes(), path=scores)
        try:
            payload["scale_score_correlation"] = scale_accuracy_correlation(table, score_map)
        except ValueError as exc:
            payload["scale_score_correlation"] = None
            payload["correlation_flag"] = str(exc)
    _write_json(f"{out_prefix}.json", payload)

    with open(f"{out_prefix}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["category", "avg_scale", "instances_per_positive_image",
             "neighbors_per_instance", "cpl", "clutter", "flags"]
        )
        for c in sorted(table):
            s = table[c]
            writer.writerow(
                [c, s.avg_scale, s.instances_per_positive_image,
                 s.neighbors_per_instance,
                 "" if s.cpl is None else s.cpl,
                 "" if s.clutter is None else s.clutter,
                 ";".join(s.flags)]
            )

    if properties:
        if score_map is None:
            raise click.UsageError("--properties requires --scores")
        bins = parse_property_bins(Path(properties).read_bytes(), path=properties)
        scales = {c: s.avg_scale for c, s in table.items()}
        cfg = BootstrapConfig(rounds=rounds, alpha=alpha, seed=seed)
        bins_payload = {}
        for prop, assignment in sorted(bins.items()):
            known = {c: b for c, b in assignment.items() if c in scales and c in score_map}
            norm = normalize_bins_by_scale(known, scales, tol, min_bin_size)
            ci = bin_score_ci(known, scales, score_map, tol, cfg, min_bin_size)
            bins_payload[prop] = {
                "normalization": norm.to_dict(),
                "scores": {b: v.to_dict() for b, v in sorted(ci.items())},
            }
        _write_json(f"{out_prefix}_bins.json", bins_payload)

    click.echo(f"wrote {out_prefix}.json / .csv for {len(table)} categories")


@cli.command("annotate-sim")
@click.option("--tree", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Question tree (`edge p c` / `leaf q cat` lines).")
@click.option("--images", "n_images", default=1000, show_default=True)
@click.option("--sparsity", default=0.02, show_default=True,
              help="Per-category presence probability per image.")
@click.option("--noise", default=0.0, show_default=True,
              help="Per-query answer flip probability.")
@click.option("--seed", default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON file providing images/sparsity/noise/seed; flags override it.")
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def annotate_sim(ctx, tree, n_images, sparsity, noise, seed, config_path, out):
    """Simulate query-efficient full-image labeling over random sparse truth."""
    if config_path:
        file_cfg = _read_json(config_path)
        unknown = set(file_cfg) - {"images", "sparsity", "noise", "seed"}
        if unknown:
            raise click.UsageError(f"unknown config keys {sorted(unknown)}")
        defaults = {"images": n_images, "sparsity": sparsity, "noise": noise, "seed": seed}
        explicit = {
            p: ctx.get_parameter_source(name) == click.core.ParameterSource.COMMANDLINE
            for p, name in (("images", "n_images"), ("sparsity", "sparsity"),
                            ("noise", "noise"), ("seed", "seed"))
        }
        merged = {
            k: defaults[k] if explicit[k] else file_cfg.get(k, defaults[k])
            for k in defaults
        }
        n_images = int(merged["images"])
        sparsity = float(merged["sparsity"])
        noise = float(merged["noise"])
        seed = int(merged["seed"])
    qtree = load_question_tree(tree)
    rng = random.Random(seed)
    cats = sorted(qtree.categories)
    image_ids = [f"im{i:06d}" for i in range(n_images)]
    positives = {
        img: frozenset(c for c in cats if rng.random() < sparsity) for img in image_ids
    }
    oracle = TruthfulOracle(qtree, positives, flip_prob=noise, seed=seed + 1)
    report = annotation_cost_report(image_ids, qtree, oracle)
    payload = {
        "config": {
            "tree": str(tree),
            "images": n_images,
            "sparsity": sparsity,
            "noise": noise,
            "seed": seed,
        },
        "queries": report.query_count,
        "roots": report.root_count,
        "categories": report.leaf_count,
        "naive_queries": report.naive_queries,
        "total_queries": report.total_queries,
        "mean_queries_per_image": report.mean_per_image,
        "ratio_vs_naive": report.ratio_vs_naive,
        "per_image": report.per_image,
    }
    _write_json(out, payload)
    click.echo(
        f"{report.total_queries} queries for {n_images} images "
        f"({report.ratio_vs_naive:.3f} of naive {report.naive_queries})"
    )


@cli.command("audit")
@truth_opt
@click.option("--task", default=DETECTION, show_default=True,
              type=click.Choice([LOCALIZATION, DETECTION]))
@click.option("--out", required=True, type=click.Path(), help="CSV review worklist.")
@click.option("--same-threshold", default=0.5, show_default=True)
@click.option("--cross-threshold", default=0.5, show_default=True)
def audit(truth, task, out, same_threshold, cross_threshold):
    """Flag duplicate-looking and cross-category overlapping truth boxes."""
    store = load_ground_truth(truth, task)
    per_image: dict[str, list] = {}
    for (image_id, category), boxes in sorted(store.boxes.items()):
        for b in boxes:
            per_image.setdefault(image_id, []).append((category, b))
    flags = audit_overlaps(per_image, same_threshold, cross_threshold)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["image_id", "kind", "category_a", "index_a", "category_b", "index_b", "iou"]
        )
        for f in flags:
            writer.writerow(
                [f.image_id, f.kind, f.category_a, f.index_a, f.category_b, f.index_b, f.iou]
            )
    dup = sum(1 for f in flags if f.kind == "duplicate")
    click.echo(f"{dup} duplicate candidates, {len(flags) - dup} ambiguous pairs -> {out}")


@cli.command("serve")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Service config JSON (truth dirs, token file, storage, caps).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(config_path, host, port):
    """Run the submission server."""
    import uvicorn

    from .service import ServiceConfig, create_app

    app = create_app(ServiceConfig.from_file(config_path))
    uvicorn.run(app, host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except (FormatError, ValueError, KeyError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception:  # noqa: BLE001 - anything else is an internal bug
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
