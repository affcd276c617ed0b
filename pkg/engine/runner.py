from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from engine.checkpoint import load_checkpoint, save_checkpoint
from engine.config_loader import RunConfig, worker_threads
from engine.data import (
    GraphDataset,
    compute_edge_stats,
    dataset_summary,
    load_dataset,
    load_tu,
    make_folds,
    read_split_ids,
    sample_from_graph,
    save_dataset,
    split_by_fold,
    split_by_ids,
)
from engine.errors import ConfigError, FormatError, SemGraphError, ShapeError, TrainingAborted
from engine.gnn import EDGE_SCHEMES, NORMALIZATIONS, EdgeStats, ModelConfig, ModelParams
from engine.history import create_run_directory, file_sha256, run_logger, write_metadata
from engine.partition import build_graph
from engine.pointcloud import load_cloud, save_cloud, subsample
from engine.registration import register_best_template, transfer_labels
from engine.reports import (
    format_histogram,
    node_histogram,
    summarize_folds,
    write_ablation,
    write_annotate_report,
    write_confusion,
    write_epoch_metrics,
    write_eval,
    write_node_histogram,
    write_xval,
)
from engine.seeding import stream_key
from engine.synthetic import graph_families, write_cloud_corpus
from engine.trainer import evaluate, train

from version import DATASET_FORMAT_VERSION, ENGINE_VERSION

CLOUD_SUFFIXES = {".xyz", ".txt", ".pts", ".off"}
ABLATION_GRIDS = ("edge_scheme", "normalization", "both", "variants")


# ---------------- SHARED HELPERS ----------------

def _list_clouds(directory):
    return sorted(p for p in Path(directory).iterdir() if p.is_file() and p.suffix.casefold() in CLOUD_SUFFIXES)


def _category_dirs(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"Directory not found: {directory}")
    return sorted(d for d in directory.iterdir() if d.is_dir())


def _cloud_jobs(directory):
    """(category, path) for every cloud under <directory>/<category>/, plus loose files that have no category."""
    jobs = [(d.name, p) for d in _category_dirs(directory) for p in _list_clouds(d)]
    loose = _list_clouds(directory)
    return jobs, loose


def _run_jobs(work, jobs, threads):
    """Apply `work` to every job; returns (job, value, error) triples in job order."""
    def attempt(job):
        try:
            return job, work(job), None
        except (SemGraphError, ValueError, OSError) as e:
            return job, None, e

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(attempt, jobs))
    return [attempt(job) for job in jobs]


def _load_graphs(path, tu_name=None, num_node_labels=None) -> GraphDataset:
    if tu_name:
        return load_tu(path, tu_name, num_node_labels)
    return load_dataset(path)


def _input_hash(path):
    path = Path(path)
    return file_sha256(path) if path.is_file() else None


def model_config_for(cfg: RunConfig, ds: GraphDataset) -> ModelConfig:
    """Model config for `ds`. One-hot inputs carry no geometry, so their layer-0 edges default to 1."""
    if ds.feature_kind == "one_hot" and cfg.get("input_edge_scheme") is None:
        return cfg.model_config(input_edge_scheme="default_one")
    return cfg.model_config()


def _log_edge_schemes(log, config: ModelConfig):
    if config.first_edge_scheme != config.edge_scheme:
        log(f"Edge features: {config.first_edge_scheme} at the input layer, {config.edge_scheme} after")


def _edge_stats_for(config: ModelConfig, ds: GraphDataset):
    if "gaussian_input" in (config.edge_scheme, config.first_edge_scheme):
        return compute_edge_stats(ds)
    return None


def _checkpoint_meta(config, ds: GraphDataset, stats, cfg: RunConfig):
    return {
        "model": config.to_dict(),
        "in_features": ds.feature_width,
        "num_classes": ds.num_classes,
        "class_names": list(ds.class_names),
        "feature_kind": ds.feature_kind,
        "edge_stats": {"mu": stats.mu, "sigma": stats.sigma} if stats else None,
        "epochs": cfg.epochs,
        "batch": cfg.batch,
        "lr": cfg.lr,
    }


def load_model(path):
    """Rebuild (ModelParams, meta, EdgeStats | None) from a training checkpoint."""
    arrays, meta = load_checkpoint(path)
    try:
        config = ModelConfig.from_dict(meta["model"])
        in_features, num_classes = meta["in_features"], meta["num_classes"]
    except KeyError as e:
        raise FormatError(f"checkpoint metadata lacks {e}", path=path)
    params = ModelParams(arrays, config, in_features, num_classes)
    stats = EdgeStats(**meta["edge_stats"]) if meta.get("edge_stats") else None
    return params, meta, stats


# ---------------- ANNOTATE ----------------

def _load_templates(cfg: RunConfig, template_dir):
    templates = {}
    for c_idx, cat_dir in enumerate(_category_dirs(template_dir)):
        clouds = []
        for t_idx, path in enumerate(_list_clouds(cat_dir)):
            cloud = load_cloud(path, cfg.cloud_format, category=cat_dir.name)
            if not cloud.is_labeled:
                raise ConfigError(f"Template {path} has no part labels")
            small = subsample(cloud, cfg.subsample, stream_key(cfg.seed, "subsample", 0, c_idx, t_idx))
            clouds.append((cloud, small))
        if clouds:
            templates[cat_dir.name] = clouds
    if not templates:
        raise ConfigError(f"No labeled templates found under {template_dir}")
    return templates


def cmd_annotate(cfg: RunConfig, source_dir, template_dir, out_dir=None, run_name=None, echo=print):
    """
    Label every cloud under source_dir/<category>/ by registering it against
    the templates of its category and copying labels from the best fit.
    """
    templates = _load_templates(cfg, template_dir)
    jobs, loose = _cloud_jobs(source_dir)

    run_dir = create_run_directory("annotate", run_name or cfg.run_name, out_dir)
    log = run_logger(run_dir, echo)
    labeled_dir = run_dir / "labeled"
    log(f"Annotating {len(jobs)} clouds against {sum(len(v) for v in templates.values())} templates")

    def work(job):
        file_index, (category, path) = job
        if category not in templates:
            raise ConfigError(f"no template for category {category!r}")
        source = load_cloud(path, cfg.cloud_format, category=category)
        small = subsample(source, cfg.subsample, stream_key(cfg.seed, "subsample", 1, file_index))
        candidates = templates[category]
        best, result = register_best_template(
            small, [s for _, s in candidates], max_iters=cfg.max_iters, tol=cfg.tol
        )
        template = candidates[best][0]
        return transfer_labels(source, template, result.transform), result, template.name

    rows = []
    errors = [f"{p.name}: not inside a category folder" for p in loose]
    for (_, (category, path)), value, error in _run_jobs(work, list(enumerate(jobs)), worker_threads()):
        rel = f"{category}/{path.name}"
        if error is not None:
            errors.append(f"{rel}: {error}")
            log(f"WARNING: {rel} failed: {error}")
            continue
        labeled, result, template_name = value
        save_cloud(labeled, labeled_dir / category / f"{path.stem}.xyz")
        rows.append({
            "file": rel,
            "template_used": f"{category}/{template_name}",
            "iterations": result.iterations,
            "final_error": result.final_error,
        })
        if not result.converged:
            log(f"WARNING: {rel} did not converge in {cfg.max_iters} iterations (error {result.final_error:.3g})")
        if result.transform.degenerate:
            log(f"WARNING: {rel} registration hit a rank-deficient correspondence set")

    report_path = write_annotate_report(run_dir / "annotate_report.csv", rows)
    write_metadata(run_dir, {
        "command": "annotate",
        "engine_version": ENGINE_VERSION,
        "config": cfg.to_dict(),
        "source_dir": str(source_dir),
        "template_dir": str(template_dir),
        "clouds": len(jobs) + len(loose),
        "annotated": len(rows),
        "errors": errors,
    })
    log(f"Annotated {len(rows)} of {len(jobs) + len(loose)} clouds ({len(errors)} failed)")

    return {
        "run_directory": str(run_dir),
        "labeled_dir": str(labeled_dir),
        "report": str(report_path),
        "errors": errors,
    }


# ---------------- EXTRACT ----------------

def cmd_extract(cfg: RunConfig, labeled_dir, output=None, split_file=None, out_dir=None, run_name=None, echo=print):
    jobs, loose = _cloud_jobs(labeled_dir)
    class_names = sorted({category for category, _ in jobs})
    if not class_names:
        raise ConfigError(f"No category folders with clouds under {labeled_dir}")
    class_index = {name: i for i, name in enumerate(class_names)}

    run_dir = create_run_directory("extract", run_name or cfg.run_name, out_dir)
    log = run_logger(run_dir, echo)
    log(f"Extracting graphs from {len(jobs)} clouds in {len(class_names)} classes (tau={cfg.tau})")

    def work(job):
        category, path = job
        cloud = load_cloud(path, cfg.cloud_format, category=category)
        if not cloud.is_labeled:
            return None
        return sample_from_graph(build_graph(cloud, cfg.tau, class_index[category]))

    samples = []
    errors = [f"{p.name}: not inside a category folder" for p in loose]
    skipped = []
    for (category, path), sample, error in _run_jobs(work, jobs, worker_threads()):
        rel = f"{category}/{path.name}"
        if error is not None:
            errors.append(f"{rel}: {error}")
            log(f"WARNING: {rel} failed: {error}")
        elif sample is None:
            skipped.append(rel)
            log(f"WARNING: {rel} has no part labels, skipped")
        else:
            samples.append(sample)

    if not samples:
        raise SemGraphError(f"No graphs extracted from {labeled_dir}")
    ds = GraphDataset(samples, class_names, "position3d", name=Path(labeled_dir).name)

    output = Path(output) if output else run_dir / "dataset.semgraph"
    outputs = {"dataset": str(save_dataset(ds, output))}
    if split_file:
        test_idx, train_idx = split_by_ids(ds, read_split_ids(split_file))
        for split, idx in (("train", train_idx), ("test", test_idx)):
            if not idx:
                log(f"WARNING: {split} split is empty, not written")
                continue
            path = output.with_name(f"{output.stem}_{split}{output.suffix}")
            outputs[f"{split}_dataset"] = str(save_dataset(ds.subset(idx, name=f"{ds.name}_{split}"), path))
        log(f"Split by {split_file}: {len(train_idx)} train / {len(test_idx)} test")

    counts = [s.num_nodes for s in samples]
    hist = node_histogram(counts)
    write_node_histogram(run_dir / "node_histogram.csv", counts)
    log("Node count histogram:\n" + format_histogram(hist))
    log(f"Mean nodes per graph: {np.mean(counts):.2f}")

    write_metadata(run_dir, {
        "command": "extract",
        "engine_version": ENGINE_VERSION,
        "dataset_format": DATASET_FORMAT_VERSION,
        "config": cfg.to_dict(),
        "labeled_dir": str(labeled_dir),
        "graphs": len(samples),
        "classes": class_names,
        "mean_nodes": float(np.mean(counts)),
        "node_histogram": hist,
        "skipped": skipped,
        "errors": errors,
        **{f"{k}_sha256": file_sha256(v) for k, v in outputs.items()},
    })
    return {"run_directory": str(run_dir), **outputs, "errors": errors}


# ---------------- TRAIN / EVAL ----------------

def cmd_train(
    cfg: RunConfig,
    dataset,
    test_dataset=None,
    init_checkpoint=None,
    tu_name=None,
    num_node_labels=None,
    out_dir=None,
    run_name=None,
    echo=print,
):
    ds = _load_graphs(dataset, tu_name, num_node_labels)
    test_ds = load_dataset(test_dataset) if test_dataset else None
    if test_ds is not None and test_ds.feature_width != ds.feature_width:
        raise ShapeError(f"test set feature width {test_ds.feature_width} != training width {ds.feature_width}")

    config = model_config_for(cfg, ds)
    params = None
    if init_checkpoint:
        arrays, _ = load_checkpoint(init_checkpoint)
        # Shape mismatches against the current config surface here, before any training.
        params = ModelParams(arrays, config, ds.feature_width, ds.num_classes)

    run_dir = create_run_directory("train", run_name or cfg.run_name, out_dir)
    log = run_logger(run_dir, echo)
    log(f"Training on {len(ds)} graphs ({ds.num_classes} classes, {ds.feature_width} features)")
    _log_edge_schemes(log, config)

    stats = _edge_stats_for(config, ds)
    try:
        result = train(
            ds.samples,
            config,
            ds.num_classes,
            epochs=cfg.epochs,
            batch=cfg.batch,
            lr=cfg.lr,
            test_samples=test_ds.samples if test_ds else None,
            stats=stats,
            params=params,
            threads=worker_threads(),
            log=log,
        )
    except TrainingAborted as e:
        log(f"Training aborted: {e}")
        raise

    epochs_path = write_epoch_metrics(run_dir / "epochs.csv", result.history)
    checkpoint_path = save_checkpoint(
        run_dir / "checkpoint.npz", result.params.arrays, _checkpoint_meta(config, ds, stats, cfg)
    )
    held_out = test_ds or ds
    scores = evaluate(held_out.samples, result.params, stats)
    confusion_path = write_confusion(run_dir / "confusion.csv", scores["confusion"], ds.class_names)

    write_metadata(run_dir, {
        "command": "train",
        "engine_version": ENGINE_VERSION,
        "config": cfg.to_dict(),
        "model": config.to_dict(),
        "seed": cfg.seed,
        "dataset": str(dataset),
        "dataset_sha256": _input_hash(dataset),
        "test_dataset": str(test_dataset) if test_dataset else None,
        "graphs": len(ds),
        "test_graphs": len(test_ds) if test_ds else 0,
        "parameters": result.params.count(),
        "parameter_groups": result.params.count_by_group(),
        "final_train": result.final("train"),
        "final_test": result.final("test"),
        "epoch_seconds_total": float(sum(result.epoch_seconds)),
    })
    log(f"Training complete. Checkpoint: {checkpoint_path}")

    return {
        "run_directory": str(run_dir),
        "epochs_csv": str(epochs_path),
        "checkpoint": str(checkpoint_path),
        "confusion_csv": str(confusion_path),
        "accuracy": scores["accuracy"],
        "errors": [],
    }


def cmd_eval(cfg: RunConfig, dataset, checkpoint, tu_name=None, num_node_labels=None, out_dir=None, run_name=None, echo=print):
    params, meta, stats = load_model(checkpoint)
    ds = _load_graphs(dataset, tu_name, num_node_labels)
    if ds.feature_width != params.in_features:
        raise ShapeError(f"dataset feature width {ds.feature_width} != checkpoint width {params.in_features}")
    if ds.num_classes > params.num_classes:
        raise ShapeError(f"dataset has {ds.num_classes} classes, checkpoint was trained on {params.num_classes}")

    run_dir = create_run_directory("eval", run_name or cfg.run_name, out_dir)
    log = run_logger(run_dir, echo)

    scores = evaluate(ds.samples, params, stats)
    correct = int(np.trace(scores["confusion"]))
    log(f"Overall accuracy: {scores['accuracy']:.4f} ({correct}/{len(ds)})")

    class_names = meta.get("class_names") or [str(c) for c in range(params.num_classes)]
    eval_path = write_eval(run_dir / "eval.csv", [{
        "dataset": Path(dataset).name,
        "graphs": len(ds),
        "loss": scores["loss"],
        "accuracy": scores["accuracy"],
    }])
    confusion_path = write_confusion(run_dir / "confusion.csv", scores["confusion"], class_names)
    write_metadata(run_dir, {
        "command": "eval",
        "engine_version": ENGINE_VERSION,
        "checkpoint": str(checkpoint),
        "checkpoint_sha256": _input_hash(checkpoint),
        "dataset": str(dataset),
        "dataset_sha256": _input_hash(dataset),
        "graphs": len(ds),
        "accuracy": scores["accuracy"],
    })
    return {
        "run_directory": str(run_dir),
        "eval_csv": str(eval_path),
        "confusion_csv": str(confusion_path),
        "accuracy": scores["accuracy"],
        "errors": [],
    }


# ---------------- CROSS-VALIDATION / ABLATION ----------------

def _cross_validate(ds: GraphDataset, plan, config: ModelConfig, cfg: RunConfig, log, label=""):
    rows, errors = [], []
    threads = worker_threads()
    for i in range(plan.k):
        train_ds, test_ds = split_by_fold(ds, plan, i)
        stats = _edge_stats_for(config, train_ds)
        try:
            result = train(
                train_ds.samples, config, ds.num_classes,
                epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr,
                stats=stats, threads=threads, log=None,
            )
        except TrainingAborted as e:
            errors.append(f"{label}fold {i}: {e}")
            log(f"WARNING: {label}fold {i} aborted: {e}")
            continue
        scores = evaluate(test_ds.samples, result.params, stats)
        rows.append({
            "fold": i,
            "train_size": len(train_ds),
            "test_size": len(test_ds),
            "loss": scores["loss"],
            "accuracy": scores["accuracy"],
            "accuracy_std": "",
        })
        log(f"{label}Fold {i + 1}/{plan.k}: accuracy={scores['accuracy']:.4f}")
    return rows, errors


def cmd_xval(cfg: RunConfig, dataset, tu_name=None, num_node_labels=None, out_dir=None, run_name=None, echo=print):
    ds = _load_graphs(dataset, tu_name, num_node_labels)
    config = model_config_for(cfg, ds)
    plan = make_folds(ds, cfg.folds, cfg.seed, cfg.stratified)

    run_dir = create_run_directory("xval", run_name or cfg.run_name, out_dir)
    log = run_logger(run_dir, echo)
    log(f"{plan.k}-fold cross-validation on {len(ds)} graphs (stratified={plan.stratified})")
    _log_edge_schemes(log, config)

    rows, errors = _cross_validate(ds, plan, config, cfg, log)
    xval_path = write_xval(run_dir / "xval.csv", rows)
    summary = summarize_folds(rows).iloc[-1]
    log(f"Accuracy: {summary['accuracy']:.4f} +/- {summary['accuracy_std']:.4f}")

    write_metadata(run_dir, {
        "command": "xval",
        "engine_version": ENGINE_VERSION,
        "config": cfg.to_dict(),
        "model": config.to_dict(),
        "dataset": str(dataset),
        "dataset_sha256": _input_hash(dataset),
        "folds": plan.k,
        "fold_sizes": plan.fold_sizes().tolist(),
        "mean_accuracy": float(summary["accuracy"]),
        "std_accuracy": float(summary["accuracy_std"]),
        "errors": errors,
    })
    return {
        "run_directory": str(run_dir),
        "xval_csv": str(xval_path),
        "mean_accuracy": float(summary["accuracy"]),
        "errors": errors,
    }


def ablation_grid(grid: str, base: ModelConfig):
    """(variant name, ModelConfig) pairs for one ablation sweep."""
    if grid == "edge_scheme":
        return [(scheme, replace(base, edge_scheme=scheme)) for scheme in EDGE_SCHEMES]
    if grid == "normalization":
        return [(mode, replace(base, normalization=mode)) for mode in NORMALIZATIONS]
    if grid == "both":
        return [
            (f"{scheme}/{mode}", replace(base, edge_scheme=scheme, normalization=mode))
            for scheme in EDGE_SCHEMES
            for mode in NORMALIZATIONS
        ]
    if grid == "variants":
        return [
            ("BM", replace(base, edge_scheme="default_one", addon_enabled=False)),
            ("BM+EFS", replace(base, edge_scheme="exp_l2", addon_enabled=False)),
            ("BM+EFS+AoL", replace(base, edge_scheme="exp_l2", addon_enabled=True)),
        ]
    raise ConfigError(f"grid must be one of {ABLATION_GRIDS}, got {grid!r}")


def cmd_ablate(
    cfg: RunConfig,
    dataset,
    grid="edge_scheme",
    test_dataset=None,
    tu_name=None,
    num_node_labels=None,
    out_dir=None,
    run_name=None,
    echo=print,
):
    ds = _load_graphs(dataset, tu_name, num_node_labels)
    test_ds = load_dataset(test_dataset) if test_dataset else None
    base = model_config_for(cfg, ds)
    variants = ablation_grid(grid, base)
    plan = None if test_ds else make_folds(ds, cfg.folds, cfg.seed, cfg.stratified)

    run_dir = create_run_directory("ablate", run_name or cfg.run_name, out_dir)
    log = run_logger(run_dir, echo)
    log(f"Ablation grid {grid!r}: {len(variants)} variants on {len(ds)} graphs")
    _log_edge_schemes(log, base)

    rows, errors = [], []
    for name, config in variants:
        if test_ds:
            stats = _edge_stats_for(config, ds)
            try:
                result = train(
                    ds.samples, config, ds.num_classes,
                    epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr,
                    stats=stats, threads=worker_threads(), log=None,
                )
            except TrainingAborted as e:
                errors.append(f"{name}: {e}")
                log(f"WARNING: {name} aborted: {e}")
                continue
            accuracy, std, folds = evaluate(test_ds.samples, result.params, stats)["accuracy"], 0.0, "holdout"
        else:
            fold_rows, fold_errors = _cross_validate(ds, plan, config, cfg, log, label=f"{name} ")
            errors.extend(fold_errors)
            if not fold_rows:
                continue
            accs = np.array([r["accuracy"] for r in fold_rows])
            accuracy, std, folds = float(accs.mean()), float(accs.std()), len(fold_rows)

        rows.append({
            "variant": name,
            "edge_scheme": config.edge_scheme,
            "normalization": config.normalization,
            "addon_enabled": config.addon_enabled,
            "folds": folds,
            "accuracy": accuracy,
            "accuracy_std": std,
        })
        log(f"{name}: accuracy={accuracy:.4f} +/- {std:.4f}")

    ablation_path = write_ablation(run_dir / "ablation.csv", rows)
    write_metadata(run_dir, {
        "command": "ablate",
        "engine_version": ENGINE_VERSION,
        "config": cfg.to_dict(),
        "model": base.to_dict(),
        "grid": grid,
        "dataset": str(dataset),
        "dataset_sha256": _input_hash(dataset),
        "variants": [name for name, _ in variants],
        "errors": errors,
    })
    return {"run_directory": str(run_dir), "ablation_csv": str(ablation_path), "errors": errors}


# ---------------- SYNTH / INFO ----------------

def cmd_synth(kind, output, count, seed=0, echo=print):
    if kind == "clouds":
        written = write_cloud_corpus(output, per_category=count, seed=seed)
        echo(f"Templates: {Path(output) / 'templates'}  Sources: {Path(output) / 'sources'}")
        return {"output": str(output), "files": sum(len(v) for v in written.values()), "errors": []}
    if kind == "graphs":
        ds = graph_families(per_class=count, seed=seed)
        path = save_dataset(ds, output)
        echo(f"Wrote {len(ds)} graphs to {path}")
        return {"output": str(path), "files": 1, "errors": []}
    raise ConfigError(f"synth kind must be 'clouds' or 'graphs', got {kind!r}")


def cmd_info(dataset, tu_name=None, num_node_labels=None, echo=print):
    ds = _load_graphs(dataset, tu_name, num_node_labels)
    summary = dataset_summary(ds)
    echo(f"Dataset: {ds.name}")
    echo(f"Graphs: {summary['graphs']}  Classes: {summary['classes']}  Features: {summary['feature_kind']} x{summary['feature_width']}")
    echo(f"Mean nodes per graph: {summary['mean_nodes']:.2f}")
    for name, n in summary["class_counts"].items():
        echo(f"  {name}: {n}")
    echo(format_histogram(summary["node_histogram"]))
    return summary
