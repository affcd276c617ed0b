from pathlib import Path

import numpy as np
import pandas as pd

EPOCH_COLUMNS = ["epoch", "split", "loss", "accuracy"]
ANNOTATE_COLUMNS = ["file", "template_used", "iterations", "final_error"]
XVAL_COLUMNS = ["fold", "train_size", "test_size", "loss", "accuracy", "accuracy_std"]
EVAL_COLUMNS = ["dataset", "graphs", "loss", "accuracy"]
ABLATION_COLUMNS = ["variant", "edge_scheme", "normalization", "addon_enabled", "folds", "accuracy", "accuracy_std"]

SUMMARY_FOLD = "mean"


def _write(df: pd.DataFrame, path, index=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=index, lineterminator="\n")
    return path


def write_epoch_metrics(path, history):
    return _write(pd.DataFrame(history, columns=EPOCH_COLUMNS), path)


def write_confusion(path, matrix, class_names):
    matrix = np.asarray(matrix, dtype=np.int64)
    df = pd.DataFrame(matrix, index=list(class_names), columns=list(class_names))
    df.index.name = "true\\predicted"
    return _write(df, path, index=True)


def write_annotate_report(path, rows):
    return _write(pd.DataFrame(rows, columns=ANNOTATE_COLUMNS), path)


def write_eval(path, rows):
    return _write(pd.DataFrame(rows, columns=EVAL_COLUMNS), path)


def summarize_folds(fold_rows):
    """Append a summary row carrying mean loss/accuracy and the accuracy standard deviation."""
    df = pd.DataFrame(fold_rows, columns=XVAL_COLUMNS)
    summary = {
        "fold": SUMMARY_FOLD,
        "train_size": "",
        "test_size": "",
        "loss": float(df["loss"].mean()),
        "accuracy": float(df["accuracy"].mean()),
        "accuracy_std": float(df["accuracy"].std(ddof=0)),
    }
    df["accuracy_std"] = ""
    return pd.concat([df, pd.DataFrame([summary], columns=XVAL_COLUMNS)], ignore_index=True)


def write_xval(path, fold_rows):
    return _write(summarize_folds(fold_rows), path)


def write_ablation(path, rows):
    return _write(pd.DataFrame(rows, columns=ABLATION_COLUMNS), path)


def node_histogram(counts):
    values, freq = np.unique(np.asarray(counts, dtype=np.int64), return_counts=True)
    return {int(v): int(f) for v, f in zip(values, freq)}


def write_node_histogram(path, counts):
    hist = node_histogram(counts)
    df = pd.DataFrame({"nodes": list(hist), "graphs": list(hist.values())})
    return _write(df, path)


def format_histogram(hist):
    width = max(hist.values()) if hist else 0
    lines = []
    for nodes, count in hist.items():
        bar = "#" * max(1, round(40 * count / width)) if width else ""
        lines.append(f"{nodes:>4} nodes | {count:>6} {bar}")
    return "\n".join(lines)
