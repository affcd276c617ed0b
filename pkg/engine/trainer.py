import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from engine.errors import NumericError, TrainingAborted
from engine.gnn import EdgeStats, GraphSample, ModelConfig, ModelParams, forward
from engine.optim import AdamState, adam_step
from engine.seeding import substream
from engine.tensor import softmax, softmax_cross_entropy

DEFAULT_EPOCHS = 200
DEFAULT_BATCH = 20
DEFAULT_LR = 0.001


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def final(self, split="train"):
        rows = [r for r in self.history if r["split"] == split]
        return rows[-1] if rows else None


def sample_gradients(sample, params: ModelParams, config, rng=None, stats=None, train_mode=True):
    """Loss, logits and per-parameter gradients for a single graph, on a private tape."""
    leaves = params.leaves(requires_grad=True)
    logits = forward(sample, leaves, config, train_mode=train_mode, rng=rng, stats=stats)
    loss = softmax_cross_entropy(logits, sample.label)
    loss.backward()
    grads = {name: t.grad if t.grad is not None else np.zeros_like(t.values) for name, t in leaves.items()}
    return loss.item(), logits.values[0].copy(), grads


def confusion_matrix(labels, predictions, num_classes):
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for truth, pred in zip(labels, predictions):
        matrix[int(truth), int(pred)] += 1
    return matrix


def evaluate(samples: list[GraphSample], params: ModelParams, stats: EdgeStats | None = None):
    """Eval-mode loss, overall accuracy, predictions and confusion matrix."""
    losses = []
    predictions = []
    for sample in samples:
        logits = forward(sample, params, params.config, train_mode=False, stats=stats)
        losses.append(softmax_cross_entropy(logits, sample.label).item())
        predictions.append(int(np.argmax(logits.values[0])))

    labels = [s.label for s in samples]
    correct = sum(int(p == y) for p, y in zip(predictions, labels))
    return {
        "loss": float(np.mean(losses)) if losses else float("nan"),
        "accuracy": correct / len(samples) if samples else float("nan"),
        "predictions": predictions,
        "confusion": confusion_matrix(labels, predictions, params.num_classes),
    }


def predict_proba(sample: GraphSample, params: ModelParams, stats: EdgeStats | None = None):
    return softmax(forward(sample, params, params.config, stats=stats))[0]


def train(
    samples: list[GraphSample],
    config: ModelConfig,
    num_classes: int,
    epochs: int = DEFAULT_EPOCHS,
    batch: int = DEFAULT_BATCH,
    lr: float = DEFAULT_LR,
    test_samples: list[GraphSample] | None = None,
    stats: EdgeStats | None = None,
    params: ModelParams | None = None,
    threads: int = 1,
    log=print,
) -> TrainResult:
    """
    Per-sample forward/backward, gradients averaged over each batch, one Adam
    step per batch. Shuffling and dropout draw from seeded sub-streams of
    config.seed, so identical inputs give identical histories.
    """
    if not samples:
        raise ValueError("training set is empty")
    if epochs < 1 or batch < 1:
        raise ValueError(f"epochs and batch must be >= 1, got epochs={epochs}, batch={batch}")
    bad = [s.label for s in samples if not 0 <= s.label < num_classes]
    if bad:
        raise ValueError(f"labels {sorted(set(bad))} fall outside [0, {num_classes})")

    in_features = samples[0].num_features
    if params is None:
        params = ModelParams.initialize(config, in_features, num_classes)
    else:
        params.check_shapes()

    if log:
        groups = params.count_by_group()
        log(
            f"Model: {params.count()} trainable parameters "
            f"(backbone {groups.get('backbone', 0)}, add-on {groups.get('addon', 0)})"
        )

    state = AdamState(lr=lr)
    result = TrainResult(params=params)
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    try:
        for epoch in range(1, epochs + 1):
            started = time.perf_counter()
            order = substream(config.seed, "shuffle", epoch).permutation(len(samples))
            epoch_losses = []
            epoch_correct = 0

            for batch_no, start in enumerate(range(0, len(order), batch), start=1):
                members = [int(i) for i in order[start:start + batch]]

                def run(i):
                    rng = substream(config.seed, "dropout", epoch, i)
                    try:
                        return sample_gradients(samples[i], params, config, rng=rng, stats=stats)
                    except NumericError as e:
                        raise TrainingAborted(f"numeric failure: {e}", epoch, batch_no, samples[i].name or i)

                outputs = list(executor.map(run, members)) if executor else [run(i) for i in members]

                total = {name: np.zeros_like(a) for name, a in params.arrays.items()}
                for i, (loss, logits, grads) in zip(members, outputs):
                    if not np.isfinite(loss):
                        raise TrainingAborted("loss is not finite", epoch, batch_no, samples[i].name or i)
                    epoch_losses.append(loss)
                    epoch_correct += int(np.argmax(logits) == samples[i].label)
                    for name, g in grads.items():
                        total[name] += g

                mean_grads = {name: g / len(members) for name, g in total.items()}
                adam_step(params.arrays, mean_grads, state)

            train_row = {
                "epoch": epoch,
                "split": "train",
                "loss": float(np.mean(epoch_losses)),
                "accuracy": epoch_correct / len(samples),
            }
            result.history.append(train_row)
            if test_samples:
                scores = evaluate(test_samples, params, stats)
                result.history.append({
                    "epoch": epoch,
                    "split": "test",
                    "loss": scores["loss"],
                    "accuracy": scores["accuracy"],
                })

            elapsed = time.perf_counter() - started
            result.epoch_seconds.append(elapsed)
            if log:
                line = f"Epoch {epoch}/{epochs}: loss={train_row['loss']:.4f} acc={train_row['accuracy']:.4f}"
                if test_samples:
                    line += f" test_acc={result.history[-1]['accuracy']:.4f}"
                log(f"{line} ({elapsed:.2f}s)")
    finally:
        if executor:
            executor.shutdown()

    return result
