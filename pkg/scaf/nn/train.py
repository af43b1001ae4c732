import time
from typing import Optional

import numpy as np

from scaf.data.models import TrainConfig, TrainReport
from scaf.data.traces import TraceMatrix
from scaf.errors import EmptyInputError, RangeError, TrainingDivergedError
from scaf.nn.layers import cross_entropy
from scaf.nn.network import Network
from scaf.nn.optim import Adam
from scaf.synth.generator import augment
from scaf.utils.progress import progress


def _check_labels(model: Network, traces: TraceMatrix, name: str) -> None:
    if traces.key_bytes.max() >= model.n_classes:
        raise RangeError(
            f"{name} labels reach {traces.key_bytes.max()}, model has {model.n_classes} classes"
        )


def train(
    model: Network,
    train_set: TraceMatrix,
    val_set: Optional[TraceMatrix] = None,
    cfg: Optional[TrainConfig] = None,
) -> TrainReport:
    """Mini-batch Adam training of ``model`` in place.

    Shuffling, dropout masks and augmentation noise are all drawn from
    ``cfg.seed``, so two runs with the same model seed and config are
    bit-identical. The last incomplete batch of an epoch is kept.
    """
    cfg = cfg or TrainConfig()
    if train_set is None or train_set.n_traces == 0:
        raise EmptyInputError("training set is empty")
    if val_set is not None and val_set.n_traces == 0:
        raise EmptyInputError("validation set is empty")
    _check_labels(model, train_set, "training")
    if val_set is not None:
        _check_labels(model, val_set, "validation")

    if cfg.augment_copies > 0:
        train_set = augment(train_set, cfg.augment_copies, cfg.augment_sigma, seed=cfg.seed)

    x = train_set.samples
    y = train_set.key_bytes
    m = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    model.reseed(cfg.seed)
    optimizer = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    params = model.named_parameters()

    report = TrainReport(initial_loss=model.loss(x, y))
    started = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(m) if cfg.shuffle else np.arange(m)
        loss_sum = 0.0
        correct = 0
        for start in range(0, m, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            probs = model.forward(xb, training=True)
            loss = cross_entropy(probs, yb) + model.l2_penalty(cfg.l2_lambda)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch}, batch starting at row {start}"
                )
            grads = model.backward(yb, cfg.l2_lambda)
            optimizer.step(params, grads)
            loss_sum += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == yb))

        report.train_loss.append(loss_sum / m)
        report.train_accuracy.append(correct / m)
        status = f"loss {report.train_loss[-1]:.4f}  acc {report.train_accuracy[-1]:.3f}"
        if val_set is not None:
            report.val_accuracy.append(model.accuracy(val_set))
            status += f"  val {report.val_accuracy[-1]:.3f}"
        progress.update_status("train", f"epoch {epoch}/{cfg.epochs}", status)

    report.wall_time = time.perf_counter() - started
    progress.update_status("train", None, "Done")
    return report


def predict(model: Network, traces: TraceMatrix) -> np.ndarray:
    """Most probable key byte per trace."""
    return model.predict(traces)


def accuracy(model: Network, traces: TraceMatrix) -> float:
    """Fraction of traces whose predicted key byte equals the label."""
    return model.accuracy(traces)
