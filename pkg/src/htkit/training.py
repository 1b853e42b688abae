"""SGD-with-momentum training for compressed models.

The loop is deliberately plain: mini-batch gradient descent with velocity
updates, a step-decay learning rate, softmax cross-entropy loss, and
per-epoch metrics. Runs are reproducible bit for bit given a seed and a
single worker.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericalError

__all__ = ["TrainSchedule", "sgd_momentum_step", "lr_at_epoch", "train"]


@dataclass(frozen=True)
class TrainSchedule:
    learning_rate: float
    momentum: float = 0.9
    decay_factor: float = 10.0
    decay_every: int = 30
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.decay_factor < 1:
            raise ValueError(f"decay factor must be >= 1, got {self.decay_factor}")
        if self.decay_every < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("decay_every, epochs and batch_size must be >= 1")


def lr_at_epoch(schedule: TrainSchedule, epoch: int) -> float:
    """Learning rate for a 0-based epoch index under step decay."""
    return schedule.learning_rate / schedule.decay_factor ** (
        epoch // schedule.decay_every
    )


def sgd_momentum_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray] | None,
    schedule: TrainSchedule,
    lr: float | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """v' = momentum v - lr g; p' = p + v'. Pure: returns new dicts."""
    if lr is None:
        lr = schedule.learning_rate
    if velocity is None:
        velocity = {k: np.zeros_like(v) for k, v in params.items()}
    new_params = {}
    new_velocity = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(
                f"gradient for {name} has shape {g.shape}, parameter has {p.shape}"
            )
        v = schedule.momentum * velocity[name] - lr * g
        new_velocity[name] = v
        new_params[name] = p + v
    return new_params, new_velocity


def _batch_grads(model, params, xb, yb, threads):
    if threads <= 1 or len(xb) < 2 * threads:
        return model.loss_and_grads(params, xb, yb)
    # sharded evaluation with a fixed reduction order
    shards = np.array_split(np.arange(len(xb)), threads)
    shards = [s for s in shards if len(s)]

    def run(idx):
        return model.loss_and_grads(params, xb[idx], yb[idx]), len(idx)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(run, shards))
    total = sum(n for _, n in results)
    loss = 0.0
    correct = 0.0
    grads = None
    for (shard_loss, shard_correct, shard_grads), n in results:
        w = n / total
        loss += shard_loss * w
        correct += shard_correct * n
        if grads is None:
            grads = {k: g * w for k, g in shard_grads.items()}
        else:
            for k, g in shard_grads.items():
                grads[k] = grads[k] + g * w
    return loss, correct / total, grads


def train(
    model,
    data,
    schedule: TrainSchedule,
    threads: int = 1,
    log=None,
) -> list[dict]:
    """Mini-batch SGD with momentum and step decay.

    ``data`` is (x_train, y_train, x_val, y_val). Returns one metrics dict
    per epoch with keys epoch, lr, train_loss, train_acc, val_acc,
    wall_seconds. Aborts with NumericalError (carrying a diagnostic dump)
    on a non-finite loss.
    """
    x_train, y_train, x_val, y_val = data
    params = model.init_params(np.random.default_rng(schedule.seed))
    velocity = None
    rng = np.random.default_rng(schedule.seed + 1)
    metrics = []
    n = len(x_train)
    for epoch in range(schedule.epochs):
        t0 = time.perf_counter()
        lr = lr_at_epoch(schedule, epoch)
        order = rng.permutation(n)
        losses = []
        accs = []
        for start in range(0, n, schedule.batch_size):
            idx = order[start:start + schedule.batch_size]
            loss, acc, grads = _batch_grads(
                model, params, x_train[idx], y_train[idx], threads
            )
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss {loss} at epoch {epoch + 1}, batch "
                    f"{start // schedule.batch_size}; param norms: "
                    + ", ".join(
                        f"{k}={np.linalg.norm(v):.3e}" for k, v in params.items()
                    )
                )
            losses.append(loss * len(idx))
            accs.append(acc * len(idx))
            params, velocity = sgd_momentum_step(
                params, grads, velocity, schedule, lr=lr
            )
        val_acc = float(np.mean(model.predict(params, x_val) == y_val))
        row = {
            "epoch": epoch + 1,
            "lr": lr,
            "train_loss": float(np.sum(losses) / n),
            "train_acc": float(np.sum(accs) / n),
            "val_acc": val_acc,
            "wall_seconds": time.perf_counter() - t0,
        }
        metrics.append(row)
        if log is not None:
            log(row)
    model.params = params
    return metrics
