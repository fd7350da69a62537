"""Base-network pre-training: mini-batch SGD with momentum and weight
decay on cross-entropy, fully seed-deterministic (init and batch order).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .model import GatedNetwork


@dataclass
class TrainConfig:
    learning_rate: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 64
    epochs: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_accuracy: float


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch of logits [N,K] with integer labels.

    Returns (loss, grad wrt logits); grad is softmax(logits) - onehot,
    averaged over the batch.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k}): {labels.min()}..{labels.max()}")
    logp = L.log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = L.softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(loss), grad


def evaluate_accuracy(net: GatedNetwork, images: np.ndarray, labels: np.ndarray,
                      batch_size: int = 256) -> float:
    correct = 0
    for i in range(0, len(images), batch_size):
        logits = net.run(images[i : i + batch_size])
        correct += int((logits.argmax(axis=1) == labels[i : i + batch_size]).sum())
    return correct / len(images)


def train(net: GatedNetwork, train_images: np.ndarray, train_labels: np.ndarray,
          config: TrainConfig, test_images: np.ndarray | None = None,
          test_labels: np.ndarray | None = None,
          log=None) -> list[EpochMetrics]:
    """Train ``net`` in place. Returns per-epoch metrics; test accuracy is
    NaN when no test set is supplied."""
    if len(train_images) == 0:
        raise ValueError("empty training set")
    if train_labels.min() < 0 or train_labels.max() >= net.num_classes:
        raise ValueError(f"label out of range [0, {net.num_classes})")
    rng = np.random.default_rng(config.seed)
    net.init_parameters(rng)
    velocity = {i: (np.zeros_like(w), np.zeros_like(b)) for i, (w, b) in net.params.items()}
    metrics = []
    n = len(train_images)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            logits, caches = net.run(train_images[idx], keep_caches=True)
            loss, grad_logits = cross_entropy(logits, train_labels[idx])
            param_grads, _ = net.backward(caches, grad_logits)
            for i, (gw, gb) in param_grads.items():
                w, b = net.params[i]
                if config.weight_decay:
                    gw = gw + config.weight_decay * w
                    gb = gb + config.weight_decay * b
                vw, vb = velocity[i]
                vw *= config.momentum
                vw += gw
                vb *= config.momentum
                vb += gb
                w -= config.learning_rate * vw
                b -= config.learning_rate * vb
            loss_sum += loss
            batches += 1
        acc = (evaluate_accuracy(net, test_images, test_labels)
               if test_images is not None else float("nan"))
        metrics.append(EpochMetrics(epoch, loss_sum / batches, acc))
        if log is not None:
            log(f"epoch {epoch}: train_loss={loss_sum / batches:.4f} test_acc={acc:.4f}")
    return metrics


def write_metrics_csv(metrics: list[EpochMetrics], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "test_acc"])
        for m in metrics:
            writer.writerow([m.epoch, repr(m.train_loss), repr(m.test_accuracy)])
