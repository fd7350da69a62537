"""Evaluation and analysis: sub-task accuracy benchmarks, layer-wise
running-channel distribution, and the class-similarity matrix built from
important-channel-set IoU.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dissect import ChannelImportanceVector
from .inference import cost_report, masked_forward, masked_softmax
from .model import GatedNetwork
from .reconstruct import CombinedCIV


@dataclass
class SubTaskResult:
    class_set: tuple[int, ...]
    full_net_accuracy: float
    sub_net_accuracy: float
    accuracy_drop: float
    running_channel_fraction: float
    running_param_fraction: float
    threshold: float
    method: str
    test_count: int


def evaluate_subtask(net: GatedNetwork, test_images: np.ndarray,
                     test_labels: np.ndarray, cciv: CombinedCIV,
                     class_set=None, batch_size: int = 256) -> SubTaskResult:
    """Full-net vs masked sub-net accuracy on the test images whose label
    is in the sub-task's class set. Both paths use the masked softmax over
    the class set, on the identical filtered subset."""
    class_set = tuple(cciv.class_set) if class_set is None else tuple(class_set)
    keep = np.isin(test_labels, class_set)
    images, labels = test_images[keep], test_labels[keep]
    if len(images) == 0:
        raise ValueError(f"no test images for classes {class_set}")
    full_correct = 0
    sub_correct = 0
    for i in range(0, len(images), batch_size):
        batch, lab = images[i : i + batch_size], labels[i : i + batch_size]
        full_probs = masked_softmax(net.run(batch), class_set)
        sub_probs = masked_softmax(masked_forward(net, batch, cciv), class_set)
        full_correct += int((full_probs.argmax(axis=1) == lab).sum())
        sub_correct += int((sub_probs.argmax(axis=1) == lab).sum())
    full_acc = full_correct / len(images)
    sub_acc = sub_correct / len(images)
    report = cost_report(net, cciv)
    return SubTaskResult(class_set, full_acc, sub_acc, full_acc - sub_acc,
                         report.channel_fraction, report.param_fraction,
                         cciv.threshold, cciv.method, len(images))


def layer_distribution(net: GatedNetwork, cciv: CombinedCIV) -> list[tuple[int, int, int]]:
    """(conv layer index, total channels, running channels) per conv layer."""
    report = cost_report(net, cciv)
    return [(r.layer_id, r.total_channels, r.running_channels)
            for r in report.per_layer if r.kind == "conv2d"]


def important_channel_set(civ: ChannelImportanceVector | np.ndarray,
                          epsilon: float = 1e-2) -> set[int]:
    """Channels whose importance value strictly exceeds epsilon."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    values = civ.values if isinstance(civ, ChannelImportanceVector) else np.asarray(civ)
    return set(int(i) for i in np.flatnonzero(values > epsilon))


@dataclass
class SimilarityMatrix:
    class_ids: list[int]
    values: np.ndarray
    epsilon: float


def similarity_matrix(civs: dict[int, ChannelImportanceVector],
                      epsilon: float = 1e-2) -> SimilarityMatrix:
    """Pairwise IoU of the classes' important channel sets. A pair of
    empty sets has similarity 0 (no shared evidence)."""
    if len(civs) < 2:
        raise ValueError("need at least 2 CIVs")
    ids = sorted(civs)
    sets = [important_channel_set(civs[c], epsilon) for c in ids]
    n = len(ids)
    values = np.zeros((n, n))
    for a in range(n):
        for b in range(a, n):
            union = len(sets[a] | sets[b])
            values[a, b] = values[b, a] = (len(sets[a] & sets[b]) / union) if union else 0.0
    return SimilarityMatrix(ids, values, epsilon)


def save_similarity_csv(sim: SimilarityMatrix, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class_id"] + [str(c) for c in sim.class_ids])
        for i, c in enumerate(sim.class_ids):
            writer.writerow([c] + [repr(float(v)) for v in sim.values[i]])


def render_similarity_pgm(sim: SimilarityMatrix, path, cell: int = 16) -> None:
    """Plain-PGM heat map rendering (one grey cell per class pair)."""
    grey = np.kron(np.round(sim.values * 255).astype(int), np.ones((cell, cell), dtype=int))
    with open(path, "w") as f:
        f.write(f"P2\n{grey.shape[1]} {grey.shape[0]}\n255\n")
        for row in grey:
            f.write(" ".join(str(v) for v in row) + "\n")


def save_subtask_results_csv(results: list[SubTaskResult], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["classes", "method", "threshold", "test_count",
                         "full_net_acc", "sub_net_acc", "acc_drop",
                         "running_channel_fraction", "running_param_fraction"])
        for r in results:
            writer.writerow([" ".join(str(c) for c in r.class_set), r.method,
                             repr(float(r.threshold)), r.test_count,
                             repr(float(r.full_net_accuracy)), repr(float(r.sub_net_accuracy)),
                             repr(float(r.accuracy_drop)),
                             repr(float(r.running_channel_fraction)),
                             repr(float(r.running_param_fraction))])


def summarize_results(results: list[SubTaskResult]) -> dict[str, float]:
    """Batch summary: mean/min/max accuracy drop and mean running fractions."""
    drops = np.array([r.accuracy_drop for r in results])
    return {
        "mean_drop": float(drops.mean()),
        "min_drop": float(drops.min()),
        "max_drop": float(drops.max()),
        "mean_running_channel_fraction": float(np.mean(
            [r.running_channel_fraction for r in results])),
        "mean_running_param_fraction": float(np.mean(
            [r.running_param_fraction for r in results])),
    }
