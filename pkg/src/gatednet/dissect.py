"""Dissection: optimize a per-image control-gate vector against the
frozen network (soft-target KL plus an L1 sparsity term), then average
the per-image vectors into one channel-importance vector (CIV) per class.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import IntegrityError, ParseError
from .model import GatedNetwork, forward


@dataclass
class GateOptConfig:
    gamma: float = 0.05        # weight of the L1 sparsity term
    iterations: int = 30
    learning_rate: float = 0.1
    momentum: float = 0.9
    clip_min: float = 0.0
    clip_max: float = 10.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.clip_min < self.clip_max:
            raise ValueError("need 0 <= clip_min < clip_max")


@dataclass
class CDRP:
    """Optimized gate vector for a single image."""
    values: np.ndarray
    image_id: int
    class_label: int
    fallback: bool = False


@dataclass
class ChannelImportanceVector:
    class_id: int
    values: np.ndarray
    sample_count: int


def soft_target_loss(original_logits, gated_logits):
    """KL divergence between the frozen network's softmax (constant
    target p) and the gated network's softmax q.

    Returns (loss, grad wrt gated_logits); the gradient flows only
    through q and equals q - p.
    """
    original_logits = np.asarray(original_logits, dtype=np.float64).ravel()
    gated_logits = np.asarray(gated_logits, dtype=np.float64).ravel()
    if original_logits.shape != gated_logits.shape:
        raise L.ShapeError(f"logit lengths differ: {original_logits.shape} vs {gated_logits.shape}")
    p = L.softmax(original_logits)
    logp = L.log_softmax(original_logits)
    logq = L.log_softmax(gated_logits)
    loss = float(np.sum(p * (logp - logq)))
    grad = L.softmax(gated_logits) - p
    return loss, grad


def gate_gradient(net: GatedNetwork, image, gates, gamma: float = 0.0,
                  original_logits=None):
    """Gradient of the dissection objective wrt the gate vector.

    Returns (kl_grad, total_grad) where total_grad = kl_grad +
    gamma * sign(gates), with sign(0) taken as 0. With gamma=0 the two
    are the same array contents.
    """
    gates = np.asarray(gates, dtype=np.float64).ravel()
    if original_logits is None:
        original_logits = forward(net, image)
    gated_logits, caches = net.run(image, gates=gates, keep_caches=True)
    _, grad_logits = soft_target_loss(original_logits.ravel(), gated_logits.ravel())
    _, kl_grad = net.backward(caches, grad_logits.reshape(gated_logits.shape),
                              gates=gates, want_param_grads=False)
    if gamma:
        total = kl_grad + gamma * np.sign(gates)
    else:
        total = kl_grad.copy()
    return kl_grad, total


def optimize_gates(net: GatedNetwork, image, config: GateOptConfig,
                   image_id: int = -1, class_label: int | None = None) -> CDRP:
    """Optimize one image's gates with momentum SGD.

    Gates start at all ones, take ``iterations`` steps on the total
    gradient (KL term plus gamma * sign), and are clipped to
    [clip_min, clip_max] after every step. If the final gated top-1
    differs from the ungated top-1, the all-ones vector is returned with
    fallback=True.
    """
    original_logits = forward(net, image).ravel()
    top1 = int(original_logits.argmax())
    gates = np.ones(net.total_gated_channels)
    velocity = np.zeros_like(gates)
    for t in range(config.iterations):
        _, grad = gate_gradient(net, image, gates, config.gamma,
                                original_logits=original_logits)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gate gradient at iteration {t} "
                                     f"(image {image_id})")
        velocity = config.momentum * velocity + grad
        gates = gates - config.learning_rate * velocity
        np.clip(gates, config.clip_min, config.clip_max, out=gates)
    label = int(class_label) if class_label is not None else top1
    gated_logits = net.run(image, gates=gates).ravel()
    if int(gated_logits.argmax()) != top1:
        return CDRP(np.ones(net.total_gated_channels), image_id, label, fallback=True)
    return CDRP(gates, image_id, label, fallback=False)


def aggregate_civ(cdrps: list[CDRP]) -> ChannelImportanceVector:
    """Elementwise mean of one class's CDRPs (fallbacks included)."""
    if not cdrps:
        raise ValueError("cannot aggregate an empty CDRP list")
    classes = {c.class_label for c in cdrps}
    if len(classes) != 1:
        raise ValueError(f"mixed classes in CDRP list: {sorted(classes)}")
    values = np.mean([c.values for c in cdrps], axis=0)
    return ChannelImportanceVector(cdrps[0].class_label, values, len(cdrps))


@dataclass
class DissectionResult:
    civs: dict[int, ChannelImportanceVector]
    cdrps: list[CDRP]
    fallback_rate: float


def dissect_dataset(net: GatedNetwork, images: np.ndarray, labels: np.ndarray,
                    per_class_n: int, config: GateOptConfig,
                    classes=None, log=None) -> DissectionResult:
    """Optimize gates for the first ``per_class_n`` images of every class
    (deterministic image-id order) and aggregate per-class CIVs."""
    if per_class_n < 1:
        raise ValueError("per_class_n must be >= 1")
    if classes is None:
        classes = sorted(int(c) for c in np.unique(labels))
    picked: dict[int, list[int]] = {}
    for c in classes:
        ids = np.flatnonzero(labels == c)[:per_class_n]
        if len(ids) < per_class_n:
            raise ValueError(f"class {c} has only {len(ids)} images, need {per_class_n}")
        picked[c] = [int(i) for i in ids]
    all_cdrps: list[CDRP] = []
    civs: dict[int, ChannelImportanceVector] = {}
    fallbacks = 0
    for c in classes:
        class_cdrps = []
        for image_id in picked[c]:
            cdrp = optimize_gates(net, images[image_id], config,
                                  image_id=image_id, class_label=c)
            fallbacks += cdrp.fallback
            class_cdrps.append(cdrp)
        civs[c] = aggregate_civ(class_cdrps)
        all_cdrps.extend(class_cdrps)
        if log is not None:
            fb = sum(x.fallback for x in class_cdrps)
            log(f"class {c}: {len(class_cdrps)} CDRPs, {fb} fallbacks")
    return DissectionResult(civs, all_cdrps, fallbacks / len(all_cdrps))


# -- persistence ----------------------------------------------------------

def channel_column_names(net: GatedNetwork) -> list[str]:
    """Column per gated channel, named gatedLayerOrdinal.channelIndex."""
    names = []
    for ordinal, (_, start, stop) in enumerate(net.gate_map):
        names.extend(f"{ordinal}.{j}" for j in range(stop - start))
    return names


def save_civs(civs: dict[int, ChannelImportanceVector], net: GatedNetwork, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class_id", "sample_count"] + channel_column_names(net))
        for c in sorted(civs):
            civ = civs[c]
            writer.writerow([civ.class_id, civ.sample_count] + [repr(float(v)) for v in civ.values])


def load_civs(path) -> dict[int, ChannelImportanceVector]:
    civs = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[:2] != ["class_id", "sample_count"]:
            raise ParseError(f"{path}: not a CIV file (bad header)")
        width = len(header) - 2
        for row in reader:
            if len(row) != len(header):
                raise ParseError(f"{path}: row for class {row[:1]} has {len(row)} fields, "
                                 f"expected {len(header)}")
            c = int(row[0])
            civs[c] = ChannelImportanceVector(c, np.array([float(v) for v in row[2:]]),
                                              int(row[1]))
    if not civs:
        raise IntegrityError(f"{path}: no CIV rows")
    widths = {len(v.values) for v in civs.values()}
    if len(widths) != 1:
        raise IntegrityError(f"{path}: inconsistent CIV lengths {sorted(widths)}")
    return civs


def save_cdrp_archive(cdrps: list[CDRP], net: GatedNetwork, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "class_id", "fallback"] + channel_column_names(net))
        for c in cdrps:
            writer.writerow([c.image_id, c.class_label, int(c.fallback)]
                            + [repr(float(v)) for v in c.values])


def load_cdrp_archive(path) -> list[CDRP]:
    out = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[:3] != ["image_id", "class_id", "fallback"]:
            raise ParseError(f"{path}: not a CDRP archive (bad header)")
        for row in reader:
            out.append(CDRP(np.array([float(v) for v in row[3:]]),
                            int(row[0]), int(row[1]), bool(int(row[2]))))
    return out
