"""Dynamic inference: run only the channels a CCIV marks as running.

Masked conv layers are computed with a reduced filter set (skipped output
channels are never computed, skipped input channels never contribute), so
the saving is real compute, not multiplication by zero. Dense layers
always run in full on the (possibly partially zero) flattened map.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .model import GatedNetwork
from .reconstruct import CombinedCIV


@dataclass
class LayerCost:
    layer_id: int
    kind: str
    total_channels: int
    running_channels: int
    total_params: int
    running_params: int


@dataclass
class CostReport:
    total_channels: int
    running_channels: int
    total_params: int
    running_params: int
    per_layer: list[LayerCost]

    @property
    def channel_fraction(self) -> float:
        return self.running_channels / self.total_channels

    @property
    def param_fraction(self) -> float:
        return self.running_params / self.total_params


def _check_mask(net: GatedNetwork, cciv: CombinedCIV | np.ndarray) -> np.ndarray:
    mask = cciv.mask if isinstance(cciv, CombinedCIV) else np.asarray(cciv)
    mask = np.asarray(mask).ravel()
    if mask.shape != (net.total_gated_channels,):
        raise L.ShapeError(f"mask length {mask.shape[0]} != {net.total_gated_channels} "
                           "gated channels")
    return mask.astype(np.int64)


def masked_forward(net: GatedNetwork, x, cciv: CombinedCIV | np.ndarray,
                   count_macs: bool = False):
    """Logits of the sub-network selected by the mask.

    Equals forward_gated with the mask as gates (within float rounding),
    but actually skips masked channels. With count_macs=True also returns
    the number of conv multiply-accumulates executed.
    """
    mask = _check_mask(net, cciv)
    x = net._check_input(x)
    active = np.arange(net.input_shape[0])  # running channels of the current tensor
    macs = 0
    for i, spec in enumerate(net.specs):
        if spec.kind == "conv2d":
            start, stop = net.gate_slice(i)
            out_active = np.flatnonzero(mask[start:stop])
            w, b = net.params[i]
            w_sub = w[np.ix_(out_active, active)]
            x, _ = L.conv2d_forward(x, w_sub, b[out_active], spec.stride, spec.padding)
            macs += out_active.size * active.size * spec.kernel * spec.kernel \
                * x.shape[2] * x.shape[3]
            active = out_active
        elif spec.kind == "relu":
            x, _ = L.relu_forward(x)
        elif spec.kind == "maxpool2d":
            x, _ = L.maxpool2d_forward(x, spec.size, spec.stride)
        elif spec.kind == "flatten":
            if len(x.shape) == 4:
                total = net.shapes[i - 1][0] if i > 0 else net.input_shape[0]
                full = np.zeros((x.shape[0], total) + x.shape[2:], dtype=np.float64)
                full[:, active] = x
                x = full
            x, _ = L.flatten_forward(x)
        elif spec.kind == "dense":
            w, b = net.params[i]
            x, _ = L.dense_forward(x, w, b)
            macs += w.size
    return (x, macs) if count_macs else x


def full_forward_macs(net: GatedNetwork) -> int:
    """Conv and dense multiply-accumulates of one unmasked forward pass."""
    return masked_forward(net, np.zeros((1,) + net.input_shape),
                          np.ones(net.total_gated_channels, dtype=np.int64),
                          count_macs=True)[1]


def masked_softmax(logits, class_set) -> np.ndarray:
    """Softmax restricted to ``class_set``: probabilities are exactly zero
    outside the set and renormalize to 1 inside it."""
    logits = np.asarray(logits, dtype=np.float64)
    squeeze = logits.ndim == 1
    logits = np.atleast_2d(logits)
    class_set = sorted(set(int(c) for c in class_set))
    if not class_set:
        raise ValueError("class_set must be nonempty")
    k = logits.shape[1]
    if class_set[0] < 0 or class_set[-1] >= k:
        raise ValueError(f"class id out of range [0, {k}): {class_set}")
    probs = np.zeros_like(logits)
    probs[:, class_set] = L.softmax(logits[:, class_set])
    return probs[0] if squeeze else probs


def cost_report(net: GatedNetwork, cciv: CombinedCIV | np.ndarray) -> CostReport:
    """Exact running-channel and running-parameter accounting for a mask.

    Conv running params = running outputs x running inputs x kernel area,
    plus running biases. Dense layers are never masked and count in full.
    """
    mask = _check_mask(net, cciv)
    per_layer = []
    in_running = net.input_shape[0]
    for i, spec in enumerate(net.specs):
        if spec.kind == "conv2d":
            start, stop = net.gate_slice(i)
            running = int(mask[start:stop].sum())
            total_p = spec.out_channels * spec.in_channels * spec.kernel ** 2 + spec.out_channels
            running_p = running * in_running * spec.kernel ** 2 + running
            per_layer.append(LayerCost(i, "conv2d", spec.out_channels, running,
                                       total_p, running_p))
            in_running = running
        elif spec.kind == "dense":
            p = spec.in_features * spec.out_features + spec.out_features
            per_layer.append(LayerCost(i, "dense", 0, 0, p, p))
    return CostReport(
        total_channels=sum(r.total_channels for r in per_layer),
        running_channels=sum(r.running_channels for r in per_layer),
        total_params=sum(r.total_params for r in per_layer),
        running_params=sum(r.running_params for r in per_layer),
        per_layer=per_layer,
    )


def write_cost_report_csv(report: CostReport, path) -> None:
    # Convention: dense layers are never masked and are counted in full.
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer_id", "kind", "total_channels", "running_channels",
                         "total_params", "running_params"])
        for r in report.per_layer:
            writer.writerow([r.layer_id, r.kind, r.total_channels, r.running_channels,
                             r.total_params, r.running_params])
        writer.writerow(["total", "", report.total_channels, report.running_channels,
                         report.total_params, report.running_params])


def format_cost_report(report: CostReport) -> str:
    lines = ["layer  kind    channels (run/total)  params (run/total)",
             "(dense layers are never masked; counted in full)"]
    for r in report.per_layer:
        lines.append(f"{r.layer_id:>5}  {r.kind:<7} {r.running_channels:>5}/{r.total_channels:<9}"
                     f" {r.running_params:>8}/{r.total_params}")
    lines.append(f"total          {report.running_channels:>5}/{report.total_channels:<9}"
                 f" {report.running_params:>8}/{report.total_params}"
                 f"  ({report.channel_fraction:.1%} channels, "
                 f"{report.param_fraction:.1%} params)")
    return "\n".join(lines)
