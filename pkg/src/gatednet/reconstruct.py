"""Reconstruction: combine per-class CIVs into a binary run/skip channel
mask (CCIV) for a sub-task, by union (max-then-threshold) or by XOR
(absolute-difference-then-threshold, two classes only). Pure vector math;
no network evaluation happens here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dissect import ChannelImportanceVector
from .errors import ParseError


@dataclass
class CombinedCIV:
    class_set: tuple[int, ...]
    mask: np.ndarray       # 0/1 ints, one per gated channel
    method: str            # "union" | "xor"
    threshold: float


def _stack(civs: list[ChannelImportanceVector]) -> np.ndarray:
    lengths = {len(c.values) for c in civs}
    if len(lengths) != 1:
        raise ValueError(f"CIV length mismatch: {sorted(lengths)}")
    return np.stack([c.values for c in civs])


def union_combine(civs: list[ChannelImportanceVector], union_thr: float) -> CombinedCIV:
    """Keep channel j when the per-channel maximum over the classes' CIVs
    reaches union_thr (inclusive)."""
    if not civs:
        raise ValueError("union_combine needs at least one CIV")
    if union_thr < 0:
        raise ValueError("union_thr must be >= 0")
    values = _stack(civs)
    mask = (values.max(axis=0) >= union_thr).astype(np.int64)
    return CombinedCIV(tuple(c.class_id for c in civs), mask, "union", union_thr)


def xor_combine(civ1: ChannelImportanceVector, civ2: ChannelImportanceVector,
                xor_thr: float) -> CombinedCIV:
    """Keep channel j when |civ1_j - civ2_j| reaches xor_thr (inclusive).
    Defined for exactly two classes."""
    if xor_thr < 0:
        raise ValueError("xor_thr must be >= 0")
    values = _stack([civ1, civ2])
    mask = (np.abs(values[0] - values[1]) >= xor_thr).astype(np.int64)
    return CombinedCIV((civ1.class_id, civ2.class_id), mask, "xor", xor_thr)


def combine(civs: list[ChannelImportanceVector], method: str, threshold: float) -> CombinedCIV:
    if method == "union":
        return union_combine(civs, threshold)
    if method == "xor":
        if len(civs) != 2:
            raise ValueError(f"xor combination is defined for exactly 2 classes, got {len(civs)}")
        return xor_combine(civs[0], civs[1], threshold)
    raise ValueError(f"unknown combination method {method!r}")


def running_fraction(mask: np.ndarray) -> float:
    return float(np.asarray(mask).sum()) / len(mask)


def sweep_threshold(civs: list[ChannelImportanceVector], method: str,
                    thresholds) -> list[tuple[float, float]]:
    """(threshold, running-channel fraction) per threshold, ascending."""
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    return [(float(t), running_fraction(combine(civs, method, t).mask)) for t in thresholds]


def save_cciv(cciv: CombinedCIV, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["classes", "method", "threshold"]
                        + [f"ch{j}" for j in range(len(cciv.mask))])
        writer.writerow([" ".join(str(c) for c in cciv.class_set), cciv.method,
                         repr(float(cciv.threshold))] + [int(v) for v in cciv.mask])


def load_cciv(path) -> CombinedCIV:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        row = next(reader, None)
        if not header or header[:3] != ["classes", "method", "threshold"] or row is None:
            raise ParseError(f"{path}: not a CCIV file")
        mask = np.array([int(v) for v in row[3:]], dtype=np.int64)
        if not np.isin(mask, (0, 1)).all():
            raise ParseError(f"{path}: mask values must be 0 or 1")
        return CombinedCIV(tuple(int(c) for c in row[0].split()), mask, row[1],
                           float(row[2]))
