"""Shared test oracles: central finite differences and a slow reference
forward pass that multiplies gates in explicitly (the dense-recompute
oracle for the skipping inference engine).
"""

import numpy as np

from gatednet import layers as L


def finite_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at flat array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for j in range(xf.size):
        xp = x.copy().ravel()
        xm = x.copy().ravel()
        xp[j] += h
        xm[j] -= h
        flat[j] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
    return grad


def rel_error(a, b, floor=1e-6):
    """Elementwise |a-b| / max(|a|, |b|, floor); the floor keeps near-zero
    gradients from blowing up the ratio."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def reference_gated_forward(net, x, gates):
    """Layer-by-layer forward with explicit per-channel gate multiplies,
    independent of GatedNetwork.run's gating bookkeeping."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    gates = np.asarray(gates, dtype=np.float64)
    gate_of_conv = {i: (start, stop) for i, start, stop in net.gate_map}
    pending = None
    for i, spec in enumerate(net.specs):
        if spec.kind == "conv2d":
            w, b = net.params[i]
            x, _ = L.conv2d_forward(x, w, b, spec.stride, spec.padding)
            pending = gate_of_conv[i]
        elif spec.kind == "relu":
            x, _ = L.relu_forward(x)
            if pending is not None:
                start, stop = pending
                x = x * gates[start:stop][None, :, None, None]
                pending = None
        elif spec.kind == "maxpool2d":
            x, _ = L.maxpool2d_forward(x, spec.size, spec.stride)
        elif spec.kind == "flatten":
            x, _ = L.flatten_forward(x)
        elif spec.kind == "dense":
            w, b = net.params[i]
            x, _ = L.dense_forward(x, w, b)
    return x
