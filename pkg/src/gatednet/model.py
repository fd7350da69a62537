"""Gated ConvNet definition: layer specs, parameter storage, per-channel
control gates after every conv layer's ReLU, and model file round-tripping.

A gate is a scalar multiplied onto one conv channel's post-ReLU feature
map. Gates live in a single flat vector covering every conv channel in
layer order; ``gate_map`` records which slice of that vector belongs to
which conv layer. Dense layers are never gated.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrityError, ParseError
from . import layers as L

MODEL_MAGIC = b"DRNM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv2d | relu | maxpool2d | flatten | dense
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    size: int = 0          # maxpool window
    in_features: int = 0
    out_features: int = 0

    def __post_init__(self):
        if self.kind == "conv2d":
            if self.out_channels <= 0 or self.in_channels <= 0:
                raise ValueError(f"conv2d needs positive channel counts, got "
                                 f"{self.in_channels}->{self.out_channels}")
            if self.stride < 1 or self.padding < 0 or self.kernel < 1:
                raise ValueError("conv2d needs kernel >= 1, stride >= 1, padding >= 0")
        elif self.kind == "maxpool2d":
            if self.size < 1 or self.stride < 1:
                raise ValueError("maxpool2d needs size >= 1 and stride >= 1")
        elif self.kind == "dense":
            if self.in_features <= 0 or self.out_features <= 0:
                raise ValueError("dense needs positive feature counts")
        elif self.kind not in ("relu", "flatten"):
            raise ValueError(f"unknown layer kind {self.kind!r}")

    _KIND_FIELDS = {
        "conv2d": ("in_channels", "out_channels", "kernel", "stride", "padding"),
        "maxpool2d": ("size", "stride"),
        "dense": ("in_features", "out_features"),
    }

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for k in self._KIND_FIELDS.get(self.kind, ()):
            d[k] = getattr(self, k)
        return d

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        return LayerSpec(**d)


def conv(in_channels: int, out_channels: int, kernel: int, stride: int = 1,
         padding: int = 0) -> LayerSpec:
    return LayerSpec("conv2d", in_channels=in_channels, out_channels=out_channels,
                     kernel=kernel, stride=stride, padding=padding)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(size: int, stride: int | None = None) -> LayerSpec:
    return LayerSpec("maxpool2d", size=size, stride=size if stride is None else stride)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dense(in_features: int, out_features: int) -> LayerSpec:
    return LayerSpec("dense", in_features=in_features, out_features=out_features)


def infer_shapes(specs: list[LayerSpec], input_shape: tuple[int, int, int]) -> list[tuple]:
    """Type-check the layer sequence; return each layer's output shape
    (channel-first, batch dimension omitted)."""
    shape: tuple = tuple(input_shape)
    out = []
    for i, spec in enumerate(specs):
        if spec.kind == "conv2d":
            if len(shape) != 3 or shape[0] != spec.in_channels:
                raise L.ShapeError(f"layer {i} (conv2d) expects {spec.in_channels} channels, "
                                   f"input shape is {shape}")
            h = L.conv_output_extent(shape[1], spec.kernel, spec.stride, spec.padding)
            w = L.conv_output_extent(shape[2], spec.kernel, spec.stride, spec.padding)
            if h <= 0 or w <= 0:
                raise L.ShapeError(f"layer {i} (conv2d) produces empty output from {shape}")
            shape = (spec.out_channels, h, w)
        elif spec.kind == "maxpool2d":
            if len(shape) != 3:
                raise L.ShapeError(f"layer {i} (maxpool2d) needs a 3-d input, got {shape}")
            h = L.conv_output_extent(shape[1], spec.size, spec.stride, 0)
            w = L.conv_output_extent(shape[2], spec.size, spec.stride, 0)
            if h <= 0 or w <= 0:
                raise L.ShapeError(f"layer {i} (maxpool2d) window does not fit {shape}")
            shape = (shape[0], h, w)
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif spec.kind == "dense":
            if len(shape) != 1 or shape[0] != spec.in_features:
                raise L.ShapeError(f"layer {i} (dense) expects {spec.in_features} features, "
                                   f"input shape is {shape}")
            shape = (spec.out_features,)
        # relu keeps the shape
        out.append(shape)
    return out


def _build_gate_map(specs: list[LayerSpec]) -> list[tuple[int, int, int]]:
    """(conv_layer_index, start, stop) slices into the flat gate vector.

    The gate for a conv layer is applied after the next ReLU in the
    sequence; every conv must be followed by a ReLU before the next conv.
    """
    gate_map = []
    offset = 0
    pending: int | None = None
    for i, spec in enumerate(specs):
        if spec.kind == "conv2d":
            if pending is not None:
                raise ValueError(f"conv layer {pending} has no ReLU before conv layer {i}; "
                                 "gates attach to post-ReLU maps")
            gate_map.append((i, offset, offset + spec.out_channels))
            offset += spec.out_channels
            pending = i
        elif spec.kind == "relu" and pending is not None:
            pending = None
    if pending is not None:
        raise ValueError(f"conv layer {pending} is not followed by a ReLU")
    return gate_map


class GatedNetwork:
    """Sequential ConvNet with a control-gate slot after every conv
    channel's ReLU. Immutable once built apart from in-place parameter
    updates done by the trainer."""

    def __init__(self, specs: list[LayerSpec], input_shape: tuple[int, int, int],
                 num_classes: int):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.num_classes = int(num_classes)
        self.shapes = infer_shapes(self.specs, self.input_shape)
        if self.shapes[-1] != (self.num_classes,):
            raise L.ShapeError(f"final layer produces {self.shapes[-1]}, "
                               f"expected ({self.num_classes},)")
        self.gate_map = _build_gate_map(self.specs)
        self.total_gated_channels = sum(stop - start for _, start, stop in self.gate_map)
        # relu layer index -> slice of the gate vector it applies
        self._gate_at_relu: dict[int, tuple[int, int]] = {}
        for conv_i, start, stop in self.gate_map:
            for j in range(conv_i + 1, len(self.specs)):
                if self.specs[j].kind == "relu":
                    self._gate_at_relu[j] = (start, stop)
                    break
        self.params: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for i, spec in enumerate(self.specs):
            if spec.kind == "conv2d":
                w = np.zeros((spec.out_channels, spec.in_channels, spec.kernel, spec.kernel))
                b = np.zeros(spec.out_channels)
                self.params[i] = (w, b)
            elif spec.kind == "dense":
                self.params[i] = (np.zeros((spec.out_features, spec.in_features)),
                                  np.zeros(spec.out_features))

    # -- gate bookkeeping -------------------------------------------------

    def conv_layer_indices(self) -> list[int]:
        return [i for i, _, _ in self.gate_map]

    def gate_slice(self, conv_layer_index: int) -> tuple[int, int]:
        for i, start, stop in self.gate_map:
            if i == conv_layer_index:
                return start, stop
        raise KeyError(conv_layer_index)

    def init_parameters(self, rng: np.random.Generator) -> None:
        """Kaiming-style fan-in scaled uniform init; biases zero."""
        for i, spec in enumerate(self.specs):
            if spec.kind == "conv2d":
                fan_in = spec.in_channels * spec.kernel * spec.kernel
            elif spec.kind == "dense":
                fan_in = spec.in_features
            else:
                continue
            bound = np.sqrt(6.0 / fan_in)
            w, b = self.params[i]
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = 0.0

    # -- forward / backward -----------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise L.ShapeError(f"input shape {x.shape} does not match network input "
                               f"{self.input_shape}")
        return x

    def run(self, x, gates: np.ndarray | None = None, keep_caches: bool = False):
        """Shared forward pass. With ``gates`` given, each conv channel's
        post-ReLU map is scaled by its gate value; gates=None and all-ones
        gates follow the same arithmetic path."""
        x = self._check_input(x)
        if gates is not None:
            gates = np.asarray(gates, dtype=np.float64).ravel()
            if gates.shape != (self.total_gated_channels,):
                raise L.ShapeError(f"gate vector has length {gates.shape[0]}, network has "
                                   f"{self.total_gated_channels} gated channels")
        caches = [] if keep_caches else None
        for i, spec in enumerate(self.specs):
            if spec.kind == "conv2d":
                w, b = self.params[i]
                x, cache = L.conv2d_forward(x, w, b, spec.stride, spec.padding)
            elif spec.kind == "relu":
                x, cache = L.relu_forward(x)
                if i in self._gate_at_relu and gates is not None:
                    start, stop = self._gate_at_relu[i]
                    pre_gate = x
                    x = x * gates[start:stop][None, :, None, None]
                    cache = (cache, pre_gate, (start, stop))
            elif spec.kind == "maxpool2d":
                x, cache = L.maxpool2d_forward(x, spec.size, spec.stride)
            elif spec.kind == "flatten":
                x, cache = L.flatten_forward(x)
            elif spec.kind == "dense":
                w, b = self.params[i]
                x, cache = L.dense_forward(x, w, b)
            if keep_caches:
                caches.append(cache)
        return (x, caches) if keep_caches else x

    def backward(self, caches, grad_logits, gates: np.ndarray | None = None,
                 want_param_grads: bool = True):
        """Backpropagate ``grad_logits`` through cached activations.

        Returns (param_grads, gate_grads); param_grads maps layer index to
        (grad_w, grad_b) when requested, gate_grads is the flat gradient
        wrt the gate vector when ``gates`` was used in the forward pass.
        """
        grad = np.asarray(grad_logits, dtype=np.float64)
        param_grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        gate_grads = (np.zeros(self.total_gated_channels)
                      if gates is not None else None)
        for i in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[i]
            cache = caches[i]
            if spec.kind == "conv2d":
                grad, gw, gb = L.conv2d_backward(grad, cache)
                if want_param_grads:
                    param_grads[i] = (gw, gb)
            elif spec.kind == "relu":
                if isinstance(cache, tuple):  # gated relu
                    relu_cache, pre_gate, (start, stop) = cache
                    gate_grads[start:stop] = np.einsum("nchw,nchw->c", grad, pre_gate)
                    grad = grad * gates[start:stop][None, :, None, None]
                    cache = relu_cache
                grad = L.relu_backward(grad, cache)
            elif spec.kind == "maxpool2d":
                grad = L.maxpool2d_backward(grad, cache)
            elif spec.kind == "flatten":
                grad = L.flatten_backward(grad, cache)
            elif spec.kind == "dense":
                grad, gw, gb = L.dense_backward(grad, cache)
                if want_param_grads:
                    param_grads[i] = (gw, gb)
        return param_grads, gate_grads


def forward(net: GatedNetwork, x) -> np.ndarray:
    """Ungated logits."""
    return net.run(x)


def forward_gated(net: GatedNetwork, x, gates, cache_for_backward: bool = False):
    """Logits with each conv channel's post-ReLU map scaled by its gate."""
    return net.run(x, gates=np.asarray(gates, dtype=np.float64),
                   keep_caches=cache_for_backward)


def mnist5(num_classes: int = 10) -> GatedNetwork:
    """Reference 5-layer net for 1x28x28 inputs: three conv-ReLU-pool
    blocks (8, 16, 32 channels; 56 gated channels total) and two dense
    layers. Parameters start at zero; call init_parameters to randomize."""
    specs = [
        conv(1, 8, 3, padding=1), relu(), maxpool(2),
        conv(8, 16, 3, padding=1), relu(), maxpool(2),
        conv(16, 32, 3, padding=1), relu(), maxpool(2),
        flatten(),
        dense(32 * 3 * 3, 64), relu(),
        dense(64, num_classes),
    ]
    return GatedNetwork(specs, (1, 28, 28), num_classes)


# -- serialization --------------------------------------------------------

def save_model(net: GatedNetwork, path) -> None:
    """Write the network to ``path`` in the .drnm format: magic, version,
    JSON architecture header, then per-layer little-endian float64 weight
    and bias blocks, each preceded by its declared shape."""
    header = json.dumps({
        "input_shape": list(net.input_shape),
        "num_classes": net.num_classes,
        "layers": [s.to_dict() for s in net.specs],
    }).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", MODEL_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for i in sorted(net.params):
            for arr in net.params[i]:
                f.write(struct.pack("<I", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    offset = f.tell()
    data = f.read(n)
    if len(data) != n:
        raise ParseError(f"truncated model file: expected {n} bytes for {what}", offset)
    return data


def load_model(path) -> GatedNetwork:
    """Read a .drnm file back into a GatedNetwork. Round-trip with
    save_model is bitwise lossless."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MODEL_MAGIC:
            raise ParseError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", 0)
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != MODEL_VERSION:
            raise ParseError(f"unsupported model version {version}", 4)
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        try:
            header = json.loads(_read_exact(f, hlen, "header").decode("utf-8"))
            specs = [LayerSpec.from_dict(d) for d in header["layers"]]
            net = GatedNetwork(specs, tuple(header["input_shape"]), header["num_classes"])
        except (ValueError, KeyError, TypeError) as e:
            if isinstance(e, ParseError):
                raise
            raise ParseError(f"invalid architecture header: {e}", 12) from e
        for i in sorted(net.params):
            for slot, expect in zip(("weights", "bias"), net.params[i]):
                (ndim,) = struct.unpack("<I", _read_exact(f, 4, f"layer {i} {slot} ndim"))
                if ndim > 4:
                    raise ParseError(f"layer {i} {slot}: implausible ndim {ndim}", f.tell() - 4)
                shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, f"layer {i} {slot} shape"))
                if tuple(shape) != expect.shape:
                    raise IntegrityError(
                        f"layer {i} ({net.specs[i].kind}) {slot}: declared shape {tuple(shape)} "
                        f"does not match architecture shape {expect.shape}")
                n = int(np.prod(shape))
                data = _read_exact(f, 8 * n, f"layer {i} {slot} data")
                expect[...] = np.frombuffer(data, dtype="<f8").reshape(shape)
        trailing = f.read(1)
        if trailing:
            raise ParseError("trailing bytes after parameter blocks", f.tell() - 1)
    return net
