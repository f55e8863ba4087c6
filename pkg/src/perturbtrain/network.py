"""Feedforward ReLU networks with hand-written reverse-mode gradients.

A network is a list of affine layers ``z = W f + b`` followed by an
elementwise activation. The last layer is always linear and produces logits
for a softmax cross-entropy loss.

Inputs may be a single sample (1-D) or a batch with one sample per row.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, DimensionError, FormatError, InputError, NonFiniteError

RELU = "relu"
IDENTITY = "identity"
_ACTIVATION_TAGS = {IDENTITY: 0, RELU: 1}
_TAG_ACTIVATIONS = {v: k for k, v in _ACTIVATION_TAGS.items()}

CHECKPOINT_MAGIC = b"PTNN"
CHECKPOINT_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray | None = None
    activation: str = RELU

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]


@dataclass
class LayeredNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("a network needs at least one layer")
        for h, layer in enumerate(self.layers):
            if layer.weight.ndim != 2:
                raise DimensionError(f"layer {h + 1}: weight must be 2-D, got {layer.weight.shape}")
            if layer.bias is not None and layer.bias.shape != (layer.fan_out,):
                raise DimensionError(
                    f"layer {h + 1}: bias shape {layer.bias.shape} does not match {layer.fan_out} outputs"
                )
            if layer.activation not in _ACTIVATION_TAGS:
                raise InputError(f"layer {h + 1}: unknown activation {layer.activation!r}")
        for h in range(1, len(self.layers)):
            if self.layers[h].fan_in != self.layers[h - 1].fan_out:
                raise DimensionError(
                    f"layer {h + 1} expects {self.layers[h].fan_in} inputs but layer {h} "
                    f"produces {self.layers[h - 1].fan_out}"
                )
        if self.layers[-1].activation != IDENTITY:
            raise InputError("final layer must be linear (identity activation)")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def num_classes(self) -> int:
        return self.layers[-1].fan_out

    @property
    def has_bias(self) -> bool:
        return any(layer.bias is not None for layer in self.layers)

    def params(self) -> list[np.ndarray]:
        """Parameters in canonical order: W1, b1, W2, b2, ... (absent biases skipped)."""
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            if layer.bias is not None:
                out.append(layer.bias)
        return out

    def weights(self) -> list[np.ndarray]:
        return [layer.weight for layer in self.layers]

    def with_params(self, params) -> LayeredNet:
        params = list(params)
        layers = []
        i = 0
        for layer in self.layers:
            w = np.array(params[i], dtype=np.float64)
            i += 1
            if w.shape != layer.weight.shape:
                raise DimensionError(f"weight shape {w.shape} != {layer.weight.shape}")
            b = None
            if layer.bias is not None:
                b = np.array(params[i], dtype=np.float64)
                i += 1
                if b.shape != layer.bias.shape:
                    raise DimensionError(f"bias shape {b.shape} != {layer.bias.shape}")
            layers.append(Layer(w, b, layer.activation))
        if i != len(params):
            raise DimensionError(f"expected {i} parameter arrays, got {len(params)}")
        return LayeredNet(layers)

    def copy(self) -> LayeredNet:
        return self.with_params(self.params())

    def without_bias(self) -> LayeredNet:
        return LayeredNet([Layer(l.weight.copy(), None, l.activation) for l in self.layers])


def init_net(sizes, rng: np.random.Generator, bias: bool = True) -> LayeredNet:
    """He-initialised ReLU network; ``sizes`` lists widths from input to logits."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise InputError(f"invalid layer sizes {sizes}")
    layers = []
    for h, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        b = np.zeros(fan_out) if bias else None
        act = IDENTITY if h == len(sizes) - 2 else RELU
        layers.append(Layer(w, b, act))
    return LayeredNet(layers)


@dataclass(frozen=True)
class ForwardTrace:
    """Inputs, pre-activations ``z[h]`` and activations ``f[h]`` for h = 1..H.

    Lists are 0-indexed, so ``pre_activations[0]`` is z^(1). ``inputs`` is f^(0).
    """

    inputs: np.ndarray
    pre_activations: tuple
    activations: tuple

    @property
    def logits(self) -> np.ndarray:
        return self.activations[-1]

    @property
    def depth(self) -> int:
        return len(self.pre_activations)

    def layer_input(self, h: int) -> np.ndarray:
        """f^(h), with f^(0) the network input."""
        return self.inputs if h == 0 else self.activations[h - 1]


def _activate(z, activation):
    if activation == RELU:
        return np.maximum(z, 0.0)
    return z


def forward(net: LayeredNet, x) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise DimensionError(f"input shape {x.shape} does not match input width {net.input_dim}")
    f = x
    zs, fs = [], []
    for layer in net.layers:
        z = f @ layer.weight.T
        if layer.bias is not None:
            z = z + layer.bias
        f = _activate(z, layer.activation)
        zs.append(z)
        fs.append(f)
    if not np.all(np.isfinite(f)):
        raise NonFiniteError("forward pass produced non-finite logits")
    return ForwardTrace(x, tuple(zs), tuple(fs))


def softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"label out of range [0, {num_classes})")
    return labels.astype(np.int64)


def cross_entropy(logits, label) -> float:
    """-log softmax(logits)[label] for a single logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise DimensionError(f"cross_entropy expects 1-D logits, got {logits.shape}")
    label = int(_check_labels(label, logits.shape[0]))
    return float(-_log_softmax(logits)[label])


def per_sample_losses(logits, labels) -> np.ndarray:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = _check_labels(np.atleast_1d(labels), logits.shape[1])
    return -_log_softmax(logits)[np.arange(len(labels)), labels]


@dataclass
class GradientSet:
    """Gradients of the cross-entropy loss.

    ``weights`` and ``biases`` hold the gradient of the (batch-mean) loss.
    ``pre_activations`` and ``input`` hold per-sample gradients, one row per
    sample when the trace came from a batch.
    """

    weights: list
    biases: list
    pre_activations: list
    input: np.ndarray

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            if b is not None:
                out.append(b)
        return out


def backward(net: LayeredNet, trace: ForwardTrace, labels) -> GradientSet:
    """Exact gradients of cross_entropy(forward(net, x)) by reverse accumulation."""
    if trace.depth != net.depth:
        raise ConsistencyError(f"trace depth {trace.depth} != network depth {net.depth}")
    for h, layer in enumerate(net.layers):
        if trace.pre_activations[h].shape[-1] != layer.fan_out or trace.layer_input(h).shape[-1] != layer.fan_in:
            raise ConsistencyError(f"trace does not match network at layer {h + 1}")
    single = trace.inputs.ndim == 1
    logits = np.atleast_2d(trace.logits)
    labels = _check_labels(np.atleast_1d(labels), net.num_classes)
    n = logits.shape[0]
    if labels.shape[0] != n:
        raise ConsistencyError(f"{labels.shape[0]} labels for {n} samples")

    # Per-sample dl/dz for the logits layer.
    dz = softmax(logits)
    dz[np.arange(n), labels] -= 1.0

    H = net.depth
    dW = [None] * H
    db = [None] * H
    dZ = [None] * H
    for h in range(H - 1, -1, -1):
        layer = net.layers[h]
        if h < H - 1:
            z = np.atleast_2d(trace.pre_activations[h])
            if layer.activation == RELU:
                dz = dz * (z > 0.0)
        dZ[h] = dz
        f_prev = np.atleast_2d(trace.layer_input(h))
        dW[h] = dz.T @ f_prev / n
        db[h] = dz.sum(axis=0) / n if layer.bias is not None else None
        dz = dz @ layer.weight
    dx = dz
    if single:
        dZ = [d[0] for d in dZ]
        dx = dx[0]
    return GradientSet(dW, db, dZ, dx)


def batch_loss_and_grad(net: LayeredNet, inputs, labels) -> tuple[float, GradientSet]:
    """Mean loss and mean parameter gradient over a batch."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise InputError("batch must be a non-empty 2-D array of samples")
    trace = forward(net, inputs)
    loss = float(per_sample_losses(trace.logits, labels).mean())
    return loss, backward(net, trace, labels)


def batch_loss(net: LayeredNet, inputs, labels) -> float:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    return float(per_sample_losses(forward(net, inputs).logits, labels).mean())


def predict(net: LayeredNet, inputs) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index.
    return np.argmax(np.atleast_2d(forward(net, inputs).logits), axis=1)


def perturbed_copy(net: LayeredNet, noise) -> LayeredNet:
    """Return ``net`` with every parameter multiplied by (or offset by) ``noise``.

    ``noise`` is a :class:`perturbtrain.perturb.NoiseDraw`; its tensors follow
    the :meth:`LayeredNet.params` order. The source net is left untouched.
    """
    params = net.params()
    if len(noise.tensors) != len(params):
        raise DimensionError(f"noise has {len(noise.tensors)} tensors, network has {len(params)}")
    out = []
    for p, xi in zip(params, noise.tensors):
        if p.shape != xi.shape:
            raise DimensionError(f"noise shape {xi.shape} does not match parameter shape {p.shape}")
        if noise.mode == "multiplicative":
            out.append(p * xi)
        elif noise.mode == "additive":
            out.append(p + xi)
        else:
            raise InputError(f"unknown noise mode {noise.mode!r}")
    return net.with_params(out)


def save_checkpoint(net: LayeredNet, path) -> None:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, net.depth)]
    for layer in net.layers:
        parts.append(
            struct.pack(
                "<IIBB",
                layer.fan_out,
                layer.fan_in,
                1 if layer.bias is not None else 0,
                _ACTIVATION_TAGS[layer.activation],
            )
        )
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        if layer.bias is not None:
            parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> LayeredNet:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a network checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        layers = []
        for _ in range(count):
            out_dim, in_dim, has_bias, tag = struct.unpack_from("<IIBB", buf, pos)
            pos += 10
            nbytes = 8 * out_dim * in_dim
            if pos + nbytes > len(buf):
                raise FormatError(f"{path}: truncated checkpoint")
            w = np.frombuffer(buf, dtype="<f8", count=out_dim * in_dim, offset=pos).reshape(out_dim, in_dim)
            pos += nbytes
            b = None
            if has_bias:
                if pos + 8 * out_dim > len(buf):
                    raise FormatError(f"{path}: truncated checkpoint")
                b = np.frombuffer(buf, dtype="<f8", count=out_dim, offset=pos).copy()
                pos += 8 * out_dim
            if tag not in _TAG_ACTIVATIONS:
                raise FormatError(f"{path}: unknown activation tag {tag}")
            layers.append(Layer(w.astype(np.float64), b, _TAG_ACTIVATIONS[tag]))
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return LayeredNet(layers)
