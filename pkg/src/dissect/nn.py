"""Small dense/convolutional network engine.

Everything is float64 numpy. A :class:`Network` is an immutable value: it
holds its current parameters and a frozen snapshot of their values at
initialization, which the under-optimized edge selection needs later on.
Training returns a new network that shares the snapshot.

Conventions
-----------
* Dense weights have shape ``(n_out, n_in)``; entry ``[v, u]`` connects
  source neuron ``u`` to destination neuron ``v``.
* Conv kernels have shape ``(out_ch, in_ch, kh, kw)`` and act on
  ``(C, H, W)`` inputs. Neurons of a conv feature map are numbered in
  row-major ``(channel, row, col)`` order, which is also what
  :class:`Flatten` produces.
* Class labels are 0-based integers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DivergenceError,
    MissingSnapshotError,
    NumericError,
    ParseError,
    ResourceError,
    ShapeError,
    UnsupportedError,
)

ACTIVATIONS = ("relu", "identity", "softmax")


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dense:
    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    activation: str = "relu"

    kind = "dense"

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.weight.shape[1],):
            raise ShapeError(
                f"dense layer expects input shape ({self.weight.shape[1]},), got {tuple(input_shape)}"
            )
        return (self.weight.shape[0],)

    def params(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def linear(self, a):
        z = a @ self.weight.T
        if self.bias is not None:
            z = z + self.bias
        return z

    def backward(self, a, dz):
        dw = dz.T @ a
        grads = [dw] if self.bias is None else [dw, dz.sum(axis=0)]
        return grads, dz @ self.weight


@dataclass(frozen=True, eq=False)
class Conv2d:
    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    activation: str = "relu"

    kind = "conv2d"

    def output_shape(self, input_shape):
        oc, ic, kh, kw = self.weight.shape
        if len(input_shape) != 3 or input_shape[0] != ic:
            raise ShapeError(
                f"conv layer expects input shape ({ic}, H, W), got {tuple(input_shape)}"
            )
        _, h, w = input_shape
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"kernel {kh}x{kw} does not fit input {h}x{w}")
        return (oc, oh, ow)

    def params(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def _windows(self, a):
        p, s = self.padding, self.stride
        if p:
            a = np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))
        kh, kw = self.weight.shape[2:]
        # (N, C, OH, OW, kh, kw)
        return sliding_window_view(a, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]

    def linear(self, a):
        win = self._windows(a)
        z = np.tensordot(win, self.weight, axes=([1, 4, 5], [1, 2, 3]))
        z = z.transpose(0, 3, 1, 2)
        if self.bias is not None:
            z = z + self.bias[None, :, None, None]
        return np.ascontiguousarray(z)

    def backward(self, a, dz):
        win = self._windows(a)
        dw = np.tensordot(dz, win, axes=([0, 2, 3], [0, 2, 3]))
        grads = [dw] if self.bias is None else [dw, dz.sum(axis=(0, 2, 3))]
        n, c, h, w = a.shape
        p, s = self.padding, self.stride
        kh, kw = self.weight.shape[2:]
        oh, ow = dz.shape[2:]
        dwin = np.tensordot(dz, self.weight, axes=([1], [0]))  # (N, OH, OW, C, kh, kw)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + s * (oh - 1) + 1 : s, j : j + s * (ow - 1) + 1 : s] += (
                    dwin[..., i, j].transpose(0, 3, 1, 2)
                )
        return grads, dxp[:, :, p : p + h, p : p + w]


@dataclass(frozen=True, eq=False)
class Flatten:
    activation: str = "identity"

    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def params(self):
        return []

    def linear(self, a):
        return a.reshape(a.shape[0], -1)

    def backward(self, a, dz):
        return [], dz.reshape(a.shape)


def _with_params(layer, params):
    if isinstance(layer, Flatten):
        return layer
    bias = params[1] if layer.bias is not None else None
    return dataclasses.replace(layer, weight=params[0], bias=bias)


# --------------------------------------------------------------------------
# Network
# --------------------------------------------------------------------------


NO_SNAPSHOT = object()


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class Network:
    """Layered feedforward network with an initialization snapshot.

    Parameters
    ----------
    layers : sequence of Dense, Conv2d, Flatten
    input_shape : tuple
        Shape of a single input, ``(n,)`` or ``(C, H, W)``.
    init_params : list of arrays, optional
        Values of :meth:`params` at initialization. Defaults to a copy of
        the current parameters, i.e. the network is taken to be freshly
        initialized. Pass ``NO_SNAPSHOT`` for a network whose
        initialization is unknown (e.g. downloaded pre-trained weights).
    seed : int, optional
        Seed that produced the initialization, recorded for provenance.
    """

    def __init__(self, layers, input_shape, init_params=None, seed=None):
        frozen_layers = []
        shape = tuple(int(s) for s in input_shape)
        self.shapes = [shape]
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and i != len(layers) - 1:
                raise ValueError("softmax is only allowed on the output layer")
            layer = _with_params(layer, [_frozen(p) for p in layer.params()])
            if isinstance(layer, Conv2d) and (layer.stride < 1 or layer.padding < 0):
                raise ValueError("conv stride must be >= 1 and padding >= 0")
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
            frozen_layers.append(layer)
        if len(shape) != 1:
            raise ShapeError(f"network output must be a vector, got shape {shape}")
        self.layers = tuple(frozen_layers)
        self.input_shape = self.shapes[0]
        self.seed = seed
        current = self.params()
        if init_params is NO_SNAPSHOT:
            self.init_params = None
            return
        if init_params is None:
            init_params = current
        init_params = [_frozen(p) for p in init_params]
        if len(init_params) != len(current) or any(
            a.shape != b.shape for a, b in zip(init_params, current)
        ):
            raise ShapeError("init snapshot does not match the parameter shapes")
        self.init_params = tuple(init_params)

    @property
    def n_classes(self):
        return self.shapes[-1][0]

    @property
    def output_activation(self):
        return self.layers[-1].activation

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def with_params(self, params):
        """Copy of this network with new current parameters and the same snapshot."""
        params = list(params)
        layers = []
        for layer in self.layers:
            k = len(layer.params())
            layers.append(_with_params(layer, params[:k]))
            params = params[k:]
        init = NO_SNAPSHOT if self.init_params is None else self.init_params
        return Network(layers, self.input_shape, init, self.seed)

    def parametric_layers(self):
        """Indices of layers that carry a weight tensor (the graph layers)."""
        return [i for i, layer in enumerate(self.layers) if not isinstance(layer, Flatten)]

    @property
    def has_snapshot(self):
        return self.init_params is not None

    def without_snapshot(self):
        return Network(self.layers, self.input_shape, NO_SNAPSHOT, self.seed)

    def init_weight(self, layer_index):
        """Initial value of the weight tensor of ``layers[layer_index]``."""
        if self.init_params is None:
            raise MissingSnapshotError("network carries no initialization snapshot")
        pos = 0
        for i, layer in enumerate(self.layers):
            if i == layer_index:
                if isinstance(layer, Flatten):
                    raise ValueError("flatten layers carry no parameters")
                return self.init_params[pos]
            pos += len(layer.params())
        raise IndexError(layer_index)

    def has_bias(self):
        return any(getattr(layer, "bias", None) is not None for layer in self.layers)

    def digest(self):
        """Hex SHA-256 of the serialized network (weights and snapshot)."""
        return hashlib.sha256(dumps_network(self)).hexdigest()

    def snapshot_digest(self):
        h = hashlib.sha256()
        for p in self.init_params or ():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()


def he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_mlp(widths, seed=0, bias=True, hidden_activation="relu", output_activation="identity"):
    """Fully-connected network with layer widths ``widths[0] -> ... -> widths[-1]``."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        layers.append(
            Dense(
                he_uniform(rng, (n_out, n_in), n_in),
                np.zeros(n_out) if bias else None,
                output_activation if last else hidden_activation,
            )
        )
    return Network(layers, (widths[0],), seed=seed)


def build_toy_net(seed=0, channels=4, hidden=8, n_classes=2):
    """One conv layer and two dense layers for 1x3x3 inputs.

    conv 1->4 channels with 2x2 kernels gives a 4x2x2 map (16 neurons),
    then dense 16->8->2.
    """
    rng = np.random.default_rng(seed)
    conv_w = he_uniform(rng, (channels, 1, 2, 2), 4)
    d1 = he_uniform(rng, (hidden, channels * 4), channels * 4)
    d2 = he_uniform(rng, (n_classes, hidden), hidden)
    layers = [
        Conv2d(conv_w, np.zeros(channels), activation="relu"),
        Flatten(),
        Dense(d1, np.zeros(hidden), "relu"),
        Dense(d2, np.zeros(n_classes), "identity"),
    ]
    return Network(layers, (1, 3, 3), seed=seed)


def build_lenet(seed=0, n_classes=10):
    """LeNet-style net for 1x28x28 inputs; strided convs stand in for pooling."""
    rng = np.random.default_rng(seed)
    layers = [
        Conv2d(he_uniform(rng, (6, 1, 5, 5), 25), np.zeros(6), stride=2, activation="relu"),
        Conv2d(he_uniform(rng, (16, 6, 5, 5), 150), np.zeros(16), stride=2, activation="relu"),
        Flatten(),
        Dense(he_uniform(rng, (120, 256), 256), np.zeros(120), "relu"),
        Dense(he_uniform(rng, (84, 120), 120), np.zeros(84), "relu"),
        Dense(he_uniform(rng, (n_classes, 84), 84), np.zeros(n_classes), "identity"),
    ]
    return Network(layers, (1, 28, 28), seed=seed)


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


@dataclass
class ActivationRecord:
    """Per-layer values of one forward pass.

    ``outputs[0]`` is the input and ``outputs[i + 1]`` the output of
    ``layers[i]``; ``pre_activations[i]`` is the value before the
    activation function of ``layers[i]``.
    """

    outputs: list
    pre_activations: list


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "softmax":
        return _softmax(z)
    return z


def _check_batch(network, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != network.input_shape:
        raise ShapeError(
            f"expected inputs of shape {network.input_shape}, got {X.shape[1:]}"
        )
    return X


def forward_batch(network, X):
    """Return ``(logits, outputs, pre_activations)`` for a batch ``X``."""
    X = _check_batch(network, X)
    outputs, pres = [X], []
    a = X
    for layer in network.layers:
        z = layer.linear(a)
        pres.append(z)
        a = _activate(z, layer.activation)
        outputs.append(a)
    logits = pres[-1] if network.output_activation == "softmax" else outputs[-1]
    return logits, outputs, pres


def backward_batch(network, outputs, pres, grad_logits):
    """Backpropagate ``grad_logits``; return ``(grad_input, param_grads)``.

    ReLU uses subgradient 0 at exactly 0.
    """
    g = grad_logits
    param_grads = []
    last = len(network.layers) - 1
    for i in range(last, -1, -1):
        layer = network.layers[i]
        if layer.activation == "relu":
            dz = g * (pres[i] > 0)
        elif layer.activation == "softmax" and i == last:
            dz = g
        elif layer.activation == "softmax":
            raise UnsupportedError("softmax inside the network")
        else:
            dz = g
        grads, g = layer.backward(outputs[i], dz)
        param_grads = grads + param_grads
    return g, param_grads


def forward(network, x):
    """Evaluate one input; return ``(logits, record)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != network.input_shape:
        raise ShapeError(f"expected input of shape {network.input_shape}, got {x.shape}")
    logits, outputs, pres = forward_batch(network, x[None])
    return logits[0], ActivationRecord([o[0] for o in outputs], [p[0] for p in pres])


def predict(network, X, batch_size=1024):
    X = _check_batch(network, X)
    out = []
    for start in range(0, len(X), batch_size):
        logits, _, _ = forward_batch(network, X[start : start + batch_size])
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def accuracy(network, X, y):
    if len(X) == 0:
        return float("nan")
    return float(np.mean(predict(network, X) == np.asarray(y)))


def cross_entropy(logits, y):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def grad_input_batch(network, X, y, reduction="mean"):
    """Gradient of the cross-entropy loss w.r.t. each input of a batch."""
    logits, outputs, pres = forward_batch(network, X)
    y = np.asarray(y, dtype=int)
    _, grad = cross_entropy(logits, y)
    if reduction == "sum":
        grad = grad * len(y)
    gx, _ = backward_batch(network, outputs, pres, grad)
    if not np.all(np.isfinite(gx)):
        raise NumericError("non-finite value in the input gradient")
    return gx


def grad_input(network, x, target_class):
    """d(cross-entropy(softmax(logits), target_class)) / dx for a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != network.input_shape:
        raise ShapeError(f"expected input of shape {network.input_shape}, got {x.shape}")
    if not 0 <= target_class < network.n_classes:
        raise ValueError(f"target class {target_class} outside [0, {network.n_classes})")
    return grad_input_batch(network, x[None], [target_class], reduction="sum")[0]


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def train(
    network: Network,
    X,
    y,
    config: TrainConfig = TrainConfig(),
    *,
    perturb: Optional[Callable] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> Network:
    """Mini-batch training on softmax cross-entropy.

    Returns a new network; ``network`` and its init snapshot are untouched.
    ``perturb(net, xb, yb)`` may replace each batch before the gradient step
    (adversarial training). ``on_epoch(epoch, mean_loss)`` is called after
    every epoch.
    """
    X = _check_batch(network, X)
    y = np.asarray(y, dtype=int)
    if len(X) == 0:
        raise ValueError("empty training set")
    if len(X) != len(y):
        raise ShapeError(f"{len(X)} inputs but {len(y)} labels")
    if y.min() < 0 or y.max() >= network.n_classes:
        raise ValueError(f"labels must lie in [0, {network.n_classes})")
    params = [np.array(p) for p in network.params()]
    if config.optimizer == "adam":
        opt = _Adam(params, config.lr)
    elif config.optimizer == "sgd":
        opt = _SGD(params, config.lr)
    else:
        raise ValueError(f"unknown optimizer {config.optimizer!r}")
    rng = np.random.default_rng(config.seed)
    net = network
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        losses = []
        for b, start in enumerate(range(0, len(X), config.batch_size)):
            idx = order[start : start + config.batch_size]
            xb, yb = X[idx], y[idx]
            if perturb is not None:
                xb = perturb(net, xb, yb)
            logits, outputs, pres = forward_batch(net, xb)
            loss, grad = cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            _, grads = backward_batch(net, outputs, pres, grad)
            opt.step(params, grads)
            net = network.with_params(params)
            losses.append(loss * len(idx))
        if on_epoch is not None:
            on_epoch(epoch, float(np.sum(losses) / len(X)))
    return network.with_params(params)


# --------------------------------------------------------------------------
# Convolution as a sparse matrix
# --------------------------------------------------------------------------


@dataclass
class SparseMatrix:
    """COO matrix sorted by (row, col).

    ``params[k]`` is the flat index into the originating weight tensor of
    the entry ``(rows[k], cols[k])``.
    """

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    params: np.ndarray

    def toarray(self):
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.values
        return out

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64).ravel()
        return np.bincount(self.rows, weights=self.values * x[self.cols], minlength=self.shape[0])

    def triples(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))


def conv_as_matrix(layer: Conv2d, input_shape) -> SparseMatrix:
    """Sparse fully-connected equivalent of a conv layer (bias excluded).

    Row index is the flattened ``(out_ch, oh, ow)`` output neuron and column
    index the flattened ``(in_ch, ih, iw)`` input neuron; positions that
    fall into the zero padding are dropped.
    """
    if not isinstance(layer, Conv2d):
        raise UnsupportedError("conv_as_matrix needs a Conv2d layer")
    c, h, w = input_shape
    oc, oh, ow = layer.output_shape(input_shape)
    _, ic, kh, kw = layer.weight.shape
    s, p = layer.stride, layer.padding
    o, i, r, q, a, b = np.meshgrid(
        np.arange(oc), np.arange(ic), np.arange(oh), np.arange(ow),
        np.arange(kh), np.arange(kw), indexing="ij",
    )
    ih = r * s - p + a
    iw = q * s - p + b
    ok = (ih >= 0) & (ih < h) & (iw >= 0) & (iw < w)
    o, i, r, q, a, b, ih, iw = (t[ok] for t in (o, i, r, q, a, b, ih, iw))
    rows = (o * oh + r) * ow + q
    cols = (i * h + ih) * w + iw
    params = ((o * ic + i) * kh + a) * kw + b
    order = np.lexsort((cols, rows))
    rows, cols, params = rows[order], cols[order], params[order]
    values = layer.weight.ravel()[params]
    return SparseMatrix((oc * oh * ow, c * h * w), rows, cols, values, params)


def dense_as_matrix(layer: Dense) -> SparseMatrix:
    n_out, n_in = layer.weight.shape
    rows, cols = np.divmod(np.arange(n_out * n_in), n_in)
    params = np.arange(n_out * n_in)
    return SparseMatrix((n_out, n_in), rows, cols, layer.weight.ravel().copy(), params)


# --------------------------------------------------------------------------
# Jacobians
# --------------------------------------------------------------------------


def _check_piecewise_linear(network):
    for layer in network.layers:
        if layer.activation not in ("relu", "identity"):
            raise UnsupportedError(
                f"jacobian needs ReLU/identity activations, found {layer.activation!r}"
            )


def jacobian(network, x):
    """Jacobian of the raw output ``g(x)``: a ``(K, n_0)`` matrix."""
    _check_piecewise_linear(network)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != network.input_shape:
        raise ShapeError(f"expected input of shape {network.input_shape}, got {x.shape}")
    k = network.n_classes
    _, outputs, pres = forward_batch(network, np.repeat(x[None], k, axis=0))
    gx, _ = backward_batch(network, outputs, pres, np.eye(k))
    return gx.reshape(k, -1)


def jacobian_path_sum(network, x, max_paths=10**6):
    """Jacobian of ``g(x)`` as a sum of weight products over active paths.

    A path visits one neuron per layer; it is active when every ReLU neuron
    on it has a strictly positive pre-activation. Only bias-free dense
    networks are supported.
    """
    _check_piecewise_linear(network)
    for layer in network.layers:
        if not isinstance(layer, Dense):
            raise UnsupportedError("path sums are defined for fully-connected networks only")
        if layer.bias is not None:
            raise UnsupportedError("path sums need a bias-free network")
    widths = [network.input_shape[0]] + [layer.weight.shape[0] for layer in network.layers]
    total = int(np.prod(widths, dtype=object))
    if total > max_paths:
        raise ResourceError(f"{total} paths exceed the guard of {max_paths}")
    _, record = forward(network, x)
    active = [
        np.ones(len(z), dtype=bool) if layer.activation == "identity" else z > 0
        for layer, z in zip(network.layers, record.pre_activations)
    ]
    weights = [layer.weight for layer in network.layers]
    out = np.zeros((widths[-1], widths[0]))
    for path in itertools.product(*(range(n) for n in widths)):
        if not all(active[l][path[l + 1]] for l in range(len(weights))):
            continue
        prod = 1.0
        for l, w in enumerate(weights):
            prod *= w[path[l + 1], path[l]]
        out[path[-1], path[0]] += prod
    return out


# --------------------------------------------------------------------------
# Weight file container
# --------------------------------------------------------------------------

MAGIC = b"DSCT"
FORMAT_VERSION = 1


def dump_container(header: dict, arrays: Sequence[np.ndarray]) -> bytes:
    """Serialize a JSON header and float64 arrays.

    Layout: ``MAGIC``, u64 header length, UTF-8 JSON header, then for every
    array a u64 element count followed by little-endian float64 values.
    Array shapes live in the header.
    """
    head = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<Q", len(head)), head]
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8").ravel()
        parts.append(struct.pack("<Q", a.size))
        parts.append(a.tobytes())
    return b"".join(parts)


def load_container(data: bytes):
    if data[:4] != MAGIC:
        raise ParseError("bad magic in container", 0)
    pos = 4
    if len(data) < pos + 8:
        raise ParseError("truncated header length", pos)
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) < pos + n:
        raise ParseError("truncated header", pos)
    header = json.loads(data[pos : pos + n].decode())
    pos += n
    arrays = []
    while pos < len(data):
        if len(data) < pos + 8:
            raise ParseError("truncated array length", pos)
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if len(data) < pos + 8 * count:
            raise ParseError("truncated array payload", pos)
        arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64))
        pos += 8 * count
    return header, arrays


def _layer_descriptor(layer):
    d = {"kind": layer.kind, "activation": layer.activation}
    if not isinstance(layer, Flatten):
        d["shape"] = list(layer.weight.shape)
        d["bias"] = layer.bias is not None
    if isinstance(layer, Conv2d):
        d["stride"] = layer.stride
        d["padding"] = layer.padding
    return d


def dumps_network(network) -> bytes:
    header = {
        "version": FORMAT_VERSION,
        "type": "network",
        "seed": network.seed,
        "input_shape": list(network.input_shape),
        "layers": [_layer_descriptor(l) for l in network.layers],
        "snapshot": network.has_snapshot,
    }
    return dump_container(header, list(network.params()) + list(network.init_params or ()))


def loads_network(data: bytes) -> Network:
    header, arrays = load_container(data)
    if header.get("type") != "network":
        raise ParseError(f"container holds {header.get('type')!r}, not a network")
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported version {header.get('version')}")
    shapes = []
    for d in header["layers"]:
        if d["kind"] == "flatten":
            continue
        shapes.append(tuple(d["shape"]))
        if d["bias"]:
            shapes.append((d["shape"][0],))
    expected = (2 if header["snapshot"] else 1) * len(shapes)
    if len(arrays) != expected:
        raise ParseError(f"expected {expected} arrays, found {len(arrays)}")
    current = [a.reshape(s) for a, s in zip(arrays, shapes)]
    if header["snapshot"]:
        init = [a.reshape(s) for a, s in zip(arrays[len(shapes):], shapes)]
    else:
        init = NO_SNAPSHOT
    layers, k = [], 0
    for d in header["layers"]:
        if d["kind"] == "flatten":
            layers.append(Flatten())
            continue
        w = current[k]
        b = current[k + 1] if d["bias"] else None
        k += 2 if d["bias"] else 1
        if d["kind"] == "dense":
            layers.append(Dense(w, b, d["activation"]))
        elif d["kind"] == "conv2d":
            layers.append(Conv2d(w, b, d["stride"], d["padding"], d["activation"]))
        else:
            raise ParseError(f"unknown layer kind {d['kind']!r}")
    return Network(layers, tuple(header["input_shape"]), init, header["seed"])


def save_network(network, path):
    with open(path, "wb") as f:
        f.write(dumps_network(network))


def load_network(path) -> Network:
    with open(path, "rb") as f:
        return loads_network(f.read())
