"""Small feedforward networks with dense, low-rank and structured layers.

Activations flow as ``d x b`` matrices (one example per column). The last
layer's outputs are logits; :func:`forward` applies a stabilized softmax and
:func:`loss_and_gradients` the mean cross-entropy. Structured layers compute
their parameter gradients with :func:`ldr.toeplitz_like.fast_gradients`.
"""

from __future__ import annotations

import copy
import dataclasses
import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ldr.data import minibatches
from ldr.exceptions import DimensionMismatch, IncompatibleDimensions
from ldr.toeplitz_like import (
    RectangularTransform,
    ToeplitzLikeTransform,
    rect_forward,
    rect_gradients,
    rect_transpose,
)

RELU_GAIN = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class Dense:
    out_dim: int
    bias: bool = True


@dataclass(frozen=True)
class LowRank:
    """``W = G H^T`` with ``G: out x rank`` and ``H: in x rank``."""

    out_dim: int
    rank: int
    bias: bool = True


@dataclass(frozen=True)
class Circulant:
    """Square circulant ``Z_1(v)``; only the first column ``v`` is learned."""

    n: int
    bias: bool = True


@dataclass(frozen=True)
class ToeplitzLike:
    """``m x n`` Toeplitz-like map of displacement rank ``r`` per square block."""

    m: int
    n: int
    r: int
    bias: bool = True


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"

    def __post_init__(self):
        if self.kind not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.kind!r}")


SPEC_TYPES = {cls.__name__: cls for cls in (Dense, LowRank, Circulant, ToeplitzLike, Activation)}


def spec_to_dict(spec):
    return {"type": type(spec).__name__, **dataclasses.asdict(spec)}


def spec_from_dict(d):
    d = dict(d)
    return SPEC_TYPES[d.pop("type")](**d)


# ---------------------------------------------------------------------------
# layers


class Layer:
    structured = False
    param_names = ()

    def forward(self, X):
        raise NotImplementedError

    def backward(self, dY, need_input_grad=True):
        """Return the input gradient (or ``None``) and a dict of parameter gradients."""
        raise NotImplementedError

    def get_param(self, name):
        return getattr(self, name).copy()

    def set_param(self, name, value):
        cur = getattr(self, name)
        cur[...] = np.asarray(value, dtype=np.float64).reshape(cur.shape)

    def update(self, name, delta):
        getattr(self, name)[...] -= delta

    @property
    def parameter_count(self):
        return sum(self.get_param(p).size for p in self.param_names)


class DenseLayer(Layer):
    def __init__(self, W, b=None):
        self.W = np.array(W, dtype=np.float64)
        self.b = None if b is None else np.array(b, dtype=np.float64)
        self.param_names = ("W", "b") if b is not None else ("W",)

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]

    def forward(self, X):
        self._X = X
        Y = self.W @ X
        if self.b is not None:
            Y += self.b[:, None]
        return Y

    def backward(self, dY, need_input_grad=True):
        grads = {"W": dY @ self._X.T}
        if self.b is not None:
            grads["b"] = dY.sum(axis=1)
        return (self.W.T @ dY if need_input_grad else None), grads


class LowRankLayer(Layer):
    def __init__(self, G, H, b=None):
        self.G = np.array(G, dtype=np.float64)
        self.H = np.array(H, dtype=np.float64)
        self.b = None if b is None else np.array(b, dtype=np.float64)
        self.param_names = ("G", "H", "b") if b is not None else ("G", "H")

    @property
    def in_dim(self):
        return self.H.shape[0]

    @property
    def out_dim(self):
        return self.G.shape[0]

    def forward(self, X):
        self._X = X
        self._P = self.H.T @ X
        Y = self.G @ self._P
        if self.b is not None:
            Y += self.b[:, None]
        return Y

    def backward(self, dY, need_input_grad=True):
        dP = self.G.T @ dY
        grads = {"G": dY @ self._P.T, "H": self._X @ dP.T}
        if self.b is not None:
            grads["b"] = dY.sum(axis=1)
        return (self.H @ dP if need_input_grad else None), grads


class StructuredLayer(Layer):
    """Bias plus a :class:`RectangularTransform`.

    With ``learn_h=False`` every ``h`` stays at ``e_1`` so each block is the
    plain circulant ``Z_1(g)``.
    """

    structured = True

    def __init__(self, transform, b=None, learn_h=True):
        self.R = transform
        self.b = None if b is None else np.array(b, dtype=np.float64)
        self.learn_h = learn_h
        names = []
        for k in range(len(self.R.inner)):
            names.append(f"G{k}")
            if learn_h:
                names.append(f"H{k}")
        if self.b is not None:
            names.append("b")
        self.param_names = tuple(names)

    @property
    def in_dim(self):
        return self.R.n

    @property
    def out_dim(self):
        return self.R.m

    def _split(self, name):
        return name[0], int(name[1:])

    def get_param(self, name):
        if name == "b":
            return self.b.copy()
        which, k = self._split(name)
        T = self.R.inner[k]
        return (T.G if which == "G" else T.H).copy()

    def set_param(self, name, value):
        if name == "b":
            self.b[...] = value
            return
        which, k = self._split(name)
        T = self.R.inner[k]
        if which == "G":
            T.set_generators(G=value)
        else:
            T.set_generators(H=value)

    def update(self, name, delta):
        if name == "b":
            self.b -= delta
            return
        which, k = self._split(name)
        T = self.R.inner[k]
        if which == "G":
            T.apply_update(dG=delta)
        else:
            T.apply_update(dH=delta)

    def forward(self, X):
        # fresh parameter spectra, shared by this forward and the matching backward
        self.R.cache_spectra()
        self._X = X
        Y = rect_forward(self.R, X)
        if self.b is not None:
            Y = Y + self.b[:, None]
        return Y

    def backward(self, dY, need_input_grad=True):
        grads = {}
        for k, gp in enumerate(rect_gradients(self.R, self._X, dY)):
            grads[f"G{k}"] = gp.dG
            if self.learn_h:
                grads[f"H{k}"] = gp.dH
        if self.b is not None:
            grads["b"] = dY.sum(axis=1)
        dX = rect_transpose(self.R, dY) if need_input_grad else None
        return dX, grads

    def invalidate(self):
        self.R.invalidate()


class ActivationLayer(Layer):
    def __init__(self, kind="relu"):
        self.kind = kind

    def forward(self, X):
        if self.kind == "identity":
            return X
        self._mask = X > 0
        return np.where(self._mask, X, 0.0)

    def backward(self, dY, need_input_grad=True):
        if self.kind == "identity":
            return dY, {}
        return dY * self._mask, {}

    @property
    def parameter_count(self):
        return 0


# ---------------------------------------------------------------------------
# network


class Network:
    def __init__(self, input_dim, specs, layers, class_count):
        self.input_dim = input_dim
        self.specs = list(specs)
        self.layers = list(layers)
        self.class_count = class_count

    def logits(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != self.input_dim:
            raise DimensionMismatch(f"input must be {self.input_dim} x b, got {X.shape}")
        for layer in self.layers:
            X = layer.forward(X)
        return X

    def copy(self):
        return copy.deepcopy(self)

    def parameters(self):
        """``(layer_index, name, array_copy)`` for every learnable array, in layer order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name in layer.param_names:
                out.append((i, name, layer.get_param(name)))
        return out

    def invalidate(self):
        for layer in self.layers:
            if layer.structured:
                layer.invalidate()


def _check_rect(m, n):
    if m > n and m % n:
        raise IncompatibleDimensions(f"ToeplitzLike m={m} is not a multiple of n={n}")


def build_network(input_dim, specs, seed=0, zero=False):
    """Instantiate layers for ``specs``; the last parameterized layer sets the class count.

    Weights are Gaussian, scaled for a ``sqrt(2)`` gain when the next spec
    is a rectifier and unit gain otherwise; biases start at zero.
    ``zero=True`` makes every parameter zero.
    """
    rng = np.random.default_rng(seed)
    layers = []
    dim = input_dim
    specs = list(specs)
    for idx, spec in enumerate(specs):
        nxt = specs[idx + 1] if idx + 1 < len(specs) else None
        gain = RELU_GAIN if isinstance(nxt, Activation) and nxt.kind == "relu" else 1.0
        if isinstance(spec, Activation):
            layers.append(ActivationLayer(spec.kind))
            continue
        if isinstance(spec, Dense):
            W = rng.normal(0.0, gain / math.sqrt(dim), (spec.out_dim, dim))
            b = np.zeros(spec.out_dim) if spec.bias else None
            layer = DenseLayer(W, b)
        elif isinstance(spec, LowRank):
            if spec.rank > min(dim, spec.out_dim):
                raise DimensionMismatch(f"rank {spec.rank} exceeds min({dim}, {spec.out_dim})")
            s = (gain * gain / (dim * spec.rank)) ** 0.25
            G = rng.normal(0.0, s, (spec.out_dim, spec.rank))
            H = rng.normal(0.0, s, (dim, spec.rank))
            b = np.zeros(spec.out_dim) if spec.bias else None
            layer = LowRankLayer(G, H, b)
        elif isinstance(spec, Circulant):
            if spec.n != dim:
                raise DimensionMismatch(f"Circulant n={spec.n} but input dimension is {dim}")
            v = rng.normal(0.0, gain / math.sqrt(dim), dim)
            e1 = np.zeros(dim)
            e1[0] = 1.0
            R = RectangularTransform(dim, dim, [ToeplitzLikeTransform(v[:, None], e1[:, None])])
            b = np.zeros(dim) if spec.bias else None
            layer = StructuredLayer(R, b, learn_h=False)
        elif isinstance(spec, ToeplitzLike):
            if spec.n != dim:
                raise DimensionMismatch(f"ToeplitzLike n={spec.n} but input dimension is {dim}")
            _check_rect(spec.m, spec.n)
            R = RectangularTransform.random(spec.m, spec.n, spec.r, rng, gain)
            b = np.zeros(spec.m) if spec.bias else None
            layer = StructuredLayer(R, b)
        else:
            raise TypeError(f"unknown layer spec {spec!r}")
        layers.append(layer)
        dim = layer.out_dim
    net = Network(input_dim, specs, layers, dim)
    if zero:
        for i, name, value in net.parameters():
            net.layers[i].set_param(name, np.zeros_like(value))
    return net


def softmax(logits):
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def forward(net, X):
    """Class probabilities, one column per example."""
    return softmax(net.logits(X))


def _check_labels(net, labels, b):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise DimensionMismatch(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= net.class_count):
        raise ValueError(f"labels must lie in [0, {net.class_count})")
    return labels


def loss_and_gradients(net, X, labels):
    """Mean cross-entropy over the batch and per-layer gradient dicts."""
    logits = net.logits(X)
    b = logits.shape[1]
    labels = _check_labels(net, labels, b)
    z = logits - logits.max(axis=0, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=0))
    cols = np.arange(b)
    loss = float(np.mean(logsum - z[labels, cols]))
    d = np.exp(z - logsum)
    d[labels, cols] -= 1.0
    d /= b
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        d, grads[i] = net.layers[i].backward(d, need_input_grad=i > 0)
    return loss, grads


def loss(net, X, labels):
    logits = net.logits(X)
    labels = _check_labels(net, labels, logits.shape[1])
    z = logits - logits.max(axis=0, keepdims=True)
    return float(np.mean(np.log(np.exp(z).sum(axis=0)) - z[labels, np.arange(labels.size)]))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    global_learning_rate: float = 0.002
    structured_learning_rate: float = 0.0005
    decay_factor: float = 0.1
    decay_interval: Optional[int] = None  # steps; None means one epoch
    batch_size: int = 50
    max_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.global_learning_rate <= 0 or self.structured_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.decay_interval is not None and self.decay_interval < 1:
            raise ValueError("decay_interval must be positive")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be positive and max_steps non-negative")

    def to_dict(self):
        return dataclasses.asdict(self)


def learning_rate(config, structured, step_index, decay_interval=None):
    base = config.structured_learning_rate if structured else config.global_learning_rate
    interval = decay_interval or config.decay_interval
    if interval is None:
        raise ValueError("decay_interval is unresolved")
    return base * config.decay_factor ** (step_index // interval)


def sgd_step(net, grads, config, step_index, decay_interval=None):
    """Plain SGD; structured layers use the structured rate except for their bias."""
    for layer, g in zip(net.layers, grads):
        if not g:
            continue
        for name, grad in g.items():
            structured = layer.structured and name != "b"
            layer.update(name, learning_rate(config, structured, step_index, decay_interval) * grad)
    net.invalidate()
    return net


def evaluate(net, ds, batch_size=1000):
    """Fraction of examples whose argmax class (lowest index on ties) is wrong."""
    wrong = 0
    for start in range(0, len(ds), batch_size):
        logits = net.logits(ds.inputs[:, start : start + batch_size])
        wrong += int(np.count_nonzero(np.argmax(logits, axis=0) != ds.labels[start : start + batch_size]))
    return wrong / len(ds)


@dataclass
class HistoryRow:
    step: int
    epoch: int
    train_loss: float
    eval_error: float


def train(net, dataset, config, eval_set=None, log=None):
    """Minibatch SGD for ``config.max_steps`` steps.

    One history row is recorded at the end of each epoch (and after a final
    partial epoch): the mean training loss over that epoch's batches and the
    error on ``eval_set`` (the training set when omitted).
    """
    eval_set = eval_set if eval_set is not None else dataset
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    interval = config.decay_interval or steps_per_epoch
    history = []
    step = 0
    epoch = 0
    while step < config.max_steps:
        total = 0.0
        batches = 0
        for X, y in minibatches(dataset, config.batch_size, config.seed, epoch):
            loss_value, grads = loss_and_gradients(net, X, y)
            if not math.isfinite(loss_value):
                raise FloatingPointError(f"training diverged at step {step} (loss {loss_value})")
            sgd_step(net, grads, config, step, interval)
            total += loss_value
            batches += 1
            step += 1
            if step >= config.max_steps:
                break
        row = HistoryRow(step, epoch, total / batches, evaluate(net, eval_set))
        history.append(row)
        if log is not None:
            log(row)
        epoch += 1
    return net, history


def write_history_csv(path, history):
    with open(path, "w") as fh:
        fh.write("step,train_loss,eval_error\n")
        for row in history:
            fh.write(f"{row.step},{row.train_loss!r},{row.eval_error!r}\n")


def parameter_count(net):
    return sum(layer.parameter_count for layer in net.layers)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"LDRCKPT1"


def save_checkpoint(path, net, config=None, step=0):
    """JSON header (layer specs, config, step, parameter manifest) + float64 LE blob."""
    params = net.parameters()
    header = {
        "input_dim": net.input_dim,
        "class_count": net.class_count,
        "layers": [spec_to_dict(s) for s in net.specs],
        "config": None if config is None else config.to_dict(),
        "step": int(step),
        "params": [{"layer": i, "name": name, "shape": list(a.shape)} for i, name, a in params],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)
    for _, _, a in params:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Return ``(network, header)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen])
    specs = [spec_from_dict(d) for d in header["layers"]]
    net = build_network(header["input_dim"], specs, zero=True)
    offset = 16 + hlen
    for entry in header["params"]:
        count = int(np.prod(entry["shape"]))
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        net.layers[entry["layer"]].set_param(entry["name"], values.reshape(entry["shape"]))
        offset += 8 * count
    return net, header
