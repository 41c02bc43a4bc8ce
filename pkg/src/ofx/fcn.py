"""Low-complexity fully convolutional segmentation network.

Ten 3x3 same-padded convolutions, 32 hidden channels, ReLU everywhere except
a sigmoid on the single-channel output. Forward, backward, MSE loss, Adam and
the training loop are implemented directly on numpy arrays in NCHW layout.
"""

import hashlib
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

RELU = "relu"
SIGMOID = "sigmoid"
_ACT_CODES = {RELU: 0, SIGMOID: 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

CHECKPOINT_MAGIC = b"OFXFCN1"
BYTES_PER_PARAMETER = 4

TRAIN_LR = 1e-4
FINETUNE_LR = 5e-5


@dataclass(frozen=True)
class LayerSpec:
    in_channels: int
    out_channels: int
    activation: str = RELU
    kernel: tuple = (3, 3)

    def __post_init__(self):
        if tuple(self.kernel) != (3, 3):
            raise ValueError("only 3x3 kernels are supported")
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")


def canonical_network(depth=10, width=32):
    specs = [LayerSpec(1, width, RELU)]
    specs += [LayerSpec(width, width, RELU) for _ in range(depth - 2)]
    specs.append(LayerSpec(width, 1, SIGMOID))
    return specs


def count_parameters(specs):
    return sum(9 * s.in_channels * s.out_channels + s.out_channels for s in specs)


def count_macs(specs, h, w):
    """Multiply-accumulates of the convolutions at input ``h`` x ``w`` (biases excluded)."""
    if h < 1 or w < 1:
        raise ValueError(f"input size must be positive, got {h}x{w}")
    return sum(9 * s.in_channels * s.out_channels * h * w for s in specs)


@dataclass(frozen=True)
class ComplexityReport:
    total_parameters: int
    parameter_bytes: int
    total_macs: int
    input_shape: tuple

    @property
    def parameter_megabytes(self):
        return self.parameter_bytes / 2**20

    def render(self):
        h, w = self.input_shape
        return "\n".join([
            f"total parameters  : {self.total_parameters:,}",
            f"parameter size    : {self.parameter_megabytes:.2f} MB ({self.parameter_bytes:,} bytes, float32)",
            f"input size (h x w): {h} x {w} x 1",
            f"total MAC         : {self.total_macs:,} ({self.total_macs / 1e6:.2f}M)",
        ])


def complexity(specs=None, h=120, w=160):
    specs = specs or canonical_network()
    n = count_parameters(specs)
    return ComplexityReport(n, n * BYTES_PER_PARAMETER, count_macs(specs, h, w), (h, w))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Network:
    """Sequential stack of 3x3 convolutions with per-layer activation."""

    def __init__(self, specs, weights, biases):
        self.specs = list(specs)
        self.weights = list(weights)
        self.biases = list(biases)
        for s, W, b in zip(self.specs, self.weights, self.biases):
            if W.shape != (s.out_channels, s.in_channels, 3, 3) or b.shape != (s.out_channels,):
                raise ValueError(f"parameter shapes {W.shape}/{b.shape} do not match {s}")

    @classmethod
    def initialize(cls, specs=None, seed=0, dtype=np.float32):
        """Glorot-uniform weights, zero biases."""
        specs = specs or canonical_network()
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for s in specs:
            fan_in, fan_out = 9 * s.in_channels, 9 * s.out_channels
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(s.out_channels, s.in_channels, 3, 3))
            weights.append(W.astype(dtype))
            biases.append(np.zeros(s.out_channels, dtype=dtype))
        return cls(specs, weights, biases)

    @classmethod
    def zeros(cls, specs=None, dtype=np.float32):
        specs = specs or canonical_network()
        return cls(specs,
                   [np.zeros((s.out_channels, s.in_channels, 3, 3), dtype=dtype) for s in specs],
                   [np.zeros(s.out_channels, dtype=dtype) for s in specs])

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self):
        """Flat parameter list: W1, b1, W2, b2, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return Network(self.specs, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype):
        return Network(self.specs, [W.astype(dtype) for W in self.weights],
                       [b.astype(dtype) for b in self.biases])

    def digest(self):
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def forward(self, x):
        """Run the network on ``x`` of shape (H, W), (N, H, W) or (N, 1, H, W)
        with intensities already scaled to [0, 1].

        Returns ``(output, cache)``; ``output`` has shape (N, H, W).
        """
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None, None]
        elif x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1] != self.specs[0].in_channels:
            raise ValueError(f"input shape {x.shape} does not fit the first layer")
        if not np.all(np.isfinite(x)):
            raise ValueError("network input contains non-finite values")
        a = np.ascontiguousarray(x, dtype=self.dtype)
        n, _, h, w = a.shape
        inputs, outputs = [], []
        for spec, W, b in zip(self.specs, self.weights, self.biases):
            inputs.append(a)
            cols = kernels.im2col3x3(a)
            z = np.matmul(W.reshape(spec.out_channels, -1), cols)
            z += b[None, :, None]
            if spec.activation == RELU:
                a = np.maximum(z, 0)
            else:
                a = _sigmoid(z)
            a = a.reshape(n, spec.out_channels, h, w)
            outputs.append(a)
        cache = {"inputs": inputs, "outputs": outputs, "digest": self.digest(), "shape": (n, h, w)}
        return a[:, 0], cache

    def backward(self, cache, dout):
        """Gradients of the loss w.r.t. every parameter, in :meth:`params` order.

        ``dout`` is dL/d(output) with the output's (N, H, W) shape.
        """
        if len(cache["inputs"]) != len(self.specs) or cache.get("digest") != self.digest():
            raise RuntimeError("stale cache: parameters changed since the forward pass")
        n, h, w = cache["shape"]
        grad = np.asarray(dout, dtype=self.dtype).reshape(n, 1, h * w)
        grads = [None] * (2 * len(self.specs))
        for i in range(len(self.specs) - 1, -1, -1):
            spec, W = self.specs[i], self.weights[i]
            a_out = cache["outputs"][i].reshape(n, spec.out_channels, h * w)
            if spec.activation == RELU:
                dz = grad * (a_out > 0)
            else:
                dz = grad * a_out * (1 - a_out)
            cols = kernels.im2col3x3(cache["inputs"][i])
            dW = np.matmul(dz, cols.transpose(0, 2, 1)).sum(axis=0)
            grads[2 * i] = dW.reshape(W.shape).astype(self.dtype, copy=False)
            grads[2 * i + 1] = dz.sum(axis=(0, 2)).astype(self.dtype, copy=False)
            if i > 0:
                dcols = np.matmul(W.reshape(spec.out_channels, -1).T, dz)
                grad = kernels.col2im3x3(dcols, h, w).reshape(n, spec.in_channels, h * w)
        return grads

    def predict(self, x, batch_size=16):
        x = np.asarray(x)
        if x.ndim == 2:
            return self.forward(x)[0][0]
        return np.concatenate([self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)])


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    diff = pred - target.astype(pred.dtype)
    return float(np.mean(diff.astype(np.float64) ** 2)), (2.0 / diff.size) * diff


# --- optimiser ------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = TRAIN_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw):
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(state, params, grads):
    """Bias-corrected Adam update applied to ``params`` in place."""
    if len(params) != len(grads) or len(state.m) != len(params):
        raise ValueError("parameters, gradients and moments are not congruent")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {params[i].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise FloatingPointError(
                f"non-finite gradient in parameter {i} (layer {i // 2 + 1}, "
                f"{'weights' if i % 2 == 0 else 'bias'}): {bad} bad entries at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
    return params, state


# --- checkpoints ----------------------------------------------------------

def save_checkpoint(path, net, adam=None):
    """Little-endian binary: magic, layer count, per-layer headers, then
    per-layer float32 weights (row-major) and biases, then optional Adam state."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(net.specs)))
    for s in net.specs:
        buf.write(struct.pack("<IIIIB", s.in_channels, s.out_channels, 3, 3, _ACT_CODES[s.activation]))
    for W, b in zip(net.weights, net.biases):
        buf.write(np.ascontiguousarray(W, dtype="<f4").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
    if adam is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<BQdddd", 1, adam.step, adam.lr, adam.beta1, adam.beta2, adam.eps))
        for arr in list(adam.m) + list(adam.v):
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path):
    """Returns ``(network, adam_state_or_None)``; parameters come back as float32."""
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not an OFXFCN1 checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    specs = []
    for _ in range(count):
        cin, cout, kh, kw, act = struct.unpack_from("<IIIIB", data, off)
        off += struct.calcsize("<IIIIB")
        if (kh, kw) != (3, 3):
            raise ValueError(f"{path}: unsupported kernel {kh}x{kw}")
        specs.append(LayerSpec(cin, cout, _ACT_NAMES[act]))

    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        return arr.astype(np.float32)

    weights, biases = [], []
    for s in specs:
        weights.append(take((s.out_channels, s.in_channels, 3, 3)))
        biases.append(take((s.out_channels,)))
    net = Network(specs, weights, biases)
    (has_adam,) = struct.unpack_from("<B", data, off)
    off += 1
    adam = None
    if has_adam:
        step, lr, b1, b2, eps = struct.unpack_from("<Qdddd", data, off)
        off += struct.calcsize("<Qdddd")
        shapes = [p.shape for p in net.params()]
        m = [take(sh) for sh in shapes]
        v = [take(sh) for sh in shapes]
        adam = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=step, m=m, v=v)
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return net, adam


# --- training -------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = TRAIN_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    max_steps: Optional[int] = None


@dataclass
class TrainResult:
    network: Network
    adam: AdamState
    history: list
    best_epoch: int
    best_loss: float


def evaluate_loss(net, x, y, batch_size=16):
    total, count = 0.0, 0
    for i in range(0, len(x), batch_size):
        pred, _ = net.forward(x[i:i + batch_size])
        diff = pred.astype(np.float64) - y[i:i + batch_size]
        total += float(np.sum(diff * diff))
        count += diff.size
    return total / count


def train(net, train_x, train_y, val_x=None, val_y=None, config=None, checkpoint_path=None, adam=None):
    """Mini-batch Adam on MSE with early stopping.

    ``train_x`` holds inputs scaled to [0, 1] with shape (N, H, W); ``train_y``
    the binary targets. The network is updated in place; the returned result
    carries a copy of the best parameters (by validation loss when validation
    data is given, otherwise by mean training loss per epoch). History rows are
    ``{"step", "train_mse", "val_mse"}`` with ``val_mse`` set on epoch ends.
    """
    config = config or TrainConfig()
    train_x = np.asarray(train_x)
    train_y = np.asarray(train_y)
    if len(train_x) == 0:
        raise ValueError("training split is empty")
    if adam is None:
        adam = AdamState.for_params(net.params(), lr=config.lr, beta1=config.beta1,
                                    beta2=config.beta2, eps=config.eps)
    else:
        adam.lr = config.lr
    rng = np.random.default_rng(config.seed)
    history = []
    best = (math.inf, -1, net.copy())
    stale = 0
    step = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_x))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            pred, cache = net.forward(train_x[idx])
            loss, dpred = mse_loss(pred, train_y[idx])
            grads = net.backward(cache, dpred)
            adam_step(adam, net.params(), grads)
            step += 1
            epoch_losses.append(loss)
            history.append({"step": step, "train_mse": loss, "val_mse": None})
            if config.max_steps is not None and step >= config.max_steps:
                break
        if val_x is not None and len(val_x):
            monitor = evaluate_loss(net, np.asarray(val_x), np.asarray(val_y), config.batch_size)
            history[-1]["val_mse"] = monitor
        else:
            monitor = float(np.mean(epoch_losses))
        log.info("epoch %d step %d train %.6f monitor %.6f", epoch + 1, step, epoch_losses[-1], monitor)
        if monitor < best[0]:
            best = (monitor, epoch, net.copy())
            stale = 0
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, net, adam)
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop after %d epochs without improvement", stale)
                break
        if config.max_steps is not None and step >= config.max_steps:
            break
    return TrainResult(best[2], adam, history, best[1], best[0])


def write_loss_csv(path, history):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("step,train_mse,val_mse\n")
        for row in history:
            val = "" if row["val_mse"] is None else repr(float(row["val_mse"]))
            fh.write(f"{row['step']},{float(row['train_mse'])!r},{val}\n")
