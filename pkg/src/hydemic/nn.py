"""Numpy building blocks for a sequential 1D CNN.

Every kernel is a pair of pure functions: ``*_forward`` returns the output
together with a cache, and ``*_backward`` consumes the upstream gradient and
that cache.  Arrays follow the ``(batch, channels, length)`` layout for
feature maps and ``(batch, features)`` for flat vectors.  The layer classes
at the bottom wrap the kernels with their parameters so a network can be
expressed as a plain list of layers.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateStatisticsError, DimensionError

TRAIN = "train"
INFER = "infer"
_MODES = (TRAIN, INFER)


def _check_mode(mode):
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv1d_forward(x, weight, bias, stride=1):
    """Valid cross-correlation of ``x`` (N, C_in, L) with ``weight`` (C_out, C_in, K)."""
    if x.ndim != 3 or weight.ndim != 3:
        raise DimensionError("conv1d expects x of shape (N, C, L) and weight of shape (O, C, K)")
    n, c_in, length = x.shape
    c_out, w_in, k = weight.shape
    if c_in != w_in:
        raise DimensionError(f"conv1d channel mismatch: input has {c_in}, weight expects {w_in}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv1d bias shape {bias.shape} != ({c_out},)")
    if length < k:
        raise DimensionError(f"conv1d input length {length} shorter than kernel {k}")
    if stride < 1:
        raise ValueError("stride must be >= 1")

    windows = sliding_window_view(x, k, axis=2)[:, :, ::stride, :]  # (N, C, Lout, K)
    l_out = windows.shape[2]
    cols = windows.transpose(0, 2, 1, 3).reshape(n * l_out, c_in * k)
    out = cols @ weight.reshape(c_out, -1).T + bias
    out = np.ascontiguousarray(out.reshape(n, l_out, c_out).transpose(0, 2, 1))
    return out, (cols, x.shape, weight, stride)


def conv1d_backward(grad_out, cache):
    cols, x_shape, weight, stride = cache
    n, c_out, l_out = grad_out.shape
    c_in, k = weight.shape[1], weight.shape[2]

    g = grad_out.transpose(0, 2, 1).reshape(n * l_out, c_out)
    grad_w = (g.T @ cols).reshape(weight.shape)
    grad_b = g.sum(axis=0)

    dcols = (g @ weight.reshape(c_out, -1)).reshape(n, l_out, c_in, k)
    grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
    span = stride * (l_out - 1) + 1
    for j in range(k):
        grad_x[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
    return grad_x, grad_w, grad_b


def conv1d_output_length(length, kernel, stride=1):
    return (length - kernel) // stride + 1


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def _bn_axes(x):
    if x.ndim == 3:
        return (0, 2), (1, -1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise DimensionError("batchnorm expects (N, C) or (N, C, L) input")


def batchnorm1d_forward(x, gamma, beta, running_mean, running_var, mode=TRAIN,
                        eps=1e-5, momentum=0.9):
    """Per-channel batch normalization.

    Returns ``(y, cache, (new_running_mean, new_running_var))``.  In infer mode
    the running statistics are returned unchanged.  Running variance is
    tracked with the unbiased estimator; normalization itself uses the biased
    batch variance.
    """
    _check_mode(mode)
    axes, shape = _bn_axes(x)
    if gamma.shape[0] != x.shape[1]:
        raise DimensionError(f"batchnorm has {gamma.shape[0]} channels, input has {x.shape[1]}")
    g = gamma.reshape(shape)
    b = beta.reshape(shape)

    if mode == INFER:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean.reshape(shape)) * inv_std.reshape(shape)
        return g * xhat + b, (INFER, xhat, inv_std, g, axes), (running_mean, running_var)

    m = x.size // x.shape[1]
    if m <= 1:
        raise DegenerateStatisticsError("batchnorm in train mode needs more than one value per channel")
    mean = x.mean(axis=axes, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    y = g * xhat + b

    batch_mean = mean.reshape(-1)
    batch_var = var.reshape(-1) * (m / (m - 1))
    new_mean = momentum * running_mean + (1.0 - momentum) * batch_mean
    new_var = momentum * running_var + (1.0 - momentum) * batch_var
    return y, (TRAIN, xhat, inv_std, g, axes, m), (new_mean, new_var)


def batchnorm1d_backward(grad_out, cache):
    """Returns ``(grad_x, grad_gamma, grad_beta)``."""
    if cache[0] == INFER:
        _, xhat, inv_std, g, axes = cache
        grad_x = grad_out * g * inv_std.reshape(g.shape)
        return grad_x, (grad_out * xhat).sum(axis=axes), grad_out.sum(axis=axes)

    _, xhat, inv_std, g, axes, m = cache
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    dxhat = grad_out * g
    grad_x = (inv_std / m) * (
        m * dxhat
        - dxhat.sum(axis=axes, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
    )
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# pointwise / pooling / regularization
# ---------------------------------------------------------------------------

def leaky_relu_forward(x, alpha=0.01):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    slope = np.where(x >= 0, 1.0, alpha)
    return x * slope, slope


def leaky_relu_backward(grad_out, slope):
    return grad_out * slope


def maxpool1d_forward(x, pool=3):
    """Non-overlapping max pooling; the trailing remainder is dropped."""
    n, c, length = x.shape
    if length < pool:
        raise DimensionError(f"maxpool input length {length} shorter than pool {pool}")
    l_out = length // pool
    windows = x[:, :, :l_out * pool].reshape(n, c, l_out, pool)
    idx = windows.argmax(axis=-1)  # argmax returns the first maximum
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape, pool)


def maxpool1d_backward(grad_out, cache):
    idx, x_shape, pool = cache
    n, c, l_out = grad_out.shape
    dwin = np.zeros((n, c, l_out, pool), dtype=grad_out.dtype)
    np.put_along_axis(dwin, idx[..., None], grad_out[..., None], axis=-1)
    grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
    grad_x[:, :, :l_out * pool] = dwin.reshape(n, c, l_out * pool)
    return grad_x


def dropout_forward(x, rate, mode=TRAIN, rng=None):
    """Inverted dropout.  Infer mode and ``rate == 0`` return ``x`` itself."""
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if mode == INFER or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


def dense_forward(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"dense expects input width {weight.shape[1]}, got shape {x.shape}")
    return x @ weight.T + bias, (x, weight)


def dense_backward(grad_out, cache):
    x, weight = cache
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean categorical cross-entropy of integer ``targets`` under ``softmax(logits)``.

    Returns ``(loss, grad_logits)`` with ``grad_logits = (p - onehot) / batch``.
    """
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets)
    n, c = logits.shape
    if targets.shape != (n,):
        raise DimensionError("targets must have one entry per logit row")
    if np.any(targets < 0) or np.any(targets >= c):
        raise ValueError(f"targets must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    log_p = z - np.log(s)
    rows = np.arange(n)
    loss = -log_p[rows, targets].mean()
    grad = e / s
    grad[rows, targets] -= 1.0
    return float(loss), grad / n


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, mode, rng):
        raise NotImplementedError

    def backward(self, grad, cache):
        """Returns ``(grad_input, {param_name: grad})``."""
        raise NotImplementedError

    def hyper(self) -> dict:
        return {}


class Conv1D(Layer):
    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel, stride=1):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride = kernel, stride
        self.params["weight"] = np.zeros((out_channels, in_channels, kernel))
        self.params["bias"] = np.zeros(out_channels)

    def init(self, rng):
        fan_in = self.in_channels * self.kernel
        self.params["weight"][...] = he_uniform(rng, self.params["weight"].shape, fan_in)
        self.params["bias"][...] = 0.0

    def forward(self, x, mode, rng):
        return conv1d_forward(x, self.params["weight"], self.params["bias"], self.stride)

    def backward(self, grad, cache):
        gx, gw, gb = conv1d_backward(grad, cache)
        return gx, {"weight": gw, "bias": gb}

    def hyper(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel, "stride": self.stride}


class BatchNorm1D(Layer):
    kind = "batchnorm"

    def __init__(self, channels, eps=1e-5, momentum=0.9):
        super().__init__()
        if eps <= 0:
            raise ValueError("batchnorm epsilon must be positive")
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def forward(self, x, mode, rng):
        y, cache, (rm, rv) = batchnorm1d_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            mode, self.eps, self.momentum)
        if mode == TRAIN:
            self.buffers["running_mean"] = rm
            self.buffers["running_var"] = rv
        return y, cache

    def backward(self, grad, cache):
        gx, gg, gb = batchnorm1d_backward(grad, cache)
        return gx, {"gamma": gg, "beta": gb}

    def hyper(self):
        return {"channels": self.channels, "eps": self.eps, "momentum": self.momentum}


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, alpha=0.01):
        super().__init__()
        self.alpha = alpha

    def forward(self, x, mode, rng):
        return leaky_relu_forward(x, self.alpha)

    def backward(self, grad, cache):
        return leaky_relu_backward(grad, cache), {}

    def hyper(self):
        return {"alpha": self.alpha}


class MaxPool1D(Layer):
    kind = "maxpool"

    def __init__(self, pool=3):
        super().__init__()
        self.pool = pool

    def forward(self, x, mode, rng):
        return maxpool1d_forward(x, self.pool)

    def backward(self, grad, cache):
        return maxpool1d_backward(grad, cache), {}

    def hyper(self):
        return {"pool": self.pool}


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def forward(self, x, mode, rng):
        return dropout_forward(x, self.rate, mode, rng)

    def backward(self, grad, cache):
        return dropout_backward(grad, cache), {}

    def hyper(self):
        return {"rate": self.rate}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, mode, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache), {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = np.zeros((out_features, in_features))
        self.params["bias"] = np.zeros(out_features)

    def init(self, rng):
        self.params["weight"][...] = he_uniform(rng, self.params["weight"].shape, self.in_features)
        self.params["bias"][...] = 0.0

    def forward(self, x, mode, rng):
        return dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad, cache):
        gx, gw, gb = dense_backward(grad, cache)
        return gx, {"weight": gw, "bias": gb}

    def hyper(self):
        return {"in_features": self.in_features, "out_features": self.out_features}


@dataclass
class GradientTape:
    """Per-layer forward caches recorded by :meth:`Sequential.forward`."""

    mode: str
    caches: list = field(default_factory=list)


class Sequential:
    """A fixed stack of layers evaluated front to back."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def forward(self, x, mode=INFER, rng=None):
        _check_mode(mode)
        tape = GradientTape(mode)
        for layer in self.layers:
            x, cache = layer.forward(x, mode, rng)
            tape.caches.append(cache)
        return x, tape

    def backward(self, grad, tape):
        """Backpropagate ``grad`` through the tape.

        Returns the input gradient and a list with one ``{name: grad}`` dict per layer.
        """
        grads: list[dict[str, np.ndarray]] = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            grad, grads[i] = self.layers[i].backward(grad, tape.caches[i])
        return grad, grads

    def parameters(self):
        """Ordered ``(layer_index, name, array)`` triples for every trainable array."""
        return [(i, name, arr) for i, layer in enumerate(self.layers)
                for name, arr in layer.params.items()]

    def n_parameters(self):
        return sum(arr.size for _, _, arr in self.parameters())


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def _loss_and_grads(net, x, targets):
    logits, tape = net.forward(x, TRAIN, None)
    loss, g = softmax_cross_entropy(logits, targets)
    _, grads = net.backward(g, tape)
    return loss, grads


def _loss_only(net, x, targets):
    logits, _ = net.forward(x, TRAIN, None)
    return softmax_cross_entropy(logits, targets)[0]


def near_nondifferentiable(network: Sequential, x, tol=1e-4) -> bool:
    """True when ``x`` puts any LeakyReLU input within ``tol`` of zero or any
    max-pool window has its two largest entries within ``tol`` of each other."""
    net = copy.deepcopy(network)
    for layer in net.layers:
        if isinstance(layer, Dropout):
            layer.rate = 0.0
    for layer in net.layers:
        if isinstance(layer, LeakyReLU) and np.any(np.abs(x) < tol):
            return True
        if isinstance(layer, MaxPool1D):
            n, c, length = x.shape
            l_out = length // layer.pool
            w = np.sort(x[:, :, :l_out * layer.pool].reshape(n, c, l_out, layer.pool), axis=-1)
            if np.any(w[..., -1] - w[..., -2] < tol):
                return True
        x, _ = layer.forward(x, TRAIN, None)
    return False


def gradient_check(network: Sequential, x, targets, epsilon=1e-5,
                   grad_hook: Callable[[list], Any] | None = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The check runs on a copy of ``network`` with every dropout rate forced to
    zero and batch normalization in train mode.  ``grad_hook`` may mutate the
    analytic gradient list in place before comparison (used to confirm the
    harness notices a corrupted gradient).

    A conv bias feeding straight into batch normalization has an exactly zero
    gradient (the batch mean cancels it), so its central difference is pure
    rounding noise.  Those entries pass when both values sit below the 1e-8
    floor and fall back to the relative formula otherwise.
    """
    net = copy.deepcopy(network)
    for layer in net.layers:
        if isinstance(layer, Dropout):
            layer.rate = 0.0
    x = np.asarray(x, dtype=float)

    _, grads = _loss_and_grads(net, x, targets)
    if grad_hook is not None:
        grad_hook(grads)

    gauge = {(i, "bias") for i, layer in enumerate(net.layers[:-1])
             if isinstance(layer, Conv1D) and isinstance(net.layers[i + 1], BatchNorm1D)}
    worst = 0.0
    for i, name, arr in net.parameters():
        analytic = grads[i][name]
        floor_only = (i, name) in gauge
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up = _loss_only(net, x, targets)
            flat[j] = orig - epsilon
            down = _loss_only(net, x, targets)
            flat[j] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = analytic.reshape(-1)[j]
            if floor_only and max(abs(a), abs(numeric)) <= 1e-8:
                continue
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
