"""Dense tensor layers for the two-stage convolutional classifier.

Tensors are plain ``float64`` numpy arrays in NCHW order. Every layer keeps
the activations it needs for the backward pass on the layer object itself,
so a forward call must precede the matching backward call.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, StateError

KERNEL_SIZE = 5
POOL_SIZE = 2
IMAGE_SIZE = 28
N_CLASSES = 10

# conv1 -> 8 maps, conv2 -> 16 maps; 28 -> 24 -> 12 -> 8 -> 4
DEFAULT_CHANNELS = (8, 16)


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _as_batch(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"{name}: expected (batch, channels, height, width), got shape {x.shape}",
                             axis="rank")
    return x


@dataclass
class ConvLayer:
    """Valid 5x5 convolution, stride 1; ``forward`` applies a sigmoid on top."""

    kernels: np.ndarray
    biases: np.ndarray
    stride: int = 1
    _cache: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.kernels.ndim != 4 or self.kernels.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
            raise DimensionError(f"kernels must be (out, in, 5, 5), got {self.kernels.shape}",
                                 axis="kernel")
        if self.biases.shape != (self.kernels.shape[0],):
            raise DimensionError(f"biases must have shape ({self.kernels.shape[0]},), "
                                 f"got {self.biases.shape}", axis="out_channels")
        if self.stride != 1:
            raise DimensionError("only stride 1 is supported", axis="stride")

    @classmethod
    def init(cls, rng, in_channels, out_channels):
        fan_in = in_channels * KERNEL_SIZE ** 2
        fan_out = out_channels * KERNEL_SIZE ** 2
        shape = (out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE)
        return cls(glorot_uniform(rng, shape, fan_in, fan_out), np.zeros(out_channels))

    @property
    def in_channels(self):
        return self.kernels.shape[1]

    @property
    def out_channels(self):
        return self.kernels.shape[0]

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (self.out_channels, h - KERNEL_SIZE + 1, w - KERNEL_SIZE + 1)

    def forward(self, x):
        z, windows = conv2d_forward(x, self, keep_windows=True)
        out = sigmoid(z)
        self._cache = (windows, out)
        return out

    def backward(self, grad_out, need_input_grad=True):
        if self._cache is None:
            raise StateError("ConvLayer.backward called before forward")
        windows, out = self._cache
        # through the sigmoid
        dz = grad_out * out * (1.0 - out)
        # (B, C, Ho, Wo, k, k) x (B, O, Ho, Wo) -> (C, k, k, O)
        dk = np.tensordot(windows, dz, axes=([0, 2, 3], [0, 2, 3]))
        dk = dk.transpose(3, 0, 1, 2)
        db = dz.sum(axis=(0, 2, 3))
        dx = None
        if need_input_grad:
            p = KERNEL_SIZE - 1
            padded = np.pad(dz, ((0, 0), (0, 0), (p, p), (p, p)))
            win = sliding_window_view(padded, (KERNEL_SIZE, KERNEL_SIZE), axis=(2, 3))
            flipped = self.kernels[:, :, ::-1, ::-1]
            # (B, O, H, W, k, k) x (O, C, k, k) -> (B, H, W, C)
            dx = np.tensordot(win, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
        return dx, {"kernels": dk, "biases": db}

    def params(self):
        return {"kernels": self.kernels, "biases": self.biases}


@dataclass
class PoolLayer:
    """2x2 max pooling with the argmax of each window cached for backward."""

    window: int = POOL_SIZE
    mode: str = "max"
    _argmax: np.ndarray | None = field(default=None, repr=False)
    _in_shape: tuple | None = field(default=None, repr=False)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // self.window, w // self.window)

    def forward(self, x):
        out, argmax = maxpool2d_forward(x, self, return_argmax=True)
        self._argmax = argmax
        self._in_shape = np.shape(x) if np.ndim(x) == 4 else (1,) + np.shape(x)
        return out

    def backward(self, grad_out):
        if self._argmax is None:
            raise StateError("PoolLayer.backward called before forward")
        b, c, h, w = self._in_shape
        k = self.window
        ho, wo = h // k, w // k
        grad_out = np.asarray(grad_out, dtype=np.float64).reshape(b, c, ho, wo)
        flat = np.zeros((b, c, ho, wo, k * k))
        np.put_along_axis(flat, self._argmax[..., None], grad_out[..., None], axis=-1)
        dx = flat.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return dx, {}

    def params(self):
        return {}


@dataclass
class DenseLayer:
    """Fully connected layer with sigmoid outputs."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str = "sigmoid"
    _cache: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise DimensionError(f"weights must be (out, in), got {self.weights.shape}", axis="rank")
        if self.biases.shape != (self.weights.shape[0],):
            raise DimensionError(f"biases must have shape ({self.weights.shape[0]},), "
                                 f"got {self.biases.shape}", axis="out")

    @classmethod
    def init(cls, rng, n_in, n_out):
        return cls(glorot_uniform(rng, (n_out, n_in), n_in, n_out), np.zeros(n_out))

    def forward(self, x):
        x2 = np.asarray(x, dtype=np.float64).reshape(np.shape(x)[0], -1)
        out = dense_forward(x2, self)
        self._cache = (x2, out, np.shape(x))
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("DenseLayer.backward called before forward")
        x2, out, in_shape = self._cache
        dz = grad_out * out * (1.0 - out)
        dw = dz.T @ x2
        db = dz.sum(axis=0)
        dx = (dz @ self.weights).reshape(in_shape)
        return dx, {"weights": dw, "biases": db}

    def params(self):
        return {"weights": self.weights, "biases": self.biases}


def conv2d_forward(x, layer, keep_windows=False):
    """Valid convolution (cross-correlation) of a batch with ``layer``'s kernels.

    Accepts ``(C, H, W)`` or ``(B, C, H, W)`` input and always returns the
    4-D ``(B, out_channels, H - 4, W - 4)`` pre-activation.
    """
    x = _as_batch(x, "conv2d_forward")
    _, c, h, w = x.shape
    if c != layer.in_channels:
        raise DimensionError(f"conv2d_forward: input has {c} channels, layer expects "
                             f"{layer.in_channels}", axis="channels")
    for axis, size in (("height", h), ("width", w)):
        if size < KERNEL_SIZE:
            raise DimensionError(f"conv2d_forward: input {axis} {size} is smaller than the "
                                 f"{KERNEL_SIZE}x{KERNEL_SIZE} kernel", axis=axis)
    windows = sliding_window_view(x, (KERNEL_SIZE, KERNEL_SIZE), axis=(2, 3))
    z = np.tensordot(windows, layer.kernels, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    z = z + layer.biases[None, :, None, None]
    if keep_windows:
        return z, windows
    return z


def maxpool2d_forward(x, layer=None, return_argmax=False):
    """2x2 max pooling. Odd spatial sizes are rejected rather than cropped."""
    k = POOL_SIZE if layer is None else layer.window
    x = _as_batch(x, "maxpool2d_forward")
    b, c, h, w = x.shape
    for axis, size in (("height", h), ("width", w)):
        if size % k:
            raise DimensionError(f"maxpool2d_forward: {axis} {size} is not divisible by {k}",
                                 axis=axis)
    ho, wo = h // k, w // k
    blocks = x.reshape(b, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, k * k)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    if return_argmax:
        return out, argmax
    return out


def dense_forward(x, layer):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    x = x.reshape(x.shape[0], -1)
    if x.shape[1] != layer.weights.shape[1]:
        raise DimensionError(f"dense_forward: input length {x.shape[1]} does not match "
                             f"weight columns {layer.weights.shape[1]}", axis="features")
    return sigmoid(x @ layer.weights.T + layer.biases)


class Network:
    """conv -> pool -> conv -> pool -> dense, all sigmoid activations."""

    def __init__(self, layers, rng_seed=None):
        self.layers = list(layers)
        self.rng_seed = rng_seed
        self._check_chain()

    @classmethod
    def create(cls, seed=0, channels=DEFAULT_CHANNELS, image_size=IMAGE_SIZE, zero=False):
        rng = np.random.default_rng(seed)
        c1, c2 = channels
        side = ((image_size - KERNEL_SIZE + 1) // 2 - KERNEL_SIZE + 1) // 2
        layers = [
            ConvLayer.init(rng, 1, c1),
            PoolLayer(),
            ConvLayer.init(rng, c1, c2),
            PoolLayer(),
            DenseLayer.init(rng, c2 * side * side, N_CLASSES),
        ]
        net = cls(layers, rng_seed=seed)
        if zero:
            for _, p in net.named_params():
                p[...] = 0.0
        return net

    def _check_chain(self):
        shape = (1, IMAGE_SIZE, IMAGE_SIZE)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvLayer):
                if shape[0] != layer.in_channels:
                    raise DimensionError(f"layer {i}: expects {layer.in_channels} channels, "
                                         f"previous layer yields {shape[0]}", axis="channels")
                shape = layer.output_shape(shape)
            elif isinstance(layer, PoolLayer):
                shape = layer.output_shape(shape)
            elif isinstance(layer, DenseLayer):
                n = int(np.prod(shape))
                if layer.weights.shape[1] != n:
                    raise DimensionError(f"layer {i}: dense expects {layer.weights.shape[1]} "
                                         f"inputs, previous layer yields {n}", axis="features")
                shape = (layer.weights.shape[0],)
        self.output_size = shape[0]

    def named_params(self):
        counts = {}
        for layer in self.layers:
            kind = {ConvLayer: "conv", PoolLayer: "pool", DenseLayer: "dense"}[type(layer)]
            counts[kind] = counts.get(kind, 0) + 1
            prefix = kind if kind == "dense" else f"{kind}{counts[kind]}"
            for pname, p in layer.params().items():
                yield f"{prefix}.{pname}", p

    def param_dict(self):
        return OrderedDict(self.named_params())

    @property
    def dense(self):
        return self.layers[-1]

    def copy(self):
        layers = []
        for layer in self.layers:
            if isinstance(layer, ConvLayer):
                layers.append(ConvLayer(layer.kernels.copy(), layer.biases.copy()))
            elif isinstance(layer, PoolLayer):
                layers.append(PoolLayer(layer.window, layer.mode))
            else:
                layers.append(DenseLayer(layer.weights.copy(), layer.biases.copy()))
        return Network(layers, rng_seed=self.rng_seed)

    def features(self, batch):
        """Activations entering the dense layer; caches every earlier layer."""
        x = _as_batch(batch, "network_forward")
        if x.shape[1:] != (1, IMAGE_SIZE, IMAGE_SIZE):
            raise DimensionError(f"network_forward: expected images of shape (1, 28, 28), "
                                 f"got {x.shape[1:]}", axis="image")
        for layer in self.layers[:-1]:
            x = layer.forward(x)
        return x

    def forward(self, batch):
        return self.dense.forward(self.features(batch))

    def backward(self, loss_grad):
        if any(getattr(layer, "_cache", True) is None or getattr(layer, "_argmax", True) is None
               for layer in self.layers):
            raise StateError("network_backward called before network_forward")
        grads = OrderedDict()
        g = np.asarray(loss_grad, dtype=np.float64)
        names = [n for n, _ in self.named_params()]
        per_layer = []
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if isinstance(layer, ConvLayer):
                g, lg = layer.backward(g, need_input_grad=i > 0)
            else:
                g, lg = layer.backward(g)
            per_layer.append(lg)
        flat = [arr for lg in reversed(per_layer) for arr in lg.values()]
        for name, arr in zip(names, flat):
            grads[name] = arr
        return grads


def network_forward(net, batch):
    return net.forward(batch)


def network_backward(net, loss_grad):
    return net.backward(loss_grad)


def sgd_step(net, grads, lr):
    """In-place ``theta <- theta - lr * grad`` for every parameter; returns ``net``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    params = net.param_dict()
    for name, g in grads.items():
        if name not in params:
            raise DimensionError(f"no parameter named {name!r}", axis=name)
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter has "
                                 f"{p.shape}", axis=name)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}", name=name)
    for name, g in grads.items():
        params[name] -= lr * g
    return net
