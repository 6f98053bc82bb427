"""Small numpy network with hand-written reverse mode.

Layers are dense, conv2d (stride 1, valid padding), relu and flatten. Each
layer with a weight exposes a *weight view*: the dense matrix itself, or
the conv kernel flattened to ``out_ch x (in_ch * kh * kw)``. The view shares
memory with the parameter, so writing to it updates the layer.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

MAGIC = b"TAOTF1\n"


class Layer:
    kind = ""
    weight_name: Optional[str] = None

    def params(self) -> dict:
        return {}

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape


class Dense(Layer):
    kind = "dense"
    weight_name = "weight"

    def __init__(self, weight, bias):
        self.weight = np.ascontiguousarray(weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(bias, dtype=np.float64)
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("dense bias must have one entry per output")

    @classmethod
    def init(cls, n_in, n_out, rng):
        bound = 1.0 / np.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, (n_out, n_in)), rng.uniform(-bound, bound, n_out))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, in_shape):
        if in_shape != (self.weight.shape[1],):
            raise ValueError(f"dense layer expects ({self.weight.shape[1]},), got {in_shape}")
        return (self.weight.shape[0],)

    def forward(self, x):
        return x @ self.weight.T + self.bias, x

    def backward(self, dout, x):
        return dout @ self.weight, {"weight": dout.T @ x, "bias": dout.sum(axis=0)}


class Conv2d(Layer):
    kind = "conv2d"
    weight_name = "kernel"

    def __init__(self, kernel, bias):
        self.kernel = np.ascontiguousarray(kernel, dtype=np.float64)
        self.bias = np.ascontiguousarray(bias, dtype=np.float64)
        if self.kernel.ndim != 4 or self.bias.shape != (self.kernel.shape[0],):
            raise ValueError("conv kernel must be (out, in, kh, kw) with one bias per output")

    @classmethod
    def init(cls, in_ch, out_ch, k, rng):
        bound = 1.0 / np.sqrt(in_ch * k * k)
        return cls(rng.uniform(-bound, bound, (out_ch, in_ch, k, k)), rng.uniform(-bound, bound, out_ch))

    def params(self):
        return {"kernel": self.kernel, "bias": self.bias}

    def out_shape(self, in_shape):
        o, c, kh, kw = self.kernel.shape
        if len(in_shape) != 3 or in_shape[0] != c or in_shape[1] < kh or in_shape[2] < kw:
            raise ValueError(f"conv layer expects ({c}, >={kh}, >={kw}), got {in_shape}")
        return (o, in_shape[1] - kh + 1, in_shape[2] - kw + 1)

    def forward(self, x):
        o, c, kh, kw = self.kernel.shape
        b, _, h, w = x.shape
        ho, wo = h - kh + 1, w - kw + 1
        # (b, c, ho, wo, kh, kw) -> (b, ho, wo, c*kh*kw)
        win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, c * kh * kw)
        out = cols @ self.kernel.reshape(o, -1).T + self.bias
        return out.transpose(0, 3, 1, 2), (x.shape, cols)

    def backward(self, dout, cache):
        x_shape, cols = cache
        o, c, kh, kw = self.kernel.shape
        b, _, h, w = x_shape
        ho, wo = h - kh + 1, w - kw + 1
        d = dout.transpose(0, 2, 3, 1).reshape(-1, o)
        dk = (d.T @ cols.reshape(-1, c * kh * kw)).reshape(self.kernel.shape)
        dcols = (d @ self.kernel.reshape(o, -1)).reshape(b, ho, wo, c, kh, kw)
        dx = np.zeros(x_shape)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx, {"kernel": dk, "bias": dout.sum(axis=(0, 2, 3))}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0), x > 0

    def backward(self, dout, mask):
        return dout * mask, {}


class Identity(Layer):
    """Pass-through activation, for linear test networks."""

    kind = "identity"

    def forward(self, x):
        return x, None

    def backward(self, dout, cache):
        return dout, {}


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, shape):
        return dout.reshape(shape), {}


class Network:
    def __init__(self, layers, input_shape, n_classes):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.n_classes = int(n_classes)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        if shape != (self.n_classes,):
            raise ValueError(f"network output shape {shape} != ({self.n_classes},)")

    def view_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.weight_name is not None]

    def copy(self) -> "Network":
        layers = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                layers.append(Dense(layer.weight.copy(), layer.bias.copy()))
            elif isinstance(layer, Conv2d):
                layers.append(Conv2d(layer.kernel.copy(), layer.bias.copy()))
            else:
                layers.append(type(layer)())
        return Network(layers, self.input_shape, self.n_classes)

    def __repr__(self):
        kinds = ", ".join(layer.kind for layer in self.layers)
        return f"Network([{kinds}], input_shape={self.input_shape}, n_classes={self.n_classes})"


def weight_view(layer: Layer) -> np.ndarray:
    """Writable matrix view of the layer's weight (see module docstring)."""
    if isinstance(layer, Dense):
        return layer.weight
    if isinstance(layer, Conv2d):
        view = layer.kernel.reshape(layer.kernel.shape[0], -1)
        assert np.shares_memory(view, layer.kernel)
        return view
    raise TypeError(f"{layer.kind} layer has no weight view")


def mlp3(input_shape, n_classes, seed, hidden=(128, 64)) -> Network:
    rng = np.random.default_rng(seed)
    d = int(np.prod(input_shape))
    h1, h2 = hidden
    layers = [
        Flatten(),
        Dense.init(d, h1, rng), ReLU(),
        Dense.init(h1, h2, rng), ReLU(),
        Dense.init(h2, n_classes, rng),
    ]
    return Network(layers, tuple(input_shape), n_classes)


def conv_s(input_shape, n_classes, seed, channels=8, k=3) -> Network:
    rng = np.random.default_rng(seed)
    if len(input_shape) == 2:
        input_shape = (1, *input_shape)
    c, h, w = input_shape
    flat = channels * (h - k + 1) * (w - k + 1)
    layers = [Conv2d.init(c, channels, k, rng), ReLU(), Flatten(), Dense.init(flat, n_classes, rng)]
    return Network(layers, input_shape, n_classes)


ARCHITECTURES = {"mlp3": mlp3, "conv_s": conv_s}


def _as_batch(net: Network, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] == net.input_shape:
        return x
    if x.ndim >= 1 and int(np.prod(x.shape[1:])) == int(np.prod(net.input_shape)):
        return x.reshape((x.shape[0], *net.input_shape))
    raise ValueError(f"batch shape {x.shape} does not match input shape {net.input_shape}")


def forward(net: Network, batch):
    """Logits ``(B, n_classes)`` and the cache needed by ``backward``."""
    x = _as_batch(net, batch)
    caches = []
    for layer in net.layers:
        x, c = layer.forward(x)
        caches.append(c)
    return x, (caches, x)


def logits(net: Network, batch) -> np.ndarray:
    return forward(net, batch)[0]


def softmax_xent(z: np.ndarray, labels, label_smoothing: float = 0.0):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    b, k = z.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    target = np.full((b, k), label_smoothing / k)
    target[np.arange(b), labels] += 1.0 - label_smoothing
    loss = -float(np.sum(target * logp)) / b
    return loss, (np.exp(logp) - target) / b


def backward(net: Network, cache, labels, label_smoothing: float = 0.0):
    """Mean softmax cross-entropy and per-layer parameter gradients.

    ``cache`` is the second value returned by ``forward``. Gradients come
    back as a list with one dict per layer (empty for parameter-free layers).
    """
    caches, z = cache
    loss, dz = softmax_xent(z, labels, label_smoothing)
    grads = [None] * len(net.layers)
    d = dz
    for i in range(len(net.layers) - 1, -1, -1):
        d, grads[i] = net.layers[i].backward(d, caches[i])
    return loss, grads


def loss_and_grads(net: Network, batch, labels, label_smoothing: float = 0.0):
    _, cache = forward(net, batch)
    return backward(net, cache, labels, label_smoothing)


def task_loss(net: Network, batch, labels) -> float:
    return softmax_xent(logits(net, batch), labels)[0]


# checkpoint format: MAGIC, "input d1 d2 ...\n", "classes K layers L\n", then
# per layer "kind\n", "shape ints\n" and the parameters as little-endian f64.

def save_network(net: Network, path) -> None:
    with open(path, "wb") as f:
        f.write(dump_network(net))


def dump_network(net: Network) -> bytes:
    out = [MAGIC]
    out.append(("input " + " ".join(str(d) for d in net.input_shape) + "\n").encode())
    out.append(f"classes {net.n_classes} layers {len(net.layers)}\n".encode())
    for layer in net.layers:
        out.append(f"{layer.kind}\n".encode())
        if isinstance(layer, Dense):
            shape = layer.weight.shape
        elif isinstance(layer, Conv2d):
            shape = layer.kernel.shape
        else:
            shape = ()
        out.append((" ".join(str(d) for d in shape) + "\n").encode())
        for p in layer.params().values():
            out.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(out)


def load_network(path) -> Network:
    with open(path, "rb") as f:
        return parse_network(f.read())


def parse_network(buf: bytes) -> Network:
    if not buf.startswith(MAGIC):
        raise ValueError("not a TAOTF1 checkpoint")
    pos = len(MAGIC)

    def line():
        nonlocal pos
        end = buf.index(b"\n", pos)
        text = buf[pos:end].decode("ascii")
        pos = end + 1
        return text

    def floats(count, shape):
        nonlocal pos
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr.reshape(shape)

    head = line().split()
    if head[0] != "input":
        raise ValueError("checkpoint is missing the input line")
    input_shape = tuple(int(t) for t in head[1:])
    _, n_classes, _, n_layers = line().split()
    layers = []
    simple = {"relu": ReLU, "flatten": Flatten, "identity": Identity}
    for _ in range(int(n_layers)):
        kind = line()
        shape = tuple(int(t) for t in line().split())
        if kind == "dense":
            w = floats(shape[0] * shape[1], shape)
            layers.append(Dense(w, floats(shape[0], (shape[0],))))
        elif kind == "conv2d":
            k = floats(int(np.prod(shape)), shape)
            layers.append(Conv2d(k, floats(shape[0], (shape[0],))))
        elif kind in simple:
            layers.append(simple[kind]())
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    if pos != len(buf):
        raise ValueError("trailing bytes in checkpoint")
    return Network(layers, input_shape, int(n_classes))
