"""Small numpy network engine with explicit forward and backward passes.

Networks are plain layer lists. Every layer before (and including) the
representation index forms the backbone; a single Dense classifier head
follows it. Gradients can be injected directly at the representation layer,
which is where the pseudo-task attaches.

All arithmetic is float64. Activations are laid out batch-first: ``(B, F)``
for feature vectors and ``(B, C, H, W)`` for images.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when layer dimensions do not compose or inputs do not fit."""


# ---------------------------------------------------------------------------
# Layer descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int

    kind = "Dense"
    learnable = True

    def out_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"Dense expects input ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_features,)

    def param_shapes(self):
        return (self.out_features, self.in_features), (self.out_features,)

    def fan_in(self):
        return self.in_features

    def forward(self, x, params):
        return x @ params.weights.T + params.biases, None

    def backward(self, x, cache, grad_out, params):
        dw = grad_out.T @ x
        db = grad_out.sum(axis=0)
        return grad_out @ params.weights, (dw, db)


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    kind = "Conv2d"
    learnable = True

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"Conv2d expects ({self.in_channels}, H, W), got {tuple(in_shape)}")
        _, h, w = in_shape
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"Conv2d kernel {self.kernel} does not fit input {tuple(in_shape)}")
        return (self.out_channels, ho, wo)

    def param_shapes(self):
        k = self.kernel
        return (self.out_channels, self.in_channels, k, k), (self.out_channels,)

    def fan_in(self):
        return self.in_channels * self.kernel * self.kernel

    def _windows(self, x):
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (self.kernel, self.kernel), axis=(2, 3))
        return xp.shape, win[:, :, :: self.stride, :: self.stride]

    def forward(self, x, params):
        padded_shape, win = self._windows(x)
        out = np.einsum("bchwij,ocij->bohw", win, params.weights, optimize=True)
        out += params.biases[None, :, None, None]
        return out, padded_shape

    def backward(self, x, padded_shape, grad_out, params):
        _, win = self._windows(x)
        dw = np.einsum("bohw,bchwij->ocij", grad_out, win, optimize=True)
        db = grad_out.sum(axis=(0, 2, 3))
        s, k, p = self.stride, self.kernel, self.padding
        ho, wo = grad_out.shape[2:]
        dxp = np.zeros(padded_shape)
        for i in range(k):
            for j in range(k):
                contrib = np.einsum("bohw,oc->bchw", grad_out, params.weights[:, :, i, j])
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += contrib
        h, w = padded_shape[2] - 2 * p, padded_shape[3] - 2 * p
        return dxp[:, :, p : p + h, p : p + w], (dw, db)


@dataclass(frozen=True)
class MaxPool2d:
    kernel: int
    stride: int | None = None

    kind = "MaxPool2d"
    learnable = False

    @property
    def step(self):
        return self.stride or self.kernel

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"MaxPool2d expects (C, H, W), got {tuple(in_shape)}")
        c, h, w = in_shape
        ho = (h - self.kernel) // self.step + 1
        wo = (w - self.kernel) // self.step + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"MaxPool2d kernel {self.kernel} does not fit input {tuple(in_shape)}")
        return (c, ho, wo)

    def forward(self, x, params=None):
        k, s = self.kernel, self.step
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = win.reshape(win.shape[:4] + (k * k,))
        # argmax picks the first maximum, so ties route to the lowest index
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return out, arg

    def backward(self, x, arg, grad_out, params=None):
        k, s = self.kernel, self.step
        ho, wo = grad_out.shape[2:]
        dx = np.zeros_like(x)
        for i in range(k):
            for j in range(k):
                routed = np.where(arg == i * k + j, grad_out, 0.0)
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += routed
        return dx, None


@dataclass(frozen=True)
class ReLU:
    kind = "ReLU"
    learnable = False

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, params=None):
        return np.maximum(x, 0.0), None

    def backward(self, x, cache, grad_out, params=None):
        # subgradient at exactly 0 is 0
        return np.where(x > 0, grad_out, 0.0), None


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5

    kind = "Dropout"
    learnable = False

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def backward(self, x, mask, grad_out, params=None):
        return (grad_out if mask is None else grad_out * mask), None


@dataclass(frozen=True)
class Flatten:
    kind = "Flatten"
    learnable = False

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params=None):
        return x.reshape(x.shape[0], -1), None

    def backward(self, x, cache, grad_out, params=None):
        return grad_out.reshape(x.shape), None


LAYER_TYPES = {cls.kind: cls for cls in (Dense, Conv2d, MaxPool2d, ReLU, Dropout, Flatten)}


def layer_to_dict(layer):
    d = {"type": layer.kind}
    d.update({k: v for k, v in layer.__dict__.items()})
    return d


def layer_from_dict(d):
    d = dict(d)
    try:
        cls = LAYER_TYPES[d.pop("type")]
    except KeyError as exc:
        raise ValueError(f"unknown or missing layer type in {d!r}") from exc
    return cls(**d)


# ---------------------------------------------------------------------------
# Network spec and state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture: input shape, ordered layers, representation index.

    ``layers[rep_index]`` produces the representation; ``layers[-1]`` is the
    Dense classifier head and must be the only layer after it.
    """

    input_shape: tuple
    layers: tuple
    rep_index: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if any(s < 1 for s in self.input_shape):
            raise ShapeError(f"input shape must be positive, got {self.input_shape}")
        if self.rep_index != len(self.layers) - 2:
            raise ShapeError(
                f"rep_index must be {len(self.layers) - 2} (the head must be the only layer after it), "
                f"got {self.rep_index}"
            )
        if not isinstance(self.layers[-1], Dense):
            raise ShapeError("classifier head (last layer) must be Dense")
        shapes = [self.input_shape]
        for idx, layer in enumerate(self.layers):
            try:
                shapes.append(tuple(layer.out_shape(shapes[-1])))
            except ShapeError as exc:
                raise ShapeError(f"layer {idx} ({layer.kind}): {exc}") from None
        if len(shapes[self.rep_index + 1]) != 1:
            raise ShapeError(f"representation must be a flat vector, got shape {shapes[self.rep_index + 1]}")
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def head(self):
        return self.layers[-1]

    @property
    def rep_dim(self):
        return self.shapes[self.rep_index + 1][0]

    @property
    def n_classes(self):
        return self.head.out_features

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer_to_dict(layer) for layer in self.layers],
            "rep_index": self.rep_index,
        }

    @classmethod
    def from_dict(cls, d):
        for key in ("input_shape", "layers", "rep_index"):
            if key not in d:
                raise KeyError(key)
        return cls(tuple(d["input_shape"]), tuple(layer_from_dict(x) for x in d["layers"]), int(d["rep_index"]))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def mlp_spec(in_dim, hidden, rep_dim, n_classes, dropout=0.0):
    """Dense/ReLU stack ending in a ReLU representation of width ``rep_dim``."""
    layers = []
    prev = in_dim
    for width in list(hidden) + [rep_dim]:
        layers += [Dense(prev, width), ReLU()]
        if dropout:
            layers.append(Dropout(dropout))
        prev = width
    layers.append(Dense(rep_dim, n_classes))
    return NetworkSpec((in_dim,), tuple(layers), len(layers) - 2)


@dataclass
class LayerState:
    weights: np.ndarray
    biases: np.ndarray
    vel_w: np.ndarray = None
    vel_b: np.ndarray = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.vel_w is None:
            self.vel_w = np.zeros_like(self.weights)
        if self.vel_b is None:
            self.vel_b = np.zeros_like(self.biases)

    def copy(self):
        return LayerState(self.weights.copy(), self.biases.copy(), self.vel_w.copy(), self.vel_b.copy())


def init_state(spec, rng):
    """He-normal weights, zero biases; ``None`` for parameter-free layers."""
    state = []
    for layer in spec.layers:
        if not layer.learnable:
            state.append(None)
            continue
        w_shape, b_shape = layer.param_shapes()
        std = np.sqrt(2.0 / layer.fan_in())
        state.append(LayerState(rng.normal(0.0, std, size=w_shape), np.zeros(b_shape)))
    return state


def copy_state(state):
    return [None if s is None else s.copy() for s in state]


def check_state(spec, state):
    if len(state) != len(spec.layers):
        raise ShapeError(f"state has {len(state)} entries for {len(spec.layers)} layers")
    for idx, (layer, s) in enumerate(zip(spec.layers, state)):
        if layer.learnable:
            w_shape, b_shape = layer.param_shapes()
            if s is None or s.weights.shape != w_shape or s.biases.shape != b_shape:
                raise ShapeError(f"layer {idx} ({layer.kind}): parameters do not match {w_shape}, {b_shape}")


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


@dataclass
class BatchTrace:
    inputs: np.ndarray
    activations: list  # activations[k] is the output of layer k
    caches: list
    masks: dict  # layer index -> dropout mask (already scaled by 1/(1-rate))
    rep_index: int
    ce_loss: np.ndarray = None

    @property
    def rep(self):
        return self.activations[self.rep_index]

    @property
    def logits(self):
        return self.activations[-1]

    def layer_input(self, k):
        return self.inputs if k == 0 else self.activations[k - 1]


def forward(spec, state, batch, train_mode=False, rng=None, masks=None, labels=None):
    """Run the network on ``batch`` and record every activation.

    Dropout is inverted: at train time kept units are scaled by
    ``1/(1-rate)``; in eval mode it is the identity. Pass ``masks`` (as stored
    in a previous trace) to replay the exact same dropout pattern.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.shape[1:] != spec.input_shape:
        raise ShapeError(f"layer 0 ({spec.layers[0].kind}): batch shape {x.shape[1:]} != {spec.input_shape}")
    inputs = x
    activations, caches, used_masks = [], [], {}
    for idx, (layer, params) in enumerate(zip(spec.layers, state)):
        if isinstance(layer, Dropout):
            mask = None
            if masks is not None and idx in masks:
                mask = masks[idx]
            elif train_mode and layer.rate > 0:
                if rng is None:
                    raise ValueError("train-mode dropout needs an rng")
                keep = rng.random(x.shape) >= layer.rate
                mask = keep / (1.0 - layer.rate)
            if mask is not None:
                used_masks[idx] = mask
                x = x * mask
            caches.append(mask)
        else:
            x, cache = layer.forward(x, params)
            caches.append(cache)
        activations.append(x)
    trace = BatchTrace(inputs, activations, caches, used_masks, spec.rep_index)
    if labels is not None:
        trace.ce_loss, _ = softmax_cross_entropy(trace.logits, labels)
    return trace


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Per-instance cross-entropy and its gradient w.r.t. the logits.

    No batch averaging is applied; callers scale by ``1/B`` themselves.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} logits rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    rows = np.arange(n)
    e = np.exp(z)
    # exp(max - max) == 1 exactly; log1p over the remainder keeps tiny losses accurate
    e[rows, z.argmax(axis=1)] = 0.0
    log_norm = np.log1p(e.sum(axis=1))
    loss = log_norm - z[rows, labels]
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad


def _backward_range(spec, state, trace, grad, stop):
    grads = [None] * len(spec.layers)
    for k in range(stop, -1, -1):
        layer = spec.layers[k]
        grad, pgrad = layer.backward(trace.layer_input(k), trace.caches[k], grad, state[k])
        grads[k] = pgrad
    return grads, grad


def backward_from_rep(spec, state, trace, grad_at_rep):
    """Chain-rule gradients for every backbone layer given dL/d(rep).

    Returns a list aligned with ``spec.layers``: ``(dW, db)`` for learnable
    backbone layers, ``None`` elsewhere. The head entry is always ``None``.
    """
    grad_at_rep = np.asarray(grad_at_rep, dtype=np.float64)
    if grad_at_rep.shape != trace.rep.shape:
        raise ShapeError(f"grad_at_rep shape {grad_at_rep.shape} != rep shape {trace.rep.shape}")
    grads, _ = _backward_range(spec, state, trace, grad_at_rep, spec.rep_index)
    return grads


def head_gradients(trace, grad_logits):
    """Classifier-head ``(dW, db)`` from an (already scaled) logits gradient."""
    return grad_logits.T @ trace.rep, grad_logits.sum(axis=0)


def backward(spec, state, trace, grad_logits):
    """Full backward pass from a logits gradient (no extra rep injection)."""
    grads, _ = _backward_range(spec, state, trace, grad_logits, len(spec.layers) - 1)
    return grads


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def _total_loss(spec, state, batch, labels, loss, masks):
    trace = forward(spec, state, batch, masks=masks)
    if loss == "ce":
        per, _ = softmax_cross_entropy(trace.logits, labels)
        return per.mean()
    return 0.5 * np.sum((trace.logits - labels) ** 2) / len(batch)


def loss_and_gradients(spec, state, batch, labels, loss="ce", masks=None):
    """Batch-mean total loss and analytic gradients for every layer.

    ``loss="ce"`` uses softmax cross-entropy on integer labels; ``loss="l2"``
    uses half squared error between logits and real-valued ``labels``.
    """
    trace = forward(spec, state, batch, masks=masks)
    n = len(batch)
    if loss == "ce":
        per, g = softmax_cross_entropy(trace.logits, labels)
        value = per.mean()
    elif loss == "l2":
        diff = trace.logits - labels
        value = 0.5 * np.sum(diff**2) / n
        g = diff
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return value, backward(spec, state, trace, g / n)


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a||, ||n||)`` over a whole parameter tensor.

    Tensor-level norms keep near-zero entries (dead units, dropped-out paths)
    from turning rounding noise into huge elementwise ratios.
    """
    a, b = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def finite_difference_check(spec, state, batch, labels, epsilon=1e-6, loss="ce", masks=None):
    """Worst relative error between analytic and central-difference gradients.

    The error is measured per weight or bias tensor (see
    :func:`relative_error`) and the maximum over all tensors is returned.
    Dropout layers replay ``masks``, or act as identity when none are given.
    """
    if not 0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    _, grads = loss_and_gradients(spec, state, batch, labels, loss, masks)
    worst = 0.0
    for k, layer in enumerate(spec.layers):
        if not layer.learnable:
            continue
        for param, analytic in zip((state[k].weights, state[k].biases), grads[k]):
            numeric = np.empty_like(param)
            flat = param.reshape(-1)
            num_flat = numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                up = _total_loss(spec, state, batch, labels, loss, masks)
                flat[i] = orig - epsilon
                down = _total_loss(spec, state, batch, labels, loss, masks)
                flat[i] = orig
                num_flat[i] = (up - down) / (2 * epsilon)
            worst = max(worst, relative_error(analytic, numeric))
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, state):
    """Write learnable parameters as little-endian float64.

    Layout: uint32 layer count, then per layer ``ndim_w, dims..., ndim_b,
    dims...`` (all uint32), then every weight and bias array row-major in
    layer order.
    """
    learn = [s for s in state if s is not None]
    header = [len(learn)]
    for s in learn:
        header += [s.weights.ndim, *s.weights.shape, s.biases.ndim, *s.biases.shape]
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for s in learn for a in (s.weights, s.biases)
    )
    Path(path).write_bytes(struct.pack(f"<{len(header)}I", *header) + payload)


def load_checkpoint(path, spec=None):
    """Read a checkpoint; with ``spec`` the result is aligned to its layers."""
    raw = Path(path).read_bytes()
    pos = 0

    def u32():
        nonlocal pos
        if pos + 4 > len(raw):
            raise ValueError(f"{path}: truncated checkpoint header")
        (v,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        return v

    shapes = []
    for _ in range(u32()):
        w_shape = tuple(u32() for _ in range(u32()))
        b_shape = tuple(u32() for _ in range(u32()))
        shapes.append((w_shape, b_shape))
    expected = sum(int(np.prod(w)) + int(np.prod(b)) for w, b in shapes) * 8
    if len(raw) - pos != expected:
        raise ValueError(f"{path}: payload has {len(raw) - pos} bytes, expected {expected}")
    arrays = np.frombuffer(raw, dtype="<f8", offset=pos).astype(np.float64)
    learn, off = [], 0
    for w_shape, b_shape in shapes:
        nw, nb = int(np.prod(w_shape)), int(np.prod(b_shape))
        learn.append(LayerState(arrays[off : off + nw].reshape(w_shape), arrays[off + nw : off + nw + nb].reshape(b_shape)))
        off += nw + nb
    if spec is None:
        return learn
    it = iter(learn)
    state = [next(it, None) if layer.learnable else None for layer in spec.layers]
    if len(learn) != sum(layer.learnable for layer in spec.layers):
        raise ShapeError(f"{path}: checkpoint has {len(learn)} learnable layers, spec expects a different count")
    check_state(spec, state)
    return state
