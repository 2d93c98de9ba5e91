"""Layers with hand-written forward and backward passes.

Every layer keeps its parameters in ``self.params`` (an ordered dict of
arrays) and, after :meth:`Layer.backward`, the matching gradients in
``self.grads``. ``forward`` caches whatever ``backward`` needs; the cache is
consumed by ``backward`` so a second backward without a new forward raises
:class:`~seatrack.errors.StateError`.

Shapes follow the batch-first convention: sequences are ``[B, T, C]``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, StateError
from .tensor import FLOAT, Rng, relu, sigmoid, softmax

ACTIVATIONS = ("relu", "tanh", "linear")


def _glorot(rng: Rng | None, shape, fan_in: int, fan_out: int, dtype=FLOAT) -> np.ndarray:
    if rng is None:
        return np.zeros(shape, dtype=dtype)
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit, dtype=dtype)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return relu(z)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if name == "relu":
        return grad * (z > 0)
    if name == "tanh":
        return grad * (1 - a * a)
    return grad


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def output_shape(self, input_shape: tuple) -> tuple:
        """Per-sample output shape for a per-sample ``input_shape`` (no batch axis)."""
        raise NotImplementedError

    def config(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"kind": self.kind, **self.config()}

    @property
    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> None:
        for name, p in self.params.items():
            self.params[name] = p.astype(dtype)
        self._cache = None

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called without a matching forward")
        cache, self._cache = self._cache, None
        return cache

    def zero_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Conv1d(Layer):
    """Causal, strided 1D convolution.

    The input is left-padded with ``kernel - 1`` zeros so output position
    ``t`` only sees inputs at positions ``<= t * stride``. Weights are
    ``[kernel, in_channels, filters]``.
    """

    kind = "conv1d"

    def __init__(self, in_channels: int, filters: int = 32, kernel: int = 5, stride: int = 3,
                 activation: str = "relu", rng: Rng | None = None, dtype=FLOAT):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels, self.filters = in_channels, filters
        self.kernel, self.stride, self.activation = kernel, stride, activation
        self.params["weight"] = _glorot(rng, (kernel, in_channels, filters),
                                        kernel * in_channels, kernel * filters, dtype)
        self.params["bias"] = np.zeros(filters, dtype=dtype)

    def config(self):
        return {"in_channels": self.in_channels, "filters": self.filters, "kernel": self.kernel,
                "stride": self.stride, "activation": self.activation}

    def out_length(self, length: int) -> int:
        return (length - 1) // self.stride + 1

    def output_shape(self, input_shape):
        length, channels = input_shape
        if channels != self.in_channels:
            raise DimensionError(f"conv1d expects {self.in_channels} channels, got {channels}")
        return (self.out_length(length), self.filters)

    def _window_index(self, length: int) -> np.ndarray:
        starts = np.arange(self.out_length(length)) * self.stride
        return starts[:, None] + np.arange(self.kernel)[None, :]

    def forward(self, x, training=False, rng=None):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise DimensionError(f"conv1d expects [B, L, {self.in_channels}], got {x.shape}")
        if x.shape[1] < 1:
            raise DimensionError("conv1d needs at least one input position")
        w, b = self.params["weight"], self.params["bias"]
        batch, length, _ = x.shape
        padded = np.zeros((batch, length + self.kernel - 1, self.in_channels), dtype=w.dtype)
        padded[:, self.kernel - 1:] = x
        idx = self._window_index(length)
        patches = padded[:, idx, :]  # [B, L_out, K, C]
        z = np.tensordot(patches, w, axes=([2, 3], [0, 1])) + b
        a = _activate(self.activation, z)
        self._cache = (patches, z, a, length)
        return a

    def backward(self, grad_out):
        patches, z, a, length = self._take_cache()
        if grad_out.shape != a.shape:
            raise DimensionError(f"conv1d grad_out {grad_out.shape} != output {a.shape}")
        w = self.params["weight"]
        gz = _activation_grad(self.activation, z, a, grad_out)
        self.grads = {
            "weight": np.tensordot(patches, gz, axes=([0, 1], [0, 1])),
            "bias": gz.sum(axis=(0, 1)),
        }
        gpatch = np.tensordot(gz, w, axes=([2], [2]))  # [B, L_out, K, C]
        batch = gz.shape[0]
        gpad = np.zeros((batch, length + self.kernel - 1, self.in_channels), dtype=w.dtype)
        idx = self._window_index(length)
        # windows overlap when stride < kernel; accumulate one tap at a time
        for k in range(self.kernel):
            np.add.at(gpad, (slice(None), idx[:, k]), gpatch[:, :, k, :])
        return gpad[:, self.kernel - 1:]


GATES = ("f", "i", "c", "o")


class Lstm(Layer):
    """LSTM over ``[B, T, C_in]`` with per-gate weights ``W_g: [H + C_in, H]``.

    Each gate reads the concatenation ``[h_prev, x_t]``. With
    ``peephole_output_gate`` the output gate additionally reads the fresh cell
    state, so ``W_o`` grows to ``[2H + C_in, H]``.
    """

    kind = "lstm"

    def __init__(self, in_channels: int, units: int = 32, return_sequences: bool = True,
                 peephole_output_gate: bool = False, forget_bias: float = 1.0,
                 rng: Rng | None = None, dtype=FLOAT):
        super().__init__()
        self.in_channels, self.units = in_channels, units
        self.return_sequences = return_sequences
        self.peephole_output_gate = peephole_output_gate
        H, C = units, in_channels
        for g in GATES:
            rows = [_glorot(rng, (H, H), H, H, dtype), _glorot(rng, (C, H), C, H, dtype)]
            if g == "o" and peephole_output_gate:
                rows.append(_glorot(rng, (H, H), H, H, dtype))
            self.params[f"W_{g}"] = np.concatenate(rows, axis=0)
        for g in GATES:
            self.params[f"b_{g}"] = np.full(H, forget_bias if (g == "f" and rng is not None) else 0.0,
                                            dtype=dtype)

    def config(self):
        return {"in_channels": self.in_channels, "units": self.units,
                "return_sequences": self.return_sequences,
                "peephole_output_gate": self.peephole_output_gate}

    def output_shape(self, input_shape):
        steps, channels = input_shape
        if channels != self.in_channels:
            raise DimensionError(f"lstm expects {self.in_channels} channels, got {channels}")
        return (steps, self.units) if self.return_sequences else (self.units,)

    def _check_step_shapes(self, x_t, h_prev, c_prev):
        B = x_t.shape[0]
        if x_t.ndim != 2 or x_t.shape[1] != self.in_channels:
            raise DimensionError(f"lstm step expects x_t [B, {self.in_channels}], got {x_t.shape}")
        for name, t in (("h_prev", h_prev), ("c_prev", c_prev)):
            if t.shape != (B, self.units):
                raise DimensionError(f"lstm step expects {name} [{B}, {self.units}], got {t.shape}")

    def _stacked(self):
        p = self.params
        H = self.units
        # f, i, c read [h, x]; o reads [h, x] (+ c_t with the peephole, handled separately)
        w = np.concatenate([p["W_f"], p["W_i"], p["W_c"], p["W_o"][: H + self.in_channels]], axis=1)
        b = np.concatenate([p["b_f"], p["b_i"], p["b_c"], p["b_o"]])
        return w, b

    def _step(self, w, b, x_t, h_prev, c_prev):
        H = self.units
        z = np.concatenate([h_prev, x_t], axis=1)
        pre = z @ w + b
        f = sigmoid(pre[:, :H])
        i = sigmoid(pre[:, H:2 * H])
        g = np.tanh(pre[:, 2 * H:3 * H])
        c = f * c_prev + i * g
        pre_o = pre[:, 3 * H:]
        if self.peephole_output_gate:
            pre_o = pre_o + c @ self.params["W_o"][H + self.in_channels:]
        o = sigmoid(pre_o)
        tc = np.tanh(c)
        h = o * tc
        return h, c, (z, f, i, g, o, c_prev, c, tc)

    def step(self, x_t, h_prev, c_prev):
        """One recurrence step; returns ``(h_t, c_t)`` and leaves no cache."""
        self._check_step_shapes(x_t, h_prev, c_prev)
        w, b = self._stacked()
        h, c, _ = self._step(w, b, x_t, h_prev, c_prev)
        return h, c

    def forward(self, x, training=False, rng=None):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise DimensionError(f"lstm expects [B, T, {self.in_channels}], got {x.shape}")
        B, T, _ = x.shape
        if T == 0:
            raise ValueError("lstm needs at least one time step")
        dtype = self.params["W_f"].dtype
        w, b = self._stacked()
        h = np.zeros((B, self.units), dtype=dtype)
        c = np.zeros((B, self.units), dtype=dtype)
        steps, outs = [], []
        for t in range(T):
            h, c, cache = self._step(w, b, x[:, t, :], h, c)
            steps.append(cache)
            outs.append(h)
        self._cache = (steps, w, T)
        if self.return_sequences:
            return np.stack(outs, axis=1)
        return h

    def backward(self, grad_out):
        steps, w, T = self._take_cache()
        H, C = self.units, self.in_channels
        B = steps[0][0].shape[0]
        expected = (B, T, H) if self.return_sequences else (B, H)
        if grad_out.shape != expected:
            raise DimensionError(f"lstm grad_out {grad_out.shape} != output {expected}")
        dtype = w.dtype
        dw = np.zeros_like(w)
        db = np.zeros(4 * H, dtype=dtype)
        dw_peep = np.zeros((H, H), dtype=dtype) if self.peephole_output_gate else None
        w_peep = self.params["W_o"][H + C:] if self.peephole_output_gate else None
        dx = np.zeros((B, T, C), dtype=dtype)
        dh_next = np.zeros((B, H), dtype=dtype)
        dc_next = np.zeros((B, H), dtype=dtype)
        for t in reversed(range(T)):
            z, f, i, g, o, c_prev, c, tc = steps[t]
            if self.return_sequences:
                dh = grad_out[:, t, :] + dh_next
            else:
                dh = dh_next + (grad_out if t == T - 1 else 0)
            da_o = dh * tc * o * (1 - o)
            dc = dh * o * (1 - tc * tc) + dc_next
            if self.peephole_output_gate:
                dc = dc + da_o @ w_peep.T
                dw_peep += c.T @ da_o
            da_f = dc * c_prev * f * (1 - f)
            da_i = dc * g * i * (1 - i)
            da_c = dc * i * (1 - g * g)
            da = np.concatenate([da_f, da_i, da_c, da_o], axis=1)
            dw += z.T @ da
            db += da.sum(axis=0)
            dz = da @ w.T
            dh_next = dz[:, :H]
            dx[:, t, :] = dz[:, H:]
            dc_next = dc * f
        grads = {}
        for k, gname in enumerate(GATES):
            grads[f"W_{gname}"] = dw[:, k * H:(k + 1) * H]
        if self.peephole_output_gate:
            grads["W_o"] = np.concatenate([grads["W_o"], dw_peep], axis=0)
        for k, gname in enumerate(GATES):
            grads[f"b_{gname}"] = db[k * H:(k + 1) * H]
        self.grads = {name: np.ascontiguousarray(grads[name]) for name in self.params}
        return dx


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by ``1 / (1 - rate)`` while training."""

    kind = "dropout"

    def __init__(self, rate: float = 0.5):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def config(self):
        return {"rate": self.rate}

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._cache = None
            self._identity = True
            return x
        if rng is None:
            raise StateError("dropout in training mode needs an Rng")
        keep = rng.random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        self._identity = False
        self._cache = mask
        return x * mask

    def backward(self, grad_out):
        if getattr(self, "_identity", False):
            return grad_out
        mask = self._take_cache()
        if grad_out.shape != mask.shape:
            raise DimensionError(f"dropout grad_out {grad_out.shape} != mask {mask.shape}")
        return grad_out * mask


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._take_cache())


class Dense(Layer):
    """Fully connected layer ``act(x @ W + b)`` on ``[B, C_in]``.

    With ``activation="softmax"`` the generic :meth:`backward` applies the
    full softmax Jacobian; :meth:`backward_logits` skips it for the fused
    softmax/cross-entropy path.
    """

    kind = "dense"

    def __init__(self, in_features: int, units: int, activation: str = "softmax",
                 rng: Rng | None = None, dtype=FLOAT):
        super().__init__()
        if activation not in ACTIVATIONS + ("softmax",):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_features, self.units, self.activation = in_features, units, activation
        self.params["weight"] = _glorot(rng, (in_features, units), in_features, units, dtype)
        self.params["bias"] = np.zeros(units, dtype=dtype)

    def config(self):
        return {"in_features": self.in_features, "units": self.units, "activation": self.activation}

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise DimensionError(f"dense expects ({self.in_features},), got {tuple(input_shape)}")
        return (self.units,)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(f"dense expects [B, {self.in_features}], got {x.shape}")
        z = x @ self.params["weight"] + self.params["bias"]
        a = softmax(z) if self.activation == "softmax" else _activate(self.activation, z)
        self._cache = (x, z, a)
        return a

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("dense: backward called without a matching forward")
        x, z, a = self._cache
        if grad_out.shape != a.shape:
            raise DimensionError(f"dense grad_out {grad_out.shape} != output {a.shape}")
        if self.activation == "softmax":
            gz = a * (grad_out - (grad_out * a).sum(axis=1, keepdims=True))
        else:
            gz = _activation_grad(self.activation, z, a, grad_out)
        return self.backward_logits(gz)

    def backward_logits(self, grad_logits):
        """Backward from the gradient w.r.t. the pre-activation ``x @ W + b``."""
        x, _, _ = self._take_cache()
        self.grads = {"weight": x.T @ grad_logits, "bias": grad_logits.sum(axis=0)}
        return grad_logits @ self.params["weight"].T


LAYER_TYPES = {cls.kind: cls for cls in (Conv1d, Lstm, Dropout, Flatten, Dense)}


def layer_from_descriptor(desc: dict, rng: Rng | None = None, dtype=FLOAT) -> Layer:
    desc = dict(desc)
    kind = desc.pop("kind")
    cls = LAYER_TYPES.get(kind)
    if cls is None:
        raise ValueError(f"unknown layer kind {kind!r}")
    if cls in (Dropout, Flatten):
        return cls(**desc)
    return cls(**desc, rng=rng, dtype=dtype)
