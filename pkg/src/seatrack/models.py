"""Model assembly, inference and checkpoint serialization.

Architectures are plain :class:`Sequential` stacks described by a
:class:`ModelSpec`. The spec is enough to rebuild the layers, so a checkpoint
stores the spec, the preprocessing state and the raw weights.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic  b"SEATRK01"
    4 bytes   manifest length in bytes (uint32)
    n bytes   UTF-8 JSON manifest
    rest      float32 tensors, concatenated in manifest order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LabelMap, ScalerParams
from .errors import (CheckpointError, CheckpointLayoutError, CheckpointTruncatedError,
                     CheckpointVersionError, DimensionError)
from .layers import Dense, Dropout, Layer, layer_from_descriptor
from .tensor import FLOAT, Rng

ARCHITECTURES = ("cnn-lstm", "lstm", "cnn", "ann")


@dataclass
class ModelSpec:
    name: str
    input_shape: tuple
    class_count: int
    layers: list = field(default_factory=list)
    seed: int = 0

    def to_dict(self) -> dict:
        return {"name": self.name, "input_shape": list(self.input_shape),
                "class_count": self.class_count, "layers": self.layers, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(name=d["name"], input_shape=tuple(d["input_shape"]),
                   class_count=int(d["class_count"]), layers=list(d["layers"]),
                   seed=int(d.get("seed", 0)))


class Sequential:
    """A stack of layers ending in a softmax :class:`~seatrack.layers.Dense`."""

    def __init__(self, spec: ModelSpec, init: bool = True, dtype=FLOAT):
        self.spec = spec
        rng = Rng(spec.seed) if init else None
        self.layers: list[Layer] = [layer_from_descriptor(d, rng=rng, dtype=dtype) for d in spec.layers]
        head = self.layers[-1] if self.layers else None
        if not isinstance(head, Dense) or head.activation != "softmax":
            raise ValueError("model must end in a softmax dense layer")
        shapes = self.output_shapes()
        if shapes[-1] != (spec.class_count,):
            raise DimensionError(f"head emits {shapes[-1]}, expected ({spec.class_count},)")

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def class_count(self) -> int:
        return self.spec.class_count

    def output_shapes(self) -> list[tuple]:
        shape = tuple(self.spec.input_shape)
        out = []
        for layer in self.layers:
            shape = layer.output_shape(shape)
            out.append(shape)
        return out

    def param_counts(self) -> list[int]:
        return [layer.param_count for layer in self.layers]

    @property
    def param_count(self) -> int:
        return sum(self.param_counts())

    def summary(self) -> list[tuple[str, tuple, int]]:
        return [(layer.kind, shape, layer.param_count)
                for layer, shape in zip(self.layers, self.output_shapes())]

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{k}.{name}": p for k, layer in enumerate(self.layers) for name, p in layer.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{k}.{name}": layer.grads[name]
                for k, layer in enumerate(self.layers) for name in layer.params}

    def load_params(self, tensors: dict[str, np.ndarray]) -> None:
        for k, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                t = tensors[f"{k}.{name}"]
                if t.shape != p.shape:
                    raise DimensionError(f"{k}.{name}: expected {p.shape}, got {t.shape}")
                layer.params[name] = np.array(t, dtype=p.dtype)

    def astype(self, dtype) -> None:
        for layer in self.layers:
            layer.astype(dtype)

    def forward(self, x: np.ndarray, training: bool = False, rng: Rng | None = None) -> np.ndarray:
        expected = tuple(self.spec.input_shape)
        if x.ndim != len(expected) + 1 or x.shape[1:] != expected:
            raise DimensionError(f"{self.name} expects [B, {', '.join(map(str, expected))}], got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, grad_probs: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad_probs = layer.backward(grad_probs)
        return grad_probs

    def backward_logits(self, grad_logits: np.ndarray) -> np.ndarray:
        """Backpropagate a gradient taken w.r.t. the head's logits (fused softmax + loss)."""
        g = self.layers[-1].backward_logits(grad_logits)
        for layer in reversed(self.layers[:-1]):
            g = layer.backward(g)
        return g

    def predict(self, features: np.ndarray, batch_size: int = 1024):
        """Inference-mode scoring.

        Returns ``(probs, labels, confidences)``; ties in the argmax go to the
        lowest class index.
        """
        features = np.asarray(features, dtype=self.layers[-1].params["weight"].dtype)
        expected = tuple(self.spec.input_shape)
        if features.ndim == len(expected) and expected[-1] == 1:
            features = features[..., None]
        if features.shape[1:] != expected:
            raise DimensionError(f"predict expects [B, {', '.join(map(str, expected))}], got {features.shape}")
        n = features.shape[0]
        if n == 0:
            return (np.zeros((0, self.class_count), dtype=FLOAT), np.zeros(0, dtype=np.int64),
                    np.zeros(0, dtype=FLOAT))
        chunks = [self.forward(features[s:s + batch_size]) for s in range(0, n, batch_size)]
        probs = np.concatenate(chunks, axis=0)
        for layer in self.layers:
            layer._cache = None
        labels = probs.argmax(axis=1)  # first maximum wins
        conf = probs[np.arange(n), labels]
        return probs, labels.astype(np.int64), conf


def _dense_head(in_features: int, class_count: int) -> dict:
    return {"kind": "dense", "in_features": in_features, "units": class_count, "activation": "softmax"}


def build_cnn_lstm(class_count: int = 23, seed: int = 0, *, input_length: int = 4, filters: int = 32,
                   kernel: int = 5, stride: int = 3, units: int = 32, dropout: float = 0.5,
                   conv_activation: str = "relu", peephole_output_gate: bool = False) -> Sequential:
    """Conv1d -> LSTM (sequences) -> Dropout -> LSTM (last state) -> Dropout -> softmax."""
    if class_count < 2:
        raise ValueError("class_count must be at least 2")
    layers = [
        {"kind": "conv1d", "in_channels": 1, "filters": filters, "kernel": kernel, "stride": stride,
         "activation": conv_activation},
        {"kind": "lstm", "in_channels": filters, "units": units, "return_sequences": True,
         "peephole_output_gate": peephole_output_gate},
        {"kind": "dropout", "rate": dropout},
        {"kind": "lstm", "in_channels": units, "units": units, "return_sequences": False,
         "peephole_output_gate": peephole_output_gate},
        {"kind": "dropout", "rate": dropout},
        _dense_head(units, class_count),
    ]
    return Sequential(ModelSpec("cnn-lstm", (input_length, 1), class_count, layers, seed))


def build_lstm(class_count: int, seed: int = 0, *, input_length: int = 4, units: int = 32,
               dropout: float = 0.5) -> Sequential:
    layers = [
        {"kind": "lstm", "in_channels": 1, "units": units, "return_sequences": True,
         "peephole_output_gate": False},
        {"kind": "dropout", "rate": dropout},
        {"kind": "lstm", "in_channels": units, "units": units, "return_sequences": False,
         "peephole_output_gate": False},
        {"kind": "dropout", "rate": dropout},
        _dense_head(units, class_count),
    ]
    return Sequential(ModelSpec("lstm", (input_length, 1), class_count, layers, seed))


def build_cnn(class_count: int, seed: int = 0, *, input_length: int = 4, filters: int = 32,
              kernel: int = 5, stride: int = 3, hidden: int = 32, dropout: float = 0.5) -> Sequential:
    out_len = (input_length - 1) // stride + 1
    layers = [
        {"kind": "conv1d", "in_channels": 1, "filters": filters, "kernel": kernel, "stride": stride,
         "activation": "relu"},
        {"kind": "flatten"},
        {"kind": "dense", "in_features": out_len * filters, "units": hidden, "activation": "relu"},
        {"kind": "dropout", "rate": dropout},
        _dense_head(hidden, class_count),
    ]
    return Sequential(ModelSpec("cnn", (input_length, 1), class_count, layers, seed))


def build_ann(class_count: int, seed: int = 0, *, input_length: int = 4,
              hidden: tuple = (64, 32)) -> Sequential:
    layers = [{"kind": "flatten"}]
    width = input_length
    for h in hidden:
        layers.append({"kind": "dense", "in_features": width, "units": h, "activation": "relu"})
        width = h
    layers.append(_dense_head(width, class_count))
    return Sequential(ModelSpec("ann", (input_length, 1), class_count, layers, seed))


def build_baselines(class_count: int, seed: int = 0) -> dict[str, Sequential]:
    if class_count < 2:
        raise ValueError("class_count must be at least 2")
    return {"ann": build_ann(class_count, seed), "cnn": build_cnn(class_count, seed),
            "lstm": build_lstm(class_count, seed)}


def build_model(name: str, class_count: int, seed: int = 0, **kwargs) -> Sequential:
    builders = {"cnn-lstm": build_cnn_lstm, "lstm": build_lstm, "cnn": build_cnn, "ann": build_ann}
    if name not in builders:
        raise ValueError(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}")
    return builders[name](class_count, seed, **kwargs)


def has_dropout(model: Sequential) -> bool:
    return any(isinstance(layer, Dropout) for layer in model.layers)


# -- checkpoints ---------------------------------------------------------------

MAGIC = b"SEATRK01"
MAGIC_PREFIX = b"SEATRK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI")


@dataclass
class Checkpoint:
    spec: ModelSpec
    tensors: dict[str, np.ndarray]
    scaler: ScalerParams | None = None
    label_map: LabelMap | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Sequential, scaler=None, label_map=None, meta=None) -> "Checkpoint":
        tensors = {k: np.array(v, dtype=FLOAT) for k, v in model.named_params().items()}
        return cls(model.spec, tensors, scaler, label_map, dict(meta or {}))

    def to_model(self) -> Sequential:
        model = Sequential(self.spec, init=False)
        model.load_params(self.tensors)
        return model


def to_bytes(ckpt: Checkpoint) -> bytes:
    entries, offset, blobs = [], 0, []
    for name, t in ckpt.tensors.items():
        raw = np.ascontiguousarray(t, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": ckpt.spec.to_dict(),
        "scaler": ckpt.scaler.to_dict() if ckpt.scaler is not None else None,
        "label_map": list(ckpt.label_map.classes) if ckpt.label_map is not None else None,
        "meta": ckpt.meta,
        "tensors": entries,
        "payload_bytes": offset,
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, len(text)) + text + b"".join(blobs)


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < _HEADER.size:
        if blob[:len(MAGIC_PREFIX)] != MAGIC_PREFIX[:len(blob)]:
            raise CheckpointVersionError("not a seatrack checkpoint")
        raise CheckpointTruncatedError(f"file is {len(blob)} bytes, shorter than the header")
    magic, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        if magic.startswith(MAGIC_PREFIX):
            raise CheckpointVersionError(f"unsupported checkpoint version {magic[6:]!r}")
        raise CheckpointVersionError("not a seatrack checkpoint")
    body_start = _HEADER.size + mlen
    if len(blob) < body_start:
        raise CheckpointTruncatedError("manifest cut short")
    try:
        manifest = json.loads(blob[_HEADER.size:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointLayoutError(f"manifest unreadable: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported manifest version {manifest.get('format_version')}")
    payload = blob[body_start:]
    declared = manifest["payload_bytes"]
    if len(payload) < declared:
        raise CheckpointTruncatedError(f"payload has {len(payload)} of {declared} bytes")
    if len(payload) > declared:
        raise CheckpointLayoutError(f"{len(payload) - declared} trailing bytes after payload")

    spec = ModelSpec.from_dict(manifest["spec"])
    expected = Sequential(spec, init=False).named_params()
    tensors = {}
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise CheckpointLayoutError(f"unexpected tensor {name}")
        if shape != expected[name].shape:
            raise CheckpointLayoutError(f"{name}: manifest shape {shape} != model shape {expected[name].shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if entry["nbytes"] != nbytes or entry["offset"] + nbytes > declared:
            raise CheckpointLayoutError(f"{name}: byte range does not match its shape")
        raw = payload[entry["offset"]:entry["offset"] + nbytes]
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(FLOAT).reshape(shape)
    missing = set(expected) - set(tensors)
    if missing:
        raise CheckpointLayoutError(f"missing tensors: {', '.join(sorted(missing))}")
    tensors = {name: tensors[name] for name in expected}
    scaler = ScalerParams.from_dict(manifest["scaler"]) if manifest.get("scaler") else None
    label_map = LabelMap(tuple(manifest["label_map"])) if manifest.get("label_map") else None
    return Checkpoint(spec, tensors, scaler, label_map, manifest.get("meta") or {})


def save(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(blob)
