"""Run configuration: a flat ``key = value`` file. Defaults are the reference hyperparameters.

Unknown keys are fatal. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .models import ARCHITECTURES
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    conv_filters: int = 32
    conv_kernel: int = 5
    conv_stride: int = 3
    conv_activation: str = "relu"
    conv_padding: str = "causal"
    lstm_units: int = 32
    lstm_gate_activation: str = "sigmoid"
    peephole_output_gate: bool = False
    dropout: float = 0.5
    batch_size: int = 100
    loss: str = "categorical_cross_entropy"
    learning_rate: float = 1e-4
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True
    seed: int = 0
    min_obs: int = 50
    max_vessels: int = 30
    vessels: tuple = ()
    split: tuple = (70, 10, 20)
    model: str = "cnn-lstm"
    scenario: str = "small5"
    data: str = ""
    out: str = ""

    def __post_init__(self):
        checks = [
            (self.conv_activation in ("relu", "tanh"), "conv_activation must be relu or tanh"),
            (self.conv_padding == "causal", "only causal conv padding is supported"),
            (self.lstm_gate_activation == "sigmoid", "LSTM gates use sigmoid"),
            (self.loss == "categorical_cross_entropy", "loss must be categorical_cross_entropy"),
            (self.model in ARCHITECTURES, f"model must be one of {', '.join(ARCHITECTURES)}"),
            (0.0 <= self.dropout < 1.0, "dropout must be in [0, 1)"),
            (self.batch_size >= 1 and self.epochs >= 1, "batch_size and epochs must be >= 1"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.min_obs >= 1 and self.max_vessels >= 2, "min_obs >= 1 and max_vessels >= 2 required"),
            (len(self.split) == 3 and sum(self.split) == 100, "split must be three integers summing to 100"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, seed=self.seed, shuffle=self.shuffle,
                           loss=self.loss, learning_rate=self.learning_rate, beta1=self.beta1,
                           beta2=self.beta2, eps=self.eps)

    def model_kwargs(self) -> dict:
        if self.model == "cnn-lstm":
            return {"filters": self.conv_filters, "kernel": self.conv_kernel, "stride": self.conv_stride,
                    "units": self.lstm_units, "dropout": self.dropout, "conv_activation": self.conv_activation,
                    "peephole_output_gate": self.peephole_output_gate}
        if self.model == "lstm":
            return {"units": self.lstm_units, "dropout": self.dropout}
        if self.model == "cnn":
            return {"filters": self.conv_filters, "kernel": self.conv_kernel, "stride": self.conv_stride,
                    "dropout": self.dropout}
        return {}

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _convert(key: str, default, text: str):
    if isinstance(default, bool):
        if text.lower() not in _BOOL:
            raise ValueError
        return _BOOL[text.lower()]
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if key == "split":
        return tuple(int(p) for p in text.replace(",", ":").split(":"))
    if key == "vessels":
        return tuple(v.strip() for v in text.split(",") if v.strip())
    return text


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    defaults = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, getattr(defaults, key), value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if f.name == "split":
            v = ":".join(str(p) for p in v)
        elif f.name == "vessels":
            v = ",".join(v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
