"""Loss, optimizer, training loop and the finite-difference gradient checker."""

from __future__ import annotations

import copy
import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, NumericError
from .models import Checkpoint, Sequential
from .tensor import FLOAT, Rng

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


class ClampWarning(RuntimeWarning):
    """A predicted probability at the true class was clamped before the log."""


def one_hot(labels: np.ndarray, classes: int, dtype=FLOAT) -> np.ndarray:
    out = np.zeros((len(labels), classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def cross_entropy(pred: np.ndarray, truth: np.ndarray):
    """Mean categorical cross-entropy and its gradient w.r.t. ``pred``.

    Probabilities at the true class are clamped to ``1e-12`` (with a
    :class:`ClampWarning`) so the loss stays finite.
    """
    if pred.shape != truth.shape:
        raise ValueError(f"pred {pred.shape} and truth {truth.shape} differ")
    batch = pred.shape[0]
    p64 = pred.astype(np.float64)
    at_true = (p64 * truth).sum(axis=1)
    low = at_true < LOG_CLAMP
    if low.any():
        warnings.warn(f"clamped {int(low.sum())} true-class probabilities to {LOG_CLAMP}", ClampWarning,
                      stacklevel=2)
    safe = np.maximum(p64, LOG_CLAMP)
    loss = float(-(truth * np.log(safe)).sum() / batch)
    grad = (-truth / safe / batch).astype(pred.dtype)
    return loss, grad


def softmax_cross_entropy_grad(probs: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. the logits feeding a softmax: ``(p - y) / B``."""
    return (probs - truth) / probs.dtype.type(probs.shape[0])


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place. Nothing changes if any gradient is non-finite."""
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            p = params[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            m_hat = m / p.dtype.type(corr1)
            v_hat = v / p.dtype.type(corr2)
            p -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)


@dataclass
class TrainConfig:
    batch_size: int = 100
    epochs: int = 100
    seed: int = 0
    shuffle: bool = True
    loss: str = "categorical_cross_entropy"
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss != "categorical_cross_entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainLog:
    epochs: list[EpochLog] = field(default_factory=list)
    steps: int = 0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("epoch", "train_loss", "train_acc", "val_loss", "val_acc"))
            for e in self.epochs:
                w.writerow((e.epoch, repr(e.train_loss), repr(e.train_acc), repr(e.val_loss), repr(e.val_acc)))

    @property
    def last(self) -> EpochLog:
        return self.epochs[-1]


def _xy(data):
    if hasattr(data, "model_input"):
        return data.model_input().astype(FLOAT), np.asarray(data.labels, dtype=np.int64)
    x, y = data
    return np.asarray(x, dtype=FLOAT), np.asarray(y, dtype=np.int64)


def _batch_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    p_true = probs[np.arange(len(labels)), labels].astype(np.float64)
    low = p_true < LOG_CLAMP
    if low.any():
        warnings.warn(f"clamped {int(low.sum())} true-class probabilities to {LOG_CLAMP}", ClampWarning,
                      stacklevel=3)
    return float(-np.log(np.maximum(p_true, LOG_CLAMP)).mean())


def evaluate_loss(model: Sequential, x: np.ndarray, y: np.ndarray, batch_size: int = 1024):
    """Inference-mode (mean loss, accuracy); NaNs for an empty set."""
    if len(y) == 0:
        return math.nan, math.nan
    probs, labels, _ = model.predict(x, batch_size=batch_size)
    return _batch_loss(probs, y), float((labels == y).mean())


def fit(model: Sequential, train_set, val_set=None, config: TrainConfig | None = None, *,
        scaler=None, label_map=None, progress=None):
    """Train ``model`` in place with Adam on mini-batches.

    ``train_set``/``val_set`` are :class:`~seatrack.data.Dataset` objects or
    ``(x, y)`` pairs. Returns ``(Checkpoint, TrainLog)``. Dropout is active
    only inside this loop.
    """
    config = config or TrainConfig()
    x, y = _xy(train_set)
    if len(y) == 0:
        raise ValueError("training set is empty")
    if y.max() >= model.class_count or y.min() < 0:
        raise ValueError(f"labels must lie in [0, {model.class_count})")
    xv, yv = _xy(val_set) if val_set is not None else (x[:0], y[:0])

    rng = Rng(config.seed)
    shuffle_rng, dropout_rng = rng.spawn(), rng.spawn()
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    params = model.named_params()
    targets = one_hot(y, model.class_count)
    n = len(y)
    log_ = TrainLog()

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            probs = model.forward(x[idx], training=True, rng=dropout_rng)
            truth = targets[idx]
            loss = _batch_loss(probs, y[idx])
            if not math.isfinite(loss) or not np.isfinite(probs).all():
                raise DivergenceError(epoch, b, loss if math.isfinite(loss) else math.nan)
            model.backward_logits(softmax_cross_entropy_grad(probs, truth))
            try:
                opt.step(params, model.named_grads())
            except NumericError as exc:
                raise DivergenceError(epoch, b, math.nan) from exc
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == y[idx]).sum())
            log_.steps += 1
        val_loss, val_acc = evaluate_loss(model, xv, yv)
        entry = EpochLog(epoch, loss_sum / n, correct / n, val_loss, val_acc)
        log_.epochs.append(entry)
        log.info("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f", epoch, entry.train_loss,
                 entry.train_acc, val_loss, val_acc)
        if progress is not None:
            progress(entry)
    meta = {"epochs": config.epochs, "batch_size": config.batch_size, "learning_rate": config.learning_rate,
            "train_seed": config.seed, "steps": log_.steps}
    return Checkpoint.from_model(model, scaler, label_map, meta), log_


# -- gradient checking ------------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self) -> list[str]:
        return [f"{name:<16} rel_err={err:.3e}" for name, err in self.errors.items()]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / (||a|| + ||n||)``; 0 when both vanish."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def grad_check(fragment, x: np.ndarray, tolerance: float = 1e-4, *, labels: np.ndarray | None = None,
               training: bool = False, seed: int = 0, step: float = 1e-5, backward=None) -> GradCheckReport:
    """Compare analytic gradients with central differences in float64.

    ``fragment`` is a :class:`Layer` or a :class:`Sequential`. Layers are
    scored by ``sum(out * R)`` with a fixed random ``R``; models by the mean
    cross-entropy against ``labels`` (random when omitted). With ``training``
    the dropout masks are redrawn from ``seed`` on every evaluation so they
    stay identical. ``backward(fragment, grad)`` overrides the analytic pass
    (used to test the checker itself); it receives the float64 working copy.
    """
    frag = copy.deepcopy(fragment)
    frag.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    is_model = isinstance(frag, Sequential)
    layers = frag.layers if is_model else [frag]
    proj_rng = Rng(seed + 1)

    def run(inp):
        return frag.forward(inp, training=training, rng=Rng(seed))

    out = run(x)
    if is_model:
        if labels is None:
            labels = proj_rng.integers(0, frag.class_count, size=x.shape[0])
        truth = one_hot(np.asarray(labels), frag.class_count, dtype=np.float64)

        def loss_of(o):
            return float(-(truth * np.log(o)).sum() / o.shape[0])

        seed_grad = softmax_cross_entropy_grad(out, truth)
        do_backward = frag.backward_logits
    else:
        proj = proj_rng.normal(out.shape, dtype=np.float64)

        def loss_of(o):
            return float((o * proj).sum())

        seed_grad = proj
        do_backward = frag.backward

    grad_x = backward(frag, seed_grad) if backward is not None else do_backward(seed_grad)
    analytic = {}
    for k, layer in enumerate(layers):
        for name in layer.params:
            key = f"{k}.{name}" if is_model else name
            analytic[key] = (layer, name, np.array(layer.grads[name]))

    errors = {}
    for key, (layer, name, a) in analytic.items():
        p = layer.params[name]
        num = np.zeros_like(p)
        flat, nflat = p.reshape(-1), num.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            h = step * max(1.0, abs(orig))
            flat[j] = orig + h
            lp = loss_of(run(x))
            flat[j] = orig - h
            lm = loss_of(run(x))
            flat[j] = orig
            nflat[j] = (lp - lm) / (2 * h)
        errors[key] = relative_error(a, num)

    num_x = np.zeros_like(x)
    fx, nfx = x.reshape(-1), num_x.reshape(-1)
    for j in range(fx.size):
        orig = fx[j]
        h = step * max(1.0, abs(orig))
        fx[j] = orig + h
        lp = loss_of(run(x))
        fx[j] = orig - h
        lm = loss_of(run(x))
        fx[j] = orig
        nfx[j] = (lp - lm) / (2 * h)
    errors["input"] = relative_error(grad_x, num_x)
    for layer in layers:
        layer._cache = None
    return GradCheckReport(errors, tolerance)
