"""Mini-batch training, held-out evaluation and checkpoint persistence."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import (CorruptCheckpoint, EmptySplit, HeuristicModelNotTrainable, InvalidSpec, NonFiniteLoss,
                     ShapeMismatch, VersionMismatch)
from .features import Dataset
from .models import Model, predict_array

log = logging.getLogger(__name__)

CKPT_MAGIC = "CACHECAST-CKPT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 5.0
    early_stop_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")


@dataclass
class LossCurve:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.train)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tr, va) in enumerate(zip(self.train, self.val), start=1):
            w.writerow([i, repr(tr), repr(va)])
        return buf.getvalue()


def loss_curve_svg(curve: LossCurve, title: str = "training loss", width: int = 480,
                   height: int = 300) -> str:
    """Minimal standalone SVG line plot of train (blue) and val (orange) loss."""
    pad = 40
    values = [v for v in curve.train + curve.val if math.isfinite(v)]
    if not values:
        raise ValueError("loss curve is empty")
    lo, hi = min(values), max(values)
    span = hi - lo or 1.0
    n = max(len(curve) - 1, 1)

    def points(series):
        return " ".join(f"{pad + i / n * (width - 2 * pad):.2f},"
                        f"{height - pad - (v - lo) / span * (height - 2 * pad):.2f}"
                        for i, v in enumerate(series))

    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{pad}" y="{height - 10}" font-size="10">epoch 1..{len(curve)}, '
        f'loss {lo:.3g}..{hi:.3g}</text>',
        f'<polyline fill="none" stroke="#1f77b4" points="{points(curve.train)}"/>',
        f'<polyline fill="none" stroke="#ff7f0e" points="{points(curve.val)}"/>',
        "</svg>",
    ]) + "\n"


@dataclass(frozen=True)
class Metrics:
    mse: float
    mae: float


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.
    Returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, p in params.items():
            p -= self.lr * grads[name]


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return Sgd(cfg.learning_rate)
    return Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)


def _normalized(model: Model, ds: Dataset) -> np.ndarray:
    return model.norm.apply(ds.X) if model.norm is not None else ds.X


def _split_loss(model: Model, Xn: np.ndarray, y: np.ndarray, sl: slice) -> float:
    # run from window 0 so recurrent state is warm when the split starts
    pred, _ = model.forward(Xn[:, :sl.stop])
    return nn.mse(pred[:, sl], y[:, sl])


def train(model: Model, ds: Dataset, cfg: TrainConfig = TrainConfig()) -> tuple[Model, LossCurve]:
    """Minimize per-step MSE on the train windows; early-stop on val loss.

    Each epoch visits the blocks in a seeded random order, batching
    ``batch_size`` sequences per update (indices sorted inside a batch so the
    gradient sum has a fixed order). Returns a copy holding the parameters of
    the epoch with the lowest validation loss.
    """
    if not model.kind.learned:
        raise HeuristicModelNotTrainable(model.kind.value)
    train_sl = ds.split_slice("train")
    val_sl = ds.split_slice("val")
    model = model.copy()
    if model.norm is None:
        model.norm = ds.norm
    Xn = _normalized(model, ds)
    y = ds.y
    Xtr, ytr = Xn[:, train_sl], y[:, train_sl]

    params = dict(model.named_parameters())
    opt = make_optimizer(cfg)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    curve = LossCurve()
    best, best_val, stale = model.copy(), math.inf, 0
    n = Xtr.shape[0]

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            with np.errstate(invalid="ignore", over="ignore"):  # checked just below
                loss, grads = model.loss_and_grads(Xtr[idx], ytr[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch, f"batch starting at {start}")
            total += loss * idx.size
            clip_global_norm(grads, cfg.grad_clip_norm)
            opt.step(params, grads)
        train_loss = total / n
        val_loss = _split_loss(model, Xn, y, val_sl)
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(epoch, "validation loss")
        curve.train.append(train_loss)
        curve.val.append(val_loss)
        log.debug("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best, best_val, stale = model.copy(), val_loss, 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    return best, curve


def predict_dataset(model: Model, ds: Dataset) -> np.ndarray:
    """(B, T) predictions for every block and window of ``ds``."""
    return predict_array(model, ds.X)


def evaluate(model: Model, ds: Dataset, split: str = "test") -> Metrics:
    """MSE/MAE pooled over every (block, window) pair of ``split``."""
    sl = ds.split_slice(split)
    if ds.y.shape[0] == 0:
        raise EmptySplit("dataset has no blocks")
    pred = predict_array(model, ds.X[:, :sl.stop])[:, sl]
    return metrics_for(pred, ds.y[:, sl])


def metrics_for(pred, truth) -> Metrics:
    return Metrics(nn.mse(pred, truth), nn.mae(pred, truth))


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(model: Model, path: str | os.PathLike, meta: dict | None = None) -> None:
    payload = model.to_payload()
    payload["meta"] = meta or {}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CKPT_MAGIC} v{CKPT_VERSION}\n")
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | os.PathLike, with_meta: bool = False):
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            body = fh.read()
    except UnicodeDecodeError as exc:
        raise CorruptCheckpoint(f"{path}: not a text checkpoint") from exc
    parts = header.split(" ")
    if len(parts) != 2 or parts[0] != CKPT_MAGIC or not parts[1].startswith("v"):
        raise CorruptCheckpoint(f"{path}: missing {CKPT_MAGIC} header")
    if parts[1] != f"v{CKPT_VERSION}":
        raise VersionMismatch(f"{path}: checkpoint version {parts[1]}, expected v{CKPT_VERSION}")
    try:
        payload = json.loads(body)
        model = Model.from_payload(payload)
    except (ValueError, KeyError, TypeError, ShapeMismatch, InvalidSpec) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    if with_meta:
        return model, payload.get("meta", {})
    return model
