"""Binary cross-entropy, Adam, early-stopped training, and evaluation metrics."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .nn import EncodedHistory

log = logging.getLogger(__name__)

P_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    max_encounters: int = 200

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must all be >= 1")


def bce_loss(probabilities, labels):
    """Mean binary cross-entropy for labels in {+1, -1}; probabilities clamped to [1e-12, 1 - 1e-12]."""
    p = ad.as_tensor(probabilities)
    y = (np.asarray(labels, dtype=float) + 1.0) / 2.0
    if p.shape != y.shape:
        raise ad.ShapeError(f"bce_loss: probabilities {p.shape} and labels {y.shape} differ in length")
    pc = ad.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    ll = ad.log(pc) * y + ad.log(1.0 - pc) * (1.0 - y)
    return ll.sum() * (-1.0 / max(len(y), 1))


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    curve: list  # (epoch, train_loss, val_loss)
    best_epoch: int
    best_val_loss: float
    stopped_early: bool
    best_params: dict = field(repr=False, default_factory=dict)


def _encode_all(model, instances):
    xs, ys = [], []
    for inst in instances:
        if isinstance(inst, tuple):
            x, y = inst
        else:
            x, y = inst.prefix, inst.label
        xs.append(x if isinstance(x, EncodedHistory) else model.encode(x))
        ys.append(y)
    return xs, np.array(ys, dtype=float)


def dataset_loss(model, xs, ys, batch_size=256) -> float:
    total = 0.0
    for i in range(0, len(xs), batch_size):
        p = model.forward_batch(xs[i:i + batch_size])
        total += bce_loss(p, ys[i:i + batch_size]).item() * len(p.data)
    return total / len(xs)


def train(model, train_set, validation_set, config: TrainConfig, on_epoch=None) -> TrainResult:
    """Adam on shuffled mini-batches with early stopping on validation loss.

    The model is left holding the parameters of the best validation epoch.
    """
    if not train_set or not validation_set:
        raise ValueError("training and validation sets must be non-empty")
    xs, ys = _encode_all(model, train_set)
    vx, vy = _encode_all(model, validation_set)
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params.values(), config.lr, (config.beta1, config.beta2), config.eps)
    best = {n: p.data.copy() for n, p in model.params.items()}
    best_val, best_epoch, bad = np.inf, 0, 0
    curve = []
    stopped = False
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(xs))
        seen, total = 0, 0.0
        for b, start in enumerate(range(0, len(xs), config.batch_size)):
            idx = order[start:start + config.batch_size]
            model.zero_grad()
            with ad.Tape():
                p = model.forward_batch([xs[i] for i in idx])
                loss = bce_loss(p, ys[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            ad.backward(loss)
            opt.step()
            total += value * len(idx)
            seen += len(idx)
        train_loss = total / seen
        val_loss = dataset_loss(model, vx, vy, config.batch_size)
        curve.append((epoch, train_loss, val_loss))
        log.info("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val, best_epoch, bad = val_loss, epoch, 0
            best = {n: p.data.copy() for n, p in model.params.items()}
        else:
            bad += 1
            if bad >= config.patience:
                stopped = True
                break
    for n, p in model.params.items():
        p.data[...] = best[n]
    return TrainResult(curve, best_epoch, float(best_val), stopped, best)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float | None
    recall: float | None
    auc: float | None
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def table(self) -> str:
        def fmt(x):
            return "undefined" if x is None else f"{x:.4f}"

        rows = [("accuracy", fmt(self.accuracy)), ("precision", fmt(self.precision)),
                ("recall", fmt(self.recall)), ("auc", fmt(self.auc)),
                ("TP/FP/TN/FN", f"{self.tp}/{self.fp}/{self.tn}/{self.fn}")]
        return "\n".join(f"{k:<12} {v}" for k, v in rows)


def roc_auc(scores, labels):
    """Mann-Whitney AUC: P(positive outscores negative), ties count one half.

    ``None`` when only one class is present.
    """
    scores = np.asarray(scores, dtype=float)
    pos = np.asarray(labels) > 0
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metrics_from_scores(scores, labels, threshold=0.5) -> MetricsReport:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if len(scores) == 0:
        raise ValueError("cannot evaluate an empty test set")
    pred = scores >= threshold
    actual = labels > 0
    tp = int(np.sum(pred & actual))
    fp = int(np.sum(pred & ~actual))
    tn = int(np.sum(~pred & ~actual))
    fn = int(np.sum(~pred & actual))
    return MetricsReport(
        accuracy=(tp + tn) / len(scores),
        precision=tp / (tp + fp) if tp + fp else None,
        recall=tp / (tp + fn) if tp + fn else None,
        auc=roc_auc(scores, labels),
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def evaluate(model, test_set, threshold=0.5, batch_size=256) -> MetricsReport:
    xs, ys = _encode_all(model, test_set)
    return metrics_from_scores(model.predict_proba(xs, batch_size), ys, threshold)
