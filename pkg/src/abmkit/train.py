"""SGD training and evaluation over sampled snippets."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .data import Dataset
from .models import Block, Model
from .sampler import SamplerSpec, aggregate_shifted, center_indices, gather, train_indices
from .surgery import TwoLayerNet
from .tensor import NonFiniteError

logger = logging.getLogger(__name__)

MOMENTUM = 0.9


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    momentum: float = MOMENTUM
    epochs: int = 20
    batch_size: int = 64
    weight_decay: float = 0.0
    decay_fractions: tuple[float, float] = (0.6, 0.8)
    seed: int = 0

    def __post_init__(self):
        if self.momentum != MOMENTUM:
            raise ValueError(f"momentum is fixed at {MOMENTUM}")
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1 or self.weight_decay < 0:
            raise ValueError("lr >= 0, epochs >= 1, batch_size >= 1, weight_decay >= 0 required")
        if len(self.decay_fractions) != 2:
            raise ValueError("two lr decay points are required")

    @property
    def decay_epochs(self) -> tuple[int, ...]:
        return tuple(int(round(f * self.epochs)) for f in self.decay_fractions)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch: divided by 10 at each decay epoch."""
        return self.lr * 0.1 ** sum(epoch >= d for d in self.decay_epochs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decay_fractions"] = list(self.decay_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        d = dict(d)
        if "decay_fractions" in d:
            d["decay_fractions"] = tuple(d["decay_fractions"])
        return cls(**d)


class SGD:
    """SGD with heavy-ball momentum: v = mu*v + g + wd*p; p -= lr*v."""

    def __init__(self, params: dict[str, tn.Tensor], momentum: float = MOMENTUM, weight_decay: float = 0.0,
                 decay_exempt: set[str] = frozenset()):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay_exempt = set(decay_exempt)
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float) -> None:
        for k, p in self.params.items():
            if not p.requires_grad:
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay and k not in self.decay_exempt:
                g = g + self.weight_decay * p.data
            self.velocity[k] = self.momentum * self.velocity[k] + g
            p.assign(p.data - lr * self.velocity[k])


@dataclass
class EvalResult:
    top1: float
    top5: float | None
    loss: float


@dataclass
class TrainResult:
    best_val_top1: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None
    best_arrays: dict = field(default_factory=dict)


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    if len(labels) == 0:
        return 0.0
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float((top == labels[:, None]).any(axis=1).mean())


def mean_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def predict_dataset(model: Model, ds: Dataset, sampler: SamplerSpec, shifted: bool = False,
                    batch_size: int = 256) -> np.ndarray:
    L = ds.videos.shape[1]
    idx = center_indices(L, sampler)
    out = []
    for s in range(0, len(ds), batch_size):
        vids = ds.videos[s:s + batch_size]
        if shifted:
            out.append(aggregate_shifted(model.predict, vids, sampler))
        else:
            out.append(model.predict(gather(vids, idx, sampler)))
    return np.concatenate(out) if out else np.zeros((0, 0))


def evaluate(model: Model, ds: Dataset, sampler: SamplerSpec, shifted: bool = False,
             batch_size: int = 256) -> EvalResult:
    """Top-1 / top-5 accuracy; top-5 only for 10 or more classes."""
    logits = predict_dataset(model, ds, sampler, shifted, batch_size)
    n_cls = logits.shape[1]
    top5 = topk_accuracy(logits, ds.labels, 5) if n_cls >= 10 else None
    return EvalResult(topk_accuracy(logits, ds.labels, 1), top5, mean_cross_entropy(logits, ds.labels))


LOG_FIELDS = ("epoch", "split", "top1", "top5", "loss")


def write_log(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in LOG_FIELDS})


def train(model: Model, cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset, sampler: SamplerSpec,
          out_dir: str | Path | None = None) -> TrainResult:
    """Train with SGD; keep (and optionally write) the weights with best val top-1.

    The best weights are loaded back into ``model`` before returning.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    params = model.parameters()
    opt = SGD(params, cfg.momentum, cfg.weight_decay, model.decay_exempt())
    L = train_ds.videos.shape[1]
    n = len(train_ds)
    result = TrainResult(best_val_top1=-1.0, best_epoch=-1)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        frames = train_indices(L, sampler, cfg.seed, epoch, order)
        loss_sum, correct = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            ids = order[s:s + cfg.batch_size]
            x = gather(train_ds.videos[ids], frames[s:s + cfg.batch_size], sampler)
            y = train_ds.labels[ids]
            try:
                logits = model.logits(x)
                loss = tn.softmax_cross_entropy(logits, y)
                opt.zero_grad()
                tn.backward(loss)
                opt.step(lr)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite value at epoch {epoch}, batch {s // cfg.batch_size}, "
                                       f"lr {lr}: {exc}") from exc
            loss_sum += loss.item() * len(ids)
            correct += int((logits.data.argmax(axis=1) == y).sum())
        n_cls = logits.shape[1]
        result.history.append({"epoch": epoch, "split": "train", "top1": correct / n,
                               "top5": None, "loss": loss_sum / n})
        val = evaluate(model, val_ds, sampler)
        result.history.append({"epoch": epoch, "split": "val", "top1": val.top1,
                               "top5": val.top5 if n_cls >= 10 else None, "loss": val.loss})
        logger.info("epoch %d lr %.4g train loss %.4f acc %.4f | val acc %.4f", epoch, lr,
                    loss_sum / n, correct / n, val.top1)
        if val.top1 > result.best_val_top1:
            result.best_val_top1 = val.top1
            result.best_epoch = epoch
            result.best_arrays = model.arrays()
            if out_dir is not None:
                result.checkpoint = model.save(out_dir / "checkpoint",
                                               extra={"epoch": epoch, "val_top1": val.top1})
        if out_dir is not None:
            write_log(out_dir / "metrics.csv", result.history)
    model.load_arrays(result.best_arrays)
    return result


def pretrain_frame_backbone(ds: Dataset, hidden: int, width: int, *, n_blocks: int = 1, steps: int = 400,
                            batch_size: int = 128, lr: float = 0.05, seed: int = 0) -> list[TwoLayerNet]:
    """Train blocks + a throwaway linear head to recognise single frames' prototypes."""
    from .abm import Linear
    from .data import frame_classification_set

    rng = np.random.default_rng([seed, 77])
    C = ds.videos.shape[2]
    n_protos = ds.prototypes.shape[0]
    blocks, c_in = [], C
    for _ in range(n_blocks):
        blocks.append(Block.from_net(TwoLayerNet.random(c_in, hidden, width, rng=rng)))
        c_in = width
    head = Linear.random(width, n_protos, rng=rng)
    params = {}
    for i, b in enumerate(blocks):
        params.update({f"{i}.{k}": v for k, v in b.parameters().items()})
    params.update({f"head.{k}": v for k, v in head.parameters().items()})
    opt = SGD(params)
    x_all, y_all = frame_classification_set(ds, steps * batch_size, rng)
    for step in range(steps):
        x = tn.Tensor(x_all[step * batch_size:(step + 1) * batch_size])
        h = x
        for b in blocks:
            h = b(h)
        loss = tn.softmax_cross_entropy(head(h), y_all[step * batch_size:(step + 1) * batch_size])
        opt.zero_grad()
        tn.backward(loss)
        opt.step(lr if step < 0.8 * steps else lr * 0.1)
    return [b.to_net() for b in blocks]
