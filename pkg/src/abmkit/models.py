"""Classifiers over sampled snippets: ABM models and the pooling/MLP baselines.

Every model takes inputs ``[B, N, K*C_raw]`` (N segments, a K-frame snippet
per segment flattened into channels) and returns logits ``[B, classes]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as tn
from .abm import (AbmStack, Linear, VariantSpec, adjacent_concat, build_top_stack, classify, layer_forward,
                  window_concat)
from .surgery import AUXILIARY_PARAMS, TwoLayerNet, build_auxiliary_branch, expand_temporal
from .tensor import Tensor


@dataclass
class Block:
    """Two linear layers with a relu between them (the backbone stand-in unit)."""

    l1: Linear
    l2: Linear

    @classmethod
    def from_net(cls, net: TwoLayerNet, requires_grad: bool = True) -> "Block":
        mk = lambda v: Tensor(v, requires_grad=requires_grad)  # noqa: E731
        return cls(Linear(mk(net.w1), mk(net.b1)), Linear(mk(net.w2), mk(net.b2)))

    def to_net(self) -> TwoLayerNet:
        return TwoLayerNet(self.l1.w.data, self.l1.b.data, self.l2.w.data, self.l2.b.data)

    def __call__(self, x: Tensor) -> Tensor:
        return self.l2(tn.relu(self.l1(x)))

    def parameters(self) -> dict[str, Tensor]:
        return {"w1": self.l1.w, "b1": self.l1.b, "w2": self.l2.w, "b2": self.l2.b}


def duplicate_input(net: TwoLayerNet, K: int) -> TwoLayerNet:
    """Copy the first-layer weights K times so the net reads a K-frame snippet."""
    return TwoLayerNet(np.tile(net.w1, (1, K)), net.b1.copy(), net.w2.copy(), net.b2.copy())


class Model:
    """Shared plumbing: parameter dicts, no-grad prediction, checkpoints."""

    kind = "model"

    def parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def logits(self, x) -> Tensor:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    def decay_exempt(self) -> set[str]:
        return set()

    def predict(self, x) -> np.ndarray:
        with tn.no_grad():
            return self.logits(x).data

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, t in self.parameters().items():
            t.assign(arrays[k])

    def param_count(self) -> int:
        return sum(t.data.size for t in self.parameters().values())

    def save(self, directory, dtype: str = "f64", extra: dict | None = None) -> Path:
        meta = {"model": self.describe()}
        if extra:
            meta.update(extra)
        return checkpoint.save(directory, self.arrays(), dtype=dtype, extra=meta)


class AbmClassifier(Model):
    """Backbone blocks, an optional ABM stack, and a per-step head averaged over time."""

    kind = "abm"

    def __init__(self, blocks: list[Block], stack: AbmStack | None, head: Linear):
        self.blocks = blocks
        self.stack = stack
        self.head = head

    def features(self, x) -> Tensor:
        h = tn.as_tensor(x)
        for blk in self.blocks:
            h = blk(h)
        return h

    def logits(self, x) -> Tensor:
        h = self.features(x)
        if self.stack is None:
            return tn.mean_over_axis(self.head(h), h.ndim - 2)
        return classify(self.stack, h, self.head)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, blk in enumerate(self.blocks):
            out.update({f"block{i}.{k}": v for k, v in blk.parameters().items()})
        if self.stack is not None:
            out.update({f"stack.{k}": v for k, v in self.stack.parameters().items()})
        out.update({f"head.{k}": v for k, v in self.head.parameters().items()})
        return out

    def decay_exempt(self) -> set[str]:
        if self.stack is None or self.stack.placement != "implanted":
            return set()
        return {f"stack.layer{i}.{k}" for i in range(len(self.stack.layers)) for k in AUXILIARY_PARAMS}

    def describe(self) -> dict:
        return {
            "type": self.kind,
            "blocks": [[b.l1.n_in, b.l1.n_out, b.l2.n_out] for b in self.blocks],
            "stack": None if self.stack is None else self.stack.to_dict(),
            "head": [self.head.n_in, self.head.n_out],
        }


class MeanPoolClassifier(Model):
    """Average every sampled frame, then a linear classifier."""

    kind = "mean-pool"

    def __init__(self, head: Linear, frame_channels: int):
        self.head = head
        self.frame_channels = frame_channels

    def logits(self, x) -> Tensor:
        x = tn.as_tensor(x)
        B, N, W = x.shape
        frames = tn.reshape(x, (B, N * W // self.frame_channels, self.frame_channels))
        return self.head(tn.mean_over_axis(frames, 1))

    def parameters(self) -> dict[str, Tensor]:
        return {f"head.{k}": v for k, v in self.head.parameters().items()}

    def describe(self) -> dict:
        return {"type": self.kind, "frame_channels": self.frame_channels, "head": [self.head.n_in, self.head.n_out]}


class ConcatMLP(Model):
    """Flatten all sampled frames and apply a two-layer MLP."""

    kind = "concat-mlp"

    def __init__(self, l1: Linear, l2: Linear):
        self.l1 = l1
        self.l2 = l2

    def logits(self, x) -> Tensor:
        x = tn.as_tensor(x)
        flat = tn.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))
        return self.l2(tn.relu(self.l1(flat)))

    def parameters(self) -> dict[str, Tensor]:
        return {"l1.w": self.l1.w, "l1.b": self.l1.b, "l2.w": self.l2.w, "l2.b": self.l2.b}

    def describe(self) -> dict:
        return {"type": self.kind, "l1": [self.l1.n_in, self.l1.n_out], "l2": [self.l2.n_in, self.l2.n_out]}


# ---------------------------------------------------------------------------
# builders


def build_top_model(variant: VariantSpec, depth: int, in_width: int, n_classes: int, *,
                    rng: np.random.Generator, backbone: list[TwoLayerNet] | None = None,
                    width: int = 32, rank: int | None = None, hidden: int = 64,
                    calibrate_on: np.ndarray | None = None, train_backbone: bool = False) -> AbmClassifier:
    """Backbone (pretrained nets or random) followed by ``depth`` ABM layers on top.

    The backbone is frozen unless ``train_backbone``. Pass a batch of inputs
    as ``calibrate_on`` to rescale the random ABM init (see ``calibrate_stack``).
    """
    if backbone is None:
        backbone = [TwoLayerNet.random(in_width, hidden, width, rng=rng)]
    blocks = [Block.from_net(n, requires_grad=train_backbone) for n in backbone]
    feat = backbone[-1].out_features
    stack = build_top_stack(variant, feat, depth, rng=rng, D=width, R=rank) if depth > 0 else None
    head = Linear.random(width if depth > 0 else feat, n_classes, rng=rng)
    model = AbmClassifier(blocks, stack, head)
    if calibrate_on is not None:
        calibrate_stack(model, calibrate_on)
    return model


def calibrate_stack(model: AbmClassifier, x: np.ndarray) -> None:
    """Data-dependent rescaling of a randomly initialised stack.

    The last backbone block is scaled to emit unit-std features; each layer's
    ``a``/``b`` columns are scaled so their projections have unit standard
    deviation on ``x``, and ``u`` so the layer output does too. Products of
    projections otherwise grow geometrically with depth.
    """
    if model.stack is None:
        return
    with tn.no_grad():
        h = model.features(x)
        if model.blocks and h.data.std() > 0:
            last = model.blocks[-1].l2
            std = h.data.std()
            last.w.assign(last.w.data / std)
            last.b.assign(last.b.data / std)
            h = model.features(x)
        for spec, p in model.stack.layers:
            if spec.kind == "C":
                inp = window_concat(h, spec.m)
            elif spec.kind == "A":
                inp = adjacent_concat(h, spec.beta)
            else:
                inp = h
            flat = inp.data.reshape(-1, p.C_a)
            for name in ("a", "b"):
                t = getattr(p, name)
                std = (flat @ t.data).std(axis=0)
                t.assign(t.data / np.where(std > 0, std, 1.0))
            z = layer_forward(spec, p, h)
            std = z.data.std()
            if std > 0:
                p.u.assign(p.u.data / std)
            h = layer_forward(spec, p, h)


def build_implanted_model(variant: VariantSpec, backbone: list[TwoLayerNet], n_classes: int, *,
                          rng: np.random.Generator, temporal_pool_after: int | None = None) -> AbmClassifier:
    """Convert each backbone block into an ABM by surgery, then add a head."""
    layers = []
    for net in backbone:
        p = expand_temporal(build_auxiliary_branch(net), variant, net.in_features)
        layers.append((variant, p))
    stack = AbmStack(layers, "implanted", temporal_pool_after)
    head = Linear.random(stack.out_channels, n_classes, rng=rng)
    return AbmClassifier([], stack, head)


def build_mean_pool(frame_channels: int, n_classes: int, *, rng: np.random.Generator) -> MeanPoolClassifier:
    return MeanPoolClassifier(Linear.random(frame_channels, n_classes, rng=rng), frame_channels)


def build_concat_mlp(in_width: int, n_segments: int, n_classes: int, hidden: int, *,
                     rng: np.random.Generator) -> ConcatMLP:
    n_in = in_width * n_segments
    return ConcatMLP(Linear.random(n_in, hidden, rng=rng), Linear.random(hidden, n_classes, rng=rng))


def _placeholder(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def load_model(manifest_path) -> Model:
    """Rebuild any model saved with ``Model.save``."""
    arrays, manifest = checkpoint.load(manifest_path)
    desc = manifest["model"]
    kind = desc["type"]
    if kind == "mean-pool":
        n_in, n_out = desc["head"]
        model: Model = MeanPoolClassifier(Linear(_placeholder((n_out, n_in)), _placeholder(n_out)),
                                          desc["frame_channels"])
    elif kind == "concat-mlp":
        (i1, o1), (i2, o2) = desc["l1"], desc["l2"]
        model = ConcatMLP(Linear(_placeholder((o1, i1)), _placeholder(o1)),
                          Linear(_placeholder((o2, i2)), _placeholder(o2)))
    elif kind == "abm":
        blocks = [Block(Linear(_placeholder((h, c)), _placeholder(h)), Linear(_placeholder((d, h)), _placeholder(d)))
                  for c, h, d in desc["blocks"]]
        stack = None
        if desc["stack"] is not None:
            sub = {k[len("stack."):]: v for k, v in arrays.items() if k.startswith("stack.")}
            stack = AbmStack.from_dict(desc["stack"], sub)
        n_in, n_out = desc["head"]
        model = AbmClassifier(blocks, stack, Linear(_placeholder((n_out, n_in)), _placeholder(n_out)))
    else:
        raise ValueError(f"unknown model type {kind!r} in {manifest_path}")
    model.load_arrays(arrays)
    return model


def describe_json(model: Model) -> str:
    return json.dumps(model.describe(), sort_keys=True)
