"""Analytic multiply-add counts, cross-checked against an instrumented forward pass."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .abm import AbmParams, VariantSpec
from .models import AbmClassifier, ConcatMLP, MeanPoolClassifier, Model
from .sampler import SamplerSpec


@dataclass
class FlopsReport:
    layers: list[dict] = field(default_factory=list)   # {"name", "multiply_adds", "params"}
    total: int = 0
    params: int = 0
    shifts: int = 1
    instrumented: int | None = None

    @property
    def total_with_shifts(self) -> int:
        return self.total * self.shifts

    def add(self, name: str, madds: int, params: int = 0) -> None:
        self.layers.append({"name": name, "multiply_adds": int(madds), "params": int(params)})
        self.total += int(madds)
        self.params += int(params)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_with_shifts"] = self.total_with_shifts
        return d


def matmul_madds(M: int, K: int, N: int) -> int:
    return M * K * N


def abm_layer_madds(p: AbmParams, T: int) -> int:
    """Two input projections, the Hadamard product and the output projection, per step."""
    return T * (p.C_a * p.R + p.C_b * p.R + p.R + p.R * p.D)


def count_flops(model: Model, sampler: SamplerSpec, input_shape: tuple[int, int]) -> FlopsReport:
    """Per-video multiply-adds for inputs of shape ``[N, width]``."""
    T, width = input_shape
    rep = FlopsReport(shifts=sampler.ST)
    if isinstance(model, AbmClassifier):
        for i, blk in enumerate(model.blocks):
            rep.add(f"block{i}.l1", matmul_madds(T, blk.l1.n_in, blk.l1.n_out), blk.l1.w.data.size + blk.l1.n_out)
            rep.add(f"block{i}.l2", matmul_madds(T, blk.l2.n_in, blk.l2.n_out), blk.l2.w.data.size + blk.l2.n_out)
        if model.stack is not None:
            for i, (spec, p) in enumerate(model.stack.layers):
                rep.add(f"abm{i}.{spec.kind}", abm_layer_madds(p, T), p.param_count())
                if model.stack.temporal_pool_after == i:
                    T //= 2
                    rep.add(f"abm{i}.maxpool", 0)
        h = model.head
        rep.add("head", matmul_madds(T, h.n_in, h.n_out), h.w.data.size + h.n_out)
        rep.add("consensus", h.n_out)
    elif isinstance(model, MeanPoolClassifier):
        rep.add("mean_pool", model.frame_channels)
        h = model.head
        rep.add("head", matmul_madds(1, h.n_in, h.n_out), h.w.data.size + h.n_out)
    elif isinstance(model, ConcatMLP):
        for name, lin in (("l1", model.l1), ("l2", model.l2)):
            rep.add(name, matmul_madds(1, lin.n_in, lin.n_out), lin.w.data.size + lin.n_out)
    else:
        raise TypeError(f"no FLOPs rule for {type(model).__name__}")
    return rep


def instrumented_count(model: Model, input_shape: tuple[int, int]) -> int:
    """Scalar multiplies performed by one forward pass on a single video."""
    x = np.zeros((1, *input_shape))
    with tn.no_grad(), tn.count_multiplies() as counter:
        model.logits(x)
    return counter[0]


def checked_flops(model: Model, sampler: SamplerSpec, input_shape: tuple[int, int]) -> FlopsReport:
    rep = count_flops(model, sampler, input_shape)
    rep.instrumented = instrumented_count(model, input_shape)
    return rep


def abm_a_model(beta: float, C: int, D: int, R: int, n_classes: int, depth: int = 1, *,
                rng: np.random.Generator) -> AbmClassifier:
    """ABM-A stack on raw C-channel features, used for cost sweeps over beta."""
    from .abm import AbmStack, Linear

    spec = VariantSpec("A", beta=beta)
    layers, c_in = [], C
    for _ in range(depth):
        w = spec.input_width(c_in)
        layers.append((spec, AbmParams.random(w, w, D, R, rng=rng)))
        c_in = D
    return AbmClassifier([], AbmStack(layers, "implanted"), Linear.random(D, n_classes, rng=rng))
