"""Finite-difference checks for every ABM variant and a stacked model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .abm import AbmParams, AbmStack, Linear, VariantSpec, classify, layer_forward
from .tensor import Tensor

PARAM_NAMES = ("u", "a", "b", "bias_a", "bias_b", "bias_out")
DEFAULT_CASES = ("G", "S", "C", "A0", "A0.25", "A0.5", "A1", "stack3")


def _variant(case: str) -> VariantSpec:
    if case.startswith("A"):
        return VariantSpec("A", beta=float(case[1:]))
    return VariantSpec(case)


def _random_params(spec: VariantSpec, C: int, D: int, R: int, rng) -> AbmParams:
    w = spec.input_width(C)
    p = AbmParams.random(w, w, D, R, rng=rng, activation="relu")
    arrs = p.arrays()
    # nonzero biases so their gradients are exercised
    arrs["bias_a"] = rng.normal(0, 0.3, R)
    arrs["bias_b"] = rng.normal(0, 0.3, R)
    arrs["bias_out"] = rng.normal(0, 0.3, D)
    return AbmParams.from_arrays(**arrs, activation="relu")


def case_problem(case: str, seed: int, margin: float = 1e-3):
    """(loss function, point tensors) for one case and seed.

    Draws are repeated until every relu input is at least ``margin`` away from
    zero, so central differences never straddle a kink.
    """
    rng = np.random.default_rng([seed, sum(map(ord, case))])
    while True:
        f, points = _draw(case, rng)
        with tn.no_grad(), tn.track_relu_margin() as m:
            f(*points)
        if m[0] >= margin:
            return f, points


def _draw(case: str, rng, B: int = 2, T: int = 5, C: int = 4, D: int = 3, R: int = 3):
    seq = rng.standard_normal((B, T, C))
    if case == "stack3":
        spec = VariantSpec("C")
        layer_params = [_random_params(spec, C if i == 0 else D, D, R, rng) for i in range(3)]
        head_w = rng.normal(0, 0.5, (D, D))
        head_b = rng.normal(0, 0.1, D)
        labels = rng.integers(0, D, B)
        points = [Tensor(seq)] + [Tensor(v) for p in layer_params for v in p.arrays().values()] + \
            [Tensor(head_w), Tensor(head_b)]

        def f(x, *flat):
            layers = []
            for i in range(3):
                vals = dict(zip(PARAM_NAMES, flat[6 * i:6 * i + 6]))
                layers.append((spec, AbmParams(**vals, activation="relu")))
            head = Linear(flat[18], flat[19])
            return tn.softmax_cross_entropy(classify(AbmStack(layers), x, head), labels)

        return f, points

    spec = _variant(case)
    p = _random_params(spec, C, D, R, rng)
    labels = rng.integers(0, D, B)
    points = [Tensor(seq)] + [Tensor(v) for v in p.arrays().values()]

    def f(x, *flat):
        params = AbmParams(**dict(zip(PARAM_NAMES, flat)), activation="relu")
        z = layer_forward(spec, params, x)
        return tn.softmax_cross_entropy(tn.mean_over_axis(z, 1), labels)

    return f, points


@dataclass
class GradcheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    seeds: int = 0
    tol: float = 1e-4
    eps: float = 1e-5

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.errors) and self.max_error < self.tol

    def to_dict(self) -> dict:
        return {"errors": self.errors, "max_error": self.max_error, "passed": self.passed,
                "seeds": self.seeds, "tol": self.tol, "eps": self.eps}


def run_suite(cases=DEFAULT_CASES, seeds: int = 20, eps: float = 1e-5, tol: float = 1e-4) -> GradcheckReport:
    cases = list(cases)
    if not cases or seeds < 1:
        raise ValueError("nothing to check")
    rep = GradcheckReport(seeds=seeds, tol=tol, eps=eps)
    for case in cases:
        worst = 0.0
        for seed in range(seeds):
            f, points = case_problem(case, seed)
            worst = max(worst, tn.grad_check(f, points, eps))
        rep.errors[case] = worst
    return rep
