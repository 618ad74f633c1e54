"""Turning a pretrained two-layer network into an ABM without changing its output.

The first layer becomes the ``a`` projection, the second layer becomes ``u``,
and a new auxiliary branch (``b = 0``, ``bias_b = 1``) multiplies the hidden
units by exactly one. Temporal expansion widens ``a``/``b`` with zero rows
for the neighbour-frame channels.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import checkpoint
from .abm import AbmParams, VariantSpec, abm_a_forward, abm_c_forward, abm_g_forward
from .tensor import DimensionError, Tensor

IDENTITY_TOL = 1e-6
MIN_PROBES = 100
# parameter names of the auxiliary branch; kept out of weight decay
AUXILIARY_PARAMS = ("b", "bias_b")


@dataclass
class TwoLayerNet:
    """forward(x) = w2 . relu(w1 x + b1) + b2 along the last axis."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.w1, self.b1, self.w2, self.b2 = (np.asarray(v, dtype=np.float64)
                                              for v in (self.w1, self.b1, self.w2, self.b2))
        H, _ = self.w1.shape
        if self.b1.shape != (H,) or self.w2.shape[1] != H or self.b2.shape != (self.w2.shape[0],):
            raise DimensionError(f"TwoLayerNet: inconsistent shapes w1 {self.w1.shape}, b1 {self.b1.shape}, "
                                 f"w2 {self.w2.shape}, b2 {self.b2.shape}")

    @property
    def in_features(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def out_features(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def random(cls, C: int, H: int, D: int, *, rng: np.random.Generator) -> "TwoLayerNet":
        return cls(rng.normal(0, 1 / math.sqrt(C), (H, C)), rng.normal(0, 0.1, H),
                   rng.normal(0, 1 / math.sqrt(H), (D, H)), rng.normal(0, 0.1, D))

    @classmethod
    def zeros(cls, C: int, H: int, D: int) -> "TwoLayerNet":
        return cls(np.zeros((H, C)), np.zeros(H), np.zeros((D, H)), np.zeros(D))

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        return np.maximum(x @ self.w1.T + self.b1, 0.0) @ self.w2.T + self.b2

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def build_auxiliary_branch(net: TwoLayerNet, requires_grad: bool = True) -> AbmParams:
    """ABM-G with a = w1^T, u = w2 and a constant-one auxiliary branch."""
    C, H = net.in_features, net.hidden
    return AbmParams.from_arrays(
        u=net.w2.copy(), a=net.w1.T.copy(), b=np.zeros((C, H)),
        bias_a=net.b1.copy(), bias_b=np.ones(H), bias_out=net.b2.copy(),
        activation="relu", requires_grad=requires_grad,
    )


def _current_frame_rows(target: VariantSpec, C: int) -> tuple[int, int]:
    if target.kind == "C":
        h = target.m // 2
        return h * C, (h + 1) * C
    return 0, C


def expand_temporal(p: AbmParams, target: VariantSpec, C: int) -> AbmParams:
    """Widen ``a``/``b`` so the module reads neighbour frames, starting from zero rows."""
    if target.kind not in ("C", "A"):
        raise ValueError(f"expand_temporal targets ABM-C or ABM-A, got kind {target.kind!r}")
    if p.C_a != C or p.C_b != C:
        raise DimensionError(f"expand_temporal: params read {p.C_a}/{p.C_b} channels, expected C={C}")
    width = target.input_width(C)
    lo, hi = _current_frame_rows(target, C)
    arrs = p.arrays()
    a = np.zeros((width, p.R))
    b = np.zeros((width, p.R))
    a[lo:hi] = arrs["a"]
    b[lo:hi] = arrs["b"]
    return AbmParams.from_arrays(arrs["u"].copy(), a, b, arrs["bias_a"].copy(), arrs["bias_b"].copy(),
                                 arrs["bias_out"].copy(), activation=p.activation,
                                 requires_grad=p.u.requires_grad)


def frozen_symbol_table(target: VariantSpec | None, C: int) -> dict[str, dict]:
    """Which slices of the surgically built module are pretrained vs new.

    ``target=None`` describes the un-expanded ABM-G.
    """
    lo, hi = (0, C) if target is None else _current_frame_rows(target, C)
    width = C if target is None else target.input_width(C)
    table = {
        "a.current": {"param": "a", "rows": [lo, hi], "origin": "pretrained", "source": "w1.T"},
        "bias_a": {"param": "bias_a", "origin": "pretrained", "source": "b1"},
        "u": {"param": "u", "origin": "pretrained", "source": "w2"},
        "bias_out": {"param": "bias_out", "origin": "pretrained", "source": "b2"},
        "b": {"param": "b", "rows": [0, width], "origin": "new", "init": "zeros"},
        "bias_b": {"param": "bias_b", "origin": "new", "init": "ones"},
    }
    if target is not None:
        if lo > 0:
            table["a.before"] = {"param": "a", "rows": [0, lo], "origin": "new", "init": "zeros"}
        if hi < width:
            table["a.after"] = {"param": "a", "rows": [hi, width], "origin": "new", "init": "zeros"}
    return table


def pretrained_slices_match(net: TwoLayerNet, p: AbmParams, table: dict[str, dict]) -> bool:
    """True if every pretrained slice of ``p`` is bit-identical to its source in ``net``."""
    src = {"w1.T": net.w1.T, "b1": net.b1, "w2": net.w2, "b2": net.b2}
    arrs = p.arrays()
    for entry in table.values():
        if entry["origin"] != "pretrained":
            continue
        val = arrs[entry["param"]]
        if "rows" in entry:
            val = val[entry["rows"][0]:entry["rows"][1]]
        ref = src[entry["source"]]
        if val.shape != ref.shape or not np.array_equal(val, ref):
            return False
    return True


@dataclass
class SurgeryReport:
    max_abs_deviation: float
    n_probes: int
    passed: bool
    frozen_symbol_table: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def verify_identity(before: Callable[[np.ndarray], np.ndarray], after: Callable[[np.ndarray], np.ndarray],
                    n_probes: int, input_shape: tuple[int, ...], *, rng: np.random.Generator,
                    table: dict | None = None) -> SurgeryReport:
    """Max |before(x) - after(x)| over standard-normal probes x."""
    worst = 0.0
    for _ in range(n_probes):
        x = rng.standard_normal(input_shape)
        dev = np.abs(np.asarray(before(x)) - np.asarray(after(x)))
        worst = max(worst, float(dev.max()) if dev.size else 0.0)
    passed = n_probes >= MIN_PROBES and worst < IDENTITY_TOL
    return SurgeryReport(worst, n_probes, passed, table or {})


def temporal_forward(p: AbmParams, target: VariantSpec | None) -> Callable[[np.ndarray], np.ndarray]:
    """Numpy-in/numpy-out forward for a (possibly expanded) surgery module."""
    if target is None or target.kind == "G":
        return lambda x: abm_g_forward(p, Tensor(x), Tensor(x)).data
    if target.kind == "C":
        return lambda seq: abm_c_forward(p, Tensor(seq), target.m).data
    if target.kind == "A":
        return lambda seq: abm_a_forward(p, Tensor(seq), target.beta).data
    raise ValueError(f"no surgery forward for kind {target.kind!r}")


def surgery_verify(net: TwoLayerNet, target: VariantSpec | None, n_probes: int = MIN_PROBES, *,
                   rng: np.random.Generator, T: int = 5, params: AbmParams | None = None) -> SurgeryReport:
    """Build (or take) the surgery module for ``net`` and check it reproduces ``net`` per frame."""
    C = net.in_features
    if params is None:
        params = build_auxiliary_branch(net)
        if target is not None:
            params = expand_temporal(params, target, C)
    table = frozen_symbol_table(target, C)
    shape = (C,) if target is None or target.kind == "G" else (T, C)
    report = verify_identity(net.forward, temporal_forward(params, target), n_probes, shape, rng=rng, table=table)
    if report.passed and not pretrained_slices_match(net, params, table):
        report.passed = False
    return report


def save_net(directory, net: TwoLayerNet, params: AbmParams | None = None):
    """Checkpoint a net (and optionally a surgery module built from it)."""
    tensors = dict(net.arrays())
    if params is not None:
        tensors.update({f"abm.{k}": v for k, v in params.arrays().items()})
    return checkpoint.save(directory, tensors)


def load_net(manifest_path) -> tuple[TwoLayerNet, AbmParams | None]:
    arrays, _ = checkpoint.load(manifest_path)
    missing = {"w1", "b1", "w2", "b2"} - set(arrays)
    if missing:
        raise ValueError(f"{manifest_path}: missing net tensors {sorted(missing)}")
    net = TwoLayerNet(arrays["w1"], arrays["b1"], arrays["w2"], arrays["b2"])
    params = None
    if any(k.startswith("abm.") for k in arrays):
        params = AbmParams.from_arrays(**{k[4:]: v for k, v in arrays.items() if k.startswith("abm.")},
                                       activation="relu")
    return net, params
