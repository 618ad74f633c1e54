"""Approximated bilinear modules: the general form and its temporal variants.

Shapes: a single frame feature is ``[C]``, a sequence ``[T, C]`` and a batch
of sequences ``[B, T, C]``. All temporal variants treat the second-to-last
axis as time and pad it by replicating the first/last frame.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import DimensionError, Tensor

KINDS = ("G", "S", "C", "A")
ACTIVATIONS = ("none", "relu")


def dynamic_channels(beta: float, C: int) -> int:
    """Number of dynamic channels, round-half-up of beta*C clamped to [0, C]."""
    return min(max(int(math.floor(beta * C + 0.5)), 0), C)


@dataclass(frozen=True)
class VariantSpec:
    kind: str = "C"
    m: int = 3
    beta: float = 1.0
    boundary: str = "replicate"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ABM kind {self.kind!r}; expected one of {KINDS}")
        if self.m != 3:
            raise ValueError(f"window size m is fixed at 3, got {self.m}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.boundary != "replicate":
            raise ValueError(f"unsupported boundary {self.boundary!r}")

    def input_width(self, C: int) -> int:
        """Width of the vector fed to each ABM-G entry for C frame channels."""
        if self.kind in ("G", "S"):
            return C
        if self.kind == "C":
            return self.m * C
        return C + 2 * dynamic_channels(self.beta, C)

    def frame_channels(self, width: int) -> int:
        """Inverse of ``input_width``."""
        if self.kind in ("G", "S"):
            return width
        if self.kind == "C":
            if width % self.m:
                raise DimensionError(f"ABM-C input width {width} is not a multiple of m={self.m}")
            return width // self.m
        # input_width is strictly increasing in C, so the inverse is unique
        for C in range(1, width + 1):
            if self.input_width(C) == width:
                return C
        raise DimensionError(f"no channel count C gives ABM-A width {width} at beta={self.beta}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "m": self.m, "beta": self.beta, "boundary": self.boundary}

    @classmethod
    def from_dict(cls, d: dict) -> "VariantSpec":
        unknown = set(d) - {"kind", "m", "beta", "boundary"}
        if unknown:
            raise ValueError(f"unknown VariantSpec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AbmParams:
    """Factorized weights ``u [D, R]``, ``a [C_a, R]``, ``b [C_b, R]`` plus biases."""

    u: Tensor
    a: Tensor
    b: Tensor
    bias_a: Tensor
    bias_b: Tensor
    bias_out: Tensor
    activation: str = "none"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        for name in ("u", "a", "b"):
            if getattr(self, name).ndim != 2:
                raise DimensionError(f"{name} must be a matrix, got {getattr(self, name).shape}")
        D, R = self.u.shape
        if R < 1 or D < 1 or self.C_a < 1 or self.C_b < 1:
            raise DimensionError("AbmParams: all of D, R, C_a, C_b must be >= 1")
        if self.a.shape[1] != R or self.b.shape[1] != R:
            raise DimensionError(f"rank mismatch: u {self.u.shape}, a {self.a.shape}, b {self.b.shape}")
        if self.bias_a.shape != (R,) or self.bias_b.shape != (R,) or self.bias_out.shape != (D,):
            raise DimensionError("AbmParams: bias shapes must be [R], [R], [D]")

    @property
    def D(self) -> int:
        return self.u.shape[0]

    @property
    def R(self) -> int:
        return self.u.shape[1]

    @property
    def C_a(self) -> int:
        return self.a.shape[0]

    @property
    def C_b(self) -> int:
        return self.b.shape[0]

    @classmethod
    def from_arrays(cls, u, a, b, bias_a=None, bias_b=None, bias_out=None,
                    activation: str = "none", requires_grad: bool = False) -> "AbmParams":
        u, a, b = (np.asarray(v, dtype=np.float64) for v in (u, a, b))
        R = u.shape[1]
        bias_a = np.zeros(R) if bias_a is None else bias_a
        bias_b = np.zeros(R) if bias_b is None else bias_b
        bias_out = np.zeros(u.shape[0]) if bias_out is None else bias_out
        mk = lambda v: Tensor(v, requires_grad=requires_grad)  # noqa: E731
        return cls(mk(u), mk(a), mk(b), mk(bias_a), mk(bias_b), mk(bias_out), activation)

    @classmethod
    def random(cls, C_a: int, C_b: int, D: int, R: int | None = None, *,
               rng: np.random.Generator, activation: str = "relu",
               requires_grad: bool = True) -> "AbmParams":
        """Random init; R defaults to D."""
        R = D if R is None else R
        return cls.from_arrays(
            u=rng.normal(0.0, 1.0 / math.sqrt(R), (D, R)),
            a=rng.normal(0.0, 1.0 / math.sqrt(C_a), (C_a, R)),
            b=rng.normal(0.0, 1.0 / math.sqrt(C_b), (C_b, R)),
            activation=activation,
            requires_grad=requires_grad,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.parameters().items()}

    def parameters(self) -> dict[str, Tensor]:
        return {"u": self.u, "a": self.a, "b": self.b,
                "bias_a": self.bias_a, "bias_b": self.bias_b, "bias_out": self.bias_out}

    def copy(self, requires_grad: bool | None = None) -> "AbmParams":
        arrs = self.arrays()
        rg = self.u.requires_grad if requires_grad is None else requires_grad
        return AbmParams.from_arrays(**{k: v.copy() for k, v in arrs.items()},
                                     activation=self.activation, requires_grad=rg)

    def param_count(self) -> int:
        return sum(v.data.size for v in self.parameters().values())


# ---------------------------------------------------------------------------
# naive bilinear map and exact factorization


def naive_bilinear(W, x, y) -> Tensor:
    """z_k = sum_ij W[k, i, j] x_i y_j."""
    W, x, y = (np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64) for v in (W, x, y))
    if W.ndim != 3 or x.shape != (W.shape[1],) or y.shape != (W.shape[2],):
        raise DimensionError(f"naive_bilinear: W {W.shape} incompatible with x {x.shape}, y {y.shape}")
    return Tensor(np.einsum("kij,i,j->k", W, x, y))


def factorize_exact(W) -> AbmParams:
    """Rank C*C' factorization with a[:, r] = e_i, b[:, r] = e_j, u[k, r] = W[k, i, j]."""
    W = tn.as_tensor(W).data
    if W.ndim != 3:
        raise DimensionError(f"factorize_exact: expected [D, C, C'], got {W.shape}")
    D, C, Cp = W.shape
    a, b = _selectors(C, Cp)
    return AbmParams.from_arrays(u=W.reshape(D, C * Cp), a=a, b=b)


@functools.lru_cache(maxsize=64)
def _selectors(C: int, Cp: int) -> tuple[np.ndarray, np.ndarray]:
    # column r = i * C' + j picks x_i through a and y_j through b
    return np.repeat(np.eye(C), Cp, axis=1), np.tile(np.eye(Cp), (1, C))


def reconstruct_weight(p: AbmParams) -> np.ndarray:
    """Dense W[k, i, j] = sum_r u[k, r] a[i, r] b[j, r]."""
    return np.einsum("kr,ir,jr->kij", p.u.data, p.a.data, p.b.data)


def factorize_als(W, R: int, *, rng: np.random.Generator, n_iter: int = 200, tol: float = 1e-14) -> AbmParams:
    """Rank-R least-squares fit of W by alternating least squares."""
    W = tn.as_tensor(W).data
    D, C, Cp = W.shape
    u = rng.normal(size=(D, R))
    a = rng.normal(size=(C, R))
    b = rng.normal(size=(Cp, R))
    W0 = W.reshape(D, C * Cp)                      # rows k, cols (i, j)
    W1 = W.transpose(1, 0, 2).reshape(C, D * Cp)   # rows i, cols (k, j)
    W2 = W.transpose(2, 0, 1).reshape(Cp, D * C)   # rows j, cols (k, i)

    def khatri_rao(p, q):
        return np.einsum("ir,jr->ijr", p, q).reshape(-1, R)

    prev = np.inf
    for _ in range(n_iter):
        u = np.linalg.lstsq(khatri_rao(a, b), W0.T, rcond=None)[0].T
        a = np.linalg.lstsq(khatri_rao(u, b), W1.T, rcond=None)[0].T
        b = np.linalg.lstsq(khatri_rao(u, a), W2.T, rcond=None)[0].T
        err = np.linalg.norm(np.einsum("kr,ir,jr->kij", u, a, b) - W)
        if abs(prev - err) < tol:
            break
        prev = err
    return AbmParams.from_arrays(u=u, a=a, b=b)


# ---------------------------------------------------------------------------
# forward passes


def _g_flat(p: AbmParams, x2: Tensor, y2: Tensor) -> Tensor:
    ha = tn.add_bias(tn.matmul(x2, p.a), p.bias_a)
    hb = tn.add_bias(tn.matmul(y2, p.b), p.bias_b)
    h = tn.hadamard(ha, hb)
    if p.activation == "relu":
        h = tn.relu(h)
    return tn.add_bias(tn.matmul(h, tn.transpose(p.u)), p.bias_out)


def abm_g_forward(p: AbmParams, x: Tensor, y: Tensor) -> Tensor:
    """u . act((a^T x + bias_a) * (b^T y + bias_b)) + bias_out over any leading axes."""
    x, y = tn.as_tensor(x), tn.as_tensor(y)
    if x.shape[-1:] != (p.C_a,) or y.shape[-1:] != (p.C_b,) or x.shape[:-1] != y.shape[:-1]:
        raise DimensionError(f"abm_g_forward: x {x.shape}, y {y.shape} vs C_a={p.C_a}, C_b={p.C_b}")
    lead = x.shape[:-1]
    if x.ndim == 2:
        return _g_flat(p, x, y)
    M = int(np.prod(lead)) if lead else 1
    z = _g_flat(p, tn.reshape(x, (M, p.C_a)), tn.reshape(y, (M, p.C_b)))
    return tn.reshape(z, (*lead, p.D))


def shift_time(seq: Tensor, k: int) -> Tensor:
    """Sequence whose frame t is frame clip(t + k, 0, T - 1) of ``seq``."""
    T = seq.shape[-2]
    ax = seq.ndim - 2
    if k == 0:
        return seq
    if abs(k) >= T:
        edge = tn.slice(seq, ax, T - 1 if k > 0 else 0, 1)
        return tn.concat([edge] * T, ax)
    if k > 0:
        body = tn.slice(seq, ax, k, T - k)
        edge = tn.slice(seq, ax, T - 1, 1)
        return tn.concat([body] + [edge] * k, ax)
    body = tn.slice(seq, ax, 0, T + k)
    edge = tn.slice(seq, ax, 0, 1)
    return tn.concat([edge] * (-k) + [body], ax)


def _check_seq(seq: Tensor, op: str) -> None:
    if seq.ndim not in (2, 3) or seq.shape[-2] < 1:
        raise DimensionError(f"{op}: expected [T, C] or [B, T, C] with T >= 1, got {seq.shape}")


def abm_s_forward(p: AbmParams, seq: Tensor) -> Tensor:
    """output_t = ABM-G(x_t, x_{t+1}), last frame paired with itself."""
    seq = tn.as_tensor(seq)
    _check_seq(seq, "abm_s_forward")
    return abm_g_forward(p, seq, shift_time(seq, 1))


def window_concat(seq: Tensor, m: int = 3) -> Tensor:
    """Per-frame concat of frames t - m//2 .. t + m//2."""
    h = m // 2
    return tn.concat([shift_time(seq, k) for k in range(-h, h + 1)], seq.ndim - 1)


def abm_c_forward(p: AbmParams, seq: Tensor, m: int = 3) -> Tensor:
    seq = tn.as_tensor(seq)
    _check_seq(seq, "abm_c_forward")
    C = seq.shape[-1]
    if p.C_a != m * C or p.C_b != m * C:
        raise DimensionError(f"abm_c_forward: params expect C_a={p.C_a}, C_b={p.C_b}; frames give {m}*{C}")
    xc = window_concat(seq, m)
    return abm_g_forward(p, xc, xc)


def split_static_dynamic(seq: Tensor, beta: float) -> tuple[Tensor, Tensor]:
    """(first C - d channels, last d channels) with d = round(beta * C)."""
    seq = tn.as_tensor(seq)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    C = seq.shape[-1]
    d = dynamic_channels(beta, C)
    ax = seq.ndim - 1
    return tn.slice(seq, ax, 0, C - d), tn.slice(seq, ax, C - d, d)


def adjacent_concat(seq: Tensor, beta: float) -> Tensor:
    """Per-frame concat(x_t, v^d_{t-1}, v^d_{t+1})."""
    _, dyn = split_static_dynamic(seq, beta)
    if dyn.shape[-1] == 0:
        return seq
    return tn.concat([seq, shift_time(dyn, -1), shift_time(dyn, 1)], seq.ndim - 1)


def abm_a_forward(p: AbmParams, seq: Tensor, beta: float) -> Tensor:
    seq = tn.as_tensor(seq)
    _check_seq(seq, "abm_a_forward")
    C = seq.shape[-1]
    width = C + 2 * dynamic_channels(beta, C)
    if p.C_a != width or p.C_b != width:
        raise DimensionError(f"abm_a_forward: params expect C_a={p.C_a}, C_b={p.C_b}; "
                             f"C={C}, beta={beta} gives {width}")
    xa = adjacent_concat(seq, beta)
    return abm_g_forward(p, xa, xa)


def abm_a_channel_map(C: int, beta: float) -> np.ndarray:
    """Index table Q with x''_t[i] == x'_t[Q[i]].

    x''_t = (x_t, v^d_{t-1}, v^d_{t+1}) is the ABM-A input and
    x'_t = (x_{t-1}, x_t, x_{t+1}) the ABM-C input. At beta=1, Q is a
    permutation of range(3C).
    """
    d = dynamic_channels(beta, C)
    current = np.arange(C, 2 * C)
    prev_dyn = np.arange(C - d, C)
    next_dyn = np.arange(2 * C + C - d, 3 * C)
    return np.concatenate([current, prev_dyn, next_dyn])


def a_params_as_c(p: AbmParams, C: int, beta: float) -> AbmParams:
    """ABM-C parameters computing the same map as ABM-A parameters ``p``.

    Rows of a and b are scattered through ``abm_a_channel_map``; rows for
    channels ABM-A never reads stay zero.
    """
    Q = abm_a_channel_map(C, beta)
    if p.C_a != Q.size or p.C_b != Q.size:
        raise DimensionError(f"a_params_as_c: params width {p.C_a} != {Q.size}")
    arrs = p.arrays()
    a = np.zeros((3 * C, p.R))
    b = np.zeros((3 * C, p.R))
    a[Q] = arrs["a"]
    b[Q] = arrs["b"]
    return AbmParams.from_arrays(arrs["u"], a, b, arrs["bias_a"], arrs["bias_b"], arrs["bias_out"],
                                 activation=p.activation)


def layer_forward(spec: VariantSpec, p: AbmParams, seq: Tensor) -> Tensor:
    if spec.kind == "G":
        return abm_g_forward(p, seq, seq)
    if spec.kind == "S":
        return abm_s_forward(p, seq)
    if spec.kind == "C":
        return abm_c_forward(p, seq, spec.m)
    return abm_a_forward(p, seq, spec.beta)


# ---------------------------------------------------------------------------
# stacks


@dataclass
class Linear:
    """y = w x + b applied along the last axis; w is [out, in]."""

    w: Tensor
    b: Tensor

    def __post_init__(self):
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise DimensionError(f"Linear: w {self.w.shape}, b {self.b.shape}")

    @classmethod
    def random(cls, n_in: int, n_out: int, *, rng: np.random.Generator, requires_grad: bool = True) -> "Linear":
        w = rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_out, n_in))
        return cls(Tensor(w, requires_grad=requires_grad), Tensor(np.zeros(n_out), requires_grad=requires_grad))

    @property
    def n_in(self) -> int:
        return self.w.shape[1]

    @property
    def n_out(self) -> int:
        return self.w.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        x = tn.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"Linear: input {x.shape} vs in-features {self.n_in}")
        lead = x.shape[:-1]
        x2 = x if x.ndim == 2 else tn.reshape(x, (int(np.prod(lead)) if lead else 1, self.n_in))
        y = tn.add_bias(tn.matmul(x2, tn.transpose(self.w)), self.b)
        return y if x.ndim == 2 else tn.reshape(y, (*lead, self.n_out))

    def parameters(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


@dataclass
class AbmStack:
    layers: list[tuple[VariantSpec, AbmParams]]
    placement: str = "top"
    temporal_pool_after: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise ValueError("AbmStack needs at least one layer")
        if self.placement not in ("top", "implanted"):
            raise ValueError(f"placement must be 'top' or 'implanted', got {self.placement!r}")
        if self.temporal_pool_after is not None:
            if self.placement != "implanted":
                raise ValueError("temporal_pool_after is only valid for implanted placement")
            if not 0 <= self.temporal_pool_after < len(self.layers):
                raise ValueError(f"temporal_pool_after={self.temporal_pool_after} out of range")
        prev_out = None
        for i, (spec, p) in enumerate(self.layers):
            if p.C_a != p.C_b:
                raise DimensionError(f"layer {i}: temporal layers need C_a == C_b, got {p.C_a}, {p.C_b}")
            c_in = spec.frame_channels(p.C_a)
            if spec.input_width(c_in) != p.C_a:
                raise DimensionError(f"layer {i}: width {p.C_a} inconsistent with {spec}")
            if prev_out is not None and c_in != prev_out:
                raise DimensionError(f"layer {i}: expects {c_in} channels but layer {i - 1} emits {prev_out}")
            prev_out = p.D

    @property
    def in_channels(self) -> int:
        spec, p = self.layers[0]
        return spec.frame_channels(p.C_a)

    @property
    def out_channels(self) -> int:
        return self.layers[-1][1].D

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (_, p) in enumerate(self.layers):
            for k, v in p.parameters().items():
                out[f"layer{i}.{k}"] = v
        return out

    def to_dict(self) -> dict:
        return {
            "placement": self.placement,
            "temporal_pool_after": self.temporal_pool_after,
            "layers": [dict(spec.to_dict(), activation=p.activation, D=p.D, R=p.R, C_a=p.C_a)
                       for spec, p in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict, arrays: dict[str, np.ndarray], requires_grad: bool = True) -> "AbmStack":
        layers = []
        for i, ld in enumerate(d["layers"]):
            spec = VariantSpec(kind=ld["kind"], m=ld["m"], beta=ld["beta"], boundary=ld["boundary"])
            p = AbmParams.from_arrays(**{k: arrays[f"layer{i}.{k}"] for k in
                                         ("u", "a", "b", "bias_a", "bias_b", "bias_out")},
                                      activation=ld["activation"], requires_grad=requires_grad)
            layers.append((spec, p))
        return cls(layers, d["placement"], d["temporal_pool_after"])


def build_top_stack(spec: VariantSpec, C: int, depth: int, *, rng: np.random.Generator,
                    D: int | None = None, R: int | None = None, activation: str = "relu") -> AbmStack:
    """``depth`` randomly initialised layers of one variant, C -> D -> ... -> D."""
    D = C if D is None else D
    layers = []
    c_in = C
    for _ in range(depth):
        w = spec.input_width(c_in)
        layers.append((spec, AbmParams.random(w, w, D, R, rng=rng, activation=activation)))
        c_in = D
    return AbmStack(layers, "top")


def stack_forward(s: AbmStack, seq: Tensor) -> Tensor:
    h = tn.as_tensor(seq)
    for i, (spec, p) in enumerate(s.layers):
        h = layer_forward(spec, p, h)
        if s.temporal_pool_after == i:
            h = tn.max_pool_time(h, 2, 2)
    return h


def classify(s: AbmStack, seq: Tensor, head: Linear) -> Tensor:
    """Per-frame linear head on the stack output, averaged over time."""
    z = stack_forward(s, seq)
    return tn.mean_over_axis(head(z), z.ndim - 2)


def receptive_field(s: AbmStack) -> int:
    """Frames that can influence one output step, ignoring pooling and beta rounding."""
    back = fwd = 0
    for spec, _ in s.layers:
        if spec.kind == "S":
            fwd += 1
        elif spec.kind == "C":
            back += spec.m // 2
            fwd += spec.m // 2
        elif spec.kind == "A" and spec.beta > 0:
            back += 1
            fwd += 1
    return back + fwd + 1
