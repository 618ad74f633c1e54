"""Dense tensors with define-by-run reverse-mode differentiation.

Every op records its parents and a backward closure on the output tensor;
``backward`` replays them in reverse topological order. Values are numpy
arrays (float64 unless a caller opts into float32 for benchmarking).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class GraphConsumedError(RuntimeError):
    """``backward`` was called on a graph that was already differentiated."""


# Multiply counter used by the FLOPs instrumentation. ``None`` disables it.
_mult_counter: list[int] | None = None


@contextlib.contextmanager
def count_multiplies() -> Iterator[list[int]]:
    """Count scalar multiplies performed by ops inside the block.

    Yields a one-element list whose entry is updated in place.
    """
    global _mult_counter
    prev = _mult_counter
    _mult_counter = [0]
    try:
        yield _mult_counter
    finally:
        _mult_counter = prev


_grad_enabled = True
# Smallest |pre-activation| seen by relu, for keeping finite-difference probes off the kink.
_relu_margin: list[float] | None = None


@contextlib.contextmanager
def track_relu_margin() -> Iterator[list[float]]:
    global _relu_margin
    prev = _relu_margin
    _relu_margin = [np.inf]
    try:
        yield _relu_margin
    finally:
        _relu_margin = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording a graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _count(n: int) -> None:
    if _mult_counter is not None:
        _mult_counter[0] += int(n)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        arr = np.array(data, dtype=dtype)
        _check_finite(arr, "Tensor")
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def assign(self, new_data: np.ndarray) -> None:
        """Replace the value of a leaf (optimizer updates)."""
        if not self.is_leaf:
            raise RuntimeError("only leaf tensors can be reassigned")
        arr = np.array(new_data, dtype=self.data.dtype)
        if arr.shape != self.shape:
            raise DimensionError(f"assign: shape {arr.shape} != {self.shape}")
        _check_finite(arr, "assign")
        arr.flags.writeable = False
        self.data = arr

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=np.float64) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if arr.size and not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: produced non-finite values")


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    data.flags.writeable = False
    out.data = data
    out.grad = None
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    out._op = op
    out._consumed = False
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    _count(a.shape[0] * a.shape[1] * b.shape[1])
    A, B = a.data, b.data

    def bw(g):
        return g @ B.T, A.T @ g

    return _result(A @ B, (a, b), bw, "matmul")


def transpose(t: Tensor) -> Tensor:
    if t.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {t.shape}")
    return _result(t.data.T.copy(), (t,), lambda g: (g.T,), "transpose")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes differ {a.shape} vs {b.shape}")
    _count(a.data.size)
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (g * B, g * A), "hadamard")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def scale(t: Tensor, factor: float) -> Tensor:
    _count(t.data.size)
    f = float(factor)
    return _result(t.data * f, (t,), lambda g: (g * f,), "scale")


def add_bias(t: Tensor, bias: Tensor) -> Tensor:
    """Add a vector along the last axis."""
    if bias.ndim != 1 or t.ndim < 1 or t.shape[-1] != bias.shape[0]:
        raise DimensionError(f"add_bias: bias {bias.shape} does not match trailing axis of {t.shape}")
    lead = tuple(range(t.ndim - 1))
    return _result(t.data + bias.data, (t, bias), lambda g: (g, g.sum(axis=lead)), "add_bias")


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0
    if _relu_margin is not None and t.data.size:
        _relu_margin[0] = min(_relu_margin[0], float(np.abs(t.data).min()))
    return _result(np.where(mask, t.data, 0.0).astype(t.data.dtype), (t,), lambda g: (g * mask,), "relu")


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    src = t.shape
    try:
        out = t.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return _result(out.copy(), (t,), lambda g: (g.reshape(src),), "reshape")


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: empty tensor list")
    if len(tensors) == 1:
        return tensors[0]
    ndim = tensors[0].ndim
    ax = _norm_axis(axis, ndim, "concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != ref[i] for i in range(ndim) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape} on axis {ax}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def slice(t: Tensor, axis: int, start: int, length: int) -> Tensor:  # noqa: A001
    ax = _norm_axis(axis, t.ndim, "slice")
    n = t.shape[ax]
    if start < 0 or length < 0 or start + length > n:
        raise DimensionError(f"slice: range [{start}, {start + length}) outside [0, {n}) on axis {ax}")
    idx = [np.s_[:]] * t.ndim
    idx[ax] = np.s_[start:start + length]
    idx = tuple(idx)
    src_shape, dtype = t.shape, t.data.dtype

    def bw(g):
        full = np.zeros(src_shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return _result(t.data[idx].copy(), (t,), bw, "slice")


def sum_all(t: Tensor) -> Tensor:
    src = t.shape
    return _result(np.asarray(t.data.sum()), (t,), lambda g: (np.broadcast_to(g, src).copy(),), "sum")


def mean_over_axis(t: Tensor, axis: int) -> Tensor:
    ax = _norm_axis(axis, t.ndim, "mean_over_axis")
    n = t.shape[ax]
    if n == 0:
        raise DimensionError("mean_over_axis: empty axis")
    out = t.data.sum(axis=ax) * (1.0 / n)
    _count(out.size)

    def bw(g):
        return (np.repeat(np.expand_dims(g, ax), n, axis=ax) * (1.0 / n),)

    return _result(out, (t,), bw, "mean")


def max_pool_time(seq: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max over the time axis (second to last).

    Ties route the gradient to the earliest index in each window.
    """
    if kernel != stride or kernel < 1:
        raise DimensionError("max_pool_time: only non-overlapping windows (kernel == stride) are supported")
    if seq.ndim < 2:
        raise DimensionError(f"max_pool_time: expected [..., T, C], got {seq.shape}")
    T = seq.shape[-2]
    if T < kernel:
        raise DimensionError(f"max_pool_time: need T >= {kernel}, got T={T}")
    n_out = T // kernel
    lead = seq.shape[:-2]
    C = seq.shape[-1]
    win = seq.data[..., : n_out * kernel, :].reshape(*lead, n_out, kernel, C)
    arg = win.argmax(axis=-2)  # argmax returns the first maximum
    out = np.take_along_axis(win, arg[..., None, :], axis=-2)[..., 0, :]
    src_shape, dtype = seq.shape, seq.data.dtype

    def bw(g):
        gw = np.zeros((*lead, n_out, kernel, C), dtype=dtype)
        np.put_along_axis(gw, arg[..., None, :], g[..., None, :], axis=-2)
        full = np.zeros(src_shape, dtype=dtype)
        full[..., : n_out * kernel, :] = gw.reshape(*lead, n_out * kernel, C)
        return (full,)

    return _result(out.copy(), (seq,), bw, "max_pool_time")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: expected [B, classes], got {logits.shape}")
    B, n_cls = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != B:
        raise DimensionError(f"softmax_cross_entropy: {labels.shape[0]} labels for batch of {B}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ValueError(f"softmax_cross_entropy: label outside [0, {n_cls})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = np.asarray((logsum - z[rows, labels]).mean())
    probs = np.exp(z - logsum[:, None])

    def bw(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / B),)

    return _result(loss, (logits,), bw, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# differentiation


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every requires_grad leaf.

    The graph is freed afterwards; a second call on the same graph raises.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss._consumed:
        raise GraphConsumedError("backward already ran on this graph; run the forward pass again")
    if not loss.requires_grad:
        raise RuntimeError("backward: loss does not depend on any tensor requiring grad")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    for node in order:
        if not node.is_leaf:
            node._consumed = True
            node._backward = _consumed_backward


def _consumed_backward(g):
    raise GraphConsumedError("graph already consumed")


def grad_check(f: Callable[..., Tensor], point, eps: float = 1e-5, floor: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``point`` is a Tensor or a sequence of Tensors passed positionally to ``f``;
    each must be float64. Relative error per element is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    points = [point] if isinstance(point, Tensor) else list(point)
    leaves = [Tensor(p.data, requires_grad=True) for p in points]
    for t in leaves:
        if t.data.dtype != np.float64:
            raise TypeError("grad_check needs float64 tensors")
    backward(f(*leaves))
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]

    worst = 0.0
    for k, leaf in enumerate(leaves):
        base = leaf.data.copy()
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        for i in range(flat.size):
            vals = []
            for sign in (1.0, -1.0):
                bumped = flat.copy()
                bumped[i] += sign * eps
                args = [Tensor(l.data) for l in leaves]
                args[k] = Tensor(bumped.reshape(base.shape))
                vals.append(f(*args).item())
            numeric.reshape(-1)[i] = (vals[0] - vals[1]) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic[k]), np.abs(numeric)), floor)
        if numeric.size:
            worst = max(worst, float((np.abs(analytic[k] - numeric) / denom).max()))
    return worst
