"""Dense float64 tensors with taped reverse-mode differentiation.

Every differentiable operation in the package is built from the primitives in
this module.  Each primitive computes its forward value eagerly with numpy and,
when a Tape is active and any operand requires gradients, records a node whose
closure produces the operand gradients from the output gradient.  `backward`
replays the tape once in reverse order and accumulates gradients per tensor.

Conventions:
  * data is always float64 and C-contiguous; transposes materialize copies.
  * primitives never mutate their inputs; only an optimizer may write into a
    leaf's `.data`, and doing so invalidates any tape recorded before the write.
  * with no active Tape, primitives are pure numpy compute (used for eval).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ValidationError

_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


class Tensor:
    """A dense float64 array plus a flag marking it as a gradient leaf."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, no gradient tracking."""
        return Tensor(self.data, requires_grad=False)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, float(other))

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications, replayed in reverse by backward."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._nodes)


_TAPE_STACK: list[Tape] = []


class no_tape:
    """Suspend recording: ops run as pure compute until the block exits."""

    def __enter__(self):
        self._saved = _TAPE_STACK[:]
        _TAPE_STACK.clear()
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.extend(self._saved)


def _record(out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> None:
    if not _TAPE_STACK:
        return
    if not any(p.requires_grad for p in parents):
        return
    out.requires_grad = True
    _TAPE_STACK[-1]._nodes.append(_Node(out, parents, backward_fn))


class GradientMap:
    """Gradients keyed by tensor identity; unused leaves read as exact zeros."""

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros(t.data.shape)
        return g

    def get(self, t: Tensor) -> np.ndarray:
        return self[t]

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads


def backward(loss: Tensor, tape: Tape) -> GradientMap:
    """Accumulate d(loss)/d(tensor) for every tensor touched by the tape.

    The tape's recording order is a topological order of the graph, so one
    reverse sweep visits each node exactly once.  Gradient arrays are never
    mutated in place; accumulation always allocates.
    """
    if loss.data.size != 1:
        raise ValidationError(f"backward requires a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape._nodes):
        g = grads.get(id(node.out))
        if g is None:
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            have = grads.get(id(parent))
            grads[id(parent)] = pg if have is None else have + pg
    return GradientMap(grads)


# ---------------------------------------------------------------------------
# elementwise primitives


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)
    _record(out, (a, b), lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)
    _record(out, (a, b), lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    _record(out, (a, b), lambda g: (g * bd, g * ad))
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)
    _record(out, (x,), lambda g: (g * c,))
    return out


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data + float(c))
    _record(out, (x,), lambda g: (g,))
    return out


def relu(x: Tensor) -> Tensor:
    xd = x.data
    out = Tensor(np.maximum(xd, 0.0))
    _record(out, (x,), lambda g: (g * (xd > 0.0),))
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Logistic squash, numerically stable, output strictly inside (0, 1)."""
    xd = x.data
    s = np.empty_like(xd)
    pos = xd >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    s[~pos] = e / (1.0 + e)
    s = np.clip(s, _SIGMOID_LO, _SIGMOID_HI)
    out = Tensor(s)
    _record(out, (x,), lambda g: (g * s * (1.0 - s),))
    return out


def log(x: Tensor) -> Tensor:
    """Natural log; domain is strictly positive entries."""
    xd = x.data
    out = Tensor(np.log(xd))
    _record(out, (x,), lambda g: (g / xd,))
    return out


def pow_scalar(x: Tensor, p: float) -> Tensor:
    p = float(p)
    xd = x.data
    out = Tensor(xd ** p)
    _record(out, (x,), lambda g: (g * p * xd ** (p - 1.0),))
    return out


# ---------------------------------------------------------------------------
# shape and reduction primitives


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    in_shape = x.data.shape
    out = Tensor(x.data.reshape(shape))
    _record(out, (x,), lambda g: (g.reshape(in_shape),))
    return out


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Materialized transpose; 2-D swap when axes is omitted."""
    if axes is None:
        if x.data.ndim != 2:
            raise DimensionError(f"transpose without axes needs a 2-D tensor, got {x.shape}")
        perm = (1, 0)
    else:
        perm = tuple(int(a) for a in axes)
        if sorted(perm) != list(range(x.data.ndim)):
            raise DimensionError(f"transpose axes {perm} invalid for rank {x.data.ndim}")
    inv = tuple(np.argsort(perm))
    out = Tensor(np.ascontiguousarray(x.data.transpose(perm)))
    _record(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))
    return out


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if isinstance(axes, int):
        axes = (axes,)
    out = tuple(sorted(a % ndim for a in axes))
    if len(set(out)) != len(out):
        raise DimensionError(f"duplicate reduction axes {axes}")
    return out


def sum_axes(x: Tensor, axes) -> Tensor:
    axes = _norm_axes(axes, x.data.ndim)
    in_shape = x.data.shape
    out = Tensor(x.data.sum(axis=axes))

    def bwd(g):
        ge = np.expand_dims(g, axes)
        return (np.broadcast_to(ge, in_shape).copy(),)

    _record(out, (x,), bwd)
    return out


def mean_axes(x: Tensor, axes) -> Tensor:
    axes = _norm_axes(axes, x.data.ndim)
    in_shape = x.data.shape
    count = 1
    for a in axes:
        count *= in_shape[a]
    out = Tensor(x.data.mean(axis=axes))

    def bwd(g):
        ge = np.expand_dims(g, axes) / count
        return (np.broadcast_to(ge, in_shape).copy(),)

    _record(out, (x,), bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    """Reduce every entry to a rank-0 scalar tensor."""
    in_shape = x.data.shape
    out = Tensor(x.data.sum())
    _record(out, (x,), lambda g: (np.broadcast_to(g, in_shape).copy(),))
    return out


# ---------------------------------------------------------------------------
# matrix primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad @ bd)
    _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    return out


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-stochastic softmax over a 2-D tensor, stabilized by row-max shift.

    `mask` is an optional boolean vector over columns; masked-out columns get
    probability exactly zero and the remaining columns renormalize.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows needs a 2-D tensor, got {x.shape}")
    xd = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (xd.shape[1],):
            raise DimensionError(f"softmax mask shape {mask.shape} vs {xd.shape[1]} columns")
        if not mask.any():
            raise ValidationError("softmax mask excludes every column")
        shifted = np.where(mask[None, :], xd, -np.inf)
        shifted = shifted - shifted.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    else:
        e = np.exp(xd - xd.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    _record(out, (x,), bwd)
    return out


def broadcast_mul_row(x: Tensor, row: Tensor) -> Tensor:
    """Scale each column j of an m-by-n tensor by row[0, j]."""
    if x.data.ndim != 2 or row.data.ndim != 2 or row.shape[0] != 1:
        raise DimensionError(f"broadcast_mul_row needs (m,n) and (1,n), got {x.shape}, {row.shape}")
    if row.shape[1] != x.shape[1]:
        raise DimensionError(f"broadcast_mul_row: {x.shape} vs row {row.shape}")
    xd, rd = x.data, row.data
    out = Tensor(xd * rd)
    _record(out, (x, row), lambda g: (g * rd, (g * xd).sum(axis=0, keepdims=True)))
    return out


def broadcast_add_row(x: Tensor, row: Tensor) -> Tensor:
    """Add row[0, :] to every row of an m-by-n tensor."""
    if x.data.ndim != 2 or row.data.ndim != 2 or row.shape[0] != 1:
        raise DimensionError(f"broadcast_add_row needs (m,n) and (1,n), got {x.shape}, {row.shape}")
    if row.shape[1] != x.shape[1]:
        raise DimensionError(f"broadcast_add_row: {x.shape} vs row {row.shape}")
    out = Tensor(x.data + row.data)
    _record(out, (x, row), lambda g: (g, g.sum(axis=0, keepdims=True)))
    return out


def slice_row(x: Tensor, i: int) -> Tensor:
    """Extract row i of a 2-D tensor as a 1-by-n tensor."""
    if x.data.ndim != 2:
        raise DimensionError(f"slice_row needs a 2-D tensor, got {x.shape}")
    i = int(i)
    if not 0 <= i < x.shape[0]:
        raise DimensionError(f"slice_row index {i} out of range for {x.shape}")
    in_shape = x.data.shape
    out = Tensor(x.data[i : i + 1, :].copy())

    def bwd(g):
        full = np.zeros(in_shape)
        full[i, :] = g[0, :]
        return (full,)

    _record(out, (x,), bwd)
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-by-n tensors into an m-by-n tensor."""
    if not rows:
        raise DimensionError("stack_rows needs at least one row")
    n = rows[0].shape
    for r in rows:
        if r.data.ndim != 2 or r.shape[0] != 1 or r.shape != n:
            raise DimensionError(f"stack_rows: inconsistent row shapes {[r.shape for r in rows]}")
    out = Tensor(np.concatenate([r.data for r in rows], axis=0))
    _record(out, tuple(rows), lambda g: tuple(g[i : i + 1, :].copy() for i in range(len(rows))))
    return out


# ---------------------------------------------------------------------------
# structured primitives for the backbone


def temporal_conv(x: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Depthwise temporal convolution with same padding.

    x has shape (batch, person, frame, joint, channel); kernel has shape
    (channel, taps) with an odd tap count.  Each channel is convolved along the
    frame axis independently at every joint; output frames number
    ceil(frames / stride).
    """
    if x.data.ndim != 5:
        raise DimensionError(f"temporal_conv expects rank-5 input, got {x.shape}")
    if kernel.data.ndim != 2:
        raise DimensionError(f"temporal_conv kernel must be (channel, taps), got {kernel.shape}")
    b, m, t, v, c = x.shape
    kc, k = kernel.shape
    if kc != c:
        raise DimensionError(f"temporal_conv: {c} channels but kernel has {kc}")
    if k % 2 != 1:
        raise ValidationError(f"temporal_conv needs an odd tap count, got {k}")
    stride = int(stride)
    if stride < 1:
        raise ValidationError(f"temporal_conv stride must be >= 1, got {stride}")

    t_out = -(-t // stride)
    pad_left = k // 2
    span = (t_out - 1) * stride + k
    pad_right = max(0, span - pad_left - t)
    t_pad = pad_left + t + pad_right

    xd, kd = x.data, kernel.data
    xpad = np.zeros((b, m, t_pad, v, c))
    xpad[:, :, pad_left : pad_left + t, :, :] = xd

    out_d = np.zeros((b, m, t_out, v, c))
    for tap in range(k):
        window = xpad[:, :, tap : tap + (t_out - 1) * stride + 1 : stride, :, :]
        out_d += window * kd[:, tap]
    out = Tensor(out_d)

    def bwd(g):
        gx_pad = np.zeros_like(xpad)
        gk = np.zeros_like(kd)
        for tap in range(k):
            sl = slice(tap, tap + (t_out - 1) * stride + 1, stride)
            window = xpad[:, :, sl, :, :]
            gk[:, tap] = (g * window).sum(axis=(0, 1, 2, 3))
            gx_pad[:, :, sl, :, :] += g * kd[:, tap]
        return (gx_pad[:, :, pad_left : pad_left + t, :, :].copy(), gk)

    _record(out, (x, kernel), bwd)
    return out


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Training-mode batch normalization over the trailing channel axis.

    Statistics (biased variance) reduce over every axis except the last; gamma
    and beta are per-channel vectors.  The backward pass differentiates through
    the batch statistics.
    """
    xd = x.data
    c = xd.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"batch_norm_train: gamma {gamma.shape} / beta {beta.shape} vs {c} channels"
        )
    axes = tuple(range(xd.ndim - 1))
    m = 1
    for a in axes:
        m *= xd.shape[a]
    if m < 2:
        raise ValidationError("batch_norm_train needs at least 2 reduced elements per channel")

    mu = xd.mean(axis=axes)
    var = xd.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xc = xd - mu
    xhat = xc * inv_std
    out = Tensor(gamma.data * xhat + beta.data)
    gd = gamma.data

    def bwd(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gd
        dvar = (dxhat * xc).sum(axis=axes) * (-0.5) * inv_std ** 3
        dmu = (dxhat.sum(axis=axes)) * (-inv_std) + dvar * (-2.0 / m) * xc.sum(axis=axes)
        dx = dxhat * inv_std + dvar * (2.0 / m) * xc + dmu / m
        return (dx, dgamma, dbeta)

    _record(out, (x, gamma, beta), bwd)
    return out


def batch_norm_eval(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                    running_mean: np.ndarray, running_var: np.ndarray,
                    eps: float = 1e-5) -> np.ndarray:
    """Eval-mode normalization with stored running statistics (pure numpy)."""
    return gamma * (x - running_mean) / np.sqrt(running_var + eps) + beta


# ---------------------------------------------------------------------------
# fused classification losses
#
# Squash-then-log on saturated logits turns into 1/denormal in the backward
# pass; these fuse the squash into the loss so the gradient is (squash - y)
# and stays bounded no matter how far the logits run.


def _check_loss_operands(name: str, logits: Tensor, targets: np.ndarray) -> np.ndarray:
    y = np.asarray(targets, dtype=np.float64)
    if logits.data.ndim != 2:
        raise DimensionError(f"{name} needs 2-D logits, got {logits.shape}")
    if y.shape != logits.data.shape:
        raise DimensionError(f"{name}: logits {logits.shape} vs targets {y.shape}")
    return y


def sigmoid_bce_rows(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean-over-rows binary cross-entropy of sigmoid(logits) against targets.

    Equals -(1/rows) sum [y log s + (1-y) log(1-s)] with s = sigmoid(logits),
    evaluated as softplus terms so saturated logits stay finite end to end.
    """
    y = _check_loss_operands("sigmoid_bce_rows", logits, targets)
    xd = logits.data
    rows = xd.shape[0]
    val = np.maximum(xd, 0.0) - y * xd + np.log1p(np.exp(-np.abs(xd)))
    out = Tensor(val.sum() / rows)

    s = np.empty_like(xd)
    pos = xd >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    s[~pos] = e / (1.0 + e)

    _record(out, (logits,), lambda g: (g * (s - y) / rows,))
    return out


def softmax_ce_rows(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean-over-rows cross-entropy of softmax(logits) against one-hot rows."""
    y = _check_loss_operands("softmax_ce_rows", logits, targets)
    xd = logits.data
    rows = xd.shape[0]
    shifted = xd - xd.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    val = (y * (lse - shifted)).sum() / rows
    out = Tensor(val)
    p = np.exp(shifted - lse)

    _record(out, (logits,), lambda g: (g * (p - y) / rows,))
    return out
