"""Dense float64 tensors with reverse-mode automatic differentiation.

Raw array math is delegated to numpy; this module owns the operation set
the model needs, the gradient tape, and the backward pass.  Every op
verifies its output is finite and appends a tape node while a tape is
active.  A tape is single-threaded; independent tapes may run concurrently
on separate threads over shared read-only parameters.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from molgen.errors import EmptyTape, NonFiniteValue, ShapeMismatch

_local = threading.local()


def _tape_stack() -> list["Tape"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


class Tensor:
    """Immutable-by-convention dense array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "output", "backward")

    def __init__(self, op: str, output: Tensor, backward: Callable[[np.ndarray], Iterable[tuple[Tensor, np.ndarray]]]):
        self.op = op
        self.output = output
        self.backward = backward


class Tape:
    """Recorded forward operations in topological (execution) order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)


def _emit(op: str, out_data: np.ndarray, backward, inputs: Sequence[Tensor]) -> Tensor:
    if not np.isfinite(out_data).all():
        raise NonFiniteValue(f"{op} produced a non-finite value")
    out = Tensor(out_data)
    stack = _tape_stack()
    if stack and (backward is not None):
        stack[-1].nodes.append(_Node(op, out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise and linear ops ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from exc

    def backward(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

    return _emit("add", out, backward, (a, b))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}") from exc

    def backward(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))]

    return _emit("sub", out, backward, (a, b))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from exc

    def backward(g):
        return [
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        ]

    return _emit("mul", out, backward, (a, b))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.data / b.data
    except ValueError as exc:
        raise ShapeMismatch(f"div: {a.shape} vs {b.shape}") from exc

    def backward(g):
        return [
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        ]

    return _emit("div", out, backward, (a, b))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return _emit("matmul", out, backward, (a, b))


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def backward(g):
        return [(x, g * (x.data > 0.0))]

    return _emit("relu", out, backward, (x,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500.0, 500.0)))

    def backward(g):
        return [(x, g * out * (1.0 - out))]

    return _emit("sigmoid", out, backward, (x,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)

    def backward(g):
        return [(x, g * out)]

    return _emit("exp", out, backward, (x,))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: {x.shape} -> {tuple(shape)}") from exc

    def backward(g):
        return [(x, g.reshape(x.shape))]

    return _emit("reshape", out, backward, (x,))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return [(x, np.transpose(g, inverse))]

    return _emit("transpose", out, backward, (x,))


def sum_reduce(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return [(x, np.broadcast_to(g, x.shape).copy())]
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return [(x, np.broadcast_to(g_exp, x.shape).copy())]

    return _emit("sum_reduce", out, backward, (x,))


# -- fused neural-network ops --------------------------------------------------

def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
    momentum: float = 0.9,
    training: bool = True,
) -> Tensor:
    """Normalize (instances, channels) input per channel.

    In training mode, statistics come from the batch and the running
    buffers are updated in place (not differentiated through); in eval
    mode the running buffers are used directly.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2:
        raise ShapeMismatch(f"batch_norm expects 2-D input, got {x.shape}")
    n, c = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch("batch_norm scale/shift shape mismatch")

    if training:
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gamma.data
        if training:
            dx = (
                dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)
            ) * inv_std
        else:
            dx = dxhat * inv_std
        return [(x, dx), (gamma, dgamma), (beta, dbeta)]

    return _emit("batch_norm", out, backward, (x, gamma, beta))


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize (groups, instances, channels) over axis 1, per group+channel.

    Same arithmetic as batch normalization but with statistics local to each
    group, so the result is a pure function of the group's own instances:
    no running buffers and no train/eval distinction.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 3:
        raise ShapeMismatch(f"instance_norm expects 3-D input, got {x.shape}")
    c = x.shape[2]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch("instance_norm scale/shift shape mismatch")

    mean = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 1))
        dbeta = g.sum(axis=(0, 1))
        dxhat = g * gamma.data
        dx = (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        ) * inv_std
        return [(x, dx), (gamma, dgamma), (beta, dbeta)]

    return _emit("instance_norm", out, backward, (x, gamma, beta))


def softmax_cross_entropy(logits, target_index) -> Tensor:
    """Per-row cross entropy of softmax(logits) against integer targets.

    Accepts a single logit vector with a scalar target (returns a scalar)
    or an (n, c) matrix with n targets (returns shape (n,)).
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    data = logits.data[None, :] if single else logits.data
    if data.ndim != 2:
        raise ShapeMismatch(f"softmax_cross_entropy expects 1-D or 2-D logits, got {logits.shape}")
    targets = np.atleast_1d(np.asarray(target_index, dtype=np.int64))
    n, c = data.shape
    if targets.shape != (n,):
        raise ShapeMismatch(f"targets shape {targets.shape} does not match {n} rows")
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= c:
        raise ShapeMismatch("target index out of range")

    shifted = data - data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(n), targets]
    out = losses[0] if single else losses

    def backward(g):
        probs = np.exp(shifted - log_z[:, None])
        probs[np.arange(n), targets] -= 1.0
        g_rows = np.atleast_1d(g)[:, None]
        dx = probs * g_rows
        return [(logits, dx[0] if single else dx)]

    return _emit("softmax_cross_entropy", out, backward, (logits,))


def embed(table, indices) -> Tensor:
    """Row lookup into an embedding table; gradients scatter-add back."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise ShapeMismatch(f"embed table must be 2-D, got {table.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= table.shape[0]:
        raise ShapeMismatch("embedding index out of range")
    out = table.data[idx]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return [(table, dt)]

    return _emit("embed", out, backward, (table,))


# -- backward pass --------------------------------------------------------------

def backward(tape: Tape, loss: Tensor, store=None) -> None:
    """Accumulate dloss/dt into `.grad` of every requires_grad leaf.

    Parameters never touched by the recorded graph receive zero gradients
    when a parameter store is supplied.
    """
    if not tape.nodes:
        raise EmptyTape("no operations recorded")
    if loss.size != 1:
        raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(node.output) for node in tape.nodes}
    if id(loss) not in produced:
        raise EmptyTape("loss tensor was not produced by this tape")

    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for tensor, contrib in node.backward(g):
            if not (tensor.requires_grad or id(tensor) in produced):
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
            if tensor.requires_grad and key not in produced:
                leaves[key] = tensor

    for key, tensor in leaves.items():
        if key in grads:
            tensor.grad = grads[key] if tensor.grad is None else tensor.grad + grads[key]

    if store is not None:
        for param in store.tensors():
            if param.requires_grad and param.grad is None:
                param.grad = np.zeros_like(param.data)
