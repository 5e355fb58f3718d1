"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Creation order on the tape is already a
topological order, so backward is a single reverse sweep.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


class ShapeError(ValueError):
    pass


_TAPES: list["Tape | None"] = []


def _active_tape() -> "Tape | None":
    return _TAPES[-1] if _TAPES else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}{', name=' + self.name if self.name else ''})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Tape:
    """Records differentiable operations; use as a context manager."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def backward(self, loss: Tensor, grad: np.ndarray | float | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into each reachable leaf's ``.grad``."""
        if not loss.requires_grad:
            return
        seed = np.ones_like(loss.data) if grad is None else np.broadcast_to(np.asarray(grad, float), loss.shape).copy()
        grads: dict[int, np.ndarray] = {id(loss): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    grads[key] = pg if key not in grads else grads[key] + pg


class no_grad:
    """Suspend recording; ops inside produce constants."""

    def __enter__(self):
        _TAPES.append(None)

    def __exit__(self, *exc):
        _TAPES.pop()


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None
    return _result(
        out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b) -> Tensor:
    """``x @ w + b`` as one node."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: incompatible shapes {x.shape}, {w.shape}, {b.shape}")
    return _result(
        x.data @ w.data + b.data, (x, w, b), lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0))
    )


def tanh(x) -> Tensor:
    x = _wrap(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = _wrap(x)
    m = x.data > 0
    return _result(x.data * m, (x,), lambda g: (g * m,))


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [_wrap(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} on axis {axis}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, xs, backward)


def embedding(table, ids) -> Tensor:
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: id out of range for table {table.shape}")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(table.data[ids], (table,), backward)


def total(x) -> Tensor:
    x = _wrap(x)
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def weighted_sum(x, weights) -> Tensor:
    """Scalar ``sum(x * weights)`` with constant weights."""
    x = _wrap(x)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {w.shape} vs tensor {x.shape}")
    return _result(np.asarray((x.data * w).sum()), (x,), lambda g: (g * w,))


def fold_time(x, mask) -> Tensor:
    """Masked per-column sum of a time-major flattened vector.

    ``x`` has shape (T*B,) laid out step by step; ``mask`` is (T, B). Returns (B,).
    """
    x = _wrap(x)
    m = np.asarray(mask, dtype=np.float64)
    if x.shape != (m.size,):
        raise ShapeError(f"fold_time: tensor {x.shape} vs mask {m.shape}")
    out = (x.data.reshape(m.shape) * m).sum(axis=0)
    return _result(out, (x,), lambda g: ((m * g[None, :]).reshape(-1),))


def scale(x, c: float) -> Tensor:
    x = _wrap(x)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_xent(logits, targets) -> Tensor:
    """Per-row negative log-likelihood ``-log softmax(logits)[target]``, shape (N,)."""
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_xent: logits {logits.shape} vs targets {targets.shape}")
    lp = log_softmax_np(logits.data)
    rows = np.arange(len(targets))
    nll = -lp[rows, targets]

    def backward(g):
        d = np.exp(lp)
        d[rows, targets] -= 1.0
        return (d * g[:, None],)

    return _result(nll, (logits,), backward)


def grouped_xent(logits, offsets: Sequence[int], targets) -> Tensor:
    """Sum over class groups of per-group NLL, shape (N,).

    ``offsets`` delimits consecutive column groups (length n_groups + 1);
    ``targets[:, g]`` indexes within group ``g``.
    """
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n_groups = len(offsets) - 1
    if logits.data.ndim != 2 or offsets[-1] != logits.shape[1] or targets.shape != (logits.shape[0], n_groups):
        raise ShapeError(f"grouped_xent: logits {logits.shape}, offsets end {offsets[-1]}, targets {targets.shape}")
    rows = np.arange(logits.shape[0])
    probs = np.empty_like(logits.data)
    nll = np.zeros(logits.shape[0])
    for gi in range(n_groups):
        lo, hi = offsets[gi], offsets[gi + 1]
        lp = log_softmax_np(logits.data[:, lo:hi])
        nll -= lp[rows, targets[:, gi]]
        probs[:, lo:hi] = np.exp(lp)

    def backward(g):
        d = probs.copy()
        for gi in range(n_groups):
            d[rows, offsets[gi] + targets[:, gi]] -= 1.0
        return (d * g[:, None],)

    return _result(nll, (logits,), backward)


# ------------------------------------------------------------------ GRU cell


def gru_forward_np(x, h, w, u, bx, bh):
    """Returns (new_h, cache). Gate order in the 3H blocks: reset, update, candidate."""
    hd = h.shape[1]
    gx = x @ w + bx
    gh = h @ u + bh
    r = _sigmoid(gx[:, :hd] + gh[:, :hd])
    z = _sigmoid(gx[:, hd : 2 * hd] + gh[:, hd : 2 * hd])
    ghn = gh[:, 2 * hd :]
    n = np.tanh(gx[:, 2 * hd :] + r * ghn)
    new_h = (1.0 - z) * n + z * h
    return new_h, (r, z, n, ghn)


def gru_cell(x, h, w, u, bx, bh, mask=None) -> Tensor:
    """Gated recurrent update. Rows with ``mask == 0`` keep their previous state."""
    x, h, w, u, bx, bh = (_wrap(t) for t in (x, h, w, u, bx, bh))
    hd = h.shape[1]
    if (
        x.data.ndim != 2
        or h.data.ndim != 2
        or x.shape[0] != h.shape[0]
        or w.shape != (x.shape[1], 3 * hd)
        or u.shape != (hd, 3 * hd)
        or bx.shape != (3 * hd,)
        or bh.shape != (3 * hd,)
    ):
        raise ShapeError(
            f"gru_cell: x {x.shape}, h {h.shape}, w {w.shape}, u {u.shape}, bx {bx.shape}, bh {bh.shape}"
        )
    new_h, (r, z, n, ghn) = gru_forward_np(x.data, h.data, w.data, u.data, bx.data, bh.data)
    m = None
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
        new_h = m * new_h + (1.0 - m) * h.data

    def backward(g):
        gc = g if m is None else g * m
        dz = gc * (h.data - n)
        dn = gc * (1.0 - z)
        dan = dn * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgx = np.concatenate([dar, daz, dan], axis=1)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        dh = gc * z + dgh @ u.data.T
        if m is not None:
            dh = dh + g * (1.0 - m)
        return (dgx @ w.data.T, dh, x.data.T @ dgx, h.data.T @ dgh, dgx.sum(axis=0), dgh.sum(axis=0))

    return _result(new_h, (x, h, w, u, bx, bh), backward)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _wrap(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def take(x, key) -> Tensor:
    """Basic (slice / integer) indexing."""
    x = _wrap(x)
    out = x.data[key]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _result(np.array(out, copy=True), (x,), backward)


def gru_recurrence(gx, h0, u, bh, mask=None, reverse: bool = False) -> Tensor:
    """Run the GRU recurrence over precomputed input projections.

    ``gx`` is (T, B, 3H) = x_t @ W + b_x for every step, so only the hidden
    projection is computed inside the loop. Returns all states, (T, B, H),
    indexed by original time even when ``reverse`` is set. Equivalent to
    chaining :func:`gru_cell` step by step.
    """
    gx, h0, u, bh = (_wrap(t) for t in (gx, h0, u, bh))
    if gx.data.ndim != 3:
        raise ShapeError(f"gru_recurrence: gx must be (T, B, 3H), got {gx.shape}")
    t_len, b, h3 = gx.shape
    hd = h3 // 3
    if h0.shape != (b, hd) or u.shape != (hd, h3) or bh.shape != (h3,) or h3 != 3 * hd:
        raise ShapeError(f"gru_recurrence: gx {gx.shape}, h0 {h0.shape}, u {u.shape}, bh {bh.shape}")
    m = np.ones((t_len, b)) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.shape != (t_len, b):
        raise ShapeError(f"gru_recurrence: mask {m.shape} vs (T, B) = {(t_len, b)}")
    m = np.ascontiguousarray(m)
    ud, bhd, gxd = u.data, bh.data, np.ascontiguousarray(gx.data)
    states, prev, gates, ghn_all = _recur_fwd_np(gxd, np.ascontiguousarray(h0.data), np.ascontiguousarray(ud), bhd, m, reverse)

    def backward(g):
        dgx, dgh, carry = _recur_bwd_np(np.ascontiguousarray(g), prev, gates, ghn_all, np.ascontiguousarray(ud.T), m, reverse)
        flat_dgh = dgh.reshape(-1, h3)
        du = prev.reshape(-1, hd).T @ flat_dgh
        return (dgx, carry, du, flat_dgh.sum(axis=0))

    return _result(states, (gx, h0, u, bh), backward)


def _recur_fwd_np(gxd, h, ud, bhd, m, reverse):
    t_len, b, h3 = gxd.shape
    hd = h3 // 3
    m3 = m[:, :, None]
    states = np.empty((t_len, b, hd))
    prev = np.empty((t_len, b, hd))
    gates = np.empty((t_len, b, h3))  # r, z, n
    ghn_all = np.empty((t_len, b, hd))
    for t in range(t_len - 1, -1, -1) if reverse else range(t_len):
        gh = h @ ud + bhd
        g_t = gxd[t]
        rz = _sigmoid(g_t[:, : 2 * hd] + gh[:, : 2 * hd])
        r, z = rz[:, :hd], rz[:, hd:]
        ghn = gh[:, 2 * hd :]
        n = np.tanh(g_t[:, 2 * hd :] + r * ghn)
        hn = n + z * (h - n)
        mt = m3[t]
        prev[t] = h
        h = mt * hn + (1.0 - mt) * h
        states[t] = h
        gates[t, :, : 2 * hd] = rz
        gates[t, :, 2 * hd :] = n
        ghn_all[t] = ghn
    return states, prev, gates, ghn_all


def _recur_bwd_np(g, prev, gates, ghn_all, u_t, m, reverse):
    t_len, b, hd = g.shape
    m3 = m[:, :, None]
    dgx = np.empty((t_len, b, 3 * hd))
    dgh = np.empty_like(dgx)
    carry = np.zeros((b, hd))
    for t in range(t_len) if reverse else range(t_len - 1, -1, -1):
        gt = g[t] + carry
        mt = m3[t]
        gc = gt * mt
        r, z, n = gates[t, :, :hd], gates[t, :, hd : 2 * hd], gates[t, :, 2 * hd :]
        dz = gc * (prev[t] - n)
        dan = gc * (1.0 - z) * (1.0 - n * n)
        dar = dan * ghn_all[t] * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgx[t, :, :hd] = dar
        dgx[t, :, hd : 2 * hd] = daz
        dgx[t, :, 2 * hd :] = dan
        dgh[t, :, : 2 * hd] = dgx[t, :, : 2 * hd]
        dgh[t, :, 2 * hd :] = dan * r
        carry = gc * z + dgh[t] @ u_t + gt * (1.0 - mt)
    return dgx, dgh, carry
