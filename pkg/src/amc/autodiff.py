"""Dense float64 tensors with a dynamic tape for reverse-mode gradients.

The tape is rebuilt on every forward pass: ops executed inside a
``with Tape() as tape:`` block are recorded in creation order (which is a
topological order), and ``tape.gradients(loss, params)`` replays them
backwards once. Outside any tape, ops just compute values, which is how
frozen branches (e.g. prototype support embeddings) are evaluated.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import (
    DisconnectedGraphWarning,
    EmptyMask,
    NonFinite,
    NotScalar,
    ShapeMismatch,
    ZeroVector,
)

_CHECKED = False


def set_checked(flag: bool) -> None:
    """Toggle NaN/Inf detection on every op output."""
    global _CHECKED
    _CHECKED = bool(flag)


_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """A dense float64 array, optionally tracked on the active tape."""

    __slots__ = ("data", "requires_grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,).
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out_id", "input_ids", "backward", "needs")

    def __init__(self, out_id, input_ids, backward, needs):
        self.out_id = out_id
        self.input_ids = input_ids
        self.backward = backward
        self.needs = needs


class Tape:
    """Recorded operations for one forward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._needs: dict[int, bool] = {}
        self._next_id = 0
        self._prev: "Tape | None" = None

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return None

    def _leaf(self, t: Tensor) -> int:
        if t._tape is not self or t.node_id is None:
            t._tape = self
            t.node_id = self._next_id
            self._next_id += 1
            self._needs[t.node_id] = t.requires_grad
        return t.node_id

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        input_ids = tuple(self._leaf(t) for t in inputs)
        needs = any(self._needs[i] for i in input_ids)
        out._tape = self
        out.node_id = self._next_id
        self._next_id += 1
        self._needs[out.node_id] = needs
        self._nodes.append(_Node(out.node_id, input_ids, backward, needs))

    def gradients(
        self, loss: Tensor, params: list[Tensor], warn: bool = True
    ) -> list[np.ndarray]:
        """Gradients of a scalar loss with respect to each parameter.

        Parameters that the loss does not depend on get zero gradients and,
        unless ``warn`` is off, a DisconnectedGraphWarning. Callers that
        legitimately pass off-path parameters (a multi-task step only
        touches a few task heads) disable the warning.
        """
        if loss.size != 1:
            raise NotScalar(f"loss has shape {loss.shape}")
        grads: dict[int, np.ndarray] = {}
        if loss._tape is self and loss.node_id is not None:
            grads[loss.node_id] = np.ones_like(loss.data)
            for node in reversed(self._nodes):
                if not node.needs:
                    continue
                g_out = grads.pop(node.out_id, None)
                if g_out is None:
                    continue
                for tensor_id, g in zip(node.input_ids, node.backward(g_out)):
                    if g is None or not self._needs[tensor_id]:
                        continue
                    if tensor_id in grads:
                        grads[tensor_id] = grads[tensor_id] + g
                    else:
                        grads[tensor_id] = g

        out: list[np.ndarray] = []
        for p in params:
            key = p.node_id if p._tape is self else None
            g = grads.get(key) if key is not None else None
            if g is None:
                if warn:
                    warnings.warn(
                        "parameter not reached by backward pass; returning zeros",
                        DisconnectedGraphWarning,
                        stacklevel=2,
                    )
                g = np.zeros_like(p.data)
            out.append(g)
        return out


def _finite_check(arr: np.ndarray) -> None:
    if _CHECKED and not np.all(np.isfinite(arr)):
        raise NonFinite("op produced NaN or Inf")


def _make(out_arr: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    _finite_check(out_arr)
    out = Tensor(out_arr)
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(out, inputs, backward)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2D@2D, 2D@1D and 1D@2D operands."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeMismatch(f"matmul {ad.shape} @ {bd.shape}")
        out = ad @ bd

        def back(g):
            return g @ bd.T, ad.T @ g

    elif ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeMismatch(f"matmul {ad.shape} @ {bd.shape}")
        out = ad @ bd

        def back(g):
            return np.outer(g, bd), ad.T @ g

    elif ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ShapeMismatch(f"matmul {ad.shape} @ {bd.shape}")
        out = ad @ bd

        def back(g):
            return bd @ g, np.outer(ad, g)

    else:
        raise ShapeMismatch(f"matmul unsupported ranks {ad.shape} @ {bd.shape}")
    return _make(out, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose needs a matrix, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also supports adding a row vector to a matrix."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        return _make(ad + bd, (a, b), lambda g: (g, g))
    if ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:
        return _make(ad + bd, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeMismatch(f"add {ad.shape} + {bd.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        return _make(ad - bd, (a, b), lambda g: (g, -g))
    raise ShapeMismatch(f"sub {ad.shape} - {bd.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise ShapeMismatch(f"mul {ad.shape} * {bd.shape}")
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    arrs = [t.data for t in tensors]
    out = np.concatenate(arrs, axis=axis)
    sizes = [arr.shape[axis] for arr in arrs]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = a.data[sl].copy()

    def back(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return (full,)

    return _make(out, (a,), back)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ids; gradient scatter-adds."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeMismatch("embedding table must be 2D")
    out = table.data[idx]

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(out, (table,), back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    return _make(y, (a,), lambda g: (g * (a.data > 0.0),))


def _softmax_backward(y):
    def back(g):
        return ((g - (g * y).sum(axis=-1, keepdims=True)) * y,)

    return back


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if axis not in (-1, a.data.ndim - 1):
        raise ShapeMismatch("softmax only supports the last axis")
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _make(y, (a,), _softmax_backward(y))


def masked_softmax(a: Tensor, mask) -> Tensor:
    """Softmax along the last axis restricted to positions where mask == 1.

    Masked-out positions get probability exactly 0; the rest sums to 1.
    Masked scores are treated as -inf rather than multiplied by 0, which
    would leak weight through exp(0) = 1.
    """
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    x = a.data
    if m.shape != x.shape:
        raise ShapeMismatch(f"mask shape {m.shape} vs scores {x.shape}")
    on = m > 0.5
    if not on.any(axis=-1).all():
        raise EmptyMask("mask selects no positions along the softmax axis")
    neg = np.where(on, x, -np.inf)
    z = neg - neg.max(axis=-1, keepdims=True)
    e = np.where(on, np.exp(np.where(on, z, 0.0)), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)
    return _make(y, (a,), _softmax_backward(y))


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = a.data.size
        out = np.asarray(a.data.mean())

        def back(g):
            return (np.full_like(a.data, float(g) / n),)

    else:
        n = a.data.shape[axis]
        out = a.data.mean(axis=axis)

        def back(g):
            return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _make(out, (a,), back)


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        out = np.asarray(a.data.sum())

        def back(g):
            return (np.full_like(a.data, float(g)),)

    else:
        out = a.data.sum(axis=axis)

        def back(g):
            return (np.repeat(np.expand_dims(g, axis), a.data.shape[axis], axis=axis),)

    return _make(out, (a,), back)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two vectors, a scalar in [-1, 1]."""
    ud, vd = u.data, v.data
    if ud.ndim != 1 or vd.ndim != 1 or ud.shape != vd.shape:
        raise ShapeMismatch(f"cosine needs equal-length vectors, got {ud.shape}, {vd.shape}")
    nu = float(np.linalg.norm(ud))
    nv = float(np.linalg.norm(vd))
    if nu < 1e-12 or nv < 1e-12:
        raise ZeroVector("cosine of a (near-)zero vector")
    c = float(ud @ vd) / (nu * nv)

    def back(g):
        g = float(g)
        gu = g * (vd / (nu * nv) - c * ud / (nu * nu))
        gv = g * (ud / (nu * nv) - c * vd / (nv * nv))
        return gu, gv

    return _make(np.asarray(c), (u, v), back)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log softmax probability of the gold label."""
    x = logits.data
    if x.ndim != 1:
        raise ShapeMismatch(f"cross_entropy expects a logit vector, got {x.shape}")
    if not 0 <= label < x.shape[0]:
        raise ShapeMismatch(f"label {label} out of range for {x.shape[0]} classes")
    z = x - x.max()
    e = np.exp(z)
    p = e / e.sum()
    loss = -np.log(p[label])

    def back(g):
        gp = p.copy()
        gp[label] -= 1.0
        return (float(g) * gp,)

    return _make(np.asarray(loss), (logits,), back)


def stack_rows(vectors: list[Tensor]) -> Tensor:
    """Stack 1D tensors into a matrix, one row each."""
    return concat([reshape(v, (1, v.shape[0])) for v in vectors], axis=0)
