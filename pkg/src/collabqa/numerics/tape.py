"""Primitive tensor operations recorded on a tape (a Wengert list).

Every operation validates shapes, evaluates eagerly on float64 numpy
arrays and, when the tape records, appends ``(op, input refs, output ref,
vjp)`` so :meth:`Tape.backward` can sweep the list in reverse.  A tape
created with ``record=False`` runs the identical forward math but retains
nothing, which keeps inference passes cheap.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

__all__ = ["LSTM_PARAM_KEYS", "Node", "Tape"]

# Gate tensors expected by lstm_step: per gate (input i, forget f, output o,
# candidate g) an input transform w_*, a recurrent transform u_* and a bias.
LSTM_PARAM_KEYS = (
    "w_i", "u_i", "b_i",
    "w_f", "u_f", "b_f",
    "w_o", "u_o", "b_o",
    "w_g", "u_g", "b_g",
)

_LOG_FLOOR = 1e-300


class Node:
    """A tensor produced on a tape.  Treat ``data`` as immutable."""

    __slots__ = ("data", "ref")

    def __init__(self, data: np.ndarray, ref: int):
        self.data = data
        self.ref = ref

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Node(ref={self.ref}, shape={self.data.shape})"


def _as_f64(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


class Tape:
    """Records primitive applications captured during one forward pass."""

    def __init__(self, record: bool = True):
        self.record = record
        self._entries: list[tuple[str, tuple[int, ...], int, Callable]] = []
        self._params: dict[str, Node] = {}
        self._n_nodes = 0

    # ------------------------------------------------------------------ leafs

    def _node(self, data: np.ndarray) -> Node:
        node = Node(data, self._n_nodes)
        self._n_nodes += 1
        return node

    def leaf(self, value) -> Node:
        """A constant input; no gradient flows into it."""
        return self._node(_as_f64(value))

    def param(self, name: str, value: np.ndarray) -> Node:
        """A named differentiable leaf; gradients are collected per name."""
        if name in self._params:
            raise ValueError(f"parameter {name!r} already on tape")
        node = self._node(_as_f64(value))
        self._params[name] = node
        return node

    def _apply(self, op: str, inputs: tuple[Node, ...], data: np.ndarray,
               vjp: Callable) -> Node:
        out = self._node(data)
        if self.record:
            self._entries.append((op, tuple(n.ref for n in inputs), out.ref, vjp))
        return out

    @property
    def operations(self) -> list[tuple[str, tuple[int, ...], int]]:
        """The recorded (op, input refs, output ref) triples, in order."""
        return [(op, ins, out) for op, ins, out, _ in self._entries]

    # ------------------------------------------------------------- arithmetic

    def add(self, a: Node, b: Node) -> Node:
        data = a.data + b.data

        def vjp(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

        return self._apply("add", (a, b), data, vjp)

    def sub(self, a: Node, b: Node) -> Node:
        data = a.data - b.data

        def vjp(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

        return self._apply("sub", (a, b), data, vjp)

    def mul(self, a: Node, b: Node) -> Node:
        data = a.data * b.data

        def vjp(g):
            return (_unbroadcast(g * b.data, a.data.shape),
                    _unbroadcast(g * a.data, b.data.shape))

        return self._apply("mul", (a, b), data, vjp)

    def scale(self, a: Node, factor: float) -> Node:
        factor = float(factor)
        data = a.data * factor

        def vjp(g):
            return (g * factor,)

        return self._apply("scale", (a,), data, vjp)

    def matmul(self, a: Node, b: Node) -> Node:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
        data = a.data @ b.data

        def vjp(g):
            return g @ b.data.T, a.data.T @ g

        return self._apply("matmul", (a, b), data, vjp)

    def transpose(self, a: Node) -> Node:
        if a.data.ndim != 2:
            raise ValueError(f"transpose expects a matrix, got shape {a.shape}")
        data = a.data.T.copy()

        def vjp(g):
            return (g.T,)

        return self._apply("transpose", (a,), data, vjp)

    # ------------------------------------------------------------ activations

    def relu(self, a: Node) -> Node:
        data = np.maximum(a.data, 0.0)

        def vjp(g):
            return (g * (a.data > 0.0),)

        return self._apply("relu", (a,), data, vjp)

    def tanh(self, a: Node) -> Node:
        data = np.tanh(a.data)

        def vjp(g):
            return (g * (1.0 - data * data),)

        return self._apply("tanh", (a,), data, vjp)

    def sigmoid(self, a: Node) -> Node:
        data = _stable_sigmoid(a.data)

        def vjp(g):
            return (g * data * (1.0 - data),)

        return self._apply("sigmoid", (a,), data, vjp)

    def activation(self, a: Node, kind: str) -> Node:
        if kind == "relu":
            return self.relu(a)
        if kind == "tanh":
            return self.tanh(a)
        if kind == "sigmoid":
            return self.sigmoid(a)
        raise ValueError(f"unsupported activation kind {kind!r}")

    def log(self, a: Node) -> Node:
        # Clamped below so log of a vanishing probability stays finite.
        clamped = np.maximum(a.data, _LOG_FLOOR)
        data = np.log(clamped)

        def vjp(g):
            return (g / clamped,)

        return self._apply("log", (a,), data, vjp)

    def softmax(self, a: Node) -> Node:
        """Row-wise softmax of a matrix, stabilized by max subtraction."""
        if a.data.ndim != 2:
            raise ValueError(f"softmax expects a matrix, got shape {a.shape}")
        shifted = a.data - a.data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)

        def vjp(g):
            inner = (g * probs).sum(axis=1, keepdims=True)
            return (probs * (g - inner),)

        return self._apply("softmax", (a,), probs, vjp)

    # -------------------------------------------------------------- reductions

    def sum(self, a: Node) -> Node:
        data = np.asarray(a.data.sum())

        def vjp(g):
            return (np.full_like(a.data, g),)

        return self._apply("sum", (a,), data, vjp)

    def mean(self, a: Node) -> Node:
        data = np.asarray(a.data.mean())
        inv = 1.0 / a.data.size

        def vjp(g):
            return (np.full_like(a.data, g * inv),)

        return self._apply("mean", (a,), data, vjp)

    def row_sum(self, a: Node) -> Node:
        """Sum over columns of a matrix, keeping a trailing unit axis."""
        if a.data.ndim != 2:
            raise ValueError(f"row_sum expects a matrix, got shape {a.shape}")
        data = a.data.sum(axis=1, keepdims=True)

        def vjp(g):
            return (np.broadcast_to(g, a.data.shape),)

        return self._apply("row_sum", (a,), data, vjp)

    # ------------------------------------------------------ shaping / indexing

    def concat_cols(self, parts: list[Node]) -> Node:
        if not parts:
            raise ValueError("concat_cols needs at least one input")
        rows = parts[0].shape[0]
        for p in parts:
            if p.data.ndim != 2 or p.shape[0] != rows:
                raise ValueError(
                    f"concat_cols row mismatch: {[p.shape for p in parts]}")
        widths = [p.shape[1] for p in parts]
        data = np.concatenate([p.data for p in parts], axis=1)

        def vjp(g):
            grads = []
            start = 0
            for w in widths:
                grads.append(g[:, start:start + w])
                start += w
            return tuple(grads)

        return self._apply("concat_cols", tuple(parts), data, vjp)

    def gather_rows(self, a: Node, index: np.ndarray) -> Node:
        """Pick rows ``a[index]``; repeated indices accumulate gradient."""
        index = np.asarray(index, dtype=np.int64)
        if a.data.ndim != 2 or index.ndim != 1:
            raise ValueError(
                f"gather_rows expects matrix and index vector, got {a.shape} / {index.shape}")
        if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
            raise ValueError(
                f"gather_rows index out of range for {a.shape[0]} rows")
        data = a.data[index]

        def vjp(g):
            z = np.zeros_like(a.data)
            np.add.at(z, index, g)
            return (z,)

        return self._apply("gather_rows", (a,), data, vjp)

    def segment_sum(self, a: Node, segments: np.ndarray, n_segments: int) -> Node:
        """Sum rows of ``a`` into ``n_segments`` buckets given per-row ids."""
        segments = np.asarray(segments, dtype=np.int64)
        if a.data.ndim != 2 or segments.shape != (a.shape[0],):
            raise ValueError(
                f"segment_sum expects matrix and one id per row, got {a.shape} / {segments.shape}")
        if segments.size and (segments.min() < 0 or segments.max() >= n_segments):
            raise ValueError(f"segment id out of range for {n_segments} segments")
        data = np.zeros((n_segments, a.shape[1]))
        np.add.at(data, segments, a.data)

        def vjp(g):
            return (g[segments],)

        return self._apply("segment_sum", (a,), data, vjp)

    def slice_rows(self, a: Node, start: int, stop: int) -> Node:
        """Contiguous row slice ``a[start:stop]``."""
        if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[0]:
            raise ValueError(
                f"slice_rows [{start}:{stop}] invalid for shape {a.shape}")
        data = a.data[start:stop]

        def vjp(g):
            z = np.zeros_like(a.data)
            z[start:stop] = g
            return (z,)

        return self._apply("slice_rows", (a,), data, vjp)

    def slice_cols(self, a: Node, start: int, stop: int) -> Node:
        """Contiguous column slice ``a[:, start:stop]``."""
        if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
            raise ValueError(
                f"slice_cols [{start}:{stop}] invalid for shape {a.shape}")
        data = a.data[:, start:stop]

        def vjp(g):
            z = np.zeros_like(a.data)
            z[:, start:stop] = g
            return (z,)

        return self._apply("slice_cols", (a,), data, vjp)

    def sparse_matmul(self, matrix, x: Node) -> Node:
        """Multiply by a constant scipy sparse matrix (no gradient into it)."""
        if x.data.ndim != 2 or matrix.shape[1] != x.shape[0]:
            raise ValueError(
                f"sparse_matmul shape mismatch: {matrix.shape} x {x.shape}")
        data = np.asarray(matrix @ x.data)

        def vjp(g):
            return (np.asarray(matrix.T @ g),)

        return self._apply("sparse_matmul", (x,), data, vjp)

    def pick(self, a: Node, index: np.ndarray) -> Node:
        """One element per row, ``a[r, index[r]]``, as a column vector."""
        index = np.asarray(index, dtype=np.int64)
        if a.data.ndim != 2 or index.shape != (a.shape[0],):
            raise ValueError(
                f"pick expects matrix and one index per row, got {a.shape} / {index.shape}")
        if index.size and (index.min() < 0 or index.max() >= a.shape[1]):
            raise ValueError(f"pick index out of range for {a.shape[1]} columns")
        rows = np.arange(a.shape[0])
        data = a.data[rows, index][:, None]

        def vjp(g):
            z = np.zeros_like(a.data)
            z[rows, index] = g[:, 0]
            return (z,)

        return self._apply("pick", (a,), data, vjp)

    # -------------------------------------------------------------- composites

    def affine(self, x: Node, weight: Node, bias: Node) -> Node:
        """``x @ weight + bias`` for a batch of row vectors."""
        if (x.data.ndim != 2 or weight.data.ndim != 2
                or x.shape[1] != weight.shape[0]
                or bias.shape != (weight.shape[1],)):
            raise ValueError(
                f"affine shape mismatch: x{x.shape} w{weight.shape} b{bias.shape}")
        return self.add(self.matmul(x, weight), bias)

    def softmax_cross_entropy(self, logits: Node,
                              targets: np.ndarray) -> tuple[Node, np.ndarray]:
        """Mean cross-entropy over rows; returns ``(loss, probabilities)``.

        Stabilized by row-max subtraction, so huge logits do not overflow.
        """
        x = logits.data
        if x.ndim != 2:
            raise ValueError(f"softmax_cross_entropy expects a matrix, got {x.shape}")
        targets = np.asarray(targets, dtype=np.int64)
        if targets.shape != (x.shape[0],):
            raise ValueError(
                f"targets shape {targets.shape} does not match {x.shape[0]} rows")
        if targets.size and (targets.min() < 0 or targets.max() >= x.shape[1]):
            raise ValueError(
                f"target index out of range for {x.shape[1]} classes")
        shifted = x - x.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        probs = np.exp(log_probs)
        rows = np.arange(x.shape[0])
        loss_value = np.asarray(-log_probs[rows, targets].mean())

        def vjp(g):
            d = probs.copy()
            d[rows, targets] -= 1.0
            return (d * (float(g) / x.shape[0]),)

        loss = self._apply("softmax_cross_entropy", (logits,), loss_value, vjp)
        return loss, probs

    def lstm_step(self, x: Node, h: Node, c: Node,
                  params: Mapping[str, Node]) -> tuple[Node, Node]:
        """One LSTM cell step on a batch of rows; returns ``(h', c')``."""
        if x.data.ndim != 2 or h.data.ndim != 2 or c.data.ndim != 2:
            raise ValueError(
                f"lstm_step expects row batches, got x{x.shape} h{h.shape} c{c.shape}")
        if h.shape != c.shape or x.shape[0] != h.shape[0]:
            raise ValueError(
                f"lstm_step shape mismatch: x{x.shape} h{h.shape} c{c.shape}")
        missing = [k for k in LSTM_PARAM_KEYS if k not in params]
        if missing:
            raise ValueError(f"lstm_step missing gate tensors: {missing}")

        def gate(w: str, u: str, b: str, kind: str) -> Node:
            pre = self.add(self.add(self.matmul(x, params[w]),
                                    self.matmul(h, params[u])), params[b])
            return self.activation(pre, kind)

        i = gate("w_i", "u_i", "b_i", "sigmoid")
        f = gate("w_f", "u_f", "b_f", "sigmoid")
        o = gate("w_o", "u_o", "b_o", "sigmoid")
        g = gate("w_g", "u_g", "b_g", "tanh")
        c_new = self.add(self.mul(f, c), self.mul(i, g))
        h_new = self.mul(o, self.tanh(c_new))
        return h_new, c_new

    # ---------------------------------------------------------------- backward

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar loss; returns gradients by node ref."""
        if not self.record:
            raise ValueError("cannot run backward on a non-recording tape")
        if loss.data.shape != ():
            raise ValueError(
                f"backward needs a scalar loss, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {loss.ref: np.ones(())}
        for _op, in_refs, out_ref, vjp in reversed(self._entries):
            g = grads.get(out_ref)
            if g is None:
                continue
            for ref, gi in zip(in_refs, vjp(g)):
                if gi is None:
                    continue
                if ref in grads:
                    grads[ref] = grads[ref] + gi
                else:
                    grads[ref] = gi
        return grads

    def gradients(self, loss: Node, store) -> dict[str, np.ndarray]:
        """Per-parameter gradients; parameters not reaching the loss get zeros."""
        by_ref = self.backward(loss)
        out: dict[str, np.ndarray] = {}
        for name in store.names():
            node = self._params.get(name)
            g = by_ref.get(node.ref) if node is not None else None
            if g is None:
                out[name] = np.zeros_like(store[name])
            else:
                out[name] = np.asarray(g, dtype=np.float64)
        return out
