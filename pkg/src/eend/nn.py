"""Reverse-mode differentiation for the handful of layers the model needs.

A :class:`Tape` records every operation applied to its :class:`Node` objects.
Calling :meth:`Tape.backward` on a scalar node walks the record in reverse
creation order, which is a valid topological order because a node can only
consume nodes created before it. The tape is released afterwards; touching
it again raises :class:`~eend.exceptions.TapeError`.

LSTM recurrences are recorded as a single fused op with a hand-written
backward pass; everything else is elementwise or an affine map.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ShapeError, TapeError


class Node:
    __slots__ = ("value", "grad", "tape", "parents", "backward_fn", "name")

    def __init__(self, value, tape, parents=(), backward_fn=None, name=None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} shape={self.value.shape}>"


class Tape:
    """Records operations for one forward/backward pass.

    With ``record=False`` operations still compute values but keep no
    closures, which is what inference uses.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: list[Node] = []
        self.released = False

    def _check(self):
        if self.released:
            raise TapeError("tape has been released by backward(); record a new pass")

    def variable(self, value, name=None) -> Node:
        self._check()
        node = Node(np.asarray(value, dtype=np.float64), self, name=name)
        if self.record:
            self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        self._check()
        return Node(np.asarray(value, dtype=np.float64), self)

    def push(self, value, parents, backward_fn) -> Node:
        self._check()
        if not self.record:
            return Node(value, self)
        node = Node(value, self, parents, backward_fn)
        self.nodes.append(node)
        return node

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradients of scalar `loss` for every named variable on the tape."""
        self._check()
        if not self.record:
            raise TapeError("tape was created with record=False")
        if loss.tape is not self:
            raise TapeError("loss node belongs to a different tape")
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        grads = {}
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            if node.backward_fn is not None:
                for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                    if g is None or parent.tape is not self:
                        continue
                    parent.grad = g if parent.grad is None else parent.grad + g
            elif node.name is not None:
                grads[node.name] = node.grad
        for node in self.nodes:
            if node.backward_fn is None and node.name is not None and node.name not in grads:
                grads[node.name] = np.zeros_like(node.value)
        self.nodes = []
        self.released = True
        return grads


def _tape_of(*nodes) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise TapeError("operands belong to different tapes")
    return tape


def affine(x: Node, W: Node, b: Node | None = None) -> Node:
    """Row-wise ``x @ W.T + b``."""
    if x.value.ndim != 2 or W.value.ndim != 2 or x.value.shape[1] != W.value.shape[1]:
        raise ShapeError(f"affine: input {x.value.shape} incompatible with W {W.value.shape}")
    if b is not None and b.value.shape != (W.value.shape[0],):
        raise ShapeError(f"affine: bias {b.value.shape} does not match W {W.value.shape}")
    tape = _tape_of(x, W) if b is None else _tape_of(x, W, b)
    out = x.value @ W.value.T
    if b is not None:
        out = out + b.value

    def backward(g):
        grads = [g @ W.value, g.T @ x.value]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    return tape.push(out, (x, W) if b is None else (x, W, b), backward)


def _sigmoid(a):
    # Split branches keep exp() from overflowing for large |a|.
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Node) -> Node:
    s = _sigmoid(x.value)
    return x.tape.push(s, (x,), lambda g: [g * s * (1.0 - s)])


def tanh(x: Node) -> Node:
    t = np.tanh(x.value)
    return x.tape.push(t, (x,), lambda g: [g * (1.0 - t * t)])


def l2_normalize_rows(x: Node, eps: float = 1e-12) -> Node:
    """Divide every row by ``max(||row||_2, eps)``; all-zero rows stay zero."""
    norms = np.sqrt(np.sum(x.value * x.value, axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    y = x.value / denom
    clipped = norms <= eps

    def backward(g):
        proj = np.sum(g * y, axis=1, keepdims=True)
        return [np.where(clipped, g / denom, (g - y * proj) / denom)]

    return x.tape.push(y, (x,), backward)


def concat(a: Node, b: Node) -> Node:
    tape = _tape_of(a, b)
    k = a.value.shape[1]
    return tape.push(
        np.concatenate([a.value, b.value], axis=1), (a, b), lambda g: [g[:, :k], g[:, k:]]
    )


def total(x: Node) -> Node:
    return x.tape.push(np.asarray(x.value.sum()), (x,), lambda g: [np.full_like(x.value, g)])


def combine(terms: list[tuple[float, Node]]) -> Node:
    """Weighted sum ``sum(w * node)`` of same-shaped nodes."""
    tape = _tape_of(*[n for _, n in terms])
    value = sum(w * n.value for w, n in terms)
    weights = [w for w, _ in terms]
    return tape.push(np.asarray(value), tuple(n for _, n in terms),
                     lambda g: [w * g for w in weights])


def scalar_op(inputs: tuple[Node, ...], value: float, input_grads) -> Node:
    """Attach a scalar computed outside the tape, given its gradients w.r.t. `inputs`.

    `input_grads` is the list of ``d value / d input`` arrays; they are scaled
    by the incoming gradient during backward.
    """
    tape = _tape_of(*inputs)
    return tape.push(np.asarray(float(value)), inputs,
                     lambda g: [float(g) * gi if gi is not None else None for gi in input_grads])


@dataclass
class LstmParams:
    """Weights of one LSTM direction.

    Gate blocks along the first axis are ordered input, forget, output, cell.
    """

    W_ih: np.ndarray
    W_hh: np.ndarray
    b: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.W_hh.shape[1]

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "LstmParams":
        k = 1.0 / np.sqrt(hidden)
        b = rng.uniform(-k, k, 4 * hidden)
        b[hidden:2 * hidden] = 1.0
        return cls(
            rng.uniform(-k, k, (4 * hidden, input_dim)),
            rng.uniform(-k, k, (4 * hidden, hidden)),
            b,
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden: int) -> "LstmParams":
        return cls(np.zeros((4 * hidden, input_dim)), np.zeros((4 * hidden, hidden)),
                   np.zeros(4 * hidden))


def lstm(x: Node, W_ih: Node, W_hh: Node, b: Node, reverse: bool = False) -> Node:
    """Run one LSTM direction over the rows of `x` from a zero state.

    With ``reverse=True`` the sequence is consumed last-to-first and the
    outputs are returned in the original time order.
    """
    tape = _tape_of(x, W_ih, W_hh, b)
    T = x.value.shape[0]
    H = W_hh.value.shape[1]
    if T == 0:
        raise ShapeError("lstm: empty input sequence")
    if W_ih.value.shape != (4 * H, x.value.shape[1]) or W_hh.value.shape != (4 * H, H):
        raise ShapeError(
            f"lstm: W_ih {W_ih.value.shape}, W_hh {W_hh.value.shape} mismatch input {x.value.shape}"
        )
    order = np.arange(T)[::-1] if reverse else np.arange(T)
    pre = (x.value @ W_ih.value.T + b.value)[order]
    Whh_T = W_hh.value.T
    gates = np.empty((T, 4 * H))
    cells = np.empty((T, H))
    hidden = np.empty((T, H))
    h = np.zeros(H)
    c = np.zeros(H)
    for s in range(T):
        a = pre[s] + h @ Whh_T
        sg = _sigmoid(a[:3 * H])
        g = np.tanh(a[3 * H:])
        c = sg[H:2 * H] * c + sg[:H] * g
        h = sg[2 * H:] * np.tanh(c)
        gates[s, :3 * H] = sg
        gates[s, 3 * H:] = g
        cells[s] = c
        hidden[s] = h
    out = np.empty_like(hidden)
    out[order] = hidden

    def backward(grad_out):
        gh = grad_out[order]
        W = W_hh.value
        tanh_c = np.tanh(cells)
        d_pre = np.empty((T, 4 * H))
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        zero = np.zeros(H)
        for s in range(T - 1, -1, -1):
            i, f, o = gates[s, :H], gates[s, H:2 * H], gates[s, 2 * H:3 * H]
            g = gates[s, 3 * H:]
            c_prev = cells[s - 1] if s > 0 else zero
            dh = gh[s] + dh_next
            tc = tanh_c[s]
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = d_pre[s]
            da[:H] = dc * g * i * (1.0 - i)
            da[H:2 * H] = dc * c_prev * f * (1.0 - f)
            da[2 * H:3 * H] = dh * tc * o * (1.0 - o)
            da[3 * H:] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            dh_next = da @ W
        h_prev = np.vstack([np.zeros((1, H)), hidden[:-1]])
        d_Whh = d_pre.T @ h_prev
        d_pre_time = np.empty_like(d_pre)
        d_pre_time[order] = d_pre
        return [d_pre_time @ W_ih.value, d_pre_time.T @ x.value, d_Whh, d_pre.sum(axis=0)]

    return tape.push(out, (x, W_ih, W_hh, b), backward)


def blstm(x: Node, fw: tuple[Node, Node, Node], bw: tuple[Node, Node, Node]) -> Node:
    """Concatenate forward and backward LSTM outputs per time step (width 2H)."""
    return concat(lstm(x, *fw), lstm(x, *bw, reverse=True))


def lstm_forward(params: LstmParams, inputs, direction: str = "forward") -> np.ndarray:
    """Plain-array convenience wrapper around :func:`lstm`."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    tape = Tape(record=False)
    out = lstm(tape.constant(inputs), tape.constant(params.W_ih), tape.constant(params.W_hh),
               tape.constant(params.b), reverse=direction == "backward")
    return out.value


def blstm_layer(fw: LstmParams, bw: LstmParams, inputs) -> np.ndarray:
    return np.concatenate(
        [lstm_forward(fw, inputs, "forward"), lstm_forward(bw, inputs, "backward")], axis=1
    )


# Checkpoint layout (little-endian):
#   magic(8) version(u32) meta_len(u32) meta(json utf-8) n_params(u32)
#   per param: name_len(u16) name ndim(u8) shape(u64 * ndim) float64 data
_CKPT_MAGIC = b"EENDCKPT"
_CKPT_VERSION = 1


def save_params(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    chunks = [_CKPT_MAGIC, struct.pack("<II", _CKPT_VERSION, len(meta_bytes)), meta_bytes,
              struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    try:
        version, meta_len = struct.unpack_from("<II", raw, 8)
        if version != _CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 16
        meta = json.loads(raw[pos:pos + meta_len].decode())
        pos += meta_len
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        params = {}
        for _ in range(n):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + name_len].decode()
            pos += name_len
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
            pos += 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f8", count=count, offset=pos)
            pos += 8 * count
            params[name] = data.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return params, meta
