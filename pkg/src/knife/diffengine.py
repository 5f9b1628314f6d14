"""Minimal reverse-mode differentiation engine and SGD optimizer.

Tensors wrap float64 numpy arrays and record their parents plus a backward
rule as ops are applied; `backward(loss)` topologically sorts the implicit
graph and accumulates exact gradients into every requires_grad leaf. There is
deliberately no broadcasting: each op states its shape rule and rejects
anything else, which keeps the gradient rules auditable.

Also home to the on-disk parameter format: little-endian, magic "KNIF",
format version, then named float64 tensors.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    CorruptionError,
    FormatError,
    GraphError,
    InvalidInputError,
    NumericError,
)

_node_counter = 0
_grad_enabled = True


class no_grad:
    """Context manager disabling graph recording (inference passes)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(name, f"non-finite values entering graph at '{name}'")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name + ".detached")

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_node(data: np.ndarray, parents, backward, opname: str) -> Tensor:
    global _node_counter
    _node_counter += 1
    name = f"{opname}#{_node_counter}"
    # A non-finite entry makes the sum non-finite, so this is a cheap exact
    # detector at the value ranges the engine works in.
    if not np.isfinite(data.sum()) and not np.all(np.isfinite(data)):
        raise NumericError(name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = name
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def topo_sort(root: Tensor) -> list[Tensor]:
    """Topological order of the graph below root (children after parents)."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from loss.

    Gradients are fresh per call: nodes of this graph have their .grad reset
    before accumulation, so parameters reused across steps never carry stale
    gradients.
    """
    if loss.data.size != 1:
        raise InvalidInputError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = topo_sort(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)


def _accum(t: Tensor, g: np.ndarray) -> None:
    # Accumulation never mutates in place, so sharing g across parents is safe.
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


# ------------------------------------------------------------------ primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise GraphError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _make_node(a.data + b.data, (a, b), bwd, "add")


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise GraphError(f"subtract: shape mismatch {a.data.shape} vs {b.data.shape}")

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _make_node(a.data - b.data, (a, b), bwd, "subtract")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def bwd(g):
        _accum(a, c * g)

    return _make_node(c * a.data, (a,), bwd, "scale")


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    if n == 0:
        raise GraphError("mean of empty tensor")

    def bwd(g):
        _accum(a, np.full_like(a.data, float(g) / n))

    return _make_node(np.asarray(a.data.mean()), (a,), bwd, "mean")


def frobenius_sq(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, 2.0 * float(g) * a.data)

    return _make_node(np.asarray(np.sum(a.data * a.data)), (a,), bwd, "frobenius_sq")


def mse(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise InvalidInputError(f"mse: shape mismatch {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size

    def bwd(g):
        scaled = (2.0 * float(g) / n) * diff
        _accum(a, scaled)
        _accum(b, -scaled)

    return _make_node(np.asarray(np.mean(diff * diff)), (a, b), bwd, "mse")


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log softmax probability of the true class."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2:
        raise InvalidInputError(f"logits must be (batch, classes), got {logits.data.shape}")
    batch, n_classes = logits.data.shape
    if labels.shape != (batch,):
        raise InvalidInputError(f"labels shape {labels.shape} incompatible with batch {batch}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise InvalidInputError("label outside [0, n_classes)")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    expz = np.exp(z)
    sumexp = expz.sum(axis=1, keepdims=True)
    log_probs = z - np.log(sumexp)
    nll = -log_probs[np.arange(batch), labels].mean()

    def bwd(g):
        grad = expz / sumexp
        grad[np.arange(batch), labels] -= 1.0
        _accum(logits, grad * (float(g) / batch))

    return _make_node(np.asarray(nll), (logits,), bwd, "softmax_cross_entropy")


def elu(a) -> Tensor:
    a = as_tensor(a)
    neg_exp = np.minimum(a.data, 0.0)
    np.exp(neg_exp, out=neg_exp)  # 1 on the positive side
    pos = a.data > 0.0
    out = np.where(pos, a.data, neg_exp - 1.0)

    def bwd(g):
        _accum(a, g * np.where(pos, 1.0, neg_exp))

    return _make_node(out, (a,), bwd, "elu")


def flatten(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim < 2:
        raise GraphError(f"flatten expects rank >= 2, got {a.data.shape}")
    shape = a.data.shape

    def bwd(g):
        _accum(a, g.reshape(shape))

    return _make_node(a.data.reshape(shape[0], -1).copy(), (a,), bwd, "flatten")


def matmul(a, b, transpose_a=False, transpose_b=False) -> Tensor:
    """Matrix product with explicit shape rules.

    2-D x 2-D: plain product, optionally transposing either factor.
    2-D x 4-D: a is (s, c), b is (batch, f, c, t); contracts the channel axis
    (the spatial-mix layer). Transpose flags are not supported there.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 2 and b.data.ndim == 2:
        av = a.data.T if transpose_a else a.data
        bv = b.data.T if transpose_b else b.data
        if av.shape[1] != bv.shape[0]:
            raise GraphError(f"matmul: inner dims differ {av.shape} vs {bv.shape}")

        def bwd(g):
            if a.requires_grad:
                ga = g @ bv.T
                _accum(a, ga.T if transpose_a else ga)
            if b.requires_grad:
                gb = av.T @ g
                _accum(b, gb.T if transpose_b else gb)

        return _make_node(av @ bv, (a, b), bwd, "matmul")

    if a.data.ndim == 2 and b.data.ndim == 4 and not (transpose_a or transpose_b):
        s, c = a.data.shape
        if b.data.shape[2] != c:
            raise GraphError(
                f"matmul(mix): channel axis {b.data.shape[2]} != weight columns {c}"
            )
        out = np.einsum("sc,bfct->bfst", a.data, b.data, optimize=True)

        def bwd(g):
            if a.requires_grad:
                _accum(a, np.einsum("bfst,bfct->sc", g, b.data, optimize=True))
            if b.requires_grad:
                _accum(b, np.einsum("sc,bfst->bfct", a.data, g, optimize=True))

        return _make_node(out, (a, b), bwd, "matmul")

    raise GraphError(f"matmul: unsupported ranks {a.data.ndim} and {b.data.ndim}")


def add_bias(x, bias) -> Tensor:
    """Bias addition: (batch, n) + (n,), or (batch, f, c, t) + (f,) per filter."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.data.ndim != 1:
        raise GraphError(f"bias must be 1-D, got {bias.data.shape}")
    if x.data.ndim == 2:
        if x.data.shape[1] != bias.data.shape[0]:
            raise GraphError(f"add_bias: {x.data.shape} vs {bias.data.shape}")
        out = x.data + bias.data[None, :]

        def bwd(g):
            _accum(x, g)
            _accum(bias, g.sum(axis=0))

    elif x.data.ndim == 4:
        if x.data.shape[1] != bias.data.shape[0]:
            raise GraphError(f"add_bias: filter axis {x.data.shape} vs {bias.data.shape}")
        out = x.data + bias.data[None, :, None, None]

        def bwd(g):
            _accum(x, g)
            _accum(bias, g.sum(axis=(0, 2, 3)))

    else:
        raise GraphError(f"add_bias: unsupported rank {x.data.ndim}")
    return _make_node(out, (x, bias), bwd, "add_bias")


def conv1d_time(x, w, stride: int = 1) -> Tensor:
    """Temporal filter bank along the sample axis, valid padding.

    x: (batch, channels, t), w: (filters, kernel) ->
    (batch, filters, channels, t') with t' = (t - kernel)//stride + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 2:
        raise GraphError(f"conv1d_time: need (b,c,t) and (f,k), got {x.data.shape}, {w.data.shape}")
    kernel = w.data.shape[1]
    t_in = x.data.shape[2]
    if stride < 1 or kernel > t_in:
        raise GraphError(f"conv1d_time: kernel {kernel} / stride {stride} invalid for t={t_in}")
    xc = np.ascontiguousarray(x.data)
    wc = np.ascontiguousarray(w.data)
    out = np.asarray(_kernels.conv1d_forward(xc, wc, stride))

    def bwd(g):
        gc = np.ascontiguousarray(g)
        if x.requires_grad:
            _accum(x, np.asarray(_kernels.conv1d_backward_x(gc, wc, stride, t_in)))
        if w.requires_grad:
            _accum(w, np.asarray(_kernels.conv1d_backward_w(gc, xc, stride, kernel)))

    return _make_node(out, (x, w), bwd, "conv1d_time")


def avg_pool1d(x, width: int) -> Tensor:
    """Non-overlapping average pooling over the trailing time axis (rank 4)."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise GraphError(f"avg_pool1d expects rank 4, got {x.data.shape}")
    if width < 1 or width > x.data.shape[3]:
        raise GraphError(f"avg_pool1d: width {width} invalid for t={x.data.shape[3]}")
    b, f, c, t = x.data.shape
    t_out = t // width
    view = x.data[:, :, :, : t_out * width].reshape(b, f, c, t_out, width)
    out = view.mean(axis=4)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :, : t_out * width] = np.repeat(g / width, width, axis=3)
        _accum(x, gx)

    return _make_node(out, (x,), bwd, "avg_pool1d")


def take_rows(x, indices) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into place."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise GraphError(f"take_rows expects a 2-D tensor, got {x.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0])):
        raise GraphError("row indices out of range")

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accum(x, gx)

    return _make_node(x.data[idx].copy(), (x,), bwd, "take_rows")


def center_columns(v) -> Tensor:
    """Subtract each column's mean; the projection is its own adjoint."""
    v = as_tensor(v)
    if v.data.ndim != 2:
        raise GraphError(f"center_columns expects (n, d), got {v.data.shape}")

    def bwd(g):
        _accum(v, g - g.mean(axis=0, keepdims=True))

    return _make_node(v.data - v.data.mean(axis=0, keepdims=True), (v,), bwd, "center_columns")


# ------------------------------------------------------------- SGD optimizer


@dataclass
class SgdState:
    """Plain SGD with a step-decay schedule over epoch fractions.

    Each (fraction, multiplier) pair applies once the epoch index reaches
    round(fraction * total_epochs). No momentum.
    """

    lr: float
    total_epochs: int
    schedule: tuple = ((0.7, 0.1), (0.9, 0.1))
    epoch: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidInputError(f"learning rate must be positive, got {self.lr}")

    def lr_effective(self) -> float:
        lr = self.lr
        for fraction, mult in self.schedule:
            if self.epoch >= int(round(fraction * self.total_epochs)):
                lr *= mult
        return lr


def sgd_step(params: "ModelParams", grads: dict, state: SgdState) -> None:
    """In-place p <- p - lr_effective * g for every named parameter."""
    if set(grads) != set(params.tensors):
        missing = set(params.tensors) ^ set(grads)
        raise InvalidInputError(f"gradient set misaligned with params: {sorted(missing)}")
    lr = state.lr_effective()
    for name, tensor in params.tensors.items():
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise InvalidInputError(
                f"gradient shape {g.shape} != param shape {tensor.data.shape} for '{name}'"
            )
        tensor.data -= lr * g


def gradients(loss: Tensor, params: "ModelParams") -> dict:
    """Run backward and collect gradients for every parameter (zeros if unused)."""
    backward(loss)
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.tensors.items()
    }


# ----------------------------------------------------- parameter serialization

MAGIC = b"KNIF"
FORMAT_VERSION = 1


@dataclass
class ModelParams:
    """Named learnable tensors of one network (extractor + classifier head)."""

    tensors: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, named_arrays) -> "ModelParams":
        tensors = {}
        for name, arr in named_arrays.items():
            tensors[name] = Tensor(np.array(arr, dtype=np.float64), requires_grad=True, name=name)
        return cls(tensors)

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays({n: t.data.copy() for n, t in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def to_bytes(self) -> bytes:
        chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(self.tensors))]
        for name, tensor in self.tensors.items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(tensor.data, dtype="<f8")
            chunks.append(struct.pack("<H", len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack("<B", arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(arr.tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelParams":
        def need(offset, n, what):
            if offset + n > len(blob):
                raise CorruptionError(
                    f"truncated while reading {what}: need {offset + n} bytes, have {len(blob)}",
                    expected_bytes=offset + n,
                    actual_bytes=len(blob),
                )

        need(0, 4, "magic")
        if blob[:4] != MAGIC:
            raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
        need(4, 8, "header")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        off = 12
        arrays = {}
        for _ in range(count):
            need(off, 2, "name length")
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            need(off, name_len, "name")
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            need(off, 1, "rank")
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            need(off, 4 * rank, "dims")
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n_values = int(np.prod(dims)) if rank else 1
            need(off, 8 * n_values, f"values of '{name}'")
            values = np.frombuffer(blob, dtype="<f8", count=n_values, offset=off).copy()
            off += 8 * n_values
            arrays[name] = values.reshape(dims)
        return cls.from_arrays(arrays)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelParams":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()
