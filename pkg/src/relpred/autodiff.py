"""Dense 2-D reverse-mode differentiation on float64 numpy arrays.

Operations run eagerly. While a :class:`Tape` is active (``with Tape() as
tape:``) every operation touching a parameter (``requires_grad=True``) or a
recorded tensor is appended to the tape together with its backward rule;
``tape.backward(loss)`` then fills ``.grad`` on the parameters. Outside a
tape nothing is recorded, which is how inference runs.
"""
from __future__ import annotations

import struct
import threading
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None
        self._node = -1

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a 1x1 tensor")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}({self.rows}x{self.cols})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


class Tape:
    """Ordered record of operations for one forward pass."""

    _local = threading.local()

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    @classmethod
    def current(cls) -> "Tape | None":
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        stack = getattr(Tape._local, "stack", None)
        if stack is None:
            stack = Tape._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> None:
        if self.consumed:
            raise TapeError("cannot record onto a consumed tape")
        out._tape = self
        out._node = len(self.records)
        self.records.append((out, parents, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(param) into ``param.grad`` for every parameter."""
        if self.consumed:
            raise TapeError("backward() already ran for this forward pass")
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        self.consumed = True
        grads: dict[int, np.ndarray] = {loss._node: np.ones((1, 1))}
        for node in range(loss._node, -1, -1):
            g = grads.pop(node, None)
            if g is None:
                continue
            out, parents, fn = self.records[node]
            for parent, pg in zip(parents, fn(g)):
                if pg is None:
                    continue
                if parent._tape is self:
                    prev = grads.get(parent._node)
                    grads[parent._node] = pg if prev is None else prev + pg
                elif parent.requires_grad:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
        self.records.clear()


def backward(loss: Tensor) -> None:
    if loss._tape is None:
        raise TapeError("loss has no recorded history")
    loss._tape.backward(loss)


def _tracked(t: Tensor, tape: Tape) -> bool:
    return t.requires_grad or t._tape is tape


def _result(value: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable, op: str) -> Tensor:
    if not np.isfinite(value).all():
        raise NumericError(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = value
    out.grad = None
    out.requires_grad = False
    out.name = None
    out._tape = None
    out._node = -1
    tape = Tape.current()
    if tape is not None and any(_tracked(p, tape) for p in parents):
        tape.record(out, parents, backward_fn)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- primitives ----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _result(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g), "matmul")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a 1 x c row to every row of ``x``."""
    if bias.rows != 1 or bias.cols != x.cols:
        raise ShapeError(f"add_bias: {x.shape} + {bias.shape}")
    return _result(
        x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0, keepdims=True)), "add_bias"
    )


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), lambda g: (g * c,), "scale")


def shift(x: Tensor, c: float) -> Tensor:
    return _result(x.data + c, (x,), lambda g: (g,), "shift")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols: nothing to concatenate")
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise ShapeError("concat_cols: row counts differ")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bw, "concat_cols")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows: nothing to concatenate")
    cols = parts[0].cols
    if any(p.cols != cols for p in parts):
        raise ShapeError("concat_rows: column counts differ")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def bw(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bw, "concat_rows")


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of ``x`` by the scalar ``s[i, 0]``."""
    if s.cols != 1 or s.rows != x.rows:
        raise ShapeError(f"scale_rows: {x.shape} by {s.shape}")
    X, S = x.data, s.data
    return _result(
        X * S, (x, s), lambda g: (g * S, (g * X).sum(axis=1, keepdims=True)), "scale_rows"
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))  # overflow-free logistic
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def row_select(x: Tensor, index: Sequence[int] | np.ndarray) -> Tensor:
    """Rows ``x[index]`` (repeats allowed)."""
    idx = np.asarray(index, dtype=np.int64)
    if len(idx) and (idx.min() < 0 or idx.max() >= x.rows):
        raise ShapeError("row_select: index out of range")
    n = x.rows

    def bw(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _result(x.data[idx], (x,), bw, "row_select")


class SparseOneHot:
    """A 0/1 matrix of shape (n_rows, n_cols) with exactly one 1 per column.

    ``rows[j]`` is the row holding column j's nonzero.
    """

    def __init__(self, rows: Sequence[int] | np.ndarray, n_rows: int):
        self.rows = np.asarray(rows, dtype=np.int64)
        self.n_rows = n_rows
        if len(self.rows) and (self.rows.min() < 0 or self.rows.max() >= n_rows):
            raise ShapeError("SparseOneHot: row index out of range")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, len(self.rows))

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, np.arange(len(self.rows))] = 1.0
        return out


def sparse_matmul(a: SparseOneHot, x: Tensor, transpose: bool = False) -> Tensor:
    """``a @ x`` (scatter-add of x's rows), or ``a.T @ x`` (gather) if transpose."""
    rows = a.rows
    if transpose:
        if x.rows != a.n_rows:
            raise ShapeError(f"sparse_matmul: {a.shape}^T @ {x.shape}")
        n = x.rows

        def bw_t(g):
            out = np.zeros((n, g.shape[1]))
            np.add.at(out, rows, g)
            return (out,)

        return _result(x.data[rows], (x,), bw_t, "sparse_matmul")
    if x.rows != len(rows):
        raise ShapeError(f"sparse_matmul: {a.shape} @ {x.shape}")
    out = np.zeros((a.n_rows, x.cols))
    np.add.at(out, rows, x.data)
    return _result(out, (x,), lambda g: (g[rows],), "sparse_matmul")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(
        np.array([[x.data.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),), "sum_all"
    )


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.data.size)


# -- GRU ---------------------------------------------------------------------------

GRU_NAMES = ("x_r", "x_z", "x_n", "h_r", "h_z", "h_n", "b_r", "b_z", "b_xn", "b_hn")


def gru_cell(x: Tensor, hidden: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """One GRU step for a block of rows.

    r = sigmoid(x Wxr + h Whr + br), z = sigmoid(x Wxz + h Whz + bz),
    n = tanh(x Wxn + bxn + r * (h Whn + bhn)), out = (1 - z) * n + z * h.
    """
    if x.rows != hidden.rows:
        raise ShapeError(f"gru_cell: {x.rows} inputs vs {hidden.rows} hidden rows")
    if hidden.cols != p["h_r"].rows or x.cols != p["x_r"].rows:
        raise ShapeError("gru_cell: width mismatch")
    r = sigmoid(add_bias(x @ p["x_r"] + hidden @ p["h_r"], p["b_r"]))
    z = sigmoid(add_bias(x @ p["x_z"] + hidden @ p["h_z"], p["b_z"]))
    n = tanh(add_bias(x @ p["x_n"], p["b_xn"]) + r * add_bias(hidden @ p["h_n"], p["b_hn"]))
    return n + z * (hidden - n)


# -- optimiser ---------------------------------------------------------------------


class Adam:
    """Adam with bias correction; ``step`` consumes and clears gradients."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        missing = [p.name or repr(p) for p in self.params if p.grad is None]
        if missing:
            raise TapeError(f"no gradient for: {', '.join(missing)}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is <= max_norm."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if total > max_norm:
        factor = max_norm / total
        for p in params:
            p.grad = p.grad * factor
    return total


# -- checkpoints -------------------------------------------------------------------
#
# Layout, little-endian:
#   8 bytes magic b"RELPRED\0", u32 format version,
#   u32 hop, u32 iterations, u32 dim, u32 relation count,
#   u32 metadata length + UTF-8 metadata (key=value lines),
#   u32 entry count, then per entry:
#   u16 name length + UTF-8 name, u32 rows, u32 cols, rows*cols f64 values.

MAGIC = b"RELPRED\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path: str | Path,
    params: Mapping[str, Tensor],
    header: Mapping[str, int],
    metadata: str = "",
) -> None:
    meta = metadata.encode("utf-8")
    parts = [
        MAGIC,
        struct.pack(
            "<IIIII",
            FORMAT_VERSION,
            header["hop"],
            header["iterations"],
            header["dim"],
            header["num_relations"],
        ),
        struct.pack("<I", len(meta)),
        meta,
        struct.pack("<I", len(params)),
    ]
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<II", t.rows, t.cols))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, int], str]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hop, iters, dim, n_rel = struct.unpack_from("<IIIII", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off = 28
    (mlen,) = struct.unpack_from("<I", data, off)
    off += 4
    metadata = data[off : off + mlen].decode("utf-8")
    off += mlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        rows, cols = struct.unpack_from("<II", data, off)
        off += 8
        n = rows * cols
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(rows, cols).astype(np.float64)
        off += 8 * n
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes")
    header = {"hop": hop, "iterations": iters, "dim": dim, "num_relations": n_rel}
    return arrays, header, metadata
