"""Dense float64 tensors with tape-based reverse-mode differentiation.

Ops executed inside ``with Tape():`` are recorded whenever one of their inputs
requires a gradient.  The record order is already topological, so ``backward``
walks it once in reverse and every node is visited exactly once.  A tape can be
differentiated only once; the next forward pass builds a new one.

Tensors are immutable values: their buffers are read-only and every op
returns a fresh tensor.
"""
import contextvars
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config.constants import BCE_EPS, BN_EPS, NORM_EPS
from utils.errors import AutogradError, NumericError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("ndgrad_active_tape", default=None)


class Tensor:
    """An immutable float64 array, optionally tracked for gradients."""

    __slots__ = ("_data", "requires_grad", "name", "_tape")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, name or "tensor")
        arr.flags.writeable = False
        self._data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, op: str) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float64)
        _check_finite(arr, op)
        if arr.flags.writeable:
            arr.flags.writeable = False
        out = cls.__new__(cls)
        out._data = arr
        out.requires_grad = False
        out.name = op
        out._tape = None
        return out

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, name={self.name!r})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)


def _check_finite(arr: np.ndarray, where: str) -> None:
    if arr.size and not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced at {where}")


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ── Tape ──────────────────────────────────────────────────────────────────────

@dataclass
class TapeNode:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_fn: BackwardFn


class Tape:
    """Record of one forward pass.  Use as a context manager."""

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self.consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def record(self, node: TapeNode) -> None:
        if self.consumed:
            raise AutogradError("tape already differentiated; start a new forward pass")
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    out = Tensor._wrap(data, op)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.record(TapeNode(op, tuple(inputs), out, backward_fn))
    return out


def backward(loss: Tensor, wrt: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """Differentiate a scalar ``loss`` with respect to every tensor in ``wrt``.

    Parameters the loss does not depend on receive zero gradients.
    """
    if loss.size != 1:
        raise AutogradError(f"loss must be a scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise AutogradError("loss was not recorded on a tape")
    if tape.consumed:
        raise AutogradError("backward called twice on the same forward pass")
    tape.consumed = True

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for tensor, g_in in zip(node.inputs, node.backward_fn(g)):
            if g_in is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = g_in

    result: Dict[str, np.ndarray] = {}
    for name, tensor in wrt.items():
        g = grads.get(id(tensor))
        result[name] = np.zeros_like(tensor.data) if g is None else np.asarray(g, dtype=np.float64).reshape(tensor.shape)
        _check_finite(result[name], f"gradient of {name}")
    return result


# ── Linear algebra ────────────────────────────────────────────────────────────

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {a.shape} and {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    A, B = a.data, b.data

    def _backward(g: np.ndarray):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return _emit("matmul", A @ B, (a, b), _backward)


# ── Elementwise arithmetic ────────────────────────────────────────────────────

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    """a + b for equal shapes, a row bias (b 1-D over a's columns) or a scalar b."""
    a, b = as_tensor(a), as_tensor(b)
    mode = _binary_mode(a, b, "add")

    def _backward(g: np.ndarray):
        if mode == "same":
            return g, g
        if mode == "row":
            return g, g.sum(axis=0)
        return g, np.asarray(g.sum())

    return _emit("add", a.data + b.data, (a, b), _backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _binary_mode(a, b, "sub")

    def _backward(g: np.ndarray):
        if mode == "same":
            return g, -g
        if mode == "row":
            return g, -g.sum(axis=0)
        return g, np.asarray(-g.sum())

    return _emit("sub", a.data - b.data, (a, b), _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _binary_mode(a, b, "mul")
    A, B = a.data, b.data

    def _backward(g: np.ndarray):
        if mode == "same":
            return g * B, g * A
        if mode == "row":
            return g * B, (g * A).sum(axis=0)
        return g * B, np.asarray((g * A).sum())

    return _emit("mul", A * B, (a, b), _backward)


def _binary_mode(a: Tensor, b: Tensor, op: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "scalar"
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return "row"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def scale(a: ArrayLike, factor: float) -> Tensor:
    a = as_tensor(a)
    return _emit("scale", a.data * factor, (a,), lambda g: (g * factor,))


def add_const(a: ArrayLike, value: float) -> Tensor:
    a = as_tensor(a)
    return _emit("add_const", a.data + value, (a,), lambda g: (g,))


def row_scale(a: ArrayLike, w: ArrayLike) -> Tensor:
    """Multiply row i of a 2-D tensor by w[i]."""
    a, w = as_tensor(a), as_tensor(w)
    if a.ndim != 2 or w.ndim != 1 or w.shape[0] != a.shape[0]:
        raise ShapeError(f"row_scale: expected (n, k) and (n,), got {a.shape} and {w.shape}")
    A, W = a.data, w.data
    return _emit(
        "row_scale", A * W[:, None], (a, w),
        lambda g: (g * W[:, None], (g * A).sum(axis=1)),
    )


# ── Activations ───────────────────────────────────────────────────────────────

def leaky_relu(x: ArrayLike, slope: float) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data)
    return _emit("leaky_relu", out, (x,), lambda g: (np.where(positive, g, slope * g),))


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _emit("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _emit("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def softmax(logits: ArrayLike) -> Tensor:
    """Softmax of a 1-D tensor, or of every row of a 2-D tensor."""
    x = as_tensor(logits)
    if x.ndim not in (1, 2) or x.shape[-1] == 0:
        raise ShapeError(f"softmax needs a non-empty 1-D or 2-D input, got {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return _emit(
        "softmax", out, (x,),
        lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),),
    )


def l2_normalize(v: ArrayLike, eps: float = NORM_EPS) -> Tensor:
    """Scale a vector (or every row) to unit L2 norm; norms at or below eps pass through."""
    x = as_tensor(v)
    if x.ndim not in (1, 2):
        raise ShapeError(f"l2_normalize needs a 1-D or 2-D input, got {x.shape}")
    X = x.data
    norm = np.sqrt((X * X).sum(axis=-1, keepdims=True))
    active = norm > eps
    safe = np.where(active, norm, 1.0)
    out = np.where(active, X / safe, X)

    def _backward(g: np.ndarray):
        dot = (X * g).sum(axis=-1, keepdims=True)
        scaled = g / safe - X * dot / (safe ** 3)
        return (np.where(active, scaled, g),)

    return _emit("l2_normalize", out, (x,), _backward)


def clamp(x: ArrayLike, low: float, high: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)
    return _emit("clamp", np.clip(x.data, low, high), (x,), lambda g: (np.where(inside, g, 0.0),))


# ── Shape manipulation ────────────────────────────────────────────────────────

def reshape(x: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {original} to {shape}") from e
    return _emit("reshape", out, (x,), lambda g: (g.reshape(original),))


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from e
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _emit("concat", out, parts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack_columns(columns: Sequence[ArrayLike]) -> Tensor:
    """Stack M tensors of shape (n,) into one (n, M) tensor."""
    parts = [as_tensor(c) for c in columns]
    if not parts or any(p.ndim != 1 or p.shape != parts[0].shape for p in parts):
        raise ShapeError(f"stack_columns needs equal 1-D tensors, got {[p.shape for p in parts]}")
    out = np.stack([p.data for p in parts], axis=1)
    return _emit("stack_columns", out, parts, lambda g: tuple(g[:, j] for j in range(len(parts))))


def column(x: ArrayLike, j: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"column needs a 2-D tensor, got {x.shape}")

    def _backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, j] = g
        return (full,)

    return _emit("column", x.data[:, j], (x,), _backward)


def slice_columns(x: ArrayLike, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"slice_columns needs a 2-D tensor, got {x.shape}")

    def _backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _emit("slice_columns", x.data[:, start:stop], (x,), _backward)


# ── Indexing and segment reductions ───────────────────────────────────────────

def gather_rows(x: ArrayLike, index: np.ndarray) -> Tensor:
    """x[index] along the first axis; gradients scatter back to the selected rows only."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows index out of range for {x.shape[0]} rows")

    def _backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _emit("gather_rows", x.data[idx], (x,), _backward)


def segment_sum(x: ArrayLike, segment: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of x into ``num_segments`` buckets, in the order the rows appear."""
    x = as_tensor(x)
    seg = np.asarray(segment, dtype=np.int64)
    if seg.shape[0] != x.shape[0]:
        raise ShapeError(f"segment_sum: {x.shape[0]} rows but {seg.shape[0]} segment ids")
    out = np.zeros((num_segments,) + x.shape[1:], dtype=np.float64)
    np.add.at(out, seg, x.data)
    return _emit("segment_sum", out, (x,), lambda g: (g[seg],))


def segment_softmax(x: ArrayLike, segment: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of a 1-D tensor taken independently within each segment."""
    x = as_tensor(x)
    seg = np.asarray(segment, dtype=np.int64)
    if x.ndim != 1 or seg.shape != x.shape:
        raise ShapeError(f"segment_softmax needs matching 1-D inputs, got {x.shape} and {seg.shape}")
    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, seg, x.data)
    e = np.exp(x.data - peak[seg])
    total = np.zeros(num_segments)
    np.add.at(total, seg, e)
    out = e / total[seg]

    def _backward(g: np.ndarray):
        inner = np.zeros(num_segments)
        np.add.at(inner, seg, g * out)
        return (out * (g - inner[seg]),)

    return _emit("segment_softmax", out, (x,), _backward)


# ── Reductions and losses ─────────────────────────────────────────────────────

def sum_all(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _emit("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean_all(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    n = max(x.size, 1)
    return _emit("mean", np.asarray(x.data.sum() / n), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def bce_loss(p_hat: ArrayLike, target: ArrayLike, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    p = as_tensor(p_hat)
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"bce_loss: predictions {p.shape} vs targets {y.shape}")
    if p.size == 0:
        raise ShapeError("bce_loss needs at least one prediction")
    P = p.data
    pc = np.clip(P, eps, 1.0 - eps)
    n = p.size
    losses = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (P >= eps) & (P <= 1.0 - eps)

    def _backward(g: np.ndarray):
        d = -(y / pc - (1.0 - y) / (1.0 - pc)) / n
        return (np.where(inside, float(g) * d, 0.0),)

    return _emit("bce_loss", np.asarray(losses.sum() / n), (p,), _backward)


# ── Normalisation ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class BatchStats:
    mean: np.ndarray
    var: np.ndarray


def batch_norm(
    x: ArrayLike,
    gamma: ArrayLike,
    beta: ArrayLike,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = BN_EPS,
) -> Tuple[Tensor, Optional[BatchStats]]:
    """Per-column standardisation followed by scale/shift.

    Training mode uses the batch's own statistics and returns them so the
    caller can update running statistics; inference mode reads the running
    statistics and returns ``None``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    X, G = x.data, gamma.data
    n = X.shape[0]
    if training:
        if n < 2:
            raise ShapeError("batch_norm in train mode needs a batch of at least 2")
        mu = X.mean(axis=0)
        var = X.var(axis=0)
        stats: Optional[BatchStats] = BatchStats(mu, var)
    else:
        mu = np.asarray(running_mean, dtype=np.float64)
        var = np.asarray(running_var, dtype=np.float64)
        stats = None
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (X - mu) * inv_std
    out = xhat * G + beta.data

    def _backward(g: np.ndarray):
        g_xhat = g * G
        g_gamma = (g * xhat).sum(axis=0)
        g_beta = g.sum(axis=0)
        if training:
            g_x = inv_std / n * (n * g_xhat - g_xhat.sum(axis=0) - xhat * (g_xhat * xhat).sum(axis=0))
        else:
            g_x = g_xhat * inv_std
        return g_x, g_gamma, g_beta

    return _emit("batch_norm", out, (x, gamma, beta), _backward), stats


def parameters(arrays: Mapping[str, np.ndarray], trainable: Iterable[str]) -> Dict[str, Tensor]:
    """Wrap named arrays as tensors; names in ``trainable`` require gradients."""
    wanted = set(trainable)
    return {name: Tensor(arr, requires_grad=name in wanted, name=name) for name, arr in arrays.items()}
