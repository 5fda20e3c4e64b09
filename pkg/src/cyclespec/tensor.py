"""Dense float64 arrays with a reverse-mode gradient tape, plus Adam.

Only the handful of primitives the convolutional VAEs need are provided.
Operations are recorded on the innermost active :class:`GradientTape` when
any input requires a gradient; outside a tape they run as plain numpy.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with GradientTape() as tape:
    ...     loss = sq_dist(x, Tensor([0.0, 0.0]))
    >>> backward(tape, loss)[x]
    array([2., 4.])
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import FormatError, NumericsError, ShapeError, TapeError

CHECKPOINT_MAGIC = b"CSPC1"

_TAPES: list["GradientTape"] = []


class Tensor:
    """An immutable float64 array that may participate in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by python scalars")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)


def _not_scalar(t: Tensor) -> float:
    raise ShapeError(f"expected a scalar tensor, got shape {t.shape}")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class TapeNode:
    op: str
    output: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GradientTape:
    """Ordered record of primitive ops; usable as a context manager."""

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "GradientTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def _emit(op: str, out: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    if not np.all(np.isfinite(out)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise NumericsError(f"{op} produced non-finite values from finite inputs")
        raise NumericsError(f"{op} received non-finite input")
    result = Tensor(out)
    if _TAPES and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        _TAPES[-1].nodes.append(TapeNode(op, result, inputs, vjp))
    return result


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def backward(tape: GradientTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-accumulate d(loss)/d(leaf) for every leaf requiring a gradient.

    Leaves are tensors that enter the tape as inputs without being produced
    on it. Their ``.grad`` is overwritten and the same arrays are returned.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    position = None
    for i in range(len(tape.nodes) - 1, -1, -1):
        if tape.nodes[i].output is loss:
            position = i
            break
    if position is None:
        raise TapeError("loss was not produced on this tape")

    produced = {id(n.output) for n in tape.nodes[: position + 1]}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes[: position + 1]):
        g = grads.pop(id(node.output), None)
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out: dict[Tensor, np.ndarray] = {}
    for key, t in leaves.items():
        g = grads.get(key)
        t.grad = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64)
        out[t] = t.grad
    return out


# elementwise ----------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _emit("add_scalar", a.data + c, (a,), lambda g: (g,))
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _emit("scale", a.data * c, (a,), lambda g: (g * c,))
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _emit("log", out, (a,), lambda g: (g / ad,))


def log1p(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log1p(ad)
    return _emit("log1p", out, (a,), lambda g: (g / (1.0 + ad),))


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("sin", np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("cos", np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def softplus(a: Tensor) -> Tensor:
    ad = a.data
    out = np.logaddexp(0.0, ad)
    return _emit("softplus", out, (a,), lambda g: (g * _sigmoid(ad),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    ad = a.data
    factor = np.where(ad > 0, 1.0, slope)
    return _emit("leaky_relu", ad * factor, (a,), lambda g: (g * factor,))


# reductions -----------------------------------------------------------------

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _emit("sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _emit("mean", np.array(a.data.mean()), (a,),
                 lambda g: (np.full(shape, float(g) / n),))


def sq_dist(a: Tensor, b: Tensor) -> Tensor:
    """Sum of squared elementwise differences."""
    _same_shape("sq_dist", a, b)
    diff = a.data - b.data
    return _emit("sq_dist", np.array(np.dot(diff.ravel(), diff.ravel())), (a, b),
                 lambda g: (2.0 * float(g) * diff, -2.0 * float(g) * diff))


# structural -----------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(tensors)))

    return _emit("concat", out, tensors, vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ax = axis % a.ndim
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _emit("slice", a.data[index].copy(), (a,), vjp)


def channel_map(a: Tensor, matrix: np.ndarray) -> Tensor:
    """Left-multiply the channel axis by a constant matrix.

    ``a`` is ``(C, T)`` or ``(B, C, T)``; ``matrix`` is ``(C_out, C)``.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if a.ndim not in (2, 3) or m.ndim != 2 or m.shape[1] != a.shape[-2]:
        raise ShapeError(f"channel_map: matrix {m.shape} incompatible with {a.shape}")
    out = np.matmul(m, a.data)
    return _emit("channel_map", out, (a,), lambda g: (np.matmul(m.T, g),))


# convolution ----------------------------------------------------------------

def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis with zero padding.

    ``x`` is ``(C_in, T)`` or ``(B, C_in, T)``; ``kernels`` is
    ``(C_out, C_in, K)``; ``bias`` is ``(C_out,)``.
    """
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv1d: invalid stride={stride} padding={padding}")
    if x.ndim not in (2, 3) or kernels.ndim != 3 or bias.ndim != 1:
        raise ShapeError(f"conv1d: bad ranks {x.shape}, {kernels.shape}, {bias.shape}")
    batched = x.ndim == 3
    xd = x.data if batched else x.data[None]
    bsz, c_in, length = xd.shape
    c_out, k_in, k = kernels.shape
    if k_in != c_in or bias.shape[0] != c_out:
        raise ShapeError(f"conv1d: channels {x.shape} vs kernels {kernels.shape} / bias {bias.shape}")
    if k > length + 2 * padding:
        raise ShapeError(f"conv1d: kernel {k} longer than padded input {length + 2 * padding}")
    t_out = (length + 2 * padding - k) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    # im2col: (B, C_in, T_out, K) -> (B*T_out, C_in*K), one GEMM for the batch
    cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :t_out]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(bsz * t_out, c_in * k)
    w2 = kernels.data.reshape(c_out, c_in * k)
    out = (cols @ w2.T).reshape(bsz, t_out, c_out).transpose(0, 2, 1) + bias.data[None, :, None]

    def vjp(g):
        gb = g if batched else g[None]
        g2 = np.ascontiguousarray(gb.transpose(0, 2, 1)).reshape(bsz * t_out, c_out)
        grad_w = (g2.T @ cols).reshape(c_out, c_in, k)
        grad_b = g2.sum(axis=0)
        dcols = (g2 @ w2).reshape(bsz, t_out, c_in, k)
        dxp = np.zeros((bsz, c_in, length + 2 * padding))
        span = stride * (t_out - 1) + 1
        for j in range(k):
            dxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
        dx = dxp[:, :, padding:padding + length] if padding else dxp
        return (dx if batched else dx[0]), grad_w, grad_b

    return _emit("conv1d", out if batched else out[0], (x, kernels, bias), vjp)


# finite-difference checking -------------------------------------------------

def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
              rng: np.random.Generator | None = None, directions: int = 3) -> float:
    """Worst relative error between analytic and central-difference JVPs.

    ``fn`` maps Tensors to a Tensor; its output is contracted with a fixed
    random weight so every output element contributes.
    """
    rng = rng or np.random.default_rng(0)
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    probe = fn(*[Tensor(a) for a in arrays])
    weight = rng.standard_normal(probe.shape)

    def scalar(vals):
        return float(np.sum(fn(*[Tensor(v) for v in vals]).data * weight))

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with GradientTape() as tape:
        y = fn(*leaves)
        loss = sum(mul(y, Tensor(weight)))
    grads = backward(tape, loss)
    worst = 0.0
    for _ in range(directions):
        vs = [rng.standard_normal(a.shape) for a in arrays]
        analytic = np.sum([np.sum(grads.get(t, np.zeros_like(t.data)) * v) for t, v in zip(leaves, vs)])
        plus = scalar([a + h * v for a, v in zip(arrays, vs)])
        minus = scalar([a - h * v for a, v in zip(arrays, vs)])
        numeric = (plus - minus) / (2 * h)
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# optimizer ------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update. Parameters are rebound in place."""
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params[name].shape:
            raise ShapeError(f"{name}: grad {np.shape(g)} vs param {params[name].shape}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        if m.shape != p.shape:
            raise ShapeError(f"{name}: moment shape {m.shape} vs param {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        new = p.data - update
        new.flags.writeable = False
        p.data = new
    return params, state


# checkpoints ----------------------------------------------------------------

def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray]) -> None:
    """Write named float64 arrays atomically (temp file, then rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            for name in sorted(arrays):
                arr = np.asarray(arrays[name], dtype="<f8")
                raw = name.encode("utf-8")
                fh.write(struct.pack("<Q", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<Q", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                fh.write(np.ascontiguousarray(arr).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 8 * count > len(blob):
                raise FormatError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    return out
