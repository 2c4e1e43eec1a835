"""Dense tensors with tape-based reverse-mode differentiation.

Every op that touches a tensor with ``requires_grad`` appends a node to the
thread's active :class:`Tape`. :func:`backward` replays that tape in reverse
and consumes it; a fresh tape is installed for the next forward pass.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Raised on misuse of the computation tape."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


# ---------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable ops executed on one thread."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        if self.consumed:
            raise TapeError("cannot record on a consumed tape")
        self.nodes.append(_Node(out, inputs, backward))
        out._tape = self


_local = threading.local()


def active_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def new_tape() -> Tape:
    """Discard the active tape and start a fresh one."""
    _local.tape = Tape()
    return _local.tape


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        active_tape().record(out, inputs, backward)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the loss's tape."""
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss was not produced on a tape (no input requires grad)")
    if tape.consumed:
        raise TapeError("tape already consumed; run a new forward pass first")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        node.out.grad = g if node.out.grad is None else node.out.grad + g
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = gi if key not in grads else grads[key] + gi
            if inp._tape is not tape:
                leaves[key] = inp
    for key, t in leaves.items():
        g = grads.get(key)
        if g is not None:
            t.grad = g if t.grad is None else t.grad + g

    tape.consumed = True
    if getattr(_local, "tape", None) is tape:
        new_tape()


# ---------------------------------------------------------------------------
# elementwise and structural ops


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    return _result(
        ad / bd,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def log(a: Tensor) -> Tensor:
    """Natural log. Inputs must be positive; clamp first where that is not guaranteed."""
    ad = a.data
    if np.any(ad <= 0):
        raise ValueError("log of non-positive value; clamp the input first")
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _result(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def relu(a: Tensor) -> Tensor:
    ad = a.data
    mask = ad > 0
    return _result(np.where(mask, ad, 0).astype(ad.dtype, copy=False), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    ad = a.data
    y = np.exp(-np.logaddexp(0, -ad)).astype(ad.dtype, copy=False)
    return _result(y, (a,), lambda g: (g * y * (1 - y),))


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis)), (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return tensor_sum(a, axis) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] += g
        return (full,)

    return _result(a.data[index], (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner axis mismatch: {a.shape[1]} vs {b.shape[0]}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# ---------------------------------------------------------------------------
# layers


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weights + bias`` for ``x`` of shape (batch, in)."""
    if x.ndim != 2:
        raise ShapeError(f"fully_connected input must be (batch, features), got {x.shape}")
    if weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"fully_connected feature axis mismatch: input {x.shape[1]} vs weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"fully_connected bias must have shape ({weights.shape[1]},), got {bias.shape}")
    xd, wd = x.data, weights.data
    return _result(xd @ wd + bias.data, (x, weights, bias), lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _patches(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # (N, C, Hp, Wp) -> contiguous (N*Ho*Wo, C*K*K)
    n, c = xp.shape[:2]
    s0, s1, s2, s3 = xp.strides
    view = as_strided(xp, (n, ho, wo, c, k, k), (s0, s2 * stride, s3 * stride, s1, s2, s3), writeable=False)
    return view.reshape(n * ho * wo, c * k * k)


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if not padding:
        return np.ascontiguousarray(x)
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    xp[:, :, padding : padding + h, padding : padding + w] = x
    return xp


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    n, _, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = _out_size(h, k, stride, padding), _out_size(wd, k, stride, padding)
    cols = _patches(_pad(x, padding), k, stride, ho, wo)
    out = (cols @ w.reshape(o, -1).T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def _conv_grad_input(g: np.ndarray, w: np.ndarray, stride: int, padding: int, in_shape) -> np.ndarray:
    n, c, h, wd = in_shape
    o, _, k, _ = w.shape
    ho, wo = g.shape[2], g.shape[3]
    # batch-innermost layout keeps every strided scatter below cache friendly
    g2 = g.transpose(1, 2, 3, 0).reshape(o, -1)
    w2 = w.transpose(2, 3, 1, 0).reshape(k * k * c, o)
    dcols = (w2 @ g2).reshape(k, k, c, ho, wo, n)
    dxp = np.zeros((c, h + 2 * padding, wd + 2 * padding, n), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[i, j]
    dxp = dxp[:, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(dxp.transpose(3, 0, 1, 2))


def _conv_grad_weight(cols: np.ndarray, g: np.ndarray, w_shape) -> np.ndarray:
    o = w_shape[0]
    gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
    return (gm.T @ cols).reshape(w_shape)


def _check_conv(x: Tensor, w: Tensor, b: Tensor, stride: int, padding: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be NCHW, got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv weights must be (out, in, K, K), got {w.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation. ``x`` is NCHW, ``weights`` is (out, in, K, K)."""
    _check_conv(x, weights, bias, stride, padding)
    if x.shape[1] != weights.shape[1]:
        raise ShapeError(f"conv2d channel axis mismatch: input has {x.shape[1]}, weights expect {weights.shape[1]}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"conv2d bias must have shape ({weights.shape[0]},), got {bias.shape}")
    k = weights.shape[2]
    for axis, name in ((2, "height"), (3, "width")):
        if x.shape[axis] + 2 * padding < k:
            raise ShapeError(f"conv2d kernel {k} does not fit padded {name} {x.shape[axis] + 2 * padding}")
    xd, wd = x.data, weights.data
    out, cols = _conv_fwd(xd, wd, stride, padding)
    out += bias.data[None, :, None, None]

    def back(g):
        dx = _conv_grad_input(g, wd, stride, padding, xd.shape) if x.requires_grad else None
        dw = _conv_grad_weight(cols, g, wd.shape) if weights.requires_grad else None
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _result(out, (x, weights, bias), back)


def conv2d_transpose(
    x: Tensor, weights: Tensor, bias: Tensor, stride: int, padding: int, output_shape: Sequence[int]
) -> Tensor:
    """Adjoint of :func:`conv2d` with respect to its input.

    ``weights`` is (in, out, K, K): the same array a conv2d mapping ``out -> in``
    channels would use. ``output_shape`` gives the spatial size (H, W) or the
    full NCHW shape; it resolves the rounding ambiguity of strided convs.
    """
    _check_conv(x, weights, bias, stride, padding)
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"conv2d_transpose channel axis mismatch: input has {x.shape[1]}, weights expect {weights.shape[0]}"
        )
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"conv2d_transpose bias must have shape ({weights.shape[1]},), got {bias.shape}")
    k = weights.shape[2]
    out_hw = tuple(output_shape[-2:])
    full = (x.shape[0], weights.shape[1]) + out_hw
    if len(output_shape) == 4 and tuple(output_shape) != full:
        raise ShapeError(f"conv2d_transpose output_shape {tuple(output_shape)} inconsistent with {full}")
    for axis, name in ((0, "height"), (1, "width")):
        size = out_hw[axis]
        if size + 2 * padding < k or _out_size(size, k, stride, padding) != x.shape[axis + 2]:
            raise ShapeError(
                f"conv2d_transpose output {name} {size} inconsistent with input {name} {x.shape[axis + 2]} "
                f"(kernel {k}, stride {stride}, padding {padding})"
            )
    xd, wd = x.data, weights.data
    out = _conv_grad_input(xd, wd, stride, padding, full)
    out += bias.data[None, :, None, None]

    def back(g):
        dx = None
        dw = None
        if x.requires_grad or weights.requires_grad:
            gx, cols = _conv_fwd(g, wd, stride, padding)
            dx = gx if x.requires_grad else None
            dw = _conv_grad_weight(cols, xd, wd.shape) if weights.requires_grad else None
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _result(out, (x, weights, bias), back)


def lstm_step(x: Tensor, hidden: Tensor, cell: Tensor, params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """One LSTM cell update with gate layout (input, forget, candidate, output).

    ``params`` holds ``w_x`` (in, 4H), ``w_h`` (H, 4H) and ``b`` (4H,).
    """
    w_x, w_h, b = params["w_x"], params["w_h"], params["b"]
    width = hidden.shape[-1]
    if w_x.shape != (x.shape[-1], 4 * width):
        raise ShapeError(f"lstm input width {x.shape[-1]} does not match w_x {w_x.shape}")
    if w_h.shape != (width, 4 * width):
        raise ShapeError(f"lstm hidden width {width} does not match w_h {w_h.shape}")
    if cell.shape != hidden.shape:
        raise ShapeError(f"lstm cell shape {cell.shape} differs from hidden shape {hidden.shape}")
    gates = fully_connected(x, w_x, b) + matmul(hidden, w_h)
    i = sigmoid(gates[:, :width])
    f = sigmoid(gates[:, width : 2 * width])
    g = tanh(gates[:, 2 * width : 3 * width])
    o = sigmoid(gates[:, 3 * width :])
    new_cell = f * cell + i * g
    new_hidden = o * tanh(new_cell)
    return new_hidden, new_cell


def argmax_onehot(q: Tensor) -> Tensor:
    """Hard one-hot of the row-wise argmax (lowest index wins ties).

    The backward pass is the identity: upstream gradients reach ``q`` unchanged.
    """
    if q.size == 0 or q.shape[-1] == 0:
        raise ShapeError("argmax_onehot needs a non-empty vector")
    qd = q.data
    idx = np.argmax(qd, axis=-1)
    onehot = np.zeros_like(qd)
    np.put_along_axis(onehot, np.expand_dims(idx, -1), 1.0, axis=-1)
    return _result(onehot, (q,), lambda g: (g,))
