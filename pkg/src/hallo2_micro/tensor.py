"""Dense float64 tensors with taped reverse-mode differentiation.

Every value flowing through the models is a Tensor wrapping a contiguous
float64 numpy array. Operations record a closure on the output node while
gradients are enabled; Tensor.backward() replays the tape in reverse
topological order and accumulates into .grad on every reachable leaf that
requires gradients. Views may copy; correctness beats zero-copy here.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Disable tape recording inside the block (sampling, evaluation)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


class Tensor:
    """N-dimensional float64 array with optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward_fn) -> "Tensor":
        out = Tensor(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    # -- basic introspection --------------------------------------------------

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
        return self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- gradient machinery ---------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)  # first touch copies
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate dL/dleaf on every reachable requires_grad leaf.

        The root must be scalar. Repeated calls without zero_grad accumulate.
        """
        if self.size != 1:
            raise ValueError(
                f"backward requires a scalar root, got shape {self.shape}"
            )
        # Iterative postorder so deep tapes never hit the recursion limit.
        topo: list[Tensor] = []
        state: dict[int, int] = {}
        stack = [self]
        while stack:
            node = stack[-1]
            nid = id(node)
            if state.get(nid, 0) == 0:
                state[nid] = 1
                for p in node._parents:
                    if p.requires_grad and state.get(id(p), 0) == 0:
                        stack.append(p)
            else:
                stack.pop()
                if state[nid] == 1:
                    state[nid] = 2
                    topo.append(node)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._result(out_data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._result(out_data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out_data / b.data, b.shape))

    return Tensor._result(out_data, (a, b), backward_fn)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out_data = a.data ** exponent

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return Tensor._result(out_data, (a,), backward_fn)


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return Tensor._result(out_data, (a,), backward_fn)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return Tensor._result(out_data, (a,), backward_fn)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return Tensor._result(out_data, (a,), backward_fn)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._result(out_data, (a,), backward_fn)


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * s

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * (s + out_data * (1.0 - s)))

    return Tensor._result(out_data, (a,), backward_fn)


# -- shape manipulation ----------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return Tensor._result(out_data, (a,), backward_fn)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out_data = np.ascontiguousarray(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inverse))

    return Tensor._result(out_data, (a,), backward_fn)


def swap_last(a) -> Tensor:
    """Transpose the trailing two axes (attention K^T helper)."""
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward_fn(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                t._accumulate(g[tuple(idx)])
            offset += n

    return Tensor._result(out_data, tuple(tensors), backward_fn)


def take(a, idx) -> Tensor:
    """Basic slicing/indexing; gradient scatters into a zero tensor."""
    a = as_tensor(a)
    out_data = np.ascontiguousarray(a.data[idx])

    def backward_fn(g):
        if a.requires_grad:
            scatter = np.zeros_like(a.data)
            scatter[idx] += g
            a._accumulate(scatter)

    return Tensor._result(out_data, (a,), backward_fn)


def take_rows(table, indices) -> Tensor:
    """Row lookup into a 2-D table (embedding); indices may repeat."""
    table = as_tensor(table)
    indices = np.asarray(indices, dtype=np.int64)
    out_data = table.data[indices]

    def backward_fn(g):
        if table.requires_grad:
            scatter = np.zeros_like(table.data)
            np.add.at(scatter, indices, g)
            table._accumulate(scatter)

    return Tensor._result(out_data, (table,), backward_fn)


# -- reductions -------------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return Tensor._result(out_data, (a,), backward_fn)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- linear algebra -----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the trailing two axes with batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(
            f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f"matmul dimension mismatch: {a.shape} x {b.shape}"
        )
    out_data = a.data @ b.data

    def backward_fn(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor._result(out_data, (a, b), backward_fn)


def softmax_rows(a) -> Tensor:
    """Softmax over the trailing axis, stabilized by max subtraction."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=-1, keepdims=True)
            a._accumulate(out_data * (g - dot))

    return Tensor._result(out_data, (a,), backward_fn)


def log_softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g - soft * g.sum(axis=-1, keepdims=True))

    return Tensor._result(out_data, (a,), backward_fn)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance, then affine.

    eps is added to the (biased) variance before the square root, so constant
    slices normalize to zeros instead of dividing by zero. Fused primitive:
    one tape node instead of eight.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise ValueError(f"layer_norm needs a trailing axis >= 2, got {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv
    out_data = normed * gain.data + bias.data

    def backward_fn(g):
        if gain.requires_grad:
            gain._accumulate(
                _unbroadcast(g * normed, gain.shape)
            )
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gn = g * gain.data
            term = gn - gn.mean(axis=-1, keepdims=True) \
                - normed * (gn * normed).mean(axis=-1, keepdims=True)
            x._accumulate(term * inv)

    return Tensor._result(out_data, (x, gain, bias), backward_fn)


# -- convolution ---------------------------------------------------------------------

# Raw numpy helpers shared by the conv2d / conv_transpose2d primitives. The
# gradient of a strided correlation w.r.t. its input is a zero-dilated full
# correlation with the kernel flipped, which keeps everything on einsum and
# off scatter-add hot paths.


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride, :, :]


def _conv_forward(x, w, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(x, w.shape[-1], stride)
    return np.einsum("bcijkl,fckl->bfij", win, w, optimize=True)


def _conv_grad_w(x, g, stride, padding, kshape):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(x, kshape[-1], stride)
    return np.einsum("bcijkl,bfij->fckl", win, g, optimize=True)


def _conv_grad_x(g, w, stride, padding, x_hw):
    k = w.shape[-1]
    h, wid = x_hw
    oh, ow = g.shape[2], g.shape[3]
    if padding > k - 1:
        raise ValueError(f"padding {padding} exceeds kernel-1 ({k - 1})")
    if stride > 1:
        dil = np.zeros(
            (g.shape[0], g.shape[1], (oh - 1) * stride + 1, (ow - 1) * stride + 1),
            dtype=g.dtype,
        )
        dil[:, :, ::stride, ::stride] = g
        g = dil
    # Pad so a stride-1 correlation with the flipped kernel lands back on x;
    # the trailing pad absorbs rows the strided forward pass never reached.
    lead = k - 1 - padding
    trail_h = h + padding - 1 - (oh - 1) * stride
    trail_w = wid + padding - 1 - (ow - 1) * stride
    g = np.pad(g, ((0, 0), (0, 0), (lead, trail_h), (lead, trail_w)))
    w_flip = w[:, :, ::-1, ::-1]
    win = _windows(g, k, 1)
    return np.einsum("bfijkl,fckl->bcij", win, w_flip, optimize=True)


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D correlation: x (B,C,H,W), w (F,C,k,k), optional bias (F,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    out_data = _conv_forward(x.data, w.data, stride, padding)

    def backward_fn(g):
        if x.requires_grad:
            x._accumulate(
                _conv_grad_x(g, w.data, stride, padding, x.shape[2:])
            )
        if w.requires_grad:
            w._accumulate(_conv_grad_w(x.data, g, stride, padding, w.shape))

    out = Tensor._result(out_data, (x, w), backward_fn)
    if bias is not None:
        out = add(out, reshape(bias, (1, -1, 1, 1)))
    return out


def conv_transpose2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2-D convolution: x (B,C,H,W), w (C,F,k,k) -> (B,F,H',W')."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ValueError(f"conv_transpose2d shape mismatch: x {x.shape}, w {w.shape}")
    k = w.shape[-1]
    out_h = (x.shape[2] - 1) * stride - 2 * padding + k
    out_w = (x.shape[3] - 1) * stride - 2 * padding + k
    # Forward of the transpose is the input-gradient of the matching conv.
    out_data = _conv_grad_x(x.data, w.data, stride, padding, (out_h, out_w))

    def backward_fn(g):
        if x.requires_grad:
            x._accumulate(_conv_forward(g, w.data, stride, padding))
        if w.requires_grad:
            w._accumulate(_conv_grad_w(g, x.data, stride, padding, w.shape))

    out = Tensor._result(out_data, (x, w), backward_fn)
    if bias is not None:
        out = add(out, reshape(bias, (1, -1, 1, 1)))
    return out


# -- fixed embeddings -----------------------------------------------------------------


def sinusoidal_embedding(positions, dim: int) -> Tensor:
    """Classic sin/cos position code; returns a constant (dim must be even)."""
    if dim % 2 != 0:
        raise ValueError(f"sinusoidal dim must be even, got {dim}")
    pos = np.atleast_1d(np.asarray(positions, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = pos[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
    return Tensor(emb)
