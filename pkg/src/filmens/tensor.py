"""Dense tensors with tape-based reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous numpy array. Every differentiable
operation applied to tensors that require gradients records a node holding its
inputs and a closure mapping the output gradient to input gradients.
:func:`backward` orders the recorded nodes topologically (the tape) and walks
it once in reverse, accumulating gradients into leaf tensors.

Default precision is float32; wrap verification code in
``with default_dtype(np.float64):`` to build 64-bit tensors instead.
"""

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, LabelError, ParameterError

_state = {"dtype": np.dtype(np.float32), "grad": True}


def get_default_dtype():
    return _state["dtype"]


@contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for newly created float tensors."""
    previous = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = previous


@contextmanager
def no_grad():
    """Disable tape recording, e.g. for inference."""
    previous = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = previous


class _Node:
    __slots__ = ("kind", "inputs", "backward_fn", "released")

    def __init__(self, kind, inputs, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.released = False


class Tensor:
    """N-dimensional array that can take part in gradient computation.

    Parameters
    ----------
    data : array_like
        Values. Non-float input is converted to the default dtype; float
        arrays keep their dtype unless ``dtype`` is given.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad``.
    dtype : numpy dtype, optional
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(get_default_dtype())
        # ascontiguousarray would promote 0-d arrays to shape (1,)
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else get_default_dtype()))


def record(out_data, inputs, kind, backward_fn):
    """Wrap ``out_data`` in a Tensor and put the producing op on the tape.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    """
    out = Tensor(out_data)
    if _state["grad"] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(kind, tuple(inputs), backward_fn)
    return out


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        for inp in t._node.inputs:
            if inp._node is not None and id(inp) not in visited:
                stack.append((inp, False))
    return order


def backward(loss):
    """Populate ``grad`` on every leaf tensor that ``loss`` depends on.

    The loss must be a single-element tensor produced by recorded ops. A tape
    can be walked only once; run a fresh forward pass to differentiate again.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        raise ContractError("backward called on a tensor with an empty tape")
    if loss._node.released:
        raise ContractError("backward already ran on this tape; recompute the forward pass")
    tape = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(tape):
        node = t._node
        g = grads.pop(id(t), None)
        if g is not None:
            for inp, ig in zip(node.inputs, node.backward_fn(g)):
                if ig is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    inp.grad = ig.astype(inp.dtype, copy=True) if inp.grad is None else inp.grad + ig
                elif id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + ig
                else:
                    grads[id(inp)] = ig
        node.released = True
        node.backward_fn = None


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise -----------------------------------------------------------------

def add(a, b):
    a = _as_tensor(a, getattr(b, "dtype", None))
    b = _as_tensor(b, a.dtype)
    return record(
        a.data + b.data, (a, b), "add",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a = _as_tensor(a, getattr(b, "dtype", None))
    b = _as_tensor(b, a.dtype)
    return record(
        a.data - b.data, (a, b), "sub",
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a = _as_tensor(a, getattr(b, "dtype", None))
    b = _as_tensor(b, a.dtype)
    return record(
        a.data * b.data, (a, b), "mul",
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a):
    return record(-a.data, (a,), "neg", lambda g: (-g,))


def exp(a):
    out = np.exp(a.data)
    return record(out, (a,), "exp", lambda g: (g * out,))


def log(a):
    return record(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def relu(x):
    """Elementwise ``max(0, x)``."""
    mask = x.data > 0
    return record(np.where(mask, x.data, 0).astype(x.dtype), (x,), "relu", lambda g: (g * mask,))


# reductions and shape ----------------------------------------------------------

def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    axes = _normalize_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record(np.asarray(out, dtype=x.dtype), (x,), "sum", grad_fn)


def mean(x, axis=None, keepdims=False):
    axes = _normalize_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis=axes, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    orig = x.shape
    return record(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(orig),))


def repeat_rows(x, times):
    """Stack ``times`` copies of ``x`` along the leading axis."""
    n = x.shape[0]
    reps = (times,) + (1,) * (x.ndim - 1)
    return record(
        np.tile(x.data, reps), (x,), "repeat_rows",
        lambda g: (g.reshape((times, n) + x.shape[1:]).sum(axis=0),),
    )


def slice_rows(x, start, stop):
    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return record(x.data[start:stop], (x,), "slice_rows", grad_fn)


# linear algebra -----------------------------------------------------------------

def matmul(a, b):
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return record(
        a.data @ b.data, (a, b), "matmul",
        lambda g: (g @ b.data.T if a.requires_grad else None,
                   a.data.T @ g if b.requires_grad else None),
    )


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with weight stored as (in_features, out_features)."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# softmax family ------------------------------------------------------------------

def softmax_np(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_np(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def log_softmax(x):
    """Row-wise log-softmax over the last axis, stabilized by the row max."""
    out = log_softmax_np(x.data)
    p = np.exp(out)
    return record(out, (x,), "log_softmax", lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under ``logits``."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (B, K) logits, got {logits.shape}")
    targets = np.asarray(targets)
    n, k = logits.shape
    if targets.shape != (n,):
        raise DimensionError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    bad = np.flatnonzero((targets < 0) | (targets >= k))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"target {targets[i]} at index {i} is outside [0, {k})")
    targets = targets.astype(np.int64)
    lsm = log_softmax_np(logits.data)
    rows = np.arange(n)
    loss = -lsm[rows, targets].mean()

    def grad_fn(g):
        d = np.exp(lsm)
        d[rows, targets] -= 1
        return (d * (g / n),)

    return record(np.asarray(loss, dtype=logits.dtype), (logits,), "cross_entropy", grad_fn)


# stochastic ---------------------------------------------------------------------------

def dropout(x, rate, mode, rng=None):
    """Inverted dropout. Identity in eval mode."""
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0:
        return x
    if rng is None:
        raise ParameterError("dropout in train mode needs an explicit rng stream")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return record(x.data * mask, (x,), "dropout", lambda g: (g * mask,))


# convolution and pooling ---------------------------------------------------------------

def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation of (B, C_in, H, W) input with (C_out, C_in, kH, kW) kernels."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ParameterError(f"invalid stride {stride} or padding {padding}")
    b, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {weight.shape}")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise DimensionError(
            f"kernel {weight.shape[2:]} larger than padded input {(h + 2 * ph, w + 2 * pw)}"
        )
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    w2 = weight.data.reshape(co, -1)
    out = (cols @ w2.T).reshape(b, ho, wo, co).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
        dw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(b, ho, wo, c, kh, kw)
            dxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            dx = dxp[:, :, ph:ph + h, pw:pw + w]
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return record(out, inputs, "conv2d", grad_fn)


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """1-D cross-correlation of (B, C_in, L) input with (C_out, C_in, k) kernels."""
    if x.ndim != 3 or weight.ndim != 3:
        raise DimensionError(f"conv1d expects 3-D input and kernel, got {x.shape} and {weight.shape}")
    b, c, length = x.shape
    co, ci, k = weight.shape
    if length + 2 * padding < k:
        raise DimensionError(f"kernel size {k} larger than padded input length {length + 2 * padding}")
    out = conv2d(
        reshape(x, (b, c, 1, length)),
        reshape(weight, (co, ci, 1, k)),
        bias,
        stride=(1, stride),
        padding=(0, padding),
    )
    return reshape(out, (b, co, out.shape[3]))


def max_pool2d(x, size=2):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""
    b, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise DimensionError(f"input {x.shape} too small for {size}x{size} pooling")
    xc = x.data[:, :, :ho * size, :wo * size]
    win = xc.reshape(b, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, size * size)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        dwin = np.zeros(win.shape, dtype=x.dtype)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dxc = dwin.reshape(b, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * size, wo * size)
        dx = np.zeros_like(x.data)
        dx[:, :, :ho * size, :wo * size] = dxc
        return (dx,)

    return record(np.ascontiguousarray(out), (x,), "max_pool2d", grad_fn)
