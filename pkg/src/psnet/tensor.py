"""Dense tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. Calling
:func:`backward` on a scalar walks that record in reverse topological order,
which is the gradient tape for one step.

Feature maps are laid out channel-major (C x H x W); convolution kernels are
C_out x C_in x kh x kw.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} exceeds 4")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

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
        return mul(self, -1.0)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x, dtype=dtype)


_grad_enabled = True


class no_grad:
    """Context manager that stops operations from recording the graph."""

    def __enter__(self):
        global _grad_enabled
        self._prev, _grad_enabled = _grad_enabled, False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


def _make(data, parents, backward_fn):
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = g.reshape(t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss):
    """Propagate d(loss)/d(t) into ``t.grad`` for every tensor requiring grad.

    Gradients accumulate, so a tensor used by several consumers receives the
    sum of the path gradients. The graph is released afterwards.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = []
    seen = set()
    stack = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            # leaf
            if g is not None:
                _accumulate(node, g)
            continue
        if g is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------- elementwise


def _check_broadcast(a, b):
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    if len(sa) == 3 and len(sb) == 3:
        if sa[0] == sb[0] and (sa[1:] == (1, 1) or sb[1:] == (1, 1)):
            return
    raise ShapeError(f"cannot broadcast {sa} with {sb}")


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    if int(np.prod(shape)) == 1:
        return np.asarray(g.sum()).reshape(shape)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _binary_operands(a, b):
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = as_tensor(a, like=b)
    elif not isinstance(b, Tensor) and isinstance(a, Tensor):
        b = as_tensor(b, like=a)
    else:
        a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return a, b


def _out_shape(a, b):
    return np.broadcast_shapes(a.shape, b.shape)


def add(a, b):
    a, b = _binary_operands(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _binary_operands(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    """Pointwise product; also the C x H x W by C x 1 x 1 channel gate."""
    a, b = _binary_operands(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = _binary_operands(a, b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data / b.data, (a, b), bw)


def relu(x):
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), bw)


def sigmoid(x):
    d = x.data
    # split by sign so exp never overflows
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), bw)


def square(x):
    def bw(g):
        return (2.0 * g * x.data,)

    return _make(x.data * x.data, (x,), bw)


def maximum(x, floor):
    """max(x, floor) against a constant; gradient passes only where x > floor."""
    mask = x.data > floor

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, np.asarray(floor, dtype=x.dtype)), (x,), bw)


# ----------------------------------------------------------------- reductions


def sum(x):  # noqa: A001 - mirrors numpy naming
    def bw(g):
        return (np.broadcast_to(g.reshape(()), x.shape),)

    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), bw)


def dot(a, b):
    """Inner product of two equally shaped tensors, as a scalar."""
    if a.shape != b.shape:
        raise ShapeError(f"dot of {a.shape} and {b.shape}")

    def bw(g):
        g = g.reshape(())
        return (g * b.data if a.requires_grad else None, g * a.data if b.requires_grad else None)

    return _make(np.asarray(np.vdot(a.data, b.data), dtype=a.dtype), (a, b), bw)


def norm(x):
    """Euclidean norm. The gradient at the zero vector is taken as zero."""
    n = np.sqrt(np.vdot(x.data, x.data))

    def bw(g):
        if n == 0:
            return (np.zeros_like(x.data),)
        return (g.reshape(()) * x.data / n,)

    return _make(np.asarray(n, dtype=x.dtype), (x,), bw)


def global_avg_pool(x):
    """C x H x W -> C x 1 x 1 per-channel mean."""
    if x.data.ndim != 3:
        raise ShapeError(f"expected C x H x W, got {x.shape}")
    c, h, w = x.shape
    inv = 1.0 / (h * w)

    def bw(g):
        return (np.broadcast_to(g * inv, x.shape),)

    return _make(x.data.mean(axis=(1, 2), keepdims=True), (x,), bw)


def channel_mean(x):
    """C x H x W -> 1 x H x W mean across channels."""
    if x.data.ndim != 3:
        raise ShapeError(f"expected C x H x W, got {x.shape}")
    inv = 1.0 / x.shape[0]

    def bw(g):
        return (np.broadcast_to(g * inv, x.shape),)

    return _make(x.data.mean(axis=0, keepdims=True), (x,), bw)


# -------------------------------------------------------------------- shaping


def reshape(x, shape):
    def bw(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), bw)


def flatten(x):
    return reshape(x, (x.size,))


def concat_channels(parts):
    """Stack C_i x H x W parts along the channel axis, in argument order."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of no tensors")
    spatial = parts[0].shape[1:]
    for p in parts:
        if p.data.ndim != 3 or p.shape[1:] != spatial:
            raise ShapeError(f"spatial mismatch in concat: {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bw)


def slice_channels(x, start, stop):
    def bw(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _make(x.data[start:stop], (x,), bw)


# ------------------------------------------------------------------- pooling


def maxpool2(x):
    """2 x 2 / stride 2 max pool. Ties go to the first window cell in row-major order."""
    if x.data.ndim != 3:
        raise ShapeError(f"expected C x H x W, got {x.shape}")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even H and W, got {h}x{w}")
    win = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros((c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return (gw.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return _make(out, (x,), bw)


# --------------------------------------------------------------- convolution


def conv_output_size(size, k, stride=1, padding=0, dilation=1):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    """2-D cross-correlation of a C_in x H x W input with C_out x C_in x kh x kw weights."""
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects 3-D input and 4-D weight, got {x.shape}, {weight.shape}")
    cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        raise ShapeError(f"input has {cin} channels, weight expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d output would be empty for input {h}x{w}, kernel {kh}x{kw}, dilation {dilation}")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if kh == 1 and kw == 1:
        cols = xp[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride].reshape(cin, ho * wo)
    else:
        span_h, span_w = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
        win = sliding_window_view(xp, (span_h, span_w), axis=(1, 2))
        win = win[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride, ::dilation, ::dilation]
        cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(cin * kh * kw, ho * wo)
    wmat = weight.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(cout, ho, wo)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(cout, ho * wo)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(cin, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    r0, c0 = i * dilation, j * dilation
                    gxp[:, r0 : r0 + stride * (ho - 1) + 1 : stride, c0 : c0 + stride * (wo - 1) + 1 : stride] += gcols[:, i, j]
            gx = gxp[:, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    return _make(out, parents, bw)
