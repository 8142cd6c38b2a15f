"""Reverse-mode automatic differentiation over numpy arrays.

A small tape engine: each operation returns a :class:`Tensor` that remembers
its parents and a backward closure.  ``Tensor.backward()`` walks the graph in
reverse topological order and accumulates gradients into ``.grad``.  All data
is float64, channel-first for feature maps.

Dense products run through BLAS; patch extraction, folding and bilinear
sampling go through :mod:`stlca.kernels` (numba or numpy, chosen by env var).
"""

from __future__ import annotations

import numpy as np

from . import kernels

DTYPE = np.float64

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (detached computation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(data, dtype=DTYPE))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into every reachable parent."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        _accumulate(self, np.asarray(grad, dtype=DTYPE))
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # Operator sugar.  Full op set lives at module level.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable tensor."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray):
    # Gradients are never mutated in place, so sharing views here is safe.
    t.grad = g if t.grad is None else t.grad + g


def _node(data, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), bwd)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not x.requires_grad:
            return
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(x, np.broadcast_to(gg, x.data.shape))

    return _node(out_data, (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= x.data.shape[ax]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def tabs(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.abs(x.data)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * np.sign(x.data))

    return _node(out_data, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * (x.data > 0.0))

    return _node(out_data, (x,), bwd)


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    x = as_tensor(x)
    out_data = np.where(x.data > 0.0, x.data, alpha * x.data)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * np.where(x.data > 0.0, 1.0, alpha))

    return _node(out_data, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * out_data * (1.0 - out_data))

    return _node(out_data, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * (1.0 - out_data * out_data))

    return _node(out_data, (x,), bwd)


def softmax(x: Tensor, axis: int) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            _accumulate(x, out_data * (g - dot))

    return _node(out_data, (x,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _node(out_data, (a, b), bwd)


def transpose2d(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.ascontiguousarray(x.data.T)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, np.ascontiguousarray(g.T))

    return _node(out_data, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g.reshape(x.data.shape))

    return _node(out_data, (x,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        start = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, start + n)
                _accumulate(t, g[tuple(sl)])
            start += n

    return _node(out_data, tuple(tensors), bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    x = as_tensor(x)
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out_data = np.ascontiguousarray(x.data[sl])

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            dx[sl] = g
            _accumulate(x, dx)

    return _node(out_data, (x,), bwd)


def crop2d(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Crop a (C, H, W) tensor to a spatial box."""
    x = as_tensor(x)
    out_data = np.ascontiguousarray(
        x.data[:, top : top + height, left : left + width]
    )

    def bwd(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            dx[:, top : top + height, left : left + width] = g
            _accumulate(x, dx)

    return _node(out_data, (x,), bwd)


def paste2d(base: Tensor, patch: Tensor, top: int, left: int) -> Tensor:
    """Copy of `base` with `patch` written at (top, left); both (C, H, W)."""
    base, patch = as_tensor(base), as_tensor(patch)
    _, ph, pw = patch.data.shape
    out_data = base.data.copy()
    out_data[:, top : top + ph, left : left + pw] = patch.data

    def bwd(g):
        if base.requires_grad:
            db = g.copy()
            db[:, top : top + ph, left : left + pw] = 0.0
            _accumulate(base, db)
        if patch.requires_grad:
            _accumulate(patch, g[:, top : top + ph, left : left + pw])

    return _node(out_data, (base, patch), bwd)


def where_mask(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select: mask nonzero takes `a`, zero takes `b`.

    The mask is a constant; it is broadcast against the (identical) shapes of
    `a` and `b`.  Positions where the mask is zero keep `b` bit-exactly.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError("where_mask requires equal shapes")
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    out_data = np.where(m, a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, np.where(m, g, 0.0))
        if b.requires_grad:
            _accumulate(b, np.where(m, 0.0, g))

    return _node(out_data, (a, b), bwd)


# ---------------------------------------------------------------------------
# convolution family


def _pad_chw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    c, h, w = x.shape
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    xp[:, pad : pad + h, pad : pad + w] = x
    return xp


def _conv_out_size(n: int, k: int, stride: int, dilation: int, pad: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution; x (Ci,H,W), w (Co,Ci,kh,kw), b (Co,) or None."""
    x, w = as_tensor(x), as_tensor(w)
    ci, ih, iw_ = x.data.shape
    co, ci_w, kh, kw = w.data.shape
    if ci != ci_w:
        raise ValueError(f"conv2d channel mismatch: input {ci}, weight {ci_w}")
    oh = _conv_out_size(ih, kh, stride, dilation, padding)
    ow = _conv_out_size(iw_, kw, stride, dilation, padding)
    xp = _pad_chw(x.data, padding)
    cols = kernels.im2col(xp, kh, kw, stride, dilation, oh, ow)
    w2 = w.data.reshape(co, -1)
    out_flat = w2 @ cols
    if b is not None:
        b = as_tensor(b)
        out_flat = out_flat + b.data[:, None]
    out_data = out_flat.reshape(co, oh, ow)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g2 = g.reshape(co, -1)
        if w.requires_grad:
            _accumulate(w, (g2 @ cols.T).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            _accumulate(b, g2.sum(axis=1))
        if x.requires_grad:
            dcols = w2.T @ g2
            dxp = kernels.col2im(
                dcols, ci, xp.shape[1], xp.shape[2], kh, kw, stride, dilation, oh, ow
            )
            if padding:
                dxp = dxp[:, padding : padding + ih, padding : padding + iw_]
            _accumulate(x, np.ascontiguousarray(dxp))

    return _node(out_data, parents, bwd)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 2,
                     padding: int = 1) -> Tensor:
    """Transposed 2-D convolution; x (Ci,h,w), w (Ci,Co,kh,kw).

    Output spatial size is (h-1)*stride - 2*padding + k; with the default
    k=4, stride=2, padding=1 this doubles the resolution.
    """
    x, w = as_tensor(x), as_tensor(w)
    ci, ih, iw_ = x.data.shape
    ci_w, co, kh, kw = w.data.shape
    if ci != ci_w:
        raise ValueError(f"conv_transpose2d channel mismatch: {ci} vs {ci_w}")
    oh = (ih - 1) * stride - 2 * padding + kh
    ow = (iw_ - 1) * stride - 2 * padding + kw
    hp, wp = oh + 2 * padding, ow + 2 * padding
    w2 = w.data.reshape(ci, -1)  # (Ci, Co*kh*kw)
    x_flat = x.data.reshape(ci, -1)
    dcols = w2.T @ x_flat  # (Co*kh*kw, ih*iw)
    out_p = kernels.col2im(dcols, co, hp, wp, kh, kw, stride, 1, ih, iw_)
    out_data = np.ascontiguousarray(
        out_p[:, padding : padding + oh, padding : padding + ow]
    )
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data[:, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gp = _pad_chw(np.ascontiguousarray(g), padding)
        gcols = kernels.im2col(gp, kh, kw, stride, 1, ih, iw_)
        if x.requires_grad:
            _accumulate(x, (w2 @ gcols).reshape(ci, ih, iw_))
        if w.requires_grad:
            _accumulate(w, (x_flat @ gcols.T).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=(1, 2)))

    return _node(out_data, parents, bwd)


def resize_bilinear(x: Tensor, oh: int, ow: int) -> Tensor:
    """Differentiable bilinear resize of a (C, h, w) tensor."""
    x = as_tensor(x)
    _, ih, iw_ = x.data.shape
    out_data = kernels.resize_bilinear_fwd(x.data, oh, ow)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, kernels.resize_bilinear_bwd(
                np.ascontiguousarray(g), ih, iw_))

    return _node(out_data, (x,), bwd)


def warp_bilinear(x: Tensor, flow: np.ndarray) -> Tensor:
    """Backward-warp a (C, H, W) tensor by a constant (H, W, 2) flow field."""
    x = as_tensor(x)
    _, ih, iw_ = x.data.shape
    f = np.ascontiguousarray(flow, dtype=DTYPE)
    out_data = kernels.warp_bilinear_fwd(x.data, f)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, kernels.warp_bilinear_bwd(
                np.ascontiguousarray(g), f, ih, iw_))

    return _node(out_data, (x,), bwd)
