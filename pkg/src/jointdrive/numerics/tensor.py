"""Dense float64 tensors with reverse-mode automatic differentiation.

Each op computes its forward value with numpy and records a closure that maps
the output gradient to parent gradients. ``Tensor.backward`` walks the graph in
reverse topological order and accumulates into ``.grad``.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
MASK_FILL = -1e9

_grad_enabled = True
_debug_checks = False


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in self.shapes)}")


class FullyMaskedError(ValueError):
    """A softmax row had every logit masked out."""


class NumericError(FloatingPointError):
    """A non-finite value was produced while debug checks are enabled."""


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    """Validate every op output (and every backward gradient) is finite."""
    global _debug_checks
    prev = _debug_checks
    _debug_checks = enabled
    try:
        yield
    finally:
        _debug_checks = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # ---------------------------------------------------------------- backward
    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward (implicit grad needs a scalar)", self.shape)
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != self.shape:
            raise ShapeError("backward", self.shape, grad.shape)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if _debug_checks and not np.all(np.isfinite(pg)):
                    raise NumericError(f"non-finite gradient flowing out of {node.op}")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # --------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def abs(self):
        return abs_(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward, op: str = "custom") -> Tensor:
    """Wrap a forward value with its backward rule.

    ``backward`` receives the output gradient and returns one gradient (or
    None) per parent, each shaped like that parent.
    """
    out = Tensor(data)
    out.op = op
    if _debug_checks and not np.all(np.isfinite(out.data)):
        raise NumericError(f"non-finite value produced by {op}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ------------------------------------------------------------ elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_op(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
                   "div")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    return make_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_op(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_op(np.log(xd), (x,), lambda g: (g / xd,), "log")


def abs_(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return make_op(np.abs(x.data), (x,), lambda g: (g * s,), "abs")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_op(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


# ---------------------------------------------------------------- shaping
def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, tuple(shape)) from None
    return make_op(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    src = x.shape
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros(src, dtype=DTYPE)
        if basic:  # views never alias twice, plain assignment suffices
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_op(x.data[idx], (x,), backward, "getitem")


def take(x: Tensor, index, axis: int = 0) -> Tensor:
    """Gather slices along ``axis``; gradient scatters back with accumulation."""
    index = np.asarray(index, dtype=np.int64)
    src = x.shape
    axis = axis % x.ndim

    def backward(g):
        full = np.zeros(src, dtype=DTYPE)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (full,)

    return make_op(np.take(x.data, index, axis=axis), (x,), backward, "take")


def embedding(weight: Tensor, index) -> Tensor:
    return take(weight, index, axis=0)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise ShapeError("concat", tensors[0].shape, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    return make_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        ax = axis % (t.ndim + 1)
        expanded.append(reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]))
    return concat(expanded, axis=axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return make_op(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def cumsum(x: Tensor, axis: int = 0) -> Tensor:
    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return make_op(np.cumsum(x.data, axis=axis), (x,), backward, "cumsum")


# ----------------------------------------------------------------- linear
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_op(ad @ bd, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last dim; weight is [out, in]."""
    if x.shape[-1] != weight.shape[1] or (bias is not None and bias.shape != (weight.shape[0],)):
        raise ShapeError("linear", x.shape, weight.shape, bias.shape if bias is not None else ())
    xd, wd = x.data, weight.data
    lead = xd.reshape(-1, xd.shape[-1])  # 2-D products hit plain GEMM
    out = lead @ wd.T
    if bias is not None:
        out += bias.data
    out = out.reshape(xd.shape[:-1] + (wd.shape[0],))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd).reshape(xd.shape) if x.requires_grad else None
        gw = g2.T @ lead
        return (gx, gw) if bias is None else (gx, gw, g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward, "linear")


# --------------------------------------------------------- normalization
def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last dim.

    ``mask`` is either a boolean array (True = masked out) broadcastable to
    ``x`` or an additive float array. Boolean masks add MASK_FILL to masked
    logits; a row with every entry masked raises FullyMaskedError.
    """
    logits = x.data
    if mask is not None:
        mask = np.asarray(mask)
        if mask.dtype == bool:
            full = np.broadcast_to(mask, logits.shape)
            if np.any(full.all(axis=-1)):
                raise FullyMaskedError("softmax row has every key masked")
            logits = np.where(full, logits + MASK_FILL, logits)
        else:
            try:
                logits = logits + mask
            except ValueError:
                raise ShapeError("softmax mask", x.shape, mask.shape) from None
            if logits.shape != x.shape:
                raise ShapeError("softmax mask", x.shape, mask.shape)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_op(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if weight.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", x.shape, weight.shape, bias.shape)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    wd = weight.data

    def backward(g):
        gw = (g * xhat).reshape(-1, d).sum(axis=0)
        gb = g.reshape(-1, d).sum(axis=0)
        gxhat = g * wd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, gw, gb

    return make_op(xhat * wd + bias.data, (x, weight, bias), backward, "layer_norm")


# ---------------------------------------------------------------- spatial
def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [N, Cin, H, W] with weight [Cout, Cin, kh, kw]."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    n, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    if bias is not None and bias.shape != (cout,):
        raise ShapeError("conv2d bias", weight.shape, bias.shape)
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d (kernel larger than padded input)", x.shape, weight.shape)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(win[:, :, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride])
    # cols: [N, Cin, Ho, Wo, kh, kw]
    wd = weight.data
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3]))  # [N, Ho, Wo, Cout]
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # [Cout, Cin, kh, kw]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        if not x.requires_grad:
            return [None, gw] if bias is None else [None, gw, gb]
        dcols = np.tensordot(g, wd, axes=([1], [0]))  # [N, Ho, Wo, Cin, kh, kw]
        gxp = np.zeros(xp.shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i: i + (ho - 1) * stride + 1: stride, j: j + (wo - 1) * stride + 1: stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding: padding + h, padding: padding + w] if padding else gxp
        return [gx, gw] if bias is None else [gx, gw, gb]

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward, "conv2d")


def avg_pool2d(x: Tensor, kernel: int) -> Tensor:
    """Non-overlapping average pooling (kernel == stride) over the last two dims."""
    *lead, h, w = x.shape
    if h % kernel or w % kernel:
        raise ShapeError(f"avg_pool2d(kernel={kernel})", x.shape)
    blocks = x.data.reshape(*lead, h // kernel, kernel, w // kernel, kernel)
    nd = len(lead)
    out = blocks.mean(axis=(nd + 1, nd + 3))

    def backward(g):
        g = np.repeat(np.repeat(g, kernel, axis=-2), kernel, axis=-1)
        return (g / (kernel * kernel),)

    return make_op(out, (x,), backward, "avg_pool2d")


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic [n_out, n_in] resampling matrix (half-pixel centers, edge clamp)."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    np.add.at(m, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    return m


def upsample_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear resize of the last two dims to ``size``."""
    *_, h, w = x.shape
    mh = bilinear_matrix(h, size[0])
    mw = bilinear_matrix(w, size[1])
    out = np.einsum("ah,...hw,bw->...ab", mh, x.data, mw, optimize=True)

    def backward(g):
        return (np.einsum("ah,...ab,bw->...hw", mh, g, mw, optimize=True),)

    return make_op(out, (x,), backward, "upsample_bilinear")


def grid_sample(x: Tensor, rows, cols, index=None) -> Tensor:
    """Bilinear sampling of x [N, C, H, W] at fractional (row, col) positions.

    ``rows``/``cols`` are [M, h, w] arrays in cell-index units; ``index`` [M]
    picks the source map for each output (defaults to 0..M-1). Corners outside
    the map contribute zero. Gradients flow to ``x`` only.
    """
    if x.ndim != 4:
        raise ShapeError("grid_sample", x.shape)
    rows = np.asarray(rows, dtype=DTYPE)
    cols = np.asarray(cols, dtype=DTYPE)
    if rows.shape != cols.shape or rows.ndim != 3:
        raise ShapeError("grid_sample coords", rows.shape, cols.shape)
    if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(cols))):
        raise ValueError("grid_sample: non-finite sample coordinates")
    m = rows.shape[0]
    index = np.arange(m) if index is None else np.asarray(index, dtype=np.int64)
    if index.shape != (m,):
        raise ShapeError("grid_sample index", index.shape, (m,))
    n, c, h, w = x.shape
    xt = x.data.transpose(0, 2, 3, 1)  # [N, H, W, C]
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    bidx = index[:, None, None]
    corners = []
    for dr, dc, wgt in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                        (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr, cc = r0 + dr, c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        corners.append((np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1), np.where(valid, wgt, 0.0), valid))
    out = np.zeros(rows.shape + (c,), dtype=DTYPE)
    for rr, cc, wgt, valid in corners:
        vals = xt[bidx, rr, cc]
        out += np.where(valid[..., None], vals * wgt[..., None], 0.0)

    def backward(g):
        gt = g.transpose(0, 2, 3, 1)  # [M, h, w, C]
        gxt = np.zeros((n, h, w, c), dtype=DTYPE)
        bfull = np.broadcast_to(bidx, rows.shape)
        for rr, cc, wgt, _ in corners:
            np.add.at(gxt, (bfull, rr, cc), gt * wgt[..., None])
        return (gxt.transpose(0, 3, 1, 2),)

    return make_op(out.transpose(0, 3, 1, 2), (x,), backward, "grid_sample")


# -------------------------------------------------------------- recurrent
def gru_cell(x: Tensor, h: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor) -> Tensor:
    """One GRU step; gate rows are stacked (reset, update, candidate)."""
    hid = h.shape[-1]
    if w_ih.shape != (3 * hid, x.shape[-1]) or w_hh.shape != (3 * hid, hid):
        raise ShapeError("gru_cell", x.shape, h.shape, w_ih.shape, w_hh.shape)
    gi = linear(x, w_ih, b_ih)
    gh = linear(h, w_hh, b_hh)
    r = sigmoid(gi[..., :hid] + gh[..., :hid])
    z = sigmoid(gi[..., hid: 2 * hid] + gh[..., hid: 2 * hid])
    n = tanh(gi[..., 2 * hid:] + r * gh[..., 2 * hid:])
    return n + z * (h - n)


# ----------------------------------------------------------------- losses
def l1_loss(pred: Tensor, target, reduction: str = "sum") -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("l1_loss", pred.shape, target.shape)
    err = abs_(pred - target)
    if reduction == "none":
        return err
    return sum_(err) if reduction == "sum" else mean(err)


def bce_with_logits(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Per-element binary cross-entropy on raw logits (numerically stable)."""
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=DTYPE)
    if t.shape != logits.shape:
        raise ShapeError("bce_with_logits", logits.shape, t.shape)
    z = logits.data
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    p = _stable_sigmoid(z)
    out = make_op(loss, (logits,), lambda g: (g * (p - t),), "bce_with_logits")
    if reduction == "none":
        return out
    return sum_(out) if reduction == "sum" else mean(out)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


def check_finite(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"non-finite values in {t!r}")
