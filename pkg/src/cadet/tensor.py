"""Dense tensors with reverse-mode automatic differentiation.

Every tensor wraps a single numpy buffer. Operations on tensors record
their parents and a backward closure on the result, forming an implicit
tape per forward pass; ``Tensor.backward`` replays that tape once in
reverse topological order and then frees it. Gradients accumulate only
on tensors created with ``requires_grad=True``.

dtype follows the data: float64 by default, and float32 pipelines stay
float32 (python scalars are coerced to the operand dtype). Broadcasting
follows numpy's trailing-dimension rules. There is no higher-order
differentiation; backward closures work on raw numpy arrays.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "exp",
    "log",
    "sin",
    "cos",
    "sqrt",
    "sigmoid",
    "relu",
    "softmax",
    "tensor_sum",
    "tensor_mean",
    "maximum",
    "minimum",
    "clamp",
    "concat",
    "stack",
    "take",
    "reshape",
    "transpose",
    "swapaxes",
    "broadcast_to",
    "pad",
    "extract_patches",
    "trilinear_sample",
    "layer_norm",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape construction inside its block."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    # make `np_array + tensor` dispatch to our __radd__ instead of ufuncs
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # ---- basic introspection -------------------------------------------

    @property
    def shape(self):
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

    def item(self) -> float:
        return self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # ---- backward pass --------------------------------------------------

    def backward(self, grad=None, free_graph: bool = True):
        """Run reverse-mode accumulation from this tensor.

        ``grad`` may be omitted only for scalar outputs (seeded with 1).
        The tape is freed afterwards unless ``free_graph`` is false.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without grad requires a scalar, got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(
                    f"backward grad shape {grad.shape} does not match tensor shape {self.data.shape}"
                )

        order = _topo_order(self)
        _accumulate(self, grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        if free_graph:
            for node in order:
                node._backward = None
                node._parents = ()
                if not node.requires_grad_leaf():
                    node.grad = None

    def requires_grad_leaf(self) -> bool:
        # a leaf in the autodiff sense: user-created, holds its grad
        return self.requires_grad and self._op == "leaf"

    # ---- operator sugar --------------------------------------------------

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return _getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def unsqueeze(self, axis: int):
        shape = list(self.data.shape)
        if axis < 0:
            axis += len(shape) + 1
        shape.insert(axis, 1)
        return reshape(self, tuple(shape))


# ---- tape plumbing -------------------------------------------------------


def _topo_order(root: Tensor):
    order = []
    seen = set()
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data: np.ndarray, parents, backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    if isinstance(b, Tensor):
        return _wrap(a, b), b
    raise TypeError("at least one operand must be a Tensor")


# ---- arithmetic primitives ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data + b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data - b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data * b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data / b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), bw, "div")


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise power with a constant real exponent."""
    exponent = float(exponent)
    data = a.data**exponent

    def bw(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), bw, "power")


def matmul(a, b) -> Tensor:
    """Matrix product over the two trailing axes, broadcasting the rest."""
    a, b = _pair(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul requires ndim >= 2, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), bw, "matmul")


# ---- elementwise nonlinearities -------------------------------------------


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bw(g):
        _accumulate(a, g * data)

    return _make(data, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bw(g):
        _accumulate(a, g / a.data)

    return _make(data, (a,), bw, "log")


def sin(a: Tensor) -> Tensor:
    data = np.sin(a.data)

    def bw(g):
        _accumulate(a, g * np.cos(a.data))

    return _make(data, (a,), bw, "sin")


def cos(a: Tensor) -> Tensor:
    data = np.cos(a.data)

    def bw(g):
        _accumulate(a, -g * np.sin(a.data))

    return _make(data, (a,), bw, "cos")


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def bw(g):
        _accumulate(a, g * 0.5 / data)

    return _make(data, (a,), bw, "sqrt")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    data = _stable_sigmoid(a.data)

    def bw(g):
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), bw, "sigmoid")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bw(g):
        _accumulate(a, g * (a.data > 0))

    return _make(data, (a,), bw, "relu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; rows sum to one."""
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        inner = np.sum(g * data, axis=axis, keepdims=True)
        _accumulate(a, (g - inner) * data)

    return _make(data, (a,), bw, "softmax")


# ---- reductions ------------------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            grad = np.broadcast_to(g, a.data.shape)
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                for ax in sorted(ax % a.data.ndim for ax in axes):
                    g = np.expand_dims(g, ax)
            grad = np.broadcast_to(g, a.data.shape)
        _accumulate(a, grad)

    return _make(np.asarray(data), (a,), bw, "sum")


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# ---- selection-style ops ---------------------------------------------------


def maximum(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = np.maximum(a.data, b.data)

    def bw(g):
        pick_a = a.data >= b.data
        _accumulate(a, _unbroadcast(g * pick_a, a.data.shape))
        _accumulate(b, _unbroadcast(g * ~pick_a, b.data.shape))

    return _make(data, (a, b), bw, "maximum")


def minimum(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = np.minimum(a.data, b.data)

    def bw(g):
        pick_a = a.data <= b.data
        _accumulate(a, _unbroadcast(g * pick_a, a.data.shape))
        _accumulate(b, _unbroadcast(g * ~pick_a, b.data.shape))

    return _make(data, (a, b), bw, "minimum")


def clamp(a: Tensor, lo=None, hi=None, straight_through: bool = False) -> Tensor:
    """Clip to [lo, hi].

    With ``straight_through`` the gradient passes through unchanged even
    where the value was clipped; otherwise clipped coordinates get zero
    gradient.
    """
    data = np.clip(a.data, lo, hi)

    def bw(g):
        if straight_through:
            _accumulate(a, g)
        else:
            inside = np.ones_like(a.data, dtype=bool)
            if lo is not None:
                inside &= a.data >= lo
            if hi is not None:
                inside &= a.data <= hi
            _accumulate(a, g * inside)

    return _make(data, (a,), bw, "clamp")


# ---- shape ops --------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bw(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def bw(g):
        _accumulate(a, np.transpose(g, inv))

    return _make(data, (a,), bw, "transpose")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    data = np.swapaxes(a.data, ax1, ax2)

    def bw(g):
        _accumulate(a, np.swapaxes(g, ax1, ax2))

    return _make(data, (a,), bw, "swapaxes")


def broadcast_to(a: Tensor, shape) -> Tensor:
    data = np.broadcast_to(a.data, shape)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))

    return _make(data, (a,), bw, "broadcast_to")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            _accumulate(t, g[tuple(index)])

    return _make(data, tuple(tensors), bw, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    return concat([t.unsqueeze(axis) for t in tensors], axis=axis)


def _getitem(a: Tensor, key) -> Tensor:
    data = np.array(a.data[key])

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        _accumulate(a, full)

    return _make(data, (a,), bw, "getitem")


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather rows along ``axis`` by an integer index array."""
    indices = np.asarray(indices, dtype=np.int64)
    data = np.take(a.data, indices, axis=axis)

    def bw(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        _accumulate(a, full)

    return _make(data, (a,), bw, "take")


def pad(a: Tensor, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` follows numpy's per-axis (before, after)."""
    pad_width = tuple((int(p0), int(p1)) for p0, p1 in pad_width)
    data = np.pad(a.data, pad_width)

    def bw(g):
        index = tuple(slice(p0, dim + p0) for (p0, _), dim in zip(pad_width, a.data.shape))
        _accumulate(a, g[index])

    return _make(data, (a,), bw, "pad")


def extract_patches(a: Tensor, kh: int, kw: int, stride: int = 1) -> Tensor:
    """im2col over the (H, W) axes of a [..., H, W, C] tensor.

    Returns [..., Ho, Wo, kh, kw, C] where Ho = (H - kh)//stride + 1.
    """
    x = a.data
    if x.ndim < 3:
        raise ShapeError(f"extract_patches needs [..., H, W, C], got {x.shape}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(-3, -2))
    # windows: [..., Hw, Ww, C, kh, kw] -> subsample, move C behind the kernel
    windows = windows[..., ::stride, ::stride, :, :, :]
    data = np.ascontiguousarray(np.moveaxis(windows, -3, -1))
    ho, wo = data.shape[-5], data.shape[-4]

    def bw(g):
        full = np.zeros_like(x)
        for i in range(kh):
            for j in range(kw):
                full[..., i : i + stride * ho : stride, j : j + stride * wo : stride, :] += g[
                    ..., :, :, i, j, :
                ]
        _accumulate(a, full)

    return _make(data, (a,), bw, "extract_patches")


def trilinear_sample(volume: Tensor, points) -> Tensor:
    """Sample a [T, H, W, C] volume at fractional (t, y, x) grid points.

    Eight-corner interpolation; corners outside the volume contribute
    zero (zero padding). Differentiable with respect to both the volume
    and the sampling points. ``points`` has shape [..., 3] in grid units,
    so integer coordinates land exactly on stored values.
    """
    volume, points = _pair(volume, points)
    vd = volume.data
    pd = points.data
    if vd.ndim != 4:
        raise ShapeError(f"trilinear_sample volume must be [T, H, W, C], got {vd.shape}")
    if pd.shape[-1] != 3:
        raise ShapeError(f"trilinear_sample points must end in 3 coords, got {pd.shape}")
    t_dim, h_dim, w_dim, channels = vd.shape
    vflat = vd.reshape(-1, channels)

    base = np.floor(pd)
    frac = pd - base
    base = base.astype(np.int64)
    ft, fy, fx = frac[..., 0], frac[..., 1], frac[..., 2]

    corners = []
    out = np.zeros(pd.shape[:-1] + (channels,), dtype=vd.dtype)
    for dt in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                it = base[..., 0] + dt
                iy = base[..., 1] + dy
                ix = base[..., 2] + dx
                valid = (
                    (it >= 0) & (it < t_dim) & (iy >= 0) & (iy < h_dim) & (ix >= 0) & (ix < w_dim)
                )
                wt = ft if dt else 1.0 - ft
                wy = fy if dy else 1.0 - fy
                wx = fx if dx else 1.0 - fx
                weight = wt * wy * wx * valid
                lin = (np.clip(it, 0, t_dim - 1) * h_dim + np.clip(iy, 0, h_dim - 1)) * w_dim + np.clip(
                    ix, 0, w_dim - 1
                )
                out += weight[..., None] * vflat[lin.reshape(-1)].reshape(lin.shape + (channels,))
                corners.append((lin, weight, valid, dt, dy, dx))

    def bw(g):
        if volume.requires_grad:
            gv = np.zeros_like(vflat)
            for lin, weight, _valid, _dt, _dy, _dx in corners:
                contrib = g * weight[..., None]
                np.add.at(gv, lin.reshape(-1), contrib.reshape(-1, channels))
            _accumulate(volume, gv.reshape(vd.shape))
        if points.requires_grad:
            gp = np.zeros_like(pd)
            for lin, _weight, valid, dt, dy, dx in corners:
                feat = vflat[lin.reshape(-1)].reshape(lin.shape + (channels,))
                gdotf = np.sum(g * feat, axis=-1) * valid
                wt = ft if dt else 1.0 - ft
                wy = fy if dy else 1.0 - fy
                wx = fx if dx else 1.0 - fx
                st = 1.0 if dt else -1.0
                sy = 1.0 if dy else -1.0
                sx = 1.0 if dx else -1.0
                gp[..., 0] += gdotf * st * wy * wx
                gp[..., 1] += gdotf * wt * sy * wx
                gp[..., 2] += gdotf * wt * wy * sx
            _accumulate(points, gp)

    return _make(out, (volume, points), bw, "trilinear_sample")


# ---- composites --------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    m = x.mean(axis=-1, keepdims=True)
    centered = x - m
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / sqrt(var + eps)
    return normed * gamma + beta
