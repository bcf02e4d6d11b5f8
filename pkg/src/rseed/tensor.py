"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation is a :class:`Function` subclass registered in
:data:`OPS`.  A forward call records ``(function, inputs)`` on the output
tensor; :meth:`Tensor.backward` walks that record in reverse topological order
and accumulates gradients into leaves that have ``requires_grad=True``.
The tape is rebuilt on every forward pass.

Broadcasting is deliberately narrow: equal shapes, a size-1 operand against
anything, or a 1-channel map against a C-channel map of the same spatial size.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels

DEFAULT_DTYPE = np.float32

OPS = {}

_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_ctx", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, (np.ndarray, np.generic)) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")  # keeps 0-d arrays 0-d
        if self.data.ndim > 4:
            raise ShapeError(f"rank {self.data.ndim} > 4 is not supported")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._ctx = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._ctx is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    # -- operators ----------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            return pow_tensor(self, exponent)
        return pow_scalar(self, exponent)

    def exp(self):
        return exp(self)

    def abs(self):
        return absolute(self)

    def sigmoid(self):
        return sigmoid(self)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- autodiff ------------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every grad-requiring leaf.

        ``self`` must be a scalar unless an explicit upstream ``grad`` is given.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)
        if not self.requires_grad:
            return

        order = _toposort(self)
        grads = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._ctx is None:
                if node.grad is None:
                    node.grad = np.array(g, dtype=node.dtype, copy=True)
                else:
                    node.grad += g
                continue
            fn, inputs = node._ctx
            in_grads = fn.backward(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    gi = _unbroadcast(gi, t.shape)
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi


def _toposort(root):
    order, seen = [], set()
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
        if node._ctx is not None:
            for t in node._ctx[1]:
                if isinstance(t, Tensor) and t.requires_grad and id(t) not in seen:
                    stack.append((t, False))
    order.reverse()
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE), dtype=dtype or DEFAULT_DTYPE)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    size = int(np.prod(shape)) if shape else 1
    if size == 1:
        return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)
    # channel broadcast: 1 x H x W (or B x 1 x H x W) against C x H x W
    axis = g.ndim - 3
    return g.sum(axis=axis, keepdims=True).reshape(shape)


def broadcast_shape(a, b):
    if a == b:
        return a
    na = int(np.prod(a)) if a else 1
    nb = int(np.prod(b)) if b else 1
    if nb == 1 and len(b) <= len(a):
        return a
    if na == 1 and len(a) <= len(b):
        return b
    if len(a) == len(b) and len(a) >= 3:
        ax = len(a) - 3
        if a[:ax] == b[:ax] and a[ax + 1:] == b[ax + 1:] and 1 in (a[ax], b[ax]):
            return a if b[ax] == 1 else b
    raise ShapeError(f"shapes {a} and {b} are not broadcast-compatible")


class Function:
    """One differentiable operation.

    Subclasses implement ``forward(*arrays, **params) -> ndarray`` and
    ``backward(grad) -> tuple`` with one entry (or None) per input.
    ``self.needs`` tells the forward which inputs will want a gradient.
    """

    name = None

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.name:
            OPS[cls.name] = cls

    @classmethod
    def apply(cls, *inputs, **params):
        fn = cls()
        ref = next((t for t in inputs if isinstance(t, Tensor)), None)
        dtype = ref.dtype if ref is not None else DEFAULT_DTYPE
        tensors = [t if isinstance(t, Tensor) else as_tensor(t, dtype) for t in inputs]
        fn.needs = tuple(t.requires_grad for t in tensors)
        if not _GRAD_ENABLED:
            fn.needs = (False,) * len(tensors)
        out = Tensor(fn.forward(*[t.data for t in tensors], **params))
        if any(fn.needs):
            out.requires_grad = True
            out._ctx = (fn, tensors)
        return out

    def forward(self, *args, **params):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


@contextmanager
def no_grad():
    """Evaluate without recording the tape (nothing saved for backward)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextmanager
def sign_flip(op_name):
    """Negate the backward of one registered op (mutation testing of the checker)."""
    cls = OPS[op_name]
    original = cls.backward

    def flipped(self, grad):
        return tuple(None if g is None else -g for g in original(self, grad))

    cls.backward = flipped
    try:
        yield
    finally:
        cls.backward = original


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

class Add(Function):
    name = "add"

    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        return a + b

    def backward(self, g):
        return g, g


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        return a - b

    def backward(self, g):
        return g, -g


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return (g * self.b if self.needs[0] else None,
                g * self.a if self.needs[1] else None)


class Div(Function):
    name = "div"

    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        gb = g / self.b
        return (gb if self.needs[0] else None,
                -gb * self.a / self.b if self.needs[1] else None)


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class PowScalar(Function):
    name = "pow_scalar"

    def forward(self, a, exponent):
        exponent = float(exponent)
        if not exponent.is_integer() and np.any(a <= 0):
            raise ValueError("pow: non-positive base with non-integer exponent")
        self.a, self.p = a, exponent
        return np.power(a, a.dtype.type(exponent))

    def backward(self, g):
        p = self.a.dtype.type(self.p)
        return (g * p * np.power(self.a, p - 1),)


class Pow(Function):
    """``base ** exponent`` with a tensor exponent (base must be > 0)."""

    name = "pow"

    def forward(self, base, exponent):
        broadcast_shape(base.shape, exponent.shape)
        if np.any(base <= 0):
            raise ValueError("pow with tensor exponent requires a strictly positive base")
        out = np.power(base, exponent)
        self.base, self.exponent, self.out = base, exponent, out
        return out

    def backward(self, g):
        gb = ge = None
        if self.needs[0]:
            gb = g * self.exponent * np.power(self.base, self.exponent - 1)
        if self.needs[1]:
            ge = g * self.out * np.log(self.base)
        return gb, ge


class Exp(Function):
    name = "exp"

    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


def flush_subnormal(a):
    """Zero subnormal entries in place.

    A saturated sigmoid produces gradients around 1e-38 in float32; once they
    are subnormal every matmul touching them runs many times slower.
    """
    a[np.abs(a) < np.finfo(a.dtype).tiny] = 0
    return a


class Abs(Function):
    name = "abs"

    def forward(self, a):
        self.sign = np.sign(a)  # subgradient 0 at 0
        return np.abs(a)

    def backward(self, g):
        return (g * self.sign,)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        info = np.finfo(a.dtype)
        with np.errstate(over="ignore"):
            out = 1.0 / (1.0 + np.exp(-a))
        # keep the open-interval guarantee after float saturation
        self.out = np.clip(out, info.tiny, 1 - info.epsneg).astype(a.dtype, copy=False)
        return self.out

    def backward(self, g):
        return (flush_subnormal(g * self.out * (1 - self.out)),)


class LeakyReLU(Function):
    name = "leaky_relu"

    def forward(self, a, slope=0.2):
        self.scale = np.where(a > 0, a.dtype.type(1), a.dtype.type(slope))
        return a * self.scale

    def backward(self, g):
        return (g * self.scale,)


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------

class Conv2d(Function):
    """Stride-1 'same' convolution (cross-correlation) with odd square kernels.

    ``layout="chw"``: input C x H x W (or B x C x H x W), output O x H x W.
    ``layout="hwc"``: input H x W x C (or B x H x W x C), output H x W x O;
    this is the fast path the decoders use.  The kernel is O x C x k x k and
    the bias has O entries in both layouts.
    """

    name = "conv2d"

    def forward(self, x, w, b, padding="reflect", layout="chw"):
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise ShapeError(f"kernel must be O x C x k x k with odd k, got {w.shape}")
        if x.ndim not in (3, 4):
            raise ShapeError(f"conv2d input must be rank 3 or 4, got {x.shape}")
        if layout not in ("chw", "hwc"):
            raise ValueError(f"layout must be 'chw' or 'hwc', got {layout!r}")
        if padding not in ("reflect", "zero"):
            raise ValueError(f"padding must be 'reflect' or 'zero', got {padding!r}")
        batched = x.ndim == 4
        xs = x if batched else x[None]
        if layout == "chw":
            xs = xs.transpose(0, 2, 3, 1)
        B, H, W, C = xs.shape
        O, k = w.shape[0], w.shape[2]
        if C != w.shape[1]:
            raise ShapeError(f"input has {C} channels, kernel expects {w.shape[1]}")
        if b.shape != (O,):
            raise ShapeError(f"bias shape {b.shape} does not match {O} output channels")
        p = (k - 1) // 2
        reflect = padding == "reflect"
        if reflect and p >= min(H, W):
            raise ShapeError(f"reflect padding {p} needs spatial dims > {p}, got {(H, W)}")
        cols = [kernels.im2col(xi, k, reflect) for xi in xs]
        cols = cols[0] if B == 1 else np.concatenate(cols, axis=0)
        w2 = np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(O, k * k * C)
        out = cols @ w2.T
        out += b
        out = out.reshape(B, H, W, O)
        if layout == "chw":
            out = out.transpose(0, 3, 1, 2)
        self.k, self.reflect, self.batched, self.layout = k, reflect, batched, layout
        self.in_shape, self.w_shape, self.w2 = (B, H, W, C), w.shape, w2
        self.cols = cols if self.needs[1] else None
        out = np.ascontiguousarray(out)
        return out if batched else out[0]

    def backward(self, g):
        B, H, W, C = self.in_shape
        O, k = self.w_shape[0], self.k
        gs = g if self.batched else g[None]
        if self.layout == "chw":
            gs = gs.transpose(0, 2, 3, 1)
        g2 = np.ascontiguousarray(gs).reshape(B * H * W, O)
        gx = gw = gb = None
        if self.needs[0]:
            dcols = g2 @ self.w2
            n = H * W
            parts = [kernels.col2im(dcols[i * n:(i + 1) * n], (H, W, C), k, self.reflect)
                     for i in range(B)]
            gx = np.stack(parts)
            if self.layout == "chw":
                gx = gx.transpose(0, 3, 1, 2)
            gx = flush_subnormal(np.ascontiguousarray(gx if self.batched else gx[0]))
        if self.needs[1]:
            gw = (g2.T @ self.cols).reshape(O, k, k, C).transpose(0, 3, 1, 2)
            gw = np.ascontiguousarray(gw)
        if self.needs[2]:
            gb = g2.sum(axis=0)
        return gx, gw, gb


class Upsample2x(Function):
    """Nearest-neighbour x2 upsampling; each pixel becomes a 2 x 2 block."""

    name = "upsample_nearest2x"

    def forward(self, x, layout="chw"):
        if x.ndim not in (3, 4):
            raise ShapeError(f"upsample needs a rank-3 (or batched) input, got {x.shape}")
        self.layout = layout
        if layout == "chw":
            return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)
        if x.ndim == 3:
            return kernels.upsample2x(x)
        return np.stack([kernels.upsample2x(xi) for xi in x])

    def backward(self, g):
        if self.layout == "chw":
            return ((g[..., 0::2, 0::2] + g[..., 0::2, 1::2])
                    + (g[..., 1::2, 0::2] + g[..., 1::2, 1::2]),)
        if g.ndim == 3:
            return (kernels.upsample2x_backward(g),)
        return (np.stack([kernels.upsample2x_backward(gi) for gi in g]),)


class Permute(Function):
    name = "permute"

    def forward(self, x, axes=()):
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(x.transpose(axes))

    def backward(self, g):
        return (np.ascontiguousarray(g.transpose(self.inverse)),)


class SpatialGradient(Function):
    """Forward differences along width (first C channels) and height (next C).

    The last column / row difference is 0 (replicate boundary).
    """

    name = "spatial_gradient"

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"spatial_gradient needs C x H x W, got {x.shape}")
        dx = np.zeros_like(x)
        dy = np.zeros_like(x)
        dx[:, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
        dy[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
        self.C = x.shape[0]
        return np.concatenate([dx, dy], axis=0)

    def backward(self, g):
        gdx, gdy = g[:self.C], g[self.C:]
        out = np.zeros_like(gdx)
        out[:, :, 1:] += gdx[:, :, :-1]
        out[:, :, :-1] -= gdx[:, :, :-1]
        out[:, 1:, :] += gdy[:, :-1, :]
        out[:, :-1, :] -= gdy[:, :-1, :]
        return (out,)


class Sum(Function):
    name = "sum"

    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.shape).copy(),)


class Mean(Function):
    name = "mean"

    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        out = x.mean(axis=axis, keepdims=keepdims)
        self.n = x.size // max(np.asarray(out).size, 1)
        return np.asarray(out, dtype=x.dtype)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g / g.dtype.type(self.n), self.shape).copy(),)


class Reshape(Function):
    name = "reshape"

    def forward(self, x, shape=()):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.shape),)


class Stack(Function):
    name = "stack"

    def forward(self, *xs):
        return np.stack(xs)

    def backward(self, g):
        return tuple(g[i] for i in range(g.shape[0]))


# ---------------------------------------------------------------------------
# functional API
# ---------------------------------------------------------------------------

def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def div(a, b):
    return Div.apply(a, b)


def neg(a):
    return Neg.apply(a)


def pow_scalar(a, exponent):
    return PowScalar.apply(a, exponent=exponent)


def pow_tensor(base, exponent):
    return Pow.apply(base, exponent)


def exp(a):
    return Exp.apply(a)


def absolute(a):
    return Abs.apply(a)


def sigmoid(a):
    return Sigmoid.apply(a)


def leaky_relu(a, slope=0.2):
    return LeakyReLU.apply(a, slope=slope)


def conv2d(x, kernel, bias, padding="reflect", layout="chw"):
    return Conv2d.apply(x, kernel, bias, padding=padding, layout=layout)


def upsample_nearest2x(x, layout="chw"):
    return Upsample2x.apply(x, layout=layout)


def permute(x, axes):
    return Permute.apply(x, axes=tuple(axes))


def spatial_gradient(x):
    return SpatialGradient.apply(x)


def sum_(x, axis=None, keepdims=False):
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def reshape(x, shape):
    return Reshape.apply(x, shape=tuple(shape))


def stack(tensors):
    return Stack.apply(*tensors)


def channel_max(x):
    """Per-pixel max over the 3 colour channels; constants only (no backward)."""
    if isinstance(x, Tensor):
        if x.requires_grad:
            raise ValueError("channel_max is only defined on constant (non-grad) tensors")
        arr = x.data
    else:
        arr = np.asarray(x)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"channel_max needs a 3 x H x W input, got {arr.shape}")
    return Tensor(arr.max(axis=0, keepdims=True), dtype=arr.dtype)
