"""Dense tensors with reverse-mode automatic differentiation.

Only the operator set needed by PyramNet is provided. Every operator is a
plain function returning a new :class:`Tensor`; the graph is recorded on
the fly and swept in reverse topological order by :meth:`Tensor.backward`.

Training runs in float32. Gradient checking switches to float64 through
:func:`default_dtype`.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DimensionError, InternalError, TrainingError

_FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))
_default_dtype = np.dtype(np.float32)


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype given to tensors built from raw data."""
    global _default_dtype
    previous = _default_dtype
    _default_dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(dtype or _default_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.name = name
        self._parents = ()
        self._backward = None

    # construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.name = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

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
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{label})"

    # autodiff --------------------------------------------------------------
    def backward(self, grad=None, _reverse_visit=False):
        """Populate ``.grad`` on every reachable tensor that requires grad.

        Gradients accumulate additively, both across fan-out inside one sweep
        and across repeated calls.
        """
        if grad is None:
            if self.data.size != 1:
                raise ConfigError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)
        if not self.requires_grad:
            return
        order = _topological_order(self, _reverse_visit)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # operator sugar ---------------------------------------------------------
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

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _topological_order(root, reverse_visit=False):
    order = []
    state = {}  # id -> 1 (on stack) | 2 (done)
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise InternalError(f"cycle in recorded graph at {node!r}")
        state[key] = 1
        stack.append((node, True))
        parents = node._parents[::-1] if reverse_visit else node._parents
        for parent in parents:
            if not parent.requires_grad:
                continue
            pmark = state.get(id(parent))
            if pmark == 1:
                raise InternalError(f"cycle in recorded graph at {parent!r}")
            if pmark is None:
                stack.append((parent, False))
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _lift(a, b):
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_t and not b_t:
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif b_t and not a_t:
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not a_t:
        a, b = Tensor(a), Tensor(b)
    return a, b


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = _lift(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(
        a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add"
    )


def sub(a, b):
    a, b = _lift(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(
        a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub"
    )


def mul(a, b):
    a, b = _lift(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return Tensor._make(ad * bd, (a, b), backward, "mul")


def div(a, b):
    a, b = _lift(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return Tensor._make(out, (a, b), backward, "div")


def sqrt(x):
    out = np.sqrt(x.data)
    return Tensor._make(out, (x,), lambda g: (g / (2.0 * out),), "sqrt")


def _relu_grad(g, x):
    return g * (x > 0)


def relu(x):
    xd = x.data
    return Tensor._make(np.maximum(xd, 0), (x,), lambda g: (_relu_grad(g, xd),), "relu")


# linear algebra / shape -----------------------------------------------------

def matmul(a, b):
    """Batched matrix product with numpy broadcasting of leading axes."""
    a, b = _lift(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return Tensor._make(ad @ bd, (a, b), backward, "matmul")


def pointwise_linear(x, weight, bias=None):
    """Shared per-point linear map ``x @ W + b`` (a 1x1 convolution over points)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"pointwise_linear: input {x.shape} incompatible with weight {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"pointwise_linear: bias {bias.shape} incompatible with weight {weight.shape}"
        )
    xd, wd = x.data, weight.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = (x2 @ wd).reshape(lead + (wd.shape[1],))
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward, "pointwise_linear")


def reshape(x, shape):
    src = x.shape
    return Tensor._make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return Tensor._make(
        np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise DimensionError(
                f"concat: shapes {[tt.shape for tt in tensors]} disagree off axis {axis}"
            )
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat"
    )


def sum_(x, axis=None, keepdims=False):
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([shape[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return Tensor._make(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward, "mean")


def global_avg_pool(x, axis, keepdims=True):
    """Mean over ``axis``; by default the axis is kept with extent 1."""
    out = mean(x, axis=axis, keepdims=keepdims)
    out.op = "global_avg_pool"
    return out


def max_pool_over_points(x, axis=-2, keepdims=False):
    """Channel-wise maximum over the point axis.

    The gradient flows to the first arg-max of each channel.
    """
    xd = x.data
    ax = axis % xd.ndim
    idx = np.expand_dims(np.argmax(xd, axis=ax), ax)
    out = np.take_along_axis(xd, idx, axis=ax)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, idx, g, axis=ax)
        return (gx,)

    if not keepdims:
        out = np.squeeze(out, axis=ax)
    return Tensor._make(out, (x,), backward, "max_pool")


def gather_rows(x, indices):
    """Stack selected rows: ``x`` (..., N, F), ``indices`` (..., N, k) -> (..., N, k, F)."""
    xd = x.data
    idx = np.asarray(indices)
    lead = xd.shape[:-2]
    n, f = xd.shape[-2:]
    flat = xd.reshape((-1, n, f))
    fidx = idx.reshape((flat.shape[0], idx.shape[-2], idx.shape[-1]))
    batch = np.arange(flat.shape[0])[:, None, None]
    out = flat[batch, fidx]

    def backward(g):
        gx = np.zeros_like(flat)
        np.add.at(gx, (batch, fidx), g.reshape(out.shape))
        return (gx.reshape(xd.shape),)

    return Tensor._make(out.reshape(lead + idx.shape[-2:] + (f,)), (x,), backward, "gather_rows")


def neighbor_mean(x, indices):
    """Mean of the selected rows, equal to ``gather_rows`` followed by averaging over k.

    Implemented as a product with a row-stochastic selection matrix so the
    (N, k, F) intermediate is never materialised.
    """
    xd = x.data
    idx = np.asarray(indices)
    n = xd.shape[-2]
    k = idx.shape[-1]
    weights = np.zeros(idx.shape[:-1] + (n,), dtype=xd.dtype)
    np.put_along_axis(weights, idx, 1.0, axis=-1)
    weights /= k
    out = weights @ xd

    def backward(g):
        return (unbroadcast(np.swapaxes(weights, -1, -2) @ g, xd.shape),)

    return Tensor._make(out, (x,), backward, "neighbor_mean")


# convolution / resampling ---------------------------------------------------

def _windows(xpad, kh, kw, sh, sw, ho, wo):
    win = np.lib.stride_tricks.sliding_window_view(xpad, (kh, kw), axis=(1, 2))
    return win[:, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def conv2d(x, kernel, stride=(1, 1)):
    """Zero-padded 'same' cross-correlation.

    ``x`` is (H, W, Cin) or (B, H, W, Cin); ``kernel`` is (kh, kw, Cin, Cout).
    Output spatial extent is ceil(H/sh) x ceil(W/sw).
    """
    if isinstance(stride, int):
        stride = (stride, stride)
    sh, sw = stride
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d: kernel extent must be odd, got {kh}x{kw}")
    if sh < 1 or sw < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or xd.shape[-1] != cin:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    b, h, w, _ = xd.shape
    ph, pw = kh // 2, kw // 2
    ho, wo = -(-h // sh), -(-w // sw)
    xpad = np.pad(xd, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = _windows(xpad, kh, kw, sh, sw, ho, wo)  # B, Ho, Wo, Cin, kh, kw
    kd = np.transpose(kernel.data, (2, 0, 1, 3))  # Cin, kh, kw, Cout
    out = np.tensordot(win, kd, axes=([3, 4, 5], [0, 1, 2]))

    def backward(g):
        if squeeze:
            g = g[None]
        gk = np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2]))  # Cin, kh, kw, Cout
        gk = np.transpose(gk, (1, 2, 0, 3))
        cols = np.tensordot(g, kd, axes=([3], [3]))  # B, Ho, Wo, Cin, kh, kw
        gpad = np.zeros_like(xpad)
        for i in range(kh):
            for j in range(kw):
                gpad[:, i : i + (ho - 1) * sh + 1 : sh, j : j + (wo - 1) * sw + 1 : sw] += cols[
                    ..., i, j
                ]
        gx = gpad[:, ph : ph + h, pw : pw + w]
        if squeeze:
            gx = gx[0]
        return gx, gk

    if squeeze:
        out = out[0]
    return Tensor._make(np.ascontiguousarray(out), (x, kernel), backward, "conv2d")


def interpolation_matrix(src, dst, dtype=np.float64):
    """Align-corners linear interpolation weights, shape (dst, src)."""
    mat = np.zeros((dst, src), dtype=dtype)
    if src == 1 or dst == 1:
        mat[:, 0] = 1.0
        return mat
    pos = np.arange(dst) * ((src - 1) / (dst - 1))
    lo = np.minimum(np.floor(pos).astype(int), src - 2)
    frac = pos - lo
    rows = np.arange(dst)
    mat[rows, lo] = 1.0 - frac
    mat[rows, lo + 1] += frac
    return mat


def bilinear_resize(x, size):
    """Align-corners bilinear resize of (h, w, C) or (B, h, w, C) to ``size`` = (H, W)."""
    H, W = size
    if H < 1 or W < 1:
        raise ConfigError(f"bilinear_resize: target extent must be >= 1, got {size}")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    h, w = xd.shape[1:3]
    if (h, w) == (H, W):
        out = Tensor._make(x.data, (x,), lambda g: (g,), "bilinear_resize")
        return out
    rh = interpolation_matrix(h, H, xd.dtype)
    rw = interpolation_matrix(w, W, xd.dtype)
    # (H,h) x (B,h,w,C) -> (B,H,w,C) -> (B,H,W,C)
    tmp = np.einsum("Hh,bhwc->bHwc", rh, xd, optimize=True)
    out = np.einsum("Ww,bHwc->bHWc", rw, tmp, optimize=True)

    def backward(g):
        if squeeze:
            g = g[None]
        gt = np.einsum("Ww,bHWc->bHwc", rw, g, optimize=True)
        gx = np.einsum("Hh,bHwc->bhwc", rh, gt, optimize=True)
        return (gx[0] if squeeze else gx,)

    return Tensor._make(out[0] if squeeze else out, (x,), backward, "bilinear_resize")


# regularisation / normalisation / loss --------------------------------------

def dropout(x, keep_prob, training, rng=None):
    """Inverted dropout: zero with probability ``1 - keep_prob``, scale survivors."""
    if not 0.0 < keep_prob <= 1.0:
        raise ConfigError(f"dropout: keep_prob must be in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    mask = (rng.random(x.shape) < keep_prob).astype(x.dtype) / x.dtype.type(keep_prob)
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def softmax_cross_entropy(logits, labels):
    """Mean over samples of -log softmax(logits)[label].

    ``logits`` is (..., P); ``labels`` holds integer ids with shape logits.shape[:-1].
    """
    ld = logits.data
    labels = np.asarray(labels)
    p = ld.shape[-1]
    if labels.shape != ld.shape[:-1]:
        raise DimensionError(f"cross-entropy: labels {labels.shape} vs logits {ld.shape}")
    flat_labels = labels.reshape(-1).astype(np.int64)
    bad = np.flatnonzero((flat_labels < 0) | (flat_labels >= p))
    if bad.size:
        i = int(bad[0])
        raise DataError(f"label {flat_labels[i]} of sample {i} outside [0, {p})")
    z = ld.reshape(-1, p)
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.arange(z.shape[0])
    count = z.shape[0]
    loss = -logp[rows, flat_labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, flat_labels] -= 1.0
        grad *= g / count
        return (grad.reshape(ld.shape),)

    return Tensor._make(np.asarray(loss, dtype=ld.dtype), (logits,), backward, "cross_entropy")


@dataclass
class BatchNormState:
    """Learned scale/shift plus running statistics for one normalised layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    decay: float = 0.5
    eps: float = 1e-5

    @classmethod
    def create(cls, channels, dtype=None, decay=0.5):
        dtype = np.dtype(dtype or _default_dtype)
        return cls(
            gamma=Tensor(np.ones(channels, dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            decay=decay,
        )


def batch_norm(x, state, training):
    """Normalise over every axis but the last (channels).

    In training mode the batch statistics are used and the running statistics
    are updated with ``state.decay`` as the weight on the old value.
    """
    xd = x.data
    axes = tuple(range(xd.ndim - 1))
    count = int(np.prod(xd.shape[:-1]))
    gamma, beta = state.gamma, state.beta
    if not training:
        scale = gamma.data / np.sqrt(state.running_var + state.eps)
        xhat = (xd - state.running_mean) / np.sqrt(state.running_var + state.eps)
        out = xd * scale + (beta.data - state.running_mean * scale)

        def backward_eval(g):
            return g * scale, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return Tensor._make(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward_eval, "batch_norm")
    if count < 2:
        raise ConfigError("batch_norm: training mode needs at least 2 samples per channel")
    mu = xd.mean(axis=axes)
    var = xd.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (xd - mu) * inv_std
    out = xhat * gamma.data + beta.data

    d = state.decay
    state.running_mean = (d * state.running_mean + (1 - d) * mu).astype(state.running_mean.dtype)
    unbiased = var * (count / (count - 1))
    state.running_var = (d * state.running_var + (1 - d) * unbiased).astype(state.running_var.dtype)

    gd = gamma.data

    def backward(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        dxhat = g * gd
        gx = (inv_std / count) * (
            count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
        )
        return gx, ggamma, gbeta

    return Tensor._make(out, (x, gamma, beta), backward, "batch_norm")


def bn_decay_schedule(epoch, start=0.5, maximum=0.999, halflife=20.0):
    """Running-statistics decay rising from ``start`` towards ``maximum``."""
    return min(maximum, 1.0 - (1.0 - start) * 0.5 ** (epoch / halflife))


# initialisation ---------------------------------------------------------------

def truncated_normal(rng, shape, std=0.1, dtype=None):
    """Normal samples redrawn until inside two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype or _default_dtype)


# optimiser --------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update applied in place to ``params[name].data``.

    ``params`` maps names to tensors, ``grads`` maps the same names to arrays.
    Parameters without a gradient entry are treated as having zero gradient.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise DimensionError(f"adam: gradient {g.shape} vs parameter {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data = (p.data - step).astype(p.dtype, copy=False)
    return params, state
