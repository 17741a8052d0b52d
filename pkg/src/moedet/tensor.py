"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a NumPy array plus an optional gradient buffer. Ops
build a DAG of parent links and backward closures; ``Tensor.backward()``
walks the graph once in reverse topological order, so a tensor feeding
two consumers receives the sum of both path gradients.

Everything is float64: gradient checks against central finite differences
are part of the contract (see ``moedet.gradcheck``).
"""

import contextlib

import numpy as np

from . import _kernels
from .errors import ConfigError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # ---- bookkeeping ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """Populate ``.grad`` on every reachable tensor that requires grad.

        Gradients within the reached subgraph are reset first; each node is
        visited exactly once.
        """
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        for t in topo:
            t.grad = np.zeros_like(t.data)
        if grad is None:
            self.grad = np.ones_like(self.data)
        else:
            self.grad = np.asarray(grad, dtype=np.float64).reshape(self.data.shape)
        for t in reversed(topo):
            if t._backward is not None:
                t._backward(t.grad)

    # ---- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    """Wrap an op result; graph links only if grad mode is on and needed."""
    parents = tuple(parents)
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast to reach ``g.shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


# ---- elementwise and structural ops --------------------------------------


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    return _make(out_data, (a, b), backward)


def mul(a, b):
    a = _coerce(a)
    if not isinstance(b, Tensor):
        c = float(b)

        def backward_const(g):
            if a.requires_grad:
                a.grad += g * c

        return _make(a.data * c, (a,), backward_const)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    return _make(out_data, (a, b), backward)


def matmul(a, b):
    """Matrix product; stacked (batched) operands broadcast over leading dims."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D or stacked operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.grad += _unbroadcast(ga, a.data.shape)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.grad += _unbroadcast(gb, b.data.shape)

    return _make(out_data, (a, b), backward)


def reshape(t, shape):
    t = _coerce(t)
    out_data = t.data.reshape(shape)

    def backward(g):
        if t.requires_grad:
            t.grad += g.reshape(t.data.shape)

    return _make(out_data, (t,), backward)


def transpose(t, axes=None):
    t = _coerce(t)
    out_data = np.transpose(t.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def backward(g):
        if t.requires_grad:
            t.grad += np.transpose(g, inv)

    return _make(out_data, (t,), backward)


def concat(tensors, axis=0):
    tensors = [_coerce(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.grad += piece

    return _make(out_data, tensors, backward)


def stack(tensors, axis=0):
    tensors = [_coerce(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.grad += np.take(g, i, axis=axis)

    return _make(out_data, tensors, backward)


def getitem(t, idx):
    t = _coerce(t)
    out_data = t.data[idx]

    def backward(g):
        if t.requires_grad:
            np.add.at(t.grad, idx, g)

    return _make(np.array(out_data, copy=True), (t,), backward)


def tsum(t, axis=None, keepdims=False):
    t = _coerce(t)
    out_data = t.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if t.requires_grad:
            t.grad += _expand_reduced(g, t.data.shape, axis, keepdims)

    return _make(out_data, (t,), backward)


def tmean(t, axis=None, keepdims=False):
    t = _coerce(t)
    out_data = t.data.mean(axis=axis, keepdims=keepdims)
    count = t.data.size / max(out_data.size, 1)

    def backward(g):
        if t.requires_grad:
            t.grad += _expand_reduced(g, t.data.shape, axis, keepdims) / count

    return _make(out_data, (t,), backward)


# ---- nonlinearities -------------------------------------------------------


def relu(t):
    t = _coerce(t)
    mask = t.data > 0
    out_data = t.data * mask

    def backward(g):
        if t.requires_grad:
            t.grad += g * mask

    return _make(out_data, (t,), backward)


def softmax(t, axis=-1):
    """Max-subtracted softmax along ``axis``; rows sum to one."""
    t = _coerce(t)
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if t.requires_grad:
            t.grad += y * (g - (g * y).sum(axis=axis, keepdims=True))

    return _make(y, (t,), backward)


def max_feature_map(t):
    """Elementwise max over paired channel halves (axis 1).

    (B, 2C, ...) -> (B, C, ...). Ties send the gradient to the first half.
    """
    t = _coerce(t)
    if t.ndim < 2 or t.shape[1] % 2 != 0:
        raise ShapeError(f"max_feature_map needs an even channel count, got shape {t.shape}")
    half = t.shape[1] // 2
    a = t.data[:, :half]
    b = t.data[:, half:]
    first_wins = a >= b
    out_data = np.where(first_wins, a, b)

    def backward(g):
        if t.requires_grad:
            t.grad[:, :half] += g * first_wins
            t.grad[:, half:] += g * ~first_wins

    return _make(out_data, (t,), backward)


# ---- normalization --------------------------------------------------------


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _coerce(x), _coerce(gamma), _coerce(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last axis {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = gamma.data * xhat + beta.data

    def backward(g):
        if beta.requires_grad:
            beta.grad += g.reshape(-1, d).sum(axis=0)
        if gamma.requires_grad:
            gamma.grad += (g * xhat).reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gx = g * gamma.data
            x.grad += inv * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            )

    return _make(out_data, (x, gamma, beta), backward)


def batch_norm2d(x, gamma, beta, running_mean, running_var,
                 momentum=0.1, eps=1e-5, training=True):
    """Per-channel batch norm over (B, C, H, W).

    In training mode batch statistics are used and the running buffers
    (plain arrays on the caller's side) are updated in place; in eval mode
    the running statistics are used.
    """
    x, gamma, beta = _coerce(x), _coerce(gamma), _coerce(beta)
    b, c, h, w = x.shape
    shp = (1, c, 1, 1)
    if training:
        m = b * h * w
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        unbiased = var * m / max(m - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shp)) * inv.reshape(shp)
    out_data = gamma.data.reshape(shp) * xhat + beta.data.reshape(shp)

    def backward(g):
        if beta.requires_grad:
            beta.grad += g.sum(axis=(0, 2, 3))
        if gamma.requires_grad:
            gamma.grad += (g * xhat).sum(axis=(0, 2, 3))
        if x.requires_grad:
            gx = g * gamma.data.reshape(shp)
            if training:
                m = b * h * w
                x.grad += (inv.reshape(shp) / m) * (
                    m * gx
                    - gx.sum(axis=(0, 2, 3)).reshape(shp)
                    - xhat * (gx * xhat).sum(axis=(0, 2, 3)).reshape(shp)
                )
            else:
                x.grad += gx * inv.reshape(shp)

    return _make(out_data, (x, gamma, beta), backward)


# ---- spatial ops ----------------------------------------------------------


def conv2d(x, k, stride=1, pad=0):
    """Cross-correlation of (B, C, H, W) with kernels (O, C, kh, kw).

    Zero padding; out extent = floor((H + 2*pad - kh) / stride) + 1.
    """
    x, k = _coerce(x), _coerce(k)
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {k.shape}")
    bsz, c, h, w = x.shape
    o, kc, kh, kw = k.shape
    if kc != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {k.shape}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"kernel {k.shape} larger than padded input {x.shape} (pad={pad})")
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    cols = _kernels.im2col(x.data, kh, kw, stride, pad)
    wm = k.data.reshape(o, c * kh * kw)
    out_data = np.matmul(wm, cols).reshape(bsz, o, out_h, out_w)

    def backward(g):
        g2 = g.reshape(bsz, o, out_h * out_w)
        if k.requires_grad:
            k.grad += np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(k.data.shape)
        if x.requires_grad:
            dcols = np.matmul(wm.T, g2)
            x.grad += _kernels.col2im(dcols, bsz, c, h, w, kh, kw, stride, pad)

    return _make(out_data, (x, k), backward)


def max_pool2d(x, k, stride=None):
    """Max pooling with window ``k``; stride defaults to the window size."""
    x = _coerce(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects (B, C, H, W), got {x.shape}")
    stride = k if stride is None else stride
    _, _, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"pool window {k} larger than input {x.shape}")
    out_data, argmax = _kernels.maxpool2d_forward(x.data, k, stride)

    def backward(g):
        if x.requires_grad:
            x.grad += _kernels.maxpool2d_backward(g, argmax, h, w)

    return _make(out_data, (x,), backward)


# ---- composites -----------------------------------------------------------


def linear(x, w, b=None):
    """Affine map along the last axis: x @ w (+ b)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def sdpa(q, k, v):
    """Scaled dot-product attention over (..., N, d) operands."""
    d = q.shape[-1]
    scores = mul(matmul(q, transpose_last_two(k)), 1.0 / np.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


def transpose_last_two(t):
    t = _coerce(t)
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(t, tuple(axes))


def cross_entropy_smoothed(logits, labels, eps=0.2):
    """Mean label-smoothed cross entropy over a (B, 2) logit batch.

    Targets are (1 - eps) * onehot + eps / 2; labels are class ids in {0, 1}.
    """
    logits = _coerce(logits)
    if not 0.0 <= eps < 1.0:
        raise ConfigError(f"label smoothing must lie in [0, 1), got {eps}")
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"expected (B, 2) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.shape[0],) or not np.isin(labels, (0, 1)).all():
        raise ShapeError("labels must be a batch-length vector of class ids in {0, 1}")
    bsz = logits.shape[0]
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    q = np.full((bsz, 2), eps / 2.0)
    q[np.arange(bsz), labels] += 1.0 - eps
    out_data = -(q * logp).sum() / bsz

    def backward(g):
        if logits.requires_grad:
            logits.grad += (np.exp(logp) - q) * (g / bsz)

    return _make(out_data, (logits,), backward)
