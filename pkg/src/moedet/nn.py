"""Parameter-carrying layers built on the autodiff tensor core.

A ``Module`` owns named parameters (trainable Tensors), named buffers
(plain arrays such as batch-norm running statistics), and child modules
discovered from attribute order, which keeps state enumeration
deterministic for checkpointing and the optimizer.
"""

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


class Module:
    def __init__(self):
        self._params = {}
        self._buffers = {}
        self.training = True

    def param(self, name, array):
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def buffer(self, name, array):
        a = np.asarray(array, dtype=np.float64)
        self._buffers[name] = a
        return a

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, child in self.children():
            yield from child.named_parameters(prefix=f"{prefix}{cname}.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def named_state(self, prefix=""):
        """Parameters and buffers, depth-first in attribute order."""
        for name, t in self._params.items():
            yield prefix + name, t.data
        for name, a in self._buffers.items():
            yield prefix + name, a
        for cname, child in self.children():
            yield from child.named_state(prefix=f"{prefix}{cname}.")

    def state(self):
        return {name: arr.copy() for name, arr in self.named_state()}

    def load_state(self, state):
        """Copy arrays into this module's parameters/buffers by name."""
        own = dict(self.named_state())
        missing = set(own) - set(state)
        if missing:
            raise ShapeError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, arr in own.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ShapeError(f"state entry {name!r}: shape {src.shape} != {arr.shape}")
            arr[...] = src

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def n_parameters(self):
        return sum(t.data.size for t in self.parameters())


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        self.weight = self.param("weight", he_uniform(rng, (n_in, n_out), n_in))
        self.bias = self.param("bias", np.zeros(n_out)) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, pad=0, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = pad
        fan_in = c_in * kernel * kernel
        self.weight = self.param("weight", he_uniform(rng, (c_out, c_in, kernel, kernel), fan_in))
        self.bias = self.param("bias", np.zeros(c_out)) if bias else None

    def forward(self, x):
        out = T.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        if self.bias is not None:
            out = T.add(out, T.reshape(self.bias, (1, -1, 1, 1)))
        return out


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.param("gamma", np.ones(channels))
        self.beta = self.param("beta", np.zeros(channels))
        self.running_mean = self.buffer("running_mean", np.zeros(channels))
        self.running_var = self.buffer("running_var", np.ones(channels))

    def forward(self, x):
        return T.batch_norm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            momentum=self.momentum, eps=self.eps, training=self.training,
        )


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = self.param("gamma", np.ones(dim))
        self.beta = self.param("beta", np.zeros(dim))

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class MultiHeadSelfAttention(Module):
    """Full (unmasked) self-attention over token sequences (B, N, D)."""

    def __init__(self, d_model, heads, rng):
        super().__init__()
        if d_model % heads != 0:
            raise ShapeError(f"model dim {d_model} not divisible by {heads} heads")
        self.heads = heads
        self.d_model = d_model
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def _split_heads(self, x, b, n):
        dh = self.d_model // self.heads
        return T.transpose(T.reshape(x, (b, n, self.heads, dh)), (0, 2, 1, 3))

    def forward(self, x):
        b, n, _ = x.shape
        q = self._split_heads(self.wq.forward(x), b, n)
        k = self._split_heads(self.wk.forward(x), b, n)
        v = self._split_heads(self.wv.forward(x), b, n)
        ctx = T.sdpa(q, k, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, self.d_model))
        return self.wo.forward(ctx)


class TransformerLayer(Module):
    """Pre-norm encoder layer: x + MSA(LN(x)), then + MLP(LN(.))."""

    def __init__(self, d_model, heads, mlp_dim, rng):
        super().__init__()
        self.ln1 = LayerNorm(d_model)
        self.msa = MultiHeadSelfAttention(d_model, heads, rng)
        self.ln2 = LayerNorm(d_model)
        self.fc1 = Linear(d_model, mlp_dim, rng)
        self.fc2 = Linear(mlp_dim, d_model, rng)

    def forward(self, x):
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + tuple(x.shape))
        a = T.add(x, self.msa.forward(self.ln1.forward(x)))
        out = T.add(a, self.fc2.forward(T.relu(self.fc1.forward(self.ln2.forward(a)))))
        if squeeze:
            out = T.reshape(out, tuple(out.shape[1:]))
        return out
