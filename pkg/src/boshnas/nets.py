"""Small dense networks in plain numpy with exact derivatives.

Backprop is written out by hand in float64, which keeps gradients
bit-reproducible across runs.  A minimal forward-mode dual type rides along
through both the forward and the backward pass; pushing a direction vector
through the input gradient that way yields exact Hessian-vector products
with respect to the input, no finite differences involved.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class Dual:
    """A value paired with a directional derivative (``a + b * eps``).

    Supports just enough arithmetic for the network code; mixing with plain
    arrays lifts them to a zero derivative.
    """

    __slots__ = ("a", "b")
    __array_ufunc__ = None  # keep numpy from elementwise-wrapping us

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    @staticmethod
    def lift(x) -> "Dual":
        if isinstance(x, Dual):
            return x
        arr = np.asarray(x, dtype=float)
        return Dual(arr, np.zeros_like(arr))

    @property
    def T(self) -> "Dual":
        return Dual(self.a.T, self.b.T)

    def __add__(self, other):
        o = Dual.lift(other)
        return Dual(self.a + o.a, self.b + o.b)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.a, -self.b)

    def __sub__(self, other):
        o = Dual.lift(other)
        return Dual(self.a - o.a, self.b - o.b)

    def __rsub__(self, other):
        return Dual.lift(other).__sub__(self)

    def __mul__(self, other):
        o = Dual.lift(other)
        return Dual(self.a * o.a, self.a * o.b + self.b * o.a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Dual.lift(other)
        return Dual(self.a / o.a, (self.b * o.a - self.a * o.b) / (o.a * o.a))

    def __rtruediv__(self, other):
        return Dual.lift(other).__truediv__(self)

    def __matmul__(self, other):
        o = Dual.lift(other)
        return Dual(self.a @ o.a, self.a @ o.b + self.b @ o.a)

    def __rmatmul__(self, other):
        return Dual.lift(other).__matmul__(self)

    def __getitem__(self, idx):
        return Dual(self.a[idx], self.b[idx])


def concat(parts, axis=-1):
    """Concatenate arrays or duals; any dual part lifts the whole result."""
    if any(isinstance(p, Dual) for p in parts):
        lifted = [Dual.lift(p) for p in parts]
        return Dual(
            np.concatenate([p.a for p in lifted], axis=axis),
            np.concatenate([p.b for p in lifted], axis=axis),
        )
    return np.concatenate(parts, axis=axis)


def _shape(x):
    return x.a.shape if isinstance(x, Dual) else np.shape(x)


def tanh(x):
    if isinstance(x, Dual):
        t = np.tanh(x.a)
        return Dual(t, x.b * (1.0 - t * t))
    return np.tanh(x)


def sigmoid(x):
    if isinstance(x, Dual):
        s = expit(x.a)
        return Dual(s, x.b * s * (1.0 - s))
    return expit(x)


def softplus(x):
    """log(1 + exp(x)) without overflow on large inputs."""
    if isinstance(x, Dual):
        return Dual(softplus(x.a), x.b * expit(x.a))
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


class MLP:
    """Fully connected net, tanh hidden layers, linear output.

    Inverted dropout on hidden activations is opt-in per forward call, so the
    same weights serve deterministic prediction and Monte-Carlo sampling.
    """

    def __init__(self, sizes, seed: int = 0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        rng = np.random.default_rng(seed)
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = []
        self.biases = []
        for nin, nout in zip(self.sizes, self.sizes[1:]):
            bound = np.sqrt(6.0 / (nin + nout))
            self.weights.append(rng.uniform(-bound, bound, size=(nin, nout)))
            self.biases.append(np.zeros(nout))

    @property
    def params(self) -> list:
        return self.weights + self.biases

    def forward(self, x, dropout_p: float = 0.0, rng=None, shared_mask: bool = False):
        """Returns (output, cache); the cache feeds the backward passes.

        ``shared_mask`` draws one dropout mask per layer and broadcasts it
        over the batch, so every row sees the same subnetwork.  That is what
        Monte-Carlo sampling wants: each pass is one coherent thinned net,
        not a different one per input.
        """
        if dropout_p > 0.0 and rng is None:
            raise ValueError("dropout needs an rng")
        hs = [x]
        ts, masks = [], []
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if k == last:
                h = z
                break
            t = tanh(z)
            ts.append(t)
            if dropout_p > 0.0:
                shape = (1, _shape(t)[1]) if shared_mask else _shape(t)
                keep = rng.random(shape) >= dropout_p
                mask = keep / (1.0 - dropout_p)
            else:
                mask = None
            masks.append(mask)
            h = t if mask is None else t * mask
            hs.append(h)
        return h, (hs, ts, masks)

    def backward(self, cache, dout):
        """Parameter gradients (aligned with ``params``) and the input
        gradient, for a loss whose output gradient is ``dout``."""
        hs, ts, masks = cache
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        d = dout
        for k in range(len(self.weights) - 1, -1, -1):
            gw[k] = hs[k].T @ d
            gb[k] = d.sum(axis=0)
            d = d @ self.weights[k].T
            if k > 0:
                t, mask = ts[k - 1], masks[k - 1]
                if mask is not None:
                    d = d * mask
                d = d * (1.0 - t * t)
        return gw + gb, d

    def backward_input(self, cache, dout):
        """Input gradient only; works on dual numbers, so pushing a dual
        input through forward then here gives a Hessian-vector product."""
        _, ts, masks = cache
        d = dout
        for k in range(len(self.weights) - 1, -1, -1):
            d = d @ self.weights[k].T
            if k > 0:
                t, mask = ts[k - 1], masks[k - 1]
                if mask is not None:
                    d = d * mask
                d = d * (1.0 - t * t)
        return d


class Adam:
    """Standard Adam updates applied in place to a list of arrays."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
