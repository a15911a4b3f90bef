"""Small fully-connected nets with hand-written backprop and Adam.

No autodiff: the architectures are fixed (ReLU MLPs with linear output), so
the backward passes are spelled out and certified against finite differences
in the test suite.  An MLP may carry a leading ensemble dimension so that twin
critics evaluate as one batched matmul.
"""
from __future__ import annotations

import numpy as np


def he_init(rng, fan_in: int, fan_out: int, dtype, scale: float = 1.0,
            ensemble=None) -> np.ndarray:
    std = scale * np.sqrt(2.0 / fan_in)
    shape = (fan_in, fan_out) if ensemble is None else (ensemble, fan_in, fan_out)
    return (rng.standard_normal(shape) * std).astype(dtype)


class MLP:
    """ReLU hidden layers, linear (or ReLU) output, optional ensemble dim.

    Parameters are a flat list [W0, b0, W1, b1, ...]; weights have shape
    (din, dout) or (E, din, dout), biases (dout,) or (E, 1, dout).
    """

    def __init__(self, sizes, rng, dtype=np.float64, ensemble=None,
                 relu_output=False, final_scale=1.0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.dtype = dtype
        self.ensemble = ensemble
        self.relu_output = relu_output
        self.params = []
        last = len(sizes) - 2
        for i, (din, dout) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = final_scale if i == last else 1.0
            w = he_init(rng, din, dout, dtype, scale=scale, ensemble=ensemble)
            bshape = (dout,) if ensemble is None else (ensemble, 1, dout)
            b = np.zeros(bshape, dtype=dtype)
            self.params.append(w)
            self.params.append(b)

    def forward(self, x, need_cache: bool = True):
        """x: (B, din) or (E, B, din).  Returns (y, cache)."""
        cache = [] if need_cache else None
        n_layers = len(self.params) // 2
        h = x
        for i in range(n_layers):
            w = self.params[2 * i]
            b = self.params[2 * i + 1]
            z = h @ w + b
            is_last = i == n_layers - 1
            if need_cache:
                cache.append((h, z))
            if not is_last or self.relu_output:
                h = np.maximum(z, 0)
            else:
                h = z
        return h, cache

    def backward(self, cache, dy):
        """Gradients for every parameter plus the input, given d(loss)/d(output)."""
        n_layers = len(self.params) // 2
        grads = [None] * len(self.params)
        g = dy
        for i in reversed(range(n_layers)):
            x_in, z = cache[i]
            is_last = i == n_layers - 1
            if not is_last or self.relu_output:
                g = g * (z > 0)
            w = self.params[2 * i]
            if self.ensemble is None:
                grads[2 * i] = x_in.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
                g = g @ w.T
            else:
                grads[2 * i] = np.matmul(x_in.transpose(0, 2, 1), g)
                grads[2 * i + 1] = g.sum(axis=1, keepdims=True)
                g = np.matmul(g, w.transpose(0, 2, 1))
        return grads, g

    # -- parameter plumbing ------------------------------------------------

    def copy(self) -> "MLP":
        dup = object.__new__(MLP)
        dup.sizes = self.sizes
        dup.dtype = self.dtype
        dup.ensemble = self.ensemble
        dup.relu_output = self.relu_output
        dup.params = [p.copy() for p in self.params]
        return dup

    def zero_grads(self):
        return [np.zeros_like(p) for p in self.params]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec):
        i = 0
        for p in self.params:
            n = p.size
            p[...] = np.asarray(vec[i:i + n], dtype=self.dtype).reshape(p.shape)
            i += n
        if i != len(vec):
            raise ValueError(f"flat vector length {len(vec)} != parameter count {i}")


class Adam:
    """Standard Adam with bias correction; state arrays match the param list."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def soft_update(target: MLP, online: MLP, tau: float):
    """Polyak averaging: target <- (1 - tau) target + tau online."""
    for tp, op in zip(target.params, online.params):
        tp *= (1.0 - tau)
        tp += tau * op


def all_finite(net: MLP) -> bool:
    return all(np.isfinite(p).all() for p in net.params)
