"""Parameter containers built on :mod:`hcfmtts.tensor`."""

import numpy as np

from . import tensor as T
from .tensor import Tensor


def trunc_normal(rng, shape, std=0.02):
    """Normal(0, std) truncated at two standard deviations."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * std).astype(np.float32)


def param(data):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)


class Module:
    """Walks attributes to find parameters and sub-modules.

    Parameters are Tensors with ``requires_grad``; lists of modules are
    named by index. Names are dotted paths, stable across runs. Attributes
    starting with an underscore are skipped (used for cached activations).
    """

    training = False

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast every parameter in place (used for 64-bit gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True, zero=False):
        w = np.zeros((d_in, d_out), np.float32) if zero else trunc_normal(rng, (d_in, d_out))
        self.weight = param(w)
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, d):
        self.gamma = param(np.ones(d))
        self.beta = param(np.zeros(d))

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, rng, n, d):
        self.table = param(trunc_normal(rng, (n, d)))

    def __call__(self, ids):
        return T.embedding(self.table, ids)


class Conv1d(Module):
    def __init__(self, rng, c_in, c_out, kernel):
        self.weight = param(trunc_normal(rng, (c_out, c_in, kernel)))
        self.bias = param(np.zeros(c_out))

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias)
