"""Shared-MLP building blocks on top of the autodiff engine.

Parameter initialization is keyed by (seed, parameter name) rather than by
draw order, so two models that share a parameter name and shape initialize
identically no matter which other parameters exist around them.
"""

from __future__ import annotations

import zlib

import numpy as np

from .autodiff import Tensor, leaky_relu, matmul


def rng_for(seed, name):
    """Deterministic generator for one named parameter."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(seed), zlib.crc32(name.encode())))))


def glorot_normal(rng, fan_in, fan_out):
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


class Linear:
    """y = x @ w + b with Glorot-normal weights and zero bias."""

    def __init__(self, in_dim, out_dim, name, seed):
        self.name = name
        self.w = Tensor(glorot_normal(rng_for(seed, name + "/w"), in_dim, out_dim), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x):
        return matmul(x, self.w) + self.b

    def named_parameters(self):
        return [(self.name + "/w", self.w), (self.name + "/b", self.b)]


class Perceptron:
    """Shared single-hidden-layer MLP; hidden width equals output width.

    Applied row-wise to the trailing feature axis, so the same weights serve
    every point (or every atom) independently. activation="linear" skips the
    nonlinearity, which is handy for exact identity configurations in tests.
    """

    def __init__(self, in_dim, out_dim, name, seed, activation="leaky_relu"):
        if activation not in ("leaky_relu", "linear"):
            raise ValueError(f"Perceptron: unknown activation {activation!r}")
        self.name = name
        self.activation = activation
        self.lin1 = Linear(in_dim, out_dim, name + "/lin1", seed)
        self.lin2 = Linear(out_dim, out_dim, name + "/lin2", seed)

    def __call__(self, x):
        h = self.lin1(x)
        if self.activation == "leaky_relu":
            h = leaky_relu(h)
        return self.lin2(h)

    def named_parameters(self):
        return self.lin1.named_parameters() + self.lin2.named_parameters()


class Affine:
    """Per-feature scale and shift; the normalization stand-in."""

    def __init__(self, width, name):
        self.name = name
        self.scale = Tensor(np.ones(width), requires_grad=True)
        self.shift = Tensor(np.zeros(width), requires_grad=True)

    def __call__(self, x):
        return x * self.scale + self.shift

    def named_parameters(self):
        return [(self.name + "/scale", self.scale), (self.name + "/shift", self.shift)]
