"""Symmetric alpha-stable sampling and characteristic-function diagnostics.

Normalization: a standard draw has characteristic function exp(-|u|**alpha),
so the driving Levy process has generator -(-Laplacian)**(alpha/2) with
Fourier symbol -|xi|**alpha.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, UsageError


@dataclass(frozen=True)
class StableLaw:
    alpha: float
    scale: float = 1.0
    location: float = 0.0

    def __post_init__(self):
        check_alpha(self.alpha)
        if not self.scale > 0:
            raise ParameterError(f"scale must be positive, got {self.scale}")

    def char_fn(self, u):
        u = np.asarray(u, dtype=float)
        return np.exp(1j * u * self.location - self.scale**self.alpha * np.abs(u) ** self.alpha)

    def sample(self, rng, size=None):
        return self.location + self.scale * sample_standard(self.alpha, rng, size)


def check_alpha(alpha):
    if not (1.0 < alpha < 2.0):
        raise ParameterError(f"stability index must lie in (1, 2), got {alpha}")


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k) % 2**32  # SeedSequence keys must be nonnegative


def substream(seed, *keys) -> np.random.Generator:
    """Independent generator for (seed, key...); keys may be ints or strings."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def cms_transform(alpha, V, W):
    """Chambers-Mallows-Stuck map for the symmetric case.

    V uniform on (-pi/2, pi/2), W unit exponential.
    """
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    return (
        np.sin(alpha * V) / np.cos(V) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * V) / W) ** ((1.0 - alpha) / alpha)
    )


def sample_standard(alpha, rng: np.random.Generator, size=None):
    check_alpha(alpha)
    V = rng.uniform(-np.pi / 2, np.pi / 2, size)
    W = rng.standard_exponential(size)
    out = cms_transform(alpha, V, W)
    return float(out) if size is None else out


def sample_increment(alpha, dt, rng: np.random.Generator, size=None):
    """Increment of the standard process over a step of length dt (self-similarity)."""
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    return dt ** (1.0 / alpha) * sample_standard(alpha, rng, size)


def empirical_char_fn(samples, u):
    """Sample means of cos(u x) and sin(u x) and a standard error.

    The returned standard error is the larger of the two component standard
    errors, so it bounds both.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise UsageError("empirical_char_fn needs at least one sample")
    c = np.cos(u * x)
    s = np.sin(u * x)
    n = x.size
    if n == 1:
        return float(c[0]), float(s[0]), 0.0
    se = np.sqrt(max(c.var(ddof=1), s.var(ddof=1)) / n)
    return float(c.mean()), float(s.mean()), float(se)
