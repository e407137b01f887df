"""Vocabularies, schedulers, source distributions and the convex conditional path.

Sequences are plain integer numpy arrays: shape ``(L,)`` for one sequence or
``(n, L)`` for a batch. When the vocabulary carries a mask token it occupies
the extra slot ``id = size``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError


@dataclass(frozen=True)
class Vocab:
    size: int
    has_mask: bool = True

    def __post_init__(self):
        if self.size < 2:
            raise ConfigurationError(f"vocab size must be >= 2, got {self.size}")

    @property
    def mask_token(self) -> int | None:
        return self.size if self.has_mask else None

    @property
    def n_slots(self) -> int:
        return self.size + int(self.has_mask)

    def check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if x.size and (x.min() < 0 or x.max() >= self.n_slots):
            raise DomainError("token id out of range for vocabulary")
        return x


@dataclass(frozen=True)
class Scheduler:
    """Monotone interpolation ``kappa(t)`` with ``kappa(0)=0`` and ``kappa(1)=1``."""

    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "quadratic"):
            raise ConfigurationError(f"unknown scheduler kind {self.kind!r}")

    def __call__(self, t):
        return kappa(self, t)


def kappa(scheduler: Scheduler, t):
    """Return ``(kappa(t), dkappa/dt)``. Accepts scalars or arrays."""
    ta = np.asarray(t, dtype=np.float64)
    if np.any(ta < 0.0) or np.any(ta > 1.0) or np.any(np.isnan(ta)):
        raise DomainError(f"time must lie in [0, 1], got {t}")
    if scheduler.kind == "linear":
        k, dk = ta, np.ones_like(ta)
    else:
        k, dk = ta * ta, 2.0 * ta
    if np.ndim(t) == 0:
        return float(k), float(dk)
    return k, dk


@dataclass(frozen=True)
class SourceDistribution:
    kind: str
    vocab: Vocab

    def __post_init__(self):
        if self.kind not in ("mask", "uniform"):
            raise ConfigurationError(f"unknown source kind {self.kind!r}")
        if self.kind == "mask" and not self.vocab.has_mask:
            raise ConfigurationError("mask source requires a vocabulary with a mask token")

    def sample(self, L: int, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        return sample_source(self, L, rng, n)

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind == "mask":
            ok = np.all(x == self.vocab.mask_token, axis=-1)
            with np.errstate(divide="ignore"):
                return np.log(ok.astype(np.float64))
        ok = np.all(x < self.vocab.size, axis=-1)
        lp = -x.shape[-1] * np.log(self.vocab.size)
        return np.where(ok, lp, -np.inf)


def sample_source(source: SourceDistribution, L: int, rng: np.random.Generator,
                  n: int | None = None) -> np.ndarray:
    if L < 1:
        raise ShapeError("sequence length must be >= 1")
    shape = (L,) if n is None else (n, L)
    if source.kind == "mask":
        return np.full(shape, source.vocab.mask_token, dtype=np.int64)
    return rng.integers(0, source.vocab.size, size=shape, dtype=np.int64)


def sample_conditional_path(x0, x1, t: float, scheduler: Scheduler,
                            rng: np.random.Generator) -> np.ndarray:
    """Reveal each position of ``x1`` independently with probability ``kappa(t)``."""
    x0 = np.asarray(x0, dtype=np.int64)
    x1 = np.asarray(x1, dtype=np.int64)
    if x0.shape != x1.shape:
        raise ShapeError(f"x0 shape {x0.shape} != x1 shape {x1.shape}")
    k, _ = kappa(scheduler, t)
    reveal = rng.random(x1.shape) < k
    return np.where(reveal, x1, x0)


def conditional_path_prob(x, x0, x1, t: float, scheduler: Scheduler):
    """Probability of ``x`` under the factorised convex path between ``x0`` and ``x1``."""
    x, x0, x1 = (np.asarray(a, dtype=np.int64) for a in (x, x0, x1))
    if not (x.shape[-1] == x0.shape[-1] == x1.shape[-1]):
        raise ShapeError("sequence lengths differ")
    k, _ = kappa(scheduler, t)
    per_pos = (1.0 - k) * (x == x0) + k * (x == x1)
    out = np.prod(per_pos, axis=-1)
    return float(out) if np.ndim(out) == 0 else out
