"""Conditional endpoint models q(x1 | x_t, t) and their cross-entropy training."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigurationError, NumericalError, ShapeError
from .paths import Scheduler, Vocab, kappa

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
MAX_CONTEXTS = 10_000


@dataclass(frozen=True)
class TrainBatch:
    """Parallel arrays: clean targets, noisy states, times and normalised weights."""

    x1: np.ndarray
    xt: np.ndarray
    t: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        k = len(self.weights)
        if not (len(self.x1) == len(self.xt) == len(self.t) == k):
            raise ShapeError("train batch arrays must have equal length")


def _as_batch(x):
    x = np.asarray(x, dtype=np.int64)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


class TabularDenoiser:
    """Exact lookup table over every context in (|V|+1)^L, time independent."""

    def __init__(self, vocab: Vocab, length: int, table: np.ndarray, known: np.ndarray | None = None):
        if not vocab.has_mask:
            raise ConfigurationError("tabular denoiser needs a mask-source vocabulary")
        n_ctx = vocab.n_slots ** length
        if n_ctx > MAX_CONTEXTS:
            raise ConfigurationError(f"context space {n_ctx} exceeds {MAX_CONTEXTS}")
        table = np.asarray(table, dtype=np.float64)
        if table.shape != (n_ctx, length, vocab.size):
            raise ShapeError(f"table shape {table.shape} != {(n_ctx, length, vocab.size)}")
        if np.any(table < 0) or np.any(np.abs(table.sum(-1) - 1.0) > 1e-10):
            raise NumericalError("tabular rows must be probability vectors")
        self.vocab = vocab
        self.length = length
        self.table = table
        self.known = np.ones(n_ctx, bool) if known is None else np.asarray(known, bool)
        self._radix = vocab.n_slots ** np.arange(length)

    @classmethod
    def uniform(cls, vocab, length):
        n_ctx = vocab.n_slots ** length
        return cls(vocab, length, np.full((n_ctx, length, vocab.size), 1.0 / vocab.size),
                   np.zeros(n_ctx, bool))

    @classmethod
    def random(cls, vocab, length, rng, concentration=1.0):
        n_ctx = vocab.n_slots ** length
        table = rng.dirichlet(np.full(vocab.size, concentration), size=(n_ctx, length))
        return cls(vocab, length, table)

    def contexts(self) -> np.ndarray:
        return np.array(list(itertools.product(range(self.vocab.n_slots), repeat=self.length)))[:, ::-1]

    def index(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.int64) @ self._radix

    def predict(self, x_t, t=None) -> np.ndarray:
        x, single = _as_batch(x_t)
        idx = self.index(x)
        if not np.all(self.known[idx]):
            log.debug("tabular denoiser queried at unseen context, uniform fallback")
        out = self.table[idx]
        return out[0] if single else out


class SoftmaxDenoiser:
    """Linear map from one-hot(x_t) plus (t, 1-t, kappa(t)) to per-position logits.

    With ``carry_unmasked`` (mask source only) positions already unmasked in
    ``x_t`` predict their own token with probability one and contribute no
    gradient.
    """

    def __init__(self, vocab: Vocab, length: int, scheduler: Scheduler,
                 weights: np.ndarray | None = None, carry_unmasked: bool | None = None):
        self.vocab = vocab
        self.length = length
        self.scheduler = scheduler
        self.carry_unmasked = vocab.has_mask if carry_unmasked is None else bool(carry_unmasked)
        if self.carry_unmasked and not vocab.has_mask:
            raise ConfigurationError("carry_unmasked needs a mask token")
        shape = (self.feature_dim, length * vocab.size)
        if weights is None:
            weights = np.zeros(shape)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != shape:
            raise ShapeError(f"weights shape {weights.shape} != {shape}")
        self.weights = weights

    @property
    def feature_dim(self) -> int:
        return self.length * self.vocab.n_slots + 3

    def with_weights(self, weights):
        return SoftmaxDenoiser(self.vocab, self.length, self.scheduler, weights, self.carry_unmasked)

    def copy(self):
        return self.with_weights(self.weights.copy())

    def features(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        n, L = x.shape
        S = self.vocab.n_slots
        F = np.zeros((n, self.feature_dim))
        F[np.arange(n)[:, None], np.arange(L) * S + x] = 1.0
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        k, _ = kappa(self.scheduler, t)
        F[:, -3] = t
        F[:, -2] = 1.0 - t
        F[:, -1] = k
        return F

    def _probs(self, F, n):
        z = (F @ self.weights).reshape(n, self.length, self.vocab.size)
        z -= z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def _carry(self, p, x):
        if self.carry_unmasked:
            seen = x != self.vocab.mask_token
            if np.any(seen):
                p[seen] = np.eye(self.vocab.size)[x[seen]]
        return p

    def predict(self, x_t, t) -> np.ndarray:
        x, single = _as_batch(x_t)
        p = self._carry(self._probs(self.features(x, t), len(x)), x)
        return p[0] if single else p

    def loss_and_grad(self, batch: TrainBatch):
        """Weighted cross-entropy and its gradient with respect to ``weights``."""
        x1 = np.asarray(batch.x1, dtype=np.int64)
        xt = np.asarray(batch.xt, dtype=np.int64)
        n = len(x1)
        F = self.features(xt, batch.t)
        p = self._carry(self._probs(F, n), xt)
        pt = np.take_along_axis(p, x1[..., None], axis=-1)[..., 0]
        clamped = pt < LOG_FLOOR
        if np.any(clamped):
            log.debug("cross-entropy clamped %d probabilities", int(clamped.sum()))
        ce = -np.log(np.maximum(pt, LOG_FLOOR)).sum(axis=1)
        w = np.asarray(batch.weights, dtype=np.float64)
        loss = float(np.dot(w, ce))
        dz = p.copy()
        np.put_along_axis(dz, x1[..., None], np.take_along_axis(dz, x1[..., None], -1) - 1.0, -1)
        dz[clamped] = 0.0
        if self.carry_unmasked:
            dz[xt != self.vocab.mask_token] = 0.0
        dz *= w[:, None, None]
        grad = F.T @ dz.reshape(n, -1)
        return loss, grad

    def generate_batch(self, config, rng: np.random.Generator, n: int) -> np.ndarray:
        """Mask-source trajectory through the fused kernel."""
        L, S, V = self.length, self.vocab.n_slots, self.vocab.size
        grid = config.grid()
        k, dk = kappa(config.scheduler, grid)
        scales = config.h * dk / (1.0 - k)
        u = rng.random((len(grid), n, L))
        u_final = rng.random((n, L))
        t_last = float(grid[-1])
        k_last, _ = kappa(self.scheduler, t_last)
        kk, _ = kappa(self.scheduler, grid)
        x0 = np.full((n, L), self.vocab.mask_token, dtype=np.int64)
        x, worst = kernels.softmax_generate(
            self.weights[: L * S].reshape(L, S, L * V), self.weights[L * S:], x0,
            grid, kk, scales, u, u_final, V, self.vocab.mask_token, self.carry_unmasked,
            config.force_terminal_unmask, np.array([t_last, 1.0 - t_last, k_last]))
        if worst > 1e-8:
            raise NumericalError(f"negative transition probability {-worst:.3g}")
        return np.asarray(x, dtype=np.int64)


def predict(denoiser, x_t, t) -> np.ndarray:
    return denoiser.predict(x_t, t)


def ce_loss(denoiser, x1, x_t, t) -> float:
    """Summed per-position cross-entropy of the clean target ``x1``."""
    x1 = np.asarray(x1, dtype=np.int64)
    p = denoiser.predict(x_t, t)
    if denoiser.vocab.has_mask and np.any(x1 == denoiser.vocab.mask_token):
        raise ShapeError("clean target may not contain the mask token")
    pt = np.take_along_axis(p, x1[..., None], axis=-1)[..., 0]
    if np.any(pt < LOG_FLOOR):
        log.debug("cross-entropy clamped at %g", LOG_FLOOR)
    return float(-np.log(np.maximum(pt, LOG_FLOOR)).sum())


def weighted_ce_loss(denoiser, batch: TrainBatch) -> float:
    if isinstance(denoiser, SoftmaxDenoiser):
        return denoiser.loss_and_grad(batch)[0]
    w = np.asarray(batch.weights, dtype=np.float64)
    ce = np.array([ce_loss(denoiser, a, b, t) for a, b, t in zip(batch.x1, batch.xt, batch.t)])
    return float(np.dot(w, ce))


def train_step(denoiser: SoftmaxDenoiser, batch: TrainBatch, learning_rate: float):
    """One plain gradient-descent step. Returns ``(updated_denoiser, pre_step_loss)``."""
    loss, grad = denoiser.loss_and_grad(batch)
    if not np.all(np.isfinite(grad)) or not np.isfinite(loss):
        raise NumericalError(
            f"non-finite gradient (loss={loss}, batch size={len(batch.weights)}, "
            f"weight sum={np.sum(batch.weights)}, t range=({np.min(batch.t)}, {np.max(batch.t)}))")
    if learning_rate == 0:
        return denoiser, loss
    return denoiser.with_weights(denoiser.weights - learning_rate * grad), loss


def fit_tabular_exact(x1, weights, vocab: Vocab, length: int,
                      scheduler: Scheduler | None = None) -> TabularDenoiser:
    """Exact conditional of the weighted empirical law given each context.

    For a mask source and convex paths this is the global minimiser of the
    weighted cross-entropy, at every t.
    """
    x1 = np.asarray(x1, dtype=np.int64).reshape(-1, length)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.any(w > 0):
        raise NumericalError("weights must be nonnegative and not all zero")
    den = TabularDenoiser.uniform(vocab, length)
    table = den.table.copy()
    known = np.zeros(len(table), bool)
    onehot = np.eye(vocab.size)[x1]  # (N, L, V)
    M = vocab.mask_token
    for c_idx, ctx in enumerate(den.contexts()):
        seen = ctx != M
        agree = np.all(x1[:, seen] == ctx[seen], axis=1)
        mass = w[agree]
        total = mass.sum()
        if total <= 0:
            log.debug("context %s has zero consistent mass, uniform row", ctx)
            continue
        table[c_idx] = np.einsum("n,nlv->lv", mass, onehot[agree]) / total
        known[c_idx] = True
    return TabularDenoiser(vocab, length, table, known)
