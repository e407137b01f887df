"""Probability velocity, Euler-discretised CTMC sampling and the mutation-budget sampler."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._kernels_py import euler_kernel
from .errors import ConfigurationError, NumericalError, SingularityError
from .paths import Scheduler, SourceDistribution, kappa

log = logging.getLogger(__name__)

CLAMP_TOL = 1e-8


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 16
    scheduler: Scheduler = Scheduler("quadratic")
    force_terminal_unmask: bool = True
    mutation_budget: int | None = None
    reference: np.ndarray | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("sampler needs at least one step")
        if self.mutation_budget is not None:
            if self.mutation_budget < 0:
                raise ConfigurationError("mutation budget must be nonnegative")
            if self.reference is None:
                raise ConfigurationError("mutation budget requires a reference sequence")

    @property
    def h(self) -> float:
        return 1.0 / self.steps

    def grid(self) -> np.ndarray:
        return np.arange(self.steps) * self.h


def rate_factor(scheduler: Scheduler, t: float) -> float:
    k, dk = kappa(scheduler, t)
    if k >= 1.0:
        raise SingularityError(f"kappa({t}) = 1: velocity undefined, use terminal unmasking")
    return dk / (1.0 - k)


def velocity(posterior, x_t, t: float, scheduler: Scheduler, n_slots: int) -> np.ndarray:
    """Per-position rows ``kdot/(1-k) * (p(x'|x_t) - delta_{x_t}(x'))`` over all slots."""
    posterior = np.asarray(posterior, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.int64)
    f = rate_factor(scheduler, t)
    rows = np.zeros(posterior.shape[:-1] + (n_slots,))
    rows[..., : posterior.shape[-1]] = posterior
    own = np.take_along_axis(rows, x_t[..., None], axis=-1)
    np.put_along_axis(rows, x_t[..., None], own - 1.0, axis=-1)
    return f * rows


def transition_kernel(posterior, x_t, t: float, h: float, scheduler: Scheduler,
                      n_slots: int) -> np.ndarray:
    """Clamped kernel ``delta + h * u`` with the same arithmetic the samplers use."""
    scale = h * rate_factor(scheduler, t)
    k = euler_kernel(np.asarray(x_t, dtype=np.int64), np.asarray(posterior, dtype=np.float64),
                     scale, n_slots)
    worst = float(max(-k.min(), 0.0))
    if worst > CLAMP_TOL:
        raise NumericalError(f"negative transition probability {-worst:.3g}")
    np.clip(k, 0.0, 1.0, out=k)
    return k / k.sum(axis=-1, keepdims=True)


def euler_step(x_t, rows, h: float, rng: np.random.Generator) -> np.ndarray:
    """Resample every position from ``delta_{x_t} + h * u``."""
    x_t = np.asarray(x_t, dtype=np.int64)
    rows = np.asarray(rows, dtype=np.float64)
    k = h * rows
    own = np.take_along_axis(k, x_t[..., None], axis=-1)
    np.put_along_axis(k, x_t[..., None], own + 1.0, axis=-1)
    worst = float(max(-k.min(), 0.0))
    if worst > CLAMP_TOL:
        raise NumericalError(f"negative transition probability {-worst:.3g} (h={h})")
    np.clip(k, 0.0, 1.0, out=k)
    u = rng.random(x_t.shape)
    return kernels.categorical(k, u).reshape(x_t.shape)


def generate(denoiser, source: SourceDistribution, config: SamplerConfig,
             rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Simulate the CTMC from the source to t=1 on the left-endpoint grid.

    Returns one sequence ``(L,)`` when ``n`` is None, else a batch ``(n, L)``.
    """
    vocab = denoiser.vocab
    L = denoiser.length
    m = 1 if n is None else n
    fast = getattr(denoiser, "generate_batch", None)
    if fast is not None and source.kind == "mask":
        x = fast(config, rng, m)
        return x[0] if n is None else x
    x = source.sample(L, rng, m)
    h = config.h
    sched = config.scheduler
    for t in config.grid():
        scale = h * rate_factor(sched, t)
        post = denoiser.predict(x, t)
        u = rng.random(x.shape)
        x, worst = kernels.euler_sample(x, post, scale, u, vocab.n_slots, CLAMP_TOL)
        if worst > CLAMP_TOL:
            raise NumericalError(f"negative transition probability {-worst:.3g} at t={t}")
    if config.force_terminal_unmask and vocab.has_mask:
        x = terminal_unmask(denoiser, x, 1.0 - h, rng)
    return x[0] if n is None else x


def terminal_unmask(denoiser, x: np.ndarray, t: float, rng: np.random.Generator) -> np.ndarray:
    """Resample residual mask positions from the denoiser at the final state."""
    u = rng.random(x.shape)
    still = x == denoiser.vocab.mask_token
    if not np.any(still):
        return x
    log.debug("terminal unmasking of %d positions", int(still.sum()))
    post = denoiser.predict(x, t)
    draws = kernels.categorical(post, u).reshape(x.shape)
    return np.where(still, draws, x)


def generate_constrained(denoiser, config: SamplerConfig, rng: np.random.Generator,
                         n: int | None = None) -> np.ndarray:
    """Edit ``config.reference`` one (position, token) at a time, at most ``mutation_budget`` times.

    Each step draws a single edit with probability proportional to the
    positive off-diagonal rates; self-transitions and the mask slot never
    receive mass. A chain stops early once no positive rate remains.
    """
    if config.mutation_budget is None:
        raise ConfigurationError("generate_constrained needs a mutation budget")
    ref = np.asarray(config.reference, dtype=np.int64)
    m = 1 if n is None else n
    x = np.tile(ref, (m, 1))
    L, V = x.shape[1], denoiser.vocab.size
    edits = np.zeros(m, dtype=np.int64)
    active = np.full(m, config.mutation_budget > 0)
    for t in config.grid():
        if not np.any(active):
            break
        idx = np.nonzero(active)[0]
        # the common rate factor cancels in the proportional draw
        rates = np.array(denoiser.predict(x[idx], t), dtype=np.float64)
        np.put_along_axis(rates, x[idx][..., None], 0.0, axis=-1)
        flat = rates.reshape(len(idx), L * V)
        total = flat.sum(axis=1)
        u = rng.random(len(idx))
        live = total > 1e-12
        if np.any(live):
            pick = kernels.categorical(flat[live], u[live])
            rows = idx[live]
            x[rows, pick // V] = pick % V
            edits[rows] += 1
        active[idx[~live]] = False
        active &= edits < config.mutation_budget
    return x[0] if n is None else x
