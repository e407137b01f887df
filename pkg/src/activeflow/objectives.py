"""Forward-, reverse- and symmetric-KL active flow matching losses and the round loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .denoiser import SoftmaxDenoiser, TrainBatch, weighted_ce_loss
from .dynamics import SamplerConfig
from .errors import ConfigurationError, DegenerateBatchError, NumericalError, RoundAbort
from .paths import Scheduler, SourceDistribution, sample_conditional_path
from .proposal import (ProposalMixture, ReplayBuffer, WeightedBatch, draw_batch,
                       effective_sample_size, snis_normalise)

log = logging.getLogger(__name__)

OBJECTIVES = ("fwd", "rev", "sym")


@dataclass(frozen=True)
class AfmConfig:
    objective: str = "fwd"
    k_snis: int = 128
    steps: int = 2000
    learning_rate: float = 0.1
    lr_decay: float = 0.95
    inner_samples: int = 8
    mc_samples: int = 16
    smoothing: float = 1e-6
    max_degenerate: int = 10

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"objective must be one of {OBJECTIVES}")
        if self.k_snis < 2:
            raise ConfigurationError("k_snis must be >= 2")
        if self.objective != "fwd" and self.inner_samples < 2:
            raise ConfigurationError("reverse-KL needs at least two inner samples")
        if self.steps < 0 or self.learning_rate < 0:
            raise ConfigurationError("steps and learning rate must be nonnegative")

    def learning_rate_at(self, r: int) -> float:
        return self.learning_rate * self.lr_decay ** r


@dataclass
class RoundState:
    r: int
    x: np.ndarray
    y: np.ndarray
    tau: float
    phi: SoftmaxDenoiser
    theta: SoftmaxDenoiser
    buffer: ReplayBuffer
    cpe: object
    mixture: ProposalMixture = field(default_factory=ProposalMixture)
    source: SourceDistribution | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)


def corrupt(batch, scheduler: Scheduler, rng: np.random.Generator,
            source: SourceDistribution | None = None) -> TrainBatch:
    """Normalise weights, draw one shared t and noise every endpoint along the path."""
    if isinstance(batch, TrainBatch):
        return batch
    w = snis_normalise(batch.weights)
    x1 = np.asarray(batch.x1, dtype=np.int64)
    t = rng.random()
    if source is None:
        raise ConfigurationError("corrupting a batch needs the source distribution")
    x0 = source.sample(x1.shape[1], rng, len(x1))
    xt = sample_conditional_path(x0, x1, t, scheduler, rng)
    return TrainBatch(x1, xt, np.full(len(x1), t), w)


def fwd_kl_loss(phi, batch, scheduler: Scheduler, rng: np.random.Generator,
                source: SourceDistribution | None = None) -> float:
    """SNIS-weighted cross-entropy of the proposal endpoints."""
    return weighted_ce_loss(phi, corrupt(batch, scheduler, rng, source))


def _smoothed_logprob(q, xs, eps):
    """log of ((1-eps) q + eps/V) at tokens ``xs`` (K, M, L); returns per-sample sums and parts."""
    V = q.shape[-1]
    qx = np.take_along_axis(q[:, None], xs[..., None], axis=-1)[..., 0]
    qs = (1.0 - eps) * qx + eps / V
    return np.log(qs).sum(axis=-1), qx, qs


def rev_kl_loss(phi, theta, cpe, batch, scheduler: Scheduler, inner_samples: int,
                rng: np.random.Generator, source: SourceDistribution | None = None,
                eps: float = 1e-6):
    """Reverse-KL estimate and, for the softmax model, its gradient.

    ``g = log q_phi(x1') - log q_theta(x1') - log cpe(x1')`` with ``x1' ~ q_phi(.|x_t)``.
    The gradient combines the score-function term with a leave-one-out
    baseline over the inner samples and the pathwise term of ``log q_phi``.
    Returns ``(loss, grad)``; ``grad`` is None for non-softmax models.
    """
    tb = corrupt(batch, scheduler, rng, source)
    M = int(inner_samples)
    if M < 2:
        raise ConfigurationError("reverse-KL needs at least two inner samples")
    xt = np.asarray(tb.xt, dtype=np.int64)
    K, L = xt.shape
    q = phi.predict(xt, tb.t)
    qt = theta.predict(xt, tb.t)
    u = rng.random((K, M, L))
    xs = kernels.categorical(np.broadcast_to(q[:, None], (K, M, L, q.shape[-1])), u).reshape(K, M, L)
    lp, qx, qs = _smoothed_logprob(q, xs, eps)
    lt, _, _ = _smoothed_logprob(qt, xs, eps)
    lc = np.asarray(cpe.log_predict(xs.reshape(-1, L)), dtype=np.float64).reshape(K, M)
    g = lp - lt - lc
    if not np.all(np.isfinite(g)):
        bad = np.argwhere(~np.isfinite(g))[:5]
        raise NumericalError(f"non-finite reverse-KL integrand at {bad.tolist()}: "
                             f"{[xs[k, m].tolist() for k, m in bad]}")
    w = np.asarray(tb.weights, dtype=np.float64)
    loss = float(np.dot(w, g.mean(axis=1)))
    if not isinstance(phi, SoftmaxDenoiser):
        return loss, None
    base = (g.sum(axis=1, keepdims=True) - g) / (M - 1)
    a = (g - base) / M  # score-function coefficients (K, M)
    c = (1.0 - eps) * qx / qs / M  # pathwise coefficients (K, M, L)
    coef = a[..., None] + c
    V = q.shape[-1]
    onehot_sum = np.zeros((K, L, V))
    kk = np.repeat(np.arange(K), M * L)
    ll = np.tile(np.arange(L), K * M)
    np.add.at(onehot_sum, (kk, ll, xs.ravel()), coef.ravel())
    dz = onehot_sum - coef.sum(axis=1)[..., None] * q
    if phi.carry_unmasked:
        dz[xt != phi.vocab.mask_token] = 0.0
    dz *= w[:, None, None]
    grad = phi.features(xt, tb.t).T @ dz.reshape(K, -1)
    return loss, grad


def sym_kl_loss(phi, theta, cpe, batch, scheduler: Scheduler, inner_samples: int,
                rng: np.random.Generator, source: SourceDistribution | None = None,
                eps: float = 1e-6):
    """Forward plus reverse terms on the same batch and time draw."""
    tb = corrupt(batch, scheduler, rng, source)
    if isinstance(phi, SoftmaxDenoiser):
        f, fg = phi.loss_and_grad(tb)
    else:
        f, fg = weighted_ce_loss(phi, tb), None
    r, rg = rev_kl_loss(phi, theta, cpe, tb, scheduler, inner_samples, rng, source, eps)
    return f + r, (None if fg is None else fg + rg)


def objective_step(config: AfmConfig, phi, theta, cpe, tb: TrainBatch, scheduler, rng):
    if config.objective == "fwd":
        return phi.loss_and_grad(tb)
    if config.objective == "rev":
        return rev_kl_loss(phi, theta, cpe, tb, scheduler, config.inner_samples, rng,
                           eps=config.smoothing)
    return sym_kl_loss(phi, theta, cpe, tb, scheduler, config.inner_samples, rng,
                       eps=config.smoothing)


def afm_round(state: RoundState, config: AfmConfig, rng: np.random.Generator,
              trace: list | None = None) -> SoftmaxDenoiser:
    """Run ``config.steps`` gradient steps of the configured objective on ``state.phi``.

    ``trace`` (optional) receives one ``(step, objective, loss, ess, component)``
    tuple per step.
    """
    phi = state.phi
    eta = config.learning_rate_at(state.r)
    sched = phi.scheduler
    source = state.source or SourceDistribution("mask", phi.vocab)
    for step in range(config.steps):
        failures = 0
        while True:
            batch = draw_batch(state.mixture, state.r, state.buffer, state.theta, source,
                               state.cpe, config.k_snis, rng, state.sampler,
                               config.mc_samples, phi.length)
            try:
                w = snis_normalise(batch.weights)
                break
            except DegenerateBatchError:
                failures += 1
                if failures > config.max_degenerate:
                    raise RoundAbort(f"round {state.r} step {step}: {failures} consecutive "
                                     f"degenerate batches from {batch.component}")
        tb = corrupt(WeightedBatch(batch.x1, batch.component, w), sched, rng, source)
        loss, grad = objective_step(config, phi, state.theta, state.cpe, tb, sched, rng)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient at round {state.r} step {step}")
        phi = phi.with_weights(phi.weights - eta * grad)
        if trace is not None:
            trace.append((step, config.objective, loss, effective_sample_size(w), batch.component))
    return phi
