"""Brute-force ground truth on enumerable instances."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .dynamics import transition_kernel
from .errors import ConfigurationError, DomainError, NumericalError, ShapeError
from .paths import Scheduler, SourceDistribution

MAX_STATES = 10_000


@dataclass(frozen=True)
class DistributionTable:
    """Probabilities over every sequence in ``base^L``; state index ``sum x_i base^i``."""

    base: int
    length: int
    probs: np.ndarray

    def __post_init__(self):
        if self.probs.shape != (self.base ** self.length,):
            raise ShapeError("probability vector does not cover the state space")
        if np.any(self.probs < -1e-15) or abs(self.probs.sum() - 1.0) > 1e-10:
            raise NumericalError("distribution table must be nonnegative and sum to 1")

    def states(self) -> np.ndarray:
        return all_states(self.base, self.length)

    def index(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.int64) @ (self.base ** np.arange(self.length))

    def prob(self, x) -> float:
        return float(self.probs[self.index(x)])

    def as_dict(self) -> dict:
        return {tuple(s): float(p) for s, p in zip(self.states().tolist(), self.probs)}

    def restrict(self, base: int) -> "DistributionTable":
        """Drop the top alphabet slot(s); they must carry no mass."""
        keep = np.all(self.states() < base, axis=1)
        if self.probs[~keep].sum() > 1e-12:
            raise DomainError("cannot restrict: mass on removed slots")
        return DistributionTable(base, self.length, self.probs[keep] / self.probs[keep].sum())


def all_states(base: int, length: int) -> np.ndarray:
    if base ** length > MAX_STATES:
        raise ConfigurationError(f"state space {base}^{length} exceeds {MAX_STATES}")
    return np.array(list(itertools.product(range(base), repeat=length)), dtype=np.int64)[:, ::-1]


def target_distribution(w, vocab_size: int, length: int):
    """``p*(x) = w(x) / sum w`` under the uniform prior. Returns ``(table, Z)`` with Z = mean of w."""
    states = all_states(vocab_size, length)
    wv = np.asarray(w(states) if callable(w) else w, dtype=np.float64).reshape(-1)
    if wv.shape != (len(states),):
        raise ShapeError("weight vector does not cover the state space")
    if np.any(wv < 0) or wv.sum() <= 0:
        raise DomainError("weights must be nonnegative and not all zero")
    return DistributionTable(vocab_size, length, wv / wv.sum()), float(np.mean(wv))


def total_variation(p: DistributionTable, q: DistributionTable) -> float:
    if (p.base, p.length) != (q.base, q.length):
        raise DomainError("distributions live on different domains")
    return float(0.5 * np.abs(p.probs - q.probs).sum())


def _joint(rows: np.ndarray) -> np.ndarray:
    # position 0 is the least significant digit, so it goes last in the Kronecker product
    return reduce(np.kron, rows[::-1])


def enumerate_terminal(denoiser, source: SourceDistribution, scheduler: Scheduler,
                       steps: int, force_terminal_unmask: bool = True) -> DistributionTable:
    """Exact terminal law of the Euler sampler by propagating the full state distribution."""
    vocab = denoiser.vocab
    L = denoiser.length
    S = vocab.n_slots
    if steps < 1 or steps > 64:
        raise ConfigurationError("enumeration supports 1..64 steps")
    states = all_states(S, L)
    radix = S ** np.arange(L)
    law = np.zeros(len(states))
    if source.kind == "mask":
        law[np.full(L, vocab.mask_token) @ radix] = 1.0
    else:
        data = np.all(states < vocab.size, axis=1)
        law[data] = 1.0 / data.sum()
    h = 1.0 / steps
    for k in range(steps):
        t = k * h
        live = np.nonzero(law > 0)[0]
        post = denoiser.predict(states[live], t)
        kern = transition_kernel(post, states[live], t, h, scheduler, S)
        new = np.zeros_like(law)
        for j, s in enumerate(live):
            new += law[s] * _joint(kern[j])
        law = new
    if force_terminal_unmask and vocab.has_mask:
        M = vocab.mask_token
        live = np.nonzero(law > 0)[0]
        post = denoiser.predict(states[live], 1.0 - h)
        new = np.zeros_like(law)
        for j, s in enumerate(live):
            x = states[s]
            rows = np.zeros((L, S))
            rows[np.arange(L), x] = 1.0
            masked = x == M
            rows[masked] = 0.0
            rows[masked, : vocab.size] = post[j][masked]
            new += law[s] * _joint(rows)
        law = new
    table = DistributionTable(S, L, law / law.sum())
    if vocab.has_mask and force_terminal_unmask:
        return table.restrict(vocab.size)
    return table


def snis_reference(w, g, vocab_size: int, length: int, k_snis: int, repetitions: int,
                   rng: np.random.Generator):
    """Repeated SNIS estimates of ``E_{p*}[g]`` from the uniform proposal.

    Returns ``(mean, standard_error, exact, estimates)``.
    """
    p, _ = target_distribution(w, vocab_size, length)
    exact = float(np.dot(p.probs, g(p.states())))
    est = np.empty(repetitions)
    chunk = max(1, 2_000_000 // max(1, k_snis * length))
    done = 0
    while done < repetitions:
        m = min(chunk, repetitions - done)
        x = rng.integers(0, vocab_size, size=(m * k_snis, length))
        wv = np.asarray(w(x), dtype=np.float64).reshape(m, k_snis)
        gv = np.asarray(g(x), dtype=np.float64).reshape(m, k_snis)
        est[done:done + m] = (wv * gv).sum(axis=1) / wv.sum(axis=1)
        done += m
    return float(est.mean()), float(est.std(ddof=1) / np.sqrt(repetitions)), exact, est
