"""Three-component importance-sampling proposal: uniform prior, base flow, replay buffer."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import SamplerConfig, generate
from .errors import ConfigurationError, DegenerateBatchError, DomainError

log = logging.getLogger(__name__)

PRIOR, FLOW, REPLAY = "prior", "flow", "replay"
COMPONENTS = (PRIOR, FLOW, REPLAY)
DENSITY_FLOOR = 1e-30
WEIGHT_CAP = 1e6


@dataclass
class ReplayBuffer:
    """Bounded store of high-fitness observations; the lowest-y entry is evicted first."""

    capacity: int = 256
    gamma: float = 0.3
    entries: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1 or self.gamma <= 0:
            raise ConfigurationError("replay buffer needs capacity >= 1 and gamma > 0")

    def __len__(self):
        return len(self.entries)

    def add(self, x, y: float) -> bool:
        item = (tuple(int(v) for v in x), float(y))
        if len(self.entries) < self.capacity:
            self.entries.append(item)
            return True
        low = min(range(len(self.entries)), key=lambda j: self.entries[j][1])
        if item[1] <= self.entries[low][1]:
            return False
        del self.entries[low]
        self.entries.append(item)
        return True

    def sequences(self) -> np.ndarray:
        return np.array([e[0] for e in self.entries], dtype=np.int64)

    def ys(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=np.float64)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sequence", "y"])
            for seq, y in self.entries:
                w.writerow(["-".join(map(str, seq)), repr(y)])

    @classmethod
    def from_csv(cls, path, capacity=256, gamma=0.3):
        buf = cls(capacity, gamma)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                buf.entries.append((tuple(int(v) for v in row["sequence"].split("-")), float(row["y"])))
        return buf


def buffer_weights(buffer: ReplayBuffer) -> np.ndarray:
    """Max-shifted softmax of ``gamma * y`` over the buffer."""
    if len(buffer) == 0:
        raise DomainError("replay buffer is empty")
    s = buffer.gamma * buffer.ys()
    e = np.exp(s - s.max())
    return e / e.sum()


@dataclass(frozen=True)
class ProposalMixture:
    """Round-dependent mixing coefficients (alpha_prior, alpha_flow, alpha_replay).

    By default replay ramps as ``min(replay_cap, replay_rate * r)`` and the flow
    takes ``flow_early`` of the remaining mass until the buffer holds more than
    ``switch_size`` entries, ``flow_late`` afterwards. ``fixed`` overrides all of it.
    """

    replay_rate: float = 0.05
    replay_cap: float = 0.4
    flow_early: float = 0.1
    flow_late: float = 0.95
    switch_size: int = 64
    fixed: tuple | None = None

    def __post_init__(self):
        if self.fixed is not None:
            a = np.asarray(self.fixed, dtype=np.float64)
            if a.shape != (3,) or np.any(a < 0) or abs(a.sum() - 1.0) > 1e-12:
                raise ConfigurationError("fixed mixture must be three nonnegative weights summing to 1")
        for v in (self.replay_cap, self.flow_early, self.flow_late):
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError("mixture fractions must lie in [0, 1]")

    def coefficients(self, r: int, buffer_size: int = 0) -> tuple:
        if self.fixed is not None:
            return tuple(float(v) for v in self.fixed)
        a_rb = min(self.replay_cap, self.replay_rate * r)
        frac = self.flow_late if buffer_size > self.switch_size else self.flow_early
        a_flow = (1.0 - a_rb) * frac
        return (1.0 - a_rb - a_flow, a_flow, a_rb)


def select_component(mixture: ProposalMixture, r: int, rng: np.random.Generator,
                     buffer_size: int = 0, has_flow: bool = True) -> str:
    a0, af, arb = mixture.coefficients(r, buffer_size)
    if buffer_size == 0 and arb > 0:
        log.debug("empty replay buffer, moving %.3f mass to prior", arb)
        a0, arb = a0 + arb, 0.0
    if not has_flow and af > 0:
        log.debug("no base flow, moving %.3f mass to prior", af)
        a0, af = a0 + af, 0.0
    u = rng.random()
    if u < a0:
        return PRIOR
    if u < a0 + af:
        return FLOW
    return REPLAY if arb > 0 else (FLOW if af > 0 else PRIOR)


def flow_marginal_mc(base, x1, source, n_samples: int, rng: np.random.Generator,
                     t_eval: float = 0.0):
    """Monte Carlo endpoint density of the base flow, one term per source draw."""
    x1 = np.asarray(x1, dtype=np.int64)
    single = x1.ndim == 1
    x1 = np.atleast_2d(x1)
    L = x1.shape[1]
    n = 1 if source.kind == "mask" else max(1, int(n_samples))
    x0 = source.sample(L, rng, n)
    post = base.predict(x0, t_eval)  # (n, L, V)
    # probability of each target under each source draw: (K, n)
    pos = np.arange(L)
    terms = np.prod(post[np.arange(n)[None, :, None], pos, x1[:, None, :]], axis=-1)
    dens = terms.mean(axis=1)
    return float(dens[0]) if single else dens


@dataclass(frozen=True)
class WeightedBatch:
    x1: np.ndarray
    component: str
    weights: np.ndarray


def importance_weight(component: str, x1, cpe, base=None, source=None,
                      n_samples: int = 1, rng: np.random.Generator | None = None):
    """Unnormalised weights for a batch drawn from a single mixture component."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.int64))
    if component == REPLAY:
        return np.ones(len(x1))
    c = np.asarray(cpe.predict(x1), dtype=np.float64).reshape(-1)
    if component == PRIOR:
        return c
    if component != FLOW:
        raise ConfigurationError(f"unknown component {component!r}")
    dens = np.atleast_1d(flow_marginal_mc(base, x1, source, n_samples, rng))
    low = dens < DENSITY_FLOOR
    if np.any(low):
        log.debug("%d flow densities below floor, weights capped", int(low.sum()))
    w = np.where(low, WEIGHT_CAP, c / np.maximum(dens, DENSITY_FLOOR))
    return np.minimum(w, WEIGHT_CAP)


def snis_normalise(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegenerateBatchError("importance weights sum to zero")
    return w / total


def effective_sample_size(normalised) -> float:
    w = np.asarray(normalised)
    return float(1.0 / np.dot(w, w))


def draw_batch(mixture: ProposalMixture, r: int, buffer: ReplayBuffer, base, source, cpe,
               k_snis: int, rng: np.random.Generator, sampler: SamplerConfig | None = None,
               n_mc: int = 1, length: int | None = None) -> WeightedBatch:
    """Pick one component for the whole batch, draw ``k_snis`` endpoints, attach weights."""
    if k_snis < 2:
        raise ConfigurationError("SNIS batch needs at least two samples")
    comp = select_component(mixture, r, rng, len(buffer), base is not None)
    L = length if length is not None else base.length
    if comp == PRIOR:
        x1 = rng.integers(0, source.vocab.size, size=(k_snis, L), dtype=np.int64)
    elif comp == FLOW:
        x1 = generate(base, source, sampler or SamplerConfig(), rng, k_snis)
    else:
        pi = buffer_weights(buffer)
        idx = kernels.categorical(np.broadcast_to(pi, (k_snis, len(pi))), rng.random(k_snis))
        x1 = buffer.sequences()[idx]
    w = importance_weight(comp, x1, cpe, base, source, n_mc, rng)
    return WeightedBatch(x1, comp, w)
