"""Class-probability estimator for p(y >= tau | x) and the threshold schedules."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThresholdSchedule:
    kind: str = "percentile"
    percentile: float = 90.0
    ladder: tuple = ()

    def __post_init__(self):
        if self.kind == "percentile":
            if not 0 < self.percentile < 100:
                raise ConfigurationError("percentile must lie in (0, 100)")
        elif self.kind == "ladder":
            if not self.ladder:
                raise ConfigurationError("ladder schedule needs at least one step")
            steps = sorted((int(r), float(v)) for r, v in self.ladder)
            if any(b[1] < a[1] for a, b in zip(steps, steps[1:])):
                raise ConfigurationError("ladder thresholds must be non-decreasing in round")
            object.__setattr__(self, "ladder", tuple(steps))
        else:
            raise ConfigurationError(f"unknown threshold kind {self.kind!r}")


def threshold(schedule: ThresholdSchedule, r: int, y) -> float:
    """Nearest-rank percentile of the observed labels, or the ladder value for round ``r``."""
    if schedule.kind == "ladder":
        value = schedule.ladder[0][1]
        for start, v in schedule.ladder:
            if start <= r:
                value = v
        return value
    y = np.sort(np.asarray(y, dtype=np.float64))
    if y.size == 0:
        raise DomainError("percentile threshold needs a non-empty dataset")
    rank = max(1, math.ceil(schedule.percentile / 100.0 * y.size))
    return float(y[rank - 1])


@dataclass
class ClassProbabilityEstimator:
    """Logistic model on per-position one-hot features of data tokens."""

    length: int
    vocab_size: int
    weights: np.ndarray = None
    bias: float = 0.0
    constant: float | None = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.zeros(self.length * self.vocab_size)

    def features(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.int64))
        if np.any(x >= self.vocab_size) or np.any(x < 0):
            raise DomainError("classifier input contains a mask or out-of-range token")
        F = np.zeros((len(x), self.length * self.vocab_size))
        F[np.arange(len(x))[:, None], np.arange(self.length) * self.vocab_size + x] = 1.0
        return F

    def logit(self, x) -> np.ndarray:
        return self.features(x) @ self.weights + self.bias

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x)
        if self.constant is not None:
            self.features(x)  # domain check only
            out = np.full(np.atleast_2d(x).shape[0], self.constant)
        else:
            out = _sigmoid(self.logit(x))
        return float(out[0]) if x.ndim == 1 else out

    def log_predict(self, x) -> np.ndarray:
        if self.constant is not None:
            return np.full(np.atleast_2d(x).shape[0], math.log(self.constant))
        z = self.logit(x)
        return -np.logaddexp(0.0, -z)


def _sigmoid(z):
    # clipped so outputs stay strictly inside (0, 1) in double precision
    return 1.0 / (1.0 + np.exp(-np.clip(z, -36.0, 36.0)))


def class_weights(z: np.ndarray) -> np.ndarray:
    pos = int(z.sum())
    neg = len(z) - pos
    return np.where(z == 1, neg / pos, 1.0)


def weighted_log_loss(model: ClassProbabilityEstimator, F, z, c, l2=0.0):
    """Class-weighted mean log loss and its gradient ``(loss, dw, db)``."""
    s = F @ model.weights + model.bias
    # log(1+exp(-s)) for positives, log(1+exp(s)) for negatives
    per = np.logaddexp(0.0, np.where(z == 1, -s, s))
    n = c.sum()
    loss = float(np.dot(c, per) / n) + 0.5 * l2 * float(model.weights @ model.weights)
    r = c * (_sigmoid(s) - z) / n
    return loss, F.T @ r + l2 * model.weights, float(r.sum())


def cpe_fit(x, y, tau: float, vocab_size: int, epochs: int = 300, learning_rate: float = 1.0,
            rng: np.random.Generator | None = None, l2: float = 0.0,
            history: list | None = None) -> ClassProbabilityEstimator:
    """Full-batch gradient descent on the class-reweighted log loss.

    Positives get weight negatives/positives. The step is capped at the
    inverse Lipschitz constant of the loss so it never increases.
    ``rng`` is accepted for interface symmetry; the fit is deterministic.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    model = ClassProbabilityEstimator(x.shape[1], vocab_size)
    z = (np.asarray(y, dtype=np.float64) >= tau).astype(np.float64)
    pos = z.sum()
    if pos == 0 or pos == len(z):
        prior = float(np.clip(pos / len(z), 0.01, 0.99))
        log.warning("single-class dataset (%d/%d positive), constant model %.2f", pos, len(z), prior)
        model.constant = prior
        return model
    F = model.features(x)
    c = class_weights(z)
    Fb = np.hstack([F, np.ones((len(F), 1))])
    lip = 0.25 * np.linalg.eigvalsh((Fb * c[:, None]).T @ Fb / c.sum())[-1] + l2
    step = min(learning_rate, 1.0 / lip)
    for _ in range(epochs):
        loss, dw, db = weighted_log_loss(model, F, z, c, l2)
        if history is not None:
            history.append(loss)
        model.weights = model.weights - step * dw
        model.bias = model.bias - step * db
    if history is not None:
        history.append(weighted_log_loss(model, F, z, c, l2)[0])
    return model


def cpe_predict(model: ClassProbabilityEstimator, x):
    return model.predict(x)
