"""End-to-end active generation: pretrain, then rounds of classify, fine-tune, propose, observe."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import time
import zlib
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import checkpoint
from .cpe import ThresholdSchedule, cpe_fit, threshold
from .denoiser import SoftmaxDenoiser, TrainBatch, train_step
from .dynamics import SamplerConfig, generate, generate_constrained
from .errors import ConfigurationError
from .landscapes import MotifLandscapeSpec, evaluate, make_landscape, observe, valid_pool
from .objectives import AfmConfig, RoundState, afm_round
from .paths import Scheduler, SourceDistribution, Vocab, kappa
from .proposal import ProposalMixture, ReplayBuffer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LandscapeConfig:
    length: int = 12
    vocab_size: int = 8
    n_motifs: int = 3
    motif_length: int = 4
    quantization: int = 4
    seed: int = 0
    n_banned: int | None = None
    spec: dict | None = None  # explicit spec overrides the generator fields

    def build(self) -> MotifLandscapeSpec:
        if self.spec is not None:
            return MotifLandscapeSpec.from_dict(self.spec)
        return make_landscape(self.length, self.vocab_size, self.n_motifs, self.motif_length,
                              self.quantization, self.seed, self.n_banned)


@dataclass(frozen=True)
class PretrainConfig:
    pool_size: int = 1000
    steps: int = 3000
    learning_rate: float = 2.0
    batch_size: int = 64


@dataclass(frozen=True)
class SamplerBlock:
    steps: int = 16
    schedule: str = "quadratic"
    force_terminal_unmask: bool = True
    mutation_budget: int | None = None


@dataclass(frozen=True)
class MixtureBlock:
    replay_rate: float = 0.3  # replay-heavier than ProposalMixture defaults; needed at this scale
    replay_cap: float = 0.9
    flow_early: float = 0.1
    flow_late: float = 0.95
    switch_size: int | None = None  # defaults to the proposal batch size
    fixed: tuple | None = None
    gamma: float = 0.3
    capacity: int = 16


@dataclass(frozen=True)
class CpeConfig:
    epochs: int = 1000
    learning_rate: float = 1.0
    l2: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    landscape: LandscapeConfig = LandscapeConfig()
    rounds: int = 15
    batch_size: int = 64
    initial_size: int = 128
    noise: float = 0.0
    seed: int = 0
    pretrain: PretrainConfig = PretrainConfig()
    afm: AfmConfig = AfmConfig()
    sampler: SamplerBlock = SamplerBlock()
    mixture: MixtureBlock = MixtureBlock()
    threshold: ThresholdSchedule = ThresholdSchedule()
    cpe: CpeConfig = CpeConfig()
    train_log: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        if self.rounds < 0 or self.batch_size < 1 or self.initial_size < 1:
            raise ConfigurationError("need rounds >= 0, batch_size >= 1, initial_size >= 1")
        if self.noise < 0:
            raise ConfigurationError("noise must be nonnegative")

    @property
    def budget(self) -> int:
        return self.initial_size + self.rounds * self.batch_size

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        return _build(cls, d or {})

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigurationError(f"expected a mapping for {cls.__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigurationError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kw = {}
    for name, value in d.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            kw[name] = _build(type(default), value)
        elif name in ("fixed", "ladder") and value is not None:
            kw[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_dict(yaml.safe_load(fh))


def dump_config(config: RunConfig, path, spec: MotifLandscapeSpec | None = None):
    d = config.to_dict()
    if spec is not None:
        d["landscape"]["spec"] = spec.to_dict()
    with open(path, "w") as fh:
        yaml.safe_dump(d, fh, sort_keys=False)


class Streams:
    """Independent generators derived from the master seed by a fixed label."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def __call__(self, label: str) -> np.random.Generator:
        key = zlib.crc32(label.encode())
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(key,)))


@dataclass
class RoundRecord:
    round: int
    tau: float
    xs: np.ndarray
    ys: np.ndarray
    fs: np.ndarray
    best_y: float
    best_f: float
    regret: float
    ess_mean: float
    seconds: float
    fallback: int = 0


def pretrain(denoiser: SoftmaxDenoiser, pool, steps: int, learning_rate: float,
             rng: np.random.Generator, batch_size: int = 64) -> SoftmaxDenoiser:
    """Unweighted cross-entropy on mask-corrupted minibatches of the pool."""
    pool = np.asarray(pool, dtype=np.int64)
    if len(pool) == 0:
        raise ConfigurationError("pretraining pool is empty")
    M = denoiser.vocab.mask_token
    for _ in range(steps):
        x1 = pool[rng.integers(0, len(pool), size=batch_size)]
        t = rng.random(batch_size)
        k, _ = kappa(denoiser.scheduler, t)
        xt = np.where(rng.random(x1.shape) < k[:, None], x1, M)
        batch = TrainBatch(x1, xt, t, np.full(batch_size, 1.0 / batch_size))
        denoiser, _ = train_step(denoiser, batch, learning_rate)
    return denoiser


def propose_batch(phi, batch_size: int, seen: set, sampler: SamplerConfig,
                  rng: np.random.Generator, spec: MotifLandscapeSpec | None = None):
    """``batch_size`` new sequences from the active flow, deduplicated against ``seen``.

    Up to ``20 * batch_size`` draws are tried; any shortfall is filled with
    uniform valid sequences. Returns ``(batch, n_fallback)``.
    """
    source = SourceDistribution("mask", phi.vocab)
    out, keys = [], set()
    attempts = 0
    while len(out) < batch_size and attempts < 20 * batch_size:
        n = min(batch_size, 20 * batch_size - attempts)
        if sampler.mutation_budget is not None:
            draws = generate_constrained(phi, sampler, rng, n)
        else:
            draws = generate(phi, source, sampler, rng, n)
        attempts += n
        for row in draws:
            key = tuple(row.tolist())
            if key in seen or key in keys:
                continue
            keys.add(key)
            out.append(row)
            if len(out) == batch_size:
                break
    fallback = batch_size - len(out)
    if fallback:
        log.info("proposal filled %d of %d slots with uniform valid sequences", fallback, batch_size)
        if spec is None:
            raise ConfigurationError("fallback fill needs the landscape spec")
        out.extend(valid_pool(spec, fallback, rng, exclude=seen | keys))
    return np.array(out, dtype=np.int64).reshape(batch_size, -1), fallback


def metrics(records, f_star: float = 1.0) -> dict:
    if not records:
        raise ConfigurationError("no round records")
    last = records[-1]
    hit = [r.round for r in records if r.best_f >= f_star]
    return {
        "final_regret": f_star - last.best_f,
        "final_best_y": last.best_y,
        "rounds_to_optimum": hit[0] if hit else math.inf,
    }


def _sampler(config: RunConfig, reference=None) -> SamplerConfig:
    b = config.sampler
    return SamplerConfig(b.steps, Scheduler(b.schedule), b.force_terminal_unmask,
                         b.mutation_budget, reference)


def _mixture(config: RunConfig) -> ProposalMixture:
    m = config.mixture
    switch = config.batch_size if m.switch_size is None else m.switch_size
    return ProposalMixture(m.replay_rate, m.replay_cap, m.flow_early, m.flow_late, switch, m.fixed)


def run(config: RunConfig, output_dir=None, baseline: bool = False) -> list:
    """Execute the active generation loop; writes artifacts when ``output_dir`` is set."""
    output_dir = output_dir or config.output_dir
    streams = Streams(config.seed)
    spec = config.landscape.build()
    vocab = Vocab(spec.vocab_size, True)
    L = spec.length
    sigma = config.noise

    X = valid_pool(spec, config.initial_size, streams("init"))
    Y = np.atleast_1d(observe(spec, X, sigma, streams("oracle-noise-0")))
    F = np.atleast_1d(evaluate(spec, X))
    seen = {tuple(r) for r in X.tolist()}
    calls = len(X)

    constrained = config.sampler.mutation_budget is not None
    phi = cpe = None
    if not baseline:
        phi = SoftmaxDenoiser(vocab, L, Scheduler(config.sampler.schedule),
                              carry_unmasked=not constrained)
        pool = valid_pool(spec, config.pretrain.pool_size, streams("pretrain-pool"))
        phi = pretrain(phi, pool, config.pretrain.steps, config.pretrain.learning_rate,
                       streams("pretrain"), config.pretrain.batch_size)
    buffer = ReplayBuffer(config.mixture.capacity, config.mixture.gamma)
    mixture = _mixture(config)
    records, train_rows = [], []
    best_y, best_f = float(Y.max()), float(F.max())
    for r in range(1, config.rounds + 1):
        start = time.perf_counter()
        tau = threshold(config.threshold, r, Y)
        if r == 1:
            for x, y in zip(X, Y):
                if y >= tau:
                    buffer.add(x, y)
        ess = float("nan")
        if baseline:
            batch = valid_pool(spec, config.batch_size, streams(f"round-{r}-propose"), exclude=seen)
            fallback = 0
        else:
            cpe = cpe_fit(X, Y, tau, spec.vocab_size, config.cpe.epochs,
                          config.cpe.learning_rate, streams(f"round-{r}-cpe"), config.cpe.l2)
            theta = phi
            reference = X[int(np.argmax(Y))] if constrained else None
            sampler = _sampler(config, reference)
            state = RoundState(r, X, Y, tau, phi, theta, buffer, cpe, mixture,
                               SourceDistribution("mask", vocab), sampler)
            trace = []
            phi = afm_round(state, config.afm, streams(f"round-{r}-train"), trace)
            if trace:
                ess = float(np.mean([row[3] for row in trace]))
            if config.train_log:
                train_rows.extend((r,) + row for row in trace)
            batch, fallback = propose_batch(phi, config.batch_size, seen, sampler,
                                            streams(f"round-{r}-propose"), spec)
        y = np.atleast_1d(observe(spec, batch, sigma, streams(f"round-{r}-oracle-noise")))
        f = np.atleast_1d(evaluate(spec, batch))
        calls += len(batch)
        X = np.vstack([X, batch])
        Y = np.concatenate([Y, y])
        seen.update(tuple(row) for row in batch.tolist())
        for x, yy in zip(batch, y):
            if yy >= tau:
                buffer.add(x, yy)
        best_y = max(best_y, float(y.max()))
        best_f = max(best_f, float(f.max()))
        rec = RoundRecord(r, tau, batch, y, f, best_y, best_f, 1.0 - best_f, ess,
                          time.perf_counter() - start, fallback)
        records.append(rec)
        log.info("round %d tau=%.4g best_y=%.4g regret=%.4g ess=%.3g (%.1fs)",
                 r, tau, best_y, rec.regret, ess, rec.seconds)
    if calls != config.budget:
        raise AssertionError(f"oracle calls {calls} != budget {config.budget}")
    if output_dir is not None:
        write_outputs(output_dir, config, spec, records, phi, cpe, buffer, train_rows)
    return records


def baseline_random(config: RunConfig, output_dir=None) -> list:
    """Same loop with uniform valid batches in place of the flow."""
    return run(config, output_dir, baseline=True)


def _fmt(v) -> str:
    return repr(float(v))


def write_outputs(output_dir, config, spec, records, phi, cpe, buffer, train_rows):
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, "rounds.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "tau", "best_y", "best_f", "regret", "ess_mean"])
        for r in records:
            w.writerow([r.round, _fmt(r.tau), _fmt(r.best_y), _fmt(r.best_f), _fmt(r.regret),
                        _fmt(r.ess_mean)])
    with open(os.path.join(output_dir, "batches.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "sequence", "y", "f"])
        for r in records:
            for x, y, f in zip(r.xs, r.ys, r.fs):
                w.writerow([r.round, "-".join(map(str, x.tolist())), _fmt(y), _fmt(f)])
    with open(os.path.join(output_dir, "timings.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "seconds"])
        for r in records:
            w.writerow([r.round, f"{r.seconds:.3f}"])
    if train_rows:
        with open(os.path.join(output_dir, "train_log.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "step", "objective", "loss", "ess", "component"])
            for row in train_rows:
                w.writerow([row[0], row[1], row[2], _fmt(row[3]), _fmt(row[4]), row[5]])
    dump_config(config, os.path.join(output_dir, "config.yaml"), spec)
    buffer.to_csv(os.path.join(output_dir, "buffer.csv"))
    if phi is not None:
        checkpoint.save(phi, os.path.join(output_dir, "phi.ckpt"))
    if cpe is not None:
        checkpoint.save(cpe, os.path.join(output_dir, "cpe.ckpt"))


def read_rounds(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
