"""Exact-oracle verification suite.

Each check returns a :class:`Check` with a pass flag, the measured quantity
and the wall-clock time. The CLI ``verify`` subcommand and the acceptance
tests share these functions.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .cpe import ClassProbabilityEstimator, class_weights, cpe_predict, weighted_log_loss
from .denoiser import SoftmaxDenoiser, TabularDenoiser, TrainBatch, fit_tabular_exact, weighted_ce_loss
from .dynamics import SamplerConfig, generate, generate_constrained, transition_kernel, velocity
from .objectives import corrupt, fwd_kl_loss
from .oracle import DistributionTable, all_states, enumerate_terminal, snis_reference, target_distribution, total_variation
from .paths import Scheduler, SourceDistribution, Vocab, conditional_path_prob, sample_conditional_path
from .proposal import PRIOR, REPLAY, WeightedBatch, importance_weight, snis_normalise

SCHEDULES = ("linear", "quadratic")
TINY = [(L, V) for L in (1, 2) for V in (2, 3)]
STEPS = (2, 4)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    budget: float = float("inf")

    @property
    def in_time(self) -> bool:
        return self.seconds < self.budget

    def line(self) -> str:
        ok = self.passed and self.in_time
        return f"{'PASS' if ok else 'FAIL'}  {self.name:<34} {self.detail}  [{self.seconds:.1f}s]"


def _timed(name, budget):
    def wrap(fn):
        def run(*args, **kw):
            start = time.perf_counter()
            passed, detail = fn(*args, **kw)
            return Check(name, bool(passed), detail, time.perf_counter() - start, budget)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


def empirical(samples, base: int, length: int) -> DistributionTable:
    idx = np.asarray(samples, dtype=np.int64) @ (base ** np.arange(length))
    counts = np.bincount(idx, minlength=base ** length).astype(np.float64)
    return DistributionTable(base, length, counts / counts.sum())


@_timed("path and velocity kernels", 30.0)
def check_kernels(n: int = 100_000, seed: int = 0):
    """Boundary laws, zero-sum velocity rows, normalised Euler kernels, path sampler vs density."""
    rng = np.random.default_rng(seed)
    worst_tv = worst_row = worst_norm = 0.0
    boundary = True
    for (L, V), kind in itertools.product(TINY, SCHEDULES):
        sched = Scheduler(kind)
        vocab = Vocab(V)
        S = vocab.n_slots
        x1 = rng.integers(0, V, size=L)
        for source in (SourceDistribution("mask", vocab), SourceDistribution("uniform", vocab)):
            x0 = source.sample(L, rng)
            x0b = np.tile(x0, (n, 1))
            x1b = np.tile(x1, (n, 1))
            boundary &= np.array_equal(sample_conditional_path(x0b[:100], x1b[:100], 0.0, sched, rng), x0b[:100])
            boundary &= np.array_equal(sample_conditional_path(x0b[:100], x1b[:100], 1.0, sched, rng), x1b[:100])
            for t in (0.25, 0.6):
                xs = sample_conditional_path(x0b, x1b, t, sched, rng)
                states = all_states(S, L)
                exact = conditional_path_prob(states, np.tile(x0, (len(states), 1)),
                                              np.tile(x1, (len(states), 1)), t, sched)
                tv = total_variation(empirical(xs, S, L), DistributionTable(S, L, exact))
                worst_tv = max(worst_tv, tv)
        states = all_states(S, L)
        post = rng.dirichlet(np.ones(V), size=(len(states), L))
        for t in (0.0, 0.3, 0.7):
            u = velocity(post, states, t, sched, S)
            worst_row = max(worst_row, float(np.abs(u.sum(axis=-1)).max()))
            k = transition_kernel(post, states, t, 0.05, sched, S)
            worst_norm = max(worst_norm, float(np.abs(k.sum(axis=-1) - 1.0).max()))
    ok = boundary and worst_row < 1e-10 and worst_norm < 1e-10 and worst_tv < 0.01
    return ok, (f"boundary={'exact' if boundary else 'VIOLATED'} |sum u|={worst_row:.1e} "
                f"|sum K - 1|={worst_norm:.1e} TV={worst_tv:.4f}")


@_timed("sampler vs exact enumeration", 120.0)
def check_enumeration(n: int = 100_000, seed: int = 0):
    """generate() against the enumerated terminal law on every tiny instance."""
    rng = np.random.default_rng(seed)
    worst, where = 0.0, None
    for (L, V), K, kind in itertools.product(TINY, STEPS, SCHEDULES):
        vocab = Vocab(V)
        den = TabularDenoiser.random(vocab, L, rng)
        sched = Scheduler(kind)
        sources = [SourceDistribution("mask", vocab)]
        if K == 4:
            sources.append(SourceDistribution("uniform", vocab))
        for source in sources:
            exact = enumerate_terminal(den, source, sched, K)
            xs = generate(den, source, SamplerConfig(K, sched), rng, n)
            tv = total_variation(empirical(xs, exact.base, L), exact)
            if tv > worst:
                worst, where = tv, (L, V, K, kind, source.kind)
    return worst < 0.02, f"max TV={worst:.4f} at (L, V, K, schedule, source)={where}"


@_timed("weighted fit recovers target", 10.0)
def check_weighted_fit(steps: int = 32):
    """Exactly fitted weighted tabular denoiser reproduces p* = prior * w by enumeration."""
    sched = Scheduler("linear")
    results = []
    c = (np.array([0.8, 0.3]), np.array([0.4, 0.9]))
    cases = [
        (1, np.array([0.9, 0.1])),
        (2, lambda s: c[0][s[:, 0]] * c[1][s[:, 1]]),
    ]
    for L, w in cases:
        vocab = Vocab(2)
        p, _ = target_distribution(w, 2, L)
        den = fit_tabular_exact(p.states(), p.probs, vocab, L, sched)
        q = enumerate_terminal(den, SourceDistribution("mask", vocab), sched, steps)
        results.append(total_variation(p, q))
    worst = max(results)
    return worst < 0.01, "TV=" + ", ".join(f"{v:.2e}" for v in results)


def _snis_instance():
    L, V = 2, 4
    x_opt = np.array([3, 1])

    def w(x):
        x = np.atleast_2d(x)
        s = -1.5 + 1.2 * (x[:, 0] == 3) + 1.0 * (x[:, 1] == 1) + 0.3 * x[:, 0]
        return 1.0 / (1.0 + np.exp(-s))

    def g(x):
        return np.all(np.atleast_2d(x) == x_opt, axis=1).astype(np.float64)

    return L, V, w, g


@_timed("SNIS consistency and bias", 60.0)
def check_snis(seed: int = 0):
    """Large-K SNIS within two standard errors; bias shrinks from K=2 to K=1000."""
    L, V, w, g = _snis_instance()
    rng = np.random.default_rng(seed)
    mean, se, exact, _ = snis_reference(w, g, V, L, 10_000, 100, rng)
    consistent = abs(mean - exact) <= 2 * se
    m2, se2, _, _ = snis_reference(w, g, V, L, 2, 400_000, rng)
    m1k, se1k, _, _ = snis_reference(w, g, V, L, 1000, 4_000, rng)
    b2, b1k = abs(m2 - exact), abs(m1k - exact)
    ok = consistent and b1k < b2
    return ok, (f"K=1e4: |err|={abs(mean - exact):.2e} (2se={2 * se:.2e}); "
                f"|bias| K=2 {b2:.2e} vs K=1e3 {b1k:.2e}")


@_timed("weight simplifications", 5.0)
def check_weights(seed: int = 0, k_snis: int = 128):
    """Prior weights equal the classifier output; replay weights normalise to exactly 1/K."""
    rng = np.random.default_rng(seed)
    ok_prior = ok_replay = True
    for _ in range(20):
        L, V = int(rng.integers(1, 13)), int(rng.integers(2, 9))
        cpe = ClassProbabilityEstimator(L, V, rng.normal(size=L * V), float(rng.normal()))
        x = rng.integers(0, V, size=(k_snis, L))
        ok_prior &= np.array_equal(importance_weight(PRIOR, x, cpe), cpe_predict(cpe, x))
        for k in (k_snis, 100, 7):
            wn = snis_normalise(importance_weight(REPLAY, x[:k], cpe))
            ok_replay &= bool(np.all(wn == 1.0 / k))
    return ok_prior and ok_replay, f"prior==cpe: {ok_prior}, replay==1/K: {ok_replay}"


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


@_timed("analytic gradients", 60.0)
def check_gradients(seed: int = 0, batches: int = 5, coords: int = 20, eps: float = 1e-6):
    """Central finite differences on the softmax denoiser and the classifier."""
    rng = np.random.default_rng(seed)
    worst_d = worst_c = 0.0
    for _ in range(batches):
        L, V, n = 4, 5, 32
        vocab = Vocab(V)
        for carry in (True, False):
            den = SoftmaxDenoiser(vocab, L, Scheduler("quadratic"), carry_unmasked=carry)
            den = den.with_weights(rng.normal(scale=0.5, size=den.weights.shape))
            x1 = rng.integers(0, V, size=(n, L))
            t = rng.random(n)
            xt = np.where(rng.random((n, L)) < t[:, None], x1, vocab.mask_token)
            wts = rng.random(n)
            batch = TrainBatch(x1, xt, t, wts / wts.sum())
            _, grad = den.loss_and_grad(batch)
            flat = den.weights.reshape(-1)
            for j in rng.choice(flat.size, size=coords, replace=False):
                up, dn = flat.copy(), flat.copy()
                up[j] += eps
                dn[j] -= eps
                fd = (weighted_ce_loss(den.with_weights(up.reshape(den.weights.shape)), batch)
                      - weighted_ce_loss(den.with_weights(dn.reshape(den.weights.shape)), batch)) / (2 * eps)
                an = grad.reshape(-1)[j]
                if abs(an) > 1e-9 or abs(fd) > 1e-7:
                    worst_d = max(worst_d, _rel_err(an, fd))
        Lc, Vc = 6, 4
        model = ClassProbabilityEstimator(Lc, Vc, rng.normal(size=Lc * Vc), float(rng.normal()))
        x = rng.integers(0, Vc, size=(40, Lc))
        z = (rng.random(40) < 0.3).astype(np.float64)
        z[0], z[1] = 1.0, 0.0
        F, c = model.features(x), class_weights(z)
        l2 = 0.01
        _, dw, db = weighted_log_loss(model, F, z, c, l2)
        for j in rng.choice(Lc * Vc + 1, size=coords, replace=False):
            def loss_at(delta):
                m = ClassProbabilityEstimator(Lc, Vc, model.weights.copy(), model.bias)
                if j == Lc * Vc:
                    m.bias += delta
                else:
                    m.weights[j] += delta
                return weighted_log_loss(m, F, z, c, l2)[0]
            fd = (loss_at(eps) - loss_at(-eps)) / (2 * eps)
            an = db if j == Lc * Vc else dw[j]
            worst_c = max(worst_c, _rel_err(an, fd))
    return worst_d < 1e-4 and worst_c < 1e-4, f"max rel err denoiser={worst_d:.1e} classifier={worst_c:.1e}"


@_timed("forward KL equals weighted CE", 10.0)
def check_fwd_identity(seed: int = 0, batches: int = 100):
    """fwd_kl_loss and weighted_ce_loss on the same induced batch agree bit for bit."""
    rng = np.random.default_rng(seed)
    exact = 0
    for b in range(batches):
        L, V, K = int(rng.integers(1, 8)), int(rng.integers(2, 6)), int(rng.integers(2, 64))
        vocab = Vocab(V)
        sched = Scheduler(SCHEDULES[b % 2])
        phi = SoftmaxDenoiser(vocab, L, sched)
        phi = phi.with_weights(rng.normal(size=phi.weights.shape))
        wb = WeightedBatch(rng.integers(0, V, size=(K, L)), PRIOR, rng.random(K) + 1e-3)
        source = SourceDistribution("mask", vocab)
        a = fwd_kl_loss(phi, wb, sched, np.random.default_rng(b), source)
        c = weighted_ce_loss(phi, corrupt(wb, sched, np.random.default_rng(b), source))
        exact += a == c
    return exact == batches, f"{exact}/{batches} bit-identical"


@_timed("mutation budget respected", 60.0)
def check_constrained(seed: int = 0, trials: int = 100_000):
    """generate_constrained never edits more positions than the budget allows."""
    rng = np.random.default_rng(seed)
    vocab = Vocab(8)
    L = 12
    den = SoftmaxDenoiser(vocab, L, Scheduler("quadratic"), carry_unmasked=False)
    den = den.with_weights(rng.normal(scale=2.0, size=den.weights.shape))
    ref = rng.integers(0, 8, size=L)
    worst = {}
    ok = True
    for budget in range(4):
        cfg = SamplerConfig(16, Scheduler("quadratic"), mutation_budget=budget, reference=ref)
        x = generate_constrained(den, cfg, rng, trials)
        d = int((x != ref).sum(axis=1).max())
        worst[budget] = d
        ok &= d <= budget and not np.any(x >= vocab.size)
    return ok, "max edits per budget " + ", ".join(f"{b}:{d}" for b, d in worst.items())


ALL_CHECKS = {
    1: check_kernels,
    2: check_enumeration,
    3: check_weighted_fit,
    4: check_snis,
    5: check_weights,
    6: check_gradients,
    7: check_fwd_identity,
    9: check_constrained,
}


def run_all(selected=None, out=print) -> list:
    results = []
    for key, fn in ALL_CHECKS.items():
        if selected and key not in selected:
            continue
        res = fn()
        results.append(res)
        if out is not None:
            out(f"[{key}] {res.line()}")
    return results
