import math

import numpy as np
import pytest

from activeflow.cpe import ClassProbabilityEstimator
from activeflow.denoiser import SoftmaxDenoiser, TabularDenoiser, TrainBatch, weighted_ce_loss
from activeflow.dynamics import SamplerConfig
from activeflow.errors import ConfigurationError, RoundAbort
from activeflow.objectives import (AfmConfig, RoundState, afm_round, corrupt, fwd_kl_loss, objective_step,
                                   rev_kl_loss, sym_kl_loss)
from activeflow.oracle import enumerate_terminal, target_distribution, total_variation
from activeflow.paths import Scheduler, SourceDistribution, Vocab
from activeflow.proposal import PRIOR, ProposalMixture, ReplayBuffer, WeightedBatch

LIN = Scheduler("linear")
QUAD = Scheduler("quadratic")


def const_cpe(L, V, c):
    return ClassProbabilityEstimator(L, V, constant=c)


def one_hot_tabular(vocab, L, target):
    table = np.zeros((vocab.n_slots ** L, L, vocab.size))
    table[:, np.arange(L), target] = 1.0
    return TabularDenoiser(vocab, L, table)


def random_phi(rng, V=3, L=2, scale=1.0):
    den = SoftmaxDenoiser(Vocab(V), L, QUAD)
    return den.with_weights(rng.normal(scale=scale, size=den.weights.shape))


def test_corrupt_shares_time(rng):
    vocab = Vocab(3)
    wb = WeightedBatch(rng.integers(0, 3, (20, 4)), PRIOR, rng.random(20))
    tb = corrupt(wb, QUAD, rng, SourceDistribution("mask", vocab))
    assert np.all(tb.t == tb.t[0])
    assert abs(tb.weights.sum() - 1) < 1e-12
    assert np.all((tb.xt == wb.x1) | (tb.xt == 3))
    assert corrupt(tb, QUAD, rng) is tb
    with pytest.raises(ConfigurationError):
        corrupt(wb, QUAD, rng)


def test_fwd_perfect_model_zero(rng):
    vocab = Vocab(3)
    target = np.array([1, 2])
    den = one_hot_tabular(vocab, 2, target)
    wb = WeightedBatch(np.tile(target, (8, 1)), PRIOR, np.ones(8))
    assert fwd_kl_loss(den, wb, LIN, rng, SourceDistribution("mask", vocab)) == 0.0


def test_fwd_selector_weights(rng):
    phi = random_phi(rng)
    src = SourceDistribution("mask", phi.vocab)
    wb = WeightedBatch(np.array([[0, 1], [2, 2]]), PRIOR, np.array([1.0, 0.0]))
    loss = fwd_kl_loss(phi, wb, QUAD, np.random.default_rng(5), src)
    tb = corrupt(wb, QUAD, np.random.default_rng(5), src)
    first = TrainBatch(tb.x1[:1], tb.xt[:1], tb.t[:1], np.array([1.0]))
    assert loss == pytest.approx(weighted_ce_loss(phi, first), rel=1e-14)


def test_fwd_equals_weighted_ce_bit_exact(rng):
    for b in range(100):
        phi = random_phi(rng, V=int(rng.integers(2, 5)), L=int(rng.integers(1, 5)))
        src = SourceDistribution("mask", phi.vocab)
        K = int(rng.integers(2, 40))
        wb = WeightedBatch(rng.integers(0, phi.vocab.size, (K, phi.length)), PRIOR, rng.random(K) + 0.01)
        assert fwd_kl_loss(phi, wb, QUAD, np.random.default_rng(b), src) == \
            weighted_ce_loss(phi, corrupt(wb, QUAD, np.random.default_rng(b), src))


def masked_batch(L, V, K=1, t=0.5):
    return TrainBatch(np.zeros((K, L), dtype=np.int64), np.full((K, L), V), np.full(K, t), np.full(K, 1.0 / K))


def test_rev_same_flows_constant_cpe(rng):
    phi = random_phi(rng)
    c = 0.37
    loss, _ = rev_kl_loss(phi, phi.copy(), const_cpe(2, 3, c), masked_batch(2, 3, 4), QUAD, 16, rng)
    assert abs(loss + math.log(c)) < 1e-12


def test_rev_one_hot_example(rng):
    vocab = Vocab(2)
    den = one_hot_tabular(vocab, 1, np.array([0]))
    cpe = ClassProbabilityEstimator(1, 2, np.zeros(2), 0.0)
    loss, grad = rev_kl_loss(den, den, cpe, masked_batch(1, 2), LIN, 4, rng)
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert grad is None


def exact_rev(phi, theta, cpe, eps=1e-6):
    V = phi.vocab.size
    x = np.array([V])
    q = phi.predict(x, 0.5)[0]
    qt = theta.predict(x, 0.5)[0]
    qs = (1 - eps) * q + eps / V
    qts = (1 - eps) * qt + eps / V
    g = np.log(qs) - np.log(qts) - cpe.log_predict(np.arange(V)[:, None])
    return float(q @ g), g, q


def test_rev_matches_enumeration(rng):
    phi = random_phi(rng, V=3, L=1)
    theta = random_phi(rng, V=3, L=1)
    cpe = ClassProbabilityEstimator(1, 3, rng.normal(size=3), 0.1)
    exact, g, q = exact_rev(phi, theta, cpe)
    M = 10_000
    est, _ = rev_kl_loss(phi, theta, cpe, masked_batch(1, 3), QUAD, M, rng)
    se = np.sqrt(q @ (g - exact) ** 2 / M)
    assert abs(est - exact) < 3 * se


def test_rev_gradient_direction(rng):
    phi = random_phi(rng, V=3, L=1)
    theta = random_phi(rng, V=3, L=1)
    cpe = ClassProbabilityEstimator(1, 3, rng.normal(size=3), 0.1)
    _, grad = rev_kl_loss(phi, theta, cpe, masked_batch(1, 3), QUAD, 10_000, rng)
    flat = phi.weights.ravel()
    exact = np.zeros_like(flat)
    eps = 1e-6
    for j in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[j] += eps
        dn[j] -= eps
        exact[j] = (exact_rev(phi.with_weights(up.reshape(phi.weights.shape)), theta, cpe)[0]
                    - exact_rev(phi.with_weights(dn.reshape(phi.weights.shape)), theta, cpe)[0]) / (2 * eps)
    g = grad.ravel()
    cos = g @ exact / (np.linalg.norm(g) * np.linalg.norm(exact))
    assert cos > 0.9


def test_sym_is_sum_of_terms(rng):
    phi = random_phi(rng)
    theta = random_phi(rng)
    cpe = ClassProbabilityEstimator(2, 3, rng.normal(size=6))
    tb = corrupt(WeightedBatch(rng.integers(0, 3, (16, 2)), PRIOR, rng.random(16)), QUAD, rng,
                 SourceDistribution("mask", phi.vocab))
    s, sg = sym_kl_loss(phi, theta, cpe, tb, QUAD, 4, np.random.default_rng(9))
    f, fg = phi.loss_and_grad(tb)
    r, rg = rev_kl_loss(phi, theta, cpe, tb, QUAD, 4, np.random.default_rng(9))
    assert s == f + r
    assert np.array_equal(sg, fg + rg)


def test_sym_same_flows(rng):
    phi = random_phi(rng)
    tb = masked_batch(2, 3, 4)
    s, _ = sym_kl_loss(phi, phi.copy(), const_cpe(2, 3, 0.99), tb, QUAD, 4, rng)
    assert s == pytest.approx(weighted_ce_loss(phi, tb) - math.log(0.99), abs=1e-12)
    vocab = Vocab(3)
    den = one_hot_tabular(vocab, 2, np.array([0, 0]))
    s, _ = sym_kl_loss(den, den, const_cpe(2, 3, 0.99), tb, QUAD, 4, rng)
    assert s == pytest.approx(-math.log(0.99), abs=1e-12)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AfmConfig(objective="kl")
    with pytest.raises(ConfigurationError):
        AfmConfig(k_snis=1)
    with pytest.raises(ConfigurationError):
        AfmConfig(objective="rev", inner_samples=1)
    assert AfmConfig(learning_rate=1.0).learning_rate_at(2) == pytest.approx(0.9025)


def make_state(rng, cpe=None, mixture=None, L=2, V=2):
    phi = SoftmaxDenoiser(Vocab(V), L, LIN)
    cpe = cpe or ClassProbabilityEstimator(L, V, np.array([2.0, -1.0, 0.5, -0.5])[: L * V], 0.0)
    return RoundState(1, np.zeros((0, L)), np.zeros(0), 0.0, phi, phi.copy(), ReplayBuffer(), cpe,
                      mixture or ProposalMixture(fixed=(1.0, 0.0, 0.0)), SourceDistribution("mask", Vocab(V)),
                      SamplerConfig(8, LIN))


def test_afm_round_zero_steps(rng):
    st = make_state(rng)
    out = afm_round(st, AfmConfig(steps=0), rng)
    assert np.array_equal(out.weights, st.phi.weights)


@pytest.mark.parametrize("objective", ["fwd", "rev", "sym"])
def test_afm_round_deterministic(objective):
    cfg = AfmConfig(objective=objective, steps=20, k_snis=16, inner_samples=4)
    a = afm_round(make_state(None, mixture=ProposalMixture(fixed=(0.5, 0.5, 0.0))), cfg, np.random.default_rng(1))
    b = afm_round(make_state(None, mixture=ProposalMixture(fixed=(0.5, 0.5, 0.0))), cfg, np.random.default_rng(1))
    assert np.array_equal(a.weights, b.weights)


@pytest.mark.slow
def test_afm_round_moves_toward_target(rng):
    st = make_state(rng)
    p, _ = target_distribution(st.cpe.predict, 2, 2)
    src = st.source

    def tv(phi):
        return total_variation(p, enumerate_terminal(phi, src, LIN, 8))

    before = tv(st.phi)
    trace = []
    phi = afm_round(st, AfmConfig(steps=2000, k_snis=64, learning_rate=0.5, lr_decay=1.0), rng, trace)
    after = tv(phi)
    assert after < before
    assert len(trace) == 2000 and trace[0][1] == "fwd"


class ZeroCpe:
    def predict(self, x):
        return np.zeros(len(np.atleast_2d(x)))


def test_afm_round_aborts_on_degenerate_batches(rng):
    st = make_state(rng, cpe=ZeroCpe())
    with pytest.raises(RoundAbort):
        afm_round(st, AfmConfig(steps=5, k_snis=8), rng)


def test_objective_step_dispatch(rng):
    phi = random_phi(rng)
    cpe = ClassProbabilityEstimator(2, 3, rng.normal(size=6))
    tb = masked_batch(2, 3, 4)
    f, _ = objective_step(AfmConfig(), phi, phi, cpe, tb, QUAD, rng)
    assert f == weighted_ce_loss(phi, tb)
