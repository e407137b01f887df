import numpy as np
import pytest

from activeflow.cpe import ClassProbabilityEstimator, cpe_predict
from activeflow.denoiser import SoftmaxDenoiser, TabularDenoiser
from activeflow.dynamics import SamplerConfig
from activeflow.errors import ConfigurationError, DegenerateBatchError, DomainError
from activeflow.proposal import (DENSITY_FLOOR, FLOW, PRIOR, REPLAY, WEIGHT_CAP, ProposalMixture, ReplayBuffer,
                                 buffer_weights, draw_batch, effective_sample_size, flow_marginal_mc,
                                 importance_weight, select_component, snis_normalise)
from activeflow.paths import Scheduler, SourceDistribution, Vocab

QUAD = Scheduler("quadratic")


def buffer_of(ys, capacity=256, gamma=0.3):
    b = ReplayBuffer(capacity, gamma)
    for i, y in enumerate(ys):
        b.add([i % 3, i // 3], y)
    return b


def test_buffer_weights_examples():
    assert np.allclose(buffer_weights(buffer_of([1, 2], gamma=1.0)), [0.268941, 0.731059], atol=1e-6)
    assert np.allclose(buffer_weights(buffer_of([0.5] * 4)), 0.25)
    w = buffer_weights(buffer_of([0.0, 1.0], gamma=50.0))
    assert w[1] > 1 - 1e-6
    with pytest.raises(DomainError):
        buffer_weights(ReplayBuffer())


def test_buffer_weights_match_naive_softmax(rng):
    ys = rng.random(20)
    b = buffer_of(ys, gamma=0.7)
    naive = np.exp(0.7 * ys) / np.exp(0.7 * ys).sum()
    assert np.max(np.abs(buffer_weights(b) - naive)) < 1e-12
    assert abs(buffer_weights(b).sum() - 1) < 1e-12


def test_buffer_eviction():
    b = ReplayBuffer(capacity=2)
    assert b.add([0], 0.5) and b.add([1], 0.2)
    assert not b.add([2], 0.1)
    assert b.add([3], 0.9)
    assert sorted(b.ys().tolist()) == [0.5, 0.9]
    assert len(b) == 2


def test_buffer_csv_roundtrip(tmp_path):
    b = buffer_of([0.25, 1.0 / 3.0, 0.75])
    p = tmp_path / "buf.csv"
    b.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "sequence,y"
    assert lines[1].startswith("0-0,")
    back = ReplayBuffer.from_csv(p)
    assert back.entries == b.entries


def test_mixture_schedule():
    m = ProposalMixture()
    a0, af, arb = m.coefficients(4, 0)
    assert arb == pytest.approx(0.2)
    assert af == pytest.approx(0.8 * 0.1)
    assert m.coefficients(20, 100)[2] == 0.4
    assert m.coefficients(20, 100)[1] == pytest.approx(0.6 * 0.95)
    for r in range(30):
        for size in (0, 64, 65):
            assert abs(sum(m.coefficients(r, size)) - 1) < 1e-12
    with pytest.raises(ConfigurationError):
        ProposalMixture(fixed=(0.5, 0.5, 0.5))


def test_select_component_rules(rng):
    prior_only = ProposalMixture(fixed=(1.0, 0.0, 0.0))
    assert {select_component(prior_only, 1, rng, 5) for _ in range(50)} == {PRIOR}
    replay_only = ProposalMixture(fixed=(0.0, 0.0, 1.0))
    assert select_component(replay_only, 1, rng, 0) == PRIOR
    assert select_component(replay_only, 1, rng, 3) == REPLAY
    flow_only = ProposalMixture(fixed=(0.0, 1.0, 0.0))
    assert select_component(flow_only, 1, rng, 0, has_flow=False) == PRIOR


def test_select_component_frequencies(rng):
    m = ProposalMixture(fixed=(0.2, 0.5, 0.3))
    draws = [select_component(m, 1, rng, 10) for _ in range(20_000)]
    assert abs(draws.count(FLOW) / 20_000 - 0.5) < 0.015


def test_flow_marginal_mask_source(rng):
    vocab = Vocab(3)
    den = SoftmaxDenoiser(vocab, 2, QUAD)
    den = den.with_weights(rng.normal(size=den.weights.shape))
    src = SourceDistribution("mask", vocab)
    x = np.array([2, 0])
    a = flow_marginal_mc(den, x, src, 50, rng)
    b = flow_marginal_mc(den, x, src, 50, rng)
    row = den.predict(np.array([3, 3]), 0.0)
    assert a == b == pytest.approx(row[0, 2] * row[1, 0], rel=1e-12)


def test_flow_marginal_uniform_denoiser(rng):
    vocab = Vocab(2)
    den = TabularDenoiser.uniform(vocab, 2)
    assert flow_marginal_mc(den, np.array([1, 0]), SourceDistribution("mask", vocab), 1, rng) == 0.25


def test_flow_marginal_uniform_source_mc(rng):
    vocab = Vocab(2)
    table = np.zeros((3, 1, 2))
    table[0] = [[0.9, 0.1]]
    table[1] = [[0.3, 0.7]]
    table[2] = [[0.5, 0.5]]
    den = TabularDenoiser(vocab, 1, table)
    src = SourceDistribution("uniform", vocab)
    exact = 0.5 * (0.9 + 0.3)
    n = 10_000
    est = flow_marginal_mc(den, np.array([0]), src, n, rng)
    se = 0.3 / np.sqrt(n)
    assert abs(est - exact) < 3 * se


def test_importance_weight_examples(rng):
    cpe = ClassProbabilityEstimator(1, 2, np.zeros(2), np.log(0.7 / 0.3))
    assert importance_weight(PRIOR, np.array([[0]]), cpe)[0] == pytest.approx(0.7)
    assert importance_weight(REPLAY, np.array([[1], [0]]), cpe).tolist() == [1.0, 1.0]
    half = ClassProbabilityEstimator(2, 2)
    den = TabularDenoiser.uniform(Vocab(2), 2)
    w = importance_weight(FLOW, np.array([[0, 1]]), half, den, SourceDistribution("mask", Vocab(2)), 1, rng)
    assert w[0] == pytest.approx(2.0)


def test_importance_weight_prior_bit_exact(rng):
    cpe = ClassProbabilityEstimator(5, 4, rng.normal(size=20), 0.1)
    x = rng.integers(0, 4, (128, 5))
    assert np.array_equal(importance_weight(PRIOR, x, cpe), cpe_predict(cpe, x))


def test_importance_weight_density_floor(rng):
    vocab = Vocab(2)
    table = np.zeros((9, 2, 2))
    table[..., 0] = 1.0
    den = TabularDenoiser(vocab, 2, table)
    w = importance_weight(FLOW, np.array([[1, 1]]), ClassProbabilityEstimator(2, 2), den,
                          SourceDistribution("mask", vocab), 1, rng)
    assert w[0] == WEIGHT_CAP


def test_snis_normalise_examples():
    assert np.allclose(snis_normalise([0.2, 0.8]), [0.2, 0.8])
    assert np.all(snis_normalise(np.ones(128)) == 1 / 128)
    with pytest.raises(DegenerateBatchError):
        snis_normalise([0.0, 0.0])


def test_effective_sample_size():
    assert effective_sample_size(np.full(10, 0.1)) == pytest.approx(10)
    assert effective_sample_size(np.array([1.0, 0.0])) == pytest.approx(1)


def test_draw_batch_components(rng):
    vocab = Vocab(3)
    L = 4
    den = SoftmaxDenoiser(vocab, L, QUAD)
    den = den.with_weights(rng.normal(size=den.weights.shape))
    cpe = ClassProbabilityEstimator(L, 3, rng.normal(size=12))
    src = SourceDistribution("mask", vocab)
    buf = ReplayBuffer()
    buf.add([0, 1, 2, 0], 0.5)
    single = draw_batch(ProposalMixture(fixed=(0, 0, 1)), 1, buf, den, src, cpe, 16, rng)
    assert single.component == REPLAY
    assert np.all(single.x1 == [0, 1, 2, 0]) and np.all(single.weights == 1)
    prior = draw_batch(ProposalMixture(fixed=(1, 0, 0)), 1, buf, den, src, cpe, 64, rng)
    assert prior.x1.max() < 3
    flow = draw_batch(ProposalMixture(fixed=(0, 1, 0)), 1, buf, den, src, cpe, 32, rng,
                      SamplerConfig(8, QUAD))
    dens = flow_marginal_mc(den, flow.x1, src, 1, rng)
    assert np.allclose(flow.weights, cpe_predict(cpe, flow.x1) / dens, rtol=1e-12, atol=0)
    with pytest.raises(ConfigurationError):
        draw_batch(ProposalMixture(), 1, buf, den, src, cpe, 1, rng)
