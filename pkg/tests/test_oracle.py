import numpy as np
import pytest

from activeflow.denoiser import SoftmaxDenoiser, TabularDenoiser, fit_tabular_exact
from activeflow.errors import ConfigurationError, DomainError
from activeflow.oracle import (DistributionTable, all_states, enumerate_terminal, snis_reference,
                               target_distribution, total_variation)
from activeflow.paths import Scheduler, SourceDistribution, Vocab

from conftest import mask_source


@pytest.mark.parametrize("w, expected", [
    ([0.9, 0.1], [0.9, 0.1]),
    ([0.3, 0.1], [0.75, 0.25]),
    ([2.0, 2.0], [0.5, 0.5]),
])
def test_target_distribution_examples(w, expected):
    p, Z = target_distribution(np.array(w), 2, 1)
    assert p.probs == pytest.approx(expected, abs=1e-15)
    assert Z == np.mean(w)


def test_target_distribution_callable_and_z(rng):
    w = rng.uniform(size=27)
    p, Z = target_distribution(lambda s: w[s @ [1, 3, 9]], 3, 3)
    assert Z == float(np.mean(w))
    assert p.probs == pytest.approx(w / w.sum(), rel=1e-14)


def test_target_distribution_errors():
    with pytest.raises(DomainError):
        target_distribution(np.zeros(4), 2, 2)
    with pytest.raises(ConfigurationError):
        target_distribution(np.ones(10 ** 5), 10, 5)


def test_total_variation_examples():
    p = DistributionTable(2, 1, np.array([0.9, 0.1]))
    q = DistributionTable(2, 1, np.array([0.75, 0.25]))
    assert total_variation(p, p) == 0.0
    assert total_variation(p, q) == pytest.approx(0.15, abs=1e-15)
    a = DistributionTable(2, 1, np.array([1.0, 0.0]))
    b = DistributionTable(2, 1, np.array([0.0, 1.0]))
    assert total_variation(a, b) == 1.0
    with pytest.raises(DomainError):
        total_variation(p, DistributionTable(2, 2, np.full(4, 0.25)))


def test_state_indexing():
    states = all_states(3, 2)
    assert states[1].tolist() == [1, 0] and states[3].tolist() == [0, 1]
    p = DistributionTable(3, 2, np.arange(9) / 36)
    assert p.prob([2, 1]) == 5 / 36


def test_enumerate_one_hot_point_mass(scheduler):
    vocab = Vocab(3)
    den = TabularDenoiser.uniform(vocab, 2)
    table = np.zeros_like(den.table)
    table[:, [0, 1], [2, 0]] = 1.0
    for K in (1, 3, 8):
        p = enumerate_terminal(TabularDenoiser(vocab, 2, table), mask_source(3), scheduler, K)
        assert p.prob([2, 0]) == pytest.approx(1.0, abs=1e-12)


def test_enumerate_single_step_is_posterior(rng):
    vocab = Vocab(3)
    den = TabularDenoiser.random(vocab, 2, rng)
    p = enumerate_terminal(den, mask_source(3), Scheduler("linear"), 1)
    row = den.predict(np.array([[3, 3]]), 0.0)[0]
    assert p.probs == pytest.approx(np.kron(row[1], row[0]), abs=1e-12)


def test_enumerate_weighted_fit_example():
    vocab = Vocab(2)
    den = fit_tabular_exact(np.array([[0], [1]]), [0.9, 0.1], vocab, 1)
    p = enumerate_terminal(den, mask_source(2), Scheduler("linear"), 32)
    target = DistributionTable(2, 1, np.array([0.9, 0.1]))
    assert total_variation(p, target) < 0.01


@pytest.mark.parametrize("kind", ["mask", "uniform"])
def test_enumerate_output_sums_to_one(rng, scheduler, kind):
    vocab = Vocab(3, kind == "mask")
    den = SoftmaxDenoiser(vocab, 2, scheduler).with_weights(
        rng.normal(size=SoftmaxDenoiser(vocab, 2, scheduler).weights.shape))
    p = enumerate_terminal(den, SourceDistribution(kind, vocab), scheduler, 4)
    assert p.base == 3 and abs(p.probs.sum() - 1) < 1e-10


def test_enumerate_bounds():
    vocab = Vocab(3)
    den = TabularDenoiser.uniform(vocab, 2)
    with pytest.raises(ConfigurationError):
        enumerate_terminal(den, mask_source(3), Scheduler("linear"), 65)


def test_snis_constant_g(rng):
    w = lambda x: 0.1 + x.sum(axis=1)
    _, _, exact, est = snis_reference(w, lambda x: np.ones(len(x)), 3, 2, 7, 50, rng)
    assert exact == pytest.approx(1.0) and np.all(est == pytest.approx(1.0, abs=1e-15))


def test_snis_reference_unbiased_at_large_k(rng):
    w = lambda x: np.where((x == [2, 1]).all(axis=1), 5.0, 1.0)
    g = lambda x: (x == [2, 1]).all(axis=1).astype(float)
    mean, se, exact, _ = snis_reference(w, g, 3, 2, 10_000, 100, rng)
    assert abs(mean - exact) < 2 * se
