#!/usr/bin/env python3
"""Tests for allocation probabilities, latent counts and statistic accumulation."""

import math
import os
import sys
from collections import Counter

import numpy as np
from scipy.stats import chi2_contingency

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from bnbcp.allocation import (
    AllocationEngine,
    accumulate_stats,
    allocation_probs_point,
    allocation_probs_vb,
    expected_latent_counts,
    normalize_log_rates,
    sample_latent_counts,
)
from bnbcp.errors import NumericError
from bnbcp.model import Hyperparams, ModelState, SufficientStats, VariationalState, init_model, init_variational
from bnbcp.sparse_tensor import Entry, TensorShape

EULER_GAMMA = 0.5772156649015329


def psi_int(n):
    """Digamma at a positive integer: harmonic number H_{n-1} minus Euler's constant"""
    return sum(1.0 / k for k in range(1, n)) - EULER_GAMMA


def _two_by_two_model():
    factors = [np.array([[0.5, 0.2], [0.5, 0.8]]), np.array([[0.1, 0.4], [0.9, 0.6]])]
    return ModelState(factors, np.array([2.0, 1.0]), np.array([0.5, 0.5]))


def test_point_probs_single_component():
    model = init_model(TensorShape((3, 4)), Hyperparams.defaults(2, 1), seed=0)
    assert np.array_equal(allocation_probs_point(Entry((2, 1), 5), model), [1.0])


def test_point_probs_symmetric_components():
    factors = [np.full((2, 2), 0.5), np.full((3, 2), 1.0 / 3.0)]
    model = ModelState(factors, np.array([1.0, 1.0]), np.array([0.5, 0.5]))
    assert np.allclose(allocation_probs_point(Entry((1, 2), 1), model), [0.5, 0.5], atol=1e-15)


def test_point_probs_match_direct_evaluation():
    model = _two_by_two_model()
    zeta = allocation_probs_point(Entry((0, 0), 3), model)

    rates = [2.0 * 0.5 * 0.1, 1.0 * 0.2 * 0.4]
    expected = [r / sum(rates) for r in rates]
    assert np.max(np.abs(zeta - expected)) < 1e-12
    assert abs(zeta.sum() - 1.0) < 1e-12


def test_point_probs_uniform_when_every_rate_is_zero():
    factors = [np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([[0.5, 0.5], [0.5, 0.5]])]
    model = ModelState(factors, np.array([1.0, 3.0]), np.array([0.5, 0.5]))
    assert np.array_equal(allocation_probs_point(Entry((0, 1), 2), model), [0.5, 0.5])


def test_point_probs_reject_non_finite_factors():
    model = _two_by_two_model()
    model.factors[1][0, 1] = np.nan
    try:
        allocation_probs_point(Entry((0, 0), 1), model)
        assert False, "expected NumericError"
    except NumericError:
        pass


def test_softmax_shift_invariance():
    rng = np.random.default_rng(3)
    log_rates = rng.normal(size=(20, 5)) * 30
    base = normalize_log_rates(log_rates)
    shifted = normalize_log_rates(log_rates + 1234.5)
    assert np.max(np.abs(base - shifted)) < 1e-12
    assert np.allclose(base.sum(axis=1), 1.0, atol=1e-12)


def _fixed_vb_fixture():
    hyper = Hyperparams(rank_bound=2, a=[1.0, 1.0], g=1.0, c=1.0, epsilon=0.5)
    s1 = np.array([[1.0, 2.0], [2.0, 0.0]])
    s2 = np.array([[1.0, 1.0], [2.0, 1.0]])
    stats = SufficientStats([s1, s2], np.array([3.0, 2.0]))
    vstate = VariationalState(
        rho=[np.ones((2, 2)), np.ones((2, 2))],
        p_a=np.array([1.0, 3.0]),
        p_b=np.array([1.0, 1.0]),
        lambda_a=np.ones(2),
        lambda_b=np.ones(2),
    )
    return hyper, stats, vstate


def _normalize(log_w):
    w = [math.exp(v - max(log_w)) for v in log_w]
    return np.array([v / sum(w) for v in w])


def test_vb_probs_printed_weights_match_harmonic_digamma():
    hyper, stats, vstate = _fixed_vb_fixture()
    zeta = allocation_probs_vb(Entry((0, 1), 4), vstate, stats, hyper)

    # rho rows at entry (0, 1): mode 0 -> [2, 3], mode 1 -> [3, 2]; s_r + g -> [4, 3]
    log_w0 = psi_int(4) + math.log(0.5) + psi_int(2) + psi_int(3) - psi_int(5)
    log_w1 = psi_int(3) + math.log(0.75) + psi_int(3) + psi_int(2) - psi_int(5)
    assert np.max(np.abs(zeta - _normalize([log_w0, log_w1]))) < 1e-10


def test_vb_probs_mean_field_weights_match_harmonic_digamma():
    hyper, stats, vstate = _fixed_vb_fixture()
    zeta = allocation_probs_vb(Entry((0, 1), 4), vstate, stats, hyper, derivation='mean_field')

    # E[ln p] = psi(p_a) - psi(p_a + p_b); column sums of rho are [5, 4] in both modes
    log_w0 = psi_int(4) + (psi_int(1) - psi_int(2)) + (psi_int(2) - psi_int(5)) + (psi_int(3) - psi_int(5))
    log_w1 = psi_int(3) + (psi_int(3) - psi_int(4)) + (psi_int(3) - psi_int(4)) + (psi_int(2) - psi_int(4))
    assert np.max(np.abs(zeta - _normalize([log_w0, log_w1]))) < 1e-10


def test_vb_probs_read_state_when_stats_absent():
    hyper, stats, vstate = _fixed_vb_fixture()
    vstate.rho = [a + s for a, s in zip(hyper.a, stats.per_mode)]
    vstate.lambda_a = hyper.g + stats.total
    from_state = allocation_probs_vb(Entry((1, 0), 2), vstate, None, hyper)
    from_stats = allocation_probs_vb(Entry((1, 0), 2), vstate, stats, hyper)
    assert np.max(np.abs(from_state - from_stats)) < 1e-15


def test_vb_probs_edge_cases():
    shape = TensorShape((3, 3))
    hyper = Hyperparams.defaults(2, 1)
    vstate = init_variational(shape, hyper, seed=0)
    assert np.allclose(allocation_probs_vb(Entry((0, 2), 1), vstate, None, hyper), [1.0])

    hyper = Hyperparams.defaults(2, 2)
    symmetric = VariationalState([np.full((3, 2), 0.7), np.full((3, 2), 1.3)],
                                 np.full(2, 2.0), np.full(2, 5.0), np.full(2, 3.0), np.full(2, 0.4))
    assert np.allclose(allocation_probs_vb(Entry((1, 1), 1), symmetric, None, hyper), [0.5, 0.5], atol=1e-15)

    symmetric.p_a[0] = -1.0
    try:
        allocation_probs_vb(Entry((1, 1), 1), symmetric, None, hyper)
        assert False, "expected NumericError"
    except NumericError:
        pass


def test_sample_latent_counts_edge_cases():
    rng = np.random.default_rng(0)
    before = rng.bit_generator.state
    assert np.array_equal(sample_latent_counts(0, np.array([0.2, 0.8]), rng), [0, 0])
    assert rng.bit_generator.state == before

    assert np.array_equal(sample_latent_counts(5, np.array([1.0, 0.0]), rng), [5, 0])

    try:
        sample_latent_counts(-1, np.array([1.0]), rng)
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_sample_latent_counts_mean():
    rng = np.random.default_rng(2024)
    probs = np.array([0.3, 0.7])
    draws = np.array([sample_latent_counts(10, probs, rng)[0] for _ in range(100000)])
    assert abs(draws.mean() - 3.0) < 0.05


def test_conservation_of_counts():
    rng = np.random.default_rng(7)
    for _ in range(10000):
        R = int(rng.integers(1, 6))
        y = int(rng.integers(0, 50))
        probs = rng.dirichlet(np.ones(R))
        sampled = sample_latent_counts(y, probs, rng)
        assert sampled.sum() == y
        assert abs(expected_latent_counts(y, probs).sum() - y) < 1e-9


def test_expected_latent_counts_examples():
    assert np.array_equal(expected_latent_counts(0, np.array([0.5, 0.5])), [0.0, 0.0])
    assert np.array_equal(expected_latent_counts(4, np.array([0.5, 0.5])), [2.0, 2.0])
    assert np.allclose(expected_latent_counts(7, np.array([0.2, 0.8])), [1.4, 5.6], atol=1e-12)


def test_poisson_thinning_matches_independent_poissons():
    theta = np.array([0.5, 1.0, 1.5])
    n_draws = 100000
    rng = np.random.default_rng(12345)

    independent = rng.poisson(theta, size=(n_draws, 3))
    totals = rng.poisson(theta.sum(), size=n_draws)
    probs = theta / theta.sum()
    thinned = np.array([sample_latent_counts(int(z), probs, rng) for z in totals])

    a = Counter(map(tuple, independent))
    b = Counter(map(tuple, thinned))
    frequent = sorted(k for k in set(a) | set(b) if a[k] + b[k] >= 20)
    table = [[a[k] for k in frequent], [b[k] for k in frequent]]
    rest = [n_draws - sum(table[0]), n_draws - sum(table[1])]
    if sum(rest) > 0:
        table[0].append(rest[0])
        table[1].append(rest[1])

    _, p_value, _, _ = chi2_contingency(np.array(table))
    assert p_value > 0.001


def test_accumulate_stats_examples():
    empty = accumulate_stats([], dims=(2, 2), rank=2)
    assert np.array_equal(empty.total, [0.0, 0.0])
    assert all(np.array_equal(s, np.zeros((2, 2))) for s in empty.per_mode)

    stats = accumulate_stats([(Entry((0, 1), 5), np.array([2, 3]))], dims=(2, 2), rank=2)
    assert np.array_equal(stats.per_mode[0][0], [2, 3])
    assert np.array_equal(stats.per_mode[0][1], [0, 0])
    assert np.array_equal(stats.per_mode[1][1], [2, 3])
    assert np.array_equal(stats.total, [2, 3])


def test_accumulate_stats_matches_double_loop():
    rng = np.random.default_rng(5)
    dims, R = (4, 3, 5), 3
    pairs = []
    for _ in range(40):
        index = tuple(int(rng.integers(0, n)) for n in dims)
        pairs.append((Entry(index, 1), rng.integers(0, 9, size=R).astype(float)))

    stats = accumulate_stats(pairs, dims, R)

    for k, n in enumerate(dims):
        for j in range(n):
            for r in range(R):
                expected = sum(y[r] for entry, y in pairs if entry.index[k] == j)
                assert stats.per_mode[k][j, r] == expected
    for r in range(R):
        assert stats.total[r] == sum(y[r] for _, y in pairs)
    stats.check_consistency(tol=1e-12)


def _random_entries(dims, n, seed):
    rng = np.random.default_rng(seed)
    indices = np.column_stack([rng.integers(0, d, size=n) for d in dims])
    counts = rng.integers(1, 30, size=n)
    return indices, counts


def test_engine_sampled_stats_conserve_counts():
    dims = (8, 6, 5)
    indices, counts = _random_entries(dims, 500, seed=1)
    model = init_model(TensorShape(dims), Hyperparams.defaults(3, 4), seed=1)

    for workers in (1, 3):
        stats = AllocationEngine(workers).sampled_stats(indices, counts, model, np.random.default_rng(0))
        assert stats.total.sum() == counts.sum()
        stats.check_consistency(tol=0.0)


def test_engine_single_worker_is_reproducible():
    dims = (8, 6)
    indices, counts = _random_entries(dims, 300, seed=2)
    model = init_model(TensorShape(dims), Hyperparams.defaults(2, 5), seed=2)
    engine = AllocationEngine(1)
    a = engine.sampled_stats(indices, counts, model, np.random.default_rng(9))
    b = engine.sampled_stats(indices, counts, model, np.random.default_rng(9))
    assert np.array_equal(a.total, b.total)
    assert np.array_equal(a.per_mode[1], b.per_mode[1])


def test_engine_expected_stats_independent_of_workers():
    dims = (7, 5, 4)
    indices, counts = _random_entries(dims, 400, seed=3)
    hyper = Hyperparams.defaults(3, 3)
    vstate = init_variational(TensorShape(dims), hyper, seed=3)

    one = AllocationEngine(1).expected_stats(indices, counts, vstate, hyper)
    four = AllocationEngine(4).expected_stats(indices, counts, vstate, hyper)
    assert np.max(np.abs(one.total - four.total)) < 1e-9
    for a, b in zip(one.per_mode, four.per_mode):
        assert np.max(np.abs(a - b)) < 1e-9
    assert abs(one.total.sum() - counts.sum()) < 1e-9
