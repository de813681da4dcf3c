#!/usr/bin/env python3
"""Tests for the batch Gibbs sampler."""

import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from bnbcp.evaluation import TRACE_COLUMNS
from bnbcp.gibbs import (
    GibbsConfig,
    gibbs_sweep,
    run_gibbs,
    sample_factor_columns,
    sample_lambda,
    sample_p,
)
from bnbcp.model import Hyperparams, SufficientStats, init_model
from bnbcp.sparse_tensor import SparseCountTensor, TensorShape
from bnbcp.synthetic import generate


def _tensor(dims, n_entries, seed, max_count=10):
    rng = np.random.default_rng(seed)
    shape = TensorShape(dims)
    flat = rng.choice(shape.volume, size=n_entries, replace=False)
    indices = np.column_stack(np.unravel_index(flat, dims))
    return SparseCountTensor(shape, indices, rng.integers(1, max_count, size=n_entries))


def test_factor_columns_with_zero_stats_stay_on_simplex():
    hyper = Hyperparams.defaults(2, 4)
    stats = SufficientStats.zeros((6, 9), 4)
    factors = sample_factor_columns(stats, hyper, np.random.default_rng(0))
    for factor, n in zip(factors, (6, 9)):
        assert factor.shape == (n, 4)
        assert np.all(factor > 0)
        assert np.all(np.abs(factor.sum(axis=0) - 1.0) <= 1e-9)


def test_factor_columns_follow_heavy_statistics():
    hyper = Hyperparams.defaults(2, 1)
    s0 = np.zeros((5, 1))
    s0[0, 0] = 1e6
    stats = SufficientStats([s0, np.full((3, 1), 1e6 / 3)], np.array([1e6]))
    factors = sample_factor_columns(stats, hyper, np.random.default_rng(1))
    assert abs(factors[0][0, 0] - 1.0) < 1e-2
    assert np.all(factors[0][1:, 0] < 1e-2)


def test_factor_columns_monte_carlo_mean():
    # 100000 independent columns sharing one set of statistics
    n_cols = 100000
    hyper = Hyperparams(rank_bound=1, a=[0.1, 0.1])
    s = np.tile(np.array([[2.0], [5.0], [0.0]]), (1, n_cols))
    stats = SufficientStats([s, s], np.full(n_cols, 7.0))
    factors = sample_factor_columns(stats, hyper, np.random.default_rng(2))

    conc = np.array([2.1, 5.1, 0.1])
    assert np.all(np.abs(factors[0].mean(axis=1) - conc / conc.sum()) < 0.01)


def test_sample_p_limits_and_mean():
    hyper = Hyperparams(rank_bound=2, a=[0.1, 0.1], g=1.0, c=1.0, epsilon=0.1)
    rng = np.random.default_rng(3)

    big = SufficientStats.zeros((2, 2), 2)
    big.total[:] = [1e6, 1.0]
    p = sample_p(big, hyper, rng)
    assert p[0] > 0.999
    assert np.all((p > 0) & (p < 1))

    many = SufficientStats([np.zeros((1, 100000))] * 2, np.full(100000, 3.0))
    draws = sample_p(many, hyper, rng)
    assert abs(draws.mean() - 3.1 / 5.0) < 0.005


def test_sample_lambda_mean_and_shrinkage():
    hyper = Hyperparams(rank_bound=1, a=[0.1, 0.1], g=1.0)
    rng = np.random.default_rng(4)
    n = 100000

    stats = SufficientStats([np.zeros((1, n))] * 2, np.zeros(n))
    lam = sample_lambda(stats, np.full(n, 0.5), hyper, rng)
    assert abs(lam.mean() - 0.5) < 0.01
    assert np.all(lam > 0)

    stats = SufficientStats([np.zeros((1, n))] * 2, np.full(n, 200.0))
    lam = sample_lambda(stats, np.full(n, 0.8), hyper, rng)
    assert abs(lam.mean() / (201.0 * 0.8) - 1.0) < 0.01

    tiny = sample_lambda(SufficientStats.zeros((1, 1), 3), np.full(3, 1e-12), hyper, rng)
    assert np.all(tiny < 1e-9)


def test_sweep_on_empty_tensor_draws_from_priors():
    shape = TensorShape((4, 5))
    hyper = Hyperparams.defaults(2, 3)
    model = init_model(shape, hyper, seed=0)
    new_model, stats = gibbs_sweep(SparseCountTensor.empty(shape), model, hyper, np.random.default_rng(0))
    assert np.array_equal(stats.total, np.zeros(3))
    new_model.validate()


def test_sweep_preserves_invariants():
    train = _tensor((10, 8, 6), 150, seed=1)
    hyper = Hyperparams.defaults(3, 6)
    model = init_model(train.shape, hyper, seed=1)
    rng = np.random.default_rng(1)
    for _ in range(5):
        model, stats = gibbs_sweep(train, model, hyper, rng)
        model.validate(tol=1e-9)
        stats.check_consistency(tol=0.0)
        assert stats.total.sum() == train.total_count


def test_single_collection_sample_is_the_mean():
    train = _tensor((6, 6, 6), 60, seed=2)
    hyper = Hyperparams.defaults(3, 4)
    summary, _ = run_gibbs(train, None, GibbsConfig(burnin=3, collection=1, seed=5), hyper)
    assert np.array_equal(summary.mean_model.lam, summary.last_model.lam)
    assert np.array_equal(summary.mean_model.p, summary.last_model.p)
    for a, b in zip(summary.mean_model.factors, summary.last_model.factors):
        assert np.array_equal(a, b)


def test_run_gibbs_bookkeeping():
    train = _tensor((8, 7, 6), 100, seed=3)
    heldout = _tensor((8, 7, 6), 10, seed=4)
    hyper = Hyperparams.defaults(3, 5)
    cfg = GibbsConfig(burnin=4, collection=7, seed=1, eval_every=3)
    summary, trace = run_gibbs(train, heldout, cfg, hyper)

    assert sum(summary.rank_histogram.values()) == 7
    assert list(summary.histogram_frame().columns) == ['rank', 'count']
    assert summary.lambda_spectrum.shape == (5,)
    summary.mean_model.validate(tol=1e-9)

    frame = trace.to_frame()
    assert list(frame.columns) == TRACE_COLUMNS
    assert list(frame['iter']) == [0, 3, 6, 9, 11]
    assert np.all(np.diff(frame['elapsed_sec']) >= 0)


def test_run_gibbs_is_deterministic():
    train = _tensor((8, 8, 8), 120, seed=6)
    hyper = Hyperparams.defaults(3, 4)
    cfg = GibbsConfig(burnin=5, collection=5, seed=21)
    a, _ = run_gibbs(train, None, cfg, hyper)
    b, _ = run_gibbs(train, None, cfg, hyper)
    assert np.array_equal(a.mean_model.lam, b.mean_model.lam)
    assert np.array_equal(a.last_model.factors[2], b.last_model.factors[2])
    assert a.rank_histogram == b.rank_histogram


def test_config_validation():
    for kwargs in [dict(burnin=-1), dict(collection=0), dict(eval_every=0)]:
        try:
            GibbsConfig(**kwargs)
            assert False, f"expected ValueError for {kwargs}"
        except ValueError:
            pass


def test_data_free_chain_matches_conditional_beta_mean():
    # with s_r = 0 every sweep draws p_r from Beta(c*eps, c*(1 - eps) + g)
    shape = TensorShape((3, 3))
    hyper = Hyperparams(rank_bound=3, a=[0.5, 0.5], g=1.0, c=1.0, epsilon=1.0 / 3.0)
    sweeps = 5000
    cfg = GibbsConfig(burnin=10, collection=sweeps, seed=8, eval_every=sweeps)
    summary, _ = run_gibbs(SparseCountTensor.empty(shape), None, cfg, hyper)

    a, b = hyper.beta_a, hyper.beta_b + hyper.g
    mean = a / (a + b)
    sd = np.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
    pooled = summary.mean_model.p.mean()
    assert abs(pooled - mean) < 3 * sd / np.sqrt(sweeps * hyper.rank_bound)


def _sweep_seconds(train, hyper, repeats=5):
    model = init_model(train.shape, hyper, seed=0)
    rng = np.random.default_rng(0)
    gibbs_sweep(train, model, hyper, rng)
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        gibbs_sweep(train, model, hyper, rng)
        best = min(best, time.perf_counter() - start)
    return best


def test_sweep_time_scales_linearly_in_nnz():
    big = _tensor((100, 100, 100), 80000, seed=9)
    small = big.take(np.arange(40000))
    hyper = Hyperparams.defaults(3, 10)
    ratio = _sweep_seconds(big, hyper) / _sweep_seconds(small, hyper)
    assert 1.6 <= ratio <= 2.6, f"time ratio {ratio:.2f}"


def test_recovers_planted_rank():
    shape = TensorShape((30, 30, 30))
    hyper = Hyperparams.defaults(3, 15)
    tensor, truth = generate(shape, 15, 5, 2000.0, hyper, seed=1)
    summary, _ = run_gibbs(tensor, None, GibbsConfig(burnin=200, collection=200, seed=1), hyper)

    assert summary.modal_rank == 5
    near = sum(count for rank, count in summary.rank_histogram.items() if 4 <= rank <= 6)
    assert near >= 0.7 * 200
