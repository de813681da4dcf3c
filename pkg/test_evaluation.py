#!/usr/bin/env python3
"""Tests for reconstruction, heldout scoring, effective rank and fit traces."""

import itertools
import math
import os
import sys
import tempfile

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from bnbcp.errors import TensorValidationError
from bnbcp.evaluation import (
    TRACE_COLUMNS,
    FitTrace,
    TraceRecorder,
    TraceRow,
    effective_rank,
    heldout_loglik,
    heldout_mae,
    reconstruct_rate,
    reconstruct_rates,
)
from bnbcp.model import Hyperparams, ModelState, init_model
from bnbcp.sparse_tensor import SparseCountTensor, TensorShape


def _one_cell_model(lam):
    return ModelState([np.array([[1.0]]), np.array([[1.0]])], np.array([lam]), np.array([0.5]))


def _tensor(shape, entries):
    return SparseCountTensor(TensorShape(shape), np.array([e[0] for e in entries]), np.array([e[1] for e in entries]))


def test_reconstruct_rate_examples():
    model = ModelState([np.array([[0.25, 1.0], [0.75, 0.0]]), np.array([[0.5, 0.1], [0.5, 0.9]])],
                       np.array([4.0, 2.0]), np.array([0.5, 0.5]))
    assert abs(reconstruct_rate((0, 1), model) - (4.0 * 0.25 * 0.5 + 2.0 * 1.0 * 0.9)) < 1e-12
    assert abs(reconstruct_rate((1, 0), model) - 4.0 * 0.75 * 0.5) < 1e-12


def test_reconstruct_rates_match_nested_loops():
    model = init_model(TensorShape((4, 3, 5)), Hyperparams.defaults(3, 6), seed=2)
    cells = np.array(list(itertools.product(range(4), range(3), range(5))))
    fast = reconstruct_rates(cells, model)
    for cell, value in zip(cells, fast):
        expected = 0.0
        for r in range(6):
            term = model.lam[r]
            for k in range(3):
                term *= model.factors[k][cell[k], r]
            expected += term
        assert abs(value - expected) <= 1e-12 * max(1.0, expected)


def test_rates_are_linear_in_lambda():
    model = init_model(TensorShape((5, 5)), Hyperparams.defaults(2, 3), seed=3)
    cells = np.array([[0, 1], [4, 2], [3, 3]])
    scaled = model.copy()
    scaled.lam = model.lam * 2.5
    assert np.allclose(reconstruct_rates(cells, scaled), 2.5 * reconstruct_rates(cells, model))


def test_heldout_loglik_examples():
    heldout = _tensor((1, 1), [((0, 0), 1)])
    assert abs(heldout_loglik(heldout, _one_cell_model(1.0)) - (-1.0)) < 1e-12

    # log P(3 | 2) = 3 ln 2 - 2 - ln 6
    heldout = _tensor((1, 1), [((0, 0), 3)])
    expected = 3 * math.log(2.0) - 2.0 - math.log(6.0)
    assert abs(heldout_loglik(heldout, _one_cell_model(2.0)) - expected) < 1e-12


def test_heldout_mae_examples():
    model = ModelState([np.array([[0.5], [0.5]]), np.array([[1.0]])], np.array([4.0]), np.array([0.5]))
    heldout = _tensor((2, 1), [((0, 0), 1), ((1, 0), 5)])
    assert abs(heldout_mae(heldout, model) - 2.0) < 1e-12


def test_empty_heldout_scores_zero():
    model = _one_cell_model(1.0)
    empty = SparseCountTensor.empty(TensorShape((1, 1)))
    assert heldout_loglik(empty, model) == 0.0
    assert heldout_mae(empty, model) == 0.0


def test_scoring_rejects_mismatched_shapes():
    heldout = _tensor((2, 2), [((1, 1), 2)])
    try:
        heldout_loglik(heldout, _one_cell_model(1.0))
        assert False, "expected TensorValidationError"
    except TensorValidationError:
        pass


def test_scoring_rejects_mismatched_shapes_without_entries():
    empty = SparseCountTensor.empty(TensorShape((5, 5, 5)))
    for score in (heldout_loglik, heldout_mae):
        try:
            score(empty, _one_cell_model(1.0))
            assert False, f"expected TensorValidationError from {score.__name__}"
        except TensorValidationError:
            pass


def test_effective_rank_examples():
    assert effective_rank(np.array([10.0, 0.5, 0.001]), 0.01) == 2
    assert effective_rank(np.array([1.0, 1.0, 1.0])) == 3
    assert effective_rank(np.array([5.0])) == 1
    for bad in (np.array([]), np.zeros(3)):
        try:
            effective_rank(bad)
            assert False, "expected ValueError"
        except ValueError:
            pass
    try:
        effective_rank(np.array([1.0, 2.0]), -0.5)
        assert False, "expected ValueError for negative threshold"
    except ValueError:
        pass


def test_trace_append_enforces_ordering():
    trace = FitTrace([TraceRow(0, 0.0, -10.0, 1.0, 3)])
    trace.append(TraceRow(2, 0.5, -8.0, 0.9, 3))
    for row in (TraceRow(2, 0.6, -7.0, 0.8, 3), TraceRow(3, 0.1, -7.0, 0.8, 3)):
        try:
            trace.append(row)
            assert False, "expected ValueError"
        except ValueError:
            pass
    assert len(trace) == 2
    assert trace.first.iteration == 0 and trace.last.iteration == 2


def test_trace_csv_roundtrip():
    trace = FitTrace([TraceRow(0, 0.0, -123.456789012345, 1.5, 4),
                      TraceRow(5, 0.25 / 3.0, -99.1, 1.0 / 7.0, 2)])
    with tempfile.TemporaryDirectory() as tmpdir:
        path = os.path.join(tmpdir, "trace.csv")
        trace.to_csv(path)
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
        back = FitTrace.from_csv(path)

    assert header == ",".join(TRACE_COLUMNS)
    assert back.rows == trace.rows


def test_trace_csv_rejects_wrong_header():
    with tempfile.TemporaryDirectory() as tmpdir:
        path = os.path.join(tmpdir, "trace.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,seconds\n0,0.0\n")
        try:
            FitTrace.from_csv(path)
            assert False, "expected ValueError"
        except ValueError:
            pass


def test_recorder_scores_heldout():
    model = _one_cell_model(1.0)
    recorder = TraceRecorder(_tensor((1, 1), [((0, 0), 1)]))
    row = recorder.record(0, model)
    assert abs(row.heldout_loglik + 1.0) < 1e-12
    assert row.effective_rank == 1

    quiet = TraceRecorder(None)
    assert quiet.record(0, model).heldout_loglik == 0.0
