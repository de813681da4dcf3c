import logging
import time
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

import config
from bnbcp.errors import TensorValidationError
from bnbcp.model import ModelState, read_float_csv
from bnbcp.sparse_tensor import SparseCountTensor

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ['iter', 'elapsed_sec', 'heldout_loglik', 'heldout_mae', 'effective_rank']


def check_compatible(tensor: SparseCountTensor, model: ModelState):
    """Raise if the model's factor sizes do not match the tensor's dims"""
    if tuple(tensor.shape.dims) != tuple(model.dims):
        raise TensorValidationError(
            f"model dims {model.dims} do not match tensor dims {tensor.shape.dims}")


def reconstruct_rates(indices: np.ndarray, model: ModelState) -> np.ndarray:
    """Poisson rates sum_r lambda_r prod_k U^(k)[i_k, r] for a batch of indices"""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, model.num_modes)
    prod = np.broadcast_to(model.lam, (indices.shape[0], model.rank)).copy()
    for k, factor in enumerate(model.factors):
        prod *= factor[indices[:, k]]
    return prod.sum(axis=1)


def reconstruct_rate(index: Sequence[int], model: ModelState) -> float:
    return float(reconstruct_rates(np.asarray([index]), model)[0])


def heldout_loglik(heldout: SparseCountTensor, model: ModelState) -> float:
    """Sum of Poisson log-pmfs of the heldout counts under plug-in rates"""
    check_compatible(heldout, model)
    if heldout.nnz == 0:
        return 0.0
    rates = np.maximum(reconstruct_rates(heldout.indices, model), config.RATE_FLOOR)
    return float(np.sum(stats.poisson.logpmf(heldout.counts, rates)))


def heldout_mae(heldout: SparseCountTensor, model: ModelState) -> float:
    """Mean |y_i - rate_i| over the heldout entries"""
    check_compatible(heldout, model)
    if heldout.nnz == 0:
        return 0.0
    rates = reconstruct_rates(heldout.indices, model)
    return float(np.mean(np.abs(heldout.counts - rates)))


def effective_rank(lam: np.ndarray, rel_threshold: float = config.DEFAULT_RANK_THRESHOLD) -> int:
    """Number of components with lambda_r > rel_threshold * max(lambda)"""
    lam = np.asarray(lam, dtype=float)
    if lam.size == 0 or not np.max(lam) > 0:
        raise ValueError("effective rank needs at least one positive lambda")
    if rel_threshold < 0:
        raise ValueError(f"rank threshold must be non-negative, got {rel_threshold}")
    return int(np.sum(lam > rel_threshold * np.max(lam)))


@dataclass
class TraceRow:
    iteration: int
    elapsed_seconds: float
    heldout_loglik: float
    heldout_mae: float
    effective_rank: int


class FitTrace:
    """Per-evaluation record of a fit, serialized as CSV with TRACE_COLUMNS"""

    def __init__(self, rows: Optional[List[TraceRow]] = None):
        self.rows: List[TraceRow] = []
        for row in rows or []:
            self.append(row)

    def append(self, row: TraceRow):
        if self.rows:
            last = self.rows[-1]
            if row.iteration <= last.iteration:
                raise ValueError(f"trace iterations must increase ({last.iteration} -> {row.iteration})")
            if row.elapsed_seconds < last.elapsed_seconds:
                raise ValueError("trace elapsed time must be non-decreasing")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def last(self) -> Optional[TraceRow]:
        return self.rows[-1] if self.rows else None

    @property
    def first(self) -> Optional[TraceRow]:
        return self.rows[0] if self.rows else None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([astuple(row) for row in self.rows], columns=TRACE_COLUMNS)

    def to_csv(self, path: Union[str, Path]):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> 'FitTrace':
        df = read_float_csv(path)
        if list(df.columns) != TRACE_COLUMNS:
            raise ValueError(f"{path}: trace header {list(df.columns)} != {TRACE_COLUMNS}")
        return cls([TraceRow(int(r.iter), float(r.elapsed_sec), float(r.heldout_loglik),
                             float(r.heldout_mae), int(r.effective_rank))
                    for r in df.itertuples(index=False)])


class TraceRecorder:
    """Wall-clock timer plus heldout scoring for one engine run"""

    def __init__(self,
                 heldout: Optional[SparseCountTensor],
                 rank_threshold: float = config.DEFAULT_RANK_THRESHOLD):
        self.heldout = heldout
        self.rank_threshold = rank_threshold
        self.trace = FitTrace()
        self.start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def record(self, iteration: int, model: ModelState) -> TraceRow:
        if self.heldout is not None and self.heldout.nnz:
            loglik = heldout_loglik(self.heldout, model)
            mae = heldout_mae(self.heldout, model)
        else:
            loglik, mae = 0.0, 0.0

        row = TraceRow(iteration, self.elapsed(), loglik, mae,
                       effective_rank(model.lam, self.rank_threshold))
        self.trace.append(row)
        logger.debug(f"iter {iteration}: loglik={loglik:.4f} mae={mae:.4f} "
                     f"rank={row.effective_rank} ({row.elapsed_seconds:.2f}s)")
        return row
