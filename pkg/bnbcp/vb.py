"""
Batch mean-field variational Bayes for BNBCP.

Coordinate ascent in the order allocations -> factors -> p -> lambda. There is
no ELBO; the loop stops when the heldout log-likelihood plateaus.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

import config
from bnbcp.allocation import DERIVATIONS, AllocationEngine
from bnbcp.evaluation import FitTrace, TraceRecorder, heldout_loglik
from bnbcp.model import Hyperparams, SufficientStats, VariationalState, init_variational
from bnbcp.sparse_tensor import SparseCountTensor

logger = logging.getLogger(__name__)


@dataclass
class VBConfig:
    max_iters: int = config.DEFAULT_MAX_ITERS
    tolerance: float = config.VB_TOLERANCE
    window: int = config.VB_WINDOW
    seed: int = 0
    eval_every: int = 1
    rank_threshold: float = config.DEFAULT_RANK_THRESHOLD
    workers: int = 1
    derivation: str = 'printed'

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be non-negative, got {self.tolerance}")
        if self.window < 1 or self.eval_every < 1:
            raise ValueError("window and eval_every must be >= 1")
        if self.derivation not in DERIVATIONS:
            raise ValueError(f"unknown derivation '{self.derivation}'")


def vb_update_allocations(train: SparseCountTensor,
                          vstate: VariationalState,
                          stats: Optional[SufficientStats],
                          hyper: Hyperparams,
                          engine: Optional[AllocationEngine] = None,
                          derivation: str = 'printed') -> SufficientStats:
    """Fresh statistics from expected latent counts y_i * zeta_i"""
    engine = engine or AllocationEngine()
    return engine.expected_stats(train.indices, train.counts, vstate, hyper, stats, derivation)


def vb_update_factors(stats: SufficientStats, hyper: Hyperparams) -> List[np.ndarray]:
    """rho^(k) = a^(k) + s^(k)"""
    return [a + s for a, s in zip(hyper.a, stats.per_mode)]


def vb_update_p(stats: SufficientStats, hyper: Hyperparams) -> Tuple[np.ndarray, np.ndarray]:
    """p_a = c*eps + s_r, p_b = c*(1 - eps) + g"""
    p_a = hyper.beta_a + stats.total
    p_b = np.full_like(p_a, hyper.beta_b + hyper.g)
    return p_a, p_b


def vb_update_lambda(stats: SufficientStats, p_means: np.ndarray,
                     hyper: Hyperparams) -> Tuple[np.ndarray, np.ndarray]:
    """lambda_a = g + s_r, lambda_b = E[p_r]"""
    return hyper.g + stats.total, np.asarray(p_means, dtype=float).copy()


def vb_iteration(train: SparseCountTensor,
                 vstate: VariationalState,
                 hyper: Hyperparams,
                 engine: Optional[AllocationEngine] = None,
                 derivation: str = 'printed') -> Tuple[VariationalState, SufficientStats]:
    """One coordinate-ascent pass over all variational parameters"""
    stats = vb_update_allocations(train, vstate, None, hyper, engine, derivation)
    rho = vb_update_factors(stats, hyper)
    p_a, p_b = vb_update_p(stats, hyper)
    lambda_a, lambda_b = vb_update_lambda(stats, p_a / (p_a + p_b), hyper)
    return VariationalState(rho, p_a, p_b, lambda_a, lambda_b), stats


class PlateauMonitor:
    """Relative change of a score against the value `window` evaluations back"""

    def __init__(self, tolerance: float, window: int):
        self.tolerance = tolerance
        self.window = window
        self.values: List[float] = []

    def update(self, value: float) -> bool:
        """Record a value; True once the plateau criterion is met"""
        self.values.append(value)
        if len(self.values) < 2:
            return False
        reference = self.values[max(0, len(self.values) - 1 - self.window)]
        change = abs(value - reference) / max(abs(reference), config.TINY)
        return change < self.tolerance


def run_vb(train: SparseCountTensor,
           heldout: Optional[SparseCountTensor],
           vb_config: VBConfig,
           hyper: Hyperparams,
           vstate: Optional[VariationalState] = None) -> Tuple[VariationalState, FitTrace]:
    if vstate is None:
        vstate = init_variational(train.shape, hyper, vb_config.seed)
    engine = AllocationEngine(vb_config.workers)
    recorder = TraceRecorder(heldout, vb_config.rank_threshold)
    monitor = PlateauMonitor(vb_config.tolerance, vb_config.window)

    score_on = heldout if heldout is not None and heldout.nnz else train
    if score_on is train:
        logger.warning("VB: heldout set is empty; plateau rule uses the training log-likelihood")

    def score(row, state: VariationalState) -> float:
        if score_on is heldout:
            return row.heldout_loglik
        return heldout_loglik(train, state.to_model_state())

    row = recorder.record(0, vstate.to_model_state())
    monitor.update(score(row, vstate))
    logger.info(f"VB: {train.nnz} nonzeros, R={hyper.rank_bound}, up to {vb_config.max_iters} iterations "
                f"(tolerance {vb_config.tolerance:g}, derivation {vb_config.derivation})")

    for iteration in range(1, vb_config.max_iters + 1):
        vstate, _ = vb_iteration(train, vstate, hyper, engine, vb_config.derivation)

        if iteration % vb_config.eval_every == 0 or iteration == vb_config.max_iters:
            row = recorder.record(iteration, vstate.to_model_state())
            if monitor.update(score(row, vstate)):
                logger.info(f"VB: log-likelihood plateaued at iteration {iteration}")
                break

    logger.info(f"VB finished after {recorder.trace.last.iteration} iterations in {recorder.elapsed():.2f}s")
    return vstate, recorder.trace
