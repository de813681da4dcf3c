"""
Streaming engines: conditional density filtering (CDF) and stochastic
variational inference (SVI).

Both draw a minibatch of stored entries per step, rescale its statistics by
N/B and blend them into the running state with weight
gamma_t = (t0 + t)^(-kappa).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

import config
from bnbcp.allocation import DERIVATIONS, AllocationEngine
from bnbcp.evaluation import FitTrace, TraceRecorder
from bnbcp.model import (
    Hyperparams,
    ModelState,
    SufficientStats,
    VariationalState,
    clip_probability,
    init_model,
    init_variational,
)
from bnbcp.sparse_tensor import SparseCountTensor

logger = logging.getLogger(__name__)

ENGINES = ('cdf', 'svi')
SAMPLING_SCHEMES = ('uniform', 'epoch')

# stream ids under the run seed
CHAIN_STREAM = 1
BATCH_STREAM = 2


@dataclass(frozen=True)
class LearningRateSchedule:
    t0: float = config.DEFAULT_T0
    kappa: float = config.DEFAULT_KAPPA

    def __post_init__(self):
        if self.t0 < 0:
            raise ValueError(f"t0 must be non-negative, got {self.t0}")
        if not 0.5 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0.5, 1], got {self.kappa}")
        if self.kappa == 0.5:
            logger.warning("kappa=0.5 sits on the boundary of the convergent range (0.5, 1]")


def learning_rate(t: int, sched: LearningRateSchedule) -> float:
    """gamma_t = (t0 + t)^(-kappa)"""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    return float((sched.t0 + t) ** (-sched.kappa))


@dataclass(frozen=True)
class MinibatchPlan:
    batch_size: int = config.DEFAULT_MINIBATCH
    sampling: str = 'uniform'
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"minibatch size must be >= 1, got {self.batch_size}")
        if self.sampling not in SAMPLING_SCHEMES:
            raise ValueError(f"unknown sampling scheme '{self.sampling}', expected one of {SAMPLING_SCHEMES}")


@dataclass
class Minibatch:
    """Rows drawn from a training tensor; the same row may appear more than once"""
    indices: np.ndarray
    counts: np.ndarray
    total_nnz: int

    @classmethod
    def full(cls, tensor: SparseCountTensor) -> 'Minibatch':
        return cls(tensor.indices, tensor.counts, tensor.nnz)

    @property
    def size(self) -> int:
        return int(self.counts.shape[0])

    @property
    def scale(self) -> float:
        """N / B"""
        return self.total_nnz / self.size


class MinibatchSampler:
    """Draws minibatches from a training tensor according to a MinibatchPlan"""

    def __init__(self, train: SparseCountTensor, plan: MinibatchPlan):
        if train.nnz == 0:
            raise ValueError("cannot draw minibatches from a tensor with no stored entries")
        self.train = train
        self.plan = plan
        self.rng = np.random.default_rng([plan.seed, BATCH_STREAM])
        self._order = np.empty(0, dtype=np.int64)
        self._cursor = 0
        self.epochs = 0

    def _epoch_rows(self, n: int) -> np.ndarray:
        parts = []
        while n > 0:
            if self._cursor >= self._order.shape[0]:
                self._order = self.rng.permutation(self.train.nnz)
                self._cursor = 0
                self.epochs += 1
            take = min(n, self._order.shape[0] - self._cursor)
            parts.append(self._order[self._cursor:self._cursor + take])
            self._cursor += take
            n -= take
        return np.concatenate(parts)

    def draw(self) -> Minibatch:
        B = self.plan.batch_size
        if self.plan.sampling == 'uniform':
            rows = self.rng.integers(0, self.train.nnz, size=B)
        else:
            rows = self._epoch_rows(B)
        return Minibatch(self.train.indices[rows], self.train.counts[rows], self.train.nnz)


def _step_weight(t: int, sched: LearningRateSchedule, step_size: Optional[float]) -> float:
    if step_size is None:
        return learning_rate(t, sched)
    if not 0.0 <= step_size <= 1.0:
        raise ValueError(f"step size must lie in [0, 1], got {step_size}")
    return float(step_size)


def analytic_means(css: SufficientStats, hyper: Hyperparams) -> ModelState:
    """Means of the full conditionals given the running statistics"""
    factors = []
    for a, s in zip(hyper.a, css.per_mode):
        conc = a + s
        factors.append(conc / conc.sum(axis=0, keepdims=True))
    p_a = hyper.beta_a + css.total
    p = clip_probability(p_a / (p_a + hyper.beta_b + hyper.g))
    lam = np.maximum((hyper.g + css.total) * p, config.TINY)
    return ModelState(factors, lam, p)


def cdf_step(batch: Minibatch,
             model: ModelState,
             css: SufficientStats,
             t: int,
             sched: LearningRateSchedule,
             hyper: Hyperparams,
             rng: np.random.Generator,
             engine: Optional[AllocationEngine] = None,
             step_size: Optional[float] = None) -> Tuple[ModelState, SufficientStats]:
    """
    One CDF update.

    Latent counts are sampled for the minibatch under the current model, the
    running statistics become (1 - gamma_t) * css + gamma_t * (N/B) * batch
    stats, and the parameters are set to their conditional means.
    """
    gamma = _step_weight(t, sched, step_size)
    engine = engine or AllocationEngine()

    batch_stats = engine.sampled_stats(batch.indices, batch.counts, model, rng)
    css = css.blend(gamma, batch_stats.scaled(batch.scale))
    return analytic_means(css, hyper), css


def svi_step(batch: Minibatch,
             vstate: VariationalState,
             t: int,
             sched: LearningRateSchedule,
             hyper: Hyperparams,
             engine: Optional[AllocationEngine] = None,
             step_size: Optional[float] = None,
             blend_rate_from_shape: bool = False,
             derivation: str = 'printed') -> VariationalState:
    """
    One SVI update: expected latent counts on the minibatch, then every
    variational parameter moves toward its rescaled batch target.

    lambda_b blends from its own previous value unless ``blend_rate_from_shape`` is set,
    in which case it blends from the previous lambda_a.
    """
    gamma = _step_weight(t, sched, step_size)
    engine = engine or AllocationEngine()

    batch_stats = engine.expected_stats(batch.indices, batch.counts, vstate, hyper,
                                        derivation=derivation).scaled(batch.scale)

    def step(old, target):
        return (1.0 - gamma) * old + gamma * target

    rho = [step(r, a + s) for r, a, s in zip(vstate.rho, hyper.a, batch_stats.per_mode)]
    p_a = step(vstate.p_a, hyper.beta_a + batch_stats.total)
    p_b = step(vstate.p_b, hyper.beta_b + hyper.g)
    lambda_a = step(vstate.lambda_a, hyper.g + batch_stats.total)
    p_mean = p_a / (p_a + p_b)
    lambda_b = step(vstate.lambda_a if blend_rate_from_shape else vstate.lambda_b, p_mean)

    return VariationalState(rho, p_a, p_b, lambda_a, lambda_b)


OnlineState = Union[ModelState, VariationalState]


def run_online(engine: str,
               train: SparseCountTensor,
               heldout: Optional[SparseCountTensor],
               plan: MinibatchPlan,
               sched: LearningRateSchedule,
               iters: int,
               hyper: Hyperparams,
               eval_every: int = 1,
               rank_threshold: float = config.DEFAULT_RANK_THRESHOLD,
               workers: int = 1,
               derivation: str = 'printed',
               blend_rate_from_shape: bool = False,
               state: Optional[OnlineState] = None) -> Tuple[OnlineState, FitTrace]:
    """
    Run `iters` CDF or SVI steps.

    Returns the final ModelState (cdf) or VariationalState (svi) and the
    trace. Initialization and minibatch draws are seeded from plan.seed.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown online engine '{engine}', expected one of {ENGINES}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if eval_every < 1:
        raise ValueError(f"eval_every must be >= 1, got {eval_every}")
    if derivation not in DERIVATIONS:
        raise ValueError(f"unknown derivation '{derivation}'")

    sampler = MinibatchSampler(train, plan)
    allocator = AllocationEngine(workers)
    recorder = TraceRecorder(heldout, rank_threshold)

    if engine == 'cdf':
        if state is None:
            state = init_model(train.shape, hyper, plan.seed)
        css = SufficientStats.zeros(train.shape.dims, hyper.rank_bound)
        rng = np.random.default_rng([plan.seed, CHAIN_STREAM])
    else:
        if state is None:
            state = init_variational(train.shape, hyper, plan.seed)

    def snapshot(s: OnlineState) -> ModelState:
        return s.to_model_state() if isinstance(s, VariationalState) else s

    recorder.record(0, snapshot(state))
    logger.info(f"{engine.upper()}: {train.nnz} nonzeros, R={hyper.rank_bound}, {iters} steps of "
                f"B={plan.batch_size} ({plan.sampling}), t0={sched.t0:g}, kappa={sched.kappa:g}")

    for t in range(1, iters + 1):
        batch = sampler.draw()
        if engine == 'cdf':
            state, css = cdf_step(batch, state, css, t, sched, hyper, rng, allocator)
        else:
            state = svi_step(batch, state, t, sched, hyper, allocator,
                             blend_rate_from_shape=blend_rate_from_shape, derivation=derivation)

        if t % eval_every == 0 or t == iters:
            recorder.record(t, snapshot(state))

    if plan.sampling == 'epoch':
        logger.info(f"{engine.upper()}: walked {sampler.epochs} epochs")
    logger.info(f"{engine.upper()} finished {iters} steps in {recorder.elapsed():.2f}s")
    return state, recorder.trace
