"""
Poisson -> multinomial augmentation.

Every stored count y_i is split into R latent counts with probabilities
zeta_ir proportional to lambda_r * prod_k U^(k)[i_k, r] (point parameters) or
to the digamma-based weights of the VB update. Only stored entries are ever
touched, so one pass costs O(nnz * R * K).

The single-entry functions define the semantics; the batched ``*_matrix``
functions and AllocationEngine are what the engines run.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import digamma

from bnbcp.errors import NumericError
from bnbcp.model import Hyperparams, ModelState, SufficientStats, VariationalState
from bnbcp.sparse_tensor import Entry

logger = logging.getLogger(__name__)

# zeta for one entry (R non-negative reals summing to 1)
AllocationProbs = np.ndarray
# y-tilde for one entry (R values summing to y)
LatentCounts = np.ndarray

DERIVATIONS = ('printed', 'mean_field')


def normalize_log_rates(log_rates: np.ndarray) -> np.ndarray:
    """
    Row-wise softmax with max subtraction.

    Rows whose rates are all zero (log = -inf) fall back to uniform.
    """
    if np.any(np.isnan(log_rates)) or np.any(log_rates == np.inf):
        raise NumericError("allocation rates are not finite")

    peak = log_rates.max(axis=1, keepdims=True)
    dead = np.isneginf(peak[:, 0])
    peak[dead] = 0.0
    weights = np.exp(log_rates - peak)
    weights[dead] = 1.0
    return weights / weights.sum(axis=1, keepdims=True)


# --- point-parameter allocation (Gibbs, CDF) ---

def log_point_params(model: ModelState) -> Tuple[List[np.ndarray], np.ndarray]:
    """Log factors and log lambda, computed once per sweep"""
    for k, factor in enumerate(model.factors):
        if not np.all(np.isfinite(factor)):
            raise NumericError(f"factor matrix {k} has non-finite entries")
    if not np.all(np.isfinite(model.lam)):
        raise NumericError("lambda has non-finite entries")

    with np.errstate(divide='ignore', invalid='ignore'):
        return [np.log(f) for f in model.factors], np.log(model.lam)


def point_allocation_matrix(indices: np.ndarray,
                            model: ModelState,
                            log_params: Optional[Tuple[List[np.ndarray], np.ndarray]] = None) -> np.ndarray:
    """zeta for a batch of index tuples, shape (B, R)"""
    log_factors, log_lam = log_params if log_params is not None else log_point_params(model)
    log_rates = np.broadcast_to(log_lam, (indices.shape[0], log_lam.shape[0])).copy()
    for k, log_factor in enumerate(log_factors):
        log_rates += log_factor[indices[:, k]]
    return normalize_log_rates(log_rates)


def allocation_probs_point(entry: Entry, model: ModelState) -> AllocationProbs:
    """zeta_ir proportional to lambda_r * prod_k U^(k)[i_k, r]"""
    indices = np.asarray([entry.index], dtype=np.int64)
    return point_allocation_matrix(indices, model)[0]


# --- variational allocation (VB, SVI) ---

class VBAllocationTerms:
    """
    Per-component pieces of the variational allocation weights.

    printed:    Psi(s_r + g) + ln E[p_r] + sum_k Psi(rho_{i_k r}) - Psi(sum_k rho_{i_k r})
    mean_field: Psi(s_r + g) + E[ln p_r] + sum_k (Psi(rho_{i_k r}) - Psi(sum_j rho_{j r}))

    rho = a^(k) + s^(k) and s_r + g are read from the variational state
    (lambda_a), or from ``stats`` when given.
    """

    def __init__(self,
                 vstate: VariationalState,
                 hyper: Hyperparams,
                 stats: Optional[SufficientStats] = None,
                 derivation: str = 'printed'):
        if derivation not in DERIVATIONS:
            raise ValueError(f"unknown VB derivation '{derivation}', expected one of {DERIVATIONS}")

        if stats is not None:
            rho = [a + s for a, s in zip(hyper.a, stats.per_mode)]
            shape_term = hyper.g + stats.total
        else:
            rho = vstate.rho
            shape_term = vstate.lambda_a

        for arr in list(rho) + [shape_term, vstate.p_a, vstate.p_b]:
            if not np.all(arr > 0):
                raise NumericError("digamma argument must be positive")

        self.derivation = derivation
        self.rho = rho

        if derivation == 'printed':
            p_term = np.log(vstate.p_a / (vstate.p_a + vstate.p_b))
            self.digamma_rho = [digamma(r) for r in rho]
        else:
            p_term = digamma(vstate.p_a) - digamma(vstate.p_a + vstate.p_b)
            self.digamma_rho = [digamma(r) - digamma(r.sum(axis=0, keepdims=True)) for r in rho]

        self.base = digamma(shape_term) + p_term

    def log_weights(self, indices: np.ndarray) -> np.ndarray:
        log_rates = np.broadcast_to(self.base, (indices.shape[0], self.base.shape[0])).copy()
        for k, dg in enumerate(self.digamma_rho):
            log_rates += dg[indices[:, k]]

        if self.derivation == 'printed':
            row_sum = np.zeros_like(log_rates)
            for k, r in enumerate(self.rho):
                row_sum += r[indices[:, k]]
            log_rates -= digamma(row_sum)

        return log_rates

    def probs(self, indices: np.ndarray) -> np.ndarray:
        return normalize_log_rates(self.log_weights(indices))


def vb_allocation_matrix(indices: np.ndarray,
                         vstate: VariationalState,
                         hyper: Hyperparams,
                         stats: Optional[SufficientStats] = None,
                         derivation: str = 'printed') -> np.ndarray:
    return VBAllocationTerms(vstate, hyper, stats, derivation).probs(indices)


def allocation_probs_vb(entry: Entry,
                        vstate: VariationalState,
                        stats: Optional[SufficientStats],
                        hyper: Hyperparams,
                        derivation: str = 'printed') -> AllocationProbs:
    """Normalized variational allocation weights for one entry"""
    indices = np.asarray([entry.index], dtype=np.int64)
    return vb_allocation_matrix(indices, vstate, hyper, stats, derivation)[0]


# --- latent counts ---

def sample_latent_counts(y: int, probs: AllocationProbs, rng: np.random.Generator) -> LatentCounts:
    """
    Multinomial(y, probs) draw.

    numpy draws multinomials by sequential conditional binomials, so the
    result sums to y exactly; y == 0 consumes no randomness.
    """
    if y < 0:
        raise ValueError(f"count must be non-negative, got {y}")
    probs = np.asarray(probs, dtype=float)
    if y == 0:
        return np.zeros(probs.shape[0], dtype=np.int64)
    return rng.multinomial(int(y), probs).astype(np.int64)


def expected_latent_counts(y: int, probs: AllocationProbs) -> LatentCounts:
    return float(y) * np.asarray(probs, dtype=float)


def accumulate_arrays(indices: np.ndarray, latent: np.ndarray, dims: Sequence[int]) -> SufficientStats:
    """Sufficient statistics of a (B, R) latent-count matrix"""
    latent = np.asarray(latent, dtype=float)
    per_mode = []
    for k, n in enumerate(dims):
        s = np.zeros((n, latent.shape[1]))
        np.add.at(s, indices[:, k], latent)
        per_mode.append(s)
    return SufficientStats(per_mode, latent.sum(axis=0))


def accumulate_stats(pairs: Iterable[Tuple[Entry, LatentCounts]],
                     dims: Sequence[int],
                     rank: int) -> SufficientStats:
    """s_{j,r}^(k) and s_r from (entry, latent counts) pairs"""
    pairs = list(pairs)
    if not pairs:
        return SufficientStats.zeros(dims, rank)
    indices = np.asarray([entry.index for entry, _ in pairs], dtype=np.int64)
    latent = np.asarray([y_tilde for _, y_tilde in pairs], dtype=float).reshape(len(pairs), rank)
    return accumulate_arrays(indices, latent, dims)


class AllocationEngine:
    """
    Runs the allocation + accumulation pass over a set of entries.

    With workers > 1 the entries are split into contiguous chunks, each chunk
    gets its own child generator and partial statistics are summed. One worker
    uses the caller's generator directly and is bit-reproducible.
    """

    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self.workers = workers

    def _chunks(self, n: int) -> List[slice]:
        if self.workers == 1 or n < 2 * self.workers:
            return [slice(0, n)]
        bounds = np.linspace(0, n, self.workers + 1).astype(int)
        return [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]

    def _run(self, chunks: List[slice], job) -> SufficientStats:
        if len(chunks) == 1:
            return job(0, chunks[0])
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            parts = list(pool.map(job, range(len(chunks)), chunks))
        total = parts[0]
        for part in parts[1:]:
            total = total.merge(part)
        return total

    def sampled_stats(self,
                      indices: np.ndarray,
                      counts: np.ndarray,
                      model: ModelState,
                      rng: np.random.Generator) -> SufficientStats:
        """Sample latent counts from point parameters and accumulate"""
        dims = model.dims
        if indices.shape[0] == 0:
            return SufficientStats.zeros(dims, model.rank)

        log_params = log_point_params(model)
        chunks = self._chunks(indices.shape[0])
        rngs = [rng] if len(chunks) == 1 else rng.spawn(len(chunks))

        def job(i: int, sl: slice) -> SufficientStats:
            probs = point_allocation_matrix(indices[sl], model, log_params)
            latent = rngs[i].multinomial(counts[sl], probs)
            return accumulate_arrays(indices[sl], latent, dims)

        return self._run(chunks, job)

    def expected_stats(self,
                       indices: np.ndarray,
                       counts: np.ndarray,
                       vstate: VariationalState,
                       hyper: Hyperparams,
                       stats: Optional[SufficientStats] = None,
                       derivation: str = 'printed') -> SufficientStats:
        """Expected latent counts y_i * zeta_i under the variational allocation"""
        dims = [r.shape[0] for r in vstate.rho]
        if indices.shape[0] == 0:
            return SufficientStats.zeros(dims, vstate.rank)

        terms = VBAllocationTerms(vstate, hyper, stats, derivation)
        chunks = self._chunks(indices.shape[0])

        def job(i: int, sl: slice) -> SufficientStats:
            latent = counts[sl, None] * terms.probs(indices[sl])
            return accumulate_arrays(indices[sl], latent, dims)

        return self._run(chunks, job)
