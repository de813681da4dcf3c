"""
BNBCP model parameters, hyperparameters and sufficient statistics.

Generative model for a K-way count tensor with rank bound R::

    y_i         ~ Pois(sum_r lambda_r * prod_k U^(k)[i_k, r])
    u_r^(k)     ~ Dir(a^(k), ..., a^(k))
    lambda_r    ~ Gamma(shape=g, scale=p_r / (1 - p_r))
    p_r         ~ Beta(c * eps, c * (1 - eps))

Gamma distributions are parameterized by shape and SCALE everywhere in this
package: Gamma(g, theta) has mean g * theta.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

import config
from bnbcp.errors import ModelFormatError, NumericError
from bnbcp.sparse_tensor import TensorShape

logger = logging.getLogger(__name__)

P_UPPER = np.nextafter(1.0, 0.0)


@dataclass
class Hyperparams:
    """Prior hyperparameters; a holds one Dirichlet concentration per mode"""
    rank_bound: int
    a: Sequence[float]
    g: float = config.DEFAULT_G
    c: float = config.DEFAULT_C
    epsilon: Optional[float] = None

    def __post_init__(self):
        self.rank_bound = int(self.rank_bound)
        self.a = tuple(float(v) for v in self.a)
        self.g = float(self.g)
        self.c = float(self.c)
        if self.epsilon is None:
            # 1/R is not an open-interval value at R=1
            self.epsilon = 1.0 / self.rank_bound if self.rank_bound > 1 else 0.5
        self.epsilon = float(self.epsilon)
        self.validate()

    @classmethod
    def defaults(cls,
                 num_modes: int,
                 rank_bound: int,
                 a: Optional[float] = None,
                 g: Optional[float] = None,
                 c: Optional[float] = None,
                 epsilon: Optional[float] = None) -> 'Hyperparams':
        """Build hyperparameters with a shared Dirichlet concentration"""
        a = config.DEFAULT_A if a is None else a
        return cls(rank_bound=rank_bound,
                   a=[a] * num_modes,
                   g=config.DEFAULT_G if g is None else g,
                   c=config.DEFAULT_C if c is None else c,
                   epsilon=epsilon)

    def validate(self):
        if self.rank_bound < 1:
            raise ValueError(f"rank bound R must be >= 1, got {self.rank_bound}")
        if not self.a or any(not v > 0 for v in self.a):
            raise ValueError(f"Dirichlet concentrations must be positive, got {self.a}")
        if not self.g > 0 or not self.c > 0:
            raise ValueError(f"g and c must be positive, got g={self.g}, c={self.c}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    def check_shape(self, shape: TensorShape):
        if len(self.a) != shape.num_modes:
            raise ValueError(f"{len(self.a)} Dirichlet concentrations for a {shape.num_modes}-mode tensor")

    @property
    def beta_a(self) -> float:
        return self.c * self.epsilon

    @property
    def beta_b(self) -> float:
        return self.c * (1.0 - self.epsilon)

    def to_dict(self) -> Dict:
        return {
            'rank_bound': self.rank_bound,
            'a': list(self.a),
            'g': self.g,
            'c': self.c,
            'epsilon': self.epsilon
        }


@dataclass
class ModelState:
    """Point values of the CP parameters: K column-stochastic factors, lambda, p"""
    factors: List[np.ndarray]
    lam: np.ndarray
    p: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.lam.shape[0])

    @property
    def dims(self) -> tuple:
        return tuple(int(f.shape[0]) for f in self.factors)

    @property
    def num_modes(self) -> int:
        return len(self.factors)

    def copy(self) -> 'ModelState':
        return ModelState([f.copy() for f in self.factors], self.lam.copy(), self.p.copy())

    def validate(self, tol: float = 1e-9):
        """Raise if any ModelState invariant is broken"""
        for k, factor in enumerate(self.factors):
            if factor.shape[1] != self.rank:
                raise ValueError(f"factor {k} has {factor.shape[1]} columns, expected {self.rank}")
            if not np.all(np.isfinite(factor)):
                raise NumericError(f"factor {k} has non-finite entries")
            if np.any(factor < 0):
                raise ValueError(f"factor {k} has negative entries")
            drift = np.max(np.abs(factor.sum(axis=0) - 1.0))
            if drift > tol:
                raise ValueError(f"factor {k} columns leave the simplex (max drift {drift:.3g})")
        if not np.all(self.lam > 0):
            raise ValueError("lambda must be strictly positive")
        if not np.all((self.p > 0) & (self.p < 1)):
            raise ValueError("p must lie in (0, 1)")


@dataclass
class SufficientStats:
    """Latent-count aggregates s_{j,r}^(k) (per_mode) and s_r (total)"""
    per_mode: List[np.ndarray]
    total: np.ndarray

    @classmethod
    def zeros(cls, dims: Sequence[int], rank: int) -> 'SufficientStats':
        return cls([np.zeros((n, rank)) for n in dims], np.zeros(rank))

    @property
    def rank(self) -> int:
        return int(self.total.shape[0])

    def max_inconsistency(self) -> float:
        """Largest |sum_j s_{j,r}^(k) - s_r| over modes and components"""
        if not self.per_mode:
            return 0.0
        return float(max(np.max(np.abs(s.sum(axis=0) - self.total)) for s in self.per_mode))

    def check_consistency(self, tol: float = 1e-6):
        gap = self.max_inconsistency()
        if gap > tol:
            raise ValueError(f"sufficient statistics are not mode-consistent (gap {gap:.3g})")

    def copy(self) -> 'SufficientStats':
        return SufficientStats([s.copy() for s in self.per_mode], self.total.copy())

    def scaled(self, factor: float) -> 'SufficientStats':
        return SufficientStats([s * factor for s in self.per_mode], self.total * factor)

    def merge(self, other: 'SufficientStats') -> 'SufficientStats':
        """Sum of two partial statistics over disjoint entry sets"""
        return SufficientStats([a + b for a, b in zip(self.per_mode, other.per_mode)],
                               self.total + other.total)

    def blend(self, step: float, other: 'SufficientStats') -> 'SufficientStats':
        """Convex combination (1 - step) * self + step * other"""
        return SufficientStats(
            [(1.0 - step) * a + step * b for a, b in zip(self.per_mode, other.per_mode)],
            (1.0 - step) * self.total + step * other.total)


@dataclass
class VariationalState:
    """Mean-field parameters: Dirichlet rho per mode, beta (p_a, p_b), gamma (lambda_a, lambda_b)"""
    rho: List[np.ndarray]
    p_a: np.ndarray
    p_b: np.ndarray
    lambda_a: np.ndarray
    lambda_b: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.p_a.shape[0])

    def copy(self) -> 'VariationalState':
        return VariationalState([r.copy() for r in self.rho], self.p_a.copy(), self.p_b.copy(),
                                self.lambda_a.copy(), self.lambda_b.copy())

    def factor_means(self) -> List[np.ndarray]:
        return [r / r.sum(axis=0, keepdims=True) for r in self.rho]

    def p_mean(self) -> np.ndarray:
        return self.p_a / (self.p_a + self.p_b)

    def lambda_mean(self) -> np.ndarray:
        return self.lambda_a * self.lambda_b

    def to_model_state(self) -> ModelState:
        """Posterior-mean point estimate used for scoring and export"""
        return ModelState(self.factor_means(), self.lambda_mean(), self.p_mean())

    def validate(self):
        arrays = list(self.rho) + [self.p_a, self.p_b, self.lambda_a, self.lambda_b]
        for arr in arrays:
            if not np.all(np.isfinite(arr)):
                raise NumericError("variational parameters contain non-finite values")
            if not np.all(arr > 0):
                raise ValueError("variational parameters must be strictly positive")


def dirichlet_columns(rng: np.random.Generator, concentration: np.ndarray) -> np.ndarray:
    """
    Draw every column of an (n, R) matrix from Dir(concentration[:, r]).

    Uses normalized gamma draws; zeros from tiny shapes are clamped to
    config.TINY so every column stays on the open simplex.
    """
    draws = rng.standard_gamma(concentration)
    np.maximum(draws, config.TINY, out=draws)
    return draws / draws.sum(axis=0, keepdims=True)


def clip_probability(p: np.ndarray) -> np.ndarray:
    return np.clip(p, config.TINY, P_UPPER)


def init_model(shape: TensorShape, hyper: Hyperparams, seed: int) -> ModelState:
    """Draw a ModelState from the prior"""
    hyper.check_shape(shape)
    rng = np.random.default_rng(seed)
    R = hyper.rank_bound

    factors = [dirichlet_columns(rng, np.full((n, R), a)) for n, a in zip(shape.dims, hyper.a)]
    p = clip_probability(rng.beta(hyper.beta_a, hyper.beta_b, size=R))
    lam = np.maximum(rng.gamma(hyper.g, p / (1.0 - p)), config.TINY)

    return ModelState(factors, lam, p)


def init_variational(shape: TensorShape, hyper: Hyperparams, seed: int) -> VariationalState:
    """Prior parameters jittered by uniform multiplicative noise in [0.9, 1.1]"""
    hyper.check_shape(shape)
    rng = np.random.default_rng(seed)
    R = hyper.rank_bound

    def jitter(value, size):
        return value * rng.uniform(0.9, 1.1, size=size)

    rho = [jitter(a, (n, R)) for n, a in zip(shape.dims, hyper.a)]
    p_a = jitter(hyper.beta_a, R)
    p_b = jitter(hyper.beta_b, R)
    lambda_a = jitter(hyper.g, R)
    lambda_b = jitter(hyper.epsilon / (1.0 - hyper.epsilon), R)

    return VariationalState(rho, p_a, p_b, lambda_a, lambda_b)


# Model directory layout: mode_<k>.csv per mode, lambda.csv, p.csv

FLOAT_FORMAT = '%.17g'


def read_float_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision='round_trip')


def factor_frame(factor: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame(factor, columns=[f"factor_{r}" for r in range(factor.shape[1])])


def save_model_dir(model: ModelState, outdir: Union[str, Path]) -> List[Path]:
    """Write factor, lambda and p CSVs; returns the written paths"""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    for k, factor in enumerate(model.factors):
        path = outdir / f"mode_{k}.csv"
        factor_frame(factor).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)

    for name, values in (('lambda', model.lam), ('p', model.p)):
        path = outdir / f"{name}.csv"
        pd.DataFrame({'factor': np.arange(model.rank), name: values}).to_csv(
            path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)

    logger.info(f"Saved model with R={model.rank}, K={model.num_modes} to {outdir}")
    return written


def load_model_dir(outdir: Union[str, Path]) -> ModelState:
    """Rebuild a ModelState written by save_model_dir"""
    outdir = Path(outdir)
    mode_files = sorted(outdir.glob('mode_*.csv'), key=lambda p: int(p.stem.split('_')[1]))
    if len(mode_files) < 2:
        raise ModelFormatError(f"{outdir}: expected at least two mode_<k>.csv files")
    expected = [outdir / f"mode_{k}.csv" for k in range(len(mode_files))]
    if mode_files != expected:
        raise ModelFormatError(f"{outdir}: mode files are not numbered 0..{len(mode_files) - 1}")

    try:
        factors = [read_float_csv(path).to_numpy(dtype=float) for path in mode_files]
        lam = read_float_csv(outdir / 'lambda.csv')['lambda'].to_numpy(dtype=float)
        p = read_float_csv(outdir / 'p.csv')['p'].to_numpy(dtype=float)
    except (FileNotFoundError, KeyError) as e:
        raise ModelFormatError(f"{outdir}: incomplete model directory ({e})")

    ranks = {f.shape[1] for f in factors} | {lam.shape[0], p.shape[0]}
    if len(ranks) != 1:
        raise ModelFormatError(f"{outdir}: inconsistent ranks across files {sorted(ranks)}")

    return ModelState(factors, lam, p)
