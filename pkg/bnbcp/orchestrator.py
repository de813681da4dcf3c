import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd
import scipy

import config
from bnbcp.evaluation import FitTrace, effective_rank, heldout_loglik, heldout_mae
from bnbcp.gibbs import GibbsConfig, run_gibbs
from bnbcp.model import Hyperparams, ModelState, VariationalState, load_model_dir, save_model_dir
from bnbcp.online import LearningRateSchedule, MinibatchPlan, run_online
from bnbcp.sparse_tensor import SparseCountTensor, load_tensor, save_tensor, split_heldout
from bnbcp.vb import VBConfig, run_vb

logger = logging.getLogger(__name__)

METHODS = ('gibbs', 'vb', 'cdf', 'svi')
EXPORT_SAMPLES = ('mean', 'last')


@dataclass
class FitSettings:
    """Every knob of one fit run; written verbatim to the manifest"""
    input_path: str
    method: str
    rank: int
    outdir: str = config.DEFAULT_OUTDIR
    seed: int = 0
    workers: int = 1
    heldout_frac: float = config.DEFAULT_HELDOUT_FRAC
    sum_duplicates: bool = False
    a: Optional[float] = None
    g: Optional[float] = None
    c: Optional[float] = None
    epsilon: Optional[float] = None
    eval_every: int = 1
    rank_threshold: float = config.DEFAULT_RANK_THRESHOLD
    # gibbs
    burnin: int = config.DEFAULT_BURNIN
    samples: int = config.DEFAULT_SAMPLES
    export_sample: str = 'mean'
    # vb / online
    iters: int = config.DEFAULT_MAX_ITERS
    tolerance: float = config.VB_TOLERANCE
    vb_derivation: str = 'printed'
    minibatch: int = config.DEFAULT_MINIBATCH
    t0: float = config.DEFAULT_T0
    kappa: float = config.DEFAULT_KAPPA
    sampling: str = 'uniform'
    blend_rate_from_shape: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}', expected one of {METHODS}")
        if self.export_sample not in EXPORT_SAMPLES:
            raise ValueError(f"unknown export sample '{self.export_sample}', expected one of {EXPORT_SAMPLES}")
        if not 0.0 <= self.heldout_frac < 1.0:
            raise ValueError(f"heldout fraction must lie in [0, 1), got {self.heldout_frac}")


@dataclass
class FitResult:
    model: ModelState
    trace: FitTrace
    metrics: Dict = field(default_factory=dict)
    rank_histogram: Optional[pd.DataFrame] = None
    final_state: Optional[VariationalState] = None


def library_versions() -> Dict[str, str]:
    from bnbcp import __version__
    return {
        'bnbcp': __version__,
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__
    }


def score_model(heldout: SparseCountTensor, model: ModelState,
                rank_threshold: float = config.DEFAULT_RANK_THRESHOLD) -> Dict:
    """Heldout log-likelihood, MAE and effective rank of a point model"""
    if heldout.nnz == 0:
        logger.warning("Heldout set is empty; log-likelihood and MAE are reported as 0")
    return {
        'loglik': heldout_loglik(heldout, model),
        'mae': heldout_mae(heldout, model),
        'effective_rank': effective_rank(model.lam, rank_threshold)
    }


def evaluate_saved_model(model_dir: str, heldout_path: str,
                         rank_threshold: float = config.DEFAULT_RANK_THRESHOLD) -> Dict:
    model = load_model_dir(model_dir)
    heldout = load_tensor(heldout_path)
    return score_model(heldout, model, rank_threshold)


class FitOrchestrator:
    """Loads a tensor, holds out entries, runs one engine and writes the run directory"""

    def __init__(self, settings: FitSettings):
        self.settings = settings
        self.outdir = Path(settings.outdir)
        self.tensor: Optional[SparseCountTensor] = None
        self.train: Optional[SparseCountTensor] = None
        self.heldout: Optional[SparseCountTensor] = None
        self.hyper: Optional[Hyperparams] = None

    def load(self):
        """Read the input tensor, build hyperparameters and split off the heldout set"""
        s = self.settings
        self.tensor = load_tensor(s.input_path, sum_duplicates=s.sum_duplicates)
        self.hyper = Hyperparams.defaults(self.tensor.shape.num_modes, s.rank,
                                          a=s.a, g=s.g, c=s.c, epsilon=s.epsilon)

        if s.heldout_frac > 0:
            self.train, self.heldout = split_heldout(self.tensor, s.heldout_frac, s.seed)
        else:
            logger.warning("Heldout fraction is 0; all entries are used for training")
            self.train, self.heldout = self.tensor, SparseCountTensor.empty(self.tensor.shape)

        logger.info(f"Train/heldout split: {self.train.nnz}/{self.heldout.nnz} entries "
                    f"(hyperparameters {self.hyper.to_dict()})")

    def run(self) -> FitResult:
        """Run the configured engine on the loaded data"""
        if self.train is None:
            self.load()
        s = self.settings
        histogram = None
        final_state = None

        if s.method == 'gibbs':
            gibbs_config = GibbsConfig(burnin=s.burnin, collection=s.samples, seed=s.seed,
                                       eval_every=s.eval_every, rank_threshold=s.rank_threshold,
                                       workers=s.workers)
            summary, trace = run_gibbs(self.train, self.heldout, gibbs_config, self.hyper)
            model = summary.mean_model if s.export_sample == 'mean' else summary.last_model
            histogram = summary.histogram_frame()

        elif s.method == 'vb':
            vb_config = VBConfig(max_iters=s.iters, tolerance=s.tolerance, seed=s.seed,
                                 eval_every=s.eval_every, rank_threshold=s.rank_threshold,
                                 workers=s.workers, derivation=s.vb_derivation)
            final_state, trace = run_vb(self.train, self.heldout, vb_config, self.hyper)
            model = final_state.to_model_state()

        else:
            plan = MinibatchPlan(batch_size=s.minibatch, sampling=s.sampling, seed=s.seed)
            sched = LearningRateSchedule(t0=s.t0, kappa=s.kappa)
            state, trace = run_online(s.method, self.train, self.heldout, plan, sched, s.iters, self.hyper,
                                      eval_every=s.eval_every, rank_threshold=s.rank_threshold,
                                      workers=s.workers, derivation=s.vb_derivation,
                                      blend_rate_from_shape=s.blend_rate_from_shape)
            if isinstance(state, VariationalState):
                final_state = state
                model = state.to_model_state()
            else:
                model = state

        metrics = score_model(self.heldout, model, s.rank_threshold)
        metrics['iterations'] = trace.last.iteration
        metrics['elapsed_sec'] = trace.last.elapsed_seconds
        return FitResult(model, trace, metrics, histogram, final_state)

    def export(self, result: FitResult) -> Dict[str, Path]:
        """Write factors, lambda, p, trace, data split and manifest into the outdir"""
        self.outdir.mkdir(parents=True, exist_ok=True)
        paths = {path.stem: path for path in save_model_dir(result.model, self.outdir)}

        paths['trace'] = self.outdir / 'trace.csv'
        result.trace.to_csv(paths['trace'])

        if result.rank_histogram is not None:
            paths['rank_histogram'] = self.outdir / 'rank_histogram.csv'
            result.rank_histogram.to_csv(paths['rank_histogram'], index=False)

        paths['train'] = self.outdir / 'train.tns'
        paths['heldout'] = self.outdir / 'heldout.tns'
        save_tensor(self.train, paths['train'])
        save_tensor(self.heldout, paths['heldout'])

        paths['manifest'] = self.outdir / 'manifest.json'
        with open(paths['manifest'], 'w', encoding='utf-8') as fh:
            json.dump(self.manifest(result), fh, indent=2, sort_keys=True)

        logger.info(f"Run written to {self.outdir} ({len(paths)} files)")
        return paths

    def manifest(self, result: FitResult) -> Dict:
        return {
            'command': 'fit',
            'settings': asdict(self.settings),
            'hyperparameters': self.hyper.to_dict(),
            'data': {
                'shape': list(self.tensor.shape.dims),
                'nnz': self.tensor.nnz,
                'train_nnz': self.train.nnz,
                'heldout_nnz': self.heldout.nnz
            },
            'versions': library_versions(),
            'metrics': result.metrics
        }

    def fit(self) -> FitResult:
        """Load, run and export in one call"""
        logger.info(f"Starting {self.settings.method} fit of {self.settings.input_path} "
                    f"with R={self.settings.rank}, seed={self.settings.seed}")
        self.load()
        result = self.run()
        self.export(result)
        logger.info(f"Fit finished: loglik={result.metrics['loglik']:.4f}, "
                    f"mae={result.metrics['mae']:.4f}, effective rank={result.metrics['effective_rank']}")
        return result
