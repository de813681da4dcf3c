"""
Ground-truth count tensors drawn from the BNBCP generative model.

The first `significant` components get lambda = lambda_scale and the rest
lambda_scale * 1e-6, so the planted effective rank is known exactly.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

import config
from bnbcp.errors import SizeLimitError
from bnbcp.evaluation import reconstruct_rates
from bnbcp.model import (
    FLOAT_FORMAT,
    Hyperparams,
    ModelState,
    clip_probability,
    dirichlet_columns,
    save_model_dir,
)
from bnbcp.sparse_tensor import SparseCountTensor, TensorShape, save_tensor

logger = logging.getLogger(__name__)


def planted_lambda(rank_bound: int, significant: int, lambda_scale: float) -> np.ndarray:
    lam = np.full(rank_bound, lambda_scale * config.SYNTH_SUPPRESSION)
    lam[:significant] = lambda_scale
    return lam


def block_rates(truth: ModelState, dims: Tuple[int, ...], lo: int, hi: int) -> Tuple[np.ndarray, np.ndarray]:
    """Index tuples and Poisson rates of the flat cells lo..hi-1, C order"""
    indices = np.column_stack(np.unravel_index(np.arange(lo, hi), dims))
    return indices, reconstruct_rates(indices, truth)


def generate(shape: TensorShape,
             rank_bound: int,
             significant: int,
             lambda_scale: float,
             hyper: Hyperparams,
             seed: int,
             blockwise: bool = False,
             block_cells: Optional[int] = None) -> Tuple[SparseCountTensor, ModelState]:
    """
    Draw factors from the Dirichlet prior, plant lambda, and draw every cell
    from its Poisson rate. Returns the nonzero cells and the generating model.

    Cells are enumerated in C order in blocks of at most `block_cells // R`
    cells, so a block holds at most `block_cells` per-component rate terms.
    The Poisson stream is consumed in the same order, so the block size does
    not change the result.
    """
    if not 0 <= significant <= rank_bound:
        raise ValueError(f"significant components must lie in [0, {rank_bound}], got {significant}")
    if lambda_scale < 0:
        raise ValueError(f"lambda scale must be non-negative, got {lambda_scale}")
    if hyper.rank_bound != rank_bound:
        raise ValueError(f"hyperparameters are for R={hyper.rank_bound}, not R={rank_bound}")
    hyper.check_shape(shape)

    if shape.volume > config.SYNTH_MAX_DENSE_CELLS and not blockwise:
        raise SizeLimitError(
            f"shape {shape} has {shape.volume} cells, above the cap of {config.SYNTH_MAX_DENSE_CELLS}; "
            f"use blockwise generation")

    rng = np.random.default_rng(seed)
    factors = [dirichlet_columns(rng, np.full((n, rank_bound), a)) for n, a in zip(shape.dims, hyper.a)]
    lam = planted_lambda(rank_bound, significant, lambda_scale)
    # makes the prior mean g * p / (1 - p) equal the planted lambda
    p = clip_probability(lam / (hyper.g + lam))
    truth = ModelState(factors, lam, p)

    block_cells = block_cells or config.SYNTH_BLOCK_CELLS
    cells_per_block = max(1, block_cells // rank_bound)
    index_parts, count_parts = [], []

    for lo in range(0, shape.volume, cells_per_block):
        hi = min(lo + cells_per_block, shape.volume)
        indices, rates = block_rates(truth, shape.dims, lo, hi)
        draws = rng.poisson(rates)
        hits = draws > 0
        if not np.any(hits):
            continue
        index_parts.append(indices[hits])
        count_parts.append(draws[hits])

    if index_parts:
        tensor = SparseCountTensor(shape, np.concatenate(index_parts), np.concatenate(count_parts))
    else:
        tensor = SparseCountTensor.empty(shape)

    logger.info(f"Generated {shape} tensor: {tensor.nnz} nonzeros, total count {tensor.total_count}, "
                f"R={rank_bound}, {significant} significant components")
    return tensor, truth


def ground_truth_frame(truth: ModelState, significant: int) -> pd.DataFrame:
    return pd.DataFrame({
        'factor': np.arange(truth.rank),
        'lambda': truth.lam,
        'significant': np.arange(truth.rank) < significant
    })


def save_synthetic(tensor: SparseCountTensor,
                   truth: ModelState,
                   significant: int,
                   outdir: Union[str, Path],
                   metadata: Optional[Dict] = None) -> Dict[str, Path]:
    """Write tensor.tns, ground_truth.csv and the generating factors under truth/"""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        'tensor': outdir / 'tensor.tns',
        'ground_truth': outdir / 'ground_truth.csv',
        'truth_dir': outdir / 'truth'
    }

    comment = None
    if metadata:
        comment = "synthetic BNBCP tensor\n" + "\n".join(f"{k}: {v}" for k, v in metadata.items())
    save_tensor(tensor, paths['tensor'], comment=comment)
    ground_truth_frame(truth, significant).to_csv(paths['ground_truth'], index=False, float_format=FLOAT_FORMAT)
    save_model_dir(truth, paths['truth_dir'])

    logger.info(f"Synthetic data written to {outdir}")
    return paths
