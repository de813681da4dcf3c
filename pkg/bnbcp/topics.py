"""Top-entity listings of factor columns, optionally labeled by a vocabulary file."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from scipy.stats import entropy

import config
from bnbcp.errors import LabelingError
from bnbcp.evaluation import effective_rank
from bnbcp.model import ModelState

logger = logging.getLogger(__name__)


@dataclass
class Topic:
    factor: int
    lam: float
    entropy: float
    entities: List[int]
    weights: List[float]
    labels: Optional[List[str]] = None

    def format(self) -> str:
        names = self.labels if self.labels is not None else [str(e) for e in self.entities]
        items = ", ".join(f"{name} ({w:.4f})" for name, w in zip(names, self.weights))
        return f"factor {self.factor} (lambda={self.lam:.6g}, entropy={self.entropy:.3f}): {items}"


def load_vocabulary(path: Union[str, Path], size: int) -> List[str]:
    """One label per line; line j labels entity j of the mode"""
    with open(path, encoding='utf-8') as fh:
        labels = [line.rstrip('\r\n') for line in fh]
    if len(labels) < size:
        raise LabelingError(f"{path}: {len(labels)} labels for a mode of size {size} "
                            f"({size - len(labels)} missing)")
    if len(labels) > size:
        logger.warning(f"{path}: {len(labels) - size} labels beyond mode size {size} are ignored")
    return labels[:size]


def normalized_entropy(column: np.ndarray) -> float:
    """Shannon entropy of a simplex column divided by ln(n); 0 = one-hot, 1 = uniform"""
    n = column.shape[0]
    if n < 2:
        return 0.0
    return float(entropy(column) / np.log(n))


def top_entities(column: np.ndarray, top: int) -> np.ndarray:
    """Positions of the `top` largest weights, largest first (ties by lower index)"""
    order = np.argsort(-column, kind='stable')
    return order[:top]


def topic_listing(model: ModelState,
                  mode: int,
                  top: int = 10,
                  vocab: Optional[List[str]] = None,
                  significant_only: bool = False,
                  rank_threshold: float = config.DEFAULT_RANK_THRESHOLD) -> List[Topic]:
    """Factors of one mode ordered by decreasing lambda, each with its top entities"""
    if not 0 <= mode < model.num_modes:
        raise ValueError(f"mode must lie in [0, {model.num_modes - 1}], got {mode}")
    if top < 1:
        raise ValueError(f"top must be >= 1, got {top}")

    factor = model.factors[mode]
    order = np.argsort(-model.lam, kind='stable')
    if significant_only:
        order = order[:effective_rank(model.lam, rank_threshold)]

    topics = []
    for r in order:
        column = factor[:, r]
        entities = top_entities(column, top)
        topics.append(Topic(
            factor=int(r),
            lam=float(model.lam[r]),
            entropy=normalized_entropy(column),
            entities=[int(e) for e in entities],
            weights=[float(w) for w in column[entities]],
            labels=[vocab[e] for e in entities] if vocab is not None else None
        ))
    return topics


def topics_frame(topics: List[Topic]) -> pd.DataFrame:
    """Long format: one row per (factor, rank position)"""
    rows = []
    for topic in topics:
        for position, (entity, weight) in enumerate(zip(topic.entities, topic.weights)):
            rows.append({
                'factor': topic.factor,
                'lambda': topic.lam,
                'position': position,
                'entity': entity,
                'label': topic.labels[position] if topic.labels is not None else None,
                'weight': weight
            })
    return pd.DataFrame(rows)
