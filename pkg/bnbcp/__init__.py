"""
bnbcp: beta-negative-binomial CP factorization of sparse count tensors.

Four inference engines share one model: batch Gibbs (bnbcp.gibbs), batch
variational Bayes (bnbcp.vb), and the streaming CDF and SVI engines
(bnbcp.online).
"""

__version__ = "1.0.0"

from bnbcp.errors import BNBCPError
from bnbcp.model import Hyperparams, ModelState, SufficientStats, VariationalState
from bnbcp.sparse_tensor import SparseCountTensor, TensorShape, load_tensor, save_tensor, split_heldout

__all__ = [
    "__version__",
    "BNBCPError",
    "Hyperparams",
    "ModelState",
    "SufficientStats",
    "VariationalState",
    "SparseCountTensor",
    "TensorShape",
    "load_tensor",
    "save_tensor",
    "split_heldout",
]
