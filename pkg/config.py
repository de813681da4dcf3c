import os
from pathlib import Path

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

# Project paths
BASE_DIR = Path(__file__).parent
RUNS_DIR = Path(os.getenv("BNBCP_RUNS_DIR", str(BASE_DIR / "runs")))
DEFAULT_OUTDIR = str(RUNS_DIR / "latest")

# Logging
LOG_LEVEL = os.getenv("BNBCP_LOG_LEVEL", "INFO")
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Model hyperparameters (epsilon defaults to 1/R)
DEFAULT_A = float(os.getenv("BNBCP_DEFAULT_A", 0.1))
DEFAULT_G = float(os.getenv("BNBCP_DEFAULT_G", 1.0))
DEFAULT_C = float(os.getenv("BNBCP_DEFAULT_C", 1.0))

# Numerical floors
TINY = 1e-300
RATE_FLOOR = 1e-12

# Evaluation
DEFAULT_RANK_THRESHOLD = float(os.getenv("BNBCP_RANK_THRESHOLD", 0.01))
DEFAULT_HELDOUT_FRAC = float(os.getenv("BNBCP_HELDOUT_FRAC", 0.05))

# Batch Gibbs
DEFAULT_BURNIN = int(os.getenv("BNBCP_BURNIN", 1000))
DEFAULT_SAMPLES = int(os.getenv("BNBCP_SAMPLES", 1000))

# Batch VB
DEFAULT_MAX_ITERS = int(os.getenv("BNBCP_MAX_ITERS", 200))
VB_TOLERANCE = float(os.getenv("BNBCP_VB_TOLERANCE", 1e-5))
VB_WINDOW = 5

# Online (CDF / SVI)
DEFAULT_T0 = float(os.getenv("BNBCP_T0", 0.0))
DEFAULT_KAPPA = float(os.getenv("BNBCP_KAPPA", 0.5))
DEFAULT_MINIBATCH = int(os.getenv("BNBCP_MINIBATCH", 100000))

# Synthetic generation
SYNTH_LAMBDA_SCALE = float(os.getenv("BNBCP_SYNTH_LAMBDA_SCALE", 2000.0))
SYNTH_SUPPRESSION = 1e-6
SYNTH_MAX_DENSE_CELLS = int(os.getenv("BNBCP_SYNTH_MAX_CELLS", 20_000_000))
SYNTH_BLOCK_CELLS = int(os.getenv("BNBCP_SYNTH_BLOCK_CELLS", 4_000_000))  # cells x R rate terms per block
