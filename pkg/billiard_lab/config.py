"""
Configuration for billiard_lab
Environment variables, numerical tolerances and the shared logger
"""
from pathlib import Path
import os
import logging

from billiard_lab import __version__

# Logging setup
LOG_LEVEL = os.getenv("BILLIARDLAB_LOG_LEVEL", "INFO").upper()
logging.basicConfig(
    level=LOG_LEVEL,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger("billiard_lab")

VERSION = __version__

# Base directories
_data_override = os.getenv("BILLIARDLAB_DATA_DIR")
if _data_override:
    BASE_DIR = Path(_data_override)
else:
    # Local development
    BASE_DIR = Path(__file__).resolve().parent.parent / "data"

# Ensure data directory exists
BASE_DIR.mkdir(parents=True, exist_ok=True)

# Orbit cache database
DB_PATH = Path(os.getenv("BILLIARDLAB_DB", str(BASE_DIR / "orbits.db")))

# Worker cap for batch computations
try:
    THREADS = max(1, int(os.getenv("BILLIARDLAB_THREADS", "1")))
except ValueError:
    logger.warning("BILLIARDLAB_THREADS is not an integer, using 1 worker")
    THREADS = 1

# Maximal number of words a single enumeration may produce
ENUMERATION_BUDGET = int(os.getenv("BILLIARDLAB_ENUM_BUDGET", str(10_000_000)))

# ============================================
# NUMERICAL TOLERANCES
# ============================================
TOL_BOUNDARY = 1e-9          # length units
MIN_GAP = 1e-6               # scenes with a smaller gap are rejected
FRAME_TOL = 1e-8             # orthonormality of ellipsoid frames
TANGENCY_TOL = 1e-7          # |v.n| < TANGENCY_TOL * |v| is a tangential hit
ILL_CONDITIONED_COS = 1e-4   # linearization refused below this incidence cosine
HYPERBOLIC_TOL = 1e-6        # distance of eigenvalues from the unit circle
ORBIT_MOVE_TOL = 1e-12
ORBIT_SWEEP_BUDGET = 10_000
RESIDUAL_TOL = 1e-9
FD_STEP = 1e-6
RATIO_MARGIN = 0.05

logger.debug(f"Data directory: {BASE_DIR}")
logger.debug(f"Database path: {DB_PATH}")
logger.debug(f"Worker cap: {THREADS}")
