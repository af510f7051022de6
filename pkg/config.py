"""
Configuration from environment. Call load_dotenv() before importing this module.
"""
import os

# Worker threads for per-source image computations (--threads overrides).
INCLUSION_REACH_THREADS = (os.getenv("INCLUSION_REACH_THREADS") or "").strip()

# Where run/compare/study/topology write CSV and JSON.
REACH_OUTPUT_DIR = (os.getenv("REACH_OUTPUT_DIR", "out") or "out").strip()

REACH_LOG_LEVEL = (os.getenv("REACH_LOG_LEVEL", "INFO") or "INFO").strip().upper()

# Full-resolution acceptance runs in the test suite (minutes, not seconds).
REACH_RUN_SLOW = (os.getenv("REACH_RUN_SLOW", "false") or "").strip().lower() in ("1", "true", "yes")

# Closed balls: a grid point at distance exactly alpha is inside. Slack is relative to max(1, |coord|).
TIE_RTOL = 1e-12

# Exterior distance to an H-polytope is bisected down to this fraction of rho.
BISECTION_RTOL = 1e-3

# validate() warns when h is this close to h* = 1/(4L).
H_STAR_WARN_FRACTION = 0.05

# Smallest admissible Lipschitz constant (disturbance-only dynamics have L = 0).
LIPSCHITZ_FLOOR = 1e-6
LIPSCHITZ_SAFETY = 1.1

# Packed integer keys for lattice set operations must stay below this.
MAX_LATTICE_KEYS = 2**62


def get_thread_count(cli_value: int | None = None) -> int:
    """Thread count: --threads, else INCLUSION_REACH_THREADS, else 1."""
    if cli_value is not None:
        return max(1, int(cli_value))
    try:
        return max(1, int(INCLUSION_REACH_THREADS)) if INCLUSION_REACH_THREADS else 1
    except ValueError:
        return 1
