"""Kernel backend selection.

The hot numeric kernels (convolution, pooling, bilinear resampling) exist in
two interchangeable implementations: numba-jitted loop nests and a pure-numpy
vectorized fallback.  `CONTAMINET_BACKEND=numba|numpy` picks one at import
time; the default is numba when it is importable, numpy otherwise.
`CONTAMINET_THREADS` caps the numba thread pool.

Both backends are deterministic run-to-run: numba parallelism is only over
axes whose outputs are disjoint, so results do not depend on thread count or
schedule.
"""

import os

from .errors import ConfigError

ENV_BACKEND = "CONTAMINET_BACKEND"
ENV_THREADS = "CONTAMINET_THREADS"

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False


def _apply_thread_cap():
    raw = os.environ.get(ENV_THREADS)
    if not raw or not HAS_NUMBA:
        return
    try:
        want = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_THREADS} must be an integer, got {raw!r}")
    if want < 1:
        raise ConfigError(f"{ENV_THREADS} must be >= 1, got {want}")
    numba.set_num_threads(min(want, numba.config.NUMBA_NUM_THREADS))


def default_backend() -> str:
    """Backend chosen from the environment: 'numba' or 'numpy'."""
    name = os.environ.get(ENV_BACKEND, "").strip().lower()
    if name == "":
        return "numba" if HAS_NUMBA else "numpy"
    if name not in ("numba", "numpy"):
        raise ConfigError(
            f"{ENV_BACKEND} must be 'numba' or 'numpy', got {name!r}"
        )
    if name == "numba" and not HAS_NUMBA:
        raise ConfigError(f"{ENV_BACKEND}=numba but numba is not importable")
    return name


_apply_thread_cap()
