"""Backend selection for the compiled kernels.

Numba is used when importable unless ``MFTG_DISABLE_NUMBA`` is set to a
truthy value, in which case the pure-numpy implementations run instead.
``MFTG_THREADS`` caps the numba thread pool.
"""
import os

_FALSY = ("", "0", "false", "no", "off")

try:
    import numba

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the TBB probe, which warns on hosts with an old TBB
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def numba_disabled():
    return os.environ.get("MFTG_DISABLE_NUMBA", "").strip().lower() not in _FALSY


def use_numba():
    return HAVE_NUMBA and not numba_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


if HAVE_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def configure_threads():
    """Apply ``MFTG_THREADS`` to the numba pool; returns the active count."""
    if not HAVE_NUMBA:
        return 1
    raw = os.environ.get("MFTG_THREADS")
    if raw:
        try:
            n = max(1, min(int(raw), numba.config.NUMBA_NUM_THREADS))
        except ValueError:
            n = numba.config.NUMBA_NUM_THREADS
        numba.set_num_threads(n)
    return numba.get_num_threads()
