"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback
implements the same contracts with identical numeric output.  Override
with HEAVYPOINTS_BACKEND=c|py (forcing `c` fails loudly if the
extension is missing).
"""

import os
from typing import Optional, Tuple

import numpy as np

from . import _pykern

try:
    from . import _ckern
    _HAVE_C = True
except ImportError:
    _ckern = None
    _HAVE_C = False

STATUS_OK = 0
STATUS_TABLE_LOAD = 1
STATUS_PACK_RANGE = 2
STATUS_EXC_OVERFLOW = 3


def compiled_available() -> bool:
    return _HAVE_C


def get_kernels(force: Optional[str] = None):
    """Return the kernel module for `force` in {None, "c", "py"};
    None consults HEAVYPOINTS_BACKEND then prefers compiled."""
    choice = force if force is not None else os.environ.get("HEAVYPOINTS_BACKEND", "")
    choice = choice.strip().lower()
    if choice in ("", "auto"):
        return _ckern if _HAVE_C else _pykern
    if choice in ("c", "compiled"):
        if not _HAVE_C:
            raise ImportError("compiled backend requested but _ckern is not built")
        return _ckern
    if choice in ("py", "python"):
        return _pykern
    raise ValueError(f"unknown backend {choice!r}")


def backend_name(force: Optional[str] = None) -> str:
    return "compiled" if get_kernels(force) is _ckern else "python"


def make_bitgen(seed: int, stream: int) -> np.random.Philox:
    """Counter-based generator for (seed, stream); independent streams
    for distinct stream indices, reproducible across platforms."""
    key = np.array([np.uint64(seed & (2**64 - 1)), np.uint64(stream & (2**64 - 1))],
                   dtype=np.uint64)
    return np.random.Philox(key=key)


def build_alias(probs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vose alias table (cut, alt) for a probability vector.

    Deterministic construction: stacks seeded in index order.  Sampling
    rule shared by both backends: with v = u*K, column j = int(v) and
    coin f = v - j, emit j if f < cut[j] else alt[j].
    """
    p = np.asarray(probs, dtype=np.float64)
    K = p.shape[0]
    scaled = p * K
    cut = np.ones(K, dtype=np.float64)
    alt = np.arange(K, dtype=np.int64)
    small = [i for i in range(K) if scaled[i] < 1.0]
    large = [i for i in range(K) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        cut[s] = scaled[s]
        alt[s] = l
        scaled[l] -= 1.0 - scaled[s]
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    # leftovers keep cut=1 (always accept); float slack puts them here
    return cut, alt
