"""Hot numeric kernels with numba-accelerated and pure-numpy variants.

The numba path is used by default when numba imports cleanly. Set
``VULNFUSE_NUMBA=0`` in the environment before import to force the pure-numpy
fallback (useful for debugging and for the benchmark in ``benchmarks/``).
Both variants accumulate in identical order, so results are bit-equal.
"""

import os

import numpy as np

_ENV_FLAG = os.environ.get("VULNFUSE_NUMBA", "1").strip().lower()
_WANT_NUMBA = _ENV_FLAG not in ("0", "false", "no", "off")

if _WANT_NUMBA:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        HAS_NUMBA = False
else:
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# pure-numpy reference implementations
# ---------------------------------------------------------------------------

def _bm25_accumulate_np(scores, post_docs, post_counts, starts, ends, weights, norms, k1):
    for t in range(starts.size):
        lo, hi = starts[t], ends[t]
        if lo == hi:
            continue
        docs = post_docs[lo:hi]
        counts = post_counts[lo:hi]
        # postings of one term list each document once, so plain fancy
        # indexing accumulates correctly
        scores[docs] += weights[t] * (k1 + 1.0) * counts / (norms[docs] + counts)
    return scores


def _sparse_accumulate_np(out, rows, cols, vals, x):
    if rows.size:
        # touches only the active entries: one gather and one scattered add
        # per entry column
        np.add.at(out, (slice(None), cols), x[:, rows] * vals)
    return out


# ---------------------------------------------------------------------------
# numba variants
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _bm25_accumulate_nb(scores, post_docs, post_counts, starts, ends, weights, norms, k1):
        for t in range(starts.size):
            w = weights[t]
            for p in range(starts[t], ends[t]):
                d = post_docs[p]
                c = post_counts[p]
                scores[d] += w * (k1 + 1.0) * c / (norms[d] + c)
        return scores

    @njit(cache=True)
    def _sparse_accumulate_nb(out, rows, cols, vals, x):
        n = x.shape[0]
        for e in range(rows.size):
            r = rows[e]
            c = cols[e]
            v = vals[e]
            for i in range(n):
                out[i, c] += x[i, r] * v
        return out

    bm25_accumulate = _bm25_accumulate_nb
    sparse_accumulate = _sparse_accumulate_nb
else:
    bm25_accumulate = _bm25_accumulate_np
    sparse_accumulate = _sparse_accumulate_np

_warmed = False


def warmup():
    """Trigger JIT compilation on tiny inputs so timed paths run warm."""
    global _warmed
    if _warmed:
        return
    scores = np.zeros(1)
    bm25_accumulate(
        scores,
        np.zeros(1, dtype=np.int64),
        np.ones(1, dtype=np.float64),
        np.zeros(1, dtype=np.int64),
        np.ones(1, dtype=np.int64),
        np.ones(1),
        np.ones(1),
        1.5,
    )
    out = np.zeros((1, 1))
    sparse_accumulate(
        out,
        np.zeros(1, dtype=np.int64),
        np.zeros(1, dtype=np.int64),
        np.ones(1),
        np.ones((1, 1)),
    )
    _warmed = True
