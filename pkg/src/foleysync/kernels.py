"""Hot numeric kernels with numba-accelerated and pure-NumPy implementations.

The sequential inner loops (peak picking with a refractory period, greedy
one-to-one onset matching) dominate evaluation time on long audio tracks.
Each kernel exists twice: a ``@njit`` version and a NumPy/Python reference
version. Set ``FOLEYSYNC_NO_NUMBA=1`` to force the fallback path, e.g. when
debugging or on platforms where numba is unavailable. Both paths produce the
same results; ``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def decorator(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return decorator


def use_numba() -> bool:
    """True when the numba path is active (import ok, not disabled by env)."""
    if not HAS_NUMBA:
        return False
    return os.environ.get("FOLEYSYNC_NO_NUMBA", "0") not in ("1", "true", "yes")


# ---------------------------------------------------------------------------
# Peak picking
#
# A frame i is a peak iff
#   env[i] == max(env[i-pre_max : i+post_max+1])
#   env[i] >= mean(env[i-pre_avg : i+post_avg+1]) + delta
#   i    >  last_peak + wait
# Windows are clipped at the array boundaries.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _peak_pick_nb(env, pre_max, post_max, pre_avg, post_avg, delta, wait):  # pragma: no cover - numba
    n = env.shape[0]
    peaks = np.empty(n, dtype=np.int64)
    count = 0
    last = -wait - 1
    for i in range(n):
        lo = max(0, i - pre_max)
        hi = min(n, i + post_max + 1)
        m = env[lo]
        for j in range(lo + 1, hi):
            if env[j] > m:
                m = env[j]
        if env[i] != m:
            continue
        lo = max(0, i - pre_avg)
        hi = min(n, i + post_avg + 1)
        s = 0.0
        for j in range(lo, hi):
            s += env[j]
        if env[i] < s / (hi - lo) + delta:
            continue
        if i - last <= wait:
            continue
        peaks[count] = i
        count += 1
        last = i
    return peaks[:count]


def _peak_pick_np(env, pre_max, post_max, pre_avg, post_avg, delta, wait):
    from scipy.ndimage import maximum_filter1d, uniform_filter1d

    n = env.shape[0]
    # positive origin shifts the window left: start = i - size//2 - origin
    size_max = pre_max + post_max + 1
    mov_max = maximum_filter1d(env, size_max, mode="nearest",
                               origin=pre_max - size_max // 2)

    # uniform_filter1d pads with edge values; boundary windows must instead be
    # clipped, so recompute means near the edges explicitly.
    size_avg = pre_avg + post_avg + 1
    mov_avg = uniform_filter1d(env, size_avg, mode="nearest",
                               origin=pre_avg - size_avg // 2)
    for i in range(min(pre_avg, n)):
        mov_avg[i] = env[: min(n, i + post_avg + 1)].mean()
    for i in range(max(0, n - post_avg), n):
        mov_avg[i] = env[max(0, i - pre_avg):].mean()

    candidates = np.flatnonzero((env == mov_max) & (env >= mov_avg + delta))
    peaks = []
    last = -wait - 1
    for i in candidates:
        if i - last > wait:
            peaks.append(i)
            last = i
    return np.asarray(peaks, dtype=np.int64)


def peak_pick(env: np.ndarray, pre_max: int, post_max: int, pre_avg: int,
              post_avg: int, delta: float, wait: int) -> np.ndarray:
    """Indices of local maxima of ``env`` exceeding a windowed mean by ``delta``.

    Greedy in time: once a peak is taken, the next ``wait`` frames are skipped.
    """
    env = np.ascontiguousarray(env, dtype=np.float64)
    if env.size == 0:
        return np.empty(0, dtype=np.int64)
    args = (int(pre_max), int(post_max), int(pre_avg), int(post_avg),
            float(delta), int(wait))
    if use_numba():
        return _peak_pick_nb(env, *args)
    return _peak_pick_np(env, *args)


# ---------------------------------------------------------------------------
# Greedy chronological onset matching
#
# Walks ground-truth onsets in order and assigns each the nearest unmatched
# prediction within the tolerance; distance ties go to the earlier prediction.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _greedy_match_nb(pred, gt, tol):  # pragma: no cover - numba
    n_pred = pred.shape[0]
    n_gt = gt.shape[0]
    assign = np.full(n_gt, -1, dtype=np.int64)
    used = np.zeros(n_pred, dtype=np.bool_)
    for g in range(n_gt):
        best = -1
        best_d = tol
        for p in range(n_pred):
            if used[p]:
                continue
            d = abs(pred[p] - gt[g])
            if d < best_d or (d == best_d and best == -1):
                best = p
                best_d = d
        if best >= 0:
            assign[g] = best
            used[best] = True
    return assign


def _greedy_match_np(pred, gt, tol):
    assign = np.full(len(gt), -1, dtype=np.int64)
    used = np.zeros(len(pred), dtype=bool)
    for g, t in enumerate(gt):
        dist = np.abs(pred - t)
        dist[used] = np.inf
        ok = dist <= tol
        if ok.any():
            # argmin returns the first (earliest) index on ties
            best = int(np.argmin(dist))
            assign[g] = best
            used[best] = True
    return assign


def greedy_match(pred: np.ndarray, gt: np.ndarray, tol: float) -> np.ndarray:
    """One-to-one assignment of predictions to ground-truth onsets.

    Returns, for each ground-truth onset, the index of the matched prediction
    or -1. Both inputs must be sorted ascending (validated by the caller).
    """
    pred = np.ascontiguousarray(pred, dtype=np.float64)
    gt = np.ascontiguousarray(gt, dtype=np.float64)
    if use_numba():
        return _greedy_match_nb(pred, gt, float(tol))
    return _greedy_match_np(pred, gt, float(tol))
