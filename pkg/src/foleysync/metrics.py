"""Evaluation machinery: onset-count accuracy, tolerance-windowed average
precision, audio-domain onset extraction, greedy tolerance matching, and
Fréchet distance between Gaussian fits of embedding sets.

Report schema (written as JSON by the CLI): ``protocol``, ``n_clips``,
``count_accuracy`` (percent), ``ap`` (0..1), ``fad`` (or per-modality dict),
``provider`` (embedding provider id), ``tolerance`` (seconds).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d

from . import kernels

log = logging.getLogger(__name__)

# Onset-strength analysis parameters, frozen for reproducible tests. The STFT
# window/hop are stated at 48 kHz and scaled proportionally at other rates.
STFT_WINDOW_48K = 1024
STFT_HOP_DIVISOR = 4
FLUX_KNEE = 1e-3
PEAK_PRE_MAX_S = 0.03
PEAK_POST_MAX_S = 0.03
PEAK_PRE_AVG_S = 0.10
PEAK_POST_AVG_S = 0.10
PEAK_WAIT_S = 0.03
PEAK_DELTA = 0.07


@dataclass
class OnsetMatchResult:
    """Outcome of one-to-one tolerance matching between onset time lists."""

    tp: int
    fp: int
    fn: int
    pairs: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class GaussianStats:
    """Sufficient statistics (mean, covariance, count) of an embedding set."""

    mean: np.ndarray
    cov: np.ndarray
    n: int


def onset_count_accuracy(pairs) -> float:
    """Percentage of (predicted count, reference count) pairs that agree exactly."""
    if len(pairs) == 0:
        raise ValueError("onset_count_accuracy requires at least one pair")
    hits = sum(1 for p, g in pairs if p == g)
    return 100.0 * hits / len(pairs)


def dilate_labels(labels: np.ndarray, tolerance_frames: int) -> np.ndarray:
    """Widen each positive label to +-tolerance_frames neighbours."""
    labels = np.asarray(labels)
    if tolerance_frames <= 0:
        return labels.astype(np.int64)
    size = 2 * int(tolerance_frames) + 1
    return maximum_filter1d(labels.astype(np.int64), size, mode="constant", cval=0)


def average_precision(scores, labels, tolerance_frames: int = 0) -> float:
    """Area under the precision-recall curve with step-wise interpolation.

    Labels are dilated by +-tolerance_frames before ranking. Ties in scores
    are grouped: the curve has one point per distinct score threshold, and
    AP = sum_k (R_k - R_{k-1}) * P_k over thresholds in descending order.
    Returns NaN (with a logged warning) when no positive labels remain.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    labels = dilate_labels(labels, tolerance_frames)
    n_pos = int(labels.sum())
    if n_pos == 0:
        log.warning("average_precision undefined: no positive labels")
        return float("nan")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp_cum = np.cumsum(sorted_labels)
    fp_cum = np.cumsum(1 - sorted_labels)
    # one PR point per distinct threshold: last index of each tied run
    last = np.r_[np.flatnonzero(np.diff(sorted_scores) != 0), len(sorted_scores) - 1]
    ap = 0.0
    prev_recall = 0.0
    for i in last:
        precision = tp_cum[i] / (tp_cum[i] + fp_cum[i])
        recall = tp_cum[i] / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


def _stft_params(sr: int) -> tuple[int, int]:
    win = max(64, int(round(STFT_WINDOW_48K * sr / 48000)))
    hop = max(16, win // STFT_HOP_DIVISOR)
    return win, hop


def onset_strength(audio: np.ndarray, sr: int) -> tuple[np.ndarray, float]:
    """Spectral-flux onset envelope, normalized to peak 1.

    STFT frames are centered (zero padding of half a window at both ends), so
    envelope frame i corresponds to time ``i * hop / sr``. Flux is the sum
    over bins of positive first differences of the compressed log magnitude.
    Returns (envelope, hop seconds).
    """
    audio = np.asarray(audio, dtype=np.float64).ravel()
    win, hop = _stft_params(sr)
    pad = win // 2
    x = np.pad(audio, (pad, pad))
    n_frames = max(0, 1 + (len(x) - win) // hop)
    if n_frames < 2:
        return np.zeros(n_frames), hop / sr
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(win)[None, :]
    mag = np.abs(np.fft.rfft(frames, axis=1))
    logmag = np.log1p(mag / FLUX_KNEE)
    flux = np.sum(np.maximum(0.0, np.diff(logmag, axis=0)), axis=1)
    env = np.concatenate([[0.0], flux])
    peak = env.max()
    if peak > 0:
        env = env / peak
    return env, hop / sr


def detect_audio_onsets(audio: np.ndarray, sr: int) -> np.ndarray:
    """Onset times (seconds, ascending) extracted from a waveform.

    Spectral-flux envelope followed by local-maximum peak picking against
    pre/post mean thresholds; silence yields an empty list.
    """
    env, dt = onset_strength(audio, sr)
    if env.size == 0:
        return np.empty(0, dtype=np.float64)
    frames_per_s = 1.0 / dt
    peaks = kernels.peak_pick(
        env,
        pre_max=int(round(PEAK_PRE_MAX_S * frames_per_s)),
        post_max=int(round(PEAK_POST_MAX_S * frames_per_s)),
        pre_avg=int(round(PEAK_PRE_AVG_S * frames_per_s)),
        post_avg=int(round(PEAK_POST_AVG_S * frames_per_s)),
        delta=PEAK_DELTA,
        wait=int(round(PEAK_WAIT_S * frames_per_s)),
    )
    return peaks.astype(np.float64) * dt


def match_onsets(pred, gt, tolerance: float = 0.050) -> OnsetMatchResult:
    """Greedy chronological one-to-one matching of onset time lists.

    Walks ground truth in order, assigning each onset the nearest unmatched
    prediction within +-tolerance (distance ties go to the earlier
    prediction). Both inputs must be sorted ascending.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    for name, arr in (("pred", pred), ("gt", gt)):
        if arr.size > 1 and np.any(np.diff(arr) < 0):
            raise ValueError(f"{name} onset times must be sorted ascending")
    assign = kernels.greedy_match(pred, gt, tolerance)
    pairs = [(float(pred[p]), float(gt[g])) for g, p in enumerate(assign) if p >= 0]
    tp = len(pairs)
    return OnsetMatchResult(tp=tp, fp=len(pred) - tp, fn=len(gt) - tp, pairs=pairs)


def fit_gaussian(embeddings) -> GaussianStats:
    """Sample mean and unbiased covariance of a list of equal-length vectors."""
    vecs = [np.asarray(e, dtype=np.float64).ravel() for e in embeddings]
    if len(vecs) < 2:
        raise ValueError("fit_gaussian requires at least 2 embeddings")
    dims = {v.shape[0] for v in vecs}
    if len(dims) != 1:
        raise ValueError(f"embedding dimension mismatch: {sorted(dims)}")
    x = np.stack(vecs)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (len(vecs) - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean=mean, cov=cov, n=len(vecs))


def _sqrtm_psd(mat: np.ndarray, tol: float) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [-tol, 0) are numerical noise and clamp to 0; anything
    more negative is a genuine non-PSD input and raises.
    """
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -tol:
        raise ValueError(f"matrix not PSD: min eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats, psd_tol: float = 1e-6) -> float:
    """Fréchet distance between two Gaussians:

    ``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})``

    The cross term uses ``Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2})``, the
    symmetrized form of the matrix square root of the product.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("GaussianStats dimension mismatch")
    sqrt_a = _sqrtm_psd(a.cov, psd_tol)
    inner = sqrt_a @ b.cov @ sqrt_a
    inner = 0.5 * (inner + inner.T)
    vals = np.linalg.eigvalsh(inner)
    if vals.min() < -psd_tol:
        raise ValueError(f"cross term not PSD: min eigenvalue {vals.min():.3e}")
    tr_cross = np.sum(np.sqrt(np.clip(vals, 0.0, None)))
    diff = a.mean - b.mean
    dist = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_cross)
    return max(0.0, dist)


def evaluate_synthesis(generated, reference, provider, protocol, *, sr,
                       annotated_onsets=None, tolerance: float = 0.050) -> dict:
    """Aggregate synthesis metrics over paired generated/reference clips.

    protocol "synthesis": reference onsets are the conditioning annotation
    times; both audio tracks are zeroed before the first annotated event.
    protocol "full": onsets are extracted from both audio tracks with
    :func:`detect_audio_onsets`; no zero-reset.

    AP is corpus-level: binary onset tracks at audio rate are dilated by
    +-tolerance per clip on both sides (so dilation never leaks across clip
    boundaries) and concatenated; identical onset sets then score exactly 1.
    """
    if len(generated) == 0 or len(generated) != len(reference):
        raise ValueError("generated and reference sets must be non-empty and paired")
    if protocol not in ("synthesis", "full"):
        raise ValueError(f"unknown protocol: {protocol}")
    if protocol == "synthesis" and annotated_onsets is None:
        raise ValueError("synthesis protocol requires annotated onset times")

    counts = []
    score_chunks = []
    label_chunks = []
    for i, (gen, ref) in enumerate(zip(generated, reference)):
        gen = np.asarray(gen, dtype=np.float64).ravel()
        ref = np.asarray(ref, dtype=np.float64).ravel()
        if protocol == "synthesis":
            gt_times = np.asarray(annotated_onsets[i], dtype=np.float64)
            if gt_times.size:
                first = int(round(gt_times[0] * sr))
                gen = gen.copy()
                gen[:first] = 0.0
            pred_times = detect_audio_onsets(gen, sr)
        else:
            pred_times = detect_audio_onsets(gen, sr)
            gt_times = detect_audio_onsets(ref, sr)
        counts.append((len(pred_times), len(gt_times)))
        length = len(gen)
        tol_frames = int(round(tolerance * sr))
        score_chunks.append(dilate_labels(_times_to_track(pred_times, sr, length), tol_frames))
        label_chunks.append(dilate_labels(_times_to_track(gt_times, sr, length), tol_frames))

    scores = np.concatenate(score_chunks).astype(np.float64)
    labels = np.concatenate(label_chunks)
    ap = average_precision(scores, labels, tolerance_frames=0)

    gen_stats = fit_gaussian([provider.embed_audio(g, sr).vector for g in generated])
    ref_stats = fit_gaussian([provider.embed_audio(r, sr).vector for r in reference])
    fad = frechet_distance(gen_stats, ref_stats)

    return {
        "protocol": protocol,
        "n_clips": len(generated),
        "count_accuracy": onset_count_accuracy(counts),
        "ap": ap,
        "fad": fad,
        "provider": provider.provider_id,
        "tolerance": tolerance,
    }


def _times_to_track(times: np.ndarray, sr: int, length: int) -> np.ndarray:
    track = np.zeros(length, dtype=np.float64)
    idx = np.floor(np.asarray(times, dtype=np.float64) * sr).astype(np.int64)
    idx = idx[(idx >= 0) & (idx < length)]
    track[idx] = 1.0
    return track
