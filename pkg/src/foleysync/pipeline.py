"""Two-stage generation: detected onsets drive windowed diffusion sampling.

Also holds the label upsampler (frame rate to audio rate), the diagnostic
spectrogram plot, and the complete-system report assembly used by the CLI
and the HTTP service.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch

from foleysync import dataset, metrics
from foleysync.diffusion.sampler import SamplerConfig, ddim_sample

log = logging.getLogger(__name__)


def upsample_onset_track(label: np.ndarray, fps: float, sr: int,
                         n_samples: int, impulse_at: str = "start") -> np.ndarray:
    """Frame-rate binary labels -> audio-rate impulse track.

    Each onset frame contributes exactly one unit impulse, placed at the
    frame's start sample (or its center when impulse_at="center"). Onset
    count is preserved exactly.
    """
    if sr < fps:
        raise ValueError(f"audio rate {sr} below frame rate {fps}")
    if impulse_at not in ("start", "center"):
        raise ValueError(f"impulse_at must be 'start' or 'center', got {impulse_at!r}")
    label = np.asarray(label)
    track = np.zeros(n_samples, dtype=np.uint8)
    offset = 0.0 if impulse_at == "start" else 0.5
    for i in np.flatnonzero(label):
        s = int(np.floor((i + offset) / fps * sr))
        track[min(s, n_samples - 1)] = 1
    return track


def track_to_times(track: np.ndarray, sr: int) -> np.ndarray:
    """Impulse sample indices -> seconds."""
    return np.flatnonzero(np.asarray(track)) / float(sr)


def generate_from_track(net, onset_track: np.ndarray, embedding: np.ndarray,
                        sampler: SamplerConfig) -> np.ndarray:
    """Sample audio for a full-length onset track, one window at a time.

    The track is tiled into non-overlapping windows of the net's native
    length (the tail is zero-padded, then trimmed). Each window k samples
    with seed sampler.seed + k so the output is deterministic and windows
    stay independent.
    """
    window = net.config.window
    n = len(onset_track)
    n_tiles = -(-n // window)
    padded = np.zeros(n_tiles * window, dtype=np.float32)
    padded[:n] = np.asarray(onset_track, dtype=np.float32)
    emb = torch.as_tensor(np.asarray(embedding, dtype=np.float32))[None, :]

    out = np.zeros(n_tiles * window, dtype=np.float32)
    for k in range(n_tiles):
        tile = torch.from_numpy(padded[k * window:(k + 1) * window])[None, None, :]
        cfg = SamplerConfig(steps=sampler.steps, cfg_scale=sampler.cfg_scale,
                            seed=sampler.seed + k)
        audio = ddim_sample(net, tile, emb, cfg)
        out[k * window:(k + 1) * window] = audio[0, 0].numpy()
    return out[:n]


def detect_frame_labels(detector, pair: dataset.MediaPair,
                        stats: dataset.FrameStats, threshold: float = 0.5,
                        nms_window: int = 0) -> np.ndarray:
    """Tile the clip into chunks and concatenate per-frame binary labels."""
    from foleysync import onset_detector as od

    config = detector.config
    chunk_s = config.frames / config.fps
    n_tiles = int(pair.duration / chunk_s + 1e-9)
    if n_tiles == 0:
        raise dataset.DataError(
            f"clip {pair.id} shorter than one detector chunk ({chunk_s:.2f}s)")
    labels = []
    for k in range(n_tiles):
        chunk = dataset.extract_video_chunk(pair, k * chunk_s, duration=chunk_s,
                                            fps=config.fps)
        frames = dataset.preprocess_frames(chunk.frames, augment=False,
                                           stats=stats, size=config.image_size)
        labels.append(od.predict_onsets(detector, frames, threshold=threshold,
                                        nms_window=nms_window))
    return np.concatenate(labels)


def run_pipeline(pair: dataset.MediaPair, detector, stats: dataset.FrameStats,
                 net, embedding: np.ndarray, sampler: SamplerConfig,
                 tolerance: float = 0.050) -> dict:
    """Video -> detected onsets -> synthesized audio -> sync report."""
    sr = net.config.sample_rate
    if detector.config.fps <= 0 or sr % 1:
        raise ValueError("invalid frame rate / sample rate combination")
    label = detect_frame_labels(detector, pair, stats)
    covered_s = len(label) / detector.config.fps
    n_samples = int(round(covered_s * sr))
    track = upsample_onset_track(label, detector.config.fps, sr, n_samples)
    if track.sum() == 0:
        log.warning("no onsets detected in %s; generating from an empty track",
                    pair.id)
    audio = generate_from_track(net, track, embedding, sampler)

    detected_times = track_to_times(track, sr)
    extracted_times = metrics.detect_audio_onsets(audio, sr)
    if len(detected_times):
        match = metrics.match_onsets(extracted_times, detected_times,
                                     tolerance=tolerance)
        sync_rate = match.tp / len(detected_times)
    else:
        match = None
        sync_rate = float("nan")
    return {
        "clip": pair.id,
        "audio": audio,
        "sample_rate": sr,
        "frame_labels": label,
        "onset_track": track,
        "detected_onsets": detected_times.tolist(),
        "extracted_onsets": list(map(float, extracted_times)),
        "sync_rate": float(sync_rate),
        "matched": match.tp if match else 0,
        "tolerance": tolerance,
    }


def plot_diagnostic(reference: np.ndarray, generated: np.ndarray,
                    onset_track: np.ndarray, sr: int, out_path: Path):
    """Stacked spectrograms with onset markers; returns the figure."""
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    reference = np.asarray(reference, dtype=np.float64).ravel()
    generated = np.asarray(generated, dtype=np.float64).ravel()
    onset_track = np.asarray(onset_track).ravel()
    if len(reference) != len(generated) or len(onset_track) != len(reference):
        raise ValueError(
            f"duration mismatch: reference {len(reference)}, generated "
            f"{len(generated)}, onset track {len(onset_track)} samples")

    times = track_to_times(onset_track, sr)
    nfft = min(1024, len(reference))
    fig, axes = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    for ax, wave, title in ((axes[0], reference, "reference"),
                            (axes[1], generated, "generated")):
        ax.specgram(wave + 1e-10, NFFT=nfft, Fs=sr, noverlap=nfft // 2)
        ax.set_ylabel(f"{title} [Hz]")
        for t in times:
            ax.axvline(t, color="w", linestyle="--", linewidth=0.8, alpha=0.9)
    axes[1].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    return fig


def evaluate_corpus(root: Path, ids, net, provider, sampler: SamplerConfig,
                    protocol: str, *, detector=None, stats=None,
                    tolerance: float = 0.050) -> dict:
    """Generate audio for every test clip and score it against the reference.

    protocol "synthesis" conditions the generator on the annotated onset
    times; "full" runs the video detector first and conditions on its output.
    Each clip is conditioned on the provider embedding of its own reference
    audio and sampled with a clip-specific seed. Besides the aggregate
    synthesis metrics the report carries a pooled sync rate: the fraction of
    conditioning onsets matched by an extracted onset within +-tolerance.
    """
    if len(ids) == 0:
        raise dataset.DataError("evaluation requires a non-empty test set")
    if protocol not in ("synthesis", "full"):
        raise ValueError(f"unknown protocol: {protocol}")
    if protocol == "full" and (detector is None or stats is None):
        raise ValueError("full protocol requires a detector and frame stats")

    sr = net.config.sample_rate
    generated, reference, annotated, per_clip = [], [], [], []
    pooled_tp = pooled_cond = 0
    for k, clip_id in enumerate(ids):
        pair = dataset.load_media_pair(root, clip_id)
        ref, ref_sr = pair.load_audio()
        if ref_sr != sr:
            raise dataset.DataError(
                f"{clip_id}: corpus rate {ref_sr} != model rate {sr}")
        if protocol == "synthesis":
            track = np.zeros(len(ref), dtype=np.uint8)
            for t in pair.onset_times:
                idx = int(np.floor(t * sr))
                if 0 <= idx < len(track):
                    track[idx] = 1
        else:
            labels = detect_frame_labels(detector, pair, stats)
            track = upsample_onset_track(labels, detector.config.fps, sr,
                                         len(ref))
        clip_sampler = SamplerConfig(steps=sampler.steps,
                                     cfg_scale=sampler.cfg_scale,
                                     seed=sampler.seed + 104729 * k)
        embedding = provider.embed_audio(ref, sr, warn_short=False).vector
        audio = generate_from_track(net, track, embedding, clip_sampler)

        cond_times = track_to_times(track, sr)
        extracted = metrics.detect_audio_onsets(audio, sr)
        match = metrics.match_onsets(extracted, cond_times, tolerance=tolerance)
        pooled_tp += match.tp
        pooled_cond += len(cond_times)
        per_clip.append({
            "id": clip_id,
            "n_onsets": len(cond_times),
            "matched": match.tp,
            "sync_rate": match.tp / len(cond_times) if len(cond_times) else None,
        })
        generated.append(audio)
        reference.append(ref)
        annotated.append(cond_times)

    report = metrics.evaluate_synthesis(
        generated, reference, provider, protocol, sr=sr,
        annotated_onsets=annotated if protocol == "synthesis" else None,
        tolerance=tolerance)
    report["sync_rate"] = pooled_tp / pooled_cond if pooled_cond else None
    report["per_clip"] = per_clip
    return report
