"""Per-frame action-onset detection in video.

An 18-layer (2+1)D residual network whose temporal axis is never strided:
every convolution keeps stride 1 in time, so the last feature map has one
step per input frame. Spatial pooling is global, after which a shared
fully connected head scores each frame independently.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from foleysync import dataset, metrics
from foleysync.config import DetectorConfig, TrainConfig

log = logging.getLogger(__name__)

STEM_MIDPLANES = 45  # factored-stem bottleneck width at base width 64


def midplanes(c_in: int, c_out: int, t: int = 3, d: int = 3) -> int:
    """Bottleneck width that keeps a (2+1)D pair at 3D-conv parameter parity."""
    return (t * d * d * c_in * c_out) // (d * d * c_in + t * c_out)


class Conv2Plus1d(nn.Module):
    """Spatial (1,d,d) conv then temporal (t,1,1) conv; time is never strided."""

    def __init__(self, c_in: int, c_out: int, mid: int, spatial_stride: int = 1):
        super().__init__()
        self.spatial = nn.Conv3d(c_in, mid, (1, 3, 3),
                                 stride=(1, spatial_stride, spatial_stride),
                                 padding=(0, 1, 1), bias=False)
        self.bn = nn.BatchNorm3d(mid)
        self.temporal = nn.Conv3d(mid, c_out, (3, 1, 1), stride=1,
                                  padding=(1, 0, 0), bias=False)

    def forward(self, x):
        return self.temporal(F.relu(self.bn(self.spatial(x))))


class BasicBlock2Plus1d(nn.Module):
    def __init__(self, c_in: int, c_out: int, spatial_stride: int = 1):
        super().__init__()
        self.conv1 = Conv2Plus1d(c_in, c_out, midplanes(c_in, c_out), spatial_stride)
        self.bn1 = nn.BatchNorm3d(c_out)
        self.conv2 = Conv2Plus1d(c_out, c_out, midplanes(c_out, c_out))
        self.bn2 = nn.BatchNorm3d(c_out)
        if spatial_stride != 1 or c_in != c_out:
            self.downsample = nn.Sequential(
                nn.Conv3d(c_in, c_out, 1, stride=(1, spatial_stride, spatial_stride),
                          bias=False),
                nn.BatchNorm3d(c_out))
        else:
            self.downsample = nn.Identity()

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(h + self.downsample(x))


class OnsetDetector(nn.Module):
    """frames [B,T,C,H,W] (normalized) -> per-frame logits [B,T]."""

    def __init__(self, config: DetectorConfig):
        super().__init__()
        if config.temporal_stride != 1:
            raise ValueError(
                "temporal stride must be 1: the detector scores every frame, "
                f"got {config.temporal_stride}")
        self.config = config
        w = config.width
        stem_mid = max(1, round(STEM_MIDPLANES * w / 64))
        self.stem = nn.Sequential(
            nn.Conv3d(3, stem_mid, (1, 7, 7), stride=(1, 2, 2),
                      padding=(0, 3, 3), bias=False),
            nn.BatchNorm3d(stem_mid),
            nn.ReLU(inplace=True),
            nn.Conv3d(stem_mid, w, (3, 1, 1), stride=1, padding=(1, 0, 0),
                      bias=False),
            nn.BatchNorm3d(w),
            nn.ReLU(inplace=True),
        )
        self.stages = nn.Sequential(
            BasicBlock2Plus1d(w, w), BasicBlock2Plus1d(w, w),
            BasicBlock2Plus1d(w, 2 * w, 2), BasicBlock2Plus1d(2 * w, 2 * w),
            BasicBlock2Plus1d(2 * w, 4 * w, 2), BasicBlock2Plus1d(4 * w, 4 * w),
            BasicBlock2Plus1d(4 * w, 8 * w, 2), BasicBlock2Plus1d(8 * w, 8 * w),
        )
        self.head = nn.Sequential(
            nn.Linear(8 * w, config.head_hidden),
            nn.ReLU(inplace=True),
            nn.Linear(config.head_hidden, 1),
        )

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.ndim == 4:
            frames = frames[None]
        if frames.ndim != 5 or frames.shape[2] != 3:
            raise ValueError(f"expected frames [B,T,3,H,W], got {tuple(frames.shape)}")
        x = frames.permute(0, 2, 1, 3, 4)  # [B,C,T,H,W]
        h = self.stages(self.stem(x))
        h = h.mean(dim=(-2, -1))           # pool H,W only; time survives
        h = h.transpose(1, 2)              # [B,T,C]
        return self.head(h).squeeze(-1)    # shared per-frame head


def build_detector(config: DetectorConfig) -> OnsetDetector:
    return OnsetDetector(config)


def predict_onsets(detector: OnsetDetector, frames: torch.Tensor,
                   threshold: float = 0.5, nms_window: int = 0) -> np.ndarray:
    """Binary per-frame onset track from preprocessed frames.

    frames: [T,3,H,W] or [B,T,3,H,W], already normalized. An optional
    non-maximum-suppression window keeps only the highest-probability frame
    within each run of +-nms_window frames (default off).
    """
    if frames.dtype == torch.uint8 or frames.abs().max().item() > 20:
        log.warning("detector input looks unnormalized (max |value| %.1f); "
                    "run preprocessing first", float(frames.abs().max()))
    detector.eval()
    with torch.no_grad():
        logits = detector(frames.float())
    probs = torch.sigmoid(logits)
    if probs.ndim == 1:
        probs = probs[None]
    track = (probs > threshold).to(torch.uint8).numpy()
    if nms_window > 0:
        p = probs.numpy()
        for b in range(track.shape[0]):
            on = np.flatnonzero(track[b])
            for i in on:
                lo, hi = max(0, i - nms_window), min(track.shape[1], i + nms_window + 1)
                if p[b, i] < p[b, lo:hi].max():
                    track[b, i] = 0
    return track[0] if frames.ndim == 4 else track


def save_detector(path: Path, detector: OnsetDetector, *, step: int = 0,
                  frame_stats: dataset.FrameStats | None = None,
                  extra: dict | None = None) -> None:
    payload = {
        "kind": "onset-detector",
        "config": dataclasses.asdict(detector.config),
        "state_dict": detector.state_dict(),
        "step": step,
    }
    if frame_stats is not None:
        # plain floats: numpy scalars would break weights_only=True loading
        payload["frame_stats"] = {"mean": [float(v) for v in frame_stats.mean],
                                  "std": [float(v) for v in frame_stats.std]}
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_detector(path: Path) -> tuple[OnsetDetector, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != "onset-detector":
        raise ValueError(f"{path} is not a detector checkpoint")
    detector = OnsetDetector(DetectorConfig(**payload["config"]))
    detector.load_state_dict(payload["state_dict"])
    detector.eval()
    if "frame_stats" in payload:
        fs = payload["frame_stats"]
        payload["frame_stats"] = dataset.FrameStats(
            mean=tuple(fs["mean"]), std=tuple(fs["std"]))
    return detector, payload


def _chunk_batch(root: Path, ids: list[str], pairs: dict, config: DetectorConfig,
                 stats: dataset.FrameStats, batch_size: int,
                 rng: np.random.Generator, augment: bool):
    """Random 2 s chunks with per-frame labels; augmentation is seeded."""
    frames, labels, clip_ids = [], [], []
    chunk_s = config.frames / config.fps
    for _ in range(batch_size):
        cid = ids[int(rng.integers(0, len(ids)))]
        pair = pairs[cid]
        start = float(rng.uniform(0, max(pair.duration - chunk_s, 0)))
        chunk = dataset.extract_video_chunk(pair, start, duration=chunk_s,
                                            fps=config.fps)
        gen = torch.Generator().manual_seed(int(rng.integers(0, 2 ** 31)))
        frames.append(dataset.preprocess_frames(
            chunk.frames, augment=augment, stats=stats, generator=gen,
            size=config.image_size))
        labels.append(torch.from_numpy(chunk.onset_label.astype(np.float32)))
        clip_ids.append(cid)
    return torch.stack(frames), torch.stack(labels), clip_ids


def _validation_tiles(root: Path, ids: list[str], pairs: dict,
                      config: DetectorConfig, stats: dataset.FrameStats,
                      augment: bool, seed: int = 0):
    """Non-overlapping chunk tiling over whole clips."""
    chunk_s = config.frames / config.fps
    gen = torch.Generator().manual_seed(seed)
    for cid in ids:
        pair = pairs[cid]
        n_tiles = int(pair.duration / chunk_s + 1e-9)
        for k in range(n_tiles):
            chunk = dataset.extract_video_chunk(pair, k * chunk_s,
                                                duration=chunk_s, fps=config.fps)
            frames = dataset.preprocess_frames(chunk.frames, augment=augment,
                                               stats=stats, generator=gen,
                                               size=config.image_size)
            yield cid, frames, chunk.onset_label


def train_onset_detector(detector: OnsetDetector, corpus_root: Path,
                         manifest: dataset.SplitManifest, hp: TrainConfig,
                         out_dir: Path, *, augment: bool = True,
                         steps_per_epoch: int = 50) -> dict:
    """BCE training with per-epoch validation; keeps the best-val checkpoint.

    Augmentation (crop + color jitter) applies to train and validation alike
    when enabled. The log records per-class recall so a collapsed all-zero
    predictor is visible immediately.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = detector.config
    rng = np.random.default_rng(hp.seed)
    torch.manual_seed(hp.seed)
    opt = torch.optim.AdamW(detector.parameters(), lr=hp.lr,
                            weight_decay=hp.weight_decay)
    pairs = {cid: dataset.load_media_pair(corpus_root, cid)
             for cid in manifest.train + manifest.val}
    stats_path = out_dir / "frame_stats.txt"
    if stats_path.exists():
        stats = dataset.load_frame_stats(stats_path)
    else:
        stats = dataset.compute_frame_stats(corpus_root, manifest.train)
        dataset.save_frame_stats(stats_path, stats)

    n_epochs = max(1, -(-hp.max_steps // steps_per_epoch))
    best_val = float("inf")
    history = []
    step = 0
    with open(out_dir / "train_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_bce", "val_bce", "lr", "onset_recall"])
        for epoch in range(1, n_epochs + 1):
            detector.train()
            epoch_losses = []
            while step < min(epoch * steps_per_epoch, hp.max_steps):
                step += 1
                frames, labels, clip_ids = _chunk_batch(
                    corpus_root, manifest.train, pairs, config, stats,
                    hp.batch_size, rng, augment)
                logits = detector(frames)
                loss = F.binary_cross_entropy_with_logits(logits, labels)
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"detector training diverged at step {step} "
                        f"(batch clips {clip_ids}, lr {hp.lr})")
                opt.zero_grad()
                loss.backward()
                opt.step()
                epoch_losses.append(loss.item())

            detector.eval()
            val_losses, hits, onsets = [], 0, 0
            with torch.no_grad():
                for cid, frames, label in _validation_tiles(
                        corpus_root, manifest.val, pairs, config, stats, augment,
                        seed=hp.seed + epoch):
                    logits = detector(frames[None])[0]
                    target = torch.from_numpy(label.astype(np.float32))
                    val_losses.append(F.binary_cross_entropy_with_logits(
                        logits, target).item())
                    pred = (torch.sigmoid(logits) > 0.5).numpy()
                    hits += int((pred & (label > 0)).sum())
                    onsets += int(label.sum())
            train_bce = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
            val_bce = float(np.mean(val_losses)) if val_losses else float("nan")
            recall = hits / onsets if onsets else float("nan")
            writer.writerow([epoch, f"{train_bce:.6f}", f"{val_bce:.6f}",
                             hp.lr, f"{recall:.4f}"])
            fh.flush()
            history.append({"epoch": epoch, "train_bce": train_bce,
                            "val_bce": val_bce, "onset_recall": recall})
            log.info("epoch %d train %.4f val %.4f recall %s",
                     epoch, train_bce, val_bce, f"{recall:.3f}" if onsets else "n/a")
            save_detector(out_dir / "last.pt", detector, step=step, frame_stats=stats)
            if val_bce < best_val:
                best_val = val_bce
                save_detector(out_dir / "best.pt", detector, step=step,
                              frame_stats=stats,
                              extra={"val_bce": float(val_bce)})
    detector.eval()
    return {"epochs": n_epochs, "steps": step, "best_val": best_val,
            "history": history}


def evaluate_detector(detector: OnsetDetector, corpus_root: Path,
                      test_ids: list[str], stats: dataset.FrameStats,
                      threshold: float = 0.5) -> dict:
    """Count accuracy and frame-level AP over non-overlapping test chunks."""
    if not test_ids:
        raise dataset.DataError("detector evaluation needs a non-empty test set")
    config = detector.config
    pairs = {cid: dataset.load_media_pair(corpus_root, cid) for cid in test_ids}
    detector.eval()
    all_scores, all_labels = [], []
    pred_counts, true_counts = [], []
    with torch.no_grad():
        for cid, frames, label in _validation_tiles(
                corpus_root, test_ids, pairs, config, stats, augment=False):
            probs = torch.sigmoid(detector(frames[None])[0]).numpy()
            all_scores.append(probs)
            all_labels.append(label)
            pred_counts.append(int((probs > threshold).sum()))
            true_counts.append(int(label.sum()))
    scores = np.concatenate(all_scores)
    labels = np.concatenate(all_labels)
    return {
        "count_accuracy": metrics.onset_count_accuracy(
            list(zip(pred_counts, true_counts))),
        "average_precision": float(metrics.average_precision(scores, labels)),
        "n_chunks": len(pred_counts),
        "fps": config.fps,
    }
