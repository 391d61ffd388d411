"""Diffusion training: v-objective regression with guidance dropout."""

from __future__ import annotations

import csv
import dataclasses
import logging
from pathlib import Path

import numpy as np
import torch

from foleysync import dataset
from foleysync.config import TrainConfig
from foleysync.diffusion import schedule
from foleysync.diffusion.model import DenoiserConfig, UNet1d

log = logging.getLogger(__name__)

NULL_PROB = 0.1  # guidance dropout: embedding replaced by the null constant


def diffusion_loss(net, x0: torch.Tensor, onset_tracks: torch.Tensor,
                   embeddings: torch.Tensor, generator: torch.Generator,
                   null_prob: float = NULL_PROB) -> torch.Tensor:
    """Mean squared error against the v-target at per-item uniform sigma.

    Each item's embedding is replaced by the null (zeros) with probability
    null_prob; the onset track is never dropped.
    """
    batch = x0.shape[0]
    sigma = torch.rand(batch, generator=generator, dtype=x0.dtype)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    drop = torch.rand(batch, generator=generator) < null_prob
    embeddings = embeddings.clone()
    embeddings[drop] = 0.0

    xt = schedule.perturb(x0, eps, sigma)
    v = schedule.v_target(x0, eps, sigma)
    pred = net(xt, sigma, onset_tracks, embeddings)
    loss = torch.mean((pred - v) ** 2)
    if not torch.isfinite(loss):
        raise RuntimeError("non-finite diffusion loss")
    return loss


def save_denoiser(path: Path, net: UNet1d, *, step: int = 0, extra: dict | None = None) -> None:
    payload = {
        "kind": "denoiser",
        "schedule": "vp-trig",
        "config": dataclasses.asdict(net.config),
        "state_dict": net.state_dict(),
        "step": step,
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_denoiser(path: Path) -> tuple[UNet1d, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != "denoiser":
        raise ValueError(f"{path} is not a denoiser checkpoint")
    config = DenoiserConfig(**payload["config"])
    net = UNet1d(config)
    net.load_state_dict(payload["state_dict"])
    net.eval()
    return net, payload


def _sample_batch(root: Path, train_ids: list[str], pairs: dict, provider,
                  batch_size: int, window: int, sr: int, rng: np.random.Generator):
    """Draw (x0, onset track, embedding) triples; windows must contain an onset."""
    waves, tracks, embs, ids = [], [], [], []
    for _ in range(batch_size):
        for attempt in range(50):
            cid = train_ids[int(rng.integers(0, len(train_ids)))]
            pair = pairs[cid]
            max_start = pair.duration - window / sr
            if max_start < 0:
                continue
            start = float(rng.uniform(0, max_start))
            try:
                win = dataset.extract_audio_window(pair, start, length=window, sr=sr)
            except dataset.WindowRejected:
                continue
            break
        else:
            raise dataset.DataError("could not draw an onset-bearing window in 50 tries")
        segment = dataset.sample_conditioning_segment(win, rng)
        embs.append(provider.embed_audio(segment, sr, warn_short=False).vector)
        waves.append(win.samples)
        tracks.append(win.onset_track.astype(np.float32))
        ids.append(cid)
    x0 = torch.from_numpy(np.stack(waves))[:, None, :]
    onsets = torch.from_numpy(np.stack(tracks))[:, None, :]
    embeddings = torch.from_numpy(np.stack(embs))
    return x0, onsets, embeddings, ids


def train_diffusion(net: UNet1d, corpus_root: Path, manifest: dataset.SplitManifest,
                    provider, hp: TrainConfig, out_dir: Path,
                    resume_from: Path | None = None) -> dict:
    """Optimize the denoiser; writes loss_log.csv, last.pt, best.pt.

    Deterministic for a fixed seed; resuming from a checkpoint restores the
    optimizer and both RNG streams, so the loss sequence continues as if
    uninterrupted.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    window, sr = net.config.window, net.config.sample_rate

    opt = torch.optim.AdamW(net.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)
    rng = np.random.default_rng(hp.seed)
    gen = torch.Generator().manual_seed(hp.seed)
    start_step, best = 0, float("inf")

    if resume_from is not None:
        payload = torch.load(resume_from, map_location="cpu", weights_only=True)
        net.load_state_dict(payload["state_dict"])
        opt.load_state_dict(payload["optimizer"])
        rng.bit_generator.state = payload["np_rng"]
        gen.set_state(payload["torch_gen"])
        start_step = payload["step"]
        best = payload.get("best", best)
        log.info("resumed diffusion training at step %d", start_step)

    pairs = {cid: dataset.load_media_pair(corpus_root, cid) for cid in manifest.train}
    log_path = out_dir / "loss_log.csv"
    mode = "a" if (resume_from is not None and log_path.exists()) else "w"
    history = []
    net.train()
    with open(log_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["step", "loss"])
        ema = None
        for step in range(start_step + 1, hp.max_steps + 1):
            x0, onsets, embeddings, ids = _sample_batch(
                corpus_root, manifest.train, pairs, provider,
                hp.batch_size, window, sr, rng)
            try:
                loss = diffusion_loss(net, x0, onsets, embeddings, gen)
            except RuntimeError as exc:
                raise RuntimeError(
                    f"diffusion training aborted at step {step}: {exc} "
                    f"(batch clips {ids}, lr {hp.lr})") from exc
            opt.zero_grad()
            loss.backward()
            opt.step()

            value = loss.item()
            history.append(value)
            writer.writerow([step, f"{value:.6f}"])
            ema = value if ema is None else 0.95 * ema + 0.05 * value
            if step % hp.log_every == 0:
                log.info("diffusion step %d loss %.4f (ema %.4f)", step, value, ema)
            if step % hp.ckpt_every == 0 or step == hp.max_steps:
                fh.flush()
                state = {
                    "optimizer": opt.state_dict(),
                    "np_rng": rng.bit_generator.state,
                    "torch_gen": gen.get_state(),
                    "best": min(best, ema),
                }
                save_denoiser(out_dir / "last.pt", net, step=step, extra=state)
                if ema < best:
                    best = ema
                    save_denoiser(out_dir / "best.pt", net, step=step, extra=state)
    net.eval()
    return {"steps": hp.max_steps, "final_loss": history[-1] if history else None,
            "history": history, "best": best}
