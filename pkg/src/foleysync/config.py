"""Presets and declarative run configuration.

Two presets ship: ``desk`` (small nets, 8 kHz mono, synthetic corpus scale,
runs on a CPU in minutes) and ``paper`` (full-scale architecture: 48 kHz,
2^18-sample windows, factor-1024 UNet, 512-dim conditioning). Every value
can be overridden by a YAML config file and again by CLI flags.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from foleysync.diffusion.model import DenoiserConfig


@dataclass
class DetectorConfig:
    width: int = 64  # stem width; residual stages use width, 2w, 4w, 8w
    frames: int = 30
    fps: float = 15.0
    image_size: int = 112
    head_hidden: int = 256
    temporal_stride: int = 1  # must stay 1: per-frame output requires it


@dataclass
class TrainConfig:
    batch_size: int
    lr: float
    weight_decay: float
    max_steps: int
    log_every: int = 10
    ckpt_every: int = 50
    seed: int = 0


@dataclass
class RunConfig:
    preset: str
    sample_rate: int
    window: int
    fps: float
    chunk_seconds: float
    embedding_dim: int
    detector: DetectorConfig
    denoiser: DenoiserConfig
    detector_train: TrainConfig
    diffusion_train: TrainConfig
    sampler_steps: int = 50
    cfg_scale: float = 2.0
    onset_impulse_at: str = "start"  # or "center": impulse within the frame


def desk_denoiser() -> DenoiserConfig:
    return DenoiserConfig(
        widths=[16, 24, 32, 48, 64, 64],
        factors=[2, 2, 2, 2, 2, 2],
        onset_widths=[8, 8, 16, 16, 24, 24],
        attention_layers=[4, 5],
        n_heads=4,
        head_features=16,
        context_dim=64,
        total_factor=64,
        audio_channels=1,
        sample_rate=8000,
        window=2 ** 14,
    )


def paper_denoiser() -> DenoiserConfig:
    """Full-scale reconstruction: 8 layers, factor 1024, attention 8x64.

    Per-layer widths beyond the printed factor/attention structure are an
    approximation; documented as such.
    """
    return DenoiserConfig(
        widths=[128, 256, 512, 512, 1024, 1024, 1024, 1024],
        factors=[1, 4, 4, 4, 2, 2, 2, 2],
        onset_widths=[32, 32, 64, 64, 128, 128, 128, 128],
        attention_layers=[4, 5, 6, 7],
        n_heads=8,
        head_features=64,
        context_dim=512,
        total_factor=1024,
        audio_channels=1,
        sample_rate=48000,
        window=2 ** 18,
    )


def make_config(preset: str = "desk") -> RunConfig:
    if preset == "desk":
        return RunConfig(
            preset="desk",
            sample_rate=8000,
            window=2 ** 14,
            fps=15.0,
            chunk_seconds=2.0,
            embedding_dim=64,
            detector=DetectorConfig(width=8, image_size=64),
            denoiser=desk_denoiser(),
            detector_train=TrainConfig(batch_size=8, lr=3e-4, weight_decay=1e-3,
                                       max_steps=600, ckpt_every=50),
            diffusion_train=TrainConfig(batch_size=2, lr=2e-4, weight_decay=1e-3,
                                        max_steps=3500, ckpt_every=100),
            sampler_steps=25,
            cfg_scale=2.0,
        )
    if preset == "paper":
        return RunConfig(
            preset="paper",
            sample_rate=48000,
            window=2 ** 18,
            fps=15.0,
            chunk_seconds=2.0,
            embedding_dim=512,
            detector=DetectorConfig(width=64),
            denoiser=paper_denoiser(),
            # paper training recipe: detector bs 16 / diffusion bs 2, AdamW,
            # lr 1e-4, weight decay 1e-3
            detector_train=TrainConfig(batch_size=16, lr=1e-4, weight_decay=1e-3,
                                       max_steps=100_000),
            diffusion_train=TrainConfig(batch_size=2, lr=1e-4, weight_decay=1e-3,
                                        max_steps=1_000_000),
            sampler_steps=50,
            cfg_scale=2.0,
        )
    raise ValueError(f"unknown preset: {preset!r} (expected 'desk' or 'paper')")


def _apply_overrides(obj, overrides: dict, path: str = ""):
    for key, value in overrides.items():
        if not hasattr(obj, key):
            raise ValueError(f"unknown config key: {path}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _apply_overrides(current, value, path=f"{path}{key}.")
        else:
            setattr(obj, key, type(current)(value) if current is not None else value)


def load_config(path: Path | None = None, preset: str | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Preset -> YAML file -> explicit overrides, later layers win."""
    doc = {}
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"config file {path} must contain a mapping")
    chosen = preset or doc.pop("preset", "desk")
    cfg = make_config(chosen)
    _apply_overrides(cfg, doc)
    if overrides:
        _apply_overrides(cfg, overrides)
    cfg.denoiser.__post_init__()  # re-validate factor/width invariants after overrides
    return cfg
