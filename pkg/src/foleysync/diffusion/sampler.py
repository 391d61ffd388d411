"""Deterministic DDIM sampling in v-parameterization with guidance."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from foleysync.diffusion import schedule


@dataclass
class SamplerConfig:
    steps: int = 50
    cfg_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.cfg_scale < 0:
            raise ValueError("guidance scale must be >= 0")


def cfg_predict(net, xt: torch.Tensor, sigma, onsets: torch.Tensor,
                embedding: torch.Tensor, scale: float) -> torch.Tensor:
    """Guided prediction v_uncond + scale * (v_cond - v_uncond).

    The unconditional branch replaces the embedding with the constant null
    (zeros); the onset track conditions BOTH branches, so guidance never
    pushes the output away from synchronization. Scales 0 and 1 return the
    single relevant branch exactly (and skip the second forward).
    """
    if scale == 1.0:
        return net(xt, sigma, onsets, embedding)
    null = torch.zeros_like(embedding)
    if scale == 0.0:
        return net(xt, sigma, onsets, null)
    v_cond = net(xt, sigma, onsets, embedding)
    v_uncond = net(xt, sigma, onsets, null)
    return v_uncond + scale * (v_cond - v_uncond)


@torch.no_grad()
def ddim_sample(net, onsets: torch.Tensor, embedding: torch.Tensor,
                sampler: SamplerConfig, *, audio_channels: int = 1,
                initial_noise: torch.Tensor | None = None) -> torch.Tensor:
    """Integrate from pure noise at sigma=1 down the uniform sigma grid to 0.

    Each step reconstructs (x0_hat, eps_hat) from the v prediction and
    re-noises at the next grid point. Deterministic given the seed (or an
    explicit initial noise tensor).

    onsets: [L] or [B, 1, L] binary track at audio rate.
    Returns a waveform tensor [B, audio_channels, L].
    """
    if onsets.ndim == 1:
        onsets = onsets[None, None, :]
    elif onsets.ndim == 2:
        onsets = onsets[:, None, :]
    batch, _, length = onsets.shape
    if embedding.ndim == 1:
        embedding = embedding[None, :].expand(batch, -1)

    if initial_noise is None:
        gen = torch.Generator().manual_seed(sampler.seed)
        x = torch.randn(batch, audio_channels, length, generator=gen)
    else:
        x = initial_noise.clone()
    onsets = onsets.to(x.dtype)
    embedding = embedding.to(x.dtype)

    grid = schedule.sigma_grid(sampler.steps).to(x.dtype)
    for k in range(sampler.steps):
        sigma = grid[k].expand(batch)
        v = cfg_predict(net, x, sigma, onsets, embedding, sampler.cfg_scale)
        x0_hat = schedule.reconstruct_x0(x, v, sigma)
        eps_hat = schedule.reconstruct_eps(x, v, sigma)
        alpha_next, beta_next = schedule.alpha_beta(grid[k + 1].expand(batch))
        x = (alpha_next.reshape(-1, 1, 1) * x0_hat
             + beta_next.reshape(-1, 1, 1) * eps_hat)
    return x
