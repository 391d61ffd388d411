"""1D UNet denoiser with onset-track conditioning and cross-attention.

The network S(x_t, sigma, onsets, embedding) predicts the v-target. Onset
tracks at audio rate pass through a convolutional encoder that mirrors the
UNet encoder stage for stage; each stage's features are injected into the
UNet by channel concatenation at the matching resolution. The conditioning
embedding enters through single-token cross-attention at the attention
layers, and sigma through a sinusoidal embedding added inside every residual
block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class DenoiserConfig:
    widths: list[int]
    factors: list[int]
    onset_widths: list[int]
    attention_layers: list[int]  # encoder/decoder stage indices with attention
    n_heads: int
    head_features: int
    context_dim: int
    total_factor: int
    audio_channels: int = 1
    sample_rate: int = 8000
    window: int = 2 ** 14
    time_dim: int = 128
    kernel: int = 3

    def __post_init__(self):
        n = len(self.widths)
        if not (len(self.factors) == len(self.onset_widths) == n):
            raise ValueError("widths, factors, and onset_widths must have equal length")
        prod = math.prod(self.factors)
        if prod != self.total_factor:
            raise ValueError(
                f"stride factors {self.factors} multiply to {prod}, "
                f"declared total factor is {self.total_factor}")
        if any(f < 1 for f in self.factors):
            raise ValueError("stride factors must be >= 1")
        if any(i < 0 or i >= n for i in self.attention_layers):
            raise ValueError(f"attention layer index out of range for {n} layers")
        if self.window % self.total_factor != 0:
            raise ValueError(
                f"window {self.window} not divisible by total factor {self.total_factor}")
        if self.time_dim % 2 != 0:
            raise ValueError("time_dim must be even (sin/cos pairs)")

    @property
    def n_layers(self) -> int:
        return len(self.widths)

    def stage_lengths(self, length: int) -> list[int]:
        """Input length of each encoder stage for a given waveform length."""
        out = []
        for f in self.factors:
            out.append(length)
            length //= f
        return out


def _groups(channels: int) -> int:
    return next(g for g in (8, 4, 2, 1) if channels % g == 0)


def sinusoidal_embedding(sigma: torch.Tensor, dim: int) -> torch.Tensor:
    """Fixed sin/cos features of the noise level, geometric frequency ladder."""
    half = dim // 2
    freqs = torch.exp(torch.linspace(math.log(1.0), math.log(1000.0), half,
                                     device=sigma.device))
    angles = sigma[:, None].float() * freqs[None, :] * math.pi
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class ResBlock1d(nn.Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int, kernel: int):
        super().__init__()
        pad = kernel // 2
        self.norm1 = nn.GroupNorm(_groups(c_in), c_in)
        self.conv1 = nn.Conv1d(c_in, c_out, kernel, padding=pad)
        self.time_proj = nn.Linear(time_dim, c_out)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel, padding=pad)
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(t)[:, :, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class AttentionBlock1d(nn.Module):
    """Pre-norm self-attention over time plus single-token cross-attention."""

    def __init__(self, channels: int, n_heads: int, head_features: int, context_dim: int):
        super().__init__()
        inner = n_heads * head_features
        self.n_heads = n_heads
        self.norm_self = nn.GroupNorm(_groups(channels), channels)
        self.qkv = nn.Conv1d(channels, inner * 3, 1)
        self.proj_self = nn.Conv1d(inner, channels, 1)
        self.norm_cross = nn.GroupNorm(_groups(channels), channels)
        self.q_cross = nn.Conv1d(channels, inner, 1)
        self.kv_cross = nn.Linear(context_dim, inner * 2)
        self.proj_cross = nn.Conv1d(inner, channels, 1)

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, c, l = x.shape
        return x.reshape(b, self.n_heads, c // self.n_heads, l).transpose(-2, -1)

    def _merge_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, h, l, f = x.shape
        return x.transpose(-2, -1).reshape(b, h * f, l)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        q, k, v = self.qkv(self.norm_self(x)).chunk(3, dim=1)
        attn = F.scaled_dot_product_attention(
            self._split_heads(q), self._split_heads(k), self._split_heads(v))
        x = x + self.proj_self(self._merge_heads(attn))

        q = self._split_heads(self.q_cross(self.norm_cross(x)))
        k, v = self.kv_cross(context).chunk(2, dim=-1)  # [B, inner] each
        b, inner = k.shape
        k = k.reshape(b, self.n_heads, 1, inner // self.n_heads)
        v = v.reshape(b, self.n_heads, 1, inner // self.n_heads)
        attn = F.scaled_dot_product_attention(q, k, v)
        return x + self.proj_cross(self._merge_heads(attn))


class OnsetEncoder(nn.Module):
    """Strided conv stack mirroring the UNet encoder resolutions.

    Produces one feature map per UNet encoder stage; feature i has
    ``onset_widths[i]`` channels at the stage-i output length (waveform
    length divided by the product of the first i+1 factors), so the
    innermost feature sits at length/total_factor.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        ow = config.onset_widths
        self.stem = nn.Conv1d(1, ow[0], 7, padding=3)
        downs = []
        for i in range(config.n_layers):
            f = config.factors[i]
            kernel = 2 * f if f > 1 else 3
            downs.append(nn.Conv1d(ow[i - 1] if i > 0 else ow[0], ow[i], kernel,
                                   stride=f, padding=f // 2 if f > 1 else 1))
        self.downs = nn.ModuleList(downs)

    def forward(self, track: torch.Tensor) -> list[torch.Tensor]:
        if track.ndim == 2:
            track = track[:, None, :]
        length = track.shape[-1]
        if length % self.config.total_factor != 0:
            raise ValueError(
                f"onset track length {length} not divisible by "
                f"total factor {self.config.total_factor}")
        expected = self.config.stage_lengths(length)[1:] + [length // self.config.total_factor]
        h = self.stem(track.float())
        feats = []
        for i, down in enumerate(self.downs):
            h = down(F.gelu(h))
            if h.shape[-1] != expected[i]:  # conv padding arithmetic guard
                h = h[..., :expected[i]]
            feats.append(h)
        return feats


class _Downsample(nn.Module):
    def __init__(self, channels: int, factor: int):
        super().__init__()
        if factor == 1:
            self.op = nn.Conv1d(channels, channels, 3, padding=1)
        else:
            self.op = nn.Conv1d(channels, channels, 2 * factor, stride=factor,
                                padding=factor // 2)
        self.factor = factor

    def forward(self, x):
        out = self.op(x)
        want = x.shape[-1] // self.factor
        return out[..., :want] if out.shape[-1] != want else out


class _Upsample(nn.Module):
    def __init__(self, c_in: int, c_out: int, factor: int):
        super().__init__()
        self.factor = factor
        self.conv = nn.Conv1d(c_in, c_out, 3, padding=1)

    def forward(self, x):
        if self.factor > 1:
            x = F.interpolate(x, scale_factor=self.factor, mode="nearest")
        return self.conv(x)


class UNet1d(nn.Module):
    """Denoiser: v_hat = net(x_t, sigma, onset_track, embedding)."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        w, ow = config.widths, config.onset_widths
        td, k = config.time_dim, config.kernel
        attn = set(config.attention_layers)

        self.onset_encoder = OnsetEncoder(config)
        self.time_mlp = nn.Sequential(
            nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.stem = nn.Conv1d(config.audio_channels, w[0], 7, padding=3)

        self.enc_blocks = nn.ModuleList()
        self.enc_attn = nn.ModuleList()
        self.enc_down = nn.ModuleList()
        for i in range(config.n_layers):
            # onset feature i-1 (stage i-1 output) rides along at this resolution
            c_in = w[0] if i == 0 else w[i - 1] + ow[i - 1]
            self.enc_blocks.append(nn.ModuleList([
                ResBlock1d(c_in, w[i], td, k),
                ResBlock1d(w[i], w[i], td, k),
            ]))
            self.enc_attn.append(
                AttentionBlock1d(w[i], config.n_heads, config.head_features,
                                 config.context_dim) if i in attn else None)
            self.enc_down.append(_Downsample(w[i], config.factors[i]))

        self.mid_block1 = ResBlock1d(w[-1] + ow[-1], w[-1], td, k)
        self.mid_attn = AttentionBlock1d(w[-1], config.n_heads, config.head_features,
                                         config.context_dim)
        self.mid_block2 = ResBlock1d(w[-1], w[-1], td, k)

        self.dec_up = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        self.dec_attn = nn.ModuleList()
        for i in reversed(range(config.n_layers)):
            self.dec_up.append(_Upsample(w[i] if i == config.n_layers - 1 else w[i + 1],
                                         w[i], config.factors[i]))
            self.dec_blocks.append(nn.ModuleList([
                ResBlock1d(2 * w[i], w[i], td, k),
                ResBlock1d(w[i], w[i], td, k),
            ]))
            self.dec_attn.append(
                AttentionBlock1d(w[i], config.n_heads, config.head_features,
                                 config.context_dim) if i in attn else None)

        self.head_norm = nn.GroupNorm(_groups(w[0]), w[0])
        self.head = nn.Conv1d(w[0], config.audio_channels, 7, padding=3)

    def encode_onsets(self, track: torch.Tensor) -> list[torch.Tensor]:
        """Multi-scale onset features; stage i matches UNet encoder stage i."""
        return self.onset_encoder(track)

    def forward(self, x: torch.Tensor, sigma: torch.Tensor, onset_track: torch.Tensor,
                embedding: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.audio_channels:
            raise ValueError(f"expected input [B,{cfg.audio_channels},L], got {tuple(x.shape)}")
        if x.shape[-1] % cfg.total_factor != 0:
            raise ValueError(
                f"input length {x.shape[-1]} not divisible by factor {cfg.total_factor}")
        if onset_track.shape[-1] != x.shape[-1]:
            raise ValueError("onset track length must equal waveform length")
        if not isinstance(sigma, torch.Tensor):
            sigma = torch.tensor(sigma, dtype=x.dtype, device=x.device)
        if sigma.ndim == 0:
            sigma = sigma.expand(x.shape[0])

        t = self.time_mlp(sinusoidal_embedding(sigma, cfg.time_dim))
        context = embedding.to(x.dtype)
        feats = self.encode_onsets(onset_track)

        h = self.stem(x)
        skips = []
        for i in range(cfg.n_layers):
            if i > 0:
                h = torch.cat([h, feats[i - 1]], dim=1)
            for block in self.enc_blocks[i]:
                h = block(h, t)
            if self.enc_attn[i] is not None:
                h = self.enc_attn[i](h, context)
            skips.append(h)
            h = self.enc_down[i](h)

        h = torch.cat([h, feats[-1]], dim=1)
        h = self.mid_block1(h, t)
        h = self.mid_attn(h, context)
        h = self.mid_block2(h, t)

        for j, i in enumerate(reversed(range(cfg.n_layers))):
            h = self.dec_up[j](h)
            h = torch.cat([h, skips[i]], dim=1)
            for block in self.dec_blocks[j]:
                h = block(h, t)
            if self.dec_attn[j] is not None:
                h = self.dec_attn[j](h, context)

        return self.head(F.silu(self.head_norm(h)))
