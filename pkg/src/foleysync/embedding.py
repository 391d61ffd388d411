"""Audio/text conditioning embedding providers.

A provider maps audio clips and text queries into one shared d-dimensional
space (CLAP-style) and supplies the constant null embedding used for
classifier-free guidance dropout. Two implementations:

* ToyClapProvider (d=64): a small conv encoder over raw waveforms plus a
  hash-bucket text table, trained contrastively on the synthetic corpus.
  Self-contained, CPU-fast, used for desk-scale runs and FAD.
* ExternalClapProvider (d=512): thin adapter over a pretrained checkpoint,
  config-selected for paper-faithful runs; optional dependency.

FAD values are provider-relative and must never be compared across providers.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.signal import resample_poly

from foleysync import dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConditioningEmbedding:
    vector: np.ndarray  # float32 [d]
    modality: str  # "audio" | "text" | "null"


def _null(dim: int) -> ConditioningEmbedding:
    return ConditioningEmbedding(vector=np.zeros(dim, dtype=np.float32), modality="null")


def _text_bucket(query: str, n_buckets: int) -> int:
    digest = hashlib.sha1(query.strip().lower().encode("utf-8")).hexdigest()
    return int(digest, 16) % n_buckets


class _AudioEncoder(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv1d(1, 16, 31, stride=4, padding=15), nn.GELU(),
            nn.Conv1d(16, 32, 31, stride=4, padding=15), nn.GELU(),
            nn.Conv1d(32, 64, 31, stride=4, padding=15), nn.GELU(),
        )
        self.proj = nn.Linear(64, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.convs(x)
        return self.proj(h.mean(dim=-1))


class ToyClapProvider(nn.Module):
    """Joint audio/text embedding trained on class labels of the synthetic corpus.

    Text queries index a fixed hash-bucket embedding table (deterministic
    across processes), so unseen queries still yield valid vectors; only the
    buckets hit by training labels carry aligned representations. Outputs are
    always L2-normalized.
    """

    MIN_SAMPLES = 2048
    TRAIN_SAMPLES = 8192

    def __init__(self, dim: int = 64, sr: int = 8000, n_buckets: int = 256, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.dim = dim
        self.sr = sr
        self.n_buckets = n_buckets
        self.provider_id = f"toy-clap-d{dim}"
        self.audio_encoder = _AudioEncoder(dim)
        self.text_table = nn.Embedding(n_buckets, dim)
        self.logit_scale = nn.Parameter(torch.tensor(float(np.log(1 / 0.07))))

    # -- encoding -----------------------------------------------------------

    def _prepare(self, clip: np.ndarray, sr: int, warn_short: bool = True) -> torch.Tensor:
        clip = np.asarray(clip, dtype=np.float32).ravel()
        if sr != self.sr:
            clip = resample_poly(clip, self.sr, sr).astype(np.float32)
        if clip.size < self.MIN_SAMPLES:
            # routine for onset-to-onset training segments, so callers may mute
            log.log(logging.WARNING if warn_short else logging.DEBUG,
                    "clip of %d samples below provider minimum %d, zero-padding",
                    clip.size, self.MIN_SAMPLES)
            clip = np.pad(clip, (0, self.MIN_SAMPLES - clip.size))
        peak = float(np.abs(clip).max())
        if peak > 0:
            clip = clip / peak
        return torch.from_numpy(clip)[None, None, :]

    def _encode_audio(self, batch: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.audio_encoder(batch), dim=-1)

    def _encode_text(self, queries: list[str]) -> torch.Tensor:
        idx = torch.tensor([_text_bucket(q, self.n_buckets) for q in queries])
        return F.normalize(self.text_table(idx), dim=-1)

    # -- provider interface -------------------------------------------------

    @torch.no_grad()
    def embed_audio(self, clip: np.ndarray, sr: int,
                    warn_short: bool = True) -> ConditioningEmbedding:
        self.eval()
        vec = self._encode_audio(self._prepare(clip, sr, warn_short=warn_short))[0]
        return ConditioningEmbedding(vector=vec.numpy().astype(np.float32), modality="audio")

    @torch.no_grad()
    def embed_text(self, query: str) -> ConditioningEmbedding:
        if not query or not query.strip():
            raise ValueError("text query must be non-empty")
        self.eval()
        vec = self._encode_text([query])[0]
        return ConditioningEmbedding(vector=vec.numpy().astype(np.float32), modality="text")

    def null_embedding(self) -> ConditioningEmbedding:
        return _null(self.dim)

    # -- persistence ---------------------------------------------------------

    def save(self, path: Path) -> None:
        torch.save({"kind": "toy", "dim": self.dim, "sr": self.sr,
                    "n_buckets": self.n_buckets,
                    "state_dict": self.state_dict()}, path)

    @classmethod
    def load(cls, path: Path) -> "ToyClapProvider":
        payload = torch.load(path, map_location="cpu", weights_only=True)
        provider = cls(dim=payload["dim"], sr=payload["sr"], n_buckets=payload["n_buckets"])
        provider.load_state_dict(payload["state_dict"])
        provider.eval()
        return provider


def _training_segments(root: Path, ids: list[str], sr: int,
                       rng: np.random.Generator) -> dict[str, list[np.ndarray]]:
    """Conditioning-style segments (onset to next onset) grouped by material."""
    by_label: dict[str, list[np.ndarray]] = {}
    for cid in ids:
        pair = dataset.load_media_pair(root, cid)
        audio, file_sr = pair.load_audio()
        if file_sr != sr:
            raise dataset.DataError(f"clip {cid}: expected {sr} Hz audio, got {file_sr}")
        label = pair.annotations[0].material if pair.annotations else ""
        times = pair.onset_times
        bounds = [int(t * sr) for t in times] + [len(audio)]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            if hi > lo:
                by_label.setdefault(label, []).append(audio[lo:hi])
    return by_label


def _fixed_length(seg: np.ndarray, n: int) -> np.ndarray:
    if len(seg) >= n:
        return seg[:n]
    return np.pad(seg, (0, n - len(seg)))


def fit_toy_provider(corpus_root: Path, ids: list[str], *, dim: int = 64, sr: int = 8000,
                     steps: int = 300, lr: float = 3e-3, seed: int = 0) -> ToyClapProvider:
    """Contrastive fit: one segment per class per step, symmetric InfoNCE.

    Batches contain exactly one item per class, so the similarity matrix has
    diagonal targets in both directions.
    """
    rng = np.random.default_rng(seed)
    provider = ToyClapProvider(dim=dim, sr=sr, seed=seed)
    segments = _training_segments(Path(corpus_root), ids, sr, rng)
    labels = sorted(segments)
    if len(labels) < 2:
        raise dataset.DataError("toy provider needs at least two classes to contrast")

    opt = torch.optim.AdamW(provider.parameters(), lr=lr, weight_decay=1e-4)
    n = provider.TRAIN_SAMPLES
    provider.train()
    for step in range(steps):
        batch = []
        for label in labels:
            pool = segments[label]
            seg = pool[int(rng.integers(0, len(pool)))]
            seg = _fixed_length(seg, n)
            peak = float(np.abs(seg).max())
            batch.append(seg / peak if peak > 0 else seg)
        audio = torch.from_numpy(np.stack(batch).astype(np.float32))[:, None, :]
        a = provider._encode_audio(audio)
        t = provider._encode_text(labels)
        logits = provider.logit_scale.exp() * (a @ t.T)
        target = torch.arange(len(labels))
        loss = 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 100 == 0:
            log.info("toy provider step %d loss %.4f", step, loss.item())
    provider.eval()
    return provider


class ExternalClapProvider:
    """Adapter over a pretrained audio-text checkpoint (optional dependency).

    Requires the `transformers` package and a locally available model; raises
    RuntimeError with the underlying reason when unavailable.
    """

    def __init__(self, model_name: str = "laion/clap-htsat-unfused", dim: int = 512):
        self.dim = dim
        self.provider_id = f"external-clap:{model_name}"
        try:
            from transformers import ClapModel, ClapProcessor

            self._model = ClapModel.from_pretrained(model_name)
            self._processor = ClapProcessor.from_pretrained(model_name)
            self._model.eval()
        except Exception as exc:  # import error, missing weights, no network
            raise RuntimeError(f"external embedding provider unavailable: {exc}") from exc

    @torch.no_grad()
    def embed_audio(self, clip: np.ndarray, sr: int,
                    warn_short: bool = True) -> ConditioningEmbedding:
        clip = np.asarray(clip, dtype=np.float32).ravel()
        target_sr = 48000
        if sr != target_sr:
            clip = resample_poly(clip, target_sr, sr).astype(np.float32)
        inputs = self._processor(audios=clip, sampling_rate=target_sr, return_tensors="pt")
        vec = self._model.get_audio_features(**inputs)[0]
        vec = F.normalize(vec, dim=-1).numpy().astype(np.float32)
        return ConditioningEmbedding(vector=vec, modality="audio")

    @torch.no_grad()
    def embed_text(self, query: str) -> ConditioningEmbedding:
        if not query or not query.strip():
            raise ValueError("text query must be non-empty")
        inputs = self._processor(text=[query], return_tensors="pt")
        vec = self._model.get_text_features(**inputs)[0]
        vec = F.normalize(vec, dim=-1).numpy().astype(np.float32)
        return ConditioningEmbedding(vector=vec, modality="text")

    def null_embedding(self) -> ConditioningEmbedding:
        return _null(self.dim)


def load_provider(path: Path):
    """Load a saved provider checkpoint (currently only the toy kind)."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("kind") != "toy":
        raise ValueError(f"unknown provider checkpoint kind: {payload.get('kind')!r}")
    return ToyClapProvider.load(path)
