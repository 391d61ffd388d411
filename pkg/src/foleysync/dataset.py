"""Corpus ingestion, chunk/window extraction, and the synthetic desk corpus.

Corpus layout: ``<root>/<clip-id>.video.npz`` (uint8 frames [T,H,W,C] plus
fps; ``.video.mp4`` is also accepted when OpenCV is available),
``<root>/<clip-id>.audio.wav`` (16-bit PCM), and
``<root>/<clip-id>.annotations.tsv`` with one event per line:
``time<TAB>material<TAB>action`` (time in seconds as a decimal string).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torchvision.transforms.functional as TF
from scipy.io import wavfile

log = logging.getLogger(__name__)

MATERIAL_NAMES = ["metal", "wood", "glass", "plastic", "ceramic", "leaf", "water", "cloth"]


class DataError(Exception):
    """Corpus-level failure: missing/corrupt files, empty corpus, bad windows."""


class WindowRejected(DataError):
    """Audio window contains no onset and is excluded from training/eval."""


@dataclass(frozen=True)
class OnsetAnnotation:
    time: float
    material: str = ""
    action: str = ""


@dataclass
class MediaPair:
    """One corpus element: a video reference, its audio track, and annotations."""

    id: str
    video: "VideoSource"
    audio_path: Path
    annotations: list[OnsetAnnotation]
    duration: float

    @property
    def onset_times(self) -> np.ndarray:
        return np.array([a.time for a in self.annotations], dtype=np.float64)

    def load_audio(self) -> tuple[np.ndarray, int]:
        return read_wav(self.audio_path)


@dataclass
class SplitManifest:
    train: list[str]
    val: list[str]
    test: list[str]
    seed: int

    @property
    def all_ids(self) -> list[str]:
        return self.train + self.val + self.test


@dataclass
class VideoChunk:
    """Fixed-length frame stack with a per-frame binary onset label."""

    frames: torch.Tensor  # [T, C, H, W]
    fps: float
    onset_label: np.ndarray  # int64 in {0,1}, length T


@dataclass
class AudioWindow:
    """Training/eval window: waveform plus aligned audio-rate onset track."""

    samples: np.ndarray  # float32, length L
    sr: int
    onset_track: np.ndarray  # uint8 in {0,1}, length L
    first_onset_index: int
    onset_times: np.ndarray  # seconds relative to window start, ascending
    conditioning_clip: np.ndarray | None = None


@dataclass
class FrameStats:
    mean: np.ndarray  # per-channel, length 3
    std: np.ndarray


# ---------------------------------------------------------------------------
# Media I/O
# ---------------------------------------------------------------------------


class VideoSource:
    """Frame-addressable video. Backed by an .npz frame stack or an .mp4."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._frames = None
        if self.path.suffix == ".npz":
            with np.load(self.path) as data:
                self._frames = np.ascontiguousarray(data["frames"])
                self.fps = float(data["fps"])
            self.n_frames = self._frames.shape[0]
        elif self.path.suffix == ".mp4":
            import cv2

            cap = cv2.VideoCapture(str(self.path))
            if not cap.isOpened():
                raise DataError(f"cannot open video {self.path}")
            self.fps = cap.get(cv2.CAP_PROP_FPS)
            self.n_frames = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
            cap.release()
        else:
            raise DataError(f"unsupported video container: {self.path}")

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps

    def read_frames(self, start: int, count: int) -> np.ndarray:
        """uint8 frames [count, H, W, C], raising on out-of-range or decode failure."""
        if start < 0 or start + count > self.n_frames:
            raise DataError(
                f"frame range [{start}, {start + count}) outside video of {self.n_frames} frames")
        if self._frames is not None:
            return self._frames[start:start + count]
        import cv2

        cap = cv2.VideoCapture(str(self.path))
        cap.set(cv2.CAP_PROP_POS_FRAMES, start)
        out = []
        for k in range(count):
            ok, frame = cap.read()
            if not ok:
                cap.release()
                raise DataError(f"decode failure at frame {start + k} of {self.path}")
            out.append(frame[:, :, ::-1])  # BGR -> RGB
        cap.release()
        return np.stack(out)


def read_wav(path: Path) -> tuple[np.ndarray, int]:
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    else:
        data = data.astype(np.float32)
    if data.ndim > 1:
        data = data.mean(axis=1)
    return data, int(sr)


def write_wav(path: Path, samples: np.ndarray, sr: int) -> None:
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, sr, (clipped * 32767.0).astype(np.int16))


def read_annotations(path: Path) -> list[OnsetAnnotation]:
    """Parse the TSV normal form; sorts by time and drops exact duplicates."""
    events = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        try:
            t = float(parts[0])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad time field {parts[0]!r}") from exc
        if t < 0:
            raise DataError(f"{path}:{lineno}: negative onset time {t}")
        material = parts[1] if len(parts) > 1 else ""
        action = parts[2] if len(parts) > 2 else ""
        events.append(OnsetAnnotation(time=t, material=material, action=action))
    events.sort(key=lambda a: a.time)
    unique = []
    for ev in events:
        if unique and ev.time == unique[-1].time:
            log.warning("%s: duplicate onset time %.6f dropped", path, ev.time)
            continue
        unique.append(ev)
    return unique


def write_annotations(path: Path, annotations: list[OnsetAnnotation]) -> None:
    lines = [f"{a.time!r}\t{a.material}\t{a.action}" for a in annotations]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def load_media_pair(root: Path, clip_id: str) -> MediaPair:
    root = Path(root)
    npz = root / f"{clip_id}.video.npz"
    mp4 = root / f"{clip_id}.video.mp4"
    video = VideoSource(npz if npz.exists() else mp4)
    audio_path = root / f"{clip_id}.audio.wav"
    if not audio_path.exists():
        raise DataError(f"missing audio for clip {clip_id}")
    annotations = read_annotations(root / f"{clip_id}.annotations.tsv")

    duration = video.duration
    audio, sr = read_wav(audio_path)
    audio_duration = len(audio) / sr
    if abs(audio_duration - duration) > 1.0 / video.fps + 1e-6:
        raise DataError(
            f"clip {clip_id}: audio ({audio_duration:.3f}s) and video ({duration:.3f}s) "
            "durations differ by more than one frame")
    bad = [a.time for a in annotations if a.time >= duration]
    if bad:
        raise DataError(f"clip {clip_id}: annotations beyond clip duration: {bad}")
    return MediaPair(id=clip_id, video=video, audio_path=audio_path,
                     annotations=annotations, duration=duration)


def split_counts(n: int) -> tuple[int, int, int]:
    """70/10/20 split sizes: floor for train, round for val, remainder test."""
    n_train = int(math.floor(0.7 * n))
    n_val = int(round(0.1 * n))
    return n_train, n_val, n - n_train - n_val


def load_manifest(corpus_root: Path, seed: int) -> SplitManifest:
    """Deterministic 70/10/20 split over all valid clips under corpus_root.

    A clip is valid when its audio, video, and annotation files all exist;
    clips with a missing annotation file are rejected with a warning.
    """
    root = Path(corpus_root)
    ids = sorted(p.name[:-len(".audio.wav")] for p in root.glob("*.audio.wav"))
    valid = []
    for clip_id in ids:
        if not (root / f"{clip_id}.annotations.tsv").exists():
            log.warning("clip %s rejected: missing annotation file", clip_id)
            continue
        if not ((root / f"{clip_id}.video.npz").exists()
                or (root / f"{clip_id}.video.mp4").exists()):
            log.warning("clip %s rejected: missing video file", clip_id)
            continue
        valid.append(clip_id)
    if not valid:
        raise DataError(f"no valid clips under {root}")

    order = np.random.default_rng(seed).permutation(len(valid))
    shuffled = [valid[i] for i in order]
    n_train, n_val, _ = split_counts(len(shuffled))
    return SplitManifest(
        train=shuffled[:n_train],
        val=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Rasterization and extraction
# ---------------------------------------------------------------------------


def rasterize_onsets(annotations, rate: float, length: int) -> np.ndarray:
    """Binary vector where element i is 1 iff an onset falls in [i/rate, (i+1)/rate).

    Accepts OnsetAnnotation lists or plain arrays of times. Times at or past
    length/rate are ignored with a warning. Duplicate times collapse to one.
    """
    if rate <= 0 or length <= 0:
        raise ValueError("rate and length must be positive")
    if len(annotations) and isinstance(annotations[0], OnsetAnnotation):
        times = np.array([a.time for a in annotations], dtype=np.float64)
    else:
        times = np.asarray(annotations, dtype=np.float64)
    track = np.zeros(int(length), dtype=np.int64)
    if times.size == 0:
        return track
    idx = np.floor(times * rate).astype(np.int64)
    in_range = (times >= 0) & (idx < length)
    n_out = int(np.count_nonzero(~in_range))
    if n_out:
        log.warning("%d onset(s) beyond rasterization range ignored", n_out)
    track[idx[in_range]] = 1
    return track


def extract_video_chunk(pair: MediaPair, start: float, duration: float = 2.0,
                        fps: float = 15.0) -> VideoChunk:
    """Frame stack of duration*fps frames starting at `start` seconds.

    Frames are sampled at the requested fps from the source (nearest earlier
    source frame); the onset label is the rasterization of the annotation
    times shifted by -start.
    """
    n_frames = duration * fps
    if abs(n_frames - round(n_frames)) > 1e-9:
        raise ValueError(f"duration*fps must be integral, got {n_frames}")
    t = int(round(n_frames))
    if start < -1e-9 or start + duration > pair.duration + 1e-9:
        raise DataError(
            f"window [{start:.3f}, {start + duration:.3f}) exceeds clip {pair.id} "
            f"of {pair.duration:.3f}s")

    src_fps = pair.video.fps
    if abs(src_fps - fps) < 1e-9:
        first = int(round(start * fps))
        frames = pair.video.read_frames(first, t)
    else:
        idx = np.floor((start + np.arange(t) / fps) * src_fps).astype(np.int64)
        idx = np.clip(idx, 0, pair.video.n_frames - 1)
        frames = np.stack([pair.video.read_frames(int(i), 1)[0] for i in idx])

    shifted = pair.onset_times - start
    label = rasterize_onsets(shifted[(shifted >= 0) & (shifted < duration)], fps, t)
    tensor = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2)
    return VideoChunk(frames=tensor, fps=fps, onset_label=label)


def preprocess_frames(frames: torch.Tensor, augment: bool, stats: FrameStats,
                      generator: torch.Generator | None = None,
                      size: int = 112) -> torch.Tensor:
    """Resize/augment/normalize a [T, C, H, W] frame stack to [T, C, size, size].

    augment=False: resize straight to `size` and channel-normalize.
    augment=True: resize to size*8//7 (128 for the default 112), random-crop
    to `size`, color jitter (brightness, contrast, saturation factors in
    [0.8, 1.2], one draw per chunk), then normalize. All randomness comes
    from `generator`.
    """
    if frames.shape[-1] < 8 or frames.shape[-2] < 8:
        raise ValueError(f"frames too small to preprocess: {tuple(frames.shape)}")
    x = frames.float() / 255.0 if frames.dtype == torch.uint8 else frames.float()
    if not augment:
        x = TF.resize(x, [size, size], antialias=True)
    else:
        if generator is None:
            generator = torch.Generator()
        big = size * 8 // 7
        x = TF.resize(x, [big, big], antialias=True)
        top = int(torch.randint(0, big - size + 1, (1,), generator=generator))
        left = int(torch.randint(0, big - size + 1, (1,), generator=generator))
        x = x[..., top:top + size, left:left + size]
        factors = 0.8 + 0.4 * torch.rand(3, generator=generator)
        x = TF.adjust_brightness(x, float(factors[0]))
        x = TF.adjust_contrast(x, float(factors[1]))
        x = TF.adjust_saturation(x, float(factors[2]))
    mean = torch.as_tensor(stats.mean, dtype=x.dtype).view(1, -1, 1, 1)
    std = torch.as_tensor(stats.std, dtype=x.dtype).view(1, -1, 1, 1)
    return (x - mean) / std


def compute_frame_stats(root: Path, train_ids: list[str], frames_per_clip: int = 8) -> FrameStats:
    """Per-channel mean/std over a uniform frame subsample of the training split."""
    acc = []
    for clip_id in train_ids:
        pair = load_media_pair(root, clip_id)
        picks = np.linspace(0, pair.video.n_frames - 1, frames_per_clip).astype(int)
        frames = np.stack([pair.video.read_frames(int(i), 1)[0] for i in picks])
        acc.append(frames.reshape(-1, frames.shape[-1]).astype(np.float64) / 255.0)
    stacked = np.concatenate(acc, axis=0)
    std = stacked.std(axis=0)
    return FrameStats(mean=stacked.mean(axis=0), std=np.where(std < 1e-6, 1.0, std))


def save_frame_stats(path: Path, stats: FrameStats) -> None:
    with open(path, "w") as fh:
        fh.write("mean=" + ",".join(repr(float(v)) for v in stats.mean) + "\n")
        fh.write("std=" + ",".join(repr(float(v)) for v in stats.std) + "\n")


def load_frame_stats(path: Path) -> FrameStats:
    values = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, payload = line.split("=", 1)
            values[key.strip()] = np.array([float(v) for v in payload.split(",")])
    if "mean" not in values or "std" not in values:
        raise DataError(f"stats file {path} missing mean/std")
    return FrameStats(mean=values["mean"], std=values["std"])


def extract_audio_window(pair: MediaPair, start: float, length: int = 2 ** 18,
                         sr: int = 48000) -> AudioWindow:
    """Waveform window with aligned audio-rate onset track.

    Samples before the first in-window onset are zeroed; a window without any
    onset raises WindowRejected (such windows are excluded from training and
    evaluation).
    """
    audio, file_sr = pair.load_audio()
    if file_sr != sr:
        raise DataError(f"clip {pair.id}: audio is {file_sr} Hz, expected {sr} Hz")
    s0 = int(round(start * sr))
    if s0 < 0 or s0 + length > len(audio):
        raise DataError(
            f"audio window [{s0}, {s0 + length}) exceeds clip {pair.id} of {len(audio)} samples")
    samples = audio[s0:s0 + length].astype(np.float32).copy()

    shifted = pair.onset_times - start
    in_window = shifted[(shifted >= 0) & (shifted < length / sr)]
    track = rasterize_onsets(in_window, sr, length).astype(np.uint8)
    nonzero = np.flatnonzero(track)
    if nonzero.size == 0:
        raise WindowRejected(f"clip {pair.id}: window at {start:.3f}s has no onset")
    first = int(nonzero[0])
    samples[:first] = 0.0
    return AudioWindow(samples=samples, sr=sr, onset_track=track,
                       first_onset_index=first, onset_times=np.sort(in_window))


def sample_conditioning_segment(window: AudioWindow, rng: np.random.Generator) -> np.ndarray:
    """Slice from a uniformly chosen onset to the next one (or window end)."""
    if window.onset_times.size == 0:
        raise ValueError("window has no onsets to sample a conditioning segment from")
    i = int(rng.integers(0, window.onset_times.size))
    lo = int(math.floor(window.onset_times[i] * window.sr))
    if i + 1 < window.onset_times.size:
        hi = int(math.floor(window.onset_times[i + 1] * window.sr))
    else:
        hi = len(window.samples)
    return window.samples[lo:hi].copy()


# ---------------------------------------------------------------------------
# Synthetic desk-scale corpus
# ---------------------------------------------------------------------------


def synthetic_tone_frequency(class_index: int) -> float:
    return 280.0 * (1.32 ** class_index)


def _render_synthetic_audio(times: np.ndarray, clip_seconds: float, sr: int,
                            freq: float, rng: np.random.Generator) -> np.ndarray:
    n = int(round(clip_seconds * sr))
    audio = rng.normal(0.0, 1e-4, n)
    tone_len = int(0.6 * sr)
    ramp = np.arange(tone_len) / sr
    tone = 0.6 * np.exp(-ramp / 0.06) * np.sin(2 * np.pi * freq * ramp)
    for t in times:
        s = int(round(t * sr))
        seg = min(tone_len, n - s)
        audio[s:s + seg] += tone[:seg]
    peak = np.abs(audio).max()
    if peak > 0.9:
        audio *= 0.9 / peak
    return audio


def _render_synthetic_video(times: np.ndarray, clip_seconds: float, fps: float,
                            rng: np.random.Generator, size: int = 64) -> np.ndarray:
    t_frames = int(round(clip_seconds * fps))
    frames = rng.integers(12, 28, (t_frames, size, size, 3)).astype(np.uint8)
    onset_frames = set(int(math.floor(t * fps)) for t in times)

    yy, xx = np.mgrid[0:size, 0:size]
    pos = rng.integers(14, size - 14, 2)
    for k in range(t_frames):
        if k in onset_frames:
            pos = rng.integers(14, size - 14, 2)  # dot translates on each action
            mask = (yy - pos[0]) ** 2 + (xx - pos[1]) ** 2 <= 10 ** 2
            frames[k][mask] = 255
        else:
            mask = (yy - pos[0]) ** 2 + (xx - pos[1]) ** 2 <= 5 ** 2
            frames[k][mask] = 90
    return frames


def make_synthetic_dataset(out_dir: Path, n_clips: int = 30, clip_seconds: float = 8.0,
                           fps: float = 15.0, sr: int = 8000, n_classes: int = 3,
                           seed: int = 0) -> list[str]:
    """Generate a ground-truth corpus of flashing-dot videos with class tones.

    Onset times follow a renewal process with a 0.25 s refractory period and
    exponential gaps (mean inter-onset 1.5 s). Each class c sounds as an
    exponentially decaying tone at its own frequency; the material label is
    the class name. Annotation times equal the rendered event times exactly
    (quantized to the audio sample grid).
    """
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = []
    for i in range(n_clips):
        clip_id = f"clip{i:04d}"
        cls = i % n_classes
        material = MATERIAL_NAMES[cls] if cls < len(MATERIAL_NAMES) else f"mat{cls}"

        times = []
        t = 0.25 + rng.exponential(1.25)
        while t < clip_seconds - 0.35:
            times.append(t)
            t += 0.25 + rng.exponential(1.25)
        if not times:
            times = [float(rng.uniform(0.5, clip_seconds - 0.5))]
        # annotation times sit exactly on the audio sample grid
        times = np.array([round(t * sr) / sr for t in times])

        audio = _render_synthetic_audio(times, clip_seconds, sr, synthetic_tone_frequency(cls), rng)
        frames = _render_synthetic_video(times, clip_seconds, fps, rng)

        np.savez_compressed(out / f"{clip_id}.video.npz", frames=frames, fps=fps)
        write_wav(out / f"{clip_id}.audio.wav", audio, sr)
        write_annotations(out / f"{clip_id}.annotations.tsv",
                          [OnsetAnnotation(time=float(t), material=material, action="hit")
                           for t in times])
        ids.append(clip_id)
    log.info("synthetic corpus: %d clips, %d classes, %.1fs at %d Hz / %.0f fps",
             n_clips, n_classes, clip_seconds, sr, fps)
    return ids
