import os

import numpy as np
import pytest

os.environ.setdefault("MPLBACKEND", "Agg")

from foleysync import dataset, embedding


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """Shared 10-clip synthetic corpus (8 s, 8 kHz, 15 fps, 3 classes)."""
    root = tmp_path_factory.mktemp("corpus")
    ids = dataset.make_synthetic_dataset(root, n_clips=10, clip_seconds=8.0,
                                         fps=15.0, sr=8000, n_classes=3, seed=7)
    return root, ids


@pytest.fixture(scope="session")
def fitted_provider(synth_corpus):
    root, ids = synth_corpus
    return embedding.fit_toy_provider(root, ids, steps=300, seed=0)


@pytest.fixture()
def mini_clip(tmp_path):
    """Single handcrafted clip: onsets at exactly 0.5 s and 1.5 s, 8 s long."""
    sr, fps, seconds = 8000, 15.0, 8.0
    times = [0.5, 1.5]
    n = int(seconds * sr)
    audio = np.zeros(n)
    ramp = np.arange(int(0.05 * sr)) / sr
    burst = 0.7 * np.exp(-ramp / 0.008) * np.sin(2 * np.pi * 900 * ramp)
    for t in times:
        s = int(round(t * sr))
        audio[s:s + len(burst)] += burst
    frames = np.full((int(seconds * fps), 64, 64, 3), 20, dtype=np.uint8)
    np.savez_compressed(tmp_path / "mini.video.npz", frames=frames, fps=fps)
    dataset.write_wav(tmp_path / "mini.audio.wav", audio, sr)
    dataset.write_annotations(
        tmp_path / "mini.annotations.tsv",
        [dataset.OnsetAnnotation(t, "metal", "hit") for t in times])
    return tmp_path, "mini"
