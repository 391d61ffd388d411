"""Toy embedding provider: determinism, alignment, persistence."""

import numpy as np
import pytest

from foleysync import dataset, embedding


@pytest.fixture(scope="session")
def class_embeddings(synth_corpus, fitted_provider):
    root, ids = synth_corpus
    by_label = {}
    for cid in ids:
        pair = dataset.load_media_pair(root, cid)
        audio, sr = pair.load_audio()
        label = pair.annotations[0].material
        by_label.setdefault(label, []).append(fitted_provider.embed_audio(audio, sr).vector)
    return by_label


def test_embed_audio_deterministic(fitted_provider):
    rng = np.random.default_rng(0)
    clip = rng.normal(0, 0.1, 8000)
    a = fitted_provider.embed_audio(clip, 8000)
    b = fitted_provider.embed_audio(clip, 8000)
    assert np.array_equal(a.vector, b.vector)
    assert a.modality == "audio"


def test_embed_audio_normalized_and_finite(fitted_provider):
    rng = np.random.default_rng(1)
    vec = fitted_provider.embed_audio(rng.normal(0, 0.1, 12000), 8000).vector
    assert vec.shape == (64,)
    assert np.isfinite(vec).all()
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-5


def test_embed_silent_clip_valid(fitted_provider):
    vec = fitted_provider.embed_audio(np.zeros(8000), 8000).vector
    assert np.isfinite(vec).all()


def test_embed_short_clip_pads_with_warning(fitted_provider, caplog):
    with caplog.at_level("WARNING"):
        vec = fitted_provider.embed_audio(np.ones(100) * 0.1, 8000).vector
    assert np.isfinite(vec).all()
    assert any("below provider minimum" in r.message for r in caplog.records)


def test_embed_audio_resamples_other_rates(fitted_provider):
    rng = np.random.default_rng(2)
    clip = rng.normal(0, 0.1, 32000)
    a = fitted_provider.embed_audio(clip, 16000)
    b = fitted_provider.embed_audio(clip, 16000)
    assert np.array_equal(a.vector, b.vector)
    assert np.isfinite(a.vector).all()


def test_embed_text_deterministic(fitted_provider):
    a = fitted_provider.embed_text("metal")
    b = fitted_provider.embed_text("metal")
    assert np.array_equal(a.vector, b.vector)
    assert a.modality == "text"


def test_embed_text_unseen_query_valid(fitted_provider):
    vec = fitted_provider.embed_text("rubber duck squeak").vector
    assert vec.shape == (64,)
    assert np.isfinite(vec).all()


def test_embed_text_empty_rejected(fitted_provider):
    with pytest.raises(ValueError):
        fitted_provider.embed_text("")
    with pytest.raises(ValueError):
        fitted_provider.embed_text("   ")


def test_null_embedding_constant(fitted_provider):
    a = fitted_provider.null_embedding()
    b = fitted_provider.null_embedding()
    assert a.modality == "null"
    assert a.vector.shape == (64,)
    assert np.array_equal(a.vector, b.vector)
    assert np.array_equal(a.vector, np.zeros(64, dtype=np.float32))


def test_audio_text_alignment_margin(class_embeddings, fitted_provider):
    names = sorted(class_embeddings)
    text = {n: fitted_provider.embed_text(n).vector for n in names}
    within, cross = [], []
    for n in names:
        for v in class_embeddings[n]:
            for m in names:
                (within if m == n else cross).append(float(v @ text[m]))
    assert np.mean(within) - np.mean(cross) >= 0.2


def test_audio_audio_within_class_similarity(class_embeddings):
    names = sorted(class_embeddings)
    within, cross = [], []
    for i, n in enumerate(names):
        for m in names[i:]:
            for a in class_embeddings[n]:
                for b in class_embeddings[m]:
                    if a is b:
                        continue
                    (within if n == m else cross).append(float(a @ b))
    assert np.mean(within) > np.mean(cross)


def test_provider_save_load_roundtrip(tmp_path, fitted_provider):
    path = tmp_path / "provider.pt"
    fitted_provider.save(path)
    loaded = embedding.load_provider(path)
    clip = np.sin(np.linspace(0, 200, 8000))
    assert np.array_equal(loaded.embed_audio(clip, 8000).vector,
                          fitted_provider.embed_audio(clip, 8000).vector)
    assert np.array_equal(loaded.embed_text("wood").vector,
                          fitted_provider.embed_text("wood").vector)


def test_load_provider_rejects_unknown_kind(tmp_path):
    import torch

    path = tmp_path / "bogus.pt"
    torch.save({"kind": "mystery"}, path)
    with pytest.raises(ValueError):
        embedding.load_provider(path)


def test_fit_requires_two_classes(tmp_path):
    dataset.make_synthetic_dataset(tmp_path, n_clips=2, n_classes=1, seed=0)
    with pytest.raises(dataset.DataError):
        embedding.fit_toy_provider(tmp_path, ["clip0000", "clip0001"])


def test_text_bucket_stable():
    a = embedding._text_bucket("Metal ", 256)
    b = embedding._text_bucket("metal", 256)
    assert a == b  # case/whitespace normalized before hashing
    assert 0 <= a < 256
