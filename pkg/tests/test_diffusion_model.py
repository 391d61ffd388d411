"""Denoiser architecture: config validation, shapes, onset-feature alignment."""

import pytest
import torch

from foleysync.diffusion.model import DenoiserConfig, UNet1d, sinusoidal_embedding


def tiny_config(**overrides):
    kw = dict(widths=[8, 12], factors=[2, 2], onset_widths=[4, 4],
              attention_layers=[1], n_heads=2, head_features=4,
              context_dim=8, total_factor=4, window=256)
    kw.update(overrides)
    return DenoiserConfig(**kw)


@pytest.fixture(scope="module")
def tiny_net():
    torch.manual_seed(0)
    return UNet1d(tiny_config()).eval()


# -- config validation --------------------------------------------------------

def test_config_rejects_mismatched_list_lengths():
    with pytest.raises(ValueError, match="equal length"):
        tiny_config(onset_widths=[4])


def test_config_rejects_factor_product_mismatch():
    with pytest.raises(ValueError, match="multiply to"):
        tiny_config(factors=[2, 4])


def test_config_rejects_zero_factor():
    with pytest.raises(ValueError):
        tiny_config(factors=[0, 4], total_factor=0)


def test_config_rejects_attention_index_out_of_range():
    with pytest.raises(ValueError, match="attention layer index"):
        tiny_config(attention_layers=[2])


def test_config_rejects_indivisible_window():
    with pytest.raises(ValueError, match="not divisible"):
        tiny_config(window=250)


def test_config_rejects_odd_time_dim():
    with pytest.raises(ValueError, match="even"):
        tiny_config(time_dim=129)


def test_stage_lengths_divide_progressively():
    cfg = tiny_config()
    assert cfg.stage_lengths(256) == [256, 128]


# -- sigma embedding ----------------------------------------------------------

def test_sinusoidal_embedding_shape_and_distinctness():
    sig = torch.tensor([0.0, 0.25, 0.5, 1.0])
    emb = sinusoidal_embedding(sig, 64)
    assert emb.shape == (4, 64)
    assert torch.isfinite(emb).all()
    # distinct sigmas map to distinct embeddings
    d = torch.cdist(emb, emb)
    assert (d + torch.eye(4) * 1e9 > 1e-3).all()


# -- forward contract ---------------------------------------------------------

def test_forward_output_shape_matches_input(tiny_net):
    x = torch.randn(2, 1, 256)
    out = tiny_net(x, torch.tensor([0.3, 0.8]), torch.zeros(2, 1, 256),
                   torch.randn(2, 8))
    assert out.shape == (2, 1, 256)
    assert torch.isfinite(out).all()


def test_forward_accepts_scalar_sigma(tiny_net):
    x = torch.randn(2, 1, 256)
    out = tiny_net(x, 0.5, torch.zeros(2, 1, 256), torch.zeros(2, 8))
    assert out.shape == (2, 1, 256)


def test_forward_rejects_indivisible_length(tiny_net):
    with pytest.raises(ValueError, match="not divisible"):
        tiny_net(torch.randn(1, 1, 250), 0.5, torch.zeros(1, 1, 250),
                 torch.zeros(1, 8))


def test_forward_rejects_wrong_channel_count(tiny_net):
    with pytest.raises(ValueError, match="expected input"):
        tiny_net(torch.randn(1, 2, 256), 0.5, torch.zeros(1, 1, 256),
                 torch.zeros(1, 8))


def test_forward_rejects_onset_length_mismatch(tiny_net):
    with pytest.raises(ValueError, match="onset track length"):
        tiny_net(torch.randn(1, 1, 256), 0.5, torch.zeros(1, 1, 128),
                 torch.zeros(1, 8))


def test_forward_handles_multiple_lengths(tiny_net):
    # any length divisible by the total factor works, not just config.window
    for length in (64, 256, 1024):
        x = torch.randn(1, 1, length)
        out = tiny_net(x, 0.5, torch.zeros(1, 1, length), torch.zeros(1, 8))
        assert out.shape == (1, 1, length)


def test_embedding_changes_output(tiny_net):
    x = torch.randn(1, 1, 256)
    onsets = torch.zeros(1, 1, 256)
    a = tiny_net(x, 0.5, onsets, torch.zeros(1, 8))
    b = tiny_net(x, 0.5, onsets, torch.full((1, 8), 0.5))
    assert not torch.allclose(a, b)


def test_onset_track_changes_output(tiny_net):
    x = torch.randn(1, 1, 256)
    track = torch.zeros(1, 1, 256)
    track[0, 0, 100] = 1.0
    a = tiny_net(x, 0.5, torch.zeros(1, 1, 256), torch.zeros(1, 8))
    b = tiny_net(x, 0.5, track, torch.zeros(1, 8))
    assert not torch.allclose(a, b)


# -- onset encoder ------------------------------------------------------------

def encoder_expectations(cfg, length):
    lens, l = [], length
    for f in cfg.factors:
        l //= f
        lens.append(l)
    return lens


@pytest.mark.parametrize("length", [2 ** 12, 2 ** 14])
def test_encode_onsets_matches_encoder_stage_shapes(length):
    cfg = DenoiserConfig(widths=[8, 8, 16, 16, 24, 24], factors=[2] * 6,
                         onset_widths=[4, 4, 8, 8, 8, 8], attention_layers=[5],
                         n_heads=2, head_features=8, context_dim=16,
                         total_factor=64, window=2 ** 14)
    net = UNet1d(cfg)
    feats = net.encode_onsets(torch.zeros(1, 1, length))
    lens = encoder_expectations(cfg, length)
    assert [f.shape for f in feats] == [
        torch.Size([1, cfg.onset_widths[i], lens[i]]) for i in range(6)]


def test_encode_onsets_innermost_length_full_scale_factor():
    # 2^18-sample track with total factor 1024 -> innermost feature length 256
    cfg = DenoiserConfig(widths=[8] * 8, factors=[1, 4, 4, 4, 2, 2, 2, 2],
                         onset_widths=[2] * 8, attention_layers=[7],
                         n_heads=1, head_features=8, context_dim=8,
                         total_factor=1024, window=2 ** 18)
    net = UNet1d(cfg)
    feats = net.encode_onsets(torch.zeros(1, 1, 2 ** 18))
    assert feats[-1].shape[-1] == 256
    assert feats[0].shape[-1] == 2 ** 18  # first factor 1 keeps full resolution


def test_encode_onsets_rejects_indivisible_length(tiny_net):
    with pytest.raises(ValueError, match="not divisible"):
        tiny_net.encode_onsets(torch.zeros(1, 1, 255))


def test_encode_onsets_zero_track_finite(tiny_net):
    feats = tiny_net.encode_onsets(torch.zeros(2, 1, 256))
    assert all(torch.isfinite(f).all() for f in feats)


def test_encode_onsets_shift_equivariance():
    """Shifting the track by the cumulative stride shifts stage features by 1."""
    cfg = tiny_config(window=1024)
    torch.manual_seed(1)
    net = UNet1d(cfg)
    track = torch.zeros(1, 1, 1024)
    track[0, 0, 400] = 1.0
    shifted = torch.zeros(1, 1, 1024)
    shifted[0, 0, 400 + cfg.total_factor] = 1.0
    f0 = net.encode_onsets(track)[-1]
    f1 = net.encode_onsets(shifted)[-1]
    # compare interiors away from conv boundary effects
    assert torch.allclose(f0[..., 50:200], f1[..., 51:201], atol=1e-5)


# -- parameter budgets --------------------------------------------------------

def test_desk_preset_parameter_budget():
    from foleysync.config import make_config
    cfg = make_config("desk")
    net = UNet1d(cfg.denoiser)
    n = sum(p.numel() for p in net.parameters())
    assert 3e5 < n < 3e6, f"desk denoiser has {n} parameters"


def test_paper_preset_builds_at_full_scale():
    from foleysync.config import make_config
    cfg = make_config("paper")
    assert cfg.denoiser.total_factor == 1024
    assert cfg.denoiser.window % 1024 == 0
    with torch.device("meta"):
        net = UNet1d(cfg.denoiser)
    n = sum(p.numel() for p in net.parameters())
    # reconstruction of the published architecture lands near its reported size
    assert 1.5e8 < n < 3.5e8, f"paper denoiser has {n} parameters"
