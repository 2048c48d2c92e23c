import math

import numpy as np
import pytest
import torch

from conftest import checksum, tiny_syncnet
from talkup.errors import InvalidArgument
from talkup.syncnet import (
    SyncNet,
    SyncNetConfig,
    cosine_sync_score,
    lower_half,
    sync_bce,
    sync_loss,
    sync_loss_from_cosine,
)
from talkup.synthdata import SynthSpec
from talkup.training import ClipBank, SHIFT_FRAMES, roc_auc, shifted_pairs, sync_pairs, syncnet_train_step


@pytest.fixture(scope="module")
def bank():
    return ClipBank.synthesize([3, 4], 20, SynthSpec(size=32))


def _pair(b=2, window=3, h=8, w=16, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(b, window, 3, h, w, generator=g), torch.randn(b, 4 * window, 80, generator=g)


def test_default_embeddings_are_512_wide():
    sn = SyncNet().eval()
    lips, mel = _pair(1, 5, 128, 256)
    with torch.no_grad():
        v, a = sn.embed_pair(lips, mel)
    assert v.shape == a.shape == (1, 512)


def test_zero_inputs_finite():
    sn = tiny_syncnet().eval()
    v, a = sn.embed_pair(torch.zeros(1, 3, 3, 8, 16), torch.zeros(1, 12, 80))
    assert torch.isfinite(v).all() and torch.isfinite(a).all()


def test_batch_independence_in_eval_mode():
    sn = tiny_syncnet().eval()
    lips, mel = _pair()
    with torch.no_grad():
        v, a = sn.embed_pair(lips, mel)
        for i in range(2):
            vi, ai = sn.embed_pair(lips[i:i + 1], mel[i:i + 1])
            torch.testing.assert_close(vi[0], v[i], atol=1e-6, rtol=1e-5)
            torch.testing.assert_close(ai[0], a[i], atol=1e-6, rtol=1e-5)


def test_window_length_mismatch():
    sn = tiny_syncnet()
    lips, mel = _pair()
    with pytest.raises(InvalidArgument):
        sn.embed_video(lips[:, :2])
    with pytest.raises(InvalidArgument):
        sn.embed_audio(mel[:, :8])


def test_crops_of_any_size_are_resized():
    sn = tiny_syncnet().eval()
    lips, _ = _pair(1, 3, 32, 64)
    with torch.no_grad():
        assert sn.embed_video(lips).shape == (1, 8)


def test_lower_half_rows():
    f = torch.arange(8.0).view(1, 1, 8, 1).expand(1, 3, 8, 4)
    assert torch.equal(lower_half(f)[0, 0, :, 0], torch.arange(4.0, 8.0))


def test_towers_must_share_width():
    with pytest.raises(InvalidArgument):
        SyncNetConfig(video_widths=(4, 8), audio_widths=(4, 16))


# --- cosine score -----------------------------------------------------------------------

def test_cosine_examples():
    v = torch.tensor([0.6, 0.8])
    assert float(cosine_sync_score(v, v)) == pytest.approx(1.0, abs=1e-7)
    assert float(cosine_sync_score(v, torch.tensor([-0.8, 0.6]))) == pytest.approx(0.0, abs=1e-7)
    assert float(cosine_sync_score(v, -v)) == pytest.approx(-1.0, abs=1e-7)


def test_cosine_zero_vector_warns_and_returns_zero():
    with pytest.warns(RuntimeWarning):
        assert float(cosine_sync_score(torch.zeros(3), torch.ones(3))) == 0.0


def test_cosine_scale_invariance(rng):
    v, a = torch.tensor(rng.normal(size=(5, 16))), torch.tensor(rng.normal(size=(5, 16)))
    base = cosine_sync_score(v, a)
    for s, t in [(0.01, 3.0), (7.0, 0.2), (1e3, 1e-2)]:
        assert (cosine_sync_score(s * v, t * a) - base).abs().max() < 1e-6


# --- sync loss ----------------------------------------------------------------------------

def test_sync_loss_examples():
    assert float(sync_loss_from_cosine(torch.ones(4))) == 0.0
    assert float(sync_loss_from_cosine(torch.full((3,), math.exp(-1)))) == pytest.approx(1.0, abs=1e-6)
    clamped = float(sync_loss_from_cosine(torch.tensor([0.0, -0.5, -1.0], dtype=torch.float64)))
    assert clamped == pytest.approx(-math.log(1e-7), abs=1e-9)
    assert round(clamped, 2) == 16.12


def test_sync_loss_monotone_on_clamp_range():
    cos = torch.linspace(2e-7, 1.0, 200, dtype=torch.float64)
    losses = torch.stack([sync_loss_from_cosine(c[None]) for c in cos])
    assert (losses[1:] < losses[:-1]).all()


def test_frozen_scorer_gets_no_gradient():
    sn = tiny_syncnet().freeze()
    f_hr = torch.rand(2, 3, 3, 16, 16, requires_grad=True)
    _, mel = _pair()
    sync_loss(f_hr, mel, sn).backward()
    assert all(p.grad is None or float(p.grad.abs().max()) == 0 for p in sn.parameters())
    assert f_hr.grad is not None


# --- training -----------------------------------------------------------------------------

def test_bce_limit_on_separable_embeddings():
    g = torch.Generator().manual_seed(0)
    v = torch.randn(8, 4, generator=g, requires_grad=True)
    a = torch.randn(8, 4, generator=g, requires_grad=True)
    labels = torch.tensor([1.0, 0.0] * 4)
    opt = torch.optim.Adam([v, a], lr=0.05)
    first = None
    for _ in range(400):
        loss = sync_bce(cosine_sync_score(v, a), labels)
        first = first if first is not None else loss.item()
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert loss.item() < 1e-2 < first


def test_label_flip_raises_loss(bank):
    torch.manual_seed(0)
    sn = tiny_syncnet()
    pairs = sync_pairs(bank, np.random.default_rng(0), 16, 3)
    opt = torch.optim.Adam(sn.parameters(), lr=1e-3)
    for _ in range(40):
        syncnet_train_step(sn, opt, pairs)
    sn.eval()
    with torch.no_grad():
        cos = sn(pairs["lips"], pairs["mel"])
    assert float(sync_bce(cos, 1 - pairs["label"])) > float(sync_bce(cos, pairs["label"]))
    assert sn.is_trained and int(sn.trained_steps) == 40


def test_negatives_are_shifted_or_cross_clip(bank):
    rng = np.random.default_rng(1)
    pairs = sync_pairs(bank, rng, 64, 3)
    labels = pairs["label"].numpy()
    assert 0 < labels.mean() < 1
    # every negative mel must differ from the aligned one for the same lips
    lips, mels = pairs["lips"].numpy(), pairs["mel"].numpy()
    for i in np.flatnonzero(labels == 0):
        for c in range(len(bank)):
            for t0 in range(bank.n_frames(c) - 2):
                if np.array_equal(lower_half(bank.clips[c].clip.frames[t0:t0 + 3]), lips[i]):
                    assert not np.allclose(bank.mel_window(c, t0, 3), mels[i])


def test_shifted_pairs_offsets(bank):
    p = shifted_pairs(bank, 3, stride=4)
    assert len(p["label"]) % 2 == 0
    assert torch.equal(p["label"][::2], torch.ones(len(p["label"]) // 2))
    assert SHIFT_FRAMES * 40 == 200  # 5 frames at 25 FPS


def test_roc_auc_matches_pairwise_count(rng):
    s = rng.normal(size=40).round(1)
    y = rng.random(40) < 0.5
    wins = 0.0
    for i in np.flatnonzero(y):
        for j in np.flatnonzero(~y):
            wins += 1.0 if s[i] > s[j] else 0.5 if s[i] == s[j] else 0.0
    assert roc_auc(s, y) == pytest.approx(wins / (y.sum() * (~y).sum()), abs=1e-12)
    with pytest.raises(InvalidArgument):
        roc_auc([0.1, 0.2], [1, 1])


def test_checksum_unchanged_by_scoring():
    sn = tiny_syncnet().freeze()
    before = checksum(sn)
    lips, mel = _pair()
    sn(lips, mel)
    assert checksum(sn) == before
