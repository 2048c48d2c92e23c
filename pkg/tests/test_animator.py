import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from PIL import Image

from conftest import checksum, tiny_animator, tiny_backbone, tiny_syncnet
from talkup.animator import (
    Animator,
    AnimatorConfig,
    FeaturePyramid,
    KeypointSet,
    LossWeights,
    RandomTPS,
    RegionSkipped,
    compose,
    equivariance_loss,
    equivariance_terms,
    identity_keypoints,
    make_coordinate_grid,
    perceptual_loss,
    region_loss,
    total_loss,
    warp,
)
from talkup.animator.losses import PYRAMID_SCALES, REGION_MARGIN
from talkup.errors import ConfigurationError, InvalidArgument
from talkup.synthdata import SynthSpec, generate_synthetic_clip
from talkup.synthdata.face import REGIONS
from talkup.training import E2EOptions, OptimConfig, e2e_losses, e2e_train_step, make_optimizer, seed_everything


@pytest.fixture(scope="module")
def clip():
    return generate_synthetic_clip(0, 5, SynthSpec(size=64))


def _frames(n=2, side=16, seed=0):
    return torch.rand(n, 3, side, side, generator=torch.Generator().manual_seed(seed))


# --- keypoints and motion ---------------------------------------------------------

def test_keypoints_in_range_and_default_count():
    cfg = AnimatorConfig(kp_resolution=16, kp_block_expansion=4, kp_max_features=8, kp_num_blocks=2,
                         motion_block_expansion=4, motion_max_features=8, motion_num_blocks=2,
                         gen_block_expansion=4, gen_max_features=8, gen_num_down_blocks=1, gen_num_bottleneck=1)
    an = Animator(cfg)
    kp = an.detect_keypoints(_frames(side=32))
    assert kp.positions.shape == (2, 10, 2) and kp.jacobians.shape == (2, 10, 2, 2)
    assert kp.positions.abs().max() <= 1
    assert torch.isfinite(kp.jacobians).all()


def test_no_motion_gives_identity_flow():
    an = tiny_animator()
    pos = torch.rand(2, 3, 2) * 1.6 - 0.8
    kp = identity_keypoints(pos)
    motion = an.dense_motion(_frames(), kp, kp)
    grid = make_coordinate_grid(8, 8)
    assert (motion.flow - grid).abs().max() < 1e-3
    assert motion.occlusion.min() >= 0 and motion.occlusion.max() <= 1


def test_translation_shifts_keypoint_motions():
    # backward warp: a driving pixel z samples the identity image at z - d
    an = tiny_animator()
    pos = torch.rand(1, 3, 2) * 1.2 - 0.6
    d = torch.tensor([0.1, -0.05])
    kp_id, kp_drv = identity_keypoints(pos), identity_keypoints(pos + d)
    sparse = an.dense_motion.sparse_motions(kp_id, kp_drv, 8, torch.float32, None)
    grid = make_coordinate_grid(8, 8)
    torch.testing.assert_close(sparse[0, 1:] - grid, (-d).expand(3, 8, 8, 2), atol=1e-6, rtol=0)
    motion = an.dense_motion(_frames(1), kp_id, kp_drv)
    expected = grid - (1 - motion.mask[0, 0])[..., None] * d
    torch.testing.assert_close(motion.flow[0], expected, atol=1e-5, rtol=0)


def test_keypoint_count_mismatch():
    an = tiny_animator()
    with pytest.raises(InvalidArgument):
        an.dense_motion(_frames(1), identity_keypoints(torch.zeros(1, 3, 2)), identity_keypoints(torch.zeros(1, 2, 2)))


def test_occlusion_bounded_for_random_keypoints():
    an = tiny_animator()
    g = torch.Generator().manual_seed(1)
    a = KeypointSet(torch.rand(2, 3, 2, generator=g) * 2 - 1, torch.randn(2, 3, 2, 2, generator=g) + 2 * torch.eye(2))
    b = KeypointSet(torch.rand(2, 3, 2, generator=g) * 2 - 1, torch.randn(2, 3, 2, 2, generator=g) + 2 * torch.eye(2))
    occ = an.dense_motion(_frames(), a, b).occlusion
    assert occ.min() >= 0 and occ.max() <= 1


def test_identity_warp_is_exact():
    img = _frames(2, 16, 5)
    grid = make_coordinate_grid(16, 16)[None].expand(2, -1, -1, -1)
    assert (warp(img, grid) - img).abs().max() < 1e-5


# --- composition -------------------------------------------------------------------

def test_zero_residual_is_identity():
    an = tiny_animator()
    f_int = torch.rand(2, 3, 3, 16, 16)
    out = an(f_int[:, 0], f_int, zero_residual=True)
    assert torch.equal(out.f_hr, f_int)


def test_animation_output_shape_and_range():
    an = tiny_animator()
    f_int = torch.rand(2, 3, 3, 16, 16)
    out = an(torch.rand(2, 3, 16, 16), f_int)
    assert out.f_hr.shape == out.residual.shape == (2, 3, 3, 16, 16)
    assert out.f_hr.min() >= 0 and out.f_hr.max() <= 1
    torch.testing.assert_close(out.f_hr, torch.clamp(f_int + out.residual, 0, 1))


def test_compose_modes():
    f = torch.tensor([0.2, 0.9])
    r = torch.tensor([0.5, 0.5])
    assert torch.allclose(compose(f, r), torch.tensor([0.7, 1.0]))
    assert torch.allclose(compose(f, r, "multiplicative"), torch.tensor([0.3, 1.0]))
    with pytest.raises(InvalidArgument):
        AnimatorConfig(residual_mode="gated")


def test_identity_shape_mismatch():
    an = tiny_animator()
    with pytest.raises(InvalidArgument):
        an(torch.rand(1, 3, 8, 8), torch.rand(1, 3, 3, 16, 16))


# --- equivariance -----------------------------------------------------------------------

def test_identity_transform_position_term_zero():
    an = tiny_animator()
    frames = _frames()
    tps = RandomTPS.identity(2)
    kp = an.detect_keypoints(frames)
    kp_t = an.detect_keypoints(tps.transform_frame(frames))
    value, _ = equivariance_terms(kp, kp_t, tps)
    assert value.item() < 1e-6


def test_affine_equivariance_matches_closed_form(rng):
    a = torch.tensor(rng.normal(size=(2, 2, 2)) * 0.2 + np.eye(2), dtype=torch.float64)
    b = torch.tensor(rng.normal(size=(2, 2)) * 0.1, dtype=torch.float64)
    tps = RandomTPS.affine(a, b)
    p = torch.tensor(rng.uniform(-0.8, 0.8, (2, 4, 2)))
    q = torch.tensor(rng.uniform(-0.8, 0.8, (2, 4, 2)))
    jp = torch.tensor(rng.normal(size=(2, 4, 2, 2)) * 0.3 + np.eye(2))
    jq = torch.tensor(rng.normal(size=(2, 4, 2, 2)) * 0.3 + np.eye(2))
    value, jac = equivariance_terms(KeypointSet(p, jp), KeypointSet(q, jq), tps)

    an, bn, pn, qn, jpn, jqn = (x.numpy() for x in (a, b, p, q, jp, jq))
    v_sum = j_sum = 0.0
    for i in range(2):
        for k in range(4):
            mapped = an[i] @ qn[i, k] + bn[i]
            v_sum += np.abs(pn[i, k] - mapped).sum()
            m = np.linalg.solve(jpn[i, k], an[i] @ jqn[i, k])
            j_sum += np.abs(np.eye(2) - m).sum()
    assert abs(float(value) - v_sum / 16) < 1e-6
    assert abs(float(jac) - j_sum / 32) < 1e-6


def test_exact_affine_keypoints_give_zero():
    a = torch.tensor([[[0.9, 0.1], [-0.2, 1.1]]], dtype=torch.float64)
    b = torch.tensor([[0.05, -0.1]], dtype=torch.float64)
    tps = RandomTPS.affine(a, b)
    q = torch.tensor([[[0.1, 0.2], [-0.3, 0.4]]], dtype=torch.float64)
    jq = torch.eye(2, dtype=torch.float64).expand(1, 2, 2, 2)
    p = q @ a[0].T + b[:, None]
    jp = a[:, None] @ jq
    value, jac = equivariance_terms(KeypointSet(p, jp), KeypointSet(q, jq), tps)
    assert float(value) < 1e-12 and float(jac) < 1e-12


def test_equivariance_non_negative_random():
    an = tiny_animator()
    g = torch.Generator().manual_seed(3)
    for _ in range(3):
        assert equivariance_loss(an.detect_keypoints, _frames(), RandomTPS(2, generator=g)).item() >= 0


def test_tps_jacobian_matches_finite_difference():
    g = torch.Generator().manual_seed(0)
    tps = RandomTPS(1, sigma_tps=0.05, generator=g, dtype=torch.float64)
    pts = torch.tensor([[[0.13, -0.27], [0.4, 0.31]]], dtype=torch.float64)
    jac = tps.jacobian(pts)
    h = 1e-6
    for d in range(2):
        e = torch.zeros(2, dtype=torch.float64)
        e[d] = h
        fd = (tps.warp_coordinates(pts + e) - tps.warp_coordinates(pts - e)) / (2 * h)
        torch.testing.assert_close(jac[..., d], fd, atol=1e-7, rtol=1e-6)


@pytest.mark.slow
def test_mirror_equivariance_after_training():
    # train only the equivariance objective under horizontal flips, then probe
    seed_everything(0)
    an = tiny_animator()
    frames = torch.tensor(generate_synthetic_clip(1, 8, SynthSpec(size=32)).clip.frames)
    flip = RandomTPS.affine(torch.tensor([[[-1.0, 0.0], [0.0, 1.0]]]).expand(8, 2, 2), torch.zeros(8, 2))
    opt = torch.optim.Adam(an.kp_detector.parameters(), lr=3e-3)
    for _ in range(300):
        loss = equivariance_loss(an.detect_keypoints, frames, flip, jacobian_weight=0.0)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        kp = an.detect_keypoints(frames).positions
        kp_m = an.detect_keypoints(torch.flip(frames, dims=[-1])).positions
    assert float((kp_m[..., 0] + kp[..., 0]).abs().mean()) < 0.05
    torch.testing.assert_close(kp_m[..., 1], kp[..., 1], atol=0.05, rtol=0)


# --- perceptual ----------------------------------------------------------------------

def test_perceptual_identical_is_zero():
    x = torch.rand(2, 3, 32, 32)
    assert float(perceptual_loss(x, x, FeaturePyramid())) == 0


def test_perceptual_positive_for_patch():
    x = torch.rand(1, 3, 32, 32)
    y = x.clone()
    y[..., 8:16, 8:16] = 1 - y[..., 8:16, 8:16]
    assert float(perceptual_loss(x, y, FeaturePyramid())) > 0


def test_perceptual_needs_extractor():
    x = torch.rand(1, 3, 8, 8)
    with pytest.raises(ConfigurationError):
        perceptual_loss(x, x, None)


def _pil_pyramid(img, scales):
    """Antialiased bilinear pyramid built with PIL, one float plane at a time."""
    out = []
    for s in scales:
        side = int(round(img.shape[-1] * s))
        planes = [np.asarray(Image.fromarray(p, mode="F").resize((side, side), Image.BILINEAR)) for p in img]
        out.append(np.stack(planes))
    return out


def test_perceptual_matches_independent_pyramid(rng):
    ext = FeaturePyramid()
    a = rng.random((3, 32, 32)).astype(np.float32)
    b = rng.random((3, 32, 32)).astype(np.float32)
    expected = 0.0
    for la, lb in zip(_pil_pyramid(a, PYRAMID_SCALES), _pil_pyramid(b, PYRAMID_SCALES)):
        with torch.no_grad():
            fa = ext(torch.tensor(la)[None])
            fb = ext(torch.tensor(lb)[None])
        for xa, xb in zip(fa, fb):
            expected += float(np.abs(xa.numpy().astype(np.float64) - xb.numpy()).mean())
    got = float(perceptual_loss(torch.tensor(a)[None], torch.tensor(b)[None], ext))
    assert abs(got - expected) < 1e-6 * max(1.0, expected)


# --- region loss ---------------------------------------------------------------------------

def _oracle_box(points, side, margin=REGION_MARGIN):
    xs, ys = [p[0] for p in points], [p[1] for p in points]
    pad = margin * math.hypot(max(xs) - min(xs), max(ys) - min(ys))
    return (max(0, math.floor(min(xs) - pad)), max(0, math.floor(min(ys) - pad)),
            min(side, math.ceil(max(xs) + pad)), min(side, math.ceil(max(ys) + pad)))


def test_region_identical_is_zero(clip):
    f = torch.tensor(clip.clip.frames[:1])
    assert float(region_loss(f, f, clip.landmarks[:1])) == 0


def test_four_regions():
    assert sorted(REGIONS) == ["eyebrows", "eyes", "lips", "nose"]


def test_region_patch_oracle(clip):
    lm = clip.landmarks[0]
    gt = np.zeros((3, 64, 64))
    hr = gt.copy()
    boxes = {name: _oracle_box(lm[idx].tolist(), 64) for name, idx in REGIONS.items()}
    x0, y0, x1, y1 = boxes["lips"]
    px, py = x0 + 2, y1 - 8
    hr[:, py:py + 8, px:px + 8] = 1.0
    in_other = [n for n, (a, b, c, d) in boxes.items() if n != "lips" and a < px + 8 and px < c and b < py + 8 and py < d]
    assert not in_other, "patch must touch the lips box only"

    expected = 0.0
    for bx0, by0, bx1, by1 in boxes.values():
        sq = n = 0
        for c in range(3):
            for y in range(by0, by1):
                for x in range(bx0, bx1):
                    sq += (hr[c, y, x] - gt[c, y, x]) ** 2
                    n += 1
        expected += sq / n
    lips_only = 3 * 64 / (3 * (x1 - x0) * (y1 - y0))
    assert expected == pytest.approx(lips_only, abs=1e-12)
    got = region_loss(torch.tensor(hr)[None], torch.tensor(gt)[None], lm[None])
    assert abs(float(got) - expected) < 1e-6


def test_degenerate_region_skipped(clip):
    lm = clip.landmarks[:1].copy()
    lm[0, REGIONS["nose"]] = lm[0, REGIONS["nose"][0]]
    f = torch.rand(1, 3, 64, 64)
    with pytest.warns(RegionSkipped):
        region_loss(f, torch.zeros_like(f), lm)


def test_region_loss_non_negative_random(clip):
    a, b = torch.rand(2, 3, 64, 64), torch.rand(2, 3, 64, 64)
    assert float(region_loss(a, b, clip.landmarks[:2])) >= 0


# --- total loss ------------------------------------------------------------------------------

KEYS = ("rec", "fomm", "region", "sync")


def test_total_loss_zero_and_default_weights():
    assert total_loss(dict.fromkeys(KEYS, 0.0)) == 0
    assert total_loss(dict.fromkeys(KEYS, 1.0)) == 151.05


def test_total_loss_linear_in_unit_vectors():
    w = LossWeights(rec=3.0, region=7.0, sync=0.5)
    coeff = {"rec": 3.0, "fomm": 1.0, "region": 7.0, "sync": 0.5}
    for k in KEYS:
        unit = {j: float(j == k) for j in KEYS}
        assert total_loss(unit, w) == coeff[k]
    x = {"rec": 0.3, "fomm": 1.7, "region": 0.02, "sync": 4.0}
    assert total_loss(x, w) == pytest.approx(sum(coeff[k] * x[k] for k in KEYS))


def test_total_loss_missing_component():
    with pytest.raises(ConfigurationError):
        total_loss({"rec": 1.0, "fomm": 1.0, "region": 1.0})


# --- end-to-end step -------------------------------------------------------------------------

def _e2e_batch(clip, window=3):
    gt = torch.tensor(clip.clip.frames[:window])
    small = F.interpolate(gt, size=(16, 16), mode="bilinear", antialias=True, align_corners=False)
    lr = F.avg_pool2d(small, 2)
    lm = clip.landmarks[:window] / 4
    return {"lr": lr[None], "mel": torch.randn(1, 4 * window, 80), "gt": small[None],
            "identity": small[:1], "landmarks": torch.tensor(lm, dtype=torch.float32)[None]}


def test_sync_weight_zero_needs_no_discriminator(clip):
    opts = E2EOptions(weights=LossWeights(sync=0.0))
    comps, _, _ = e2e_losses(tiny_backbone(), tiny_animator(), _e2e_batch(clip), None, FeaturePyramid(), opts)
    assert float(comps["sync"]) == 0
    with pytest.raises(ConfigurationError):
        e2e_losses(tiny_backbone(), tiny_animator(), _e2e_batch(clip), None, FeaturePyramid(), E2EOptions())


def test_e2e_step_keeps_syncnet_frozen(clip):
    seed_everything(0)
    bb, an, sn = tiny_backbone(), tiny_animator(), tiny_syncnet()
    sn.trained_steps += 1
    before = checksum(sn)
    opt, _ = make_optimizer(list(bb.parameters()) + list(an.parameters()), OptimConfig(total_steps=10))
    rec = e2e_train_step(bb, an, opt, _e2e_batch(clip), sn, FeaturePyramid())
    assert checksum(sn) == before
    assert all(p.grad is None for p in sn.parameters())
    assert set(rec) == {"step", "L_rec", "L_fomm", "L_region", "L_sync", "L_HR"}


def test_e2e_refuses_untrained_syncnet(clip):
    bb, an = tiny_backbone(), tiny_animator()
    opt, _ = make_optimizer(list(bb.parameters()) + list(an.parameters()), OptimConfig(total_steps=10))
    with pytest.raises(ConfigurationError):
        e2e_train_step(bb, an, opt, _e2e_batch(clip), tiny_syncnet(), FeaturePyramid())


def test_e2e_runs_without_pretraining(clip):
    bb, an = tiny_backbone(), tiny_animator()
    opt, _ = make_optimizer(list(bb.parameters()) + list(an.parameters()), OptimConfig(total_steps=10))
    opts = E2EOptions(weights=LossWeights(sync=0.0))
    recs = [e2e_train_step(bb, an, opt, _e2e_batch(clip), None, FeaturePyramid(), opts, step=i) for i in range(2)]
    assert all(np.isfinite(r["L_HR"]) for r in recs)


@pytest.mark.parametrize("target", ["f_int", "f_hr", "both"])
def test_rec_target_flag(clip, target):
    from talkup.backbone import reconstruction_loss

    opts = E2EOptions(weights=LossWeights(sync=0.0), rec_target=target)
    b = _e2e_batch(clip)
    comps, f_int, out = e2e_losses(tiny_backbone(), tiny_animator(), b, None, FeaturePyramid(), opts)
    parts = {"f_int": reconstruction_loss(f_int, b["gt"]), "f_hr": reconstruction_loss(out.f_hr, b["gt"])}
    expected = parts["f_int"] + parts["f_hr"] if target == "both" else parts[target]
    assert comps["rec"].item() == pytest.approx(expected.item())
