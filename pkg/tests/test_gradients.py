"""Analytic gradients against central finite differences, float64, miniature networks."""
import pytest
import torch

from conftest import tiny_syncnet
from talkup.animator import (
    Animator,
    AnimatorConfig,
    FeaturePyramid,
    LossWeights,
    RandomTPS,
    equivariance_loss,
    perceptual_loss,
    region_loss,
)
from talkup.backbone import Backbone, BackboneConfig, reconstruction_loss
from talkup.synthdata import SynthSpec, generate_synthetic_clip
from talkup.syncnet import sync_loss
from talkup.training import E2EOptions, e2e_losses

TOL = 1e-3
STEP = 1e-6


def finite_difference_error(loss_fn, params, step=STEP):
    """Norm-wise relative error between autograd and central differences over every entry of ``params``."""
    params = [p for p in params if p.requires_grad]
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(analytic, params)])
    numeric = torch.zeros_like(analytic)
    k = 0
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                numeric[k] = (up - down) / (2 * step)
                k += 1
    scale = max(float(analytic.norm()), float(numeric.norm()), 1e-12)
    return float((analytic - numeric).norm()) / scale, float(analytic.norm())


def micro_animator():
    cfg = AnimatorConfig(num_kp=2, kp_resolution=8, kp_block_expansion=2, kp_max_features=4, kp_num_blocks=1,
                         motion_block_expansion=2, motion_max_features=4, motion_num_blocks=1,
                         gen_block_expansion=2, gen_max_features=4, gen_num_down_blocks=1, gen_num_bottleneck=1)
    return Animator(cfg).double()


def face_frames():
    c = generate_synthetic_clip(0, 5, SynthSpec(size=64))
    frames = torch.nn.functional.interpolate(torch.tensor(c.clip.frames[:2], dtype=torch.float64), size=(16, 16),
                                             mode="bilinear", antialias=True, align_corners=False)
    return frames, torch.tensor(c.landmarks[:2] / 4)


def micro_backbone(window=2):
    cfg = BackboneConfig(window=window, hr_side=16, scale_factor=2, visual_widths=(2, 4), audio_widths=(2, 2, 4),
                         proj_widths=(4, 2))
    return Backbone(cfg).double()


def check_reconstruction():
    torch.manual_seed(0)
    bb = micro_backbone()
    g = torch.Generator().manual_seed(1)
    lr = torch.rand(1, 2, 3, 8, 8, generator=g, dtype=torch.float64)
    mel = torch.randn(1, 8, 80, generator=g, dtype=torch.float64)
    gt = torch.rand(1, 2, 3, 16, 16, generator=g, dtype=torch.float64)
    return finite_difference_error(lambda: reconstruction_loss(bb(lr, mel), gt), list(bb.parameters()))


def check_region():
    torch.manual_seed(0)
    an = micro_animator()
    frames, lm = face_frames()
    f_int = (0.25 + 0.5 * frames)[None]

    def loss():
        return region_loss(an(frames[:1], f_int).f_hr, frames[None], lm[None])

    return finite_difference_error(loss, list(an.generator.parameters()))


def check_perceptual():
    torch.manual_seed(0)
    an = micro_animator()
    ext = FeaturePyramid(widths=(4, 4, 4, 4, 4)).double()
    frames, _ = face_frames()
    f_int = (0.25 + 0.5 * frames)[None]

    def loss():
        return perceptual_loss(an(frames[:1], f_int).f_hr, frames[None], ext)

    return finite_difference_error(loss, list(an.generator.parameters()))


def check_equivariance():
    torch.manual_seed(0)
    an = micro_animator()
    frames, _ = face_frames()
    tps = RandomTPS(2, sigma_affine=0.1, sigma_tps=0.02, generator=torch.Generator().manual_seed(3),
                    dtype=torch.float64)
    return finite_difference_error(lambda: equivariance_loss(an.detect_keypoints, frames, tps),
                                   list(an.kp_detector.parameters()))


def check_sync():
    torch.manual_seed(0)
    sn = tiny_syncnet().double().freeze()
    g = torch.Generator().manual_seed(2)
    mel = torch.randn(1, 12, 80, generator=g, dtype=torch.float64)
    f_hr = torch.rand(1, 3, 3, 16, 16, generator=g, dtype=torch.float64)
    with torch.no_grad():
        if float(sn(f_hr[:, :, :, 8:], mel)) < 0:
            # keep the cosine inside the clamp range so the gradient is non-trivial
            sn.audio[-1].weight.neg_()
            sn.audio[-1].bias.neg_()
        assert float(sn(f_hr[:, :, :, 8:], mel)) > 0.05
    f_hr.requires_grad_(True)
    return finite_difference_error(lambda: sync_loss(f_hr, mel, sn), [f_hr])


def check_total_objective():
    torch.manual_seed(0)
    bb = micro_backbone()
    an = micro_animator()
    sn = tiny_syncnet(window=2).double().freeze()
    sn.trained_steps += 1
    frames, lm = face_frames()
    g = torch.Generator().manual_seed(4)
    batch = {"lr": torch.rand(1, 2, 3, 8, 8, generator=g, dtype=torch.float64),
             "mel": torch.randn(1, 8, 80, generator=g, dtype=torch.float64),
             "gt": frames[None], "identity": frames[:1], "landmarks": lm[None]}
    ext = FeaturePyramid(widths=(4, 4, 4, 4, 4)).double()
    opts = E2EOptions(weights=LossWeights())

    def loss():
        comps, _, _ = e2e_losses(bb, an, batch, sn, ext, opts, torch.Generator().manual_seed(5))
        return comps["total"]

    # output layers of both networks; every loss term reaches them
    params = list(an.generator.final.parameters()) + list(bb.projector.head.parameters())
    return finite_difference_error(loss, params)


GRADIENT_CHECKS = {
    "reconstruction": check_reconstruction,
    "region": check_region,
    "perceptual": check_perceptual,
    "equivariance": check_equivariance,
    "sync": check_sync,
    "total": check_total_objective,
}


@pytest.mark.parametrize("name", list(GRADIENT_CHECKS))
def test_gradient_matches_finite_differences(name):
    err, norm = GRADIENT_CHECKS[name]()
    assert norm > 0 and err < TOL
