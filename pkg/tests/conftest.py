import numpy as np
import pytest
import torch

from talkup.animator import Animator, AnimatorConfig
from talkup.backbone import Backbone, BackboneConfig
from talkup.syncnet import SyncNet, SyncNetConfig

torch.set_num_threads(1)


def tiny_backbone(window=3, use_audio=True):
    """8x8 -> 16x16 with single-digit channel counts; cheap enough for finite differences."""
    cfg = BackboneConfig(window=window, hr_side=16, scale_factor=2, visual_widths=(4, 8), audio_widths=(4, 4, 8),
                         proj_widths=(8, 4), use_audio=use_audio)
    return Backbone(cfg)


def desk_backbone(window=5, use_audio=True):
    cfg = BackboneConfig(window=window, hr_side=64, scale_factor=8, visual_widths=(32, 64), audio_widths=(16, 32, 64),
                         proj_widths=(64, 32, 16, 8), use_audio=use_audio)
    return Backbone(cfg)


def tiny_animator(**kw):
    cfg = AnimatorConfig(num_kp=3, kp_resolution=8, kp_block_expansion=4, kp_max_features=8, kp_num_blocks=2,
                         motion_block_expansion=4, motion_max_features=8, motion_num_blocks=2,
                         gen_block_expansion=4, gen_max_features=8, gen_num_down_blocks=1, gen_num_bottleneck=1, **kw)
    return Animator(cfg)


def tiny_syncnet(window=3):
    return SyncNet(SyncNetConfig(window=window, input_size=(8, 16), video_widths=(4, 8), audio_widths=(4, 8)))


def checksum(module):
    return float(sum(p.detach().double().abs().sum() for p in module.parameters()))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
