"""5 FPS -> 25 FPS interpolation of LR frames.

Input frames are copied to output slots 0, 5, 10, 15, 20; a small 3D-conv
encoder-decoder predicts a correction on top of a linear blend for the 20
slots in between.
"""
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, InvalidArgument

IN_FRAMES = 5
RATIO = 5
OUT_FRAMES = IN_FRAMES * RATIO
PARAM_BUDGET = 250_000


@dataclass
class InterpConfig:
    widths: tuple = (32, 56, 56)
    param_budget: int = PARAM_BUDGET

    def to_dict(self):
        return asdict(self)


def anchor_indices():
    return list(range(0, OUT_FRAMES, RATIO))


def intermediate_indices():
    return [i for i in range(OUT_FRAMES) if i % RATIO]


def linear_blend(frames):
    """(B, 5, C, H, W) -> (B, 25, C, H, W); past the last input the frame is held."""
    nxt = torch.cat([frames[:, 1:], frames[:, -1:]], dim=1)
    w = torch.arange(RATIO, dtype=frames.dtype, device=frames.device) / RATIO
    w = w.view(1, 1, RATIO, 1, 1, 1)
    out = (1 - w) * frames[:, :, None] + w * nxt[:, :, None]
    return out.reshape(frames.shape[0], OUT_FRAMES, *frames.shape[2:])


class InterpNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or InterpConfig()
        w1, w2, w3 = self.config.widths
        self.encoder = nn.Sequential(
            nn.Conv3d(3, w1, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv3d(w1, w2, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv3d(w2, w3, 3, padding=1), nn.LeakyReLU(0.2),
        )
        self.temporal_up = nn.ConvTranspose3d(w3, w3, (RATIO, 1, 1), stride=(RATIO, 1, 1))
        self.decoder = nn.Sequential(
            nn.LeakyReLU(0.2),
            nn.Conv3d(w3, w1, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv3d(w1, 3, 3, padding=1),
        )
        n = self.num_parameters()
        if n > self.config.param_budget:
            raise ConfigurationError(f"interpolation net has {n} parameters, budget is {self.config.param_budget}")

    def num_parameters(self):
        return sum(p.numel() for p in self.parameters())

    def forward(self, frames):
        """frames (5, 3, h, w) or (B, 5, 3, h, w) -> 25 frames in [0, 1]."""
        single = frames.dim() == 4
        if single:
            frames = frames[None]
        if frames.dim() != 5 or frames.shape[1] != IN_FRAMES:
            raise InvalidArgument(f"expected {IN_FRAMES} input frames, got shape {tuple(frames.shape)}")
        x = frames.transpose(1, 2)  # (B, C, 5, h, w)
        resid = self.decoder(self.temporal_up(self.encoder(x))).transpose(1, 2)
        out = torch.clamp(linear_blend(frames) + resid, 0.0, 1.0)
        mask = torch.zeros(OUT_FRAMES, dtype=torch.bool, device=frames.device)
        mask[anchor_indices()] = True
        anchors = frames.repeat_interleave(RATIO, dim=1)
        out = torch.where(mask.view(1, -1, 1, 1, 1), anchors, out)
        return out[0] if single else out


def interpolate(model, lr_5fps):
    return model(lr_5fps)


def interp_loss(pred, target):
    """L1 over the intermediate slots only; anchors are exact copies."""
    idx = intermediate_indices()
    return F.l1_loss(pred[..., idx, :, :, :], target[..., idx, :, :, :])
