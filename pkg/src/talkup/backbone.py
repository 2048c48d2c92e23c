"""Backbone: LR frames + mel window -> coarse 'driving' frames F_int.

Visual encoder (residual 3D convs), audio encoder (strided residual 1D convs
lifted to 8x8 by transposed convs) and a back-projection upsampler applied
to time-folded fused features.
"""
import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgument
from .synthdata.audio import MEL_STEPS_PER_FRAME, N_MELS

LATENT_SIDE = 8


@dataclass
class BackboneConfig:
    window: int = 5
    scale_factor: int = 32
    hr_side: int = 256
    visual_widths: tuple = (32, 64, 128, 256, 512)
    audio_widths: tuple = (32, 64, 128, 256, 512)
    proj_widths: tuple = (128, 96, 64, 48, 32, 16)
    use_audio: bool = True

    def __post_init__(self):
        self.visual_widths = tuple(self.visual_widths)
        self.audio_widths = tuple(self.audio_widths)
        self.proj_widths = tuple(self.proj_widths)
        if self.visual_widths[-1] != self.audio_widths[-1]:
            raise InvalidArgument("visual and audio embeddings must share a width")
        if len(self.audio_widths) < 3:
            raise InvalidArgument("audio encoder needs >= 3 widths (two stride-2 stages take 4T steps to T)")
        if self.hr_side % self.scale_factor:
            raise InvalidArgument(f"hr_side {self.hr_side} not divisible by scale {self.scale_factor}")
        lr = self.lr_side
        if lr < LATENT_SIDE or lr & (lr - 1):
            raise InvalidArgument(f"LR side must be a power of two >= {LATENT_SIDE}, got {lr}")
        if self.n_downsample > len(self.visual_widths) - 1:
            raise InvalidArgument("not enough visual stages to reach the 8x8 latent grid")
        stages = self.n_stages
        if len(self.proj_widths) != stages + 1:
            raise InvalidArgument(f"proj_widths needs {stages + 1} entries for {LATENT_SIDE}->{self.hr_side}")

    @property
    def lr_side(self):
        return self.hr_side // self.scale_factor

    @property
    def embed_dim(self):
        return self.visual_widths[-1]

    @property
    def n_downsample(self):
        return int(math.log2(self.lr_side // LATENT_SIDE))

    @property
    def n_stages(self):
        return int(math.log2(self.hr_side // LATENT_SIDE))

    def to_dict(self):
        return asdict(self)


def default_proj_widths(hr_side, top=128, bottom=16):
    n = int(math.log2(hr_side // LATENT_SIDE))
    return tuple(int(round(top * (bottom / top) ** (i / n))) for i in range(n + 1))


class ResBlock3d(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv3d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv3d(ch, ch, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        return self.act(x + self.conv2(self.act(self.conv1(x))))


class ResBlock1d(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv1d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv1d(ch, ch, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        return self.act(x + self.conv2(self.act(self.conv1(x))))


class VisualEncoder(nn.Module):
    def __init__(self, widths, n_downsample):
        super().__init__()
        layers = [nn.Conv3d(3, widths[0], 3, padding=1), nn.LeakyReLU(0.2)]
        for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
            stride = (1, 2, 2) if i < n_downsample else 1
            layers += [nn.Conv3d(cin, cout, 3, stride=stride, padding=1), nn.LeakyReLU(0.2), ResBlock3d(cout)]
        self.net = nn.Sequential(*layers)

    def forward(self, lr):
        # (N, T, 3, s, s) -> (N, T, D, 8, 8)
        return self.net(lr.transpose(1, 2)).transpose(1, 2)


class AudioEncoder(nn.Module):
    def __init__(self, widths):
        super().__init__()
        layers = [nn.Conv1d(N_MELS, widths[0], 3, padding=1), nn.LeakyReLU(0.2)]
        for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
            stride = 2 if i < 2 else 1
            layers += [nn.Conv1d(cin, cout, 3, stride=stride, padding=1), nn.LeakyReLU(0.2), ResBlock1d(cout)]
        self.net = nn.Sequential(*layers)
        d = widths[-1]
        lift = []
        for _ in range(int(math.log2(LATENT_SIDE))):
            lift += [nn.ConvTranspose2d(d, d, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        self.lift = nn.Sequential(*lift)

    def forward(self, mel):
        n, steps, _ = mel.shape
        t = steps // MEL_STEPS_PER_FRAME
        feats = self.net(mel.transpose(1, 2))  # (N, D, T)
        d = feats.shape[1]
        x = feats.transpose(1, 2).reshape(n * t, d, 1, 1)
        return self.lift(x).reshape(n, t, d, LATENT_SIDE, LATENT_SIDE)


class UpProjection(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.up1 = nn.ConvTranspose2d(ch, ch, 6, stride=2, padding=2)
        self.down = nn.Conv2d(ch, ch, 6, stride=2, padding=2)
        self.up2 = nn.ConvTranspose2d(ch, ch, 6, stride=2, padding=2)
        self.act = nn.ModuleList([nn.PReLU(ch) for _ in range(3)])

    def forward(self, x):
        h0 = self.act[0](self.up1(x))
        l0 = self.act[1](self.down(h0))
        return h0 + self.act[2](self.up2(l0 - x))


class DownProjection(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.down1 = nn.Conv2d(ch, ch, 6, stride=2, padding=2)
        self.up = nn.ConvTranspose2d(ch, ch, 6, stride=2, padding=2)
        self.down2 = nn.Conv2d(ch, ch, 6, stride=2, padding=2)
        self.act = nn.ModuleList([nn.PReLU(ch) for _ in range(3)])

    def forward(self, h):
        l0 = self.act[0](self.down1(h))
        h0 = self.act[1](self.up(l0))
        return l0 + self.act[2](self.down2(h0 - h))


class ProjectionStage(nn.Module):
    """x2 stage: up-projection, down-projection, then back-project the LR error."""

    def __init__(self, cin, cout):
        super().__init__()
        self.reduce = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()
        self.up = UpProjection(cout)
        self.down = DownProjection(cout)
        self.correct = nn.ConvTranspose2d(cout, cout, 6, stride=2, padding=2)

    def forward(self, low):
        low = self.reduce(low)
        high = self.up(low)
        return high + self.correct(low - self.down(high))


class Projector(nn.Module):
    def __init__(self, in_ch, widths):
        super().__init__()
        self.entry = nn.Sequential(nn.Conv2d(in_ch, widths[0], 3, padding=1), nn.PReLU(widths[0]))
        self.stages = nn.ModuleList([ProjectionStage(a, b) for a, b in zip(widths[:-1], widths[1:])])
        self.head = nn.Conv2d(widths[-1], 3, 3, padding=1)

    def forward(self, x):
        x = self.entry(x)
        for stage in self.stages:
            x = stage(x)
        return torch.sigmoid(self.head(x))


def fold_time(x):
    """(N, T, ...) -> (N*T, ...); row n*T + t holds element (n, t)."""
    return x.reshape(x.shape[0] * x.shape[1], *x.shape[2:])


def unfold_time(x, n, t):
    return x.reshape(n, t, *x.shape[1:])


class Backbone(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or BackboneConfig()
        c = self.config
        self.visual = VisualEncoder(c.visual_widths, c.n_downsample)
        self.audio = AudioEncoder(c.audio_widths)
        self.projector = Projector(2 * c.embed_dim, c.proj_widths)

    def encode_visual(self, lr):
        c = self.config
        if lr.dim() != 5 or lr.shape[2] != 3 or lr.shape[3:] != (c.lr_side, c.lr_side):
            raise InvalidArgument(f"expected LR window (N, T, 3, {c.lr_side}, {c.lr_side}), got {tuple(lr.shape)}")
        if lr.shape[1] != c.window:
            raise InvalidArgument(f"expected window of {c.window} frames, got {lr.shape[1]}")
        return self.visual(lr)

    def encode_audio(self, mel):
        c = self.config
        if mel.dim() != 3 or mel.shape[2] != N_MELS:
            raise InvalidArgument(f"expected mel (N, steps, {N_MELS}), got {tuple(mel.shape)}")
        if mel.shape[1] != MEL_STEPS_PER_FRAME * c.window:
            raise InvalidArgument(
                f"mel has {mel.shape[1]} steps; window of {c.window} frames needs {MEL_STEPS_PER_FRAME * c.window}")
        return self.audio(mel)

    def fuse(self, f_v, f_a):
        if f_v.shape[:2] != f_a.shape[:2]:
            raise InvalidArgument(f"N/T mismatch: visual {tuple(f_v.shape[:2])} vs audio {tuple(f_a.shape[:2])}")
        if not self.config.use_audio:
            f_a = torch.zeros_like(f_a)
        return torch.cat([f_v, f_a], dim=2)

    def fuse_and_project(self, f_v, f_a):
        f_cat = self.fuse(f_v, f_a)
        n, t = f_cat.shape[:2]
        return unfold_time(self.projector(fold_time(f_cat)), n, t)

    def forward(self, lr, mel):
        return self.fuse_and_project(self.encode_visual(lr), self.encode_audio(mel))


def reconstruction_loss(f_int, f_gt):
    """Mean absolute error over every element."""
    if f_int.shape != f_gt.shape:
        raise InvalidArgument(f"shape mismatch {tuple(f_int.shape)} vs {tuple(f_gt.shape)}")
    return F.l1_loss(f_int, f_gt)
