"""Lip-sync discriminator: separate lip-window and mel-window towers."""
import warnings
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgument
from .synthdata.audio import MEL_STEPS_PER_FRAME, N_MELS

COS_EPS = 1e-8
SYNC_DELTA = 1e-7


@dataclass
class SyncNetConfig:
    window: int = 5
    input_size: tuple = (48, 96)  # (h, w) of the resized lower-half crop
    video_widths: tuple = (32, 64, 128, 256, 512)
    audio_widths: tuple = (32, 64, 128, 256, 512)
    batch_norm: bool = True

    def __post_init__(self):
        self.input_size = tuple(self.input_size)
        self.video_widths = tuple(self.video_widths)
        self.audio_widths = tuple(self.audio_widths)
        if self.video_widths[-1] != self.audio_widths[-1]:
            raise InvalidArgument("video and audio towers must share the embedding width")

    @property
    def embed_dim(self):
        return self.video_widths[-1]

    def to_dict(self):
        return asdict(self)


def _tower(cin, widths, batch_norm=True):
    layers = []
    for i, w in enumerate(widths):
        stride = 1 if i == 0 else 2
        layers.append(nn.Conv2d(cin, w, 3, stride=stride, padding=1))
        if batch_norm:
            layers.append(nn.BatchNorm2d(w))
        layers.append(nn.LeakyReLU(0.2))
        cin = w
    layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(cin, cin)]
    return nn.Sequential(*layers)


def lower_half(frames):
    """Rows H/2..H of square face frames (the mouth area)."""
    h = frames.shape[-2]
    return frames[..., h // 2:, :]


class SyncNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or SyncNetConfig()
        c = self.config
        self.video = _tower(3 * c.window, c.video_widths, c.batch_norm)
        self.audio = _tower(1, c.audio_widths, c.batch_norm)
        self.register_buffer("trained_steps", torch.zeros((), dtype=torch.long))

    @property
    def is_trained(self):
        return int(self.trained_steps) > 0

    def freeze(self):
        self.requires_grad_(False)
        self.eval()
        return self

    def embed_video(self, lips):
        """lips: (B, T, 3, h, w) lower-half crops, any size -> (B, D)."""
        c = self.config
        if lips.dim() == 4:
            lips = lips[None]
        if lips.shape[1] != c.window:
            raise InvalidArgument(f"lip window has {lips.shape[1]} frames, expected {c.window}")
        b, t = lips.shape[:2]
        x = lips.reshape(b * t, *lips.shape[2:])
        if tuple(x.shape[-2:]) != c.input_size:
            down = x.shape[-1] > c.input_size[1]
            x = F.interpolate(x, size=c.input_size, mode="bilinear", align_corners=False, antialias=down)
        return self.video(x.reshape(b, t * 3, *c.input_size))

    def embed_audio(self, mel):
        """mel: (B, 4T, 80) -> (B, D)."""
        c = self.config
        if mel.dim() == 2:
            mel = mel[None]
        if mel.shape[1:] != (MEL_STEPS_PER_FRAME * c.window, N_MELS):
            raise InvalidArgument(
                f"mel window must be ({MEL_STEPS_PER_FRAME * c.window}, {N_MELS}), got {tuple(mel.shape[1:])}")
        return self.audio(mel.transpose(1, 2)[:, None])

    def embed_pair(self, lips, mel):
        return self.embed_video(lips), self.embed_audio(mel)

    def forward(self, lips, mel):
        return cosine_sync_score(*self.embed_pair(lips, mel))


def cosine_sync_score(f_video, f_audio, eps=COS_EPS):
    """v.a / max(|v||a|, eps) along the last axis."""
    num = (f_video * f_audio).sum(-1)
    den = f_video.norm(dim=-1) * f_audio.norm(dim=-1)
    if bool((den == 0).any()):
        warnings.warn("zero-norm sync embedding; cosine reported as 0", RuntimeWarning)
    return num / torch.clamp(den, min=eps)


def sync_bce(cos, labels):
    """Binary cross-entropy on (cos + 1) / 2 against in-sync labels."""
    prob = ((cos + 1.0) / 2.0).clamp(1e-7, 1 - 1e-7)
    return F.binary_cross_entropy(prob, labels.to(prob.dtype))


def sync_loss_from_cosine(cos, delta=SYNC_DELTA):
    """-mean log(clamp(cos, delta, 1)); finite for any cosine."""
    return -torch.log(cos.clamp(min=delta, max=1.0)).mean()


def sync_loss(f_hr, mel, syncnet, delta=SYNC_DELTA):
    """Sync penalty of generated windows (N, T, 3, H, W) against mels (N, 4T, 80)."""
    return sync_loss_from_cosine(syncnet(lower_half(f_hr), mel), delta)
