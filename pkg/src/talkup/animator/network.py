"""First-order motion animation of the identity image, driven by F_int."""
from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InvalidArgument
from .blocks import DownBlock2d, Hourglass, ResBlock2d, UpBlock2d, make_coordinate_grid, resize, warp


@dataclass
class AnimatorConfig:
    num_kp: int = 10
    kp_resolution: int = 64
    temperature: float = 0.1
    kp_variance: float = 0.01
    kp_block_expansion: int = 32
    kp_max_features: int = 1024
    kp_num_blocks: int = 5
    motion_block_expansion: int = 64
    motion_max_features: int = 1024
    motion_num_blocks: int = 5
    gen_block_expansion: int = 64
    gen_max_features: int = 512
    gen_num_down_blocks: int = 2
    gen_num_bottleneck: int = 6
    estimate_occlusion: bool = True
    residual_mode: str = "additive"  # additive | multiplicative

    def __post_init__(self):
        if self.residual_mode not in ("additive", "multiplicative"):
            raise InvalidArgument(f"unknown residual_mode {self.residual_mode!r}")

    def to_dict(self):
        return asdict(self)


class KeypointSet(NamedTuple):
    positions: torch.Tensor  # (B, K, 2) in [-1, 1]
    jacobians: torch.Tensor  # (B, K, 2, 2)


class DenseMotion(NamedTuple):
    flow: torch.Tensor  # (B, h, w, 2) backward-warp grid
    occlusion: torch.Tensor  # (B, h, w) in [0, 1]
    mask: torch.Tensor  # (B, K + 1, h, w), channel 0 is background


class AnimationOutput(NamedTuple):
    residual: torch.Tensor
    f_hr: torch.Tensor
    kp_identity: KeypointSet
    kp_driving: KeypointSet
    motion: DenseMotion


def identity_keypoints(positions):
    eye = torch.eye(2, dtype=positions.dtype, device=positions.device)
    return KeypointSet(positions, eye.expand(*positions.shape[:-1], 2, 2).clone())


class KeypointDetector(nn.Module):
    """Soft-argmax keypoints and heatmap-weighted local Jacobians."""

    def __init__(self, config):
        super().__init__()
        c = self.config = config
        self.predictor = Hourglass(c.kp_block_expansion, 3, c.kp_num_blocks, c.kp_max_features)
        self.kp = nn.Conv2d(self.predictor.out_filters, c.num_kp, 7, padding=3)
        self.jacobian = nn.Conv2d(self.predictor.out_filters, 4 * c.num_kp, 7, padding=3)
        nn.init.zeros_(self.jacobian.weight)
        with torch.no_grad():
            self.jacobian.bias.copy_(torch.tensor([1.0, 0.0, 0.0, 1.0]).repeat(c.num_kp))

    def forward(self, frame):
        c = self.config
        x = resize(frame, c.kp_resolution)
        feat = self.predictor(x)
        logits = self.kp(feat)
        b, k, h, w = logits.shape
        heat = F.softmax(logits.flatten(2) / c.temperature, dim=2).view(b, k, h, w, 1)
        grid = make_coordinate_grid(h, w, logits.dtype, logits.device)
        positions = (heat * grid).sum(dim=(2, 3))
        jac = self.jacobian(feat).view(b, k, 4, h, w).permute(0, 1, 3, 4, 2)
        jac = (heat * jac).sum(dim=(2, 3)).view(b, k, 2, 2)
        return KeypointSet(positions, jac)


def kp_to_gaussian(positions, side, variance):
    grid = make_coordinate_grid(side, side, positions.dtype, positions.device)
    diff = grid[None, None] - positions[:, :, None, None, :]
    return torch.exp(-0.5 * (diff ** 2).sum(-1) / variance)


class DenseMotionNetwork(nn.Module):
    """Blend K local affine motions plus a static background into one flow."""

    def __init__(self, config):
        super().__init__()
        c = self.config = config
        k1 = c.num_kp + 1
        self.hourglass = Hourglass(c.motion_block_expansion, k1 * 4, c.motion_num_blocks, c.motion_max_features)
        self.mask = nn.Conv2d(self.hourglass.out_filters, k1, 7, padding=3)
        self.occlusion = nn.Conv2d(self.hourglass.out_filters, 1, 7, padding=3) if c.estimate_occlusion else None

    def sparse_motions(self, kp_identity, kp_driving, side, dtype, device):
        """(B, K+1, h, w, 2): for each keypoint, where a driving pixel lands in the identity image."""
        grid = make_coordinate_grid(side, side, dtype, device)
        b, k = kp_driving.positions.shape[:2]
        rel = grid[None, None] - kp_driving.positions[:, :, None, None, :]
        jac = kp_identity.jacobians @ torch.inverse(kp_driving.jacobians)
        rel = torch.einsum("bkij,bkhwj->bkhwi", jac, rel)
        motions = rel + kp_identity.positions[:, :, None, None, :]
        background = grid[None, None].expand(b, 1, side, side, 2)
        return torch.cat([background, motions], dim=1)

    def forward(self, identity_frame, kp_identity, kp_driving):
        c = self.config
        if kp_identity.positions.shape != kp_driving.positions.shape:
            raise InvalidArgument(
                f"keypoint count mismatch {tuple(kp_identity.positions.shape)} vs {tuple(kp_driving.positions.shape)}")
        src = resize(identity_frame, c.kp_resolution)
        b, _, h, w = src.shape
        k1 = kp_driving.positions.shape[1] + 1
        heat = kp_to_gaussian(kp_driving.positions, h, c.kp_variance) - kp_to_gaussian(kp_identity.positions, h, c.kp_variance)
        heat = torch.cat([torch.zeros_like(heat[:, :1]), heat], dim=1)
        sparse = self.sparse_motions(kp_identity, kp_driving, h, src.dtype, src.device)
        src_rep = src[:, None].expand(b, k1, *src.shape[1:]).reshape(b * k1, *src.shape[1:])
        deformed = F.grid_sample(src_rep, sparse.reshape(b * k1, h, w, 2), align_corners=True).view(b, k1, 3, h, w)
        inp = torch.cat([heat[:, :, None], deformed], dim=2).view(b, k1 * 4, h, w)
        pred = self.hourglass(inp)
        mask = F.softmax(self.mask(pred), dim=1)
        flow = (mask[..., None] * sparse).sum(dim=1)
        if self.occlusion is not None:
            occlusion = torch.sigmoid(self.occlusion(pred))[:, 0]
        else:
            occlusion = torch.ones(b, h, w, dtype=src.dtype, device=src.device)
        return DenseMotion(flow, occlusion, mask)


class ResidualGenerator(nn.Module):
    """Warps identity features by the dense motion and emits a residual image.

    The driving frame is encoded alongside so the residual can be expressed
    relative to F_int.
    """

    def __init__(self, config):
        super().__init__()
        c = self.config = config
        be, mf = c.gen_block_expansion, c.gen_max_features
        self.first = nn.Conv2d(3, be, 7, padding=3)
        self.drive_first = nn.Conv2d(3, be, 7, padding=3)
        down, drive_down = [], []
        for i in range(c.gen_num_down_blocks):
            cin, cout = min(mf, be * 2 ** i), min(mf, be * 2 ** (i + 1))
            down.append(DownBlock2d(cin, cout))
            drive_down.append(DownBlock2d(cin, cout))
        self.down = nn.ModuleList(down)
        self.drive_down = nn.ModuleList(drive_down)
        ch = min(mf, be * 2 ** c.gen_num_down_blocks)
        self.fuse = nn.Conv2d(2 * ch, ch, 1)
        self.bottleneck = nn.Sequential(*[ResBlock2d(ch) for _ in range(c.gen_num_bottleneck)])
        up = []
        for i in reversed(range(c.gen_num_down_blocks)):
            up.append(UpBlock2d(min(mf, be * 2 ** (i + 1)), min(mf, be * 2 ** i)))
        self.up = nn.ModuleList(up)
        self.final = nn.Conv2d(be, 3, 7, padding=3)

    def forward(self, identity_frame, driving_frame, motion):
        x = F.leaky_relu(self.first(identity_frame), 0.2)
        for block in self.down:
            x = block(x)
        x = warp(x, motion.flow)
        occ = motion.occlusion[:, None]
        if occ.shape[-1] != x.shape[-1]:
            occ = resize(occ, x.shape[-1])
        x = x * occ
        d = F.leaky_relu(self.drive_first(driving_frame), 0.2)
        for block in self.drive_down:
            d = block(d)
        x = self.fuse(torch.cat([x, d], dim=1))
        x = self.bottleneck(x)
        for block in self.up:
            x = block(x)
        return torch.tanh(self.final(x))


def compose(f_int, residual, mode="additive"):
    if mode == "additive":
        return torch.clamp(f_int + residual, 0.0, 1.0)
    return torch.clamp(f_int * (1.0 + residual), 0.0, 1.0)


class Animator(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or AnimatorConfig()
        self.kp_detector = KeypointDetector(self.config)
        self.dense_motion = DenseMotionNetwork(self.config)
        self.generator = ResidualGenerator(self.config)

    def detect_keypoints(self, frames):
        return self.kp_detector(frames)

    def animate_frames(self, identity_frames, driving_frames, zero_residual=False, kp_identity=None):
        """Per-frame animation on folded (B, 3, H, W) inputs."""
        kp_id = self.kp_detector(identity_frames) if kp_identity is None else kp_identity
        kp_drv = self.kp_detector(driving_frames)
        motion = self.dense_motion(identity_frames, kp_id, kp_drv)
        residual = self.generator(identity_frames, driving_frames, motion)
        if zero_residual:
            residual = torch.zeros_like(residual)
        f_hr = compose(driving_frames, residual, self.config.residual_mode)
        return AnimationOutput(residual, f_hr, kp_id, kp_drv, motion)

    def forward(self, identity_frame, f_int, zero_residual=False):
        """identity_frame (N, 3, H, W), f_int (N, T, 3, H, W) -> outputs shaped (N, T, ...)."""
        if identity_frame.dim() != 4 or f_int.dim() != 5:
            raise InvalidArgument("expected identity (N, 3, H, W) and F_int (N, T, 3, H, W)")
        if identity_frame.shape[0] != f_int.shape[0] or identity_frame.shape[1:] != f_int.shape[2:]:
            raise InvalidArgument(
                f"identity {tuple(identity_frame.shape)} incompatible with F_int {tuple(f_int.shape)}")
        n, t = f_int.shape[:2]
        ident = identity_frame[:, None].expand_as(f_int).reshape(n * t, *f_int.shape[2:])
        kp = self.kp_detector(identity_frame)
        kp_id = KeypointSet(kp.positions.repeat_interleave(t, 0), kp.jacobians.repeat_interleave(t, 0))
        out = self.animate_frames(ident, f_int.reshape(n * t, *f_int.shape[2:]), zero_residual, kp_id)
        return out._replace(residual=out.residual.view_as(f_int), f_hr=out.f_hr.view_as(f_int))
