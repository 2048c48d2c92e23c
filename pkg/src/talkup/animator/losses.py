"""Training objectives for the animation stage."""
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigurationError, InvalidArgument
from ..synthdata.face import REGIONS
from .blocks import make_coordinate_grid

REGION_MARGIN = 0.2
PYRAMID_SCALES = (1.0, 0.5, 0.25, 0.125)


class RegionSkipped(UserWarning):
    pass


class FeaturePyramid(nn.Module):
    """Frozen, seeded 5-layer conv feature extractor (stand-in for VGG-19).

    Any module returning a list of feature maps for a (B, 3, H, W) input can
    be used in its place.
    """

    def __init__(self, widths=(16, 32, 64, 64, 64), seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers, cin = [], 3
        for w in widths:
            conv = nn.Conv2d(cin, w, 3, padding=1)
            fan_in = cin * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                conv.bias.zero_()
            layers.append(conv)
            cin = w
        self.layers = nn.ModuleList(layers)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        feats = []
        for i, conv in enumerate(self.layers):
            if i > 0:
                x = F.avg_pool2d(x, 2) if x.shape[-1] >= 2 else x
            x = F.relu(conv(x))
            feats.append(x)
        return feats

    def train(self, mode=True):
        return super().train(False)


def image_pyramid(x, scales=PYRAMID_SCALES):
    out = []
    for s in scales:
        if s == 1.0:
            out.append(x)
        else:
            side = max(1, int(round(x.shape[-1] * s)))
            out.append(F.interpolate(x, size=(side, side), mode="bilinear", align_corners=False, antialias=True))
    return out


def perceptual_loss(f_hr, f_gt, extractor, scales=PYRAMID_SCALES, layer_weights=None):
    """Sum over pyramid levels and layers of mean |phi(a) - phi(b)|.

    Frames may be (B, 3, H, W) or (N, T, 3, H, W).  Target features are
    detached.
    """
    if extractor is None:
        raise ConfigurationError("perceptual loss needs a feature extractor")
    if f_hr.shape != f_gt.shape:
        raise InvalidArgument(f"shape mismatch {tuple(f_hr.shape)} vs {tuple(f_gt.shape)}")
    if f_hr.dim() == 5:
        f_hr, f_gt = f_hr.flatten(0, 1), f_gt.flatten(0, 1)
    total = f_hr.new_zeros(())
    for a, b in zip(image_pyramid(f_hr, scales), image_pyramid(f_gt, scales)):
        fa, fb = extractor(a), extractor(b)
        weights = layer_weights or [1.0] * len(fa)
        for w, xa, xb in zip(weights, fa, fb):
            total = total + w * (xa - xb.detach()).abs().mean()
    return total


class RandomTPS:
    """Random affine + thin-plate-spline warp of normalised coordinates."""

    def __init__(self, batch, sigma_affine=0.05, sigma_tps=0.005, points_tps=5, generator=None,
                 dtype=torch.float32, theta=None, control_params=None):
        if theta is None:
            noise = torch.randn(batch, 2, 3, generator=generator, dtype=dtype) * sigma_affine
            theta = noise + torch.eye(2, 3, dtype=dtype)[None]
        self.theta = theta
        self.batch = batch
        if points_tps > 0:
            self.control_points = make_coordinate_grid(points_tps, points_tps, dtype).reshape(-1, 2)
            if control_params is None:
                control_params = torch.randn(batch, 1, points_tps ** 2, generator=generator, dtype=dtype) * sigma_tps
            self.control_params = control_params
        else:
            self.control_points = None
            self.control_params = None

    @classmethod
    def identity(cls, batch, dtype=torch.float32):
        return cls(batch, points_tps=0, theta=torch.eye(2, 3, dtype=dtype).expand(batch, 2, 3).clone())

    @classmethod
    def affine(cls, matrix, offset):
        """Pure affine warp x -> A x + b for every batch item."""
        theta = torch.cat([matrix, offset[..., None]], dim=-1)
        return cls(theta.shape[0], points_tps=0, theta=theta)

    def warp_coordinates(self, coords):
        """coords (B, P, 2) -> (B, P, 2)."""
        theta = self.theta.to(coords.dtype)
        out = coords @ theta[:, :, :2].transpose(1, 2) + theta[:, None, :, 2]
        if self.control_points is not None:
            cp = self.control_points.to(coords.dtype)
            dist = (coords[:, :, None, :] - cp[None, None]).abs().sum(-1)
            r2 = dist ** 2
            phi = r2 * torch.log(dist + 1e-6)
            out = out + (phi * self.control_params.to(coords.dtype)).sum(-1, keepdim=True)
        return out

    def jacobian(self, coords):
        """d warp / d coords at each point: (B, P, 2, 2)."""
        with torch.enable_grad():
            c = coords if coords.requires_grad else coords.detach().requires_grad_(True)
            new = self.warp_coordinates(c)
            gx = torch.autograd.grad(new[..., 0].sum(), c, create_graph=True)[0]
            gy = torch.autograd.grad(new[..., 1].sum(), c, create_graph=True)[0]
        return torch.stack([gx, gy], dim=-2)

    def transform_frame(self, frame):
        b, _, h, w = frame.shape
        grid = make_coordinate_grid(h, w, frame.dtype, frame.device).reshape(1, h * w, 2).expand(b, -1, -1)
        warped = self.warp_coordinates(grid).view(b, h, w, 2)
        return F.grid_sample(frame, warped, padding_mode="reflection", align_corners=True)


def equivariance_terms(kp_frame, kp_transformed, transform):
    """(position term, jacobian term) for keypoints on a frame and on its warp.

    ``transform.transform_frame`` samples the frame at warped coordinates, so
    a keypoint seen at ``p`` in the warped frame sits at ``warp(p)`` in the
    original.
    """
    mapped = transform.warp_coordinates(kp_transformed.positions)
    value = (kp_frame.positions - mapped).abs().mean()
    jt = transform.jacobian(kp_transformed.positions) @ kp_transformed.jacobians
    normed = torch.inverse(kp_frame.jacobians) @ jt
    eye = torch.eye(2, dtype=normed.dtype, device=normed.device)
    jac = (eye - normed).abs().mean()
    return value, jac


def equivariance_loss(kp_detector, frames, transform, value_weight=10.0, jacobian_weight=10.0):
    kp = kp_detector(frames)
    kp_t = kp_detector(transform.transform_frame(frames))
    value, jac = equivariance_terms(kp, kp_t, transform)
    return value_weight * value + jacobian_weight * jac


def convex_hull_area(points):
    """Monotone-chain hull area of (P, 2) points."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).round(9))))
    if len(pts) < 3:
        return 0.0

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        return 0.0
    x, y = hull[:, 0], hull[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1)))


def region_box(points, side, margin=REGION_MARGIN):
    """Integer crop box (x0, y0, x1, y1) around a landmark group, or None if degenerate."""
    pts = np.asarray(points, dtype=np.float64)
    if convex_hull_area(pts) <= 0.0:
        return None
    lo, hi = pts.min(0), pts.max(0)
    pad = margin * float(np.hypot(*(hi - lo)))
    x0, y0 = np.floor(lo - pad).astype(int)
    x1, y1 = np.ceil(hi + pad).astype(int)
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(side, x1), min(side, y1)
    if x1 <= x0 or y1 <= y0:
        return None
    return int(x0), int(y0), int(x1), int(y1)


def region_loss(f_hr, f_gt, landmarks, regions=REGIONS, margin=REGION_MARGIN):
    """Mean over samples of the summed per-region patch MSE.

    Patches are axis-aligned boxes around each region's landmarks (from the
    ground truth), padded by ``margin`` times the box diagonal.  Regions with
    a zero-area hull are skipped with a ``RegionSkipped`` warning.
    """
    if f_hr.shape != f_gt.shape:
        raise InvalidArgument(f"shape mismatch {tuple(f_hr.shape)} vs {tuple(f_gt.shape)}")
    if f_hr.dim() == 5:
        f_hr, f_gt = f_hr.flatten(0, 1), f_gt.flatten(0, 1)
        landmarks = landmarks.reshape(-1, *landmarks.shape[-2:])
    lm = landmarks.detach().cpu().numpy() if isinstance(landmarks, torch.Tensor) else np.asarray(landmarks)
    if lm.shape[0] != f_hr.shape[0]:
        raise InvalidArgument("one landmark set per frame is required")
    side = f_hr.shape[-1]
    total = f_hr.new_zeros(())
    for i in range(f_hr.shape[0]):
        for name, idx in regions.items():
            box = region_box(lm[i, idx], side, margin)
            if box is None:
                warnings.warn(f"region {name!r} degenerate in sample {i}; skipped", RegionSkipped)
                continue
            x0, y0, x1, y1 = box
            diff = f_hr[i, :, y0:y1, x0:x1] - f_gt[i, :, y0:y1, x0:x1]
            total = total + (diff ** 2).mean()
    return total / f_hr.shape[0]


@dataclass
class LossWeights:
    rec: float = 50.0
    region: float = 100.0
    sync: float = 0.05


LOSS_KEYS = ("rec", "fomm", "region", "sync")


def total_loss(components, weights=None):
    """L_HR = w_rec*rec + fomm + w_region*region + w_sync*sync."""
    weights = weights or LossWeights()
    missing = [k for k in LOSS_KEYS if k not in components]
    if missing:
        raise ConfigurationError(f"missing loss components: {missing}")
    return (weights.rec * components["rec"] + components["fomm"]
            + weights.region * components["region"] + weights.sync * components["sync"])
