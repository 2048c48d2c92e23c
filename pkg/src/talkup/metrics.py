"""Evaluation metrics: PSNR, SSIM, landmark distance, sync distance, pose error, feature Fréchet."""
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, InvalidArgument
from .synthdata.face import REGIONS

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
FRECHET_EPS = 1e-6
ORTHO_TOL = 1e-3
GIMBAL_DEG = 89.9

LMD_INDICES = np.array(sorted(i for idx in REGIONS.values() for i in idx))


def _numpy(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _same_shape(a, b):
    a, b = _numpy(a), _numpy(b)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for images in [0, 1]."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation, 'valid' extent
    k = len(g)
    rows = sum(g[i] * img[i:img.shape[0] - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, j:rows.shape[1] - k + 1 + j] for j in range(k))


def _ssim_plane(x, y, g, c1, c2):
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range=1.0):
    """Mean SSIM over channels; accepts (H, W) or (C, H, W)."""
    a, b = _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise InvalidArgument(f"ssim expects (H, W) or (C, H, W), got {a.shape}")
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise InvalidArgument(f"image {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    return float(np.mean([_ssim_plane(x, y, g, c1, c2) for x, y in zip(a, b)]))


def face_scale(landmarks):
    """Bounding-box diagonal of a 68-point set."""
    lm = _numpy(landmarks)
    return float(np.hypot(*(lm.max(0) - lm.min(0))))


def normalize_landmarks(landmarks, scale=None):
    """Divide pixel landmarks by the face box diagonal (or a supplied scale)."""
    lm = _numpy(landmarks)
    return lm / (scale if scale is not None else face_scale(lm))


def lmd(landmarks_a, landmarks_b):
    """Mean Euclidean distance over the eyes/brows/nose/lips points.

    Inputs are (68, 2) or (n, 68, 2), already normalised by face size.
    Missing landmarks (None or NaN) give ``nan``, reported as n/a.
    """
    if landmarks_a is None or landmarks_b is None:
        return float("nan")
    a, b = _same_shape(landmarks_a, landmarks_b)
    if a.shape[-2:] != (68, 2):
        raise InvalidArgument(f"landmarks must be (..., 68, 2), got {a.shape}")
    d = np.linalg.norm(a[..., LMD_INDICES, :] - b[..., LMD_INDICES, :], axis=-1)
    if np.isnan(d).any():
        return float("nan")
    return float(d.mean())


def lse_d_from_embeddings(video_emb, audio_emb):
    """Mean distance between unit-normalised embedding pairs (range [0, 2])."""
    v, a = _same_shape(video_emb, audio_emb)
    v = v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-12)
    a = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-12)
    return float(np.linalg.norm(v - a, axis=-1).mean())


def lse_d(windows, mels, syncnet, batch=16):
    """Sync distance of (n, T, 3, H, W) generated windows against (n, 4T, 80) mels.

    Scores come from this package's own discriminator, so values are not on
    the scale of externally pretrained lip-sync models.
    """
    import torch

    from .syncnet import lower_half

    if syncnet is None or not syncnet.is_trained:
        raise ConfigurationError("sync distance needs a trained sync discriminator (run train-syncnet)")
    syncnet.eval()
    vs, as_ = [], []
    with torch.no_grad():
        for i in range(0, len(windows), batch):
            w = torch.as_tensor(windows[i:i + batch], dtype=torch.float32)
            m = torch.as_tensor(mels[i:i + batch], dtype=torch.float32)
            v, a = syncnet.embed_pair(lower_half(w), m)
            vs.append(v.numpy())
            as_.append(a.numpy())
    return lse_d_from_embeddings(np.concatenate(vs), np.concatenate(as_))


class EulerAngles(NamedTuple):
    yaw: float
    pitch: float
    roll: float
    gimbal: bool


def check_rotation(rot):
    r = _numpy(rot)
    if r.shape[-2:] != (3, 3):
        raise InvalidArgument(f"rotation must be 3x3, got {r.shape}")
    err = np.linalg.norm(np.swapaxes(r, -1, -2) @ r - np.eye(3), axis=(-2, -1))
    if np.any(err > ORTHO_TOL):
        raise InvalidArgument(f"non-orthonormal rotation (|R^T R - I| = {float(np.max(err)):.3g})")
    return r


def euler_from_rotation(rot):
    """(yaw, pitch, roll) in degrees for R = Rz(roll) Ry(yaw) Rx(pitch).

    Near |yaw| = 90 the decomposition is singular: roll is folded into pitch
    and the result is flagged.
    """
    r = check_rotation(rot)
    yaw = math.degrees(math.asin(max(-1.0, min(1.0, -r[2, 0]))))
    if abs(yaw) > GIMBAL_DEG:
        pitch = math.degrees(math.atan2(-r[1, 2], r[1, 1]))
        return EulerAngles(yaw, pitch, 0.0, True)
    pitch = math.degrees(math.atan2(r[2, 1], r[2, 2]))
    roll = math.degrees(math.atan2(r[1, 0], r[0, 0]))
    return EulerAngles(yaw, pitch, roll, False)


@dataclass
class PoseError:
    yaw: float
    pitch: float
    roll: float
    mae: float
    gimbal_frames: int = 0


def pose_mae(poses_a, poses_b, pose_provider=None):
    """Per-angle mean absolute error (degrees) between two pose sequences.

    Each frame's error is read off the relative rotation R_a^T R_b, which
    makes the result independent of any rotation shared by both sequences.
    With ``pose_provider`` the inputs are frames and the provider maps a
    frame sequence to (n, 3, 3) rotations.
    """
    if pose_provider is not None:
        poses_a, poses_b = pose_provider(poses_a), pose_provider(poses_b)
    ra, rb = check_rotation(poses_a), check_rotation(poses_b)
    if ra.shape != rb.shape:
        raise InvalidArgument(f"pose sequences differ in shape {ra.shape} vs {rb.shape}")
    if ra.ndim == 2:
        ra, rb = ra[None], rb[None]
    angles = [euler_from_rotation(x.T @ y) for x, y in zip(ra, rb)]
    errs = np.abs(np.array([[e.yaw, e.pitch, e.roll] for e in angles])).mean(0)
    gimbal = sum(e.gimbal for e in angles)
    if gimbal:
        warnings.warn(f"{gimbal} frame(s) near gimbal lock; roll folded into pitch", RuntimeWarning)
    return PoseError(float(errs[0]), float(errs[1]), float(errs[2]), float(errs.mean()), gimbal)


@dataclass
class FrechetResult:
    distance: float
    regularized: bool
    eps: float
    n_real: int
    n_generated: int

    def __float__(self):
        return self.distance


def default_features(frames):
    """Global-average-pooled activations of the seeded frozen feature pyramid."""
    import torch

    from .animator.losses import FeaturePyramid

    net = FeaturePyramid()
    x = torch.as_tensor(_numpy(frames), dtype=torch.float32)
    with torch.no_grad():
        feats = net(x)
    return np.concatenate([f.mean(dim=(-2, -1)).numpy() for f in feats], axis=1).astype(np.float64)


def _features(x, extractor):
    x = _numpy(x)
    if x.ndim == 2:  # already embeddings (n, d)
        return x
    return _numpy((extractor or default_features)(x))


def frechet_from_features(feat_a, feat_b, eps=FRECHET_EPS):
    a, b = _numpy(feat_a), _numpy(feat_b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InvalidArgument(f"feature sets must be (n, d) with equal d, got {a.shape} and {b.shape}")
    if len(a) < 2 or len(b) < 2:
        raise InvalidArgument("feature Fréchet distance needs at least two samples per set")
    mu_a, mu_b = a.mean(0), b.mean(0)
    cov_a, cov_b = np.atleast_2d(np.cov(a, rowvar=False)), np.atleast_2d(np.cov(b, rowvar=False))
    regularized = False
    covmean = scipy.linalg.sqrtm(cov_a @ cov_b)
    if not np.isfinite(covmean).all() or np.abs(np.imag(covmean)).max() > 1e-3 \
            or np.linalg.matrix_rank(cov_a) < len(cov_a) or np.linalg.matrix_rank(cov_b) < len(cov_b):
        regularized = True
        off = np.eye(len(cov_a)) * eps
        cov_a, cov_b = cov_a + off, cov_b + off
        covmean = scipy.linalg.sqrtm(cov_a @ cov_b)
    covmean = np.real(covmean)
    d = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2 * np.trace(covmean))
    return FrechetResult(max(d, 0.0), regularized, eps if regularized else 0.0, len(a), len(b))


def feature_frechet(real, generated, extractor=None, eps=FRECHET_EPS):
    """Fréchet distance between feature distributions of two frame sets.

    ``real``/``generated`` are frames (n, 3, H, W) run through ``extractor``
    (default: the frozen feature pyramid) or precomputed (n, d) embeddings,
    e.g. read with :func:`talkup.synthdata.io.read_embeddings`.
    """
    return frechet_from_features(_features(real, extractor), _features(generated, extractor), eps)
