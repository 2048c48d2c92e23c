"""Whole-clip inference and per-clip metric reports."""
from dataclasses import dataclass

import numpy as np
import torch

from . import metrics
from .errors import InvalidArgument
from .providers import PaletteLandmarkProvider, TemplatePoseProvider
from .synthdata.audio import MEL_STEPS_PER_FRAME


def window_starts(n_frames, window):
    """Non-overlapping window starts, plus one flush with the end if needed."""
    if n_frames < window:
        raise InvalidArgument(f"clip of {n_frames} frames is shorter than the {window}-frame window")
    starts = list(range(0, n_frames - window + 1, window))
    if starts[-1] + window < n_frames:
        starts.append(n_frames - window)
    return starts


@dataclass
class Upsampled:
    f_int: np.ndarray
    f_hr: np.ndarray


class Pipeline:
    """LR frames + normalised mel + identity frame -> HR frames."""

    def __init__(self, backbone, animator, interp=None):
        self.backbone = backbone.eval()
        self.animator = animator.eval()
        self.interp = interp.eval() if interp is not None else None

    @property
    def window(self):
        return self.backbone.config.window

    @torch.no_grad()
    def interpolate(self, lr_5fps):
        """(n, 3, s, s) at 5 FPS (n a multiple of 5) -> 25 FPS."""
        if self.interp is None:
            raise InvalidArgument("5 FPS input needs an interpolation model")
        x = torch.as_tensor(np.asarray(lr_5fps), dtype=torch.float32)
        if len(x) % 5:
            raise InvalidArgument("5 FPS streams are processed in whole seconds (multiples of 5 frames)")
        out = self.interp(x.view(-1, 5, *x.shape[1:]))
        return out.reshape(-1, *x.shape[1:]).numpy()

    @torch.no_grad()
    def upsample(self, lr, mel, identity):
        lr = torch.as_tensor(np.asarray(lr), dtype=torch.float32)
        mel = torch.as_tensor(np.asarray(mel), dtype=torch.float32)
        ident = torch.as_tensor(np.asarray(identity), dtype=torch.float32)[None]
        n, t = len(lr), self.window
        if len(mel) < MEL_STEPS_PER_FRAME * n:
            raise InvalidArgument(f"mel has {len(mel)} steps, {n} frames need {MEL_STEPS_PER_FRAME * n}")
        side = self.backbone.config.hr_side
        f_int = np.zeros((n, 3, side, side), np.float32)
        f_hr = np.zeros_like(f_int)
        filled = np.zeros(n, bool)
        for s in window_starts(n, t):
            m = mel[MEL_STEPS_PER_FRAME * s:MEL_STEPS_PER_FRAME * (s + t)][None]
            fi = self.backbone(lr[s:s + t][None], m)
            fh = self.animator(ident, fi).f_hr
            new = ~filled[s:s + t]
            f_int[s:s + t][new] = fi[0].numpy()[new]
            f_hr[s:s + t][new] = fh[0].numpy()[new]
            filled[s:s + t] = True
        return Upsampled(f_int, f_hr)


def _lower_half_windows(frames, mel, window):
    wins, mels = [], []
    for s in window_starts(len(frames), window):
        wins.append(frames[s:s + window])
        mels.append(mel[MEL_STEPS_PER_FRAME * s:MEL_STEPS_PER_FRAME * (s + window)])
    return np.stack(wins), np.stack(mels)


def clip_report(gt, generated, *, landmarks=None, palette=None, identity=None, mel=None, syncnet=None,
                window=5, extractor=None):
    """Metric record for one clip; entries that cannot be computed are ``nan``.

    Landmarks and poses are estimated with the same providers on both the
    ground truth and the generated frames, so provider bias cancels.
    """
    gt, generated = np.asarray(gt), np.asarray(generated)
    rec = {
        "psnr": float(np.mean([metrics.psnr(a, b) for a, b in zip(generated, gt)])),
        "ssim": float(np.mean([metrics.ssim(a, b) for a, b in zip(generated, gt)])) if gt.shape[-1] >= 11 else np.nan,
        "lmd": np.nan,
        "pose_mae": np.nan,
        "lse_d": np.nan,
    }
    if landmarks is not None and palette is not None:
        prov = PaletteLandmarkProvider(gt[0], landmarks[0], palette)
        lm_gt, lm_gen = prov(gt), prov(generated)
        scale = metrics.face_scale(landmarks[0])
        rec["lmd"] = metrics.lmd(lm_gt / scale, lm_gen / scale)
        if identity is not None and not np.isnan(lm_gen).any():
            pose = TemplatePoseProvider(identity)
            rec["pose_mae"] = metrics.pose_mae(pose(lm_gt), pose(lm_gen)).mae
    if syncnet is not None and mel is not None:
        wins, mels = _lower_half_windows(generated, mel, window)
        rec["lse_d"] = metrics.lse_d(wins, mels, syncnet)
    return rec


def evaluate_bank(pipeline, bank, syncnet=None, scale_factor=None, with_frechet=True):
    """Upsample every clip in ``bank`` and return (per-clip rows, aggregate row)."""
    from .synthdata.degrade import bicubic_downscale
    from .synthdata.window import dequantize, quantize

    scale_factor = scale_factor or pipeline.backbone.config.scale_factor
    rows, reals, fakes = [], [], []
    for i, c in enumerate(bank.clips):
        gt = c.clip.frames
        lr = dequantize(quantize(bicubic_downscale(gt, scale_factor)))
        mel = bank.normalizer(bank.mels[i])
        out = pipeline.upsample(lr, mel, gt[0])
        truth = c.truth or {}
        ident = truth.get("identity")
        rec = clip_report(gt, out.f_hr, landmarks=c.landmarks, palette=ident.palette() if ident else None,
                          identity=ident, mel=mel, syncnet=syncnet, window=pipeline.window)
        rec["psnr_int"] = float(np.mean([metrics.psnr(a, b) for a, b in zip(out.f_int, gt)]))
        rec["clip"] = c.clip.identity_id
        rows.append(rec)
        reals.append(gt)
        fakes.append(out.f_hr)
    agg = {k: float(np.nanmean([r[k] for r in rows])) if not all(np.isnan(r[k]) for r in rows) else np.nan
           for k in rows[0] if k != "clip"}
    agg["clip"] = "ALL"
    if with_frechet:
        agg["frechet"] = metrics.feature_frechet(np.concatenate(reals), np.concatenate(fakes)).distance
    return rows, agg
