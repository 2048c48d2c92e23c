"""Training windows: co-timed frames, LR frames, mel slice, identity and landmarks."""
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import InvalidArgument
from .audio import MEL_STEPS_PER_FRAME, extract_melspectrogram
from .degrade import bicubic_downscale


@dataclass
class FaceTrackSample:
    gt_window: np.ndarray  # (T, 3, H, H)
    lr_window: np.ndarray  # (T, 3, s, s)
    mel_slice: np.ndarray  # (4T, 80)
    identity_frame: np.ndarray  # (3, H, H)
    landmarks: np.ndarray  # (T, 68, 2) or None
    scale_factor: int
    t0: int = 0

    @property
    def window(self):
        return self.gt_window.shape[0]


def quantize(frames):
    """Float [0, 1] -> uint8 with round-half-to-even."""
    return np.clip(np.rint(np.asarray(frames, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def dequantize(frames_u8):
    return np.asarray(frames_u8, dtype=np.float32) / 255.0


def sample_window(clip, audio, t0, *, window=5, scale_factor=32, landmarks=None,
                  mel=None, identity_index=0, quantize_lr=False):
    """Cut the window of ``window`` frames starting at ``t0``.

    ``mel`` may be a precomputed log-mel of the whole track; otherwise it is
    extracted here.  With ``quantize_lr`` the LR frames pass through 8-bit
    quantisation, matching what the codec transmits.
    """
    n = len(clip)
    if t0 < 0 or t0 + window > n:
        raise InvalidArgument(f"window [{t0}, {t0 + window}) outside clip of {n} frames")
    if clip.fps != 25:
        raise InvalidArgument("windows are cut from 25 FPS clips")
    if mel is None:
        mel = extract_melspectrogram(audio).mels
    lo, hi = MEL_STEPS_PER_FRAME * t0, MEL_STEPS_PER_FRAME * (t0 + window)
    if hi > len(mel):
        raise InvalidArgument(f"audio too short: need {hi} mel steps, have {len(mel)}")
    gt = clip.frames[t0:t0 + window]
    lr = bicubic_downscale(gt, scale_factor)
    if quantize_lr:
        lr = dequantize(quantize(lr))
    lm = None if landmarks is None else np.asarray(landmarks[t0:t0 + window])
    return FaceTrackSample(
        gt_window=gt,
        lr_window=lr,
        mel_slice=np.asarray(mel[lo:hi]),
        identity_frame=clip.frames[identity_index],
        landmarks=lm,
        scale_factor=scale_factor,
        t0=t0,
    )


def window_time_spans(t0, window, fps=25.0, hop_s=0.010):
    """(frame span, mel span) in seconds; mel step j covers [j*hop, (j+1)*hop)."""
    frame_span = (t0 / fps, (t0 + window) / fps)
    lo = MEL_STEPS_PER_FRAME * t0
    hi = MEL_STEPS_PER_FRAME * (t0 + window)
    return frame_span, (lo * hop_s, hi * hop_s)


def collate(samples, mel_normalizer=None, dtype=torch.float32):
    """Stack samples into a batch dict of tensors."""
    def stack(attr):
        return torch.as_tensor(np.stack([getattr(s, attr) for s in samples]), dtype=dtype)

    mels = [s.mel_slice for s in samples]
    if mel_normalizer is not None:
        mels = [mel_normalizer(m) for m in mels]
    batch = {
        "gt": stack("gt_window"),
        "lr": stack("lr_window"),
        "mel": torch.as_tensor(np.stack(mels), dtype=dtype),
        "identity": stack("identity_frame"),
    }
    if all(s.landmarks is not None for s in samples):
        batch["landmarks"] = stack("landmarks")
    return batch
