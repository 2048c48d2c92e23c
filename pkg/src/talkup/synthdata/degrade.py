"""Anti-aliased Catmull-Rom (a = -0.5) bicubic downscaling."""
from functools import lru_cache

import numpy as np
import torch

from ..errors import InvalidArgument

SCALE_FACTORS = (4, 8, 16, 32)


def cubic_kernel(x, a=-0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    m1 = x <= 1
    m2 = (x > 1) & (x < 2)
    out[m1] = (a + 2) * x[m1] ** 3 - (a + 3) * x[m1] ** 2 + 1
    out[m2] = a * x[m2] ** 3 - 5 * a * x[m2] ** 2 + 8 * a * x[m2] - 4 * a
    return out


@lru_cache(maxsize=32)
def downscale_matrix(in_size, factor):
    """(in_size // factor, in_size) resampling matrix.

    The kernel is stretched by ``factor`` for anti-aliasing; taps that fall
    outside the image are dropped and the rest renormalised.
    """
    out_size = in_size // factor
    centers = (np.arange(out_size) + 0.5) * factor - 0.5
    j = np.arange(in_size)
    w = cubic_kernel((j[None, :] - centers[:, None]) / factor)
    w /= w.sum(axis=1, keepdims=True)
    w.setflags(write=False)
    return w


def bicubic_downscale(frames, scale_factor, clamp=True):
    """Downscale ``(..., C, H, W)`` frames by an integer factor in {4, 8, 16, 32}.

    Accepts numpy arrays or torch tensors and returns the same kind.
    """
    if scale_factor not in SCALE_FACTORS:
        raise InvalidArgument(f"unsupported scale factor {scale_factor}; expected one of {SCALE_FACTORS}")
    h, w = frames.shape[-2:]
    if h != w:
        raise InvalidArgument(f"frames must be square, got {h}x{w}")
    if h % scale_factor:
        raise InvalidArgument(f"side {h} not divisible by scale factor {scale_factor}")
    m = downscale_matrix(h, scale_factor)
    if isinstance(frames, torch.Tensor):
        mt = torch.tensor(m, dtype=frames.dtype, device=frames.device)
        out = mt @ frames @ mt.T
        return out.clamp(0.0, 1.0) if clamp else out
    x = np.asarray(frames)
    out = np.matmul(np.matmul(m, x), m.T)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(x.dtype if x.dtype.kind == "f" else np.float64)
