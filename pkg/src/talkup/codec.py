"""Bit-exact LR stream container and bits-per-pixel accounting.

Byte layout (little-endian)::

    magic "TKUP" (4) | version u8 | lr_side u16 | hr_side u16 | fps_mode u8 |
    frame_count u32 | identity_codec u8 | reserved (16) | identity_len u32 |
    identity bytes | frames as raw 8-bit RGB, row-major (H, W, 3) per frame

Only the per-frame payload counts towards BPP; the identity frame is sent
once at call start and reported separately as startup bytes, and audio
travels out of band.
"""
import io
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction

import numpy as np

from .errors import CorruptStream, InvalidArgument

MAGIC = b"TKUP"
VERSION = 1
HEADER = struct.Struct("<4sBHHBIB16sI")
SCALE_RATIOS = (4, 8, 16, 32)


class FpsMode(IntEnum):
    FPS25 = 0
    FPS5_INTERP = 1


class IdentityCodec(IntEnum):
    RAW = 0
    PNG = 1


@dataclass(frozen=True)
class BitstreamHeader:
    lr_side: int
    hr_side: int
    fps_mode: FpsMode
    frame_count: int
    identity_codec: IdentityCodec = IdentityCodec.RAW
    version: int = VERSION
    reserved: bytes = bytes(16)

    def __post_init__(self):
        if self.lr_side <= 0 or self.hr_side % self.lr_side or self.hr_side // self.lr_side not in SCALE_RATIOS:
            raise InvalidArgument(f"hr/lr ratio must be one of {SCALE_RATIOS}, got {self.hr_side}/{self.lr_side}")
        if self.frame_count < 1:
            raise InvalidArgument("frame_count must be >= 1")
        if len(self.reserved) != 16:
            raise InvalidArgument("reserved field is 16 bytes")

    @property
    def frame_bytes(self):
        return self.lr_side * self.lr_side * 3


@dataclass
class EncodedStream:
    header: BitstreamHeader
    identity_payload: bytes
    frame_payload: bytes

    def __post_init__(self):
        expected = self.header.frame_count * self.header.frame_bytes
        if len(self.frame_payload) != expected:
            raise InvalidArgument(f"frame payload is {len(self.frame_payload)} bytes, header implies {expected}")

    def to_bytes(self):
        h = self.header
        head = HEADER.pack(MAGIC, h.version, h.lr_side, h.hr_side, int(h.fps_mode), h.frame_count,
                           int(h.identity_codec), h.reserved, len(self.identity_payload))
        return head + self.identity_payload + self.frame_payload

    @property
    def startup_bytes(self):
        return HEADER.size + len(self.identity_payload)

    @property
    def bits_per_frame(self):
        return self.header.frame_bytes * 8


def _as_u8(frames):
    a = np.asarray(frames)
    if a.dtype == np.uint8:
        return a
    if a.dtype.kind != "f":
        raise InvalidArgument(f"frames must be uint8 or float in [0, 1], got {a.dtype}")
    return np.clip(np.rint(a.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def _chw_to_bytes(frames_u8):
    return np.ascontiguousarray(frames_u8.transpose(0, 2, 3, 1)).tobytes()


def _encode_identity(identity_u8, codec):
    if codec == IdentityCodec.RAW:
        return np.ascontiguousarray(identity_u8.transpose(1, 2, 0)).tobytes()
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(identity_u8.transpose(1, 2, 0))).save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def encode_stream(lr_frames, identity_frame, mode=FpsMode.FPS25, identity_codec=IdentityCodec.RAW):
    """Pack (n, 3, s, s) LR frames and a (3, S, S) identity frame.

    Float inputs are quantised to 8 bits; uint8 inputs are taken verbatim.
    """
    lr = _as_u8(lr_frames)
    ident = _as_u8(identity_frame)
    if lr.ndim != 4 or lr.shape[1] != 3 or lr.shape[2] != lr.shape[3]:
        raise InvalidArgument(f"LR frames must be (n, 3, s, s), got {lr.shape}")
    if lr.shape[0] == 0:
        raise InvalidArgument("cannot encode zero frames")
    if ident.ndim != 3 or ident.shape[0] != 3 or ident.shape[1] != ident.shape[2]:
        raise InvalidArgument(f"identity frame must be (3, S, S), got {ident.shape}")
    header = BitstreamHeader(lr_side=lr.shape[2], hr_side=ident.shape[1], fps_mode=FpsMode(mode),
                             frame_count=lr.shape[0], identity_codec=IdentityCodec(identity_codec))
    return EncodedStream(header, _encode_identity(ident, header.identity_codec), _chw_to_bytes(lr))


def decode_stream(data):
    """Inverse of :func:`encode_stream`: returns (lr uint8, identity uint8, header)."""
    data = bytes(data)
    if len(data) < HEADER.size:
        raise CorruptStream("stream shorter than header", offset=len(data),
                            expected=HEADER.size, actual=len(data))
    magic, version, lr_side, hr_side, fps_mode, count, id_codec, reserved, id_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptStream(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise CorruptStream(f"unsupported version {version}", offset=4)
    try:
        header = BitstreamHeader(lr_side, hr_side, FpsMode(fps_mode), count, IdentityCodec(id_codec),
                                 version, reserved)
    except (ValueError, InvalidArgument) as exc:
        raise CorruptStream(f"invalid header: {exc}", offset=5) from exc

    pos = HEADER.size
    if len(data) < pos + id_len:
        raise CorruptStream("truncated identity payload", offset=len(data),
                            expected=pos + id_len, actual=len(data))
    id_bytes = data[pos:pos + id_len]
    pos += id_len
    expected = pos + count * header.frame_bytes
    if len(data) != expected:
        frames_present = (len(data) - pos) // header.frame_bytes
        kind = "truncated" if len(data) < expected else "trailing bytes after"
        raise CorruptStream(
            f"{kind} frame payload: expected {expected} bytes total, got {len(data)} "
            f"({frames_present} of {count} frames complete)",
            offset=min(len(data), expected), expected=expected, actual=len(data))
    lr = np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(count, lr_side, lr_side, 3).transpose(0, 3, 1, 2)

    if header.identity_codec == IdentityCodec.RAW:
        if id_len != hr_side * hr_side * 3:
            raise CorruptStream(f"raw identity payload is {id_len} bytes, expected {hr_side * hr_side * 3}",
                                offset=HEADER.size)
        ident = np.frombuffer(id_bytes, dtype=np.uint8).reshape(hr_side, hr_side, 3).transpose(2, 0, 1)
    else:
        from PIL import Image

        try:
            ident = np.asarray(Image.open(io.BytesIO(id_bytes)).convert("RGB")).transpose(2, 0, 1)
        except Exception as exc:  # PIL raises a zoo of types
            raise CorruptStream(f"undecodable PNG identity frame: {exc}", offset=HEADER.size) from exc
        if ident.shape != (3, hr_side, hr_side):
            raise CorruptStream(f"identity frame is {ident.shape}, header says {hr_side}", offset=HEADER.size)
    return np.ascontiguousarray(lr), np.ascontiguousarray(ident), header


# --- bits-per-pixel accounting -------------------------------------------------

KEYPOINT_BASELINE_BITS = (20 * 6 + 12) * 8  # 20 keypoints, 6 values each + 12 extra bytes


@dataclass
class BppReport:
    method: str
    bits_per_frame: Fraction
    hr_side: int
    notes: list = field(default_factory=list)
    published: str = ""

    @property
    def bpp(self):
        return self.bits_per_frame / (self.hr_side * self.hr_side)

    def as_row(self):
        return {
            "method": self.method,
            "bits_per_frame": float(self.bits_per_frame),
            "bpp": float(self.bpp),
            "bpp_exact": str(self.bpp),
            "published_bpp": self.published,
            "notes": "; ".join(self.notes),
        }


def compute_bpp(method, lr_side=8, hr_side=256, bits_per_frame=None, interp_ratio=5):
    """Exact BPP for one of: ours, ours_interp, keypoint_baseline, custom."""
    lr_bits = Fraction(lr_side * lr_side * 3 * 8)
    if method == "ours":
        return BppReport("ours", lr_bits, hr_side, [
            f"{lr_side}x{lr_side}x3x8 = {lr_bits} bits per frame, raw 8-bit RGB",
            "identity frame sent once (startup bytes), audio out of band",
            "published value 0.023 is the exact 0.0234375 rounded",
        ], published="0.023")
    if method == "ours_interp":
        bits = lr_bits / interp_ratio
        return BppReport("ours_interp", bits, hr_side, [
            f"1 in {interp_ratio} LR frames transmitted: {lr_bits}/{interp_ratio} = {float(bits)} bits per output frame",
            "published value 0.0046 truncates the exact 0.0046875",
        ], published="0.0046")
    if method == "keypoint_baseline":
        return BppReport("keypoint_baseline", Fraction(KEYPOINT_BASELINE_BITS), hr_side, [
            "20 keypoints: (20x6 + 12)x8 = 1056 bits per frame",
            "published value 0.016 is the exact 0.01611328125 rounded",
        ], published="0.016")
    if method == "custom":
        if bits_per_frame is None:
            raise InvalidArgument("custom BPP needs bits_per_frame")
        return BppReport("custom", Fraction(bits_per_frame), hr_side, ["user supplied bits per frame"])
    raise InvalidArgument(f"unknown BPP method {method!r}")


def stream_bpp(stream, interp_ratio=None):
    """BPP of an encoded stream's per-frame payload."""
    h = stream.header
    bits = Fraction(stream.bits_per_frame)
    if h.fps_mode == FpsMode.FPS5_INTERP:
        bits /= interp_ratio or 5
    return bits / (h.hr_side * h.hr_side)


# --- comparison table -----------------------------------------------------------

PUBLISHED_BASELINES = (
    # method, bpp, psnr, ssim, fid  (VoxCeleb2 compression comparison)
    ("H.264 (CRF=23)", 0.109, 32.96, 0.79, 9.75),
    ("H.264 (CRF=36)", 0.027, 19.24, 0.67, 30.12),
    ("H.266", 0.0076, 23.27, 0.70, 58.32),
    ("fs-vid2vid", None, 20.36, 0.71, 85.76),
    ("os-synth", 0.016, 24.37, 0.80, 69.13),
    ("Ours (published)", 0.023, 24.95, 0.71, 14.10),
    ("Ours frame-interp (published)", 0.0046, 23.72, 0.68, 14.51),
)

TABLE_COLUMNS = ("method", "bpp", "psnr", "ssim", "frechet", "provenance")


def bench_report(streams, reconstructions, ground_truth=None, baselines=PUBLISHED_BASELINES,
                 extractor=None):
    """Unified comparison table.

    ``streams`` maps method name -> EncodedStream; ``reconstructions`` maps
    method name -> HR frames (n, 3, H, W); ``ground_truth`` maps method name
    (or None for a shared reference) -> frames.  Baseline rows are echoed as
    published and tagged ``ingested``; our rows are tagged ``recomputed``.
    """
    from . import metrics

    rows = []
    for name, stream in streams.items():
        row = {"method": name, "bpp": float(stream_bpp(stream)), "psnr": "n/a", "ssim": "n/a",
               "frechet": "n/a", "provenance": "recomputed"}
        recon = reconstructions.get(name)
        gt = None
        if ground_truth is not None:
            gt = ground_truth.get(name, ground_truth.get(None)) if isinstance(ground_truth, dict) else ground_truth
        if recon is not None and gt is not None:
            recon, gt = np.asarray(recon), np.asarray(gt)
            row["psnr"] = float(np.mean([metrics.psnr(a, b) for a, b in zip(recon, gt)]))
            row["ssim"] = float(np.mean([metrics.ssim(a, b) for a, b in zip(recon, gt)]))
            if len(recon) >= 2:
                row["frechet"] = metrics.feature_frechet(gt, recon, extractor).distance
        rows.append(row)
    for method, bpp, psnr, ssim, fid in baselines:
        rows.append({"method": method, "bpp": "n/a" if bpp is None else bpp, "psnr": psnr, "ssim": ssim,
                     "frechet": fid, "provenance": "ingested"})
    return rows
