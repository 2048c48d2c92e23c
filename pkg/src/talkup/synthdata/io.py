"""File formats: landmark tracks, clip containers, wav audio, embedding tables."""
import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from ..errors import CorruptStream, InvalidArgument
from .audio import AudioTrack
from .generator import VideoClip
from .window import dequantize, quantize

LANDMARK_MAGIC = b"TKLM"
LANDMARK_VERSION = 1
# magic(4) | version u16 | points u16 | n_frames u32 | reserved u32
_LMK_HEADER = struct.Struct("<4sHHII")

EMBED_MAGIC = b"TKEM"
EMBED_VERSION = 1
# magic(4) | version u32 | rows u32 | dim u32
_EMB_HEADER = struct.Struct("<4sIII")


def write_landmarks(path, landmarks):
    lm = np.asarray(landmarks, dtype="<f4")
    if lm.ndim != 3 or lm.shape[1:] != (68, 2):
        raise InvalidArgument(f"landmarks must be (n, 68, 2), got {lm.shape}")
    with open(path, "wb") as fh:
        fh.write(_LMK_HEADER.pack(LANDMARK_MAGIC, LANDMARK_VERSION, 68, lm.shape[0], 0))
        fh.write(lm.tobytes())


def read_landmarks(path):
    data = Path(path).read_bytes()
    if len(data) < _LMK_HEADER.size:
        raise CorruptStream("landmark file shorter than header", offset=len(data))
    magic, version, points, n, _ = _LMK_HEADER.unpack_from(data)
    if magic != LANDMARK_MAGIC:
        raise CorruptStream(f"bad landmark magic {magic!r}", offset=0)
    if version != LANDMARK_VERSION:
        raise CorruptStream(f"unsupported landmark version {version}", offset=4)
    expected = _LMK_HEADER.size + n * points * 2 * 4
    if len(data) != expected:
        raise CorruptStream("landmark payload length mismatch", offset=len(data),
                            expected=expected, actual=len(data))
    arr = np.frombuffer(data, dtype="<f4", offset=_LMK_HEADER.size)
    return arr.reshape(n, points, 2).astype(np.float32)


def write_embeddings(path, rows):
    x = np.asarray(rows, dtype="<f4")
    if x.ndim != 2:
        raise InvalidArgument("embedding table must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMBED_MAGIC, EMBED_VERSION, x.shape[0], x.shape[1]))
        fh.write(x.tobytes())


def read_embeddings(path):
    data = Path(path).read_bytes()
    if len(data) < _EMB_HEADER.size:
        raise CorruptStream("embedding file shorter than header", offset=len(data))
    magic, version, rows, dim = _EMB_HEADER.unpack_from(data)
    if magic != EMBED_MAGIC:
        raise CorruptStream(f"bad embedding magic {magic!r}", offset=0)
    if version != EMBED_VERSION:
        raise CorruptStream(f"unsupported embedding version {version}", offset=4)
    expected = _EMB_HEADER.size + rows * dim * 4
    if len(data) != expected:
        raise CorruptStream("embedding payload length mismatch", offset=len(data),
                            expected=expected, actual=len(data))
    return np.frombuffer(data, dtype="<f4", offset=_EMB_HEADER.size).reshape(rows, dim).astype(np.float64)


def save_clip(path, clip):
    """Clip container: uint8 frames plus fps and identity in one .npz."""
    np.savez(path, frames=quantize(clip.frames), fps=np.float64(clip.fps),
             identity=np.array(clip.identity_id))


def load_clip(path):
    with np.load(path, allow_pickle=False) as z:
        frames = z["frames"]
        if frames.dtype == np.uint8:
            frames = dequantize(frames)
        return VideoClip(frames.astype(np.float32), float(z["fps"]), str(z["identity"]))


def save_frame_dir(directory, frames):
    """Write frames as numbered PNGs."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    u8 = quantize(frames)
    for i, f in enumerate(u8):
        Image.fromarray(np.ascontiguousarray(f.transpose(1, 2, 0))).save(directory / f"{i:05d}.png")


def load_frame_dir(directory):
    from PIL import Image

    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise InvalidArgument(f"no PNG frames in {directory}")
    frames = [np.asarray(Image.open(f).convert("RGB")).transpose(2, 0, 1) for f in files]
    return dequantize(np.stack(frames))


def save_wav(path, audio):
    pcm = np.clip(np.rint(np.asarray(audio.samples) * 32767), -32768, 32767).astype(np.int16)
    wavfile.write(path, audio.sample_rate, pcm)


def load_wav(path):
    sr, data = wavfile.read(path)
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    return AudioTrack(np.asarray(data, dtype=np.float32), int(sr))
