"""Seeded synthetic talking-face clips with audio-coupled mouth motion."""
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Optional

import numpy as np
import yaml

from ..errors import InvalidArgument
from .audio import SAMPLE_RATE, AudioTrack, envelope_signal, frame_rms, voiced_carrier
from .face import FaceIdentity, PoseTrajectory, face_template, project, render_face, rotation_matrix

DEFAULT_WINDOW = 5


@dataclass
class VideoClip:
    frames: np.ndarray  # (n, 3, H, W) float32 in [0, 1]
    fps: float = 25.0
    identity_id: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[1] != 3:
            raise InvalidArgument(f"frames must be (n, 3, H, W), got {f.shape}")
        if f.shape[0] < 1:
            raise InvalidArgument("a clip needs at least one frame")
        if f.shape[2] != f.shape[3]:
            raise InvalidArgument("face crops must be square")
        self.frames = f

    def __len__(self):
        return self.frames.shape[0]

    @property
    def side(self):
        return self.frames.shape[-1]


@dataclass
class SynthSpec:
    """Synthesis parameters; loadable from a YAML mapping."""

    size: int = 256
    fps: int = 25
    envelope: str = "random"  # random | sine | zero
    envelope_rate: float = 4.0
    yaw_amp: float = 15.0
    pitch_amp: float = 8.0
    roll_amp: float = 6.0
    drift: float = 0.02
    aperture_max: float = 0.32
    rms_ref: float = 0.2
    loudness: float = 0.8
    supersample: int = 4
    identity_seed: Optional[int] = None

    @classmethod
    def from_mapping(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgument(f"unknown synthesis keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            return cls.from_mapping(yaml.safe_load(fh) or {})

    def to_yaml(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(asdict(self), fh, sort_keys=True)


class SyntheticClip(NamedTuple):
    clip: VideoClip
    audio: AudioTrack
    landmarks: np.ndarray  # (n, 68, 2) pixel coordinates
    truth: dict


def aperture_from_rms(rms, spec):
    """Strictly increasing map from window RMS to inner-lip opening; 0 -> closed."""
    return spec.aperture_max * np.tanh(np.asarray(rms) / spec.rms_ref)


def mouth_aperture(landmarks):
    """Pixel distance between the inner-lip midpoints (62 and 66)."""
    lm = np.asarray(landmarks)
    return np.linalg.norm(lm[..., 62, :] - lm[..., 66, :], axis=-1)


def generate_synthetic_clip(seed, n_frames, spec=None, audio=None):
    """Render a clip whose mouth opening follows the audio loudness.

    ``audio`` overrides the synthetic track (it is used as-is and the mouth is
    driven by its RMS).  The identity comes from ``spec.identity_seed`` when
    set, otherwise from ``seed``.
    """
    spec = spec or SynthSpec()
    if n_frames < DEFAULT_WINDOW:
        raise InvalidArgument(f"n_frames must be >= {DEFAULT_WINDOW}, got {n_frames}")
    if spec.fps != 25:
        raise InvalidArgument("synthetic clips are generated at 25 FPS")
    rng = np.random.default_rng(seed)
    identity = FaceIdentity.from_seed(seed if spec.identity_seed is None else spec.identity_seed)

    spf = SAMPLE_RATE // spec.fps
    n_samples = n_frames * spf
    if audio is None:
        env = envelope_signal(spec.envelope, n_samples, rng, spec.envelope_rate)
        carrier = voiced_carrier(n_samples, rng)
        audio = AudioTrack((spec.loudness * env * carrier).astype(np.float32))
    else:
        env = np.abs(np.asarray(audio.samples, dtype=np.float64))
        # keep the rng stream aligned with the synthetic-audio path
        envelope_signal("zero", n_samples, rng)
    rms = frame_rms(audio.samples, n_frames, spec.fps)
    apertures = aperture_from_rms(rms, spec)

    traj = PoseTrajectory.random(rng, spec.yaw_amp, spec.pitch_amp, spec.roll_amp, spec.drift)
    size = spec.size
    scale = identity.face_scale * size
    frames = np.empty((n_frames, 3, size, size), dtype=np.float32)
    landmarks = np.empty((n_frames, 68, 2), dtype=np.float32)
    rotations = np.empty((n_frames, 3, 3))
    for k in range(n_frames):
        yaw, pitch, roll, dx, dy = traj.at(k / spec.fps)
        rot = rotation_matrix(yaw, pitch, roll)
        center = (size * (0.5 + dx), size * (0.5 + dy))
        pts3, forehead3 = face_template(identity, apertures[k])
        lm = project(pts3, rot, center, scale)
        fh = project(forehead3, rot, center, scale)
        frames[k] = render_face(identity, lm, fh, size, spec.supersample)
        landmarks[k] = lm
        rotations[k] = rot

    env_frames = np.asarray(env[: n_frames * spf]).reshape(n_frames, spf).mean(axis=1)
    truth = {
        "identity": identity,
        "rotations": rotations,
        "apertures": apertures,
        "rms": rms,
        "envelope": env_frames,
        "face_scale_px": scale,
    }
    clip = VideoClip(frames, float(spec.fps), identity.identity_id)
    return SyntheticClip(clip, audio, landmarks, truth)
