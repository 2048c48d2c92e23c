"""Parametric talking-face renderer with known 68-point landmarks.

The face is a 3D point template posed by yaw/pitch/roll, projected
orthographically and rasterised as filled polygons.  Each facial region is
painted with a fixed, well separated colour so that region masks can be
recovered from any rendered (or generated) frame.
"""
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

# 68-point layout (FAN / iBUG convention)
JAW = np.arange(0, 17)
EYEBROWS = np.arange(17, 27)
NOSE = np.arange(27, 36)
EYES = np.arange(36, 48)
LIPS = np.arange(48, 68)
OUTER_LIPS = np.arange(48, 60)
INNER_LIPS = np.arange(60, 68)

REGIONS = {
    "lips": LIPS,
    "nose": NOSE,
    "eyes": EYES,
    "eyebrows": EYEBROWS,
}

# region paint colours; skin/hair/background are identity specific
BROW_RGB = (0.22, 0.12, 0.04)
EYE_RGB = (0.08, 0.10, 0.45)
NOSE_RGB = (0.30, 0.55, 0.30)
LIP_RGB = (0.85, 0.08, 0.15)
MOUTH_RGB = (0.20, 0.0, 0.05)


@dataclass
class FaceIdentity:
    """Appearance and shape parameters for one synthetic person."""

    identity_id: str
    skin: tuple
    hair: tuple
    background: tuple
    eye_spacing: float = 0.45
    mouth_width: float = 0.38
    nose_length: float = 1.0
    brow_height: float = 0.45
    face_scale: float = 0.30

    @classmethod
    def from_seed(cls, seed):
        rng = np.random.default_rng([seed, 7919])
        skin = tuple(float(v) for v in np.array([0.93, 0.78, 0.64]) * rng.uniform(0.6, 1.0))
        hair = tuple(float(v) for v in rng.uniform(0.05, 0.45, 3) * np.array([1.0, 0.8, 0.6]))
        background = tuple(float(v) for v in rng.uniform(0.55, 0.95, 3))
        return cls(
            identity_id=f"synth{seed:04d}",
            skin=skin,
            hair=hair,
            background=background,
            eye_spacing=float(rng.uniform(0.40, 0.50)),
            mouth_width=float(rng.uniform(0.32, 0.44)),
            nose_length=float(rng.uniform(0.85, 1.15)),
            brow_height=float(rng.uniform(0.40, 0.52)),
            face_scale=float(rng.uniform(0.28, 0.32)),
        )

    def palette(self):
        return {
            "background": self.background,
            "hair": self.hair,
            "skin": self.skin,
            "eyebrows": BROW_RGB,
            "eyes": EYE_RGB,
            "nose": NOSE_RGB,
            "lips": LIP_RGB,
            "mouth": MOUTH_RGB,
        }


def face_template(identity, aperture=0.0):
    """3D landmark template in face units (x right, y down, z towards camera).

    ``aperture`` is the inner-lip opening in the same units.  Returns the 68
    landmarks and a forehead arc used only for the face outline.
    """
    pts = np.zeros((68, 3))
    phi = np.pi - np.pi * np.arange(17) / 16
    pts[JAW, 0] = np.cos(phi)
    pts[JAW, 1] = -0.1 + 1.1 * np.sin(phi)
    pts[JAW, 2] = -0.5 * np.abs(np.cos(phi))

    bx = np.linspace(0.78, 0.18, 5)
    arch = np.sin(np.linspace(0.2, np.pi - 0.2, 5))
    by = -identity.brow_height - 0.08 * arch
    pts[17:22] = np.stack([-bx, by, np.full(5, 0.22)], 1)
    pts[22:27] = np.stack([bx[::-1], by[::-1], np.full(5, 0.22)], 1)

    nl = identity.nose_length
    pts[27:31, 0] = 0.0
    pts[27:31, 1] = np.linspace(-0.28, -0.28 + 0.45 * nl, 4)
    pts[27:31, 2] = np.linspace(0.32, 0.62, 4)
    pts[31:36, 0] = np.linspace(-0.18, 0.18, 5)
    pts[31:36, 1] = -0.28 + 0.55 * nl + np.array([0.0, 0.02, 0.04, 0.02, 0.0])
    pts[31:36, 2] = 0.42

    ang = np.deg2rad([180, 120, 60, 0, -60, -120])
    for start, sign in ((36, -1), (42, 1)):
        cx = sign * identity.eye_spacing
        pts[start:start + 6, 0] = cx + 0.16 * np.cos(ang)
        pts[start:start + 6, 1] = -0.25 - 0.07 * np.sin(ang)
        pts[start:start + 6, 2] = 0.25

    mw = identity.mouth_width
    cy = 0.62
    half = aperture / 2
    # outer: 48 left corner, 49-53 upper lip, 54 right corner, 55-59 lower lip
    ux = mw * np.cos(np.deg2rad([150, 115, 90, 65, 30]))
    pts[48] = (-mw, cy, 0.30)
    pts[49:54, 0] = ux
    pts[49:54, 1] = cy - half - np.array([0.06, 0.10, 0.08, 0.10, 0.06])
    pts[54] = (mw, cy, 0.30)
    pts[55:60, 0] = -ux
    pts[55:60, 1] = cy + half + np.array([0.07, 0.11, 0.12, 0.11, 0.07])
    pts[49:54, 2] = pts[55:60, 2] = 0.34
    # inner: 60 left corner, 61-63 upper, 64 right corner, 65-67 lower
    iw = 0.8 * mw
    ix = iw * np.cos(np.deg2rad([135, 90, 45]))
    pts[60] = (-iw, cy, 0.32)
    pts[61:64, 0] = ix
    pts[61:64, 1] = cy - half * np.array([0.75, 1.0, 0.75])
    pts[64] = (iw, cy, 0.32)
    pts[65:68, 0] = -ix
    pts[65:68, 1] = cy + half * np.array([0.75, 1.0, 0.75])
    pts[61:64, 2] = pts[65:68, 2] = 0.32

    fphi = np.linspace(0, np.pi, 13)[1:-1]
    forehead = np.stack([np.cos(fphi), -0.1 - 0.95 * np.sin(fphi), -0.5 * np.abs(np.cos(fphi))], 1)
    return pts, forehead


def rotation_matrix(yaw, pitch, roll):
    """R = Rz(roll) @ Ry(yaw) @ Rx(pitch); angles in degrees."""
    y, p, r = np.deg2rad([yaw, pitch, roll])
    rx = np.array([[1, 0, 0], [0, np.cos(p), -np.sin(p)], [0, np.sin(p), np.cos(p)]])
    ry = np.array([[np.cos(y), 0, np.sin(y)], [0, 1, 0], [-np.sin(y), 0, np.cos(y)]])
    rz = np.array([[np.cos(r), -np.sin(r), 0], [np.sin(r), np.cos(r), 0], [0, 0, 1]])
    return rz @ ry @ rx


def project(points, rotation, center, scale):
    """Scaled orthographic projection of (n, 3) face-unit points to pixels."""
    cam = points @ rotation.T
    return cam[:, :2] * scale + np.asarray(center)


def _to_rgb255(rgb):
    return tuple(int(round(255 * c)) for c in rgb)


def render_face(identity, landmarks, forehead, size, supersample=4):
    """Rasterise one frame.  Returns float32 (3, size, size) in [0, 1]."""
    ss = supersample
    img = Image.new("RGB", (size * ss, size * ss), _to_rgb255(identity.background))
    draw = ImageDraw.Draw(img)

    def poly(pts, rgb):
        draw.polygon([(float(x) * ss, float(y) * ss) for x, y in pts], fill=_to_rgb255(rgb))

    jaw = landmarks[JAW]
    outline = np.concatenate([jaw, forehead], 0)
    centroid = outline.mean(0)
    hair = centroid + 1.12 * (forehead - centroid)
    hair = np.concatenate([jaw[:1] + 1.05 * (jaw[:1] - centroid), hair[::-1], jaw[-1:] + 1.05 * (jaw[-1:] - centroid)], 0)
    poly(hair, identity.hair)
    poly(outline, identity.skin)

    poly(landmarks[[27, 31, 32, 33, 34, 35]], NOSE_RGB)

    # eyebrows: thicken the 5-point arcs into closed bands
    for sl in (slice(17, 22), slice(22, 27)):
        arc = landmarks[sl]
        thick = 0.07 * identity.face_scale * size
        band = np.concatenate([arc, arc[::-1] + np.array([0.0, thick])], 0)
        poly(band, BROW_RGB)

    poly(landmarks[36:42], EYE_RGB)
    poly(landmarks[42:48], EYE_RGB)

    poly(landmarks[OUTER_LIPS], LIP_RGB)
    inner = landmarks[INNER_LIPS]
    if np.ptp(inner[:, 1]) * ss >= 0.5:
        poly(inner, MOUTH_RGB)

    if ss > 1:
        img = img.resize((size, size), Image.BOX)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


@dataclass
class PoseTrajectory:
    yaw_amp: float = 15.0
    pitch_amp: float = 8.0
    roll_amp: float = 6.0
    drift: float = 0.02
    phases: np.ndarray = field(default_factory=lambda: np.zeros(5))
    freqs: np.ndarray = field(default_factory=lambda: np.full(5, 0.5))

    @classmethod
    def random(cls, rng, yaw_amp, pitch_amp, roll_amp, drift=0.02):
        return cls(yaw_amp, pitch_amp, roll_amp, drift,
                   phases=rng.uniform(0, 2 * np.pi, 5), freqs=rng.uniform(0.25, 0.7, 5))

    def at(self, t):
        s = np.sin(2 * np.pi * self.freqs * t + self.phases)
        return (self.yaw_amp * s[0], self.pitch_amp * s[1], self.roll_amp * s[2],
                self.drift * s[3], self.drift * s[4])
