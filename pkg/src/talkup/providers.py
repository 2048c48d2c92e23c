"""Landmark and head-pose estimators for rendered or generated synthetic frames.

Synthetic faces paint each region in a fixed colour, so a frame's region
masks can be recovered by nearest-palette classification.  Landmarks for a
new frame are the identity frame's known landmarks carried over by the
affine map that matches each region mask's first and second moments.
Head pose is then a scaled-orthographic fit of the 3D template to those
landmarks.
"""
import numpy as np

from .errors import InvalidArgument
from .synthdata.face import EYEBROWS, EYES, JAW, LIPS, NOSE, face_template

REGION_COLOURS = {
    "lips": ("lips", "mouth"),
    "nose": ("nose",),
    "eyes": ("eyes",),
    "eyebrows": ("eyebrows",),
}
REGION_POINTS = {"lips": LIPS, "nose": NOSE, "eyes": EYES, "eyebrows": EYEBROWS}
FACE_COLOURS = ("skin", "eyebrows", "eyes", "nose", "lips", "mouth")
MIN_PIXELS = 4


def classify(frame, palette):
    """Label map (H, W) of indices into ``list(palette)`` by nearest colour."""
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise InvalidArgument(f"frame must be (3, H, W), got {img.shape}")
    cols = np.array(list(palette.values()), dtype=np.float64)
    d = ((img[None] - cols[:, :, None, None]) ** 2).sum(1)
    return d.argmin(0)


def mask_moments(mask):
    """(centroid (x, y), 2x2 covariance, pixel count) of a boolean mask."""
    ys, xs = np.nonzero(mask)
    n = len(xs)
    if n < MIN_PIXELS:
        return None
    pts = np.stack([xs, ys], 1).astype(np.float64) + 0.5
    mu = pts.mean(0)
    cov = np.cov(pts, rowvar=False) + np.eye(2) / 12.0  # pixel-area variance
    return mu, cov, n


def moment_affine(ref, cur):
    """Affine (A, b) taking the reference moments onto the current ones.

    Principal axes are paired by orientation so small rotations are kept;
    reflections are never introduced.
    """
    mu_r, cov_r, _ = ref
    mu_c, cov_c, _ = cur
    sr, ur = np.linalg.eigh(cov_r)
    sc, uc = np.linalg.eigh(cov_c)
    for k in range(2):
        if ur[:, k] @ uc[:, k] < 0:
            uc[:, k] = -uc[:, k]
    if np.linalg.det(ur) * np.linalg.det(uc) < 0:
        uc[:, 0] = -uc[:, 0]
    a = uc @ np.diag(np.sqrt(sc / sr)) @ ur.T
    return a, mu_c - a @ mu_r


class PaletteLandmarkProvider:
    """68-point landmark estimates for frames of one synthetic identity.

    ``identity_frame`` and ``identity_landmarks`` are a rendered frame and its
    exact landmarks; ``palette`` maps names to RGB (``FaceIdentity.palette()``).
    """

    def __init__(self, identity_frame, identity_landmarks, palette):
        self.palette = dict(palette)
        self.names = list(self.palette)
        self.ref_landmarks = np.asarray(identity_landmarks, dtype=np.float64)
        self.ref = self._moments(np.asarray(identity_frame))
        if self.ref["face"] is None:
            raise InvalidArgument("identity frame has no visible face pixels")

    def _moments(self, frame):
        labels = classify(frame, self.palette)
        out = {}
        for region, colours in REGION_COLOURS.items():
            out[region] = mask_moments(np.isin(labels, [self.names.index(c) for c in colours]))
        out["face"] = mask_moments(np.isin(labels, [self.names.index(c) for c in FACE_COLOURS]))
        return out

    def __call__(self, frame):
        frame = np.asarray(frame)
        if frame.ndim == 4:
            return np.stack([self(f) for f in frame])
        cur = self._moments(frame)
        if cur["face"] is None:
            return np.full((68, 2), np.nan)
        global_map = moment_affine(self.ref["face"], cur["face"])
        out = np.empty((68, 2))
        a, b = global_map
        out[JAW] = self.ref_landmarks[JAW] @ a.T + b
        for region, idx in REGION_POINTS.items():
            if self.ref[region] is not None and cur[region] is not None:
                a, b = moment_affine(self.ref[region], cur[region])
            else:
                a, b = global_map
            out[idx] = self.ref_landmarks[idx] @ a.T + b
        return out


POSE_POINTS = np.concatenate([EYEBROWS, NOSE, EYES, [48, 54]])


def fit_pose(landmarks, template):
    """Scaled-orthographic fit: returns (R (3, 3), scale, centre (2,))."""
    x = np.asarray(landmarks, dtype=np.float64)[POSE_POINTS]
    pts = np.asarray(template, dtype=np.float64)[POSE_POINTS]
    if np.isnan(x).any():
        raise InvalidArgument("landmarks contain NaN")
    xc, pc = x - x.mean(0), pts - pts.mean(0)
    m = np.linalg.lstsq(pc, xc, rcond=None)[0].T  # (2, 3) = s * R[:2]
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    rows = u @ vt
    rot = np.vstack([rows, np.cross(rows[0], rows[1])])
    scale = float(s.mean())
    centre = x.mean(0) - scale * (pts.mean(0) @ rot.T)[:2]
    return rot, scale, centre


class TemplatePoseProvider:
    """Head rotation per frame from landmarks (or from frames via a landmark provider)."""

    def __init__(self, identity, landmark_provider=None):
        self.template, _ = face_template(identity, 0.0)
        self.landmark_provider = landmark_provider

    def __call__(self, frames_or_landmarks):
        x = np.asarray(frames_or_landmarks)
        if x.shape[-2:] != (68, 2):
            if self.landmark_provider is None:
                raise InvalidArgument("frames given but no landmark provider configured")
            x = self.landmark_provider(x)
        if x.ndim == 2:
            return fit_pose(x, self.template)[0]
        return np.stack([fit_pose(lm, self.template)[0] for lm in x])
