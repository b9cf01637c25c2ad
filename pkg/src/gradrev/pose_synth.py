"""Virtual pose synthesis from one frontal image and nine landmarks.

Pipeline: fit an affine (weak-perspective) camera mapping a generic 9-point
3D face model onto the detected 2D landmarks, rotate the model, reproject it
with the fitted camera, then warp the image piecewise-affinely so the fitted
landmark positions move to the reprojected ones.

Conventions
-----------
* Model axes are right-handed with x to the viewer's right, y up and z
  towards the camera.  ``R = Rz(roll) @ Rx(pitch) @ Ry(yaw)``, so positive yaw
  swings the nose tip towards +x.
* Image coordinates are ``(x, y) = (column, row)`` in pixels, pixel centres
  on integers.
* The bundled model orders its points: outer/inner corner of the left-hand
  eye, inner/outer corner of the right-hand eye, nose tip, left/right nose
  wing, left/right mouth corner (all as seen by the viewer).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from . import formats
from .errors import DimensionError, FitError, ValidationError

NUM_LANDMARKS = formats.NUM_LANDMARKS
MIN_IMAGE_SIDE = 16
DEFAULT_MAX_RESIDUAL = 5.0
LANDMARK_MARGIN = 0.10
NOSE_TIP = 4
EYE_OUTER = (0, 3)


@dataclass(frozen=True)
class PoseSpec:
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            v = getattr(self, name)
            if not (math.isfinite(v) and -90.0 <= v <= 90.0):
                raise ValidationError(f"{name}={v} outside [-90, 90] degrees")

    @classmethod
    def parse(cls, text: str) -> PoseSpec:
        """``"yaw,pitch,roll"`` (missing trailing angles default to 0)."""
        parts = [float(p) for p in text.split(",") if p.strip()]
        if not 1 <= len(parts) <= 3:
            raise ValidationError(f"cannot parse pose {text!r}")
        return cls(*parts)


DEFAULT_POSE_GRID = tuple(PoseSpec(yaw=y) for y in (-45.0, -30.0, -15.0, 15.0, 30.0, 45.0))


@dataclass(frozen=True)
class AffineCamera:
    """2x4 matrix ``[L | t]`` sending a model point ``X`` to ``L @ X + t``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 4):
            raise DimensionError(f"camera matrix must be 2x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("camera matrix has non-finite entries")
        object.__setattr__(self, "matrix", m)

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:, 3]

    @classmethod
    def from_parts(cls, linear, translation) -> AffineCamera:
        return cls(np.hstack([np.asarray(linear, float), np.asarray(translation, float).reshape(2, 1)]))


def check_landmarks2d(points, image_shape: tuple[int, int] | None = None) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (NUM_LANDMARKS, 2):
        raise DimensionError(f"expected {NUM_LANDMARKS}x2 landmarks, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("landmarks contain non-finite coordinates")
    if image_shape is not None and not within_margin(pts, image_shape):
        raise ValidationError("landmarks fall outside the image plus margin")
    return pts


def within_margin(points: np.ndarray, image_shape: tuple[int, int], margin: float = LANDMARK_MARGIN) -> bool:
    h, w = image_shape
    mx, my = margin * w, margin * h
    x, y = points[:, 0], points[:, 1]
    return bool(np.all((x >= -mx) & (x <= w - 1 + mx) & (y >= -my) & (y <= h - 1 + my)))


def normalize_model(points) -> np.ndarray:
    """Validate a 9x3 model and translate it so its centroid is the origin."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (NUM_LANDMARKS, 3):
        raise DimensionError(f"expected {NUM_LANDMARKS}x3 model points, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("model contains non-finite coordinates")
    centered = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9 * max(1.0, np.abs(centered).max())) < 2:
        raise ValidationError("model points are collinear")
    return centered


def load_model(path=None) -> np.ndarray:
    """Centred 9x3 landmark model from ``path`` or the bundled default."""
    return normalize_model(formats.read_model_file(path))


def check_image(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < MIN_IMAGE_SIDE:
        raise DimensionError(f"expected a 2-D image of at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValidationError("image intensities must be finite and within [0, 1]")
    return img


def fit_camera(landmarks2d, model3d) -> tuple[AffineCamera, float]:
    """Least-squares affine camera from 3D model points to 2D landmarks.

    Returns the camera and the RMS landmark distance (pixels).  A planar model
    leaves the depth column undetermined; the minimum-norm solution (zero
    depth column) is returned in that case.
    """
    x2d = check_landmarks2d(landmarks2d)
    X = np.asarray(model3d, dtype=np.float64)
    if X.shape != (NUM_LANDMARKS, 3):
        raise DimensionError(f"expected {NUM_LANDMARKS}x3 model points, got {X.shape}")
    design = np.hstack([X, np.ones((NUM_LANDMARKS, 1))])
    solution, _, rank, _ = np.linalg.lstsq(design, x2d, rcond=None)
    if rank < 3:
        raise FitError(f"design matrix has rank {rank}; model geometry is degenerate")
    camera = AffineCamera(solution.T)
    if np.linalg.matrix_rank(camera.linear) < 2:
        raise FitError("fitted camera has a rank-deficient linear part")
    resid = design @ solution - x2d
    return camera, float(np.sqrt(np.sum(resid ** 2) / NUM_LANDMARKS))


def rotation_matrix(pose: PoseSpec) -> np.ndarray:
    y, p, r = (math.radians(a) for a in (pose.yaw, pose.pitch, pose.roll))
    ry = np.array([[math.cos(y), 0.0, math.sin(y)], [0.0, 1.0, 0.0], [-math.sin(y), 0.0, math.cos(y)]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, math.cos(p), -math.sin(p)], [0.0, math.sin(p), math.cos(p)]])
    rz = np.array([[math.cos(r), -math.sin(r), 0.0], [math.sin(r), math.cos(r), 0.0], [0.0, 0.0, 1.0]])
    return rz @ rx @ ry


def rotate_model(model3d, pose: PoseSpec) -> np.ndarray:
    return np.asarray(model3d, dtype=np.float64) @ rotation_matrix(pose).T


def project(camera: AffineCamera, model3d) -> np.ndarray:
    return np.asarray(model3d, dtype=np.float64) @ camera.linear.T + camera.translation


def border_anchors(image_shape: tuple[int, int]) -> np.ndarray:
    """Corners and edge midpoints; held fixed so the frame does not move."""
    h, w = image_shape
    xs, ys = (0.0, (w - 1) / 2.0, w - 1.0), (0.0, (h - 1) / 2.0, h - 1.0)
    return np.array([(x, y) for y in ys for x in xs if not (x == xs[1] and y == ys[1])])


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup at real coordinates with edge replication outside the image."""
    h, w = image.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 2) if w > 1 else np.zeros_like(x, dtype=np.intp)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 2) if h > 1 else np.zeros_like(y, dtype=np.intp)
    fx, fy = x - x0, y - y0
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    top = image[y0, x0] * (1.0 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1.0 - fx) + image[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def _signed_area(tri: np.ndarray) -> float:
    (x0, y0), (x1, y1), (x2, y2) = tri
    return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


@dataclass
class WarpResult:
    image: np.ndarray
    warnings: list[str] = field(default_factory=list)


def warp_piecewise_affine(image, src, dst) -> WarpResult:
    """Move the content at ``src`` points to ``dst`` points.

    Triangles come from a Delaunay triangulation of ``src``; each output pixel
    inside a destination triangle samples the source image through that
    triangle's affine map.  A destination triangle whose orientation flips
    is still drawn, with its barycentric weights clamped to the triangle, and
    a warning is recorded.  Pixels covered by no triangle keep their input
    value.
    """
    img = np.asarray(image, dtype=np.float64)
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise DimensionError(f"src {src.shape} and dst {dst.shape} must be matching Nx2 arrays")
    if np.array_equal(src, dst):
        return WarpResult(img.copy())
    h, w = img.shape
    out = img.copy()
    done = np.zeros((h, w), dtype=bool)
    warnings = []
    simplices = Delaunay(src).simplices
    areas_src = [_signed_area(src[s]) for s in simplices]
    areas_dst = [_signed_area(dst[s]) for s in simplices]
    flipped = [np.sign(a) != np.sign(b) for a, b in zip(areas_src, areas_dst)]
    order = sorted(range(len(simplices)), key=lambda i: flipped[i])
    for i in order:
        s = simplices[i]
        d_tri, s_tri = dst[s], src[s]
        if abs(areas_dst[i]) < 1e-12:
            warnings.append(f"triangle {tuple(int(v) for v in s)}: degenerate destination, skipped")
            continue
        if flipped[i]:
            warnings.append(f"triangle {tuple(int(v) for v in s)}: destination flipped, map clamped")
        x_lo = max(int(math.floor(d_tri[:, 0].min())), 0)
        x_hi = min(int(math.ceil(d_tri[:, 0].max())), w - 1)
        y_lo = max(int(math.floor(d_tri[:, 1].min())), 0)
        y_hi = min(int(math.ceil(d_tri[:, 1].max())), h - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        gy, gx = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1]
        gx, gy = gx.ravel().astype(np.float64), gy.ravel().astype(np.float64)
        # barycentric weights of each pixel w.r.t. the destination triangle
        t = np.array([[d_tri[1, 0] - d_tri[0, 0], d_tri[2, 0] - d_tri[0, 0]],
                      [d_tri[1, 1] - d_tri[0, 1], d_tri[2, 1] - d_tri[0, 1]]])
        l12 = np.linalg.solve(t, np.vstack([gx - d_tri[0, 0], gy - d_tri[0, 1]]))
        bary = np.vstack([1.0 - l12.sum(axis=0), l12])
        inside = np.all(bary >= -1e-9, axis=0) & ~done[gy.astype(np.intp), gx.astype(np.intp)]
        if not inside.any():
            continue
        bary = bary[:, inside]
        if flipped[i]:
            bary = np.clip(bary, 0.0, 1.0)
            bary /= bary.sum(axis=0)
        sx = s_tri[:, 0] @ bary
        sy = s_tri[:, 1] @ bary
        px, py = gx[inside].astype(np.intp), gy[inside].astype(np.intp)
        out[py, px] = bilinear_sample(img, sx, sy)
        done[py, px] = True
    return WarpResult(out, warnings)


@dataclass
class VirtualView:
    image: np.ndarray
    landmarks: np.ndarray
    pose: PoseSpec


@dataclass
class SynthesisResult:
    views: list[VirtualView]
    camera: AffineCamera
    rms_residual: float
    skipped: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.views)

    def __len__(self) -> int:
        return len(self.views)


def synthesize_views(image, landmarks2d, model3d, poses=DEFAULT_POSE_GRID,
                     max_residual: float = DEFAULT_MAX_RESIDUAL) -> SynthesisResult:
    """Render ``image`` at each pose by warping the fitted landmarks to their
    rotated reprojections (border anchors stay fixed).

    The warp starts from the camera's reprojection of the unrotated model
    rather than the raw detections, so a zero pose is an exact identity and
    every emitted landmark set is exactly ``project(camera, rotate_model(...))``.
    """
    img = check_image(image)
    lm = check_landmarks2d(landmarks2d, img.shape)
    model = np.asarray(model3d, dtype=np.float64)
    camera, rms = fit_camera(lm, model)
    if rms > max_residual:
        raise FitError(f"landmark fit residual {rms:.3f} px exceeds {max_residual} px")
    anchors = border_anchors(img.shape)
    frontal = project(camera, model)
    src = np.vstack([frontal, anchors])
    result = SynthesisResult([], camera, rms)
    for pose in poses:
        posed = project(camera, rotate_model(model, pose))
        if not within_margin(posed, img.shape):
            result.skipped.append(f"pose {pose}: landmarks leave the image margin")
            continue
        warped = warp_piecewise_affine(img, src, np.vstack([posed, anchors]))
        result.warnings.extend(f"pose {pose}: {msg}" for msg in warped.warnings)
        result.views.append(VirtualView(warped.image, posed, pose))
    return result


def landmark_asymmetry(landmarks2d) -> float:
    """Nose-tip x offset from the midpoint of the outer eye corners; its sign follows yaw."""
    pts = np.asarray(landmarks2d)
    return float(pts[NOSE_TIP, 0] - 0.5 * (pts[EYE_OUTER[0], 0] + pts[EYE_OUTER[1], 0]))


def face_test_card(size: int = 96, model3d=None) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic frontal face image and its exact 9 landmarks.

    The landmarks are the bundled model seen by a fixed frontal camera; dark
    discs mark eyes, nose and mouth on a bright ellipse over a gradient.
    """
    model = load_model() if model3d is None else np.asarray(model3d, dtype=np.float64)
    scale = 0.38 * size / 50.0
    cam = AffineCamera.from_parts([[scale, 0.0, 0.0], [0.0, -scale, 0.0]], [(size - 1) / 2.0, (size - 1) / 2.0])
    lm = project(cam, model)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    img = 0.15 + 0.2 * xx / (size - 1)
    face = ((xx - c) / (0.43 * size)) ** 2 + ((yy - c) / (0.48 * size)) ** 2 <= 1.0
    img = np.where(face, 0.8, img)
    for k, (px, py) in enumerate(lm):
        radius = 0.035 * size if k != NOSE_TIP else 0.05 * size
        img = np.where((xx - px) ** 2 + (yy - py) ** 2 <= radius ** 2, 0.25 + 0.05 * k, img)
    return np.clip(img, 0.0, 1.0), lm
