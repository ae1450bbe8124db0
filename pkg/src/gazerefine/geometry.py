"""Gaze-direction representations, screen intersection and kappa rotations.

Conventions
-----------
* Camera frame: x right, y down, z along the optical axis towards the user.
  Gaze vectors point from the eye towards the screen, so frontal gaze
  ``(pitch, yaw) = (0, 0)`` is ``(0, 0, -1)``.
* Screen frame: origin at the top-left corner of the display, x right and
  y down as seen by the user (matching pixel indexing), z out of the display.
  ``ScreenGeometry.rotation``/``translation`` map camera points to screen
  points: ``p_screen = R @ p_cam + t`` (cm).
* Angles are radians everywhere except in metrics (degrees).

Functions are vectorised: angle arrays have a trailing axis of 2
``(pitch, yaw)``, vectors a trailing axis of 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from gazerefine.errors import (
    BehindScreenError,
    DegenerateInputError,
    DomainError,
    EmptyBatchError,
    NoIntersectionError,
)

FRONTAL = np.array([0.0, 0.0, -1.0])
KAPPA_BOUND = np.pi / 4


class GazeAngles(NamedTuple):
    pitch: float
    yaw: float


class Kappa(NamedTuple):
    pitch: float
    yaw: float


def _default_rotation():
    # camera faces the user, so its x axis is mirrored w.r.t. the screen's
    return np.diag([-1.0, 1.0, -1.0])


@dataclass(frozen=True)
class ScreenGeometry:
    """Physical display and its pose relative to the camera.

    The default pose puts the camera at the top-centre of the display, in the
    display plane, looking straight out of it.
    """

    width_mm: float = 553.0
    height_mm: float = 311.0
    width_px: int = 1920
    height_px: int = 1080
    rotation: np.ndarray = field(default_factory=_default_rotation)
    translation: np.ndarray = None

    def __post_init__(self):
        if min(self.width_mm, self.height_mm, self.width_px, self.height_px) <= 0:
            raise ValueError("screen dimensions must be positive")
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape != (3, 3) or not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9) \
                or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise ValueError("screen rotation must be a proper rotation matrix")
        object.__setattr__(self, "rotation", rot)
        t = np.array([self.width_cm / 2.0, 0.0, 0.0]) if self.translation is None else self.translation
        object.__setattr__(self, "translation", np.asarray(t, dtype=np.float64))

    @property
    def width_cm(self):
        return self.width_mm / 10.0

    @property
    def height_cm(self):
        return self.height_mm / 10.0

    @property
    def px_per_cm(self):
        """Per-axis pixel density ``(x, y)`` in px/cm."""
        return np.array([self.width_px / self.width_cm, self.height_px / self.height_cm])

    def screen_to_camera(self, points_cm):
        """Lift on-plane screen points (..., 2) in cm to camera coordinates (..., 3)."""
        p = np.asarray(points_cm, dtype=np.float64)
        p3 = np.concatenate([p, np.zeros(p.shape[:-1] + (1,))], axis=-1)
        return (p3 - self.translation) @ self.rotation

    def camera_to_screen(self, points_cam):
        return np.asarray(points_cam, dtype=np.float64) @ self.rotation.T + self.translation

    def on_screen(self, points_px):
        p = np.asarray(points_px)
        return (p[..., 0] >= 0) & (p[..., 0] < self.width_px) & (p[..., 1] >= 0) & (p[..., 1] < self.height_px)


@dataclass(frozen=True)
class GazeRay:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("gaze ray direction must be a unit vector")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class PoG:
    """Point of gaze on the screen plane (cm) with derived pixel position."""

    x_cm: float
    y_cm: float
    x_px: float
    y_px: float
    on_screen: bool

    @classmethod
    def from_cm(cls, x_cm, y_cm, screen):
        px = cm_to_px(np.array([x_cm, y_cm]), screen)
        return cls(float(x_cm), float(y_cm), float(px[0]), float(px[1]), bool(screen.on_screen(px)))

    @classmethod
    def from_px(cls, x_px, y_px, screen):
        cm = px_to_cm(np.array([x_px, y_px]), screen)
        return cls.from_cm(cm[0], cm[1], screen)

    @property
    def cm(self):
        return np.array([self.x_cm, self.y_cm])

    @property
    def px(self):
        return np.array([self.x_px, self.y_px])


def angles_to_vector(g):
    """(pitch, yaw) -> unit gaze vector ``(-cos p sin y, -sin p, -cos p cos y)``."""
    g = np.asarray(g, dtype=np.float64)
    pitch, yaw = g[..., 0], g[..., 1]
    cp = np.cos(pitch)
    return np.stack([-cp * np.sin(yaw), -np.sin(pitch), -cp * np.cos(yaw)], axis=-1)


def vector_to_angles(v):
    """Unit gaze vector -> (pitch, yaw) with pitch = asin(-y), yaw = atan2(-x, -z)."""
    v = np.asarray(v, dtype=np.float64)
    y = v[..., 1]
    if np.any(np.abs(y) >= 1.0 - 1e-12):
        raise DegenerateInputError("yaw is undefined for vertical gaze vectors (|y| = 1)")
    pitch = np.arcsin(np.clip(-y, -1.0, 1.0))
    yaw = np.arctan2(-v[..., 0], -v[..., 2])
    yaw = np.where(yaw == -np.pi, np.pi, yaw)
    return np.stack([pitch, yaw], axis=-1)


def angular_error(a, b):
    """Angle in degrees between two (batches of) non-zero 3-vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DomainError("angular error is undefined for zero-norm vectors")
    cos = np.sum(a * b, axis=-1) / (na * nb)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def batch_angular_loss(g_true, g_pred, validity):
    """Mean angular error (degrees) over entries where ``validity`` is true.

    ``g_true``/``g_pred`` are (N, T, 3) vectors; ``validity`` is (N, T).
    """
    valid = np.asarray(validity, dtype=bool)
    if not valid.any():
        raise EmptyBatchError("batch has no valid entries")
    a = np.asarray(g_true, dtype=np.float64)[valid]
    b = np.asarray(g_pred, dtype=np.float64)[valid]
    return float(np.mean(angular_error(a, b)))


def rotation_from_angles(g):
    """Rotation (..., 3, 3) taking frontal gaze to ``angles_to_vector(g)``.

    Built as yaw-rotation about y times pitch-rotation about x.  The pitch
    factor uses ``[[1,0,0],[0,c,s],[0,-s,c]]`` so that the product maps
    ``(0, 0, -1)`` onto the vector convention above.
    """
    g = np.asarray(g, dtype=np.float64)
    pitch, yaw = g[..., 0], g[..., 1]
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    zero, one = np.zeros_like(cp), np.ones_like(cp)
    ry = np.stack([np.stack([cy, zero, sy], -1),
                   np.stack([zero, one, zero], -1),
                   np.stack([-sy, zero, cy], -1)], -2)
    rx = np.stack([np.stack([one, zero, zero], -1),
                   np.stack([zero, cp, sp], -1),
                   np.stack([zero, -sp, cp], -1)], -2)
    return ry @ rx


def head_relative(v_cam, r_head):
    """Express camera-frame gaze vectors in the head frame: ``R_head^T v``."""
    v = np.asarray(v_cam, dtype=np.float64)
    r = np.asarray(r_head, dtype=np.float64)
    return np.einsum("...ji,...j->...i", r, v)


def apply_offset_augmentation(g_h, kappa):
    """Rotate the kappa direction into the frame of gaze ``g_h``.

    Returns ``vector_to_angles(R(g_h) @ angles_to_vector(kappa))``; entries
    with zero kappa are returned unchanged, bit for bit.
    """
    g_h = np.asarray(g_h, dtype=np.float64)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=np.float64), g_h.shape)
    zero = np.all(kappa == 0.0, axis=-1)
    if np.all(zero):
        return g_h.copy()
    v_k = angles_to_vector(kappa)
    rotated = np.einsum("...ij,...j->...i", rotation_from_angles(g_h), v_k)
    out = vector_to_angles(rotated)
    return np.where(zero[..., None], g_h, out)


def sample_kappa(rng, sigma):
    """Kappa with pitch and yaw drawn i.i.d. from N(0, sigma) (radians).

    Draws beyond +-pi/4 are rejected and redrawn.  ``sigma == 0`` returns
    (0, 0) without consuming the stream.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return Kappa(0.0, 0.0)
    while True:
        pitch, yaw = rng.normal(0.0, sigma, size=2)
        if abs(pitch) < KAPPA_BOUND and abs(yaw) < KAPPA_BOUND:
            return Kappa(float(pitch), float(yaw))


def intersect_rays(origins, directions, screen, strict=True):
    """Intersect rays (camera frame) with the screen plane; returns (..., 2) cm.

    With ``strict`` a parallel ray raises :class:`NoIntersectionError` and a
    backwards hit raises :class:`BehindScreenError`; otherwise such entries
    come back as NaN.
    """
    o = screen.camera_to_screen(origins)
    d = np.asarray(directions, dtype=np.float64) @ screen.rotation.T
    dz = d[..., 2]
    parallel = np.abs(dz) <= 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(parallel, np.nan, -o[..., 2] / np.where(parallel, 1.0, dz))
    behind = ~parallel & (t <= 0)
    if strict:
        if np.any(parallel):
            raise NoIntersectionError("gaze ray is parallel to the screen plane")
        if np.any(behind):
            raise BehindScreenError("gaze ray meets the screen plane behind its origin")
    t = np.where(behind, np.nan, t)
    hit = o + t[..., None] * d
    return hit[..., :2]


def intersect_screen(ray, screen):
    hit = intersect_rays(ray.origin, ray.direction, screen)
    return PoG.from_cm(hit[0], hit[1], screen)


def cm_to_px(points_cm, screen):
    return np.asarray(points_cm, dtype=np.float64) * screen.px_per_cm


def px_to_cm(points_px, screen):
    return np.asarray(points_px, dtype=np.float64) / screen.px_per_cm


def pog_average(left, right):
    """Componentwise mean of two PoG values (or cm arrays)."""
    if isinstance(left, PoG):
        return PoG.from_cm((left.x_cm + right.x_cm) / 2.0, (left.y_cm + right.y_cm) / 2.0, _SCREEN_FOR_POG)
    return (np.asarray(left, dtype=np.float64) + np.asarray(right, dtype=np.float64)) / 2.0


_SCREEN_FOR_POG = ScreenGeometry()


def direction_to_point(origins, targets):
    """Unit vectors from ``origins`` to ``targets`` (camera frame)."""
    d = np.asarray(targets, dtype=np.float64) - np.asarray(origins, dtype=np.float64)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pog_angular_error(pred_cm, true_cm, origins, screen):
    """Angle (deg) between rays from ``origins`` to predicted and true PoG."""
    p = screen.screen_to_camera(pred_cm)
    t = screen.screen_to_camera(true_cm)
    o = np.asarray(origins, dtype=np.float64)
    return angular_error(p - o, t - o)
