"""Synthetic observers: gaze with person-specific kappa, pupil, blinks, eye images.

Labels are visual-axis quantities (the ray from each eye to the target).
The direction that drives eye appearance is the optical axis, obtained by
rotating the visual axis by the observer's kappa and adding noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from gazerefine.geometry import (
    Kappa,
    ScreenGeometry,
    apply_offset_augmentation,
    direction_to_point,
    px_to_cm,
    vector_to_angles,
)

IPD_CM = 6.3
PUPIL_RANGE_MM = (2.0, 4.0)


@dataclass(frozen=True)
class EyeAppearance:
    skin: float = 0.62
    sclera: float = 0.9
    iris: float = 0.35
    iris_radius: float = 0.17     # fraction of image size
    gain: float = 0.3             # iris shift per unit tan(angle), fraction of image size
    opening: float = 0.24         # half-height of the lid opening, fraction of image size


@dataclass(frozen=True)
class ObserverProfile:
    observer_id: str
    kappa_left: Kappa
    kappa_right: Kappa
    noise_deg: float = 1.0
    pupil_base_mm: float = 3.0
    pupil_amp_mm: float = 0.4
    pupil_period_s: float = 4.0
    pupil_phase: float = 0.0
    origins: np.ndarray = field(default_factory=lambda: np.array([[IPD_CM / 2, 15.0, 60.0],
                                                                  [-IPD_CM / 2, 15.0, 60.0]]))
    blink_rate_hz: float = 0.2
    appearance: EyeAppearance = EyeAppearance()

    def __post_init__(self):
        if self.noise_deg < 0:
            raise ValueError("noise std must be non-negative")
        if self.blink_rate_hz < 0:
            raise ValueError("blink rate must be non-negative")
        o = np.asarray(self.origins, dtype=np.float64)
        if o.shape != (2, 3) or np.any(o[:, 2] <= 0):
            raise ValueError("eye origins must be two points in front of the screen (z > 0)")
        object.__setattr__(self, "origins", o)

    @property
    def kappas(self):
        return np.array([self.kappa_left, self.kappa_right], dtype=np.float64)


class GazeSample(NamedTuple):
    true: np.ndarray      # (..., 2 eyes, 2) visual axis, radians
    apparent: np.ndarray  # (..., 2 eyes, 2) optical axis plus noise
    pog_cm: np.ndarray    # (..., 2)
    pog_px: np.ndarray    # (..., 2)


def _random_kappa_direction(rng, magnitude):
    ang = rng.uniform(0, 2 * np.pi)
    return np.array([magnitude * np.sin(ang), magnitude * np.cos(ang)])


def sample_observer(observer_id, rng, kappa_range_deg=None, kappa_std_deg=1.0, eye_jitter_deg=0.3,
                    noise_deg=1.0, blink_rate_hz=0.2):
    """Draw an observer.

    With ``kappa_range_deg = (lo, hi)`` the shared kappa has a magnitude
    uniform in that range and a uniform direction; otherwise each component
    is N(0, kappa_std_deg).  Each eye adds its own N(0, eye_jitter_deg).
    """
    if kappa_range_deg is not None:
        base = _random_kappa_direction(rng, np.radians(rng.uniform(*kappa_range_deg)))
    else:
        base = rng.normal(0.0, np.radians(kappa_std_deg), size=2)
    jitter = rng.normal(0.0, np.radians(eye_jitter_deg), size=(2, 2))
    kl, kr = base + jitter[0], base + jitter[1]
    head = np.array([rng.uniform(-4, 4), rng.uniform(12, 18), rng.uniform(55, 65)])
    origins = np.stack([head + [IPD_CM / 2, 0, 0], head - [IPD_CM / 2, 0, 0]])
    look = EyeAppearance(skin=float(rng.uniform(0.45, 0.75)), sclera=float(rng.uniform(0.82, 0.95)),
                         iris=float(rng.uniform(0.2, 0.45)), iris_radius=float(rng.uniform(0.15, 0.19)),
                         gain=float(rng.uniform(0.27, 0.33)), opening=float(rng.uniform(0.21, 0.27)))
    return ObserverProfile(
        observer_id=observer_id,
        kappa_left=Kappa(float(kl[0]), float(kl[1])),
        kappa_right=Kappa(float(kr[0]), float(kr[1])),
        noise_deg=noise_deg,
        pupil_base_mm=float(rng.uniform(2.7, 3.3)),
        pupil_amp_mm=float(rng.uniform(0.3, 0.6)),
        pupil_period_s=float(rng.uniform(2.5, 6.0)),
        pupil_phase=float(rng.uniform(0, 2 * np.pi)),
        origins=origins,
        blink_rate_hz=blink_rate_hz,
        appearance=look,
    )


def true_gaze(target_px, profile, screen):
    """Visual-axis gaze per eye (..., 2, 2) aiming both eyes at ``target_px`` (..., 2)."""
    target_cm = px_to_cm(target_px, screen)
    target_cam = screen.screen_to_camera(target_cm)
    dirs = direction_to_point(profile.origins, target_cam[..., None, :])
    return vector_to_angles(dirs), target_cm


def observer_gaze(script, t, profile, rng, screen=None):
    """Gaze at time(s) ``t``: visual axis, noisy optical axis and PoG labels."""
    screen = screen or ScreenGeometry()
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    target_px = np.stack([script.target_px(float(tk)) for tk in ts])
    g_true, pog_cm = true_gaze(target_px, profile, screen)
    apparent = apply_offset_augmentation(g_true, profile.kappas)
    if profile.noise_deg > 0:
        apparent = apparent + rng.normal(0.0, np.radians(profile.noise_deg), size=apparent.shape)
    out = GazeSample(g_true, apparent, pog_cm, target_px)
    if np.ndim(t) == 0:
        out = GazeSample(*(a[0] for a in out))
    return out


def pupil_size(profile, t, rng, noise_mm=0.03):
    t = np.asarray(t, dtype=np.float64)
    p = profile.pupil_base_mm + profile.pupil_amp_mm * np.sin(2 * np.pi * t / profile.pupil_period_s
                                                              + profile.pupil_phase)
    p = p + rng.normal(0.0, noise_mm, size=t.shape)
    return np.clip(p, *PUPIL_RANGE_MM)


def blink_mask(n_samples, rate_hz, sample_rate_hz, rng, duration=(2, 3)):
    """Boolean mask of blink samples; blinks start with probability rate/sample_rate."""
    p_start = rate_hz / sample_rate_hz
    starts = rng.random(n_samples) < p_start
    lengths = rng.integers(duration[0], duration[1] + 1, size=n_samples)
    mask = np.zeros(n_samples, dtype=bool)
    for k in np.flatnonzero(starts):
        mask[k:k + lengths[k]] = True
    return mask


def _soft_inside(d, width=0.7):
    # smooth 0..1 edge, d < 0 inside; keeps renders sensitive to sub-pixel motion
    return 1.0 / (1.0 + np.exp(np.clip(d / width, -50, 50)))


def render_eye(apparent, pupil_mm, rng, appearance=None, size=64, closed=False, noise=0.03):
    """Parametric grayscale eye image (size x size, uint8).

    The iris centre sits at ``(c tan(yaw), c tan(pitch))`` from the image
    centre, measured with x to the right and y upwards, so downward gaze
    moves the iris down in the image.
    """
    look = appearance or EyeAppearance()
    pitch, yaw = float(apparent[0]), float(apparent[1])
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = cy = (size - 1) / 2.0
    c = look.gain * size
    ix = cx + c * np.tan(yaw)
    iy = cy - c * np.tan(pitch)
    # lid opening: ellipse whose upper lid follows vertical gaze a little
    half_w = 0.44 * size
    half_h = look.opening * size * (0.05 if closed else 1.0)
    lid_cy = cy + 0.15 * (iy - cy)
    d_open = np.sqrt(((xs - cx) / half_w) ** 2 + ((ys - lid_cy) / half_h) ** 2) - 1.0
    inside = _soft_inside(d_open * min(half_w, half_h))
    r_iris = look.iris_radius * size
    rx, ry = r_iris * max(np.cos(yaw), 0.2), r_iris * max(np.cos(pitch), 0.2)
    d_iris = (np.sqrt(((xs - ix) / rx) ** 2 + ((ys - iy) / ry) ** 2) - 1.0) * min(rx, ry)
    r_pupil = r_iris * pupil_mm / 8.0
    d_pupil = (np.sqrt(((xs - ix) / (rx * r_pupil / r_iris)) ** 2 + ((ys - iy) / (ry * r_pupil / r_iris)) ** 2)
               - 1.0) * r_pupil
    eye = look.sclera + (look.iris - look.sclera) * _soft_inside(d_iris)
    eye = eye + (0.05 - eye) * _soft_inside(d_pupil)
    img = look.skin + (eye - look.skin) * inside
    img = img * rng.uniform(0.9, 1.1) + rng.normal(0.0, noise, size=img.shape)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
