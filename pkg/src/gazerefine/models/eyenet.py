"""EyeNet-lite: per-eye gaze direction and pupil size from eye crops."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from gazerefine.errors import EmptyBatchError, ShapeError
from gazerefine.geometry import intersect_rays, angles_to_vector
from gazerefine.models.config import EyeNetConfig
from gazerefine.numerics import autodiff as ad
from gazerefine.numerics.layers import Conv2d, Dense, Module
from gazerefine.numerics.recurrent import make_cell

PITCH_LIMIT = 0.95 * np.pi / 2
PUPIL_BIAS_MM = 3.0


class EyeNetOutput(NamedTuple):
    angles: ad.Var  # (N, T, 2) pitch, yaw in radians
    pupil: ad.Var   # (N, T) millimetres


def images_to_float(images, dtype):
    x = np.asarray(images)
    if x.dtype == np.uint8:
        x = x.astype(dtype) / dtype(255.0)
    return x.astype(dtype, copy=False) - dtype(0.5)


class EyeNet(Module):
    """Strided conv encoder, dense layer, optional recurrent cell, 3-unit head.

    The same weights serve left and right eyes; callers fold the eye axis
    into the batch.
    """

    def __init__(self, cfg: EyeNetConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.dtype = np.dtype(dtype).type
        widths = (1,) + tuple(cfg.channels)
        self.convs = []
        for i in range(4):
            conv = Conv2d(rng.derive("conv", i), widths[i], widths[i + 1], 3, stride=2, padding=1, dtype=dtype)
            self.convs.append(self.add_module(f"conv{i}", conv))
        side = cfg.image_size // 16
        self.fc = self.add_module("fc", Dense(rng.derive("fc"), side * side * widths[-1], cfg.hidden, dtype=dtype))
        self.cell = None
        if cfg.variant != "none":
            self.cell = self.add_module("cell", make_cell(cfg.variant, rng.derive("cell"), cfg.hidden, cfg.hidden,
                                                          dtype=dtype))
        self.head = self.add_module("head", Dense(rng.derive("head"), cfg.hidden, 3, gain="tanh", dtype=dtype))
        self.head.b.value[2] = PUPIL_BIAS_MM

    def astype(self, dtype):
        super().astype(dtype)
        self.dtype = np.dtype(dtype).type
        return self

    def __call__(self, images):
        return self.forward(images)

    def forward(self, images):
        """``images``: (N, T, H, W) uint8 or float.  Outputs are causal in T."""
        x = images_to_float(images, self.dtype)
        if x.ndim != 4 or x.shape[2:] != (self.cfg.image_size, self.cfg.image_size):
            raise ShapeError("EyeNet expects (N, T, S, S) images with S = image_size",
                             x.shape, ("N", "T", self.cfg.image_size, self.cfg.image_size))
        n, t = x.shape[:2]
        h = ad.as_var(x.reshape(n * t, x.shape[2], x.shape[3], 1))
        for conv in self.convs:
            h = ad.relu(conv(h))
        h = ad.relu(self.fc(h.reshape(n * t, -1)))
        h = h.reshape(n, t, self.cfg.hidden)
        if self.cell is not None:
            h, _ = self.cell.unroll(h)
        u = self.head(h)
        pitch = ad.tanh(u[..., 0]) * PITCH_LIMIT
        yaw = ad.tanh(u[..., 1]) * np.pi
        return EyeNetOutput(ad.stack([pitch, yaw], axis=-1), u[..., 2])


def angles_to_vector_var(g):
    """Differentiable version of :func:`gazerefine.geometry.angles_to_vector`."""
    pitch, yaw = g[..., 0], g[..., 1]
    cp = ad.cos(pitch)
    return ad.stack([-(cp * ad.sin(yaw)), -ad.sin(pitch), -(cp * ad.cos(yaw))], axis=-1)


def angular_loss(pred_angles, true_angles, validity):
    """Mean angular error in degrees between predicted and label directions."""
    mask = np.asarray(validity, dtype=bool)
    if not mask.any():
        raise EmptyBatchError("batch has no valid entries")
    pv = angles_to_vector_var(ad.as_var(pred_angles))
    tv = angles_to_vector(np.where(mask[..., None], np.nan_to_num(np.asarray(true_angles)), 0.0))
    cos = ad.sum_(pv * tv.astype(pv.dtype), axis=-1)
    err = ad.arccos(ad.clip(cos, -1.0, 1.0)) * (180.0 / np.pi)
    weights = (mask / mask.sum()).astype(pv.dtype)
    return ad.sum_(err * weights)


def pupil_loss(pred_pupil, true_pupil, validity):
    mask = np.asarray(validity, dtype=bool)
    if not mask.any():
        raise EmptyBatchError("batch has no valid entries")
    p = ad.as_var(pred_pupil)
    t = np.where(mask, np.nan_to_num(np.asarray(true_pupil)), 0.0).astype(p.dtype)
    weights = (mask / mask.sum()).astype(p.dtype)
    return ad.sum_(ad.abs_(p - t) * weights)


def eyenet_loss(pred: EyeNetOutput, true_angles, true_pupil, validity, gamma_gaze=1.0, gamma_pupil=1.0):
    """``gamma_gaze * L_gaze (deg) + gamma_pupil * L_pupil (mm)``, masked by validity."""
    return (angular_loss(pred.angles, true_angles, validity) * gamma_gaze
            + pupil_loss(pred.pupil, true_pupil, validity) * gamma_pupil)


def eyes_to_initial_pog(left, right, origins, screen, strict=True):
    """Intersect both eyes' gaze rays with the screen and average in cm.

    ``left``/``right`` are gaze angles (..., 2); ``origins`` is (..., 2, 3) or
    (2, 3) for the left and right eye.  When one ray misses the screen plane
    the other eye's point is used alone.  If both miss, ``strict`` re-raises
    the intersection error; otherwise those entries are NaN.
    """
    origins = np.asarray(origins, dtype=np.float64)
    left_cm = intersect_rays(origins[..., 0, :], angles_to_vector(left), screen, strict=False)
    right_cm = intersect_rays(origins[..., 1, :], angles_to_vector(right), screen, strict=False)
    ok_l = np.all(np.isfinite(left_cm), axis=-1, keepdims=True)
    ok_r = np.all(np.isfinite(right_cm), axis=-1, keepdims=True)
    avg = (left_cm + right_cm) / 2.0
    if strict and not np.all(ok_l | ok_r):
        bad = ~(ok_l | ok_r)[..., 0]
        intersect_rays(np.broadcast_to(origins[..., 0, :], bad.shape + (3,))[bad],
                       angles_to_vector(np.broadcast_to(left, bad.shape + (2,))[bad]), screen)
    return np.where(ok_l & ok_r, avg, np.where(ok_l, left_cm, right_cm))
