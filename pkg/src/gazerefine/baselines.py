"""Saliency-alignment baselines: post-hoc PoG correction fitted on a KL objective.

Two correction families are fitted per observer and stimulus:

* ``scale_bias``: ``s * p + b`` on PoG in cm, with ``s = exp(l)`` so the
  scale stays positive;
* ``kappa``: each eye's gaze ``g`` is replaced by ``R(g) v(kappa)`` and
  re-intersected with the screen.

Corrected points are splatted as analytic Gaussians onto the grid, so the
KL divergence to the saliency map is differentiable in the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gazerefine.errors import ContractViolation, EmptyBatchError
from gazerefine.geometry import ScreenGeometry, angles_to_vector, apply_offset_augmentation, intersect_rays, \
    rotation_from_angles
from gazerefine.heatmap import DEFAULT_SIGMA, GRID_H, GRID_W, kl_divergence
from gazerefine.numerics import autodiff as ad
from gazerefine.numerics.optim import Adam

VARIANTS = ("scale_bias", "kappa")


@dataclass(frozen=True)
class AlignmentParams:
    variant: str
    scale: tuple = (1.0, 1.0)
    bias: tuple = (0.0, 0.0)     # cm
    kappa: tuple = (0.0, 0.0)    # correction (pitch, yaw) in radians
    objective: float = float("nan")
    steps: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.scale) <= 0:
            raise ValueError("scale components must be positive")

    @property
    def observer_kappa(self):
        """Kappa of the observer implied by the fitted correction (its negation)."""
        return (-self.kappa[0], -self.kappa[1])

    def as_text(self):
        return (f"variant = {self.variant}\nscale_x = {self.scale[0]!r}\nscale_y = {self.scale[1]!r}\n"
                f"bias_x_cm = {self.bias[0]!r}\nbias_y_cm = {self.bias[1]!r}\n"
                f"kappa_pitch_rad = {self.kappa[0]!r}\nkappa_yaw_rad = {self.kappa[1]!r}\n"
                f"objective = {self.objective!r}\nsteps = {self.steps}\n")


@dataclass(frozen=True)
class FitConfig:
    lr: float = 0.01
    steps: int = 500
    sigma: float = DEFAULT_SIGMA
    grid_w: int = GRID_W
    grid_h: int = GRID_H


def cm_to_grid(points_cm, screen, width=GRID_W, height=GRID_H):
    """cm on the screen plane -> grid-cell coordinates (works on :class:`Var`)."""
    scale = screen.px_per_cm * np.array([width / screen.width_px, height / screen.height_px])
    return points_cm * scale - 0.5


def accumulate_map(points=None, density=None, width=GRID_W, height=GRID_H, sigma=DEFAULT_SIGMA, weights=None):
    """Normalized accumulation of Gaussian splats at grid ``points`` (K, 2), or a raw density.

    ``points`` may be a :class:`Var`; the splat of point k is the outer
    product of two 1-D Gaussians, so the map is ``Gy^T @ Gx``.
    """
    if density is not None:
        d = np.asarray(density, dtype=np.float64)
        if d.sum() <= 0 or np.any(d < 0):
            raise EmptyBatchError("density must be non-negative with positive mass")
        return d / d.sum()
    if points is None or points.shape[0] == 0:
        raise EmptyBatchError("no points to accumulate")
    p = ad.as_var(points)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    inv = -1.0 / (2.0 * sigma**2)
    gx = ad.exp(ad.square(xs[None, :] - p[:, 0:1]) * inv)
    gy = ad.exp(ad.square(ys[None, :] - p[:, 1:2]) * inv)
    if weights is not None:
        gy = gy * np.asarray(weights, dtype=np.float64)[:, None]
    m = ad.transpose(gy) @ gx
    out = m / ad.sum_(m)
    return out if isinstance(points, ad.Var) else out.value


def _kappa_pog(kappa, gaze, origins, screen):
    """Differentiable re-intersection of kappa-corrected rays, averaged over eyes.

    ``gaze`` (N, 2, 2) and ``origins`` (N, 2, 3) hold left/right eye data.
    """
    rot = rotation_from_angles(gaze)                        # (N, 2, 3, 3)
    pitch, yaw = kappa[0], kappa[1]
    cp = ad.cos(pitch)
    vk = ad.stack([-(cp * ad.sin(yaw)), -ad.sin(pitch), -(cp * ad.cos(yaw))])  # (3,)
    d_cam = ad.sum_(ad.reshape(vk, (1, 1, 1, 3)) * rot, axis=-1)               # (N, 2, 3)
    o_s = screen.camera_to_screen(origins)
    d_s = d_cam @ screen.rotation.T
    t = ad.as_var(-o_s[..., 2]) / d_s[..., 2]
    hit = ad.reshape(t, t.shape + (1,)) * d_s[..., 0:2] + o_s[..., 0:2]
    return ad.sum_(hit, axis=1) * 0.5


def _transform(variant, params, pog_cm, gaze, origins, screen, centre=None):
    if variant == "scale_bias":
        # scaling about the centroid decouples scale from bias during the fit
        return ad.as_var(pog_cm - centre) * ad.exp(params["log_scale"]) + params["shift"] + centre
    return _kappa_pog(params["kappa"], gaze, origins, screen)


def fit_alignment(saliency, variant, pog_cm=None, gaze=None, origins=None, screen=None, cfg=None, init=None,
                  trace=None):
    """Fit a correction by Adam on ``KL(accumulate(transform(estimates)) || saliency)``.

    A step that raises the objective is undone and the learning rate
    halved.  Returns the parameters with the lowest objective seen.  A list
    passed as ``trace`` receives the objective after every accepted step.
    ``scale_bias`` needs ``pog_cm`` (N, 2); ``kappa`` needs per-eye ``gaze``
    (N, 2, 2) and ``origins`` (N, 2, 3).
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    screen = screen or ScreenGeometry()
    cfg = cfg or FitConfig()
    sal = np.asarray(saliency, dtype=np.float64)
    if abs(sal.sum() - 1.0) > 1e-6 or np.any(sal < 0):
        raise ContractViolation("saliency must be a normalized non-negative map")
    if variant == "scale_bias":
        if pog_cm is None or len(pog_cm) == 0:
            raise EmptyBatchError("scale_bias fitting needs PoG estimates")
        pog_cm = np.asarray(pog_cm, dtype=np.float64)
        centre = pog_cm.mean(axis=0)
        init = init or AlignmentParams("scale_bias")
        scale0 = np.array(init.scale, dtype=np.float64)
        # s*p + b  ==  s*(p - c) + (b + (s - 1)*c) + c
        params = {"log_scale": ad.parameter(np.log(scale0)),
                  "shift": ad.parameter(np.array(init.bias, dtype=np.float64) + (scale0 - 1.0) * centre)}
    else:
        if gaze is None or origins is None or len(gaze) == 0:
            raise EmptyBatchError("kappa fitting needs per-eye gaze and origins")
        gaze = np.asarray(gaze, dtype=np.float64)
        origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), gaze.shape[:-1] + (3,))
        centre = None
        init = init or AlignmentParams("kappa")
        params = {"kappa": ad.parameter(np.array(init.kappa, dtype=np.float64))}

    def objective():
        pts = cm_to_grid(_transform(variant, params, pog_cm, gaze, origins, screen, centre), screen, cfg.grid_w, cfg.grid_h)
        acc = accumulate_map(pts, width=cfg.grid_w, height=cfg.grid_h, sigma=cfg.sigma)
        return kl_divergence(acc, sal)

    opt = Adam(params, lr=cfg.lr)
    lr = cfg.lr
    snapshot = {k: v.value.copy() for k, v in params.items()}
    current = objective()
    best_val, best = float(current.value), snapshot
    if not np.isfinite(best_val):
        raise ContractViolation("initial alignment objective is not finite")
    if trace is not None:
        trace.append(best_val)
    accepted = 0
    for _ in range(cfg.steps):
        for p in params.values():
            p.grad = None
        current.backward()
        prev = {k: v.value.copy() for k, v in params.items()}
        opt.step(lr=lr)
        trial = objective()
        val = float(trial.value)
        if not np.isfinite(val) or val > best_val:
            for k, v in params.items():
                v.value = prev[k]
            lr *= 0.5
            current = objective()
            if not np.isfinite(val):
                break
            continue
        accepted += 1
        current = trial
        best_val, best = val, {k: v.value.copy() for k, v in params.items()}
        if trace is not None:
            trace.append(val)
    return _params_from(variant, best, best_val, accepted, centre)


def _params_from(variant, values, objective, steps, centre=None):
    if variant == "scale_bias":
        s = np.exp(values["log_scale"])
        b = values["shift"] + (1.0 - s) * centre
        return AlignmentParams("scale_bias", scale=(float(s[0]), float(s[1])), bias=(float(b[0]), float(b[1])),
                               objective=objective, steps=steps)
    k = values["kappa"]
    return AlignmentParams("kappa", kappa=(float(k[0]), float(k[1])), objective=objective, steps=steps)


def apply_alignment(params, pog_cm=None, gaze=None, origins=None, screen=None):
    """Corrected PoG in cm.  ``kappa`` uses the geometry module's augmentation and intersection."""
    screen = screen or ScreenGeometry()
    if params.variant == "scale_bias":
        return np.asarray(pog_cm, dtype=np.float64) * np.array(params.scale) + np.array(params.bias)
    gaze = np.asarray(gaze, dtype=np.float64)
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), gaze.shape[:-1] + (3,))
    corrected = apply_offset_augmentation(gaze, np.array(params.kappa))
    hits = intersect_rays(origins, angles_to_vector(corrected), screen, strict=False)
    return hits.mean(axis=-2)
