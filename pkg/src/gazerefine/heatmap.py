"""Confidence maps, soft-argmax decoding and the heatmap-side losses.

Maps are arrays of shape (..., H, W) with H = 72 rows and W = 128 columns by
default.  Points on a map are ``(x, y) = (column, row)`` in grid cells.
Functions accept numpy arrays or :class:`Var` and return the same kind, so
they can sit inside a training graph.
"""

from __future__ import annotations

import numpy as np

from gazerefine.errors import ContractViolation, DegenerateInputError, EmptyBatchError
from gazerefine.numerics import autodiff as ad
from gazerefine.numerics.autodiff import Var

GRID_W = 128
GRID_H = 72
DEFAULT_SIGMA = 4.0
KL_EPS = 1e-8


def _wrap(result, *inputs):
    return result if any(isinstance(x, Var) for x in inputs) else result.value


def grid_coords(width=GRID_W, height=GRID_H, dtype=np.float64):
    xs = np.arange(width, dtype=dtype)
    ys = np.arange(height, dtype=dtype)
    return xs, ys


def grid_to_px(points, screen, width=GRID_W, height=GRID_H):
    """Grid-cell coordinates -> screen pixels (cell centres)."""
    scale = np.array([screen.width_px / width, screen.height_px / height])
    return (np.asarray(points, dtype=np.float64) + 0.5) * scale


def px_to_grid(points_px, screen, width=GRID_W, height=GRID_H):
    scale = np.array([screen.width_px / width, screen.height_px / height])
    return np.asarray(points_px, dtype=np.float64) / scale - 0.5


def gaussian_map(center, sigma=DEFAULT_SIGMA, width=GRID_W, height=GRID_H, dtype=np.float64):
    """Peak-1 isotropic Gaussian centred at ``center`` (..., 2) in grid cells.

    Batched centres give maps of shape (..., height, width).  Centres may lie
    off the grid; then only the tail is visible.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    c = np.asarray(center, dtype=np.float64)
    xs, ys = grid_coords(width, height)
    dx2 = (xs - c[..., 0:1]) ** 2
    dy2 = (ys - c[..., 1:2]) ** 2
    g = np.exp(-dy2[..., :, None] / (2 * sigma**2)) * np.exp(-dx2[..., None, :] / (2 * sigma**2))
    return g.astype(dtype, copy=False)


def _expected_coords(prob):
    h, w = prob.shape[-2:]
    xs, ys = grid_coords(w, h, prob.dtype)
    ex = ad.sum_(ad.sum_(prob, axis=-2) * xs, axis=-1)
    ey = ad.sum_(ad.sum_(prob, axis=-1) * ys, axis=-1)
    return ad.stack([ex, ey], axis=-1)


def soft_argmax(h):
    """Expected grid coordinate under the distribution proportional to ``h``.

    ``h`` holds non-negative map values (..., H, W); a map is treated as
    ``softmax(log h)``, so zero cells act as -inf logits.  Returns (..., 2).
    """
    hv = h.value if isinstance(h, Var) else np.asarray(h, dtype=np.float64)
    if np.any(hv < 0):
        raise ContractViolation("soft_argmax expects a non-negative map")
    total = hv.sum(axis=(-2, -1))
    if np.any(total <= 0):
        raise DegenerateInputError("soft_argmax of an all-zero map is undefined")
    hh = ad.as_var(h)
    prob = hh / ad.sum_(hh, axis=(-2, -1), keepdims=True)
    return _wrap(_expected_coords(prob), h)


def soft_argmax_logits(z, temperature=1.0):
    """Expected grid coordinate under ``softmax(z / temperature)`` over the map."""
    zz = ad.as_var(z)
    lead = zz.shape[:-2]
    h, w = zz.shape[-2:]
    flat = ad.reshape(zz * (1.0 / temperature), lead + (h * w,))
    prob = ad.reshape(ad.softmax(flat, axis=-1), lead + (h, w))
    return _wrap(_expected_coords(prob), z)


def _frame_mask(validity, lead_shape):
    if validity is None:
        return np.ones(lead_shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(validity, dtype=bool), lead_shape)
    if not mask.any():
        raise EmptyBatchError("batch has no valid entries")
    return mask


def bce_heatmap_loss(pred_logits, target, validity=None):
    """Pixel-wise binary cross-entropy with logits, averaged over valid maps.

    Uses the stable form ``max(z, 0) - z*y + log(1 + exp(-|z|))``.
    """
    y = np.asarray(target, dtype=np.float64)
    if np.any(y < 0) or np.any(y > 1):
        raise ContractViolation("BCE targets must lie in [0, 1]")
    z = ad.as_var(pred_logits)
    mask = _frame_mask(validity, z.shape[:-2])
    y = np.where(mask[..., None, None], np.nan_to_num(y), 0.0).astype(z.dtype)
    per_pixel = ad.relu(z) - z * y + ad.softplus(-ad.abs_(z))
    weights = (mask[..., None, None] / (mask.sum() * z.shape[-1] * z.shape[-2])).astype(z.dtype)
    return _wrap(ad.sum_(per_pixel * weights), pred_logits)


def mse_pog_loss(pred_cm, true_cm, validity=None):
    """Mean squared Euclidean distance (cm^2) over valid entries."""
    p = ad.as_var(pred_cm)
    mask = _frame_mask(validity, p.shape[:-1])
    t = np.where(mask[..., None], np.nan_to_num(np.asarray(true_cm, dtype=np.float64)), 0.0)
    diff = p - t.astype(p.dtype)
    weights = (mask / mask.sum()).astype(p.dtype)
    return _wrap(ad.sum_(ad.sum_(diff * diff, axis=-1) * weights), pred_cm)


def refinenet_loss(pred, target, gamma_pog=0.001, gamma_xe=1.0, validity=None):
    """``gamma_pog * L_PoG + gamma_xe * L_XE``.

    ``pred`` is ``(logits, pog_cm)`` and ``target`` is ``(target_map, pog_cm)``.
    """
    logits, pred_cm = pred
    target_map, true_cm = target
    l_pog = mse_pog_loss(pred_cm, true_cm, validity)
    l_xe = bce_heatmap_loss(logits, target_map, validity)
    return l_pog * gamma_pog + l_xe * gamma_xe


def kl_divergence(p, q, eps=KL_EPS, tol=1e-6):
    """KL(p || q) for normalized maps; ``q`` is floored at ``eps`` and renormalized.

    ``p`` may be a :class:`Var` (gradients flow through it); ``q`` is a constant.
    """
    pv = p.value if isinstance(p, Var) else np.asarray(p, dtype=np.float64)
    qv = np.asarray(q, dtype=np.float64)
    for name, arr in (("p", pv), ("q", qv)):
        if np.any(arr < 0) or abs(float(arr.sum()) - 1.0) > tol:
            raise ContractViolation(f"{name} must be a normalized non-negative map (sum={arr.sum():.8g})")
    qf = np.maximum(qv, eps)
    qf = qf / qf.sum()
    pp = ad.as_var(p)
    tiny = np.finfo(np.float64).tiny
    kl = ad.sum_(pp * (ad.log(ad.maximum(pp, tiny)) - np.log(qf)))
    return _wrap(kl, p)
