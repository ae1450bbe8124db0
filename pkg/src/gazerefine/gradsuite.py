"""Finite-difference checks for every differentiable op and both full models.

All cases run in float64.  Inputs to piecewise ops (relu, abs, clip,
maximum) are drawn away from their kinks so a central difference of
step 1e-3 never straddles one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from gazerefine import baselines as bl
from gazerefine import heatmap as hm
from gazerefine.geometry import ScreenGeometry
from gazerefine.models.config import EyeNetConfig, RefineNetConfig
from gazerefine.models.eyenet import EyeNet, eyenet_loss
from gazerefine.models.refinenet import RefineNet, target_maps
from gazerefine.numerics import autodiff as ad
from gazerefine.numerics.gradcheck import grad_check
from gazerefine.numerics.layers import conv2d, upsample_nearest
from gazerefine.numerics.recurrent import make_cell
from gazerefine.numerics.rng import Rng

STEP = 1e-3
TOL = 1e-3


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    worst: str
    n_checked: int
    seconds: float
    n_skipped: int = 0

    def passed(self, tol=TOL, max_skip_fraction=0.25):
        """Worst error below ``tol`` and most sampled coordinates actually checked."""
        total = self.n_checked + self.n_skipped
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < tol and self.n_checked > 0
                    and self.n_skipped <= max_skip_fraction * total)


def _away(rng, shape, lo=0.1, hi=1.0):
    """Values with |v| in [lo, hi] and random sign."""
    return rng.uniform(lo, hi, size=shape) * np.where(rng.random(shape) < 0.5, -1.0, 1.0)


def _weights(rng, shape):
    return rng.normal(0.0, 1.0, size=shape)


def op_cases(seed=0):
    """``(name, f, params)`` triples; ``f()`` is a scalar Var built from ``params``."""
    rng = Rng(seed)
    cases = []

    def unary(name, fn, x):
        a = ad.parameter(x)
        w = _weights(rng, np.shape(fn(ad.as_var(x)).value))
        cases.append((name, lambda: ad.sum_(fn(a) * w), {"a": a}))

    def binary(name, fn, x, y):
        a, b = ad.parameter(x), ad.parameter(y)
        w = _weights(rng, np.shape(fn(ad.as_var(x), ad.as_var(y)).value))
        cases.append((name, lambda: ad.sum_(fn(a, b) * w), {"a": a, "b": b}))

    s = (3, 4)
    binary("add_broadcast", ad.add, rng.normal(size=s), rng.normal(size=(4,)))
    binary("sub", ad.sub, rng.normal(size=s), rng.normal(size=s))
    binary("mul_broadcast", ad.mul, rng.normal(size=s), rng.normal(size=(3, 1)))
    binary("div", ad.div, rng.normal(size=s), rng.uniform(0.5, 2.0, size=s))
    binary("matmul", ad.matmul, rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)))
    binary("arctan2", ad.arctan2, rng.uniform(0.2, 1.0, size=s), rng.uniform(0.2, 1.0, size=s))
    unary("neg", ad.neg, rng.normal(size=s))
    unary("power", lambda v: ad.power(v, 1.7), rng.uniform(0.5, 2.0, size=s))
    unary("square", ad.square, rng.normal(size=s))
    unary("maximum", lambda v: ad.maximum(v, 0.0), _away(rng, s))
    unary("clip", lambda v: ad.clip(v, -0.5, 0.5), np.concatenate([_away(rng, (3,), 0.6, 1.0),
                                                                      rng.uniform(-0.4, 0.4, size=(3,))]))
    unary("exp", ad.exp, rng.normal(size=s))
    unary("log", ad.log, rng.uniform(0.5, 2.0, size=s))
    unary("sqrt", ad.sqrt, rng.uniform(0.5, 2.0, size=s))
    unary("sin", ad.sin, rng.normal(size=s))
    unary("cos", ad.cos, rng.normal(size=s))
    unary("abs", ad.abs_, _away(rng, s))
    unary("arccos", ad.arccos, rng.uniform(-0.9, 0.9, size=s))
    unary("arcsin", ad.arcsin, rng.uniform(-0.9, 0.9, size=s))
    unary("tanh", ad.tanh, rng.normal(size=s))
    unary("sigmoid", ad.sigmoid, rng.normal(size=s) * 3)
    unary("relu", ad.relu, _away(rng, s))
    unary("softplus", ad.softplus, rng.normal(size=s) * 3)
    unary("sum_axis", lambda v: ad.sum_(v, axis=1, keepdims=True), rng.normal(size=s))
    unary("mean", lambda v: ad.mean(v, axis=0), rng.normal(size=s))
    unary("reshape", lambda v: ad.reshape(v, (4, 3)), rng.normal(size=s))
    unary("transpose", lambda v: ad.transpose(v, (1, 0)), rng.normal(size=s))
    unary("getitem_slice", lambda v: v[1:, ::2], rng.normal(size=s))
    unary("getitem_fancy", lambda v: ad.getitem(v, (np.array([0, 2, 2]), np.array([1, 3, 1]))),
          rng.normal(size=s))
    unary("take_time", lambda v: ad.take_time(v, 1), rng.normal(size=(2, 3, 4)))
    unary("where", lambda v: ad.where(np.arange(12).reshape(s) % 2 == 0, v, ad.square(v)), rng.normal(size=s))
    unary("logsumexp", lambda v: ad.logsumexp(v, axis=-1), rng.normal(size=s) * 2)
    unary("softmax", lambda v: ad.softmax(v, axis=-1), rng.normal(size=s) * 2)
    binary("concat", lambda a, b: ad.concat([a, b], axis=-1), rng.normal(size=s), rng.normal(size=(3, 2)))
    binary("stack", lambda a, b: ad.stack([a, b], axis=1), rng.normal(size=s), rng.normal(size=s))
    binary("conv2d_stride1", lambda x, w: conv2d(x, w, None, stride=1, padding=1),
           rng.normal(size=(2, 6, 5, 3)), rng.normal(size=(3, 3, 3, 4)) * 0.3)
    binary("conv2d_stride2", lambda x, w: conv2d(x, w, None, stride=2, padding=1),
           rng.normal(size=(2, 7, 6, 2)), rng.normal(size=(3, 3, 2, 3)) * 0.3)
    unary("upsample_nearest", upsample_nearest, rng.normal(size=(1, 3, 4, 2)))
    for kind in ("rnn", "lstm", "gru"):
        for spatial in (False, True):
            cell = make_cell(kind, Rng(seed).derive("cell", kind, int(spatial)), 3, 4, spatial=spatial,
                             dtype=np.float64)
            shape = (2, 3, 4, 5, 3) if spatial else (2, 3, 3)
            xs = ad.parameter(rng.normal(size=shape))
            out_shape = shape[:-1] + (4,)
            w = _weights(rng, out_shape)
            params = dict(cell.named_parameters())
            params["x"] = xs
            cases.append((f"cell_{kind}_{'spatial' if spatial else 'dense'}",
                          (lambda c=cell, x=xs, ww=w: ad.sum_(c.unroll(x)[0] * ww)), params))

    # heatmap and alignment ops
    z = ad.parameter(rng.normal(size=(2, 8, 16)))
    wsa = _weights(rng, (2, 2))
    cases.append(("soft_argmax_logits", lambda: ad.sum_(hm.soft_argmax_logits(z, 0.7) * wsa), {"z": z}))
    hpos = ad.parameter(rng.uniform(0.2, 1.0, size=(2, 8, 16)))
    cases.append(("soft_argmax", lambda: ad.sum_(hm.soft_argmax(hpos) * wsa), {"h": hpos}))
    target = np.clip(hm.gaussian_map(np.array([[5.0, 3.0], [10.0, 4.0]]), 2.0, 16, 8), 0, 1)
    zl = ad.parameter(_away(rng, (2, 8, 16), 0.05, 2.0))
    cases.append(("bce_heatmap", lambda: hm.bce_heatmap_loss(zl, target, np.array([True, True])), {"z": zl}))
    pc = ad.parameter(rng.normal(size=(2, 3, 2)))
    tc = rng.normal(size=(2, 3, 2))
    cases.append(("mse_pog", lambda: hm.mse_pog_loss(pc, tc), {"p": pc}))
    logits_p = ad.parameter(rng.normal(size=(4, 6)))
    q = rng.uniform(0.1, 1.0, size=(4, 6))
    q /= q.sum()
    cases.append(("kl_divergence", lambda: hm.kl_divergence(ad.reshape(ad.softmax(ad.reshape(logits_p, (24,))),
                                                                        (4, 6)), q), {"z": logits_p}))
    screen = ScreenGeometry()
    pts = ad.parameter(np.array([[20.0, 10.0], [40.0, 20.0], [64.0, 36.0]]))
    sal = bl.accumulate_map(np.array([[22.0, 11.0], [60.0, 30.0]]))
    cases.append(("accumulate_map_kl", lambda: hm.kl_divergence(bl.accumulate_map(pts), sal), {"p": pts}))
    kap = ad.parameter(np.array([0.02, -0.03]))
    gaze = rng.uniform(-0.2, 0.2, size=(5, 2, 2)) + np.array([0.3, 0.0])
    origins = np.broadcast_to(np.array([[3.15, 15.0, 60.0], [-3.15, 15.0, 60.0]]), (5, 2, 3))
    wk = _weights(rng, (5, 2))
    cases.append(("kappa_reintersection", lambda: ad.sum_(bl._kappa_pog(kap, gaze, origins, screen) * wk),
                  {"kappa": kap}))
    return cases


def _jitter_biases(net, rng):
    # zero biases behind dead relu paths sit exactly on a kink
    for name, p in net.named_parameters().items():
        if name.endswith(".b"):
            p.value = p.value + _away(rng, p.shape, 0.05, 0.3)
    return net


def model_cases(seed=0):
    """Full EyeNet-lite and RefineNet-lite losses on tiny float64 instances."""
    rng = Rng(seed).derive("models")
    cases = []
    for variant in ("none", "gru"):
        cfg = EyeNetConfig(image_size=16, variant=variant, channels=(2, 3, 3, 3), hidden=4)
        net = _jitter_biases(EyeNet(cfg, rng.derive("eyenet", variant), dtype=np.float64), rng)
        images = rng.uniform(0, 1, size=(2, 3, 16, 16))
        # labels kept well away from the predictions: angular error is |x|-like at zero
        angles = net(images).angles.value + _away(rng, (2, 3, 2), 0.05, 0.3)
        pupil = rng.uniform(2, 4, size=(2, 3))
        valid = np.ones((2, 3), dtype=bool)
        valid[0, 1] = False
        cases.append((f"eyenet_{variant}", (lambda n=net: eyenet_loss(n(images), angles, pupil, valid)),
                      net.named_parameters()))
    screen = ScreenGeometry()
    for cell, skip in (("gru", True), ("none", False)):
        cfg = RefineNetConfig(grid_w=16, grid_h=8, cell=cell, skip_connections=skip, channels=(2, 2, 2), hidden=2)
        net = _jitter_biases(RefineNet(cfg, rng.derive("refinenet", cell), screen, dtype=np.float64), rng)
        frames = rng.uniform(0, 1, size=(1, 3, 1, 8, 16))
        init = np.stack([rng.uniform(10, 45, size=(1, 3)), rng.uniform(5, 25, size=(1, 3))], axis=-1)
        true = init + rng.normal(0, 2, size=init.shape)
        tmaps = target_maps(true, screen, cfg, np.float64)

        def f(n=net, fr=frames, i0=init, t=true, tm=tmaps):
            out = n(fr, i0)
            return hm.refinenet_loss((out.logits, out.pog_cm), (tm, t), 0.001, 1.0)

        cases.append((f"refinenet_{cell}_{'skip' if skip else 'noskip'}", f, net.named_parameters()))
    return cases


def run_case(name, f, params, step=STEP, max_coords=None, seed=0):
    t0 = time.perf_counter()
    r = grad_check(f, params, step=step, max_coords=max_coords, rng=Rng(seed).derive("coords", name),
                   skip_kinks=True)
    return CaseResult(name, r.max_rel_error, f"{r.worst_param}{list(r.worst_index)}", r.n_checked,
                      time.perf_counter() - t0, r.n_skipped)


def run_suite(step=STEP, model_coords=8, seed=0):
    """Run every op case in full and the model cases on sampled coordinates."""
    results = [run_case(n, f, p, step, seed=seed) for n, f, p in op_cases(seed)]
    results += [run_case(n, f, p, step, max_coords=model_coords, seed=seed) for n, f, p in model_cases(seed)]
    return results
