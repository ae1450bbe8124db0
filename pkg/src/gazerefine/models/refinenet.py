"""RefineNet-lite: screen-conditioned point-of-gaze refinement.

Per frame, the screen content and a confidence map of the initial PoG are
stacked as channels and passed through a strided encoder.  A convolutional
recurrent cell at the bottleneck carries state across the sequence, and a
nearest-upsampling decoder (optionally fed encoder activations via skip
connections) emits one logit map.  The last conv runs at half resolution and
its logits are upsampled to the grid.  Soft-argmax over that map gives the
refined PoG.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from gazerefine import heatmap as hm
from gazerefine.errors import ShapeError
from gazerefine.geometry import ScreenGeometry
from gazerefine.models.config import RefineNetConfig
from gazerefine.numerics import autodiff as ad
from gazerefine.numerics.layers import Conv2d, Module, channel_concat, upsample_nearest
from gazerefine.numerics.recurrent import make_cell


class RefineNetOutput(NamedTuple):
    logits: ad.Var  # (N, T, H, W)
    pog_cm: ad.Var  # (N, T, 2)


def confidence_maps(initial_cm, screen, cfg, dtype=np.float32):
    """Peak-1 Gaussian maps (N, T, H, W) at initial PoG estimates (N, T, 2) cm.

    Entries with a non-finite estimate get an all-zero map.
    """
    cm = np.asarray(initial_cm, dtype=np.float64)
    ok = np.all(np.isfinite(cm), axis=-1)
    grid = hm.px_to_grid(np.nan_to_num(cm) * screen.px_per_cm, screen, cfg.grid_w, cfg.grid_h)
    maps = hm.gaussian_map(grid, cfg.heatmap_sigma, cfg.grid_w, cfg.grid_h, dtype=dtype)
    return maps * ok[..., None, None].astype(dtype)


def target_maps(true_cm, screen, cfg, dtype=np.float32):
    """Training targets: the same Gaussian at the label PoG, clipped to [0, 1]."""
    return np.clip(confidence_maps(true_cm, screen, cfg, dtype), 0.0, 1.0)


class RefineNet(Module):
    def __init__(self, cfg: RefineNetConfig, rng, screen=None, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.screen = screen or ScreenGeometry()
        self.dtype = np.dtype(dtype).type
        c1, c2, c3 = cfg.channels
        cin = cfg.screen_channels + 1
        self.enc1 = self.add_module("enc1", Conv2d(rng.derive("enc1"), cin, c1, 3, stride=2, dtype=dtype))
        self.enc2 = self.add_module("enc2", Conv2d(rng.derive("enc2"), c1, c2, 3, stride=2, dtype=dtype))
        self.enc3 = self.add_module("enc3", Conv2d(rng.derive("enc3"), c2, c3, 3, stride=2, dtype=dtype))
        if cfg.cell == "none":
            self.bottleneck = self.add_module("bottleneck", Conv2d(rng.derive("bottleneck"), c3, cfg.hidden, 3,
                                                                   dtype=dtype))
        else:
            self.bottleneck = self.add_module("bottleneck", make_cell(cfg.cell, rng.derive("bottleneck"), c3,
                                                                      cfg.hidden, spatial=True, dtype=dtype))
        skip2 = c2 if cfg.skip_connections else 0
        skip1 = c1 if cfg.skip_connections else 0
        self.dec3 = self.add_module("dec3", Conv2d(rng.derive("dec3"), cfg.hidden + skip2, c2, 3, dtype=dtype))
        self.dec2 = self.add_module("dec2", Conv2d(rng.derive("dec2"), c2 + skip1, c1, 3, dtype=dtype))
        self.dec1 = self.add_module("dec1", Conv2d(rng.derive("dec1"), c1, 1, 3, gain="tanh", dtype=dtype))

    @staticmethod
    def skip_parameter_delta(cfg):
        """Parameters added by the skip connections (3x3 kernels on extra input channels)."""
        c1, c2, _ = cfg.channels
        return 9 * (c2 * c2 + c1 * c1)

    def astype(self, dtype):
        super().astype(dtype)
        self.dtype = np.dtype(dtype).type
        return self

    def __call__(self, screen_frames, initial_cm):
        return self.forward(screen_frames, initial_cm)

    def _inputs(self, screen_frames, initial_cm):
        cfg = self.cfg
        frames = np.asarray(screen_frames)
        expected = (cfg.screen_channels, cfg.grid_h, cfg.grid_w)
        if frames.ndim != 5 or frames.shape[2:] != expected:
            raise ShapeError("RefineNet expects screen frames (N, T, C, H, W)", frames.shape, ("N", "T") + expected)
        initial_cm = np.asarray(initial_cm)
        if initial_cm.shape != frames.shape[:2] + (2,):
            raise ShapeError("initial PoG must be (N, T, 2)", initial_cm.shape, frames.shape[:2] + (2,))
        if frames.dtype == np.uint8:
            x = frames.astype(self.dtype) / self.dtype(255.0)
        else:
            x = frames.astype(self.dtype, copy=False)
        if not cfg.screen_input:
            x = np.zeros_like(x)
        conf = confidence_maps(initial_cm, self.screen, cfg, self.dtype)
        x = np.concatenate([np.moveaxis(x, 2, -1), conf[..., None]], axis=-1)
        return x

    def forward(self, screen_frames, initial_cm):
        """Returns per-frame logit maps and refined PoG in cm; causal in T."""
        x = self._inputs(screen_frames, initial_cm)
        n, t = x.shape[:2]
        flat = ad.as_var(x.reshape((n * t,) + x.shape[2:]))
        e1 = ad.relu(self.enc1(flat))
        e2 = ad.relu(self.enc2(e1))
        e3 = ad.relu(self.enc3(e2))
        if self.cfg.cell == "none":
            b = ad.relu(self.bottleneck(e3))
        else:
            seq = e3.reshape((n, t) + e3.shape[1:])
            b, _ = self.bottleneck.unroll(seq)
            b = b.reshape((n * t,) + b.shape[2:])
        d = upsample_nearest(b)
        if self.cfg.skip_connections:
            d = channel_concat(d, e2)
        d = ad.relu(self.dec3(d))
        d = upsample_nearest(d)
        if self.cfg.skip_connections:
            d = channel_concat(d, e1)
        d = ad.relu(self.dec2(d))
        logits = upsample_nearest(self.dec1(d)).reshape(n, t, self.cfg.grid_h, self.cfg.grid_w)
        grid = hm.soft_argmax_logits(logits)
        scale = np.array([self.screen.width_px / self.cfg.grid_w, self.screen.height_px / self.cfg.grid_h])
        pog_cm = (grid + 0.5) * (scale / self.screen.px_per_cm).astype(self.dtype)
        return RefineNetOutput(logits, pog_cm)
