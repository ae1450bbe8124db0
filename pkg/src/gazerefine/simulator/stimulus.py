"""Stimulus scripts (target trajectories) and screen-frame rendering.

A script is cut into 3 s scenes.  Each scene has its own layout (object
blobs or a page of word bars) and the target trajectory is a list of
fixation, saccade, pursuit and blank segments covering the whole duration.
Positions are in full-resolution screen pixels; frames are rendered
straight onto the 128x72 network grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gazerefine.heatmap import GRID_H, GRID_W

SCENE_SECONDS = 3.0
KINDS = ("image", "video", "reading")
SCREEN_W_PX = 1920
SCREEN_H_PX = 1080
MARGIN_PX = 120

# trajectory statistics; plausible values, not measured ones
FIXATION_S = (0.4, 1.1)
PURSUIT_S = (0.6, 1.5)
PURSUIT_SPEED_PX_S = (150.0, 450.0)
WORD_FIXATION_S = (0.2, 0.35)
BLOB_SIGMA = (2.0, 4.0)


@dataclass
class Segment:
    kind: str      # "fixation" | "saccade" | "pursuit" | "blank"
    t0: float
    t1: float
    start: tuple   # (x, y) px at t0
    end: tuple     # (x, y) px at t1

    def position(self, t):
        if self.kind != "pursuit" or self.t1 == self.t0:
            return np.array(self.end if self.kind == "saccade" else self.start, dtype=np.float64)
        a = (t - self.t0) / (self.t1 - self.t0)
        return (1 - a) * np.asarray(self.start, dtype=np.float64) + a * np.asarray(self.end, dtype=np.float64)


@dataclass
class Scene:
    """Static content of one 3 s scene.

    ``blobs`` rows are (x_px, y_px, sigma_grid); ``words`` rows are
    (x0_px, y_px, width_px) word bars of a text page.
    """

    index: int
    blobs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    words: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    target_sigma: float = 3.0
    texture_seed: int = 0


@dataclass
class StimulusScript:
    kind: str
    duration: float
    seed: int
    segments: list
    scenes: list

    def segment_at(self, t):
        for seg in self.segments:
            if seg.t0 <= t < seg.t1:
                return seg
        if t == self.duration:
            return self.segments[-1]
        raise ValueError(f"time {t} outside script duration {self.duration}")

    def target_px(self, t):
        """Target position (x, y) px at time ``t``; blank segments keep the last position."""
        return self.segment_at(t).position(t)

    def is_blank(self, t):
        return self.segment_at(t).kind == "blank"

    def scene_at(self, t):
        return self.scenes[min(int(t // SCENE_SECONDS), len(self.scenes) - 1)]

    @property
    def n_scenes(self):
        return len(self.scenes)


def _random_point(rng):
    return (float(rng.uniform(MARGIN_PX, SCREEN_W_PX - MARGIN_PX)),
            float(rng.uniform(MARGIN_PX, SCREEN_H_PX - MARGIN_PX)))


def _spread_points(rng, n, min_dist=300.0, tries=200):
    pts = []
    for _ in range(tries):
        if len(pts) == n:
            break
        p = _random_point(rng)
        if all(np.hypot(p[0] - q[0], p[1] - q[1]) >= min_dist for q in pts):
            pts.append(p)
    while len(pts) < n:
        pts.append(_random_point(rng))
    return pts


def _image_scene(rng, index, t0, n_objects, blank_prob):
    pts = _spread_points(rng, n_objects)
    sigmas = rng.uniform(*BLOB_SIGMA, size=n_objects)
    scene = Scene(index, blobs=np.array([(x, y, s) for (x, y), s in zip(pts, sigmas)]),
                  texture_seed=int(rng.integers(0, 2**31)))
    segs = []
    t = t0
    end = t0 + SCENE_SECONDS
    current = int(rng.integers(0, n_objects))
    if blank_prob > 0 and rng.random() < blank_prob:
        t1 = min(end, t + float(rng.uniform(0.3, 0.6)))
        segs.append(Segment("blank", t, t1, pts[current], pts[current]))
        t = t1
    while t < end - 1e-9:
        t1 = min(end, t + float(rng.uniform(*FIXATION_S)))
        segs.append(Segment("fixation", t, t1, pts[current], pts[current]))
        t = t1
        if n_objects > 1:
            current = (current + 1 + int(rng.integers(0, n_objects - 1))) % n_objects
    return scene, segs


def _pursuit_velocity(rng, pos, speed, dur, lo, hi):
    """Pick a direction that keeps a pursuit of ``dur`` seconds on screen.

    Returns ``(velocity, duration)``; if no sampled direction fits, the
    duration is shortened along the best one so the speed stays exact.
    """
    best, best_t = None, -1.0
    for _ in range(16):
        ang = float(rng.uniform(0, 2 * np.pi))
        v = speed * np.array([np.cos(ang), np.sin(ang)])
        with np.errstate(divide="ignore"):
            room = np.where(v > 0, (hi - pos) / v, np.where(v < 0, (lo - pos) / v, np.inf))
        t_max = float(np.min(room))
        if t_max >= dur:
            return v, dur
        if t_max > best_t:
            best, best_t = v, t_max
    return best, max(best_t, 0.0)


def _video_scene(rng, index, t0, n_objects, speed_range):
    lo = np.array([MARGIN_PX, MARGIN_PX], dtype=np.float64)
    hi = np.array([SCREEN_W_PX - MARGIN_PX, SCREEN_H_PX - MARGIN_PX], dtype=np.float64)
    pos = np.array(_random_point(rng))
    distractors = _spread_points(rng, max(n_objects - 1, 0))
    sigmas = rng.uniform(*BLOB_SIGMA, size=max(n_objects - 1, 0))
    scene = Scene(index, blobs=np.array([(x, y, s) for (x, y), s in zip(distractors, sigmas)]).reshape(-1, 3),
                  target_sigma=float(rng.uniform(*BLOB_SIGMA)), texture_seed=int(rng.integers(0, 2**31)))
    segs = []
    t = t0
    end = t0 + SCENE_SECONDS
    while t < end - 1e-9:
        dur = min(end - t, float(rng.uniform(*PURSUIT_S)))
        speed = float(rng.uniform(*speed_range))
        v, dur = _pursuit_velocity(rng, pos, speed, dur, lo, hi)
        if dur < 1e-3:
            dur = min(end - t, 0.1)
            v = np.zeros(2)
        stop = pos + v * dur
        segs.append(Segment("pursuit" if v.any() else "fixation", t, t + dur, tuple(pos), tuple(stop)))
        t += dur
        pos = stop
        if t < end - 1e-9:
            # saccade: target jumps, held for one sample-length
            new = np.array(_random_point(rng))
            t1 = min(end, t + 0.1)
            segs.append(Segment("saccade", t, t1, tuple(pos), tuple(new)))
            t = t1
            pos = new
    return scene, segs


def _reading_scene(rng, index, t0):
    line_h = 60.0
    x_left, x_right = 160.0, SCREEN_W_PX - 160.0
    n_lines = int((SCREEN_H_PX - 2 * MARGIN_PX) // line_h)
    words = []
    lines = []
    for li in range(n_lines):
        y = MARGIN_PX + li * line_h + line_h / 2
        x = x_left + float(rng.uniform(0, 40))
        row = []
        while True:
            w = float(rng.uniform(60, 220))
            if x + w > x_right:
                break
            row.append((x, y, w))
            x += w + 30.0
        words.extend(row)
        lines.append(row)
    scene = Scene(index, words=np.array(words), texture_seed=int(rng.integers(0, 2**31)))
    segs = []
    t = t0
    end = t0 + SCENE_SECONDS
    li = int(rng.integers(0, max(n_lines - 3, 1)))
    wi = 0
    while t < end - 1e-9:
        x0, y, w = lines[li][wi]
        p = (x0 + w / 2, y)
        t1 = min(end, t + float(rng.uniform(*WORD_FIXATION_S)))
        segs.append(Segment("fixation", t, t1, p, p))
        t = t1
        wi += 1
        if wi >= len(lines[li]):
            wi, li = 0, (li + 1) % n_lines
    return scene, segs


def gen_script(kind, duration, rng, n_objects=4, blank_prob=0.0, speed_range=PURSUIT_SPEED_PX_S):
    """Build a deterministic stimulus script.

    ``kind`` is "image" (fixations hopping between objects), "video" (a
    pursuit target with saccadic jumps among static distractors) or
    "reading" (left-to-right, top-to-bottom word fixations).  ``n_objects``
    counts the target plus distractors for image and video scripts.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    n_scenes = duration / SCENE_SECONDS
    if duration <= 0 or abs(n_scenes - round(n_scenes)) > 1e-9:
        raise ValueError(f"duration must be a positive multiple of {SCENE_SECONDS} s, got {duration}")
    if n_objects < 1:
        raise ValueError("n_objects must be at least 1")
    seed = int(rng.integers(0, 2**31))
    scenes, segments = [], []
    for i in range(int(round(n_scenes))):
        t0 = i * SCENE_SECONDS
        srng = rng.derive("scene", i)
        if kind == "image":
            scene, segs = _image_scene(srng, i, t0, n_objects, blank_prob)
        elif kind == "video":
            scene, segs = _video_scene(srng, i, t0, n_objects, speed_range)
        else:
            scene, segs = _reading_scene(srng, i, t0)
        scenes.append(scene)
        segments.extend(segs)
    return StimulusScript(kind, float(duration), seed, segments, scenes)


def _texture(seed, width, height):
    from gazerefine.numerics.rng import Rng

    rng = Rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    tex = np.zeros((height, width))
    for _ in range(4):
        fx, fy = rng.uniform(-0.15, 0.15, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        tex += np.cos(fx * xs + fy * ys + phase)
    return 0.18 + 0.025 * tex


def _blob(cx, cy, sigma, width, height):
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    return np.exp(-((ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2) / (2 * sigma**2))


def _to_grid(p_px, width, height):
    return p_px[0] * width / SCREEN_W_PX - 0.5, p_px[1] * height / SCREEN_H_PX - 0.5


def render_screen(script, t, width=GRID_W, height=GRID_H):
    """Render the screen at time ``t`` as a (height, width) uint8 frame."""
    scene = script.scene_at(t)
    frame = _texture(scene.texture_seed, width, height)
    if script.is_blank(t):
        return _quantize(frame)
    amp = 0.7
    if script.kind == "reading":
        sx, sy = width / SCREEN_W_PX, height / SCREEN_H_PX
        target = script.target_px(t)
        xs = (np.arange(width) + 0.5) / sx
        ys = (np.arange(height) + 0.5) / sy
        for x0, y, w in scene.words:
            active = abs(x0 + w / 2 - target[0]) < 1e-6 and abs(y - target[1]) < 1e-6
            bar = ((xs >= x0) & (xs <= x0 + w))[None, :] & (np.abs(ys - y) <= 12.0)[:, None]
            frame = np.where(bar, 0.45 if not active else 0.65, frame)
    else:
        for x, y, s in scene.blobs:
            gx, gy = _to_grid((x, y), width, height)
            frame = frame + amp * _blob(gx, gy, s, width, height)
        if script.kind == "video":
            gx, gy = _to_grid(script.target_px(t), width, height)
            frame = frame + amp * _blob(gx, gy, scene.target_sigma, width, height)
    return _quantize(frame)


def _quantize(frame):
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
