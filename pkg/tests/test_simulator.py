import hashlib

import numpy as np
import pytest

from gazerefine.errors import FormatError
from gazerefine.geometry import FRONTAL, Kappa, ScreenGeometry, angles_to_vector, angular_error, intersect_rays
from gazerefine.heatmap import GRID_H, GRID_W
from gazerefine.numerics import Rng
from gazerefine.simulator import (KINDS, ObserverProfile, SimConfig, build_dataset, gen_script, in_memory_split,
                                  load_dataset, observer_gaze, render_eye, render_screen, sample_observer)
from gazerefine.simulator import dataset as ds
from gazerefine.simulator.observer import blink_mask
from gazerefine.simulator import stimulus as stim
from gazerefine.simulator.stimulus import PURSUIT_SPEED_PX_S, SCREEN_H_PX, SCREEN_W_PX

SCREEN = ScreenGeometry()


def _sample_times(script, step=0.05):
    return np.arange(0, script.duration, step)


@pytest.mark.parametrize("kind", KINDS)
def test_script_deterministic_and_partitioned(kind):
    a = gen_script(kind, 9.0, Rng(1).derive(kind))
    b = gen_script(kind, 9.0, Rng(1).derive(kind))
    assert a.segments == b.segments and a.seed == b.seed
    for sa, sb in zip(a.scenes, b.scenes):
        assert np.array_equal(sa.blobs, sb.blobs) and np.array_equal(sa.words, sb.words)
        assert sa.texture_seed == sb.texture_seed
    assert a.n_scenes == 3
    segs = a.segments
    assert segs[0].t0 == 0.0 and segs[-1].t1 == pytest.approx(9.0)
    for s0, s1 in zip(segs, segs[1:]):
        assert s1.t0 == pytest.approx(s0.t1)
    for t in _sample_times(a):
        x, y = a.target_px(t)
        assert 0 <= x < SCREEN_W_PX and 0 <= y < SCREEN_H_PX


def test_script_bad_duration():
    with pytest.raises(ValueError):
        gen_script("image", 4.0, Rng(0))
    with pytest.raises(ValueError):
        gen_script("cartoon", 3.0, Rng(0))


def test_reading_left_to_right_within_line():
    for seed in range(10):
        script = gen_script("reading", 6.0, Rng(seed))
        fix = [s for s in script.segments if s.kind == "fixation"]
        for prev, cur in zip(fix, fix[1:]):
            same_scene = int(prev.t0 // 3) == int(cur.t0 // 3)
            if same_scene and prev.start[1] == cur.start[1]:
                assert cur.start[0] >= prev.start[0]
            elif same_scene:
                assert cur.start[1] > prev.start[1] or cur.start[0] < prev.start[0]


def test_video_pursuit_speed_bounds():
    speeds = []
    for seed in range(30):
        script = gen_script("video", 9.0, Rng(seed))
        for s in script.segments:
            if s.kind == "pursuit" and s.t1 > s.t0:
                speeds.append(np.hypot(*(np.subtract(s.end, s.start))) / (s.t1 - s.t0))
    speeds = np.array(speeds)
    assert len(speeds) > 30
    lo, hi = PURSUIT_SPEED_PX_S
    assert speeds.min() >= lo * (1 - 1e-9) and speeds.max() <= hi * (1 + 1e-9)
    assert lo < np.median(speeds) < hi


def test_render_screen_blob_at_target():
    for seed in range(5):
        script = gen_script("image", 3.0, Rng(seed), n_objects=1)
        t = 1.0
        frame = render_screen(script, t)
        assert frame.shape == (GRID_H, GRID_W) and frame.dtype == np.uint8
        iy, ix = np.unravel_index(np.argmax(frame), frame.shape)
        gx, gy = np.array(script.target_px(t)) * [GRID_W / SCREEN_W_PX, GRID_H / SCREEN_H_PX] - 0.5
        assert abs(ix - gx) <= 1 and abs(iy - gy) <= 1
        assert np.array_equal(frame, render_screen(script, t))


def test_render_screen_blank_segment_is_background():
    script = gen_script("image", 30.0, Rng(3), blank_prob=0.5)
    blanks = [s for s in script.segments if s.kind == "blank"]
    assert blanks
    t = (blanks[0].t0 + blanks[0].t1) / 2
    frame = render_screen(script, t)
    background = stim._quantize(stim._texture(script.scene_at(t).texture_seed, GRID_W, GRID_H))
    assert np.array_equal(frame, background)
    assert not np.array_equal(render_screen(script, blanks[0].t0 - 0.01), background)


def test_reading_highlights_active_word():
    script = gen_script("reading", 3.0, Rng(4))
    frame = render_screen(script, 0.5).astype(int)
    assert (frame == round(0.65 * 255)).any() and (frame == round(0.45 * 255)).any()


def _profile(kappa=(0.0, 0.0), noise=0.0):
    return ObserverProfile("o", Kappa(*kappa), Kappa(*kappa), noise_deg=noise)


def test_observer_gaze_zero_kappa_noise():
    script = gen_script("video", 3.0, Rng(5))
    t = np.arange(30) / 10
    g = observer_gaze(script, t, _profile(), Rng(6), SCREEN)
    assert np.array_equal(g.apparent, g.true)


def test_observer_gaze_gap_equals_kappa():
    k = (np.radians(2.0), np.radians(-3.0))
    script = gen_script("image", 3.0, Rng(7))
    g = observer_gaze(script, np.arange(30) / 10, _profile(k), Rng(8), SCREEN)
    gap = angular_error(angles_to_vector(g.apparent), angles_to_vector(g.true))
    want = angular_error(angles_to_vector(k), FRONTAL)
    assert np.max(np.abs(gap - want)) < 1e-9


def test_synthesis_consistency(tiny_splits):
    sp = tiny_splits["train"]
    origins = np.broadcast_to(sp.origins[:, None], sp.gaze_true.shape[:2] + (2, 3))
    for eye in range(2):
        hit = intersect_rays(origins[..., eye, :], angles_to_vector(np.nan_to_num(sp.gaze_true[..., eye, :])),
                             SCREEN, strict=False)
        err = np.linalg.norm(hit - sp.pog_cm, axis=-1)[sp.validity]
        assert err.max() < 1e-6


def test_blink_rate():
    mask = blink_mask(200_000, 0.2, 10.0, Rng(9))
    p = 0.02
    want = 1 - (1 - p) ** 2 * (1 - p / 2)      # start at k or k-1, or at k-2 with length 3
    assert abs(mask.mean() - want) / want < 0.05


def test_render_eye():
    look = sample_observer("x", Rng(10)).appearance
    img = render_eye((0.0, 0.0), 3.0, Rng(11), look, size=64, noise=0.0)
    assert np.array_equal(img, render_eye((0.0, 0.0), 3.0, Rng(11), look, size=64, noise=0.0))
    dark = img < 60
    ys, xs = np.nonzero(dark)
    assert abs(xs.mean() - 31.5) < 0.5 and abs(ys.mean() - 31.5) < 1.0

    def iris_x(yaw):
        im = render_eye((0.0, yaw), 3.0, Rng(12), look, size=64, noise=0.0).astype(float)
        w = np.clip(look.sclera * 255 - im, 0, None)
        return (w.sum(0) * np.arange(64)).sum() / w.sum()

    xs = [iris_x(y) for y in np.radians(np.arange(-30, 31, 5))]
    assert np.all(np.diff(xs) > 0)


def test_render_eye_size_and_closed():
    img = render_eye((0.1, 0.1), 3.0, Rng(0), size=32, closed=True, noise=0.0)
    assert img.shape == (32, 32)
    assert (img < 60).sum() == 0


def test_population_and_kappa_ranges():
    cfg = SimConfig(n_train=30, n_val=5, n_test=30)
    pop = ds.sample_population(cfg, Rng(0))
    mags = [np.degrees(np.hypot(*(np.mean(p.kappas, axis=0)))) for p in pop["test"]]
    assert min(mags) > 1.0 and max(mags) < 6.0
    ids = {s: {p.observer_id for p in pop[s]} for s in pop}
    assert not (ids["train"] & ids["test"]) and not (ids["train"] & ids["val"]) and not (ids["val"] & ids["test"])


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_build_dataset_deterministic_and_disjoint(tmp_path):
    cfg = SimConfig(n_train=2, n_val=1, n_test=1, kinds=("image", "reading"), seconds_per_kind=6.0, eye_size=16)
    a = build_dataset(tmp_path / "a", cfg, Rng(cfg.seed))
    b = build_dataset(tmp_path / "b", cfg, Rng(cfg.seed))
    assert _tree_digest(a) == _tree_digest(b)
    data = load_dataset(a)
    obs = {s: set(data.splits[s].observers.tolist()) for s in data.splits}
    assert not (obs["train"] & obs["val"]) and not (obs["train"] & obs["test"]) and not (obs["val"] & obs["test"])
    n_seq = sum(len(v) for v in data.splits.values())
    assert n_seq == (2 + 1 + 1) * len(cfg.kinds) * cfg.seconds_per_kind / 3.0
    assert ds.observer_kappa(data, "test000") is None
    assert ds.observer_kappa(data, "train000") is not None
    c = build_dataset(tmp_path / "c", SimConfig(**{**cfg.__dict__, "seed": 1}), Rng(1))
    assert _tree_digest(c) != _tree_digest(a)


def test_sequence_file_round_trip(tmp_path):
    cfg = SimConfig(n_train=1, n_val=0, n_test=0, kinds=("video",), seconds_per_kind=3.0, eye_size=16)
    root = build_dataset(tmp_path, cfg, Rng(0))
    mem = in_memory_split(cfg, "train")
    disk = load_dataset(root).split("train")
    assert disk.names == mem.names
    assert np.array_equal(disk.screen, mem.screen) and np.array_equal(disk.eyes, mem.eyes)
    assert np.array_equal(disk.validity, mem.validity)
    v = mem.validity
    np.testing.assert_allclose(disk.pog_cm[v], mem.pog_cm[v], rtol=1e-6)
    np.testing.assert_allclose(disk.gaze_apparent, mem.gaze_apparent, atol=1e-6)
    blob = (root / "sequences" / f"{mem.names[0]}.gzsq").read_bytes()
    assert blob[:4] == b"GZSQ"
    assert int.from_bytes(blob[4:8], "little") == ds.VERSION and int.from_bytes(blob[8:12], "little") == 30
    with pytest.raises(FormatError):
        ds.decode_sequence(b"GZSX" + blob[4:])
    with pytest.raises(FormatError):
        ds.decode_sequence(blob[:-5])


def test_split_shapes_and_pupil_range(tiny_splits):
    sp = tiny_splits["val"]
    assert sp.screen.shape[1:] == (30, 1, GRID_H, GRID_W)
    assert np.all(sp.pupil[sp.validity] >= 2.0) and np.all(sp.pupil[sp.validity] <= 4.0)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(seq_len=20)
    with pytest.raises(ValueError):
        SimConfig(kinds=("opera",))
