import numpy as np
import pytest

from gazerefine import gradsuite, heatmap as hm
from gazerefine.errors import EmptyBatchError, ShapeError
from gazerefine.geometry import angular_error, angles_to_vector, intersect_rays
from gazerefine.models import EyeNet, EyeNetConfig, RefineNet, RefineNetConfig, eyenet_loss, eyes_to_initial_pog
from gazerefine.models.eyenet import EyeNetOutput
from gazerefine.models import training as tr
from gazerefine.numerics import Rng, autodiff as ad

SMALL_EYE = EyeNetConfig(image_size=16, channels=(2, 3, 3, 3), hidden=4)
SMALL_REF = RefineNetConfig(grid_w=32, grid_h=16, channels=(2, 3, 3), hidden=3)


def _eyenet(variant, dtype=np.float64, seed=0):
    cfg = EyeNetConfig(**{**SMALL_EYE.to_dict(), "variant": variant})
    return EyeNet(cfg, Rng(seed), dtype=dtype)


def _refinenet(cell="gru", skip=True, screen=None, dtype=np.float64, seed=0):
    cfg = RefineNetConfig(**{**SMALL_REF.to_dict(), "cell": cell, "skip_connections": skip})
    return RefineNet(cfg, Rng(seed), screen, dtype=dtype)


def test_eyenet_zero_weights_constant_output():
    net = _eyenet("gru")
    for p in net.parameters():
        p.value[...] = 0.0
    out = net(np.random.default_rng(0).uniform(0, 1, (2, 5, 16, 16)))
    assert np.all(out.angles.value == 0.0)
    assert np.all(out.pupil.value == out.pupil.value[0, 0])


def test_eyenet_static_is_frame_equivariant():
    net = _eyenet("none")
    images = np.random.default_rng(1).uniform(0, 1, (2, 6, 16, 16))
    perm = np.array([3, 0, 5, 1, 4, 2])
    a = net(images).angles.value
    b = net(images[:, perm]).angles.value
    np.testing.assert_allclose(b, a[:, perm], atol=1e-12)


@pytest.mark.parametrize("variant", ["rnn", "lstm", "gru"])
def test_eyenet_recurrent_is_causal(variant):
    net = _eyenet(variant)
    rng = np.random.default_rng(2)
    images = rng.uniform(0, 1, (2, 6, 16, 16))
    base = net(images)
    t = 3
    pert = images.copy()
    pert[:, t + 1:] = rng.uniform(0, 1, pert[:, t + 1:].shape)
    out = net(pert)
    np.testing.assert_array_equal(out.angles.value[:, :t + 1], base.angles.value[:, :t + 1])
    np.testing.assert_array_equal(out.pupil.value[:, :t + 1], base.pupil.value[:, :t + 1])
    assert not np.allclose(out.angles.value[:, t + 1:], base.angles.value[:, t + 1:])


def test_eyenet_angles_in_domain_and_shape_error():
    net = _eyenet("none")
    for p in net.parameters():
        p.value *= 50
    a = net(np.random.default_rng(3).uniform(0, 1, (1, 4, 16, 16))).angles.value
    assert np.all(np.abs(a[..., 0]) < np.pi / 2) and np.all(np.abs(a[..., 1]) <= np.pi)
    with pytest.raises(ShapeError):
        net(np.zeros((1, 4, 32, 32)))


def test_eyenet_loss_examples():
    rng = np.random.default_rng(4)
    angles = rng.uniform(-0.4, 0.4, (2, 5, 2))
    pupil = rng.uniform(2, 4, (2, 5))
    valid = np.ones((2, 5), bool)
    perfect = EyeNetOutput(ad.as_var(angles), ad.as_var(pupil))
    assert float(eyenet_loss(perfect, angles, pupil, valid).value) < 1e-5
    off = EyeNetOutput(ad.as_var(angles), ad.as_var(pupil + 0.5))
    assert float(eyenet_loss(off, angles, pupil, valid).value) == pytest.approx(0.5, abs=1e-5)
    with pytest.raises(EmptyBatchError):
        eyenet_loss(perfect, angles, pupil, np.zeros((2, 5), bool))


def test_eyenet_loss_loop_oracle():
    rng = np.random.default_rng(5)
    pa, ta = rng.uniform(-0.4, 0.4, (3, 4, 2)), rng.uniform(-0.4, 0.4, (3, 4, 2))
    pp, tp = rng.uniform(2, 4, (3, 4)), rng.uniform(2, 4, (3, 4))
    valid = rng.uniform(size=(3, 4)) > 0.3
    valid[0, 0] = True
    g, p, n = 0.0, 0.0, 0
    for i in range(3):
        for j in range(4):
            if valid[i, j]:
                g += angular_error(angles_to_vector(pa[i, j]), angles_to_vector(ta[i, j]))
                p += abs(pp[i, j] - tp[i, j])
                n += 1
    got = float(eyenet_loss(EyeNetOutput(ad.as_var(pa), ad.as_var(pp)), ta, tp, valid, 2.0, 0.5).value)
    assert got == pytest.approx(2.0 * g / n + 0.5 * p / n, abs=1e-9)


def test_eyes_to_initial_pog(screen):
    origins = np.array([[3.15, 15.0, 60.0], [-3.15, 15.0, 60.0]])
    pog = eyes_to_initial_pog(np.zeros(2), np.zeros(2), origins, screen)
    # frontal rays land straight below the camera (top-centre of the display)
    np.testing.assert_allclose(pog, [27.65, 15.0], atol=1e-12)
    g = np.array([0.1, -0.2])
    single = intersect_rays(origins[0], angles_to_vector(g), screen)
    np.testing.assert_allclose(eyes_to_initial_pog(g, g, np.stack([origins[0]] * 2), screen), single, atol=1e-12)
    gl, gr = np.array([-0.2, 0.05]), np.array([-0.25, -0.1])
    hl = intersect_rays(origins[0], angles_to_vector(gl), screen)
    hr = intersect_rays(origins[1], angles_to_vector(gr), screen)
    np.testing.assert_allclose(eyes_to_initial_pog(gl, gr, origins, screen), (hl + hr) / 2, atol=1e-12)


def test_eyes_to_initial_pog_fallback(screen):
    origins = np.array([[3.15, 15.0, 60.0], [-3.15, 15.0, 60.0]])
    away = np.array([0.0, np.pi])               # points away from the screen
    ok = np.array([-0.1, 0.1])
    got = eyes_to_initial_pog(away, ok, origins, screen)
    np.testing.assert_allclose(got, intersect_rays(origins[1], angles_to_vector(ok), screen), atol=1e-12)
    with pytest.raises(Exception):
        eyes_to_initial_pog(away, away, origins, screen)
    assert np.all(np.isnan(eyes_to_initial_pog(away, away, origins, screen, strict=False)))


def test_refinenet_zero_decoder_gives_centroid(screen):
    net = _refinenet()
    net.dec1.w.value[...] = 0.0
    net.dec1.b.value[...] = 0.0
    rng = np.random.default_rng(6)
    frames = rng.uniform(0, 1, (2, 3, 1, 16, 32))
    init = rng.uniform(5, 30, (2, 3, 2))
    out = net(frames, init)
    assert np.all(out.logits.value == 0.0)
    np.testing.assert_allclose(out.pog_cm.value, np.broadcast_to([27.65, 15.55], (2, 3, 2)), atol=1e-9)


@pytest.mark.parametrize("cell", ["rnn", "lstm", "gru"])
def test_refinenet_is_causal(cell):
    net = _refinenet(cell)
    rng = np.random.default_rng(7)
    frames = rng.uniform(0, 1, (1, 5, 1, 16, 32))
    init = rng.uniform(5, 30, (1, 5, 2))
    base = net(frames, init).pog_cm.value
    f2, i2 = frames.copy(), init.copy()
    f2[:, 3:] = rng.uniform(0, 1, f2[:, 3:].shape)
    i2[:, 3:] += 5.0
    out = net(f2, i2).pog_cm.value
    np.testing.assert_array_equal(out[:, :3], base[:, :3])
    assert not np.allclose(out[:, 3:], base[:, 3:])


def test_refinenet_skip_parameter_delta():
    with_skip = _refinenet(skip=True).num_parameters()
    without = _refinenet(skip=False).num_parameters()
    assert with_skip - without == RefineNet.skip_parameter_delta(SMALL_REF)
    full = RefineNetConfig()
    delta = RefineNet(full, Rng(0)).num_parameters() - RefineNet(
        RefineNetConfig(skip_connections=False), Rng(0)).num_parameters()
    assert delta == RefineNet.skip_parameter_delta(full) == 9 * (16 * 16 + 8 * 8)


def test_model_sizes_within_budget():
    assert EyeNet(EyeNetConfig(variant="lstm"), Rng(0)).num_parameters() <= 200_000
    assert RefineNet(RefineNetConfig(cell="lstm"), Rng(0)).num_parameters() <= 300_000


def test_refined_pog_inside_screen(screen):
    net = _refinenet("none", dtype=np.float32)
    for p in net.parameters():
        p.value *= 20
    rng = np.random.default_rng(8)
    out = net(rng.uniform(0, 1, (3, 2, 1, 16, 32)), rng.uniform(-20, 80, (3, 2, 2))).pog_cm.value
    assert np.all(out >= 0) and np.all(out[..., 0] <= screen.width_cm) and np.all(out[..., 1] <= screen.height_cm)


def test_refinenet_no_screen_ignores_frames():
    cfg = RefineNetConfig(**{**SMALL_REF.to_dict(), "screen_input": False})
    net = RefineNet(cfg, Rng(0), dtype=np.float64)
    rng = np.random.default_rng(9)
    init = rng.uniform(5, 30, (1, 3, 2))
    a = net(rng.uniform(0, 1, (1, 3, 1, 16, 32)), init).pog_cm.value
    b = net(rng.uniform(0, 1, (1, 3, 1, 16, 32)), init).pog_cm.value
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("case", gradsuite.model_cases(0), ids=[c[0] for c in gradsuite.model_cases(0)])
def test_full_model_gradients(case):
    name, f, params = case
    res = gradsuite.run_case(name, f, params, max_coords=8)
    assert res.passed(), res


def test_augmentation_sigma_zero_is_identity():
    g = np.random.default_rng(10).uniform(-0.3, 0.3, (4, 30, 2, 2))
    rng = Rng(1)
    out = tr.augment_sequences(g, rng, 0.0)
    assert out.tobytes() == g.tobytes() and rng.counter == 0


def test_augmentation_one_kappa_per_sequence():
    g = np.random.default_rng(11).uniform(-0.3, 0.3, (3, 30, 2, 2))
    out = tr.augment_sequences(g, Rng(2), np.radians(3))
    for i in range(3):
        ang = angular_error(angles_to_vector(out[i]), angles_to_vector(g[i]))
        np.testing.assert_allclose(ang, ang[0, 0], atol=1e-9)


def test_refinenet_training_replays_bit_exactly(tiny_splits, screen):
    cfg = RefineNetConfig(**{**SMALL_REF.to_dict(), "grid_w": 128, "grid_h": 72, "epochs": 2, "batch_size": 4})
    runs = [tr.train_refinenet(tiny_splits["train"], cfg, Rng(3), val=tiny_splits["val"], screen=screen)
            for _ in range(2)]
    assert runs[0].step_losses == runs[1].step_losses
    for (k, a), (_, b) in zip(runs[0].model.state_dict().items(), runs[1].model.state_dict().items()):
        assert a.tobytes() == b.tobytes(), k
    assert [r.csv() for r in runs[0].history] == [r.csv() for r in runs[1].history]
    assert len(runs[0].history) == 2


def test_refinenet_keeps_best_validation_epoch(tiny_splits, screen):
    base = {**SMALL_REF.to_dict(), "grid_w": 128, "grid_h": 72, "epochs": 4, "batch_size": 2, "lr": 0.05}
    val = tiny_splits["val"]
    val_cm = tr.initial_pog(tr.initial_gaze(val), val.origins, screen)
    for keep in (True, False):
        cfg = RefineNetConfig(**{**base, "keep_best_val": keep})
        res = tr.train_refinenet(tiny_splits["train"], cfg, Rng(5), val=val, screen=screen)
        errs = [h.angular_deg for h in res.history]
        got = tr.refinenet_eval(res.model, val, val_cm, screen)[0]
        if keep:
            assert res.best_epoch == int(np.argmin(errs)) + 1
            assert got == min(errs)
        else:
            assert res.best_epoch == 0 and got == errs[-1]


def test_eyenet_training_loss_decreases_and_shares_order(tiny_splits, monkeypatch):
    seen = {}
    real = tr._fold_eyes

    def spy(split, index):
        seen.setdefault(spy.tag, []).append(tuple(int(i) for i in index))
        return real(split, index)

    monkeypatch.setattr(tr, "_fold_eyes", spy)
    results = {}
    for variant in ("none", "gru"):
        spy.tag = variant
        cfg = EyeNetConfig(image_size=32, variant=variant, channels=(4, 8, 8, 8), hidden=16, epochs=6,
                           batch_size=3, decay_interval=3.0)
        results[variant] = tr.train_eyenet(tiny_splits["train"], cfg, Rng(4))
    assert seen["none"] == seen["gru"]
    for res in results.values():
        first, last = np.mean(res.step_losses[:3]), np.mean(res.step_losses[-3:])
        assert last < first


def test_eyenet_training_replays(tiny_splits):
    cfg = EyeNetConfig(image_size=32, channels=(2, 4, 4, 4), hidden=4, epochs=1, batch_size=4)
    a = tr.train_eyenet(tiny_splits["train"], cfg, Rng(5))
    b = tr.train_eyenet(tiny_splits["train"], cfg, Rng(5))
    assert a.step_losses == b.step_losses


def test_save_load_model(tmp_path, screen):
    net = _refinenet(dtype=np.float32)
    path = tr.save_model(tmp_path / "r.gzck", net)
    back = tr.load_model(path, screen)
    assert back.cfg == net.cfg
    for k, v in net.state_dict().items():
        assert back.state_dict()[k].tobytes() == v.tobytes()
    eye = _eyenet("lstm", dtype=np.float32)
    back = tr.load_model(tr.save_model(tmp_path / "e.gzck", eye))
    assert isinstance(back, EyeNet) and back.cfg.variant == "lstm"
