import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazerefine import heatmap as hm
from gazerefine.errors import ContractViolation, DegenerateInputError, EmptyBatchError
from gazerefine.numerics import autodiff as ad
from gazerefine.numerics import grad_check, parameter


def test_gaussian_map_peak_and_sigma():
    g = hm.gaussian_map((64, 36), 4.0)
    assert g.shape == (72, 128)
    iy, ix = np.unravel_index(np.argmax(g), g.shape)
    assert (ix, iy) == (64, 36)
    assert g[36, 64] == 1.0
    assert g[36, 68] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert g[32, 64] == pytest.approx(math.exp(-0.5), abs=1e-15)
    with pytest.raises(ValueError):
        hm.gaussian_map((1, 1), 0.0)


def test_gaussian_map_symmetric_and_decreasing():
    g = hm.gaussian_map((64, 36), 3.0)
    sub = g[36 - 20:36 + 21, 64 - 20:64 + 21]
    np.testing.assert_array_equal(sub, sub[::-1, :])
    np.testing.assert_array_equal(sub, sub[:, ::-1])
    row = g[36, 64:]
    assert np.all(np.diff(row[row > 0]) < 0)


def test_gaussian_map_batched_matches_single():
    c = np.array([[10.3, 5.5], [100.0, 60.2]])
    b = hm.gaussian_map(c, 2.5)
    np.testing.assert_array_equal(b[1], hm.gaussian_map(c[1], 2.5))


def test_soft_argmax_single_cell_and_uniform():
    h = np.zeros((72, 128))
    h[20, 100] = 3.0
    np.testing.assert_allclose(hm.soft_argmax(h), [100.0, 20.0], atol=1e-12)
    z = np.full((72, 128), -np.inf)
    z[5, 7] = 0.0
    np.testing.assert_allclose(hm.soft_argmax_logits(z), [7.0, 5.0], atol=1e-12)
    np.testing.assert_allclose(hm.soft_argmax(np.ones((72, 128))), [63.5, 35.5], atol=1e-12)
    np.testing.assert_allclose(hm.soft_argmax_logits(np.zeros((72, 128))), [63.5, 35.5], atol=1e-12)
    with pytest.raises(DegenerateInputError):
        hm.soft_argmax(np.zeros((72, 128)))


def test_soft_argmax_gaussian_brute_force():
    g = hm.gaussian_map((64, 36), 4.0)
    ex = sum(g[y, x] * x for y in range(72) for x in range(128)) / g.sum()
    ey = sum(g[y, x] * y for y in range(72) for x in range(128)) / g.sum()
    got = hm.soft_argmax(g)
    np.testing.assert_allclose(got, [ex, ey], atol=1e-9)
    assert np.hypot(got[0] - 64, got[1] - 36) < 0.1


@settings(max_examples=200, deadline=None)
@given(st.floats(2.0, 8.0), st.floats(0, 1), st.floats(0, 1))
def test_soft_argmax_recovers_centre(sigma, u, v):
    cx = 3 * sigma + u * (127 - 6 * sigma)
    cy = 3 * sigma + v * (71 - 6 * sigma)
    got = hm.soft_argmax(hm.gaussian_map((cx, cy), sigma))
    assert np.hypot(got[0] - cx, got[1] - cy) < 0.1


def test_soft_argmax_inside_grid():
    rng = np.random.default_rng(0)
    z = rng.normal(scale=5.0, size=(16, 72, 128))
    c = hm.soft_argmax_logits(z)
    assert np.all((c[:, 0] >= 0) & (c[:, 0] <= 127) & (c[:, 1] >= 0) & (c[:, 1] <= 71))


def test_soft_argmax_gradient():
    rng = np.random.default_rng(1)
    w = np.array([0.3, -0.7])
    h = parameter(rng.uniform(0.1, 1.0, (6, 9)))
    res = grad_check(lambda: (hm.soft_argmax(h) * w).sum(), {"h": h})
    assert res.max_rel_error < 1e-4
    z = parameter(rng.normal(size=(2, 6, 9)))
    w2 = rng.normal(size=(2, 2))
    res = grad_check(lambda: (hm.soft_argmax_logits(z, temperature=0.7) * w2).sum(), {"z": z})
    assert res.max_rel_error < 1e-4


def _bce_loop(z, y):
    total = 0.0
    for zi, yi in zip(z.ravel(), y.ravel()):
        p = 1.0 / (1.0 + math.exp(-zi))
        total += -(yi * math.log(p) + (1 - yi) * math.log(1 - p))
    return total / z.size


def test_bce_oracles():
    rng = np.random.default_rng(2)
    z = rng.normal(scale=2.0, size=(2, 3, 5, 7))
    y = rng.uniform(size=z.shape)
    assert abs(hm.bce_heatmap_loss(z, y) - _bce_loop(z, y)) < 1e-10
    assert hm.bce_heatmap_loss(np.zeros((4, 4)), np.zeros((4, 4))) == pytest.approx(math.log(2), abs=1e-15)
    t = rng.uniform(0.05, 0.95, (5, 5))
    entropy = float(np.mean(-(t * np.log(t) + (1 - t) * np.log(1 - t))))
    at_min = hm.bce_heatmap_loss(np.log(t / (1 - t)), t)
    assert at_min == pytest.approx(entropy, abs=1e-12)
    assert hm.bce_heatmap_loss(np.log(t / (1 - t)) + 0.1, t) > at_min
    with pytest.raises(ContractViolation):
        hm.bce_heatmap_loss(z, y + 1.0)


def test_bce_validity_mask():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(2, 3, 4, 5))
    y = rng.uniform(size=z.shape)
    valid = np.array([[True, False, True], [False, False, True]])
    want = np.mean([_bce_loop(z[i, j], y[i, j]) for i in range(2) for j in range(3) if valid[i, j]])
    assert abs(hm.bce_heatmap_loss(z, y, valid) - want) < 1e-10
    with pytest.raises(EmptyBatchError):
        hm.bce_heatmap_loss(z, y, np.zeros((2, 3), bool))


def test_mse_pog():
    assert hm.mse_pog_loss(np.ones((3, 2)), np.ones((3, 2))) == 0.0
    assert hm.mse_pog_loss(np.array([[3.0, 4.0]]), np.zeros((1, 2))) == 25.0
    rng = np.random.default_rng(4)
    p, t = rng.normal(size=(4, 6, 2)), rng.normal(size=(4, 6, 2))
    t[0, 0] = np.nan          # invalid labels may be undefined
    valid = rng.uniform(size=(4, 6)) > 0.3
    valid[0, 0] = False
    valid[1, 1] = True
    sq = [(p[i, j, 0] - t[i, j, 0]) ** 2 + (p[i, j, 1] - t[i, j, 1]) ** 2
          for i in range(4) for j in range(6) if valid[i, j]]
    assert abs(hm.mse_pog_loss(p, t, valid) - sum(sq) / len(sq)) < 1e-12
    with pytest.raises(EmptyBatchError):
        hm.mse_pog_loss(p, t, np.zeros((4, 6), bool))


def test_refinenet_loss_weighting():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(2, 5, 6))
    y = rng.uniform(size=z.shape)
    p, t = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    l_pog, l_xe = hm.mse_pog_loss(p, t), hm.bce_heatmap_loss(z, y)
    total = hm.refinenet_loss((z, p), (y, t))
    assert total == pytest.approx(0.001 * l_pog + 1.0 * l_xe, abs=1e-14)
    assert hm.refinenet_loss((z, p), (y, t), gamma_pog=0.0) == pytest.approx(l_xe, abs=1e-15)
    assert hm.refinenet_loss((z, p), (y, t), gamma_pog=0.5, gamma_xe=2.0) == pytest.approx(0.5 * l_pog + 2 * l_xe)
    assert hm.refinenet_loss((z, p), (y, t), gamma_pog=0.0, gamma_xe=0.0) == 0.0


def test_loss_gradients():
    rng = np.random.default_rng(6)
    z = parameter(rng.normal(size=(2, 5, 6)))
    y = rng.uniform(size=(2, 5, 6))
    p = parameter(rng.normal(size=(2, 2)))
    t = rng.normal(size=(2, 2))
    valid = np.array([True, False])
    assert grad_check(lambda: hm.bce_heatmap_loss(z, y, valid), {"z": z}).max_rel_error < 1e-4
    assert grad_check(lambda: hm.mse_pog_loss(p, t, valid), {"p": p}).max_rel_error < 1e-4
    res = grad_check(lambda: hm.refinenet_loss((z, p), (y, t)), {"z": z, "p": p})
    assert res.max_rel_error < 1e-4


def _kl_loop(p, q, eps=1e-8):
    qf = np.maximum(q, eps)
    qf = qf / qf.sum()
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p.ravel(), qf.ravel()) if pi > 0)


def test_kl_oracles():
    rng = np.random.default_rng(7)
    p = rng.uniform(size=(6, 8))
    p /= p.sum()
    assert hm.kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)
    delta = np.zeros((6, 8))
    delta[2, 3] = 1.0
    assert hm.kl_divergence(delta, np.full((6, 8), 1 / 48)) == pytest.approx(math.log(48), abs=1e-12)
    q = rng.uniform(size=(6, 8))
    q[0, :3] = 0.0
    q /= q.sum()
    assert abs(hm.kl_divergence(p, q) - _kl_loop(p, q)) < 1e-10
    with pytest.raises(ContractViolation):
        hm.kl_divergence(p * 2, q)


def test_kl_nonnegative_random_pairs():
    rng = np.random.default_rng(8)
    for _ in range(200):
        p = rng.dirichlet(np.ones(30)).reshape(5, 6)
        q = rng.dirichlet(np.ones(30)).reshape(5, 6)
        assert hm.kl_divergence(p, q) > 0


def test_kl_gradient():
    rng = np.random.default_rng(9)
    q = rng.dirichlet(np.ones(20)).reshape(4, 5)
    logits = parameter(rng.normal(size=(4, 5)))

    def f():
        prob = ad.softmax(ad.reshape(logits, (20,)))
        return hm.kl_divergence(ad.reshape(prob, (4, 5)), q)

    assert grad_check(f, {"z": logits}).max_rel_error < 1e-4
