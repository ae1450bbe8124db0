import math
from types import SimpleNamespace

import numpy as np
import pytest

from gazerefine.errors import EmptyBatchError
from gazerefine.evaluation import experiments as ex
from gazerefine.evaluation.metrics import evaluate_estimates, improvement, pog_errors
from gazerefine.geometry import ScreenGeometry
from gazerefine.models import EyeNetConfig, RefineNetConfig
from gazerefine.simulator import SimConfig

SCREEN = ScreenGeometry()
FAST = RefineNetConfig(channels=(2, 3, 3), hidden=3, epochs=1, batch_size=4)


def _fake_split(n=10, t=6, seed=0):
    rng = np.random.default_rng(seed)
    valid = rng.uniform(size=(n, t)) > 0.2
    valid[:, 0] = True
    pog = np.stack([rng.uniform(2, 50, (n, t)), rng.uniform(2, 28, (n, t))], -1)
    origins = np.stack([np.array([[3.15, 15.0, 60.0], [-3.15, 15.0, 60.0]]) + rng.normal(0, 2, 3)
                        for _ in range(n)])
    kinds = np.array(["image", "video", "reading", "video", "image"] * (n // 5 + 1))[:n]
    return SimpleNamespace(names=[f"s{i}" for i in range(n)], validity=valid, pog_cm=pog, origins=origins,
                           kinds=kinds, observers=np.array([f"o{i % 3}" for i in range(n)]))


def _hand_angle(pred, true, mid):
    # screen (x, y) cm -> camera frame for the default pose, written out by hand
    def cam(p):
        return np.array([27.65 - p[0], p[1], 0.0])
    a, b = cam(pred) - mid, cam(true) - mid
    c = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def test_perfect_estimates_are_zero():
    sp = _fake_split()
    rep = evaluate_estimates(sp.pog_cm, sp, SCREEN)
    assert rep.overall.cm == 0 and rep.overall.px == 0 and rep.overall.angular_deg < 1e-6
    assert all(g.cm == 0 for g in rep.groups)


def test_one_cm_offset():
    sp = _fake_split()
    rep = evaluate_estimates(sp.pog_cm + [1.0, 0.0], sp, SCREEN)
    assert rep.overall.cm == pytest.approx(1.0, abs=1e-12)
    assert rep.overall.px == pytest.approx(1920 / 55.3, abs=1e-9)
    assert rep.overall.px == pytest.approx(34.72, abs=0.005)
    rep = evaluate_estimates(sp.pog_cm + [0.0, 1.0], sp, SCREEN)
    assert rep.overall.px == pytest.approx(1080 / 31.1, abs=1e-9)


def test_loop_oracle_ten_sequences():
    sp = _fake_split(10)
    pred = sp.pog_cm + np.random.default_rng(1).normal(0, 2, sp.pog_cm.shape)
    rep = evaluate_estimates(pred, sp, SCREEN, group_by=("kind", "observer"))
    degs, cms, pxs = [], [], []
    per_seq = {}
    for i in range(10):
        mid = sp.origins[i].mean(0)
        for k in range(6):
            if not sp.validity[i, k]:
                continue
            dx, dy = pred[i, k] - sp.pog_cm[i, k]
            degs.append(_hand_angle(pred[i, k], sp.pog_cm[i, k], mid))
            cms.append(math.hypot(dx, dy))
            pxs.append(math.hypot(dx * 1920 / 55.3, dy * 1080 / 31.1))
            per_seq.setdefault(i, []).append(cms[-1])
    assert rep.overall.angular_deg == pytest.approx(np.mean(degs), abs=1e-9)
    assert rep.overall.cm == pytest.approx(np.mean(cms), abs=1e-12)
    assert rep.overall.px == pytest.approx(np.mean(pxs), abs=1e-9)
    assert rep.overall.n == len(cms)
    for row, (i, vals) in zip(rep.per_sequence, sorted(per_seq.items())):
        assert row.name == f"s{i}" and row.cm == pytest.approx(np.mean(vals), abs=1e-12)
    names = [g.name for g in rep.groups]
    assert names == ["kind=image", "kind=reading", "kind=video", "observer=o0", "observer=o1", "observer=o2"]


def test_px_consistent_with_cm_through_geometry():
    rng = np.random.default_rng(2)
    true = rng.uniform(0, 50, (1000, 2))
    pred = true + rng.normal(0, 3, (1000, 2))
    deg, cm, px = pog_errors(pred, true, np.array([[3.0, 15.0, 60.0], [-3.0, 15.0, 60.0]]), SCREEN)
    d = pred - true
    np.testing.assert_allclose(cm, np.hypot(d[:, 0], d[:, 1]), atol=1e-12)
    np.testing.assert_allclose(px, np.hypot(*(d * SCREEN.px_per_cm).T), atol=1e-9)


def test_invalid_predictions_are_skipped_and_empty_raises():
    sp = _fake_split()
    pred = sp.pog_cm.copy()
    pred[0, 0] = np.nan
    rep = evaluate_estimates(pred, sp, SCREEN)
    assert rep.overall.n == sp.validity.sum() - 1
    sp.validity[:] = False
    with pytest.raises(EmptyBatchError):
        evaluate_estimates(pred, sp, SCREEN)


def test_improvement_formula():
    assert improvement(4.0, 3.0) == 25.0
    assert improvement(2.0, 3.0) == -50.0


def test_report_determinism():
    sp = _fake_split()
    pred = sp.pog_cm + 0.5
    a, b = evaluate_estimates(pred, sp, SCREEN), evaluate_estimates(pred, sp, SCREEN)
    assert a == b


# ------------------------------------------------------------------ runners

@pytest.fixture(scope="module")
def data(tiny_splits):
    return ex.ExperimentData(tiny_splits["train"], tiny_splits["val"], tiny_splits["test"], SCREEN)


@pytest.fixture(scope="module")
def cache():
    return ex.ModelCache()


def _check_improvements(report, base_col, new_col, imp_col):
    for r in report.rows:
        b, n, i = (r[report.header.index(c)] for c in (base_col, new_col, imp_col))
        assert i == pytest.approx((b - n) / b * 100, abs=1e-12)


def test_ablation_table(data, cache):
    rep = ex.run_ablation(data, FAST, cache=cache)
    assert len(rep.rows) == 1 + len(ex.ABLATION_ROWS)
    assert [tuple(bool(v) for v in r[1:4]) for r in rep.rows[1:]] == list(ex.ABLATION_ROWS)
    base = ex.baseline_report(data).overall
    assert rep.rows[0][0] == "baseline" and rep.rows[0][4] == base.angular_deg and rep.rows[0][7] == 0.0
    for r in rep.rows:
        assert r[7] == pytest.approx(improvement(base.angular_deg, r[4]), abs=1e-12)
        assert r[8] == pytest.approx(improvement(base.px, r[6]), abs=1e-12)
    assert any(c.name.endswith("screen_helps") for c in rep.checks)
    assert "check." in rep.summary_text()


def test_sweep_sigma_zero_matches_ablation_row(data, cache):
    abl = ex.run_ablation(data, FAST, rows=((True, False, True),), cache=cache)
    sweep = ex.run_kappa_sweep(data, (0.0, 1.0, 3.0), FAST, cache=cache)
    assert sweep.column("sigma_deg") == [0.0, 1.0, 3.0]
    assert sweep.rows[0][1] == abl.rows[1][4]
    assert [c.name for c in sweep.checks] == ["interior_optimum"]
    lines = ex.sweep_plot_data(sweep).splitlines()
    assert len(lines) == 4 and lines[1].split()[0] == "0.000"


def test_cross_stimuli_matrix(data, cache):
    rep = ex.run_cross_stimuli(data, FAST, cache=cache)
    assert len(rep.rows) == 9
    assert {(r[0], r[1]) for r in rep.rows} == {(a, b) for a in ex.KINDS for b in ex.KINDS}
    _check_improvements(rep, "baseline_deg", "angular_deg", "improvement_deg_pct")
    for kind in ex.KINDS:
        sub = data.where_kind(kind)
        model = cache.get(sub, FAST, 0, tag=f"kind={kind}")
        diag = [r for r in rep.rows if r[0] == kind and r[1] == kind][0]
        assert diag[3] == ex._evaluate_model(model, sub).overall.angular_deg
    assert len([c for c in rep.checks if c.name.startswith("diagonal_best")]) == 3


def test_baseline_comparison_table(data, cache, tmp_path):
    fit = ex.FitConfig(steps=30)
    rep = ex.run_baseline_comparison(data, FAST, cache=cache, fit_cfg=fit, out_dir=tmp_path)
    assert len(rep.rows) == 9
    assert {(r[0], r[1]) for r in rep.rows} == {(m, k) for m in ("scale_bias", "kappa", "refinement")
                                               for k in ex.KINDS}
    _check_improvements(rep, "baseline_px", "px", "improvement_px_pct")
    files = sorted(p.name for p in (tmp_path / "alignment_params").iterdir())
    assert len(files) == 2 * 3 * len(set(data.test.observers.tolist()))
    assert "kappa_pitch_rad" in (tmp_path / "alignment_params" / files[0]).read_text()
    rep.write(tmp_path)
    assert (tmp_path / "baseline_comparison.csv").read_text().startswith("method,kind,baseline_px")


def test_temporal_variants(tiny_splits):
    cfg = EyeNetConfig(image_size=32, channels=(2, 4, 4, 4), hidden=4, epochs=1, batch_size=4)
    rep = ex.run_temporal_variants(tiny_splits["train"], tiny_splits["val"], SCREEN, cfg)
    assert rep.column("variant") == ["none", "rnn", "lstm", "gru"]
    assert [c.name for c in rep.checks] == ["recurrent_beats_static"]


def test_cross_noise_matrix():
    sim = SimConfig(n_train=2, n_val=1, n_test=1, kinds=("image",), seconds_per_kind=3.0, eye_size=0)
    rep = ex.run_cross_noise(sim, FAST)
    assert len(rep.rows) == 16
    assert {r[0] for r in rep.rows} == set(ex.NOISE_REGIMES)
