import logging

import numpy as np
import pytest

from latentdepth import masking
from latentdepth.geometry import Intrinsics, backproject, estimate_normals


def occ(delta, valid=None, **kw):
    delta = np.asarray(delta, dtype=float)
    valid = np.ones(delta.shape, bool) if valid is None else valid
    return masking.occlusion_mask(delta, np.zeros_like(delta), valid, **kw)


def test_constant_delta_masks_nothing():
    assert occ(np.full(50, 0.3)).all()


def test_single_outlier_masked():
    delta = np.array([-0.1] * 8 + [0.0] * 3 + [0.1] * 8 + [-10.0])
    med, mad = masking.median_mad(delta)
    assert med == 0.0 and mad == pytest.approx(0.1)
    keep = occ(delta)
    assert keep.tolist() == [True] * 19 + [False]


def test_positive_outlier_kept_by_one_sided_rule():
    delta = np.array([-0.1] * 8 + [0.0] * 3 + [0.1] * 8 + [10.0])
    assert occ(delta).all()


def test_too_few_samples_warns_and_keeps(caplog):
    with caplog.at_level(logging.WARNING):
        keep = occ(np.full(20, -5.0), valid=np.zeros(20, bool))
    assert keep.all()
    assert "skipped" in caplog.text
    assert occ(np.r_[np.zeros(7), -100.0, 0.1 * np.arange(7)]).all()


def test_invalid_pixels_never_masked():
    delta = np.r_[np.random.default_rng(0).normal(size=40), -50.0]
    valid = np.ones(41, bool)
    valid[-1] = False
    assert occ(delta, valid)[-1]


def test_literal_rule_masks_majority():
    delta = np.random.default_rng(1).normal(size=500)
    assert np.mean(~occ(delta, rule="literal")) > 0.9
    with pytest.raises(ValueError):
        occ(delta, rule="both")


def test_shift_and_scale_invariance():
    rng = np.random.default_rng(2)
    Dj = rng.uniform(2, 5, 300)
    Dij = Dj + rng.normal(0, 0.05, 300)
    Dij[:20] += 2.0
    valid = np.ones(300, bool)
    base = masking.occlusion_mask(Dj, Dij, valid)
    assert not base[:20].any()
    np.testing.assert_array_equal(base, masking.occlusion_mask(Dj + 7.0, Dij, valid))
    for c in (0.1, 3.0, 40.0):
        np.testing.assert_array_equal(base, masking.occlusion_mask(c * Dj, c * Dij, valid))


def test_gaussian_false_removal_small():
    for seed in range(10):
        delta = np.random.default_rng(seed).normal(size=5000)
        assert np.mean(~occ(delta)) < 0.05


def plane_points(slant_deg, n=9):
    Q = Intrinsics(50, 50, n // 2, n // 2).normalized_grid(n, n)
    k = np.tan(np.radians(slant_deg))
    return backproject(Q, 5.0 / (1 - k * Q[..., 0]))


def test_viewing_angle_examples():
    X = plane_points(0.0)
    n, valid = estimate_normals(X)
    assert masking.viewing_angle_mask(n, X, valid).all()
    for slant, keep in ((86.0, False), (84.0, True)):
        X = plane_points(slant)
        n, valid = estimate_normals(X)
        assert masking.viewing_angle_mask(n, X, valid)[4, 4] == keep


def test_invalid_normals_masked():
    X = plane_points(0.0)
    n, valid = estimate_normals(X)
    valid[0, 0] = False
    assert not masking.viewing_angle_mask(n, X, valid)[0, 0]


def test_combine_examples():
    shape = (5, 6)
    t = np.ones(shape, bool)
    m = masking.combine(t, t, t, t)
    assert m.combined.all() and m.counts["kept"] == 30
    m = masking.combine(t, t, ~t, t)
    assert not m.combined.any() and m.counts["occluded"] == 30
    rng = np.random.default_rng(3)
    grids = [rng.random(shape) > 0.3 for _ in range(4)]
    m = masking.combine(*grids)
    oracle = np.array([[all(gr[i, j] for gr in grids) for j in range(6)] for i in range(5)])
    np.testing.assert_array_equal(m.combined, oracle)
    assert np.all(m.bounds[m.combined]) and np.all(m.chirality[m.combined])
    with pytest.raises(ValueError):
        masking.combine(t, t, t, np.ones((5, 5), bool))
