import numpy as np
import pytest

from conftest import gt_alpha, gt_rho, suite_views
from latentdepth.decoder import ShapeBasis, coarse_grid_basis
from latentdepth.objective import LossConfig, MultiViewObjective


def fd_check(obj, z, alpha, coords, h=1e-6, wrt="z"):
    frozen = obj.freeze(z, alpha)
    _, gz, ga = obj.evaluate(z, alpha, frozen)
    worst = 0.0
    for c in coords:
        zp, zm, ap, am = z.copy(), z.copy(), alpha.copy(), alpha.copy()
        if wrt == "z":
            zp[c] += h
            zm[c] -= h
            analytic = gz[c]
        else:
            ap[c] += h
            am[c] -= h
            analytic = ga[c]
        fd = (obj.evaluate(zp, ap, frozen, grad=False).total
              - obj.evaluate(zm, am, frozen, grad=False).total) / (2 * h)
        worst = max(worst, abs(analytic - fd) / max(abs(fd), 1e-6))
    return worst


@pytest.mark.parametrize("suite", ["a", "b", "c"])
@pytest.mark.parametrize("cfg", [LossConfig(), LossConfig(raw_sum=True),
                                 LossConfig(huber_photo=0.01, huber_depth=0.01)])
def test_gradient_matches_finite_differences(suite, cfg):
    views, depths = suite_views(suite)
    h, w = views[0].shape
    basis = coarse_grid_basis(h, w, (6, 8), 0.5)
    obj = MultiViewObjective(views, basis, cfg)
    rng = np.random.default_rng(0)
    z = rng.normal(0, 0.05, (len(views), basis.latent_dim))
    alpha = gt_alpha(depths) * rng.uniform(0.9, 1.1, len(views))
    coords = [(rng.integers(len(views)), rng.integers(basis.latent_dim)) for _ in range(5)]
    assert fd_check(obj, z, alpha, coords) < 1e-4
    assert fd_check(obj, z, alpha, range(len(views)), wrt="alpha") < 1e-4


def test_zero_loss_terms_at_ground_truth_codes():
    views, depths = suite_views("a")
    rho = gt_rho(depths)
    h, w = views[0].shape
    # view 0 at z=0, view 1 at z=|d| along the difference direction
    diff = rho[1] - rho[0]
    nrm = np.linalg.norm(diff)
    basis = ShapeBasis(rho[0], (diff / nrm)[None], "svd", (1, 1))
    obj = MultiViewObjective(views, basis, LossConfig(lambda_z=0.0))
    z = np.array([[0.0], [nrm]])
    alpha = gt_alpha(depths)
    loss = obj.evaluate(z, alpha, obj.freeze(z, alpha), grad=False)
    assert loss.alpha < 1e-20
    assert loss.depth < 1e-4  # bilinear resampling of a perspective plane
    assert loss.photo < 0.5
    worse = obj.evaluate(z * 0.9, alpha, obj.freeze(z * 0.9, alpha), grad=False)
    assert worse.total > loss.total


def test_masks_and_flags():
    views, depths = suite_views("b")
    h, w = views[0].shape
    obj = MultiViewObjective(views, coarse_grid_basis(h, w, (6, 8)))
    z = np.zeros((3, 48))
    frozen = obj.freeze(z, gt_alpha(depths))
    assert len(frozen.pairs) == 6
    for ps in frozen.pairs:
        m = ps.masks
        np.testing.assert_array_equal(m.combined, m.bounds & m.chirality & m.occlusion & m.viewing_angle)
        assert ps.n_kept == m.combined.sum() > 0


def test_rejects_mismatched_inputs():
    views, _ = suite_views("a")
    with pytest.raises(ValueError):
        MultiViewObjective(views[:1], coarse_grid_basis(48, 64, (6, 8)))
    with pytest.raises(ValueError):
        MultiViewObjective(views, coarse_grid_basis(40, 64, (6, 8)))
