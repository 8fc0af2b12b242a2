import numpy as np
import pytest

from roadreg.core import PoseSE3, exp_so3
from roadreg.errors import NoCorrespondence
from roadreg.metrics import ground_distance_errors, locate_3d, pose_error
from synthscene import ground_marker_pairs


def rand_pose(rng):
    return PoseSE3(exp_so3(rng.uniform(-1.5, 1.5, 3)), rng.uniform(-5, 5, 3))


def test_identical_poses_zero():
    rng = np.random.default_rng(1)
    for _ in range(100):
        T = rand_pose(rng)
        e = pose_error(T, T)
        assert e.trans_err_m == 0
        assert e.rot_err_deg < 1e-9 and e.geodesic_deg < 1e-5


def test_translation_mean_abs():
    T = PoseSE3.identity()
    T2 = PoseSE3(np.eye(3), [0.3, 0, 0])
    assert pose_error(T2, T).trans_err_m == pytest.approx(0.1)
    # symmetric in the translation component
    assert pose_error(T, T2).trans_err_m == pytest.approx(0.1)


def test_pure_yaw_offset():
    T = PoseSE3.identity()
    T2 = PoseSE3(exp_so3([0, 0, np.radians(0.6)]), np.zeros(3))
    e = pose_error(T2, T)
    assert e.rot_err_deg == pytest.approx(0.2, abs=1e-9)  # mean of (0.6, 0, 0)
    assert e.geodesic_deg == pytest.approx(0.6, abs=1e-9)


def test_locate_3d_shaded(scene0):
    view = scene0["camera_view"]
    vs, us = np.nonzero(view.valid)
    P = locate_3d((us[0], vs[0]), view)
    assert np.array_equal(P, view.correspondence[vs[0], us[0]])


def test_locate_3d_hole_fallback(scene0):
    view = scene0["camera_view"]
    # a hole with a shaded pixel nearby
    from scipy import ndimage
    near = ndimage.binary_dilation(view.valid, iterations=2) & ~view.valid
    vs, us = np.nonzero(near)
    assert len(vs)
    P = locate_3d((us[0], vs[0]), view)
    assert np.isfinite(P).all()


def test_locate_3d_deep_hole_raises(scene0):
    view = scene0["camera_view"]
    from scipy import ndimage
    deep = ~ndimage.binary_dilation(view.valid, iterations=8)
    vs, us = np.nonzero(deep)
    assert len(vs)
    with pytest.raises(NoCorrespondence):
        locate_3d((us[0], vs[0]), view)


def test_distance_error_zero_and_formula():
    r = np.array([0.0])
    assert r[0] == 0.0  # d_bar == d gives r = 0 by construction
    # direct formula: 10 vs 10.5 -> 5%
    assert abs(10.5 - 10.0) / 10.0 == pytest.approx(0.05)


def test_ground_distance_exact_pose(scene0):
    pairs, gt = ground_marker_pairs(scene0)
    assert len(gt) >= 4
    de = ground_distance_errors(pairs, scene0["camera_view"], gt)
    assert de.max_pct < 0.5
    assert (de.r >= 0).all()


def test_distance_error_scale_consistent(scene0):
    pairs, gt = ground_marker_pairs(scene0)
    de1 = ground_distance_errors(pairs, scene0["camera_view"], gt)
    # scaling both the estimate and truth cancels in r; emulate by checking
    # r depends only on the ratio
    d_est = gt * (1 + de1.r * np.sign(np.ones_like(gt)))
    r2 = np.abs(d_est - gt) / gt
    assert np.allclose(np.sort(r2), np.sort(de1.r), atol=1e-12)


def test_distance_count_mismatch(scene0):
    pairs, gt = ground_marker_pairs(scene0)
    with pytest.raises(ValueError):
        ground_distance_errors(pairs, scene0["camera_view"], gt[:-1])
