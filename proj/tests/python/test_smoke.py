import numpy as np
import pytest

import metric_align as ma


def rotation(axis, angle):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def pose(r, t):
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = t
    return m


def test_scale_matches_closed_form():
    rng = np.random.default_rng(0)
    p_hat = rng.normal(size=(50, 3))
    p = 1.7 * p_hat + 0.01 * rng.normal(size=(50, 3))
    expected = np.sum(p_hat * p) / np.sum(p_hat * p_hat)
    assert ma.estimate_scale(p_hat, p) == pytest.approx(expected, rel=1e-12)


def test_scale_rejects_degenerate_input():
    with pytest.raises(ma.Error, match="DegenerateInput"):
        ma.estimate_scale(np.zeros((5, 3)), np.ones((5, 3)))


def test_relative_pose_composes():
    a = pose(rotation([1, 2, 3], 0.4), [0.1, -0.2, 0.8])
    q = pose(rotation([0, 1, 0], -0.9), [0.0, 0.1, 0.6])
    m = ma.relative_pose(a, q)
    np.testing.assert_allclose(a @ m, q, atol=1e-12)
    np.testing.assert_array_equal(ma.relative_pose(a, a), np.eye(4))


def test_add_is_translation_offset():
    pts = np.random.default_rng(1).normal(size=(100, 3))
    gt = pose(np.eye(3), [0, 0, 1])
    est = pose(np.eye(3), [0.003, 0, 1])
    assert ma.add(pts, gt, est) == pytest.approx(0.003, abs=1e-12)
    assert ma.adds(pts, gt, est) <= ma.add(pts, gt, est)


def test_rasterize_plane_depth():
    v = np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]], float)
    f = np.array([[0, 1, 2], [0, 2, 3]], np.int32)
    depth, mask = ma.rasterize(v, f, (100.0, 100.0, 32.0, 24.0, 64, 48), pose(np.eye(3), [0, 0, 2.5]))
    assert depth.shape == (48, 64)
    assert mask.all()
    np.testing.assert_array_equal(depth[mask], 2.5)


def test_generated_dataset_scores_perfectly_against_itself(tmp_path):
    n = ma.generate_dataset(tmp_path / "ds", scenes=1, seed=3, targets=2, occluders=2, cameras=3)
    assert n == 6
    summary = ma.evaluate(tmp_path / "ds")
    assert summary["ar"] == 1.0
