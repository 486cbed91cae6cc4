import numpy as np
import pytest

from ddpose.iuv import iuv_summarize
from ddpose.pipeline import (
    crop_and_resize,
    crop_box,
    init_weights,
    run_dense_reference,
    run_direct,
    run_topdown_sim,
)
from ddpose.scene import generate_scene


@pytest.fixture(scope="module")
def scene():
    return generate_scene(0, 3, 0.3, 64)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("source", ["predicted", "gt"])
def test_all_ones_mode_matches_dense_reference(seed, source):
    sc = generate_scene(seed, 1 + seed, 0.3, 64)
    w = init_weights(seed)
    out = run_direct(sc, w, mode="dense", mask_source=source)
    assert out.fg.all()
    assert np.abs(out.iuv - run_dense_reference(sc, w, source)).max() <= 1e-6


def test_zero_head_gives_background(scene):
    w = init_weights(1)
    w.fcn.head_w[:] = 0
    w.fcn.head_b[:] = 0
    part, u, v = iuv_summarize(run_direct(scene, w, mask_source="gt").iuv)
    assert np.all(part == 0) and np.all(u == 0) and np.all(v == 0)


def test_direct_is_deterministic(scene):
    a = run_direct(scene, init_weights(2))
    b = run_direct(scene, init_weights(2))
    assert a.iuv.tobytes() == b.iuv.tobytes()
    assert [p.score for p in a.predictions] == [p.score for p in b.predictions]


def test_sparse_output_is_zero_off_foreground(scene):
    out = run_direct(scene, init_weights(3), mask_source="gt")
    assert out.iuv.shape == (75, 16, 16)
    assert not out.iuv[:, out.fg == 0].any()
    assert out.kept == [0, 1, 2]
    assert len(out.predictions) == 3


def test_joint_norm_mode_runs(scene):
    out = run_direct(scene, init_weights(4), mask_source="gt", norm="joint")
    assert out.assignment.n_instances == 1
    with pytest.raises(ValueError):
        run_direct(scene, init_weights(4), mode="other")


def test_topdown_one_crop_per_instance(scene):
    w = init_weights(5)
    crops = run_topdown_sim(generate_scene(0, 1, 0.2, 64), w, crop_size=20)
    assert len(crops) == 1 and crops[0].shape == (75, 20, 20)
    crops = run_topdown_sim(scene, w, crop_size=20)
    assert len(crops) == 3
    par = run_topdown_sim(scene, w, crop_size=20, parallel=True)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(crops, par))


def test_constant_crop():
    x = np.full((2, 10, 10), 1.25, np.float32)
    assert np.all(crop_and_resize(x, (2, 3, 7, 9), 8) == 1.25)
    with pytest.raises(ValueError):
        crop_and_resize(x, (3, 3, 3, 9), 8)


def test_crop_box_on_feature_grid(scene):
    for inst in scene.instances:
        y0, x0, y1, x1 = crop_box(inst, (16, 16))
        assert 0 <= y0 < y1 <= 16 and 0 <= x0 < x1 <= 16
