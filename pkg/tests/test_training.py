import numpy as np
import pytest

from ddpose.scene import generate_scene
from ddpose.training import DivergenceError, FitConfig, fit_iuv, points_to_grid


@pytest.fixture(scope="module")
def scene():
    return generate_scene(0, 2, 0.3, 64)


def test_zero_learning_rate_gives_constant_trace(scene):
    trace = fit_iuv(scene, FitConfig(steps=5, lr=0.0)).trace
    assert len(trace) == 5 and len(set(trace)) == 1


def test_short_fit_is_deterministic_and_descends(scene):
    a = fit_iuv(scene, FitConfig(steps=20))
    b = fit_iuv(scene, FitConfig(steps=20))
    assert a.trace == b.trace
    assert a.trace[-1] < a.trace[0]


def test_components_recorded(scene):
    res = fit_iuv(scene, FitConfig(steps=2))
    li, luv, ls = res.components[0]
    assert res.trace[0] == pytest.approx(li + 10 * luv + ls)


def test_divergence_names_step(scene):
    with pytest.raises(DivergenceError) as e:
        fit_iuv(scene, FitConfig(steps=50, lr=1e4))
    assert e.value.step > 0 and "step" in str(e.value)


def test_points_map_to_quarter_grid(scene):
    pts = points_to_grid(scene.instances[0].points)
    assert all(0 <= p.x < 16 and 0 <= p.y < 16 for p in pts)
