import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddpose.iuv import (
    N_PARTS,
    U0,
    V0,
    AnnotatedPoint,
    LossWeights,
    iuv_summarize,
    loss_I,
    loss_smooth,
    loss_UV,
    render,
    total_loss,
)
from ddpose.tensor import ShapeError
from oracles import smooth_direct, softmax_ce_scalar


def _field(h=3, w=4, fill=0.0):
    return np.full((3 * N_PARTS, h, w), fill)


def pt(x, y, part, u=0.5, v=0.5):
    return AnnotatedPoint(0, x, y, part, u, v)


# ---------------------------------------------------------------- summarize


def test_summarize_background_everywhere():
    c = _field()
    c[0] = 5.0
    c[U0:] = 0.7
    part, u, v = iuv_summarize(c)
    assert np.all(part == 0) and np.all(u == 0) and np.all(v == 0)


def test_summarize_single_part_pixel():
    c = _field()
    c[0] = 1.0
    c[7, 1, 2] = 3.0
    c[U0 + 7, 1, 2] = 0.3
    c[V0 + 7, 1, 2] = 0.6
    part, u, v = iuv_summarize(c)
    assert (part[1, 2], u[1, 2], v[1, 2]) == (7, 0.3, 0.6)
    assert part.sum() == 7


def test_summarize_ties_pick_lowest_part():
    c = _field()
    c[3] = c[9] = 2.0
    assert np.all(iuv_summarize(c)[0] == 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_summarize_shift_invariant(seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((75, 3, 3))
    shifted = c.copy()
    shifted[:N_PARTS] += rng.uniform(-5, 5, (3, 3))  # one constant per pixel
    np.testing.assert_array_equal(iuv_summarize(c)[0], iuv_summarize(shifted)[0])


def test_render_channels():
    c = _field()
    c[24] = 1.0
    c[U0 + 24] = 0.25
    out = render(c, peak=2.0)
    assert out.shape == (3, 3, 4)
    assert np.all(out[0] == 2.0) and np.all(out[1] == 0.5)


def test_bad_field_shape():
    with pytest.raises(ShapeError):
        iuv_summarize(np.zeros((74, 2, 2)))


# ---------------------------------------------------------------- L_I


def test_loss_I_uniform_is_log25():
    loss, _ = loss_I(_field(), [pt(0, 0, 3), pt(2, 1, 17)])
    assert loss == pytest.approx(math.log(25), abs=1e-12)


def test_loss_I_confident_is_zero():
    c = _field()
    c[5, 1, 1] = 50.0
    assert loss_I(c, [pt(1, 1, 5)])[0] < 1e-20


def test_loss_I_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    c = rng.standard_normal((75, 3, 4)) * 3
    pts = [pt(0, 2, 4), pt(3, 0, 11)]
    expected = np.mean([softmax_ce_scalar(c[:N_PARTS, p.y, p.x].tolist(), p.part) for p in pts])
    assert loss_I(c, pts)[0] == pytest.approx(expected, abs=1e-12)


def test_loss_I_errors():
    with pytest.raises(ValueError, match="empty"):
        loss_I(_field(), [])
    with pytest.raises(ValueError, match="outside"):
        loss_I(_field(), [pt(4, 0, 1)])


def test_point_validation():
    with pytest.raises(ValueError):
        pt(0, 0, 0)
    with pytest.raises(ValueError):
        pt(0, 0, 25)
    with pytest.raises(ValueError):
        pt(0, 0, 1, u=1.5)


# ---------------------------------------------------------------- L_UV


def test_loss_UV_exact_is_zero():
    c = _field()
    c[U0 + 2, 0, 0], c[V0 + 2, 0, 0] = 0.3, 0.9
    assert loss_UV(c, [pt(0, 0, 2, 0.3, 0.9)])[0] == 0.0


def test_loss_UV_quadratic_branch():
    c = _field()
    c[U0 + 2, 0, 0], c[V0 + 2, 0, 0] = 0.8, 0.9
    assert loss_UV(c, [pt(0, 0, 2, 0.3, 0.9)])[0] == pytest.approx(0.0625, abs=1e-15)


def test_loss_UV_linear_branch():
    c = _field()
    c[U0 + 2, 0, 0], c[V0 + 2, 0, 0] = 2.5, 0.9
    assert loss_UV(c, [pt(0, 0, 2, 0.5, 0.9)])[0] == pytest.approx(0.75, abs=1e-15)


def test_loss_UV_ignores_other_parts():
    c = _field()
    c[U0 + 3] = 100.0
    c[V0 + 9] = -100.0
    assert loss_UV(c, [pt(1, 1, 2, 0.0, 0.0)])[0] == 0.0


# ---------------------------------------------------------------- L_s


def test_loss_smooth_constant_field_is_zero():
    rng = np.random.default_rng(1)
    masks = [(rng.random((4, 5)) < 0.5).astype(np.uint8) for _ in range(2)]
    assert loss_smooth(_field(4, 5, fill=2.5), masks)[0] == 0.0


def test_loss_smooth_step_edge_weighted_by_exp_minus_one():
    c = _field(4, 4)
    c[:, :, 2:] = 1.0
    m = np.zeros((4, 4), np.uint8)
    m[:, 2:] = 1
    loss = loss_smooth(c, [m])[0]
    # 4 rows x 75 channels of unit steps, one column position of three
    assert loss == pytest.approx(math.exp(-1) * 4 * 75 / (75 * 4 * 3), abs=1e-15)
    assert loss == pytest.approx(smooth_direct(c, [m]), abs=1e-12)


def test_loss_smooth_matches_direct_sum():
    rng = np.random.default_rng(2)
    c = rng.standard_normal((75, 3, 4))
    masks = [(rng.random((3, 4)) < 0.5).astype(np.uint8) for _ in range(3)]
    assert loss_smooth(c, masks)[0] == pytest.approx(smooth_direct(c, masks), abs=1e-12)


def test_loss_smooth_is_homogeneous():
    rng = np.random.default_rng(3)
    c = rng.standard_normal((75, 3, 4))
    masks = [np.ones((3, 4), np.uint8)]
    assert loss_smooth(2 * c, masks)[0] == pytest.approx(2 * loss_smooth(c, masks)[0], rel=1e-14)


def test_loss_smooth_errors():
    with pytest.raises(ValueError):
        loss_smooth(_field(), [])
    with pytest.raises(ShapeError):
        loss_smooth(_field(), [np.ones((2, 2))])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((75, 3, 3)) * 4
    pts = [pt(int(rng.integers(3)), int(rng.integers(3)), int(rng.integers(1, 25)),
              float(rng.random()), float(rng.random()))]
    assert loss_I(c, pts)[0] >= 0
    assert loss_UV(c, pts)[0] >= 0
    assert loss_smooth(c, [rng.integers(0, 2, (3, 3))])[0] >= 0


# ---------------------------------------------------------------- total


PARTS = dict(L_Mins=0.1, L_Mdp=0.1, L_I=1.0, L_UV=0.05, L_s=0.2)


def test_total_loss_worked_case():
    out = total_loss(PARTS)
    assert out["L_all"] == pytest.approx(2.7, abs=4 * np.finfo(float).eps)
    assert out["L_mask"] == pytest.approx(1.0, abs=1e-15)
    assert out["L_IUV"] == pytest.approx(1.7, abs=1e-15)
    assert out["L_fcos"] == 0.0


def test_total_loss_zero():
    assert total_loss({k: 0.0 for k in PARTS})["L_all"] == 0.0


def test_total_loss_linear_in_lambda2():
    base = total_loss(PARTS)["L_all"]
    doubled = total_loss(PARTS, LossWeights(lambda2=20.0))["L_all"]
    assert doubled - base == pytest.approx(PARTS["L_UV"] * 10.0, abs=1e-15)


def test_total_loss_uses_hook():
    assert total_loss(PARTS, l_fcos_hook=lambda: 0.5)["L_all"] == pytest.approx(3.2, abs=1e-15)


def test_total_loss_names_nan_component():
    with pytest.raises(FloatingPointError, match="L_UV"):
        total_loss({**PARTS, "L_UV": float("nan")})
    with pytest.raises(ValueError):
        LossWeights(lambda1=0.0)
