"""Central finite-difference checks of every analytic gradient (64-bit)."""

import time

import numpy as np

from . import sparse as sp
from .instance import dice_loss
from .iuv import N_PARTS, AnnotatedPoint, loss_I, loss_smooth, loss_UV

STEP = 1e-6
TOLERANCE = 1e-4


def numeric_grad(f, x, h=STEP):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g.flat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def _random_sparse(rng, h, w, c, density=0.6):
    fg = (rng.random((h, w)) < density).astype(np.uint8)
    fg[rng.integers(h), rng.integers(w)] = 1
    return sp.to_sparse(rng.standard_normal((c, h, w)), fg)


def check_ssc(rng):
    s = _random_sparse(rng, 5, 5, 2)
    conv = sp.SscWeights(rng.standard_normal((3, 3, 2, 2)), rng.standard_normal(2))
    up = rng.standard_normal((s.n_sites, 2))
    gx, gw = sp.ssc_backward(s, conv, up)
    x = s.values.copy()
    f = lambda: float(np.sum(sp.ssc_forward(s.with_values(x), conv).values * up))
    errs = [rel_error(gx.values, numeric_grad(f, x))]
    f = lambda: float(np.sum(sp.ssc_forward(s, conv).values * up))
    errs.append(rel_error(gw.kernel, numeric_grad(f, conv.kernel)))
    errs.append(rel_error(gw.bias, numeric_grad(f, conv.bias)))
    return max(errs)


def random_assignment(rng, s, n_inst):
    labels = rng.integers(0, n_inst, s.n_sites)
    labels[:n_inst] = np.arange(n_inst)  # no empty instance
    return sp.InstanceAssignment(labels, n_inst)


def check_ian(rng):
    n_inst = int(rng.integers(1, 4))
    s = _random_sparse(rng, 5, 5, 3, density=0.8)
    while s.n_sites < 2 * n_inst:
        s = _random_sparse(rng, 5, 5, 3, density=0.8)
    assign = random_assignment(rng, s, n_inst)
    p = sp.IanParams(rng.standard_normal(3), rng.standard_normal(3), 1e-5)
    up = rng.standard_normal((s.n_sites, 3))
    gx, gg, gb = sp.ian_backward(s, assign, p, up)
    x = s.values.copy()
    f = lambda: float(np.sum(sp.ian_forward(s.with_values(x), assign, p).values * up))
    errs = [rel_error(gx.values, numeric_grad(f, x))]
    f = lambda: float(np.sum(sp.ian_forward(s, assign, p).values * up))
    errs.append(rel_error(gg, numeric_grad(f, p.gamma)))
    errs.append(rel_error(gb, numeric_grad(f, p.beta)))
    return max(errs)


def check_dice(rng):
    shape = (int(rng.integers(2, 6)), int(rng.integers(2, 6)))
    pred = rng.uniform(0.05, 0.95, shape)
    gt = (rng.random(shape) < 0.5).astype(np.float64)
    _, g = dice_loss(pred, gt)
    return rel_error(g, numeric_grad(lambda: dice_loss(pred, gt)[0], pred))


def random_points(rng, h, w, n):
    return [
        AnnotatedPoint(0, int(rng.integers(w)), int(rng.integers(h)), int(rng.integers(1, N_PARTS)),
                       float(rng.random()), float(rng.random()))
        for _ in range(n)
    ]


def _field(rng, h=3, w=4, scale=1.0):
    return rng.standard_normal((3 * N_PARTS, h, w)) * scale


def check_loss_I(rng):
    c = _field(rng, scale=2.0)
    pts = random_points(rng, 3, 4, int(rng.integers(1, 6)))
    _, g = loss_I(c, pts)
    return rel_error(g, numeric_grad(lambda: loss_I(c, pts)[0], c))


def check_loss_UV(rng):
    c = _field(rng, scale=1.5)
    pts = random_points(rng, 3, 4, int(rng.integers(1, 6)))
    _, g = loss_UV(c, pts)
    return rel_error(g, numeric_grad(lambda: loss_UV(c, pts)[0], c))


def check_loss_smooth(rng):
    c = _field(rng)
    masks = [(rng.random((3, 4)) < 0.5).astype(np.uint8) for _ in range(int(rng.integers(1, 4)))]
    _, g = loss_smooth(c, masks)
    return rel_error(g, numeric_grad(lambda: loss_smooth(c, masks)[0], c))


CHECKS = {
    "ssc": check_ssc,
    "ian": check_ian,
    "dice": check_dice,
    "loss_I": check_loss_I,
    "loss_UV": check_loss_UV,
    "loss_smooth": check_loss_smooth,
}


def run_suite(n_cases=50, seed=0, names=None):
    """Max relative error per gradient over ``n_cases`` random cases each."""
    report = {}
    for name in names or CHECKS:
        rng = np.random.default_rng([seed, list(CHECKS).index(name)])
        t = time.perf_counter()
        errs = [CHECKS[name](rng) for _ in range(n_cases)]
        report[name] = {
            "cases": n_cases,
            "max_rel_error": max(errs),
            "passed": max(errs) <= TOLERANCE,
            "seconds": time.perf_counter() - t,
        }
    return report
