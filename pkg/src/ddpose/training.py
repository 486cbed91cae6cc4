"""Plain gradient-descent fit of the global IUV branch on one scene."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import sparse as sp
from .fcn import sparse_fcn, sparse_fcn_grad
from .iuv import AnnotatedPoint, LossWeights, loss_I, loss_smooth, loss_UV
from .pipeline import gt_mask_probs, init_weights
from .scene import FEATURE_STRIDE
from .tensor import aggregate_pyramid, binarize

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class DivergenceError(FloatingPointError):
    def __init__(self, step, value):
        super().__init__(f"fit diverged at step {step}: L_IUV = {value}")
        self.step = step
        self.value = value


@dataclass
class FitConfig:
    steps: int = 200
    lr: float = 0.1
    seed: int = 0
    norm: str = "ian"
    weights: LossWeights = field(default_factory=LossWeights)
    dtype: type = np.float32


@dataclass(eq=False)
class FitResult:
    trace: list  # L_IUV before each update
    components: list  # (L_I, L_UV, L_s) before each update
    params: object


def points_to_grid(points, stride=FEATURE_STRIDE):
    return [AnnotatedPoint(p.instance_id, p.x // stride, p.y // stride, p.part, p.u, p.v) for p in points]


def fit_iuv(scene, cfg=FitConfig()):
    """Train the sparse FCN and IAN affine params against the scene's annotated points.

    Background suppression and IAN regions use the ground-truth instance masks.
    Returns the per-step L_IUV trace.
    """
    w = init_weights(cfg.seed, channels=scene.pyramid[0].shape[0], dtype=cfg.dtype)
    pyramid = [lvl.astype(cfg.dtype) for lvl in scene.pyramid]
    x_agg = aggregate_pyramid(pyramid, w.up_convs)
    grid = x_agg.shape[1:]
    probs = gt_mask_probs(scene, grid)
    masks = [binarize(p) for p in probs]
    fg, s = sp.suppress_background(x_agg, masks)
    if cfg.norm == "joint":
        assign = sp.joint_assignment(s)
    else:
        assign = sp.assign_instances(s, probs)
    points = points_to_grid([p for inst in scene.instances for p in inst.points])
    lw = cfg.weights
    params = w.fcn
    rows, cols = s.coords[:, 0], s.coords[:, 1]
    trace, comps = [], []
    for step in range(cfg.steps + 1):
        logits = sparse_fcn(s, assign, params)
        c = sp.to_dense(logits, 0.0)
        li, gi = loss_I(c, points)
        luv, guv = loss_UV(c, points)
        ls, gs = loss_smooth(c, masks)
        total = li + lw.lambda2 * luv + lw.lambda3 * ls
        if not np.isfinite(total) or total > DIVERGENCE_LIMIT:
            raise DivergenceError(step, total)
        if step == cfg.steps:
            break
        trace.append(total)
        comps.append((li, luv, ls))
        grad = gi + lw.lambda2 * guv + lw.lambda3 * gs
        up = grad[:, rows, cols].T.astype(cfg.dtype)
        _, grads = sparse_fcn_grad(s, assign, params, up)
        if cfg.lr:
            params = params.replace([p - cfg.lr * g for p, g in zip(params.arrays(), grads)])
        if step % 50 == 0:
            log.debug("step %d L_IUV %.5f (I %.4f UV %.4f s %.4f)", step, total, li, luv, ls)
    return FitResult(trace, comps, params)
