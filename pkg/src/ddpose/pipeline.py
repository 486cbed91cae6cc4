"""Direct (global sparse) pipeline and the top-down crop-per-person timing comparator."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import sparse as sp
from .fcn import dense_fcn, init_fcn, sparse_fcn
from .instance import (
    downsample_conv,
    generate_head_params,
    head_param_count,
    mask_head_apply,
    with_rel_coords,
)
from .scene import FEATURE_STRIDE
from .tensor import aggregate_pyramid, binarize, bilinear_resize, delta_kernel

MODES = ("sparse", "dense")
MASK_SOURCES = ("predicted", "gt")
NORMS = ("ian", "joint")


@dataclass(eq=False)
class PipelineWeights:
    up_convs: list  # 4 x (kernel (3, 3, C, C), bias)
    down: list  # 4 x (kernel, bias); C -> C_D then C_D -> C_D
    generator: tuple  # (A (P, C_D), b (P,))
    fcn: object  # FcnParams

    @property
    def c_d(self):
        return self.down[-1][0].shape[3]


def init_weights(seed, channels=32, c_d=8, dtype=np.float32):
    rng = np.random.default_rng(seed)

    def conv(c_in, c_out, std):
        return (rng.standard_normal((3, 3, c_in, c_out)) * std).astype(dtype), np.zeros(c_out, dtype)

    # near-identity aggregation keeps the pyramid's content readable at 1/4 scale
    up = []
    for _ in range(4):
        k, b = conv(channels, channels, 0.02)
        up.append((k + delta_kernel(channels, dtype=dtype), b))
    he = lambda c: np.sqrt(2.0 / (9 * c))
    down = [conv(channels, c_d, he(channels))] + [conv(c_d, c_d, he(c_d)) for _ in range(3)]
    n_params = head_param_count(c_d + 2)
    gen = ((rng.standard_normal((n_params, c_d)) * 0.3).astype(dtype), (rng.standard_normal(n_params) * 0.1).astype(dtype))
    return PipelineWeights(up, down, gen, init_fcn(rng, channels, dtype=dtype))


@dataclass(eq=False)
class DirectOutput:
    predictions: list  # InstancePrediction per scene instance
    iuv: np.ndarray  # (75, H/4, W/4)
    fg: np.ndarray
    assignment: object
    kept: list  # scene-instance indices that survived into the IUV branch


def instance_branch(x_agg, weights, locations):
    x_d = downsample_conv(x_agg, weights.down)
    c_in = x_d.shape[0] + 2
    preds = []
    for loc in locations:
        loc = (min(loc[0], x_d.shape[1] - 1), min(loc[1], x_d.shape[2] - 1))
        theta = generate_head_params(x_d, loc, weights.generator, c_in)
        preds.append(mask_head_apply(with_rel_coords(x_d, loc), theta, loc))
    return preds


def gt_mask_probs(scene, grid):
    return [bilinear_resize(inst.mask[None].astype(np.float32), *grid)[0] for inst in scene.instances]


def compact(assign, keep_background):
    """Drop instances that own no site and renumber the rest."""
    labels = assign.labels
    n = assign.n_instances
    used = [i for i in range(n) if np.any(labels == i)]
    remap = np.full(n + 1, -1)
    remap[used] = np.arange(len(used))
    remap[n] = len(used) if keep_background else -1
    return sp.InstanceAssignment(remap[labels], len(used)), used


def run_direct(scene, weights, mode="sparse", mask_source="predicted", norm="ian"):
    """Aggregate, predict instance masks, suppress background, run the sparse FCN.

    ``mode="dense"`` is the all-ones foreground ablation; ``mask_source="gt"``
    suppresses with ground-truth masks (training and benchmarking);
    ``norm="joint"`` normalizes all active sites together.
    """
    if mode not in MODES or mask_source not in MASK_SOURCES or norm not in NORMS:
        raise ValueError(f"bad mode/mask_source/norm: {mode}, {mask_source}, {norm}")
    x_agg = aggregate_pyramid(scene.pyramid, weights.up_convs)
    grid = x_agg.shape[1:]
    preds = instance_branch(x_agg, weights, [inst.location for inst in scene.instances])
    if mask_source == "gt":
        probs = gt_mask_probs(scene, grid)
    else:
        probs = [bilinear_resize(p.masks()[0], *grid)[0] for p in preds]
    keep = [i for i, p in enumerate(probs) if binarize(p).any()]
    probs = [probs[i] for i in keep]
    if mode == "dense":
        fg = np.ones(grid, np.uint8)
        s = sp.to_sparse(x_agg, fg)
    else:
        fg, s = sp.suppress_background(x_agg, [binarize(p) for p in probs])
    if norm == "joint":
        assign = sp.joint_assignment(s)
    else:
        assign, used = compact(sp.assign_instances(s, probs, allow_background=mode == "dense"), mode == "dense")
        keep = [keep[i] for i in used]
    logits = sparse_fcn(s, assign, weights.fcn)
    return DirectOutput(preds, sp.to_dense(logits, 0.0), fg, assign, keep)


def run_dense_reference(scene, weights, mask_source="predicted"):
    """Dense-conv reference for the all-ones foreground; group map built per pixel."""
    x_agg = aggregate_pyramid(scene.pyramid, weights.up_convs)
    grid = x_agg.shape[1:]
    if mask_source == "gt":
        probs = gt_mask_probs(scene, grid)
    else:
        preds = instance_branch(x_agg, weights, [inst.location for inst in scene.instances])
        probs = [bilinear_resize(p.masks()[0], *grid)[0] for p in preds]
    group = np.full(grid, -1)
    best = np.full(grid, -np.inf)
    for i, p in enumerate(probs):
        better = (p > 0.5) & (p > best)
        group[better] = i
        best[better] = p[better]
    group[group < 0] = len(probs)  # background pixels form their own group
    return dense_fcn(x_agg, group, weights.fcn)


def crop_box(scene_instance, grid):
    y0, x0, y1, x1 = scene_instance.bbox
    s = FEATURE_STRIDE
    box = (y0 // s, x0 // s, min(grid[0], -(-y1 // s)), min(grid[1], -(-x1 // s)))
    if box[2] <= box[0] or box[3] <= box[1]:
        raise ValueError(f"degenerate box for instance {scene_instance.id}")
    return box


def crop_and_resize(x, box, crop_size):
    y0, x0, y1, x1 = box
    if y1 <= y0 or x1 <= x0:
        raise ValueError("degenerate box")
    return bilinear_resize(x[:, y0:y1, x0:x1], crop_size, crop_size)


def run_topdown_sim(scene, weights, crop_size=56, parallel=False):
    """Per-person crops of the aggregated features, each through a dense FCN of the same depth."""
    x_agg = aggregate_pyramid(scene.pyramid, weights.up_convs)
    grid = x_agg.shape[1:]
    group = np.zeros((crop_size, crop_size), np.int64)

    def one(inst):
        crop = crop_and_resize(x_agg, crop_box(inst, grid), crop_size)
        return dense_fcn(crop, group, weights.fcn)

    if parallel:
        with ThreadPoolExecutor() as pool:
            return list(pool.map(one, scene.instances))
    return [one(inst) for inst in scene.instances]
