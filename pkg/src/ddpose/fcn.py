"""Sparse residual FCN of the global IUV branch, and its dense reference twin."""

from dataclasses import dataclass

import numpy as np

from . import sparse as sp
from .tensor import ShapeError, conv2d, conv1x1

IUV_CHANNELS = 75


@dataclass(eq=False)
class FcnParams:
    blocks: list  # n_blocks x [SubblockParams] * 3; the last block's third entry is unused
    head_w: np.ndarray  # (C, 75)
    head_b: np.ndarray  # (75,)

    @property
    def width(self):
        return self.blocks[0][0].conv.c_in

    def arrays(self):
        """Flat list of every trainable array, in a fixed order."""
        out = []
        for block in self.blocks:
            for p in block:
                out += [p.conv.kernel, p.conv.bias, p.norm.gamma, p.norm.beta]
        return out + [self.head_w, self.head_b]

    def replace(self, arrays):
        arrays = list(arrays)
        blocks = []
        for block in self.blocks:
            new = []
            for p in block:
                k, b, g, be = arrays[:4]
                del arrays[:4]
                new.append(sp.SubblockParams(sp.SscWeights(k, b), sp.IanParams(g, be, p.norm.eps)))
            blocks.append(new)
        return FcnParams(blocks, arrays[0], arrays[1])


def init_fcn(rng, width=32, n_blocks=3, dtype=np.float32, head_scale=0.1):
    std = np.sqrt(2.0 / (9 * width))
    blocks = [
        [
            sp.SubblockParams(
                sp.SscWeights((rng.standard_normal((3, 3, width, width)) * std).astype(dtype), np.zeros(width, dtype)),
                sp.IanParams.identity(width, dtype),
            )
            for _ in range(3)
        ]
        for _ in range(n_blocks)
    ]
    head_w = (rng.standard_normal((width, IUV_CHANNELS)) * head_scale / np.sqrt(width)).astype(dtype)
    return FcnParams(blocks, head_w, np.zeros(IUV_CHANNELS, dtype))


def _counts(assign):
    return sp._group_counts(assign.labels, assign.n_groups, assign.n_instances)


def sparse_fcn(s, assign, params, tape=None):
    """Residual blocks then the pointwise 75-channel head; returns per-site logits."""
    if s.channels != params.width:
        raise ShapeError(f"channel mismatch: tensor has {s.channels}, FCN expects {params.width}")
    counts = _counts(assign)
    x = s.values
    n = len(params.blocks)
    for i, block in enumerate(params.blocks):
        x = sp._block(x, s.neighbors, assign.labels, counts, block, i == n - 1, tape)
    if tape is not None:
        tape.entries.append(x)
    return s.with_values(x @ params.head_w + params.head_b)


def sparse_fcn_grad(s, assign, params, up):
    """Parameter gradients of :func:`sparse_fcn` given per-site logit gradients ``up``.

    Returns (grad w.r.t. input values, list of arrays aligned with ``params.arrays()``).
    """
    tape = sp._Tape()
    sparse_fcn(s, assign, params, tape)
    counts = _counts(assign)
    feats = tape.entries.pop()
    g_head_w = feats.T @ up
    g_head_b = up.sum(axis=0)
    g = up @ params.head_w.T
    n = len(params.blocks)
    block_grads = [None] * n
    pos = len(tape.entries)
    for i in range(n - 1, -1, -1):
        is_last = i == n - 1
        k = 2 if is_last else 3
        entries = tape.entries[pos - k:pos]
        pos -= k
        g, block_grads[i] = sp._block_grad(s.neighbors, assign.labels, counts, params.blocks[i], is_last, entries, g)
    flat = []
    for i, grads in enumerate(block_grads):
        for j, gp in enumerate(grads):
            if gp is None:  # unused third sub-block of the last block
                p = params.blocks[i][j]
                flat += [np.zeros_like(p.conv.kernel), np.zeros_like(p.conv.bias),
                         np.zeros_like(p.norm.gamma), np.zeros_like(p.norm.beta)]
            else:
                flat += [gp.conv.kernel, gp.conv.bias, gp.norm.gamma, gp.norm.beta]
    return g, flat + [g_head_w, g_head_b]


# ---------------------------------------------------------------- dense reference


def masked_instance_norm(x, group_map, gamma, beta, eps):
    """Dense instance norm where statistics come from each group's pixels.

    ``group_map`` is an (H, W) int map of group ids; -1 pixels are left at 0.
    """
    out = np.zeros_like(x)
    for g in np.unique(group_map):
        if g < 0:
            continue
        m = group_map == g
        v = x[:, m].T  # (pixels, C), raster order, summed row by row
        n = v.dtype.type(v.shape[0])
        xc = v - v.sum(axis=0) / n
        inv = 1.0 / np.sqrt((xc * xc).sum(axis=0) / n + eps)
        out[:, m] = ((xc * inv) * gamma + beta).T
    return out


def dense_fcn(x, group_map, params):
    """Dense conv / masked instance norm / ReLU stack mirroring :func:`sparse_fcn`.

    Matches the sparse path only when every pixel is active.
    """

    def sub(v, p):
        z = conv2d(v, p.conv.kernel, p.conv.bias)
        return np.maximum(masked_instance_norm(z, group_map, p.norm.gamma, p.norm.beta, p.norm.eps), 0)

    n = len(params.blocks)
    for i, (p1, p2, p3) in enumerate(params.blocks):
        r = sub(sub(x, p1), p2) + x
        x = r if i == n - 1 else sub(r, p3)
    return conv1x1(x, params.head_w, params.head_b)
