"""Site-list sparse tensors and the layers of the sparse residual FCN.

A :class:`SparseTensor` keeps its active sites in lexicographic (h, w) order;
every layer here maps a site set onto itself (submanifold rule), so the 3x3
neighbour table is computed once and carried along with the values.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .tensor import ShapeError, as_dense

# kernel tap k = 3 * kh + kw sits at offset (kh - 1, kw - 1)
OFFSETS = [(kh - 1, kw - 1) for kh in range(3) for kw in range(3)]


@dataclass(frozen=True, eq=False)
class SparseTensor:
    height: int
    width: int
    coords: np.ndarray  # (N, 2) int64, (h, w) rows, strictly increasing
    values: np.ndarray  # (N, C)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[0] != coords.shape[0]:
            raise ShapeError(f"values shape {values.shape} does not match {coords.shape[0]} sites")
        if coords.size:
            if coords.min() < 0 or np.any(coords[:, 0] >= self.height) or np.any(coords[:, 1] >= self.width):
                raise ShapeError("site outside the grid")
            key = coords[:, 0] * self.width + coords[:, 1]
            if np.any(np.diff(key) <= 0):
                raise ShapeError("sites must be strictly increasing and unique")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)

    @property
    def n_sites(self):
        return self.coords.shape[0]

    @property
    def channels(self):
        return self.values.shape[1]

    @cached_property
    def neighbors(self):
        """(N, 9) index of each site's 3x3 neighbours; N marks an inactive neighbour."""
        n = self.n_sites
        grid = np.full((self.height + 2, self.width + 2), n, dtype=np.int64)
        h, w = self.coords[:, 0], self.coords[:, 1]
        grid[h + 1, w + 1] = np.arange(n)
        return np.stack([grid[h + 1 + dh, w + 1 + dw] for dh, dw in OFFSETS], axis=1)

    def with_values(self, values):
        out = SparseTensor(self.height, self.width, self.coords, values)
        if "neighbors" in self.__dict__:
            out.__dict__["neighbors"] = self.__dict__["neighbors"]
        return out

    def same_sites(self, other):
        return (self.height, self.width) == (other.height, other.width) and np.array_equal(self.coords, other.coords)


@dataclass(frozen=True, eq=False)
class InstanceAssignment:
    """Instance index per active site.

    Labels are in [0, n_instances); ``n_instances`` itself marks sites covered
    by no instance (only produced when background is allowed, e.g. the
    all-ones foreground ablation); -1 marks an unassigned site.
    """

    labels: np.ndarray
    n_instances: int

    @property
    def background(self):
        return self.n_instances

    @property
    def n_groups(self):
        return self.n_instances + 1


@dataclass(frozen=True, eq=False)
class IanParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("epsilon must be positive")
        if np.shape(self.gamma) != np.shape(self.beta) or np.ndim(self.gamma) != 1:
            raise ShapeError("gamma and beta must be 1-D with equal length")

    @classmethod
    def identity(cls, channels, dtype=np.float32, eps=1e-5):
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype), eps)


@dataclass(frozen=True, eq=False)
class SscWeights:
    kernel: np.ndarray  # (3, 3, C_in, C_out)
    bias: np.ndarray  # (C_out,)

    def __post_init__(self):
        k = np.asarray(self.kernel)
        if k.ndim != 4 or k.shape[:2] != (3, 3):
            raise ShapeError(f"kernel must be (3, 3, C_in, C_out), got {k.shape}")
        if np.shape(self.bias) != (k.shape[3],):
            raise ShapeError(f"bias must have length {k.shape[3]}")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite weights")

    @property
    def c_in(self):
        return self.kernel.shape[2]

    @property
    def c_out(self):
        return self.kernel.shape[3]


@dataclass(frozen=True, eq=False)
class SubblockParams:
    conv: SscWeights
    norm: IanParams


# ---------------------------------------------------------------- conversion


def to_sparse(x, fg):
    x = as_dense(x)
    fg = np.asarray(fg)
    if fg.shape != x.shape[1:]:
        raise ShapeError(f"mask dims {fg.shape} do not match tensor dims {x.shape[1:]}")
    hs, ws = np.nonzero(fg)  # row-major order is already lexicographic
    return SparseTensor(x.shape[1], x.shape[2], np.stack([hs, ws], axis=1), x[:, hs, ws].T.copy())


def to_dense(s, fill=0.0):
    out = np.full((s.channels, s.height, s.width), fill, dtype=s.values.dtype)
    out[:, s.coords[:, 0], s.coords[:, 1]] = s.values.T
    return out


def union_mask(masks):
    if len(masks) == 0:
        raise ValueError("no instances")
    out = np.zeros_like(np.asarray(masks[0], dtype=np.uint8))
    for m in masks:
        m = np.asarray(m)
        if m.shape != out.shape:
            raise ShapeError("masks differ in size")
        out = np.maximum(out, (m > 0).astype(np.uint8))
    return out


def suppress_background(x_agg, masks):
    """Zero everything outside the union of instance masks and go sparse.

    Returns the foreground mask and the sparse tensor of foreground features.
    """
    x_agg = as_dense(x_agg)
    fg = union_mask(masks)
    if fg.shape != x_agg.shape[1:]:
        raise ShapeError(f"mask dims {fg.shape} do not match feature dims {x_agg.shape[1:]}")
    return fg, to_sparse(x_agg * fg.astype(x_agg.dtype), fg)


def assign_instances(s, mask_probs, threshold=0.5, allow_background=False):
    """Give every site to one instance.

    A site belongs to the instances whose probability exceeds ``threshold``;
    overlaps go to the highest probability, ties to the lowest index.
    """
    n = len(mask_probs)
    if n == 0:
        raise ValueError("no instances")
    h, w = s.coords[:, 0], s.coords[:, 1]
    probs = np.stack([np.asarray(m, dtype=np.float64)[h, w] for m in mask_probs], axis=1)
    probs = np.where(probs > threshold, probs, -np.inf)
    labels = np.argmax(probs, axis=1) if s.n_sites else np.zeros(0, np.int64)
    uncovered = ~np.isfinite(probs.max(axis=1)) if s.n_sites else np.zeros(0, bool)
    labels = np.where(uncovered, n if allow_background else -1, labels)
    return InstanceAssignment(labels.astype(np.int64), n)


def joint_assignment(s):
    """Single group over all active sites (the "w/o IAN" ablation)."""
    return InstanceAssignment(np.zeros(s.n_sites, np.int64), 1)


# ---------------------------------------------------------------- SSC


def _ssc(values, nbr, conv):
    x = np.concatenate([values, np.zeros((1, values.shape[1]), values.dtype)])
    out = np.zeros((values.shape[0], conv.c_out), dtype=np.result_type(values, conv.kernel))
    # same tap order, orientation and bias placement as the dense conv
    for k, (kh, kw) in enumerate((k // 3, k % 3) for k in range(9)):
        out += x[nbr[:, k]] @ conv.kernel[kh, kw]
    return out + np.asarray(conv.bias, dtype=out.dtype)


def _ssc_grad(values, nbr, conv, up):
    n = values.shape[0]
    x = np.concatenate([values, np.zeros((1, values.shape[1]), values.dtype)])
    gx = np.zeros_like(x)
    gk = np.zeros_like(conv.kernel)
    for k in range(9):
        kh, kw = divmod(k, 3)
        idx = nbr[:, k]
        gk[kh, kw] = x[idx].T @ up
        # active neighbours are distinct for a fixed tap; row n is the dummy
        gx[idx] += up @ conv.kernel[kh, kw].T
    return gx[:n], gk, up.sum(axis=0)


def ssc_forward(s, w):
    if s.channels != w.c_in:
        raise ShapeError(f"channel mismatch: tensor has {s.channels}, kernel expects {w.c_in}")
    return s.with_values(_ssc(s.values, s.neighbors, w))


def ssc_backward(s, w, upstream):
    """Gradients of :func:`ssc_forward` w.r.t. its input values and weights."""
    up = _upstream_values(s, upstream)
    if up.shape[1] != w.c_out:
        raise ShapeError("upstream channels do not match kernel output")
    gx, gk, gb = _ssc_grad(s.values, s.neighbors, w, up)
    return s.with_values(gx), SscWeights(gk, gb)


def _upstream_values(s, upstream):
    if isinstance(upstream, SparseTensor):
        if not s.same_sites(upstream):
            raise ShapeError("upstream site set differs from forward output")
        return upstream.values
    up = np.asarray(upstream)
    if up.ndim != 2 or up.shape[0] != s.n_sites:
        raise ShapeError("upstream site set differs from forward output")
    return up


# ---------------------------------------------------------------- IAN


def _group_counts(labels, n_groups, n_instances):
    if labels.size and labels.min() < 0:
        raise ValueError("unassigned site")
    if labels.size and labels.max() >= n_groups:
        raise ValueError(f"site label {labels.max()} out of range")
    counts = np.bincount(labels, minlength=n_groups)
    empty = np.flatnonzero(counts[:n_instances] == 0)
    if empty.size:
        raise ValueError(f"empty instance region: instance {int(empty[0])}")
    return counts


def _group_mean(x, labels, counts):
    sums = np.zeros((counts.shape[0], x.shape[1]), dtype=x.dtype)
    np.add.at(sums, labels, x)
    return sums / np.maximum(counts, 1)[:, None].astype(x.dtype)


def _ian(values, labels, counts, p):
    mean = _group_mean(values, labels, counts)
    xc = values - mean[labels]
    var = _group_mean(xc * xc, labels, counts)
    inv = 1.0 / np.sqrt(var + p.eps)
    xhat = xc * inv[labels]
    return xhat * p.gamma + p.beta, (xhat, inv)


def _ian_grad(labels, counts, p, cache, up):
    xhat, inv = cache
    dxhat = up * p.gamma
    m1 = _group_mean(dxhat, labels, counts)
    m2 = _group_mean(dxhat * xhat, labels, counts)
    gx = inv[labels] * (dxhat - m1[labels] - xhat * m2[labels])
    return gx, (up * xhat).sum(axis=0), up.sum(axis=0)


def ian_forward(s, assign, p):
    """Normalize each instance's sites with its own per-channel mean and biased variance."""
    if len(assign.labels) != s.n_sites:
        raise ShapeError("assignment length differs from site count")
    if len(p.gamma) != s.channels:
        raise ShapeError("affine params do not match channel count")
    counts = _group_counts(assign.labels, assign.n_groups, assign.n_instances)
    y, _ = _ian(s.values, assign.labels, counts, p)
    return s.with_values(y)


def ian_backward(s, assign, p, upstream):
    up = _upstream_values(s, upstream)
    counts = _group_counts(assign.labels, assign.n_groups, assign.n_instances)
    _, cache = _ian(s.values, assign.labels, counts, p)
    gx, gg, gb = _ian_grad(assign.labels, counts, p, cache, up)
    return s.with_values(gx), gg, gb


# ---------------------------------------------------------------- residual block


@dataclass
class _Tape:
    """Forward intermediates kept for the backward pass."""

    entries: list = field(default_factory=list)


def _subblock(values, nbr, labels, counts, p, tape=None):
    z = _ssc(values, nbr, p.conv)
    n, ian_cache = _ian(z, labels, counts, p.norm)
    y = np.maximum(n, 0)
    if tape is not None:
        tape.entries.append((values, ian_cache, n > 0))
    return y


def _subblock_grad(nbr, labels, counts, p, entry, up):
    values, ian_cache, active = entry
    up = up * active
    gz, gg, gb = _ian_grad(labels, counts, p.norm, ian_cache, up)
    gx, gk, gbias = _ssc_grad(values, nbr, p.conv, gz)
    return gx, SubblockParams(SscWeights(gk, gbias), IanParams(gg, gb, p.norm.eps))


def _block(values, nbr, labels, counts, params, is_last, tape=None):
    p1, p2, p3 = params
    if p1.conv.c_in != p2.conv.c_out:
        raise ShapeError(f"residual add needs {p1.conv.c_in} channels, branch gives {p2.conv.c_out}")
    a = _subblock(values, nbr, labels, counts, p1, tape)
    b = _subblock(a, nbr, labels, counts, p2, tape)
    r = b + values
    if is_last:
        return r
    return _subblock(r, nbr, labels, counts, p3, tape)


def _block_grad(nbr, labels, counts, params, is_last, entries, up):
    grads = [None, None, None]
    if not is_last:
        up, grads[2] = _subblock_grad(nbr, labels, counts, params[2], entries[2], up)
    skip = up
    up, grads[1] = _subblock_grad(nbr, labels, counts, params[1], entries[1], up)
    up, grads[0] = _subblock_grad(nbr, labels, counts, params[0], entries[0], up)
    return up + skip, grads


def sparse_residual_block(s, weights, assign, is_last=False):
    """Two SSC-IAN-ReLU sub-blocks with a skip connection, then a third sub-block
    unless ``is_last``."""
    if s.channels != weights[0].conv.c_in:
        raise ShapeError(f"channel mismatch: tensor has {s.channels}, block expects {weights[0].conv.c_in}")
    counts = _group_counts(assign.labels, assign.n_groups, assign.n_instances)
    return s.with_values(_block(s.values, s.neighbors, assign.labels, counts, weights, is_last))
