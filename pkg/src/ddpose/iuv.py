"""Global IUV field and its losses.

An IUV field is a (75, H, W) logit array: channels [0, 25) are part logits
(part 0 is background), [25, 50) the U value per part and [50, 75) the V value.
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

N_PARTS = 25
U0, V0 = 25, 50


@dataclass(frozen=True)
class AnnotatedPoint:
    instance_id: int
    x: int
    y: int
    part: int
    u: float
    v: float

    def __post_init__(self):
        if not 1 <= self.part < N_PARTS:
            raise ValueError(f"annotated part must be in [1, 24], got {self.part}")
        if not (0.0 <= self.u <= 1.0 and 0.0 <= self.v <= 1.0):
            raise ValueError(f"u, v must lie in [0, 1], got ({self.u}, {self.v})")

    def to_list(self):
        return [self.x, self.y, self.part, self.u, self.v]


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 5.0  # instance + dense-pose mask losses
    lambda2: float = 10.0  # UV regression
    lambda3: float = 1.0  # edge-aware smoothness

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) <= 0:
            raise ValueError("loss weights must be positive")


def check_iuv(c):
    c = np.asarray(c)
    if c.ndim != 3 or c.shape[0] != 3 * N_PARTS:
        raise ShapeError(f"IUV field must be (75, H, W), got {c.shape}")
    return c


def iuv_summarize(c):
    """Per-pixel (part, u, v): argmax part (lowest index wins ties) and that part's U/V.

    Background pixels report u = v = 0.
    """
    c = check_iuv(c)
    part = np.argmax(c[:N_PARTS], axis=0)
    rows, cols = np.indices(part.shape)
    u = c[U0 + part, rows, cols]
    v = c[V0 + part, rows, cols]
    bg = part == 0
    return part, np.where(bg, 0, u), np.where(bg, 0, v)


def render(c, peak=1.0):
    """3-channel visualization (part / 24, u, v) scaled to ``peak``."""
    part, u, v = iuv_summarize(c)
    return np.stack([part / (N_PARTS - 1), u, v]).astype(np.float64) * peak


def _point_index(c, points):
    if len(points) == 0:
        raise ValueError("empty point list")
    ys = np.array([p.y for p in points])
    xs = np.array([p.x for p in points])
    h, w = c.shape[1:]
    if ys.min() < 0 or xs.min() < 0 or ys.max() >= h or xs.max() >= w:
        raise ValueError("annotated point outside the IUV field")
    return ys, xs, np.array([p.part for p in points])


def loss_I(c, points):
    """Mean softmax cross-entropy of the part logits at the annotated points."""
    c = check_iuv(c)
    ys, xs, parts = _point_index(c, points)
    logits = c[:N_PARTS, ys, xs].T.astype(np.float64)  # (P, 25)
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    n = len(points)
    loss = float(np.mean(lse - shifted[np.arange(n), parts]))
    prob = np.exp(shifted - lse[:, None])
    prob[np.arange(n), parts] -= 1.0
    grad = np.zeros_like(c)
    np.add.at(grad, (slice(0, N_PARTS), ys, xs), (prob / n).T.astype(c.dtype))
    return loss, grad


def smooth_l1(d):
    a = np.abs(d)
    return np.where(a < 1.0, 0.5 * d * d, a - 0.5)


def loss_UV(c, points):
    """Huber (delta 1) on U and V of the annotated part; mean over points and both coordinates."""
    c = check_iuv(c)
    ys, xs, parts = _point_index(c, points)
    n = len(points)
    du = c[U0 + parts, ys, xs].astype(np.float64) - np.array([p.u for p in points])
    dv = c[V0 + parts, ys, xs].astype(np.float64) - np.array([p.v for p in points])
    loss = float((smooth_l1(du).sum() + smooth_l1(dv).sum()) / (2 * n))
    grad = np.zeros_like(c)
    np.add.at(grad, (U0 + parts, ys, xs), (np.clip(du, -1, 1) / (2 * n)).astype(c.dtype))
    np.add.at(grad, (V0 + parts, ys, xs), (np.clip(dv, -1, 1) / (2 * n)).astype(c.dtype))
    return loss, grad


def loss_smooth(c, masks):
    """Edge-aware smoothness averaged over instances.

    For each instance mask the vertical and horizontal forward differences of
    every channel are weighted by exp(-|mask difference|) and averaged over
    their (pixel, channel) sets separately; the two means are added.
    """
    c = check_iuv(c)
    if len(masks) == 0:
        raise ValueError("empty mask list")
    gh = c[:, 1:, :] - c[:, :-1, :]
    gw = c[:, :, 1:] - c[:, :, :-1]
    sh, sw = np.sign(gh), np.sign(gw)
    loss = 0.0
    weight_h = np.zeros(gh.shape[1:])
    weight_w = np.zeros(gw.shape[1:])
    for m in masks:
        m = np.asarray(m, dtype=np.float64)
        if m.shape != c.shape[1:]:
            raise ShapeError(f"mask {m.shape} does not match field {c.shape[1:]}")
        eh = np.exp(-np.abs(m[1:, :] - m[:-1, :]))
        ew = np.exp(-np.abs(m[:, 1:] - m[:, :-1]))
        nh, nw = gh.size, gw.size
        loss += (np.abs(gh) * eh).sum() / nh if nh else 0.0
        loss += (np.abs(gw) * ew).sum() / nw if nw else 0.0
        if nh:
            weight_h += eh / nh
        if nw:
            weight_w += ew / nw
    n = len(masks)
    dh = sh * weight_h / n
    dw = sw * weight_w / n
    grad = np.zeros(c.shape, dtype=np.float64)
    grad[:, 1:, :] += dh
    grad[:, :-1, :] -= dh
    grad[:, :, 1:] += dw
    grad[:, :, :-1] -= dw
    return float(loss / n), grad.astype(c.dtype)


def zero_fcos(*_args, **_kwargs):
    """Detection-loss hook; box/centerness/classification towers are not modelled."""
    return 0.0


def total_loss(parts, weights=LossWeights(), l_fcos_hook=zero_fcos):
    """Compose L_all = L_mask + L_IUV and return every component.

    ``parts`` maps ``L_Mins``, ``L_Mdp``, ``L_I``, ``L_UV``, ``L_s`` to floats;
    ``L_fcos`` comes from the hook unless given explicitly.
    """
    parts = dict(parts)
    if "L_fcos" not in parts:
        parts["L_fcos"] = float(l_fcos_hook())
    for name in ("L_fcos", "L_Mins", "L_Mdp", "L_I", "L_UV", "L_s"):
        val = parts.get(name, 0.0)
        if not math.isfinite(val):
            raise FloatingPointError(f"{name} is not finite ({val})")
        parts[name] = float(val)
    l_mask = parts["L_fcos"] + weights.lambda1 * (parts["L_Mins"] + parts["L_Mdp"])
    l_iuv = parts["L_I"] + weights.lambda2 * parts["L_UV"] + weights.lambda3 * parts["L_s"]
    return {**parts, "L_mask": l_mask, "L_IUV": l_iuv, "L_all": l_mask + l_iuv}
