"""Instance branch: downsample conv, relative coordinates, dynamic mask heads, dice losses."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, as_dense, conv2d, relu

HIDDEN = 8
N_MASKS = 2  # (M_ins, M_dp)


def head_layer_shapes(c_in):
    """(weight, bias) shapes of the three 1x1 mask-head layers."""
    return [((c_in, HIDDEN), (HIDDEN,)), ((HIDDEN, HIDDEN), (HIDDEN,)), ((HIDDEN, N_MASKS), (N_MASKS,))]


def head_param_count(c_in):
    return sum(int(np.prod(w)) + b[0] for w, b in head_layer_shapes(c_in))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True, eq=False)
class HeadParams:
    """Flattened per-instance mask head: w1, b1, w2, b2, w3, b3 in that order."""

    theta: np.ndarray
    c_in: int

    def __post_init__(self):
        if np.shape(self.theta) != (head_param_count(self.c_in),):
            raise ShapeError(
                f"head params need {head_param_count(self.c_in)} values for {self.c_in} input channels, "
                f"got {np.size(self.theta)}"
            )

    def layers(self):
        out, pos = [], 0
        for wshape, bshape in head_layer_shapes(self.c_in):
            nw = wshape[0] * wshape[1]
            w = self.theta[pos:pos + nw].reshape(wshape)
            b = self.theta[pos + nw:pos + nw + bshape[0]]
            pos += nw + bshape[0]
            out.append((w, b))
        return out


@dataclass(frozen=True, eq=False)
class InstancePrediction:
    location: tuple
    m_ins_logits: np.ndarray  # (1, H_D, W_D)
    m_dp_logits: np.ndarray
    score: float

    def masks(self):
        return sigmoid(self.m_ins_logits), sigmoid(self.m_dp_logits)


@dataclass(eq=False)
class InstanceTargets:
    """Per-location class labels on the 1/8 grid and GT masks for each positive location."""

    labels: np.ndarray  # (H_D, W_D) ints, 0 = background
    masks: dict = field(default_factory=dict)  # (h, w) -> (gt_ins, gt_dp)

    def __post_init__(self):
        for loc in self.positives():
            if loc not in self.masks:
                raise ValueError(f"positive location {loc} has no ground-truth masks")

    def positives(self):
        return [tuple(int(i) for i in p) for p in np.argwhere(self.labels > 0)]

    @property
    def n_pos(self):
        return int(np.count_nonzero(self.labels > 0))


def downsample_conv(x_agg, layers):
    """Three stride-1 3x3 convs and one stride-2 conv, ReLU after each; 1/4 -> 1/8 scale."""
    if len(layers) != 4:
        raise ValueError(f"expected 4 conv layers, got {len(layers)}")
    x = as_dense(x_agg)
    for i, (w, b) in enumerate(layers):
        if np.shape(w)[2] != x.shape[0]:
            raise ShapeError(f"layer {i}: expects {np.shape(w)[2]} channels, got {x.shape[0]}")
        x = relu(conv2d(x, w, b, stride=2 if i == 3 else 1))
    return x


def rel_coords(dims, location, dtype=np.float32):
    """Offsets of every grid cell from ``location``, normalized by the grid size."""
    hd, wd = dims
    h, w = location
    if not (0 <= h < hd and 0 <= w < wd):
        raise ValueError(f"location {location} outside {hd}x{wd} grid")
    rows = (np.arange(hd, dtype=np.float64) - h) / hd
    cols = (np.arange(wd, dtype=np.float64) - w) / wd
    out = np.empty((2, hd, wd), dtype=dtype)
    out[0] = rows[:, None]
    out[1] = cols[None, :]
    return out


def with_rel_coords(x_d, location):
    return np.concatenate([x_d, rel_coords(x_d.shape[1:], location, x_d.dtype)])


def generate_head_params(controller_features, location, generator, c_in=None):
    """theta = A @ f + b with f the controller feature vector at ``location``.

    ``generator`` is (A, b); ``c_in`` is the mask-head input width (C_D + 2).
    """
    a, b = generator
    feats = as_dense(controller_features)
    h, w = location
    if not (0 <= h < feats.shape[1] and 0 <= w < feats.shape[2]):
        raise ValueError(f"location {location} outside the feature grid")
    if a.shape[1] != feats.shape[0] or a.shape[0] != np.shape(b)[0]:
        raise ShapeError(f"generator {a.shape} does not fit {feats.shape[0]} features")
    theta = a @ feats[:, h, w] + b
    if c_in is None:
        return theta
    return HeadParams(theta, c_in)


def mask_head_apply(x_tilde, theta, location=(0, 0)):
    """Run the 3-layer 1x1 mask FCN; returns logits for M_ins and M_dp."""
    x = as_dense(x_tilde)
    if not isinstance(theta, HeadParams):
        theta = HeadParams(np.asarray(theta), x.shape[0])
    if theta.c_in != x.shape[0]:
        raise ShapeError(f"head built for {theta.c_in} channels, input has {x.shape[0]}")
    c, h, w = x.shape
    y = x.reshape(c, -1)
    layers = theta.layers()
    for i, (wt, b) in enumerate(layers):
        y = wt.T @ y + b[:, None]
        if i < len(layers) - 1:
            y = np.maximum(y, 0)
    y = y.reshape(N_MASKS, h, w)
    return InstancePrediction(tuple(location), y[:1], y[1:], mask_score(y[0]))


def mask_score(logits):
    """Mean foreground probability inside the predicted mask (0 for an empty mask)."""
    p = sigmoid(np.asarray(logits, dtype=np.float64))
    fg = p > 0.5
    return float(p[fg].mean()) if fg.any() else 0.0


def dice_loss(pred, gt):
    """1 - 2 sum(p g) / (sum p^2 + sum g^2), with its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred)
    gt = np.asarray(gt, dtype=pred.dtype if np.issubdtype(pred.dtype, np.floating) else np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    inter = np.sum(pred * gt)
    denom = np.sum(pred * pred) + np.sum(gt * gt)
    if denom == 0:
        raise ValueError("degenerate dice")
    loss = 1.0 - 2.0 * inter / denom
    grad = -2.0 * (gt * denom - 2.0 * pred * inter) / denom**2
    return float(loss), grad


def mask_losses(preds, targets):
    """Average dice over positive locations for the instance and dense-pose masks."""
    positives = targets.positives()
    if not positives:
        raise ValueError("no positive locations")
    by_loc = {}
    for p in preds:
        loc = tuple(int(i) for i in p.location)
        if loc in by_loc:
            raise ValueError(f"two predictions at location {loc}")
        by_loc[loc] = p
    l_ins = l_dp = 0.0
    for loc in positives:
        if loc not in by_loc:
            raise ValueError(f"no prediction at positive location {loc}")
        m_ins, m_dp = by_loc[loc].masks()
        gt_ins, gt_dp = targets.masks[loc]
        l_ins += dice_loss(m_ins.reshape(np.shape(gt_ins)), gt_ins)[0]
        l_dp += dice_loss(m_dp.reshape(np.shape(gt_dp)), gt_dp)[0]
    return l_ins / len(positives), l_dp / len(positives)
