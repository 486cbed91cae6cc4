"""Dense (C, H, W) tensors: resampling, 3x3 convolution and pyramid aggregation.

Dense tensors are plain numpy arrays laid out channel-first. Binary masks are
(H, W) uint8 arrays holding only 0 and 1.
"""

import numpy as np


class ShapeError(ValueError):
    pass


def as_dense(t, name="tensor"):
    t = np.asarray(t)
    if t.ndim != 3:
        raise ShapeError(f"{name}: expected (C, H, W), got shape {t.shape}")
    if t.size == 0:
        raise ShapeError("empty tensor")
    return t


def check_finite(t, name="tensor"):
    if not np.all(np.isfinite(t)):
        raise FloatingPointError(f"{name}: non-finite values")
    return t


def _resize_axis(n_in, n_out):
    # align_corners=False: sample centers at (i + 0.5) * scale - 0.5, clamped
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def bilinear_resize(t, out_h, out_w):
    """Resize a (C, H, W) tensor with bilinear interpolation (align_corners=False)."""
    t = np.asarray(t)
    if t.size == 0:
        raise ShapeError("empty tensor")
    t = as_dense(t)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be positive, got {out_h}x{out_w}")
    _, h, w = t.shape
    if (h, w) == (out_h, out_w):
        return t.copy()
    dtype = t.dtype if np.issubdtype(t.dtype, np.floating) else np.float32
    r0, r1, fr = _resize_axis(h, out_h)
    c0, c1, fc = _resize_axis(w, out_w)
    fr = fr.astype(dtype)[None, :, None]
    fc = fc.astype(dtype)[None, None, :]
    # a + f * (b - a) reproduces constant fields exactly
    top = t[:, r0, :].astype(dtype, copy=False)
    rows = top + fr * (t[:, r1, :] - top)
    left = rows[:, :, c0]
    return left + fc * (rows[:, :, c1] - left)


def conv2d(x, weight, bias=None, stride=1):
    """3x3 cross-correlation with one pixel of zero padding.

    ``weight`` has shape (3, 3, C_in, C_out); output spatial dims are
    ceil(H / stride) x ceil(W / stride).
    """
    x = as_dense(x)
    weight = np.asarray(weight)
    if weight.ndim != 4 or weight.shape[:2] != (3, 3):
        raise ShapeError(f"conv weight must be (3, 3, C_in, C_out), got {weight.shape}")
    c_in, h, w = x.shape
    if weight.shape[2] != c_in:
        raise ShapeError(f"channel mismatch: input has {c_in}, weight expects {weight.shape[2]}")
    c_out = weight.shape[3]
    oh, ow = -(-h // stride), -(-w // stride)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((oh * ow, c_out), dtype=np.result_type(x, weight))
    for kh in range(3):
        for kw in range(3):
            patch = xp[:, kh:kh + h:stride, kw:kw + w:stride].reshape(c_in, -1)
            out += patch.T @ weight[kh, kw]
    if bias is not None:
        out += np.asarray(bias, dtype=out.dtype)
    return np.ascontiguousarray(out.T).reshape(c_out, oh, ow)


def conv1x1(x, weight, bias=None):
    """Pointwise convolution; ``weight`` is (C_in, C_out)."""
    c, h, w = x.shape
    if weight.shape[0] != c:
        raise ShapeError(f"channel mismatch: input has {c}, weight expects {weight.shape[0]}")
    out = (weight.T @ x.reshape(c, -1)).reshape(weight.shape[1], h, w)
    if bias is not None:
        out = out + np.asarray(bias, dtype=out.dtype)[:, None, None]
    return out


def relu(x):
    return np.maximum(x, 0)


def pyramid_dims(base_h, base_w, n_levels=4):
    return [(-(-base_h // 2 ** (k + 2)), -(-base_w // 2 ** (k + 2))) for k in range(n_levels)]


def check_pyramid(levels):
    if not levels:
        raise ShapeError("empty pyramid")
    levels = [as_dense(l, f"level {k}") for k, l in enumerate(levels)]
    c = levels[0].shape[0]
    for k, lvl in enumerate(levels):
        if lvl.shape[0] != c:
            raise ShapeError(f"level {k} has {lvl.shape[0]} channels, level 0 has {c}")
        if k:
            ph, pw = levels[k - 1].shape[1:]
            if lvl.shape[1:] != (-(-ph // 2), -(-pw // 2)):
                raise ShapeError(f"level {k} dims {lvl.shape[1:]} do not halve level {k - 1} dims {(ph, pw)}")
    return levels


def aggregate_pyramid(levels, up_convs):
    """Sum all pyramid levels at the finest (1/4) scale.

    Each level goes through its own 3x3 conv, then is bilinearly upsampled one
    level at a time (to the dims of the next finer level) until it reaches
    level 0. ``up_convs`` holds one (weight, bias) pair per level.
    """
    levels = check_pyramid(levels)
    if len(up_convs) != len(levels):
        raise ShapeError(f"{len(levels)} levels but {len(up_convs)} convs")
    out = None
    for k, (lvl, (w, b)) in enumerate(zip(levels, up_convs)):
        if np.shape(w)[2] != lvl.shape[0]:
            raise ShapeError(f"level {k}: conv expects {np.shape(w)[2]} channels, level has {lvl.shape[0]}")
        y = conv2d(lvl, w, b)
        for j in range(k - 1, -1, -1):
            y = bilinear_resize(y, *levels[j].shape[1:])
        out = y if out is None else out + y
    return out


def binarize(t, threshold=0.5):
    """Strict ``>`` threshold of a single-channel tensor into a uint8 mask."""
    t = np.asarray(t)
    if t.ndim == 3:
        if t.shape[0] != 1:
            raise ShapeError(f"binarize expects 1 channel, got {t.shape[0]}")
        t = t[0]
    elif t.ndim != 2:
        raise ShapeError(f"binarize expects (1, H, W) or (H, W), got {t.shape}")
    return (t > threshold).astype(np.uint8)


def delta_kernel(c_in, c_out=None, dtype=np.float32):
    """3x3 kernel whose center tap is the identity (or its top-left block)."""
    c_out = c_in if c_out is None else c_out
    w = np.zeros((3, 3, c_in, c_out), dtype=dtype)
    w[1, 1] = np.eye(c_in, c_out, dtype=dtype)
    return w
