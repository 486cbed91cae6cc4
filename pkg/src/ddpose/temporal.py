"""Flow-warped temporal smoothing of IUV logits, plus ITF / ISI stability metrics."""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .iuv import render
from .tensor import ShapeError

PSNR_CAP = 99.0


@dataclass(frozen=True)
class SmoothingConfig:
    r: int = 2
    alphas: tuple = field(default=(0.2, 0.2, 0.2, 0.2, 0.2))

    def __post_init__(self):
        if self.r < 0 or len(self.alphas) != 2 * self.r + 1:
            raise ValueError(f"need 2r+1 = {2 * self.r + 1} weights, got {len(self.alphas)}")
        if min(self.alphas) < 0:
            raise ValueError("weights must be non-negative")

    def offsets(self):
        return [j for j in range(-self.r, self.r + 1) if j != 0]


def backward_warp(c, flow):
    """Sample ``c`` at p + flow(p) for every pixel p.

    flow channel 0 is the horizontal displacement, channel 1 the vertical one.
    Returns the warped field and a boolean (H, W) map of in-frame samples.
    """
    c = np.asarray(c)
    flow = np.asarray(flow)
    if c.ndim != 3 or flow.shape != (2,) + c.shape[1:]:
        raise ShapeError(f"flow {flow.shape} does not match field {c.shape}")
    h, w = c.shape[1:]
    rows, cols = np.indices((h, w), dtype=np.float64)
    x = cols + flow[0]
    y = rows + flow[1]
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0).astype(c.dtype)
    fy = (y - y0).astype(c.dtype)
    top = c[:, y0, x0] + fx * (c[:, y0, x1] - c[:, y0, x0])
    bot = c[:, y1, x0] + fx * (c[:, y1, x1] - c[:, y1, x0])
    return top + fy * (bot - top), valid


def temporal_smooth(window, flows, cfg=SmoothingConfig()):
    """Weighted sum of neighbouring logit fields warped onto the center frame.

    ``window`` holds 2r+1 fields ordered t-r .. t+r; entries may be None at
    sequence ends. ``flows`` holds the 2r flows f_{t->t+j} for j = -r..-1, 1..r.
    Pixels whose warp leaves the frame drop out and the remaining weights are
    renormalized.
    """
    if len(window) != 2 * cfg.r + 1:
        raise ValueError(f"window length {len(window)} != 2r+1 = {2 * cfg.r + 1}")
    if len(flows) != 2 * cfg.r:
        raise ValueError(f"expected {2 * cfg.r} flows, got {len(flows)}")
    center = window[cfg.r]
    if center is None:
        raise ValueError("center frame missing")
    center = np.asarray(center)
    acc = np.zeros(center.shape, dtype=np.float64)
    wsum = np.zeros(center.shape[1:], dtype=np.float64)
    flow_by_j = dict(zip(cfg.offsets(), flows))
    for j, alpha in zip(range(-cfg.r, cfg.r + 1), cfg.alphas):
        frame = window[j + cfg.r]
        if frame is None or alpha == 0:
            continue
        if j == 0:
            warped, valid = center, np.ones(center.shape[1:], bool)
        else:
            if flow_by_j[j] is None:
                raise ValueError(f"missing flow for offset {j}")
            warped, valid = backward_warp(frame, flow_by_j[j])
        wj = alpha * valid
        acc += wj * warped
        wsum += wj
    out = np.where(wsum > 0, acc / np.where(wsum > 0, wsum, 1.0), center)
    return out.astype(center.dtype)


def psnr(a, b, peak=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak**2 / mse)))


def _filter_valid(img, g1):
    # separable 'valid' correlation over the last two axes
    n = len(g1)
    t = sliding_window_view(img, n, axis=-1) @ g1
    return sliding_window_view(t, n, axis=-2) @ g1


def ssim(a, b, peak=1.0, size=11, sigma=1.5):
    """Mean SSIM over all full Gaussian windows (and channels, for (C, H, W) input)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.shape[-1] < size or a.shape[-2] < size:
        raise ShapeError(f"frame {a.shape[-2:]} smaller than {size}x{size} window")
    x = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-(x**2) / (2 * sigma**2))
    g1 /= g1.sum()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g1), _filter_valid(b, g1)
    var_a = _filter_valid(a * a, g1) - mu_a**2
    var_b = _filter_valid(b * b, g1) - mu_b**2
    cov = _filter_valid(a * b, g1) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _pairs(video):
    if len(video) < 2:
        raise ValueError("need at least 2 frames")
    return zip(video[:-1], video[1:])


def pair_metrics(video, peak=1.0):
    return [(psnr(a, b, peak), ssim(a, b, peak)) for a, b in _pairs(video)]


def itf(video, peak=1.0):
    """Mean PSNR between consecutive frames."""
    return float(np.mean([psnr(a, b, peak) for a, b in _pairs(video)]))


def isi(video, peak=1.0):
    """Mean SSIM between consecutive frames."""
    return float(np.mean([ssim(a, b, peak) for a, b in _pairs(video)]))


def iuv_video_metrics(fields, mode="render"):
    """ITF / ISI of an IUV logit sequence, on rendered summaries or raw logits."""
    if mode == "render":
        frames, peak = [render(c) for c in fields], 1.0
    elif mode == "logits":
        frames = [np.asarray(c, dtype=np.float64) for c in fields]
        peak = float(max(f.max() for f in frames) - min(f.min() for f in frames)) or 1.0
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return {"itf": itf(frames, peak), "isi": isi(frames, peak)}
