"""IUV video manifests, a jittered synthetic sequence generator, and whole-sequence smoothing."""

import csv
import json
from pathlib import Path

import numpy as np

from .blob import read_tensor, write_tensor
from .iuv import N_PARTS, U0, V0
from .scene import ManifestError, generate_scene
from .temporal import SmoothingConfig, iuv_video_metrics, pair_metrics, render, temporal_smooth

VIDEO_FORMAT = "ddpose-video"
VIDEO_VERSION = 1


def gt_logits(part, u, v, confidence=3.0):
    """75-channel logits whose summary reproduces the given part / u / v maps."""
    h, w = part.shape
    c = np.zeros((3 * N_PARTS, h, w))
    c[:N_PARTS] = confidence * np.eye(N_PARTS)[part].transpose(2, 0, 1)
    c[U0:V0] = u
    c[V0:] = v
    return c


def jittered_sequence(seed, n_frames=8, size=48, velocity=(1, 0), noise=0.6, n_instances=2, sparsity=0.3):
    """Translating scene plus independent per-frame logit noise.

    Frame t is a size x size window of a larger canvas shifted by t * velocity
    (x, y) pixels. Returns (frames, flows) with flows[(t, j)] = f_{t->t+j}.
    """
    vx, vy = velocity
    span = (n_frames - 1) * max(abs(vx), abs(vy))
    scene = generate_scene(seed, n_instances, sparsity, size + span)
    canvas = gt_logits(scene.part, scene.u, scene.v)
    rng = np.random.default_rng([seed, 1])
    ox = 0 if vx >= 0 else span
    oy = 0 if vy >= 0 else span
    frames = []
    for t in range(n_frames):
        y0, x0 = oy + t * vy, ox + t * vx
        clean = canvas[:, y0:y0 + size, x0:x0 + size]
        frames.append(clean + noise * rng.standard_normal(clean.shape))
    flows = {}
    for t in range(n_frames):
        for j in range(-n_frames, n_frames + 1):
            if j and 0 <= t + j < n_frames:
                f = np.empty((2, size, size))
                f[0], f[1] = -j * vx, -j * vy
                flows[(t, j)] = f
    return frames, flows


def smooth_sequence(frames, flows, cfg=SmoothingConfig()):
    """Smooth every frame; windows shrink at the ends and weights renormalize."""
    if len(frames) < 2 * cfg.r + 1:
        raise ValueError(f"need at least {2 * cfg.r + 1} frames, got {len(frames)}")
    out = []
    for t in range(len(frames)):
        window, wflows = [], []
        for j in range(-cfg.r, cfg.r + 1):
            inside = 0 <= t + j < len(frames)
            window.append(frames[t + j] if inside else None)
            if j == 0:
                continue
            if inside and (t, j) not in flows:
                raise KeyError(f"missing flow blob for (t={t}, j={j})")
            wflows.append(flows.get((t, j)) if inside else None)
        out.append(temporal_smooth(window, wflows, cfg))
    return out


def save_video(frames, flows, out_dir, prefix="frame"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = {"format": VIDEO_FORMAT, "version": VIDEO_VERSION, "frames": [], "flows": []}
    for t, c in enumerate(frames):
        name = f"{prefix}_{t:03d}.ddpt"
        write_tensor(np.asarray(c), out / name)
        m["frames"].append(name)
    for (t, j), f in sorted(flows.items()):
        name = f"flow_{t:03d}_{j:+d}.ddpt"
        write_tensor(np.asarray(f), out / name)
        m["flows"].append({"t": t, "j": j, "path": name})
    path = out / "video.json"
    path.write_text(json.dumps(m, indent=1))
    return path


def load_video(path):
    path = Path(path)
    if path.is_dir():
        path = path / "video.json"
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError("json", str(e)) from e
    if m.get("format") != VIDEO_FORMAT:
        raise ManifestError("format", f"expected {VIDEO_FORMAT!r}")
    if m.get("version") != VIDEO_VERSION:
        raise ManifestError("version", f"unsupported version {m.get('version')}")
    root = path.parent
    frames = [read_tensor(root / n) for n in m.get("frames", [])]
    flows = {}
    for rec in m.get("flows", []):
        key = (int(rec["t"]), int(rec["j"]))
        p = root / rec["path"]
        if not p.is_file():
            raise ManifestError(f"flows[t={key[0]}, j={key[1]}]", f"missing flow blob {rec['path']}")
        flows[key] = read_tensor(p)
    return frames, flows


def smooth_video(manifest, cfg=SmoothingConfig(), out_dir=None, metric_mode="render"):
    """Smooth a video manifest; optionally write smoothed blobs, metrics JSON and per-pair CSV."""
    frames, flows = load_video(manifest)
    smoothed = smooth_sequence(frames, flows, cfg)
    metrics = {
        "before": iuv_video_metrics(frames, metric_mode),
        "after": iuv_video_metrics(smoothed, metric_mode),
        "mode": metric_mode,
    }
    if out_dir is not None:
        out = Path(out_dir)
        save_video(smoothed, flows, out, prefix="smoothed")
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
        if metric_mode == "render":
            before = pair_metrics([render(c) for c in frames])
            after = pair_metrics([render(c) for c in smoothed])
            with open(out / "pairs.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "psnr_before", "ssim_before", "psnr_after", "ssim_after"])
                for t, (b, a) in enumerate(zip(before, after)):
                    w.writerow([t, *b, *a])
    return smoothed, metrics
