"""Synthetic scenes: elliptical people with procedural part/UV fields, and their manifest format."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blob import BlobFormatError, read_tensor, write_tensor
from .iuv import N_PARTS, AnnotatedPoint
from .tensor import pyramid_dims

MANIFEST_FORMAT = "ddpose-scene"
MANIFEST_VERSION = 1
POINTS_PER_INSTANCE = 100
DP_RADIUS = 0.85  # dense-pose mask covers the inner part of each person
FEATURE_STRIDE = 4  # X_agg / IUV grid is 1/4 of the image
INSTANCE_STRIDE = 8  # mask-head grid is 1/8 of the image


class ManifestError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message

    def to_record(self):
        return {"error": "manifest", "field": self.field, "message": self.message}


class InfeasibleSceneError(ValueError):
    pass


@dataclass(eq=False)
class SceneInstance:
    id: int
    mask: np.ndarray  # (H, W) uint8
    dp_mask: np.ndarray
    center: tuple  # (y, x) in image pixels
    points: list = field(default_factory=list)

    @property
    def location(self):
        """Mask-head generator location on the 1/8 grid."""
        return (self.center[0] // INSTANCE_STRIDE, self.center[1] // INSTANCE_STRIDE)

    @property
    def area(self):
        return int(np.count_nonzero(self.mask))

    @property
    def bbox(self):
        ys, xs = np.nonzero(self.mask)
        if ys.size == 0:
            raise ValueError(f"instance {self.id} has an empty mask")
        return int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1


@dataclass(eq=False)
class Scene:
    base_res: tuple
    pyramid: list
    instances: list
    part: np.ndarray  # (H, W) ground-truth part index, 0 = background
    u: np.ndarray
    v: np.ndarray
    seed: int = 0

    @property
    def fg(self):
        out = np.zeros(self.base_res, np.uint8)
        for inst in self.instances:
            out |= inst.mask
        return out

    @property
    def sparsity(self):
        return float(self.fg.mean())

    @property
    def grid_res(self):
        return self.pyramid[0].shape[1:]


def _place(rng, h, w, area, occupied, taken_locs, max_tries=500):
    rows, cols = np.indices((h, w), dtype=np.float64)
    for _ in range(max_tries):
        aspect = rng.uniform(1.3, 2.0)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        dy, dx = (rows + 0.5 - cy) / aspect, cols + 0.5 - cx
        rho = np.hypot(dy, dx)
        order = np.argsort(rho, axis=None, kind="stable")[:area]
        mask = np.zeros(h * w, np.uint8)
        mask[order] = 1
        mask = mask.reshape(h, w)
        if np.any(mask & occupied):
            continue
        center = np.unravel_index(order[0], (h, w))
        loc = (center[0] // INSTANCE_STRIDE, center[1] // INSTANCE_STRIDE)
        if loc in taken_locs:
            continue
        scale = rho.flat[order[-1]] + 1e-9
        theta = np.arctan2(dy, dx)
        return mask, (int(center[0]), int(center[1])), loc, rho / scale, theta
    raise InfeasibleSceneError(f"infeasible packing: could not place an instance of area {area}")


def _pool(x, factor):
    c, h, w = x.shape
    oh, ow = -(-h // factor), -(-w // factor)
    pad = np.zeros((c, oh * factor, ow * factor), x.dtype)
    pad[:, :h, :w] = x
    cnt = np.zeros((oh * factor, ow * factor))
    cnt[:h, :w] = 1
    s = pad.reshape(c, oh, factor, ow, factor).sum(axis=(2, 4))
    n = cnt.reshape(oh, factor, ow, factor).sum(axis=(1, 3))
    return (s / n).astype(x.dtype)


def make_pyramid(rng, part, u, v, fg, channels=32, noise=0.1, dtype=np.float32):
    """Feature pyramid derived from the ground truth through a random projection."""
    h, w = part.shape
    embed = np.concatenate([
        np.eye(N_PARTS)[part].transpose(2, 0, 1),
        u[None], v[None], fg[None].astype(np.float64),
    ])
    proj = rng.standard_normal((channels, embed.shape[0]))
    base = np.tensordot(proj, embed, axes=1) + noise * rng.standard_normal((channels, h, w))
    levels = [_pool(base, 2 ** (k + 2)).astype(dtype) for k in range(4)]
    assert [l.shape[1:] for l in levels] == pyramid_dims(h, w)
    return levels


def generate_scene(seed, n_instances, sparsity_target, base_res, channels=32, feature_noise=0.1):
    """Deterministic synthetic scene with ``n_instances`` disjoint elliptical people.

    Each person covers sparsity_target * H * W / n pixels; parts are angular
    bins around the center, U is the normalized radius, V the position inside
    the angular bin.
    """
    if n_instances < 1:
        raise ValueError("need at least one instance")
    if not 0 < sparsity_target <= 1:
        raise ValueError("sparsity must be in (0, 1]")
    h, w = (base_res, base_res) if np.ndim(base_res) == 0 else tuple(base_res)
    rng = np.random.default_rng(seed)
    area = int(round(sparsity_target * h * w / n_instances))
    if area < 1:
        raise InfeasibleSceneError("infeasible packing: instances would be empty")
    occupied = np.zeros((h, w), np.uint8)
    part = np.zeros((h, w), np.int64)
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    instances, locs = [], set()
    bins = N_PARTS - 1
    for i in range(n_instances):
        mask, center, loc, rho, theta = _place(rng, h, w, area, occupied, locs)
        occupied |= mask
        locs.add(loc)
        ang = (theta + np.pi) / (2 * np.pi) * bins
        pbin = np.clip(np.floor(ang).astype(np.int64), 0, bins - 1)
        on = mask.astype(bool)
        part[on] = 1 + pbin[on]
        u[on] = np.clip(rho[on], 0, 1)
        v[on] = np.clip(ang[on] - pbin[on], 0, 1)
        dp = (on & (rho <= DP_RADIUS)).astype(np.uint8)
        if not dp.any():
            dp[center] = 1
        ys, xs = np.nonzero(dp)
        pick = rng.choice(len(ys), POINTS_PER_INSTANCE, replace=len(ys) < POINTS_PER_INSTANCE)
        points = [
            AnnotatedPoint(i, int(xs[k]), int(ys[k]), int(part[ys[k], xs[k]]), float(u[ys[k], xs[k]]), float(v[ys[k], xs[k]]))
            for k in pick
        ]
        instances.append(SceneInstance(i, mask, dp, center, points))
    pyramid = make_pyramid(rng, part, u, v, occupied, channels, feature_noise)
    return Scene((h, w), pyramid, instances, part, u, v, seed)


# ---------------------------------------------------------------- manifest


def save_scene(scene, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "seed": scene.seed,
        "base_res": list(scene.base_res),
        "sparsity": scene.sparsity,
        "pyramid": [],
        "gt_fields": {},
        "instances": [],
    }
    for k, lvl in enumerate(scene.pyramid):
        name = f"pyramid_{k}.ddpt"
        write_tensor(lvl, out / name)
        manifest["pyramid"].append(name)
    for key, arr in (("part", scene.part), ("u", scene.u), ("v", scene.v)):
        name = f"gt_{key}.ddpt"
        write_tensor(np.asarray(arr, np.float64)[None], out / name)
        manifest["gt_fields"][key] = name
    for inst in scene.instances:
        write_tensor(inst.mask.astype(np.float32)[None], out / f"ins_{inst.id}.ddpt")
        write_tensor(inst.dp_mask.astype(np.float32)[None], out / f"dp_{inst.id}.ddpt")
        manifest["instances"].append({
            "id": inst.id,
            "center": list(inst.center),
            "location": list(inst.location),
            "bbox": list(inst.bbox),
            "area": inst.area,
            "mask": f"ins_{inst.id}.ddpt",
            "dp_mask": f"dp_{inst.id}.ddpt",
            "points": [p.to_list() for p in inst.points],
        })
    path = out / "scene.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def _req(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise ManifestError(f"{where}.{key}" if where else key, "missing field")
    return d[key]


def _blob(root, rel, field, shape=None):
    path = root / rel
    if not path.is_file():
        raise ManifestError(field, f"missing blob {rel}")
    try:
        arr = read_tensor(path)
    except BlobFormatError as e:
        raise ManifestError(f"{field}.{e.field}", e.message) from e
    if shape is not None and arr.shape != shape:
        raise ManifestError(field, f"blob shape {arr.shape}, expected {shape}")
    return arr


def load_scene(path):
    path = Path(path)
    if path.is_dir():
        path = path / "scene.json"
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError("json", str(e)) from e
    if _req(m, "format", "") != MANIFEST_FORMAT:
        raise ManifestError("format", f"expected {MANIFEST_FORMAT!r}")
    if _req(m, "version", "") != MANIFEST_VERSION:
        raise ManifestError("version", f"unsupported version {m['version']}")
    root = path.parent
    base = tuple(int(x) for x in _req(m, "base_res", ""))
    if len(base) != 2:
        raise ManifestError("base_res", "expected [H, W]")
    dims = pyramid_dims(*base)
    names = _req(m, "pyramid", "")
    if len(names) != 4:
        raise ManifestError("pyramid", f"expected 4 levels, got {len(names)}")
    pyramid = [_blob(root, n, f"pyramid[{k}]") for k, n in enumerate(names)]
    for k, lvl in enumerate(pyramid):
        if lvl.ndim != 3 or lvl.shape[1:] != dims[k]:
            raise ManifestError(f"pyramid[{k}]", f"blob shape {lvl.shape}, expected (C, {dims[k][0]}, {dims[k][1]})")
    gtf = _req(m, "gt_fields", "")
    fields = {k: _blob(root, _req(gtf, k, "gt_fields"), f"gt_fields.{k}", (1,) + base)[0] for k in ("part", "u", "v")}
    instances = []
    for i, rec in enumerate(_req(m, "instances", "")):
        where = f"instances[{i}]"
        pts = []
        for row in _req(rec, "points", where):
            try:
                x, y, part, u, v = row
                pts.append(AnnotatedPoint(int(_req(rec, "id", where)), int(x), int(y), int(part), float(u), float(v)))
            except (TypeError, ValueError) as e:
                raise ManifestError(f"{where}.points", str(e)) from e
        if not pts:
            raise ManifestError(f"{where}.points", "instance has no annotated points")
        instances.append(SceneInstance(
            int(rec["id"]),
            _blob(root, _req(rec, "mask", where), f"{where}.mask", (1,) + base)[0].astype(np.uint8),
            _blob(root, _req(rec, "dp_mask", where), f"{where}.dp_mask", (1,) + base)[0].astype(np.uint8),
            tuple(int(c) for c in _req(rec, "center", where)),
            pts,
        ))
    return Scene(base, pyramid, instances, fields["part"].astype(np.int64), fields["u"], fields["v"], int(m.get("seed", 0)))
