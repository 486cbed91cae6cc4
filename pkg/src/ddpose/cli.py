"""Command-line entry point: ``ddpose <command> [--config cfg.json] --seed N --out-dir DIR``."""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import bench_scaling, write_csv
from .blob import BlobFormatError, write_tensor
from .evaluation import GpsConfig, GtInstance, ScoredInstance, evaluate
from .gradcheck import run_suite
from .instance import sigmoid
from .iuv import iuv_summarize
from .pipeline import init_weights, run_direct
from .scene import FEATURE_STRIDE, ManifestError, generate_scene, load_scene, save_scene
from .tensor import bilinear_resize, binarize
from .temporal import SmoothingConfig
from .training import FitConfig, fit_iuv, points_to_grid
from .video import jittered_sequence, save_video, smooth_video

log = logging.getLogger("ddpose")


class ConfigError(ValueError):
    pass


def _scene(cfg, seed, out):
    if "scene" in cfg:
        return load_scene(cfg["scene"])
    scene = generate_scene(seed, cfg.get("n_instances", 2), cfg.get("sparsity", 0.25),
                           cfg.get("base_res", 64), channels=cfg.get("channels", 32))
    save_scene(scene, out / "scene")
    return scene


def cmd_gen_scene(cfg, seed, out):
    scene = generate_scene(seed, cfg.get("n_instances", 2), cfg.get("sparsity", 0.25),
                           cfg.get("base_res", 64), channels=cfg.get("channels", 32))
    path = save_scene(scene, out)
    return {"manifest": str(path), "sparsity": scene.sparsity, "instances": len(scene.instances)}


def _direct(cfg, seed, out):
    scene = _scene(cfg, seed, out)
    weights = init_weights(seed, channels=scene.pyramid[0].shape[0])
    res = run_direct(scene, weights, cfg.get("mode", "sparse"), cfg.get("mask_source", "predicted"),
                     cfg.get("norm", "ian"))
    return scene, res


def cmd_run(cfg, seed, out):
    scene, res = _direct(cfg, seed, out)
    write_tensor(res.iuv, out / "iuv.ddpt")
    index = []
    for inst, pred in zip(scene.instances, res.predictions):
        m_ins, m_dp = pred.masks()
        write_tensor(m_ins, out / f"pred_{inst.id}_ins.ddpt")
        write_tensor(m_dp, out / f"pred_{inst.id}_dp.ddpt")
        index.append({"instance_id": inst.id, "location": list(pred.location), "score": pred.score})
    (out / "predictions.json").write_text(json.dumps(index, indent=1))
    return {"iuv": "iuv.ddpt", "instances": len(index), "fg_fraction": float(res.fg.mean())}


def person_predictions(res, grid):
    """Cut the global IUV summary with each instance's dense-pose mask."""
    part, u, v = iuv_summarize(res.iuv)
    preds = []
    for pred in res.predictions:
        dp = binarize(bilinear_resize(sigmoid(pred.m_dp_logits), *grid))
        preds.append(ScoredInstance(pred.score, part * dp, u * dp, v * dp,
                                    float(dp.sum()) * FEATURE_STRIDE**2))
    return preds


def cmd_eval(cfg, seed, out):
    if "kappa" not in cfg:
        raise ConfigError("eval needs an explicit 'kappa' in the config")
    scene, res = _direct(cfg, seed, out)
    preds = person_predictions(res, res.iuv.shape[1:])
    gts = [GtInstance(points_to_grid(inst.points), inst.area) for inst in scene.instances]
    result = evaluate(preds, gts, GpsConfig(kappa=float(cfg["kappa"])), scene.base_res)
    (out / "eval.json").write_text(result.to_json())
    (out / "eval_thresholds.csv").write_text(result.to_csv())
    return json.loads(result.to_json())


def cmd_bench(cfg, seed, out):
    records = bench_scaling(cfg.get("instance_counts", [1, 2, 4, 8]), cfg.get("sparsities", [0.25]),
                            cfg.get("repeats", 5), cfg.get("base_res", 256), seed,
                            parallel=cfg.get("parallel", False))
    write_csv(records, out / "bench.csv")
    return {"csv": "bench.csv", "records": len(records)}


def cmd_smooth(cfg, seed, out):
    smooth_cfg = SmoothingConfig(cfg.get("r", 2), tuple(cfg.get("alphas", (0.2,) * 5)))
    manifest = cfg.get("video")
    if manifest is None:
        frames, flows = jittered_sequence(seed, cfg.get("n_frames", 8), cfg.get("size", 48),
                                          tuple(cfg.get("velocity", (1, 0))), cfg.get("noise", 0.6))
        manifest = save_video(frames, flows, out / "input")
    _, metrics = smooth_video(manifest, smooth_cfg, out, cfg.get("metric_mode", "render"))
    return metrics


def cmd_gradcheck(cfg, seed, out):
    report = run_suite(cfg.get("n_cases", 50), seed)
    (out / "gradcheck.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    failed = [k for k, v in report.items() if not v["passed"]]
    if failed:
        raise ArithmeticError(f"gradient check failed: {', '.join(failed)}")
    return {k: v["max_rel_error"] for k, v in report.items()}


def cmd_fit(cfg, seed, out):
    scene = _scene({"base_res": 64, "sparsity": 0.3, **cfg}, seed, out)
    res = fit_iuv(scene, FitConfig(cfg.get("steps", 200), cfg.get("lr", 0.1), seed, cfg.get("norm", "ian")))
    summary = {"initial": res.trace[0], "final": res.trace[-1], "trace": res.trace}
    (out / "fit.json").write_text(json.dumps(summary, indent=1))
    return {"initial": res.trace[0], "final": res.trace[-1], "steps": len(res.trace)}


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "run": cmd_run,
    "bench": cmd_bench,
    "smooth": cmd_smooth,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "fit": cmd_fit,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ddpose", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", type=Path, required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    out = args.out_dir
    try:
        cfg = json.loads(args.config.read_text()) if args.config else {}
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, args.seed, out)
    except (BlobFormatError, ManifestError) as e:
        record = {"command": args.command, **e.to_record()}
    except (ValueError, KeyError, OSError, ArithmeticError, RuntimeError) as e:
        record = {"command": args.command, "error": type(e).__name__, "message": str(e)}
    else:
        print(json.dumps(result, indent=1, default=float))
        return 0
    print(json.dumps(record), file=sys.stderr)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(json.dumps(record))
    except OSError:
        pass
    return 1


if __name__ == "__main__":
    sys.exit(main())
