"""Runtime scaling of the direct pipeline vs. the top-down crop simulator."""

import csv
import statistics
import time
from dataclasses import asdict, dataclass

from .pipeline import init_weights, run_direct, run_topdown_sim
from .scene import generate_scene

PIPELINES = ("direct", "topdown-sim")
CSV_FIELDS = ["pipeline", "n", "sparsity", "seconds", "achieved_sparsity", "repeats", "parallel"]
WARMUP = 2
MIN_TICKS = 10


class TimerResolutionError(RuntimeError):
    pass


@dataclass
class BenchRecord:
    pipeline: str
    n: int
    sparsity: float
    seconds: float
    achieved_sparsity: float
    repeats: int
    parallel: bool = False


def time_median(fn, repeats, warmup=WARMUP):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    med = statistics.median(times)
    tick = time.get_clock_info("perf_counter").resolution
    if med < MIN_TICKS * tick:
        raise TimerResolutionError("increase problem size")
    return med


def bench_scaling(instance_counts, sparsities, repeats=5, base_res=256, seed=0,
                  pipelines=PIPELINES, crop_size=56, parallel=False):
    """Median wall time for every (pipeline, n, sparsity) combination."""
    if repeats < 5:
        raise ValueError("repeats must be at least 5")
    weights = init_weights(seed)
    records = []
    for n in instance_counts:
        for sparsity in sparsities:
            scene = generate_scene(seed, n, sparsity, base_res, channels=weights.fcn.width)
            for pipeline in pipelines:
                if pipeline == "direct":
                    fn = lambda: run_direct(scene, weights, mask_source="gt")
                elif pipeline == "topdown-sim":
                    fn = lambda: run_topdown_sim(scene, weights, crop_size, parallel)
                else:
                    raise ValueError(f"unknown pipeline {pipeline!r}")
                records.append(BenchRecord(
                    pipeline, n, sparsity, time_median(fn, repeats), scene.sparsity, repeats,
                    parallel and pipeline == "topdown-sim",
                ))
    return records


def write_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow(asdict(r))


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        BenchRecord(r["pipeline"], int(r["n"]), float(r["sparsity"]), float(r["seconds"]),
                    float(r["achieved_sparsity"]), int(r["repeats"]), r["parallel"] == "True")
        for r in rows
    ]
