"""Time the compiled and numpy backends on one epoch's worth of batches.

    python benchmarks/bench_kernel.py [--repeats 5] [--batch 64]

Each workload is a packed synthetic training set; every backend sees the
same batches and negative draws, and the script checks that their losses agree.
"""
import argparse
import time

import numpy as np

from maxmatch import kernels
from maxmatch.experiments import ExperimentConfig, split_records, task_spec, training_problem
from maxmatch.model import GradBuffer, init_params
from maxmatch.synth import SynthConfig, generate

WORKLOADS = {
    "mil K=5": ("mil", SynthConfig(n_groups=500, group_size=5), 16),
    "pll 10 classes": ("pll", SynthConfig(n_classes=10, n_groups=1500, tau=4), 16),
    "rs 200 items": ("rs", SynthConfig(n_groups=500), 16),
    "rs 20k items (sampled)": ("rs", SynthConfig(n_items=20000, n_clusters=1000,
                                                 n_groups=2000), 32),
}


def build(task, synth, dim):
    cfg = ExperimentConfig(task=task, dim=dim, synth=synth)
    spec = task_spec(cfg)
    params = init_params(spec.spec_f, spec.spec_g, 0)
    packed = training_problem(cfg, spec, params, split_records(cfg, generate(task, synth)).train)
    return spec, params, packed


def epoch(packed, params, match, backend, batch):
    grad = GradBuffer.zeros_like(params)
    rng = np.random.default_rng(0)
    total = 0.0
    for start in range(0, len(packed), batch):
        idx = np.arange(start, min(start + batch, len(packed)))
        grad.zero()
        losses, _ = packed.loss_grad(params, idx, match, grad, rng=rng, backend=backend)
        total += losses.sum()
    return total


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy backend only")
    print(f"{'workload':24s} {'groups':>7s} " + " ".join(f"{n:>10s}" for n in backends)
          + "   speedup")
    for name, (task, synth, dim) in WORKLOADS.items():
        spec, params, packed = build(task, synth, dim)
        match = spec.match_config()
        best, totals = {}, {}
        for bname, fn in backends.items():
            epoch(packed, params, match, fn, args.batch)  # warm-up
            times = []
            for _ in range(args.repeats):
                t0 = time.perf_counter()
                totals[bname] = epoch(packed, params, match, fn, args.batch)
                times.append(time.perf_counter() - t0)
            best[bname] = min(times)
        vals = list(totals.values())
        assert np.allclose(vals, vals[0], rtol=1e-10), totals
        speed = best["python"] / best["cython"] if "cython" in best else float("nan")
        print(f"{name:24s} {len(packed):7d} "
              + " ".join(f"{best[n] * 1e3:8.1f}ms" for n in backends) + f"   {speed:6.2f}x")


if __name__ == "__main__":
    main()
