"""Compare the numba kernels against their numpy fallbacks.

Times pairwise IoU, weighted-box clustering, and scoring all 127
configurations of the default profile on real simulator steps, then checks
both paths agree.

    python benchmarks/bench_kernels.py [--steps 200] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ctxfuse import _kernels
from ctxfuse.fusion import batch_config_losses, pack_detections
from ctxfuse.profile_io import load_profile
from ctxfuse.scenario import branch_detections, generate_trace, parse_segments


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200, help="simulator steps to score")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    profile = load_profile("default")
    spec = ",".join(f"{c}:{max(1, args.steps // 8)}" for c in ("city", "fog", "junction", "motorway", "night", "rain", "rural", "snow"))
    trace = generate_trace(parse_segments(spec), seed=args.seed)
    _, bids, mask = profile.membership()
    steps = [(s, [branch_detections(s, trace, profile)[b] for b in bids]) for s in trace]

    rng = np.random.default_rng(args.seed)
    a = rng.uniform(0, 500, (400, 2))
    boxes_a = np.concatenate([a, a + rng.uniform(5, 80, (400, 2))], 1)
    b = rng.uniform(0, 500, (400, 2))
    boxes_b = np.concatenate([b, b + rng.uniform(5, 80, (400, 2))], 1)

    packed = [pack_detections(lists) for _, lists in steps]

    def iou_run(use):
        return lambda: [_kernels.iou_matrix(boxes_a, boxes_b, use) for _ in range(20)]

    def wbf_run(use):
        return lambda: [_kernels.wbf_cluster(p[0], p[1], p[2], 0.55, use) for p in packed]

    def score_run(use):
        return lambda: np.array([
            batch_config_losses(lists, mask, s.ground_truth, profile.fusion, profile.loss, use_numba=use) for s, lists in steps
        ])

    # compile outside the timed region
    for fn in (iou_run(True), wbf_run(True), score_run(True)):
        fn()

    print(f"{'kernel':28s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    for name, make in (("iou 400x400 (x20)", iou_run), (f"wbf cluster ({len(steps)} steps)", wbf_run), (f"score 127 configs ({len(steps)} steps)", score_run)):
        t_np, out_np = best_of(make(False), args.repeat)
        t_nb, out_nb = best_of(make(True), args.repeat)
        print(f"{name:28s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:7.1f}x")
        if name.startswith("score"):
            diff = float(np.max(np.abs(out_np - out_nb)))
            print(f"  max |numpy - numba| over {out_np.size} losses: {diff:.2e}")
            assert diff <= 1e-12


if __name__ == "__main__":
    main()
