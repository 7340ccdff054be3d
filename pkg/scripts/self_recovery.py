"""Self-recovery experiment: perturb synthetic ground truth, refine, report IoU per case.

    python3 scripts/self_recovery.py --count 10 --seed 7 [--config run.json] [--out DIR]

Cases come from the same generator as ``handshadow synth --init``. A case
counts as recovered when the refined binarized mask reaches IoU >= --iou.
"""
import argparse
import dataclasses
import time
from pathlib import Path

import numpy as np

from handshadow.config import RunConfig, load_config
from handshadow.io import save_poses, write_mask
from handshadow.metrics import iou
from handshadow.refine import refine
from handshadow.render import binarize
from handshadow.rig import load_rig
from handshadow.synth import SynthConfig, make_case, perturb_pair, render_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--iou", type=float, default=0.95)
    ap.add_argument("--config")
    ap.add_argument("--out", help="write per-case truth, init, final poses and masks here")
    args = ap.parse_args()

    config = load_config(args.config) if args.config else RunConfig()
    rc = config.refine
    if rc.stop_metric_threshold is None:
        rc = dataclasses.replace(rc, stop_metric_threshold=args.iou)
    scene, rig = config.scene, load_rig()

    hits = 0
    print("case  init_iou  final_iou  termination       iters   seconds")
    for i in range(args.count):
        rng = np.random.default_rng([args.seed, i])
        case = make_case(rng, scene, rig, SynthConfig())
        init = perturb_pair(rng, case["poses"])
        start_iou = iou(binarize(render_pair(scene, rig, init)[0], scene.binarize_threshold), case["target"])
        t0 = time.perf_counter()
        res = refine(scene, rig, init, case["target"], None, config.weights, rc, config.tau_semantic)
        dt = time.perf_counter() - t0
        ok = res.metrics["iou"] >= args.iou
        hits += ok
        print(f"{i:4d}  {start_iou:8.4f}  {res.metrics['iou']:9.4f}  {res.termination:16s}  {res.iterations:5d}  {dt:8.1f}"
              f"{'' if ok else '  *'}", flush=True)
        if args.out:
            d = Path(args.out) / f"case_{i:03d}"
            d.mkdir(parents=True, exist_ok=True)
            save_poses(d / "truth.pose", case["poses"])
            save_poses(d / "init.pose", init)
            save_poses(d / "final.pose", res.poses)
            write_mask(d / "target.png", case["target"])
            write_mask(d / "final.png", res.mask)
    print(f"recovered {hits}/{args.count} at IoU >= {args.iou}")


if __name__ == "__main__":
    main()
