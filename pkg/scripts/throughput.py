"""Timing of the hot paths: soft render, render + gradient, and one refine iteration.

    python3 scripts/throughput.py [--size 256] [--repeat 20]
"""
import argparse
import time

import numpy as np

from handshadow.objective import Problem, rig_for
from handshadow.render import SceneConfig, binarize, render_soft
from handshadow.rig import apply_shape, load_rig, pose_hand
from handshadow.synth import make_case


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    scene = SceneConfig(image_width=args.size, image_height=args.size)
    rig = load_rig()
    case = make_case(np.random.default_rng(0), scene, rig)
    hands = [pose_hand(apply_shape(rig_for(rig, p.side), p.shape), p) for p in case["poses"]]
    problem = Problem(scene, rig, case["poses"], binarize(case["soft"]))
    x = problem.initial_vector()
    render_soft(scene, hands)  # compile
    problem.evaluate(x)

    ncap = sum(len(h.rig.radii) for h in hands)
    for name, fn in [
        (f"render_soft ({ncap} capsules)", lambda: render_soft(scene, hands)),
        ("objective value", lambda: problem.evaluate(x, need_grad=False)),
        ("objective value + gradient", lambda: problem.evaluate(x)),
    ]:
        lo, med = best_of(fn, args.repeat)
        print(f"{name:32s} best {lo * 1e3:7.2f} ms   median {med * 1e3:7.2f} ms")
    lo, med = best_of(lambda: problem.evaluate(x), args.repeat)
    print(f"6000-iteration estimate: {6000 * med:.0f} s")


if __name__ == "__main__":
    main()
