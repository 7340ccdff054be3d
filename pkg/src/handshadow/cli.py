"""``handshadow`` command line: render, synth, refine, eval.

Every flag can also come from an environment variable named
``HANDSHADOW_<FLAG>`` (upper case, dashes as underscores), e.g.
``HANDSHADOW_THREADS=4``. Command-line values win over the environment.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from handshadow import __version__
from handshadow.bench import load_hypotheses, run_benchmark, solve_case
from handshadow.config import RunConfig, load_config, scene_digest
from handshadow.io import (
    DataError,
    load_poses,
    read_mask,
    read_saliency,
    save_poses,
    write_mask,
    write_soft,
)
from handshadow.objective import ObjectiveWeights, rig_for
from handshadow.refine import NumericalError, refine
from handshadow.render import ProjectionError, SceneConfig, binarize, render_soft
from handshadow.rig import RigError, apply_shape, load_rig, pose_hand
from handshadow.synth import SynthConfig, make_case, perturb_pair

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
ENV_PREFIX = "HANDSHADOW_"

log = logging.getLogger("handshadow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("shared options")
    g.add_argument("--config", default=_env("config"), help="run configuration JSON")
    g.add_argument("--scene", default=_env("scene"), help="scene JSON (overrides the config's scene)")
    g.add_argument("--rig", default=_env("rig"), help="rig JSON (default: bundled right-hand rig)")
    g.add_argument("--weights", default=_env("weights"), help="objective weights JSON")
    g.add_argument("--seed", type=int, default=int(_env("seed", 0)))
    g.add_argument("--threads", type=int, default=int(_env("threads", 1)))
    g.add_argument("--iterations", type=int, default=_opt_int(_env("iterations")), help="max refinement iterations")
    g.add_argument("--topk", type=int, default=_opt_int(_env("topk")), help="hypotheses kept for refinement")
    g.add_argument("--n-hypotheses", type=int, default=_opt_int(_env("n_hypotheses")), help="hypothesis pool size")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _opt_int(value):
    return None if value is None else int(value)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="handshadow", description="Inverse hand-shadow posing with capsule hands.")
    parser.add_argument("--version", action="version", version=f"handshadow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("render", parents=[common], help="render a pose file to mask images")
    p.add_argument("pose")
    p.add_argument("-o", "--output", required=True, help="binary mask (.png or .pgm)")
    p.add_argument("--soft", help="16-bit PNG of the soft coverage")

    p = sub.add_parser("synth", parents=[common], help="write forward-rendered fixture cases")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("-o", "--output", required=True, help="directory receiving case_XXX folders")
    p.add_argument("--init", action="store_true",
                   help="also write hypotheses/init.pose: the truth perturbed by 0.1 rad and 5 cm noise")

    p = sub.add_parser("refine", parents=[common], help="fit hand poses to a target mask")
    p.add_argument("target")
    p.add_argument("--saliency")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--init", help="initial pose file (both hands)")
    src.add_argument("--hypotheses", help="directory of *.pose hypothesis files")
    p.add_argument("--scores", help="JSON object mapping hypothesis id to an externally computed score")
    p.add_argument("-o", "--output", required=True, help="output directory")

    p = sub.add_parser("eval", parents=[common], help="benchmark a directory of cases")
    p.add_argument("cases")
    p.add_argument("-o", "--output", required=True, help="report directory")
    return parser


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{what} {path}: {exc}") from exc


def resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.scene:
        changes["scene"] = SceneConfig.from_dict(_read_json(args.scene, "scene"))
    if args.weights:
        changes["weights"] = ObjectiveWeights.from_dict(_read_json(args.weights, "weights"))
    if args.iterations is not None:
        if args.iterations < 1:
            raise UsageError("--iterations must be >= 1")
        rc = config.refine
        changes["refine"] = dataclasses.replace(
            rc, max_iterations=args.iterations, decay_at_iteration=min(rc.decay_at_iteration, args.iterations)
        )
    hc = config.hypotheses
    n = hc.n_hypotheses if args.n_hypotheses is None else args.n_hypotheses
    k = hc.top_k if args.topk is None else args.topk
    if n < 1 or k < 1:
        raise UsageError("--n-hypotheses and --topk must be >= 1")
    if k > n:
        raise UsageError(f"--topk {k} exceeds the {n} available hypotheses")
    changes["hypotheses"] = dataclasses.replace(hc, n_hypotheses=n, top_k=k)
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    return dataclasses.replace(config, **changes)


def _hands(rig, poses):
    return [pose_hand(apply_shape(rig_for(rig, p.side), p.shape), p) for p in poses]


def cmd_render(args, config: RunConfig, rig) -> int:
    poses = load_poses(args.pose)
    soft = render_soft(config.scene, _hands(rig, poses))
    write_mask(args.output, binarize(soft, config.scene.binarize_threshold))
    if args.soft:
        write_soft(args.soft, soft)
    return EXIT_OK


def cmd_synth(args, config: RunConfig, rig) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    out = Path(args.output)
    digest = scene_digest(config.scene)
    for i in range(args.count):
        rng = np.random.default_rng([args.seed, i])
        case = make_case(rng, config.scene, rig, SynthConfig())
        dest = out / f"case_{i:03d}"
        dest.mkdir(parents=True, exist_ok=True)
        write_mask(dest / "target.png", case["target"])
        write_mask(dest / "left.png", case["left"])
        write_mask(dest / "right.png", case["right"])
        save_poses(dest / "truth.pose", case["poses"], digest)
        if args.init:
            (dest / "hypotheses").mkdir(exist_ok=True)
            save_poses(dest / "hypotheses" / "init.pose", perturb_pair(rng, case["poses"]), digest)
    return EXIT_OK


def cmd_refine(args, config: RunConfig, rig) -> int:
    target = read_mask(args.target)
    if target.shape != config.scene.shape:
        raise DataError(f"target is {target.shape[1]}x{target.shape[0]}, scene expects "
                        f"{config.scene.image_width}x{config.scene.image_height}")
    if args.saliency:
        saliency = read_saliency(args.saliency, target.shape, config.saliency.kernel_size, config.saliency.sigma)
    else:
        log.warning("no saliency given; using zero saliency")
        saliency = np.zeros(target.shape)
    out = Path(args.output)
    if args.init:
        poses = load_poses(args.init)
        if len(poses) != 2:
            raise DataError(f"{args.init}: refinement needs both hands")
        res = refine(config.scene, rig, poses, target, saliency, config.weights, config.refine, config.tau_semantic)
        chosen = "init"
    else:
        hyps = load_hypotheses(Path(args.hypotheses))
        if not hyps:
            raise DataError(f"{args.hypotheses}: no *.pose files")
        overrides = None
        if args.scores:
            overrides = {str(k): float(v) for k, v in _read_json(args.scores, "scores").items()}
        res, h, _ = solve_case(target, saliency, hyps, rig, config, args.seed, overrides, args.threads)
        chosen = h.id
    out.mkdir(parents=True, exist_ok=True)
    save_poses(out / "final.pose", res.poses, scene_digest(config.scene))
    write_mask(out / "mask.png", res.mask)
    write_soft(out / "soft.png", res.soft)
    (out / "trace.csv").write_text(res.trace_csv())
    summary = {
        "hypothesis": chosen,
        "iterations": res.iterations,
        "termination": res.termination,
        "best_iteration": res.best_iteration,
        "initial_loss": res.initial_loss,
        "final_loss": res.final_loss,
        "final_terms": res.final_terms,
        "metrics": res.metrics,
        "saliency_missing": not args.saliency,
    }
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_eval(args, config: RunConfig, rig) -> int:
    report = run_benchmark(args.cases, rig, config, args.seed, args.output, args.threads)
    means = report.means()
    print(f"{len(report.records)} cases, mean IoU {means['iou']}")
    return EXIT_OK


COMMANDS = {"render": cmd_render, "synth": cmd_synth, "refine": cmd_refine, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        config = resolve_config(args)
        rig = load_rig(args.rig)
        return COMMANDS[args.command](args, config, rig)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"handshadow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"handshadow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, RigError, ProjectionError, ValueError, OSError) as exc:
        print(f"handshadow: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
