"""Benchmark harness: sweep case directories, select and refine hypotheses, write a report."""
from __future__ import annotations

import csv
import io as _io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from handshadow import __version__
from handshadow.config import RunConfig, scene_digest
from handshadow.hypothesis import (
    Hypothesis,
    Provenance,
    composite_score,
    select_top_k,
    synthesize_hypotheses,
)
from handshadow.io import DataError, load_poses, read_mask, read_saliency, save_poses, write_mask, write_soft
from handshadow.refine import refine
from handshadow.rig import HandRig, RigError
from handshadow.synth import neutral_pair

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("iou", "chamfer", "dino_semantic", "score")
RESERVED_COLUMNS = ("lpips", "clip_global", "clip_semantic", "dino_global")  # filled by external tools
REPORT_COLUMNS = (
    "case", "status", *METRIC_COLUMNS, *RESERVED_COLUMNS,
    "iterations", "termination", "hypothesis", "saliency_missing", "error",
)


@dataclass
class CaseRecord:
    case: str
    status: str = "ok"
    iou: float = float("nan")
    chamfer: float = float("nan")
    dino_semantic: float = float("nan")
    score: float = float("nan")
    iterations: int = 0
    termination: str = ""
    hypothesis: str = ""
    saliency_missing: bool = False
    error: str = ""
    wall_time: float = 0.0  # kept out of the report body

    def row(self) -> list:
        def num(v):
            return repr(float(v)) if self.status == "ok" else ""
        return [
            self.case, self.status, *(num(getattr(self, c)) for c in METRIC_COLUMNS), *("" for _ in RESERVED_COLUMNS),
            self.iterations, self.termination, self.hypothesis, int(self.saliency_missing), self.error,
        ]


@dataclass
class BenchmarkReport:
    records: list
    version: str
    config_digest: str
    config: dict = field(default_factory=dict)

    def means(self) -> dict:
        ok = [r for r in self.records if r.status == "ok"]
        if not ok:
            return {c: None for c in METRIC_COLUMNS}
        return {c: float(np.mean([getattr(r, c) for r in ok])) for c in METRIC_COLUMNS}

    def csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in self.records:
            writer.writerow(r.row())
        return buf.getvalue()

    def summary(self) -> dict:
        cfg = self.config
        return {
            "version": self.version,
            "config_digest": self.config_digest,
            "cases": len(self.records),
            "failed": sum(r.status != "ok" for r in self.records),
            "means": self.means(),
            "constants": {
                "weights": [cfg["weights"][k] for k in ("w_sim", "w_atm", "w_pen", "w_dist")],
                "tau_dist": cfg["weights"]["tau_dist"],
                "learning_rate": cfg["refine"]["learning_rate"],
                "decay_factor": cfg["refine"]["decay_factor"],
                "decay_at_iteration": cfg["refine"]["decay_at_iteration"],
                "max_iterations": cfg["refine"]["max_iterations"],
                "n_hypotheses": cfg["hypotheses"]["n_hypotheses"],
                "top_k": cfg["hypotheses"]["top_k"],
                "saliency_kernel": cfg["saliency"]["kernel_size"],
                "screen_distance": cfg["scene"]["screen_distance"],
                "tau_semantic": cfg["tau_semantic"],
            },
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.csv())
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        timings = {r.case: r.wall_time for r in self.records}
        (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")


def find_cases(case_dir) -> list:
    root = Path(case_dir)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    cases = sorted(p for p in root.iterdir() if p.is_dir() and (p / "target.png").is_file())
    if not cases:
        raise DataError(f"{root}: no case directories with a target.png")
    return cases


def load_hypotheses(hyp_dir) -> list:
    """Every ``*.pose`` file in ``hyp_dir`` (sorted by name) as a file hypothesis named by its stem."""
    hyp_dir = Path(hyp_dir)
    out = []
    if hyp_dir.is_dir():
        for path in sorted(hyp_dir.glob("*.pose")):
            poses = load_poses(path)
            if len(poses) != 2:
                raise DataError(f"{path}: a hypothesis needs both hands")
            out.append(Hypothesis(poses[0], poses[1], Provenance("file"), path.stem))
    return out


def load_score_overrides(case: Path) -> Optional[dict]:
    path = case / "scores.json"
    if not path.is_file():
        return None
    data = json.loads(path.read_text())
    if not isinstance(data, dict) or not all(isinstance(v, (int, float)) for v in data.values()):
        raise DataError(f"{path}: expected an object mapping hypothesis id to a number")
    return {str(k): float(v) for k, v in data.items()}


def case_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def solve_case(target, saliency, hypotheses, rig: HandRig, config: RunConfig, seed: int,
               overrides: Optional[dict] = None, threads: int = 1):
    """Expand hypotheses to N, keep the top K, refine each, return (best result, its hypothesis, score)."""
    hc = config.hypotheses
    pool = synthesize_hypotheses(
        hypotheses, hc.n_hypotheses, seed, hc.joint_sigma, hc.translation_sigma,
        plane_x=config.scene.light_position[0], include_swaps=hc.include_swaps,
    )
    top = select_top_k(pool, config.scene, rig, target, hc.top_k, hc.score_iou_weight,
                       hc.score_chamfer_weight, overrides, threads)
    best = None
    for h in top:
        res = refine(config.scene, rig, h.poses, target, saliency, config.weights, config.refine, config.tau_semantic)
        score = composite_score(res.mask, target, hc.score_iou_weight, hc.score_chamfer_weight)
        if best is None or score < best[2]:
            best = (res, h, score)
    return best


def run_case(case: Path, index: int, rig: HandRig, config: RunConfig, seed: int, out_dir: Optional[Path]) -> CaseRecord:
    rec = CaseRecord(case.name)
    start = time.perf_counter()
    try:
        target = read_mask(case / "target.png")
        if target.shape != config.scene.shape:
            raise DataError(f"target is {target.shape[1]}x{target.shape[0]}, scene is "
                            f"{config.scene.image_width}x{config.scene.image_height}")
        sal_path = case / "saliency.png"
        if sal_path.is_file():
            saliency = read_saliency(sal_path, target.shape, config.saliency.kernel_size, config.saliency.sigma)
        else:
            saliency = np.zeros(target.shape)
            rec.saliency_missing = True
        hyps = load_hypotheses(case / "hypotheses") or [neutral_pair()]
        res, h, score = solve_case(target, saliency, hyps, rig, config, case_seed(seed, index),
                                   load_score_overrides(case))
        rec.iou, rec.chamfer, rec.dino_semantic = res.metrics["iou"], res.metrics["chamfer"], res.metrics["dino_semantic"]
        rec.score, rec.iterations, rec.termination, rec.hypothesis = score, res.iterations, res.termination, h.id
        if out_dir is not None:
            dest = out_dir / case.name
            dest.mkdir(parents=True, exist_ok=True)
            save_poses(dest / "final.pose", res.poses, scene_digest(config.scene))
            write_mask(dest / "mask.png", res.mask)
            write_soft(dest / "soft.png", res.soft)
            (dest / "trace.csv").write_text(res.trace_csv())
    except (DataError, RigError, ValueError, RuntimeError, OSError) as exc:
        log.warning("case %s failed: %s", case.name, exc)
        rec.status, rec.error = "failed", f"{type(exc).__name__}: {exc}"
    rec.wall_time = time.perf_counter() - start
    return rec


def run_benchmark(case_dir, rig: HandRig, config: RunConfig | None = None, seed: int = 0,
                  out_dir=None, threads: int = 1) -> BenchmarkReport:
    """Run every case under ``case_dir``; a failing case is recorded, an empty directory raises."""
    config = config or RunConfig()
    cases = find_cases(case_dir)
    out = Path(out_dir) if out_dir is not None else None

    def job(item):
        i, case = item
        return run_case(case, i, rig, config, seed, out)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(job, enumerate(cases)))
    else:
        records = [job(item) for item in enumerate(cases)]
    cfg = config.to_dict()
    report = BenchmarkReport(records, __version__, config.digest(), cfg)
    if out is not None:
        report.write(out)
    return report
