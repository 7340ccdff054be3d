"""Candidate pose pairs: file seeds, left/right swaps, seeded perturbations, and render-and-compare ranking."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from handshadow.metrics import boundary_chamfer, iou
from handshadow.objective import rig_for
from handshadow.render import ProjectionError, SceneConfig, binarize, render_soft
from handshadow.rig import HandPose, HandRig, RigError, Side, apply_shape, pose_hand

log = logging.getLogger(__name__)

DEFAULT_N = 20
DEFAULT_K = 3
MAX_REDRAWS = 100


@dataclass(frozen=True)
class Provenance:
    kind: str  # "file", "perturbed" or "swapped"
    seed: Optional[int] = None  # perturbation draw seed
    origin: Optional[str] = None  # id of the hypothesis this one was derived from

    def __post_init__(self):
        if self.kind not in ("file", "perturbed", "swapped"):
            raise ValueError(f"unknown provenance kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "origin": self.origin}


@dataclass(frozen=True)
class Hypothesis:
    left: HandPose
    right: HandPose
    provenance: Provenance = Provenance("file")
    id: str = ""
    score: Optional[float] = None

    def __post_init__(self):
        if self.left.side is not Side.LEFT or self.right.side is not Side.RIGHT:
            raise ValueError("hypothesis needs a left pose and a right pose")
        if self.score is not None and not np.isfinite(self.score):
            raise ValueError("hypothesis score must be finite")

    @property
    def poses(self) -> list:
        return [self.left, self.right]


def swap(left: HandPose, right: HandPose, plane_x: float = 0.0):
    """Mirror both hands through x = plane_x and exchange their roles.

    The new left hand is the mirror of the old right hand and vice versa.
    With plane_x = 0 applying this twice gives back the input bit for bit.
    """
    return right.mirrored(plane_x), left.mirrored(plane_x)


def swap_hypothesis(h: Hypothesis, plane_x: float = 0.0, id: str = "") -> Hypothesis:
    left, right = swap(h.left, h.right, plane_x)
    return Hypothesis(left, right, Provenance("swapped", origin=h.id), id or f"{h.id}~swap")


def _perturb(rng, pose: HandPose, joint_sigma: float, translation_sigma: float) -> HandPose:
    return HandPose(
        pose.side,
        pose.global_orient + rng.normal(0.0, joint_sigma, 3),
        pose.joint_rotations + rng.normal(0.0, joint_sigma, (15, 3)),
        pose.shape,
        pose.wrist_translation + rng.normal(0.0, translation_sigma, 3),
    )


def synthesize_hypotheses(
    seeds: Sequence,
    n: int = DEFAULT_N,
    rng_seed: int = 0,
    joint_sigma: float = 0.1,
    translation_sigma: float = 0.05,
    plane_x: float = 0.0,
    include_swaps: bool = True,
) -> list:
    """n hypotheses: the seeds, then their swaps, then perturbations of that pool in round-robin.

    ``seeds`` holds Hypothesis objects or (left, right) pairs. Perturbation i
    draws from ``default_rng([rng_seed, i, attempt])``; a draw that breaks the pose
    bounds is redrawn up to MAX_REDRAWS times.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not seeds:
        raise ValueError("at least one seed pose pair is required")
    pool = []
    for i, s in enumerate(seeds):
        if isinstance(s, Hypothesis):
            pool.append(s if s.id else replace(s, id=f"seed{i}"))
        else:
            pool.append(Hypothesis(s[0], s[1], Provenance("file"), f"seed{i}"))
    if include_swaps:
        pool += [swap_hypothesis(h, plane_x) for h in list(pool)]
    out = pool[:n]
    i = 0
    while len(out) < n:
        base = pool[i % len(pool)]
        for attempt in range(MAX_REDRAWS):
            rng = np.random.default_rng([rng_seed, i, attempt])
            try:
                left = _perturb(rng, base.left, joint_sigma, translation_sigma)
                right = _perturb(rng, base.right, joint_sigma, translation_sigma)
            except RigError:
                continue
            out.append(Hypothesis(left, right, Provenance("perturbed", seed=rng_seed, origin=base.id), f"p{i:03d}"))
            break
        else:
            raise RigError(f"perturbation {i} of {base.id} broke the pose bounds {MAX_REDRAWS} times")
        i += 1
    return out


def composite_score(mask, target, a: float = 0.5, b: float = 0.5) -> float:
    return a * (1.0 - iou(mask, target)) + b * boundary_chamfer(mask, target)


def render_hypothesis(scene: SceneConfig, rig: HandRig, h: Hypothesis) -> np.ndarray:
    hands = [pose_hand(apply_shape(rig_for(rig, p.side), p.shape), p) for p in h.poses]
    return binarize(render_soft(scene, hands), scene.binarize_threshold)


def score_hypothesis(scene, rig, h: Hypothesis, target, a: float = 0.5, b: float = 0.5, overrides: dict | None = None) -> float:
    """Lower is better; 0 exactly when the binarized render equals the target."""
    if overrides is not None and h.id in overrides:
        return float(overrides[h.id])
    return composite_score(render_hypothesis(scene, rig, h), target, a, b)


def select_top_k(
    hypotheses: Sequence[Hypothesis],
    scene: SceneConfig,
    rig: HandRig,
    target,
    k: int = DEFAULT_K,
    a: float = 0.5,
    b: float = 0.5,
    overrides: dict | None = None,
    threads: int = 1,
) -> list:
    """Score (where unscored), drop failures, stable-sort ascending, keep the first k."""
    if not 1 <= k <= len(hypotheses):
        raise ValueError(f"k={k} outside [1, {len(hypotheses)}]")

    def job(h):
        if h.score is not None:
            return h.score
        try:
            return score_hypothesis(scene, rig, h, target, a, b, overrides)
        except (ProjectionError, RigError) as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            scores = list(pool.map(job, hypotheses))
    else:
        scores = [job(h) for h in hypotheses]

    scored = []
    for h, s in zip(hypotheses, scores):
        if isinstance(s, Exception):
            log.warning("dropping hypothesis %s: %s", h.id, s)
            continue
        scored.append(replace(h, score=float(s)))
    if not scored:
        raise RuntimeError("every hypothesis failed to score")
    scored.sort(key=lambda h: h.score)  # list.sort is stable, so ties keep input order
    return scored[:k]
