"""Random plausible two-hand poses and forward-rendered fixture cases."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from handshadow.objective import (
    ObjectiveWeights,
    _inter_one_way,
    distance_loss,
    rig_for,
    self_penetration_loss,
)
from handshadow.render import ProjectionError, SceneConfig, binarize, render_soft
from handshadow.rig import HandPose, HandRig, Side, apply_shape, compose_tsb, pose_hand, sample_surface

# Wrist positions between light and screen; near the light so the shadow fills much of the frame.
DEFAULT_CENTERS = {Side.LEFT: (-0.06, -0.08, 0.5), Side.RIGHT: (0.06, -0.08, 0.5)}


@dataclass(frozen=True)
class SynthConfig:
    limit_fraction: float = 0.8  # joint components drawn from this central fraction of each limit band
    orient_sigma: float = 0.25  # radians
    translation_jitter: tuple = (0.02, 0.02, 0.05)  # meters, uniform half-widths
    max_tries: int = 200


def random_pose(rng: np.random.Generator, rig: HandRig, side, center=None, config: SynthConfig = SynthConfig()) -> HandPose:
    side = Side(side)
    rig = rig_for(rig, side)
    lo, hi = rig.limits[..., 0], rig.limits[..., 1]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * config.limit_fraction
    comps = rng.uniform(mid - half, mid + half)
    joints = np.zeros((15, 3))
    for k, j in enumerate(rig.limit_joints):
        joints[int(j) - 1] = compose_tsb(comps[k], rig.tsb_frames[k])
    center = np.asarray(DEFAULT_CENTERS[side] if center is None else center, dtype=np.float64)
    jitter = np.asarray(config.translation_jitter)
    return HandPose(
        side,
        rng.normal(0.0, config.orient_sigma, 3),
        joints,
        np.zeros(10),
        center + rng.uniform(-jitter, jitter),
    )


def neutral_pair() -> list:
    """Both hands at rest pose at the default wrist positions."""
    return [HandPose.zero(side, DEFAULT_CENTERS[side]) for side in (Side.LEFT, Side.RIGHT)]


def pair_is_plausible(scene: SceneConfig, rig: HandRig, poses, weights: ObjectiveWeights = ObjectiveWeights()) -> bool:
    """No self/inter penetration, wrists within tau_dist, and both shadows inside the image."""
    hands = []
    for pose in poses:
        shaped = apply_shape(rig_for(rig, pose.side), pose.shape)
        hands.append(pose_hand(shaped, pose))
    if any(self_penetration_loss(h) > 0 for h in hands):
        return False
    pa = sample_surface(hands[0], weights.samples_per_capsule)
    pb = sample_surface(hands[1], weights.samples_per_capsule)
    if _inter_one_way(pa, pb, hands[1])[0] > 0 or _inter_one_way(pb, pa, hands[0])[0] > 0:
        return False
    wrists = [h.joint_positions[0] for h in hands]
    if distance_loss(wrists[0], wrists[1], weights.tau_dist) > 0:
        return False
    try:
        mask = binarize(render_soft(scene, hands), scene.binarize_threshold)
    except ProjectionError:
        return False
    border = np.concatenate([mask[0], mask[-1], mask[:, 0], mask[:, -1]])
    return mask.any() and not border.any()


def random_pair(rng: np.random.Generator, scene: SceneConfig, rig: HandRig, config: SynthConfig = SynthConfig()):
    for _ in range(config.max_tries):
        poses = [random_pose(rng, rig, Side.LEFT, config=config), random_pose(rng, rig, Side.RIGHT, config=config)]
        if pair_is_plausible(scene, rig, poses):
            return poses
    raise RuntimeError(f"no plausible pose pair after {config.max_tries} draws")


def perturb_pair(rng: np.random.Generator, poses, joint_sigma: float = 0.1, translation_sigma: float = 0.05):
    """Gaussian noise on every rotation (orientation and joints) and on wrist translations."""
    out = []
    for pose in poses:
        out.append(
            HandPose(
                pose.side,
                pose.global_orient + rng.normal(0.0, joint_sigma, 3),
                pose.joint_rotations + rng.normal(0.0, joint_sigma, (15, 3)),
                pose.shape,
                pose.wrist_translation + rng.normal(0.0, translation_sigma, 3),
            )
        )
    return out


def render_pair(scene: SceneConfig, rig: HandRig, poses):
    """(combined soft mask, per-hand soft masks) of a pose pair."""
    hands = [pose_hand(apply_shape(rig_for(rig, p.side), p.shape), p) for p in poses]
    return render_soft(scene, hands), [render_soft(scene, [h]) for h in hands]


def make_case(rng: np.random.Generator, scene: SceneConfig, rig: HandRig, config: SynthConfig = SynthConfig()) -> dict:
    """A plausible pose pair whose per-hand binarized masks union to the combined mask exactly.

    Returns poses (left, right), the combined soft mask and the three binary masks.
    """
    for _ in range(config.max_tries):
        poses = random_pair(rng, scene, rig, config)
        soft, (soft_l, soft_r) = render_pair(scene, rig, poses)
        t = scene.binarize_threshold
        target, left, right = binarize(soft, t), binarize(soft_l, t), binarize(soft_r, t)
        if np.array_equal(target, left | right):
            return {"poses": poses, "soft": soft, "target": target, "left": left, "right": right}
    raise RuntimeError(f"no case with a consistent per-hand union after {config.max_tries} draws")
