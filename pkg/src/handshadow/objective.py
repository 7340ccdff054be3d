"""Refinement objective: silhouette similarity, anatomy, penetration and wrist distance terms."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from handshadow.geometry import segment_segment
from handshadow.render import (
    SceneConfig,
    hands_vjp_from_endpoints,
    project_hands,
    projection_vjp,
    soft_logsum,
)
from handshadow.rig import (
    FREE_SIZE,
    HandPose,
    HandRig,
    PosedHand,
    Side,
    apply_shape,
    capsule_sdf,
    fk_vjp,
    mirror_rig,
    pose_hand,
    rest_surface_samples,
    sample_surface,
)

TERMS = ("sim", "atm", "inter_pen", "self_pen", "pen", "dist")


@dataclass(frozen=True)
class ObjectiveWeights:
    w_sim: float = 10.0
    w_atm: float = 1.0
    w_pen: float = 1.0
    w_dist: float = 1.0
    tau_dist: float = 0.5  # squared meters
    samples_per_capsule: int = 512

    def __post_init__(self):
        for name in ("w_sim", "w_atm", "w_pen", "w_dist"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.tau_dist > 0:
            raise ValueError("tau_dist must be > 0")
        if self.samples_per_capsule < 8:
            raise ValueError("samples_per_capsule must be >= 8")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectiveWeights":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


# ---------------------------------------------------------------------------
# Individual terms
# ---------------------------------------------------------------------------


def _check_dims(*arrays):
    shapes = {np.shape(a) for a in arrays if a is not None}
    if len(shapes) > 1:
        raise ValueError(f"dimension mismatch: {sorted(shapes)}")


def sim_loss(rendered, target, saliency=None) -> float:
    """Saliency-weighted L1: sum (1 + saliency) * |rendered - target|."""
    _check_dims(rendered, target, saliency)
    weight = 1.0 if saliency is None else 1.0 + np.asarray(saliency, dtype=np.float64)
    return float(np.sum(weight * np.abs(np.asarray(rendered, dtype=np.float64) - target)))


def sim_adjoint(target, saliency=None) -> np.ndarray:
    """d sim_loss / d rendered for rendered in [0, 1] and a binary target."""
    target = np.asarray(target, dtype=np.float64)
    weight = 1.0 if saliency is None else 1.0 + np.asarray(saliency, dtype=np.float64)
    return weight * (1.0 - 2.0 * target)


def _exceedance(components, limits):
    over = np.maximum(components - limits[..., 1], 0.0)
    under = np.maximum(limits[..., 0] - components, 0.0)
    return over, under


def anatomy_loss(pose: HandPose, rig: HandRig) -> float:
    """Squared excursion of every twist/splay/bend component outside its limit band."""
    comps = _tsb_components(pose.joint_rotations, rig)
    over, under = _exceedance(comps, rig.limits)
    return float(np.sum(over**2) + np.sum(under**2))


def _joint_slots(rig: HandRig) -> np.ndarray:
    root = int(rig.order[0])
    others = [j for j in range(rig.num_joints) if j != root]
    slot = {j: k for k, j in enumerate(others)}
    return np.array([slot[int(j)] for j in rig.limit_joints])


def _tsb_components(joint_rotations, rig: HandRig) -> np.ndarray:
    rot = np.asarray(joint_rotations)[_joint_slots(rig)]
    return np.einsum("kab,kb->ka", rig.tsb_frames, rot)


def anatomy_grad(pose: HandPose, rig: HandRig):
    """(loss, d loss / d joint_rotations (15, 3))."""
    slots = _joint_slots(rig)
    rot = pose.joint_rotations[slots]
    comps = np.einsum("kab,kb->ka", rig.tsb_frames, rot)
    over, under = _exceedance(comps, rig.limits)
    loss = float(np.sum(over**2) + np.sum(under**2))
    dcomp = 2.0 * (over - under)
    grad = np.zeros((15, 3))
    grad[slots] = np.einsum("kab,ka->kb", rig.tsb_frames, dcomp)
    return loss, grad


def distance_loss(t_left, t_right, tau_dist: float) -> float:
    """Squared wrist distance, counted only once it reaches ``tau_dist``."""
    diff = np.asarray(t_left, dtype=np.float64) - np.asarray(t_right, dtype=np.float64)
    d = float(diff @ diff)
    return d if d >= tau_dist else 0.0


def _inter_one_way(points_a, points_b, hand_b: PosedHand):
    """Samples of A inside B's capsules -> (loss, grad on A samples, grad on B samples)."""
    ga = np.zeros_like(points_a)
    gb = np.zeros_like(points_b)
    # only samples inside B's bounding box, grown by its largest radius, can be inside B
    reach = hand_b.radii.max()
    lo = np.minimum(hand_b.p0, hand_b.p1).min(axis=0) - reach
    hi = np.maximum(hand_b.p0, hand_b.p1).max(axis=0) + reach
    near = np.flatnonzero(np.all((points_a > lo) & (points_a < hi), axis=1))
    if near.size == 0:
        return 0.0, ga, gb
    sdf = capsule_sdf(points_a[near], hand_b.p0, hand_b.p1, hand_b.radii)
    inside = near[np.min(sdf, axis=1) < 0.0]
    if inside.size == 0:
        return 0.0, ga, gb
    p = points_a[inside]
    _, nearest = cKDTree(points_b).query(p)
    diff = p - points_b[nearest]
    n = inside.size
    loss = float(np.sum(np.sum(diff * diff, axis=1)) / n)
    ga[inside] = 2.0 * diff / n
    np.add.at(gb, nearest, -2.0 * diff / n)
    return loss, ga, gb


def inter_penetration_loss(hand_a: PosedHand, hand_b: PosedHand, samples_per_capsule: int = 512) -> float:
    """Mean squared distance from penetrating samples to the nearest sample of the other hand, both ways."""
    pa = sample_surface(hand_a, samples_per_capsule)
    pb = sample_surface(hand_b, samples_per_capsule)
    ab, _, _ = _inter_one_way(pa, pb, hand_b)
    ba, _, _ = _inter_one_way(pb, pa, hand_a)
    return ab + ba


def _self_pairs(rig: HandRig):
    adj = rig.capsule_adjacency()
    i, k = np.nonzero(np.triu(~adj, 1))
    return i, k


def self_penetration_loss(hand: PosedHand) -> float:
    """Squared overlap depth over non-adjacent capsule pairs."""
    return _self_pen(hand)[0]


def _self_pen(hand: PosedHand):
    i, k = _self_pairs(hand.rig)
    gp0 = np.zeros_like(hand.p0)
    gp1 = np.zeros_like(hand.p1)
    if i.size == 0:
        return 0.0, gp0, gp1
    dist, s, t, cp, cq = segment_segment(hand.p0[i], hand.p1[i], hand.p0[k], hand.p1[k])
    depth = np.maximum(hand.radii[i] + hand.radii[k] - dist, 0.0)
    loss = float(np.sum(depth**2))
    hit = depth > 0
    if np.any(hit):
        n = np.zeros_like(cp)
        ok = hit & (dist > 0)
        n[ok] = (cp[ok] - cq[ok]) / dist[ok, None]
        g = (-2.0 * depth)[:, None] * n  # dL/d(cp - cq) direction
        np.add.at(gp0, i, (1.0 - s)[:, None] * g)
        np.add.at(gp1, i, s[:, None] * g)
        np.add.at(gp0, k, -(1.0 - t)[:, None] * g)
        np.add.at(gp1, k, -t[:, None] * g)
    return loss, gp0, gp1


# ---------------------------------------------------------------------------
# Full objective
# ---------------------------------------------------------------------------


def rig_for(rig: HandRig, side: Side | str) -> HandRig:
    return rig if rig.side == Side(side) else mirror_rig(rig)


@dataclass
class Evaluation:
    total: float
    terms: dict
    grad: Optional[np.ndarray]
    soft: np.ndarray
    hands: list


@dataclass
class Problem:
    """Everything fixed during refinement: scene, shaped rigs, target, saliency, weights.

    The free vector is ``(theta_l, t_l, theta_r, t_r)``: 51 scalars per hand,
    left first.
    """

    scene: SceneConfig
    rig: HandRig
    poses: Sequence[HandPose]
    target: np.ndarray
    saliency: Optional[np.ndarray] = None
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)

    def __post_init__(self):
        left, right = self.poses
        if Side(left.side) != Side.LEFT or Side(right.side) != Side.RIGHT:
            raise ValueError("poses must be ordered (left, right)")
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.target.shape != self.scene.shape:
            raise ValueError(f"target shape {self.target.shape} does not match scene {self.scene.shape}")
        if self.saliency is not None:
            _check_dims(self.target, self.saliency)
        self.shaped = [apply_shape(rig_for(self.rig, p.side), p.shape) for p in self.poses]
        self.base_poses = list(self.poses)
        self.adjoint = sim_adjoint(self.target, self.saliency)
        self._samples = [rest_surface_samples(r, self.weights.samples_per_capsule) for r in self.shaped]

    def initial_vector(self) -> np.ndarray:
        return np.concatenate([p.free_params() for p in self.base_poses])

    def poses_from(self, x) -> list:
        x = np.asarray(x, dtype=np.float64)
        return [p.with_free_params(x[k * FREE_SIZE:(k + 1) * FREE_SIZE]) for k, p in enumerate(self.base_poses)]

    def pose_hands(self, x) -> list:
        return [pose_hand(r, p) for r, p in zip(self.shaped, self.poses_from(x))]

    def evaluate(self, x, need_grad: bool = True, scene: SceneConfig | None = None) -> Evaluation:
        """Objective at ``x``; ``scene`` swaps in other render settings (e.g. a softer edge)."""
        w = self.weights
        scene = scene or self.scene
        poses = self.poses_from(x)
        hands = [pose_hand(r, p) for r, p in zip(self.shaped, poses)]

        proj = project_hands(scene, hands)
        logsum = soft_logsum(scene, proj)
        soft = -np.expm1(logsum)
        l_sim = sim_loss(soft, self.target, self.saliency)

        atm = [anatomy_grad(p, r) for p, r in zip(poses, self.shaped)]
        l_atm = atm[0][0] + atm[1][0]

        samples = [hand.attach(j, rest) for hand, (j, rest) in zip(hands, self._samples)]
        lab, ga_ab, gb_ab = _inter_one_way(samples[0], samples[1], hands[1])
        lba, gb_ba, ga_ba = _inter_one_way(samples[1], samples[0], hands[0])
        l_inter = lab + lba

        selfpen = [_self_pen(h) for h in hands]
        l_self = selfpen[0][0] + selfpen[1][0]

        wrists = [h.joint_positions[int(h.rig.order[0])] for h in hands]
        l_dist = distance_loss(wrists[0], wrists[1], w.tau_dist)

        terms = {
            "sim": l_sim,
            "atm": l_atm,
            "inter_pen": l_inter,
            "self_pen": l_self,
            "pen": l_inter + l_self,
            "dist": l_dist,
        }
        total = w.w_sim * l_sim + w.w_atm * l_atm + w.w_pen * (l_inter + l_self) + w.w_dist * l_dist
        if not need_grad:
            return Evaluation(total, terms, None, soft, hands)

        gp0, gp1 = projection_vjp(scene, proj, logsum, w.w_sim * self.adjoint)
        grad = hands_vjp_from_endpoints(hands, gp0, gp1)

        point_grads = [w.w_pen * (ga_ab + ga_ba), w.w_pen * (gb_ab + gb_ba)]
        for k, hand in enumerate(hands):
            rig = hand.rig
            base = rig.rest_positions[rig.capsule_joint]
            _, sp0, sp1 = selfpen[k]
            # most samples carry no penetration gradient; skip them
            live = np.flatnonzero(np.any(point_grads[k] != 0.0, axis=1))
            joints = np.concatenate([self._samples[k][0][live], rig.capsule_joint, rig.capsule_joint])
            rest = np.vstack([self._samples[k][1][live], base + rig.capsule_p0, base + rig.capsule_p1])
            g = np.vstack([point_grads[k][live], w.w_pen * sp0, w.w_pen * sp1])
            grad_T = None
            if l_dist > 0 and w.w_dist > 0:
                grad_T = np.zeros((rig.num_joints, 3))
                sign = 1.0 if k == 0 else -1.0
                grad_T[int(rig.order[0])] = w.w_dist * sign * 2.0 * (wrists[0] - wrists[1])
            block = fk_vjp(hand, joints, rest, g, grad_T=grad_T)
            block[3:48] += w.w_atm * atm[k][1].ravel()
            grad[k * FREE_SIZE:(k + 1) * FREE_SIZE] += block
        return Evaluation(total, terms, grad, soft, hands)


def total_objective(scene, rig, poses, target, saliency=None, weights: ObjectiveWeights | None = None):
    """Weighted objective and its unweighted per-term breakdown."""
    problem = Problem(scene, rig, poses, target, saliency, weights or ObjectiveWeights())
    ev = problem.evaluate(problem.initial_vector(), need_grad=False)
    return ev.total, ev.terms


def objective_gradient(scene, rig, poses, target, saliency=None, weights: ObjectiveWeights | None = None):
    """Gradient over (theta_l, t_l, theta_r, t_r): 102 scalars."""
    problem = Problem(scene, rig, poses, target, saliency, weights or ObjectiveWeights())
    return problem.evaluate(problem.initial_vector()).grad
