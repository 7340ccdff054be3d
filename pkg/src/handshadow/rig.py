"""Articulated capsule hand: rig data, shape, forward kinematics, surface samples.

Conventions
-----------
* Rest frames are world aligned. Every joint rotation is an axis-angle vector
  expressed in that rest frame and composed root to leaf, so a joint's world
  rotation is ``G_j = G_parent @ R(theta_j)``.
* A point attached to joint ``j`` with rest position ``X`` lands at
  ``T_j + G_j @ (X - J_j)`` where ``J_j`` is the joint's rest position.
* The left rig is the mirror of the right rig through the plane ``x = 0``.
  Positions and bone directions flip their x component; twist-splay-bend
  frames are axial and transform with ``-M`` (``M = diag(-1, 1, 1)``) so the
  decomposition of a mirrored pose equals that of the original.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from handshadow.geometry import segment_segment

NUM_JOINTS = 16
NUM_ARTICULATED = 15
NUM_SHAPE = 10
POSE_SIZE = 61
FREE_SIZE = 51  # orient (3) + joints (45) + translation (3)
SHAPE_BOUND = 5.0
MIRROR = np.array([-1.0, 1.0, 1.0])

PathLike = Union[str, Path]


class RigError(ValueError):
    """Invalid rig or pose data. The message names the offending field."""


class Side(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def other(self) -> "Side":
        return Side.RIGHT if self is Side.LEFT else Side.LEFT


def _frozen(a, shape=None, name="array") -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    if shape is not None and out.shape != shape:
        raise RigError(f"{name}: expected shape {shape}, got {out.shape}")
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HandPose:
    """The 61 coefficients of one hand: orientation, 15 joint rotations, shape, wrist translation."""

    side: Side
    global_orient: np.ndarray
    joint_rotations: np.ndarray
    shape: np.ndarray
    wrist_translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "side", Side(self.side))
        object.__setattr__(self, "global_orient", _frozen(self.global_orient, (3,), "global_orient"))
        object.__setattr__(
            self, "joint_rotations", _frozen(self.joint_rotations, (NUM_ARTICULATED, 3), "joint_rotations")
        )
        object.__setattr__(self, "shape", _frozen(self.shape, (NUM_SHAPE,), "shape"))
        object.__setattr__(self, "wrist_translation", _frozen(self.wrist_translation, (3,), "wrist_translation"))
        vec = self.to_vector()
        if not np.all(np.isfinite(vec)):
            raise RigError("pose: non-finite coefficient")
        angles = np.linalg.norm(self.rotvecs, axis=1)
        if np.any(angles >= 2 * np.pi):
            bad = int(np.argmax(angles >= 2 * np.pi))
            raise RigError(f"pose: axis-angle magnitude >= 2*pi at rotation {bad}")
        if np.any(np.abs(self.shape) > SHAPE_BOUND):
            raise RigError(f"pose: shape coefficient outside [-{SHAPE_BOUND}, {SHAPE_BOUND}]")

    @classmethod
    def zero(cls, side: Side | str, translation=(0.0, 0.0, 0.0), shape=None) -> "HandPose":
        return cls(
            side=Side(side),
            global_orient=np.zeros(3),
            joint_rotations=np.zeros((NUM_ARTICULATED, 3)),
            shape=np.zeros(NUM_SHAPE) if shape is None else shape,
            wrist_translation=translation,
        )

    @property
    def rotvecs(self) -> np.ndarray:
        """(16, 3) rotations; row 0 is the global orientation."""
        return np.vstack([self.global_orient[None], self.joint_rotations])

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.global_orient, self.joint_rotations.ravel(), self.shape, self.wrist_translation]
        )

    @classmethod
    def from_vector(cls, side: Side | str, vec) -> "HandPose":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (POSE_SIZE,):
            raise RigError(f"pose: expected {POSE_SIZE} coefficients, got {vec.size}")
        return cls(side, vec[:3], vec[3:48].reshape(15, 3), vec[48:58], vec[58:61])

    def free_params(self) -> np.ndarray:
        """The 51 optimized scalars: orient, joints, translation (shape excluded)."""
        return np.concatenate([self.global_orient, self.joint_rotations.ravel(), self.wrist_translation])

    def with_free_params(self, params) -> "HandPose":
        params = np.asarray(params, dtype=np.float64)
        return HandPose(self.side, params[:3], params[3:48].reshape(15, 3), self.shape, params[48:51])

    def mirrored(self, plane_x: float = 0.0) -> "HandPose":
        """Mirror image through ``x = plane_x``, carried by the opposite side's rig."""
        flip = np.array([1.0, -1.0, -1.0])
        t = self.wrist_translation * MIRROR
        if plane_x != 0.0:
            t[0] += 2.0 * plane_x
        return HandPose(
            self.side.other,
            self.global_orient * flip,
            self.joint_rotations * flip,
            self.shape,
            t,
        )

    def __eq__(self, other):
        if not isinstance(other, HandPose):
            return NotImplemented
        return self.side == other.side and np.array_equal(self.to_vector(), other.to_vector())

    __hash__ = None


# ---------------------------------------------------------------------------
# Rig
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HandRig:
    side: Side
    joint_names: tuple
    parents: np.ndarray  # (16,) int, -1 for the root
    offsets: np.ndarray  # (16, 3) rest offset from parent (root: absolute)
    bone_dirs: np.ndarray  # (16, 3)
    scale_capsule: np.ndarray  # (16,) capsule whose length scales this joint's offset, -1 for none
    capsule_names: tuple
    capsule_joint: np.ndarray  # (C,) attachment joint
    capsule_p0: np.ndarray  # (C, 3) relative to the attachment joint's rest position
    capsule_p1: np.ndarray
    radii: np.ndarray  # (C,)
    basis_names: tuple
    length_basis: np.ndarray  # (10, C)
    radius_basis: np.ndarray  # (10, C)
    limit_joints: np.ndarray  # (15,) joint ids
    tsb_frames: np.ndarray  # (15, 3, 3) rows: twist, splay, bend
    limits: np.ndarray  # (15, 3, 2) lower/upper per (twist, splay, bend)
    order: np.ndarray = field(init=False)
    rest_positions: np.ndarray = field(init=False)

    def __post_init__(self):
        _validate_rig(self)
        order = _topological_order(self.parents)
        rest = np.zeros((len(self.parents), 3))
        for j in order:
            p = self.parents[j]
            rest[j] = self.offsets[j] if p < 0 else rest[p] + self.offsets[j]
        object.__setattr__(self, "order", np.array(order, dtype=np.int64))
        rest.setflags(write=False)
        object.__setattr__(self, "rest_positions", rest)

    @property
    def num_capsules(self) -> int:
        return len(self.radii)

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    def rest_capsules(self):
        """World-space rest capsules ``(p0, p1, radii)``."""
        base = self.rest_positions[self.capsule_joint]
        return base + self.capsule_p0, base + self.capsule_p1, self.radii.copy()

    def bone_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.capsule_p1 - self.capsule_p0, axis=1)

    def capsule_adjacency(self) -> np.ndarray:
        """Boolean (C, C): capsules sharing a joint (attachment or distal end)."""
        n = self.num_capsules
        touches = [{int(self.capsule_joint[i])} for i in range(n)]
        for j in range(self.num_joints):
            c = int(self.scale_capsule[j])
            if c >= 0:
                touches[c].add(j)
        adj = np.zeros((n, n), dtype=bool)
        for i in range(n):
            for k in range(n):
                adj[i, k] = i == k or bool(touches[i] & touches[k])
        return adj


def _topological_order(parents) -> list:
    n = len(parents)
    roots = [j for j in range(n) if parents[j] < 0]
    if len(roots) != 1:
        raise RigError(f"joints: expected exactly one root, found {len(roots)}")
    for j in range(n):
        seen = set()
        k = j
        while k >= 0:
            if k in seen:
                raise RigError(f"joints[{j}]: parent chain contains a cycle")
            seen.add(k)
            p = int(parents[k])
            if p >= n:
                raise RigError(f"joints[{k}]: parent index {p} out of range")
            k = p
    children = {j: [] for j in range(n)}
    for j in range(n):
        if parents[j] >= 0:
            children[int(parents[j])].append(j)
    order, stack = [], [roots[0]]
    while stack:
        j = stack.pop(0)
        order.append(j)
        stack.extend(children[j])
    return order


def _validate_rig(rig: HandRig) -> None:
    n = len(rig.parents)
    if rig.offsets.shape != (n, 3) or rig.bone_dirs.shape != (n, 3):
        raise RigError("joints: offset/bone_dir arrays must be (n, 3)")
    c = len(rig.radii)
    for i in range(c):
        if not rig.radii[i] > 0:
            raise RigError(f"capsules[{i}]: radius must be > 0 (got {rig.radii[i]})")
        if not 0 <= rig.capsule_joint[i] < n:
            raise RigError(f"capsules[{i}]: attachment joint {rig.capsule_joint[i]} out of range")
    if rig.length_basis.shape != (NUM_SHAPE, c) or rig.radius_basis.shape != (NUM_SHAPE, c):
        raise RigError(f"shape_basis: expected {NUM_SHAPE} rows of {c} entries")
    for j, s in enumerate(rig.scale_capsule):
        if s >= c:
            raise RigError(f"joints[{j}]: scale_capsule {s} out of range")
    for k in range(len(rig.limit_joints)):
        lo, hi = rig.limits[k, :, 0], rig.limits[k, :, 1]
        if np.any(lo > hi):
            axis = ("twist", "splay", "bend")[int(np.argmax(lo > hi))]
            raise RigError(f"limits[{k}]: {axis} lower bound exceeds upper bound")
        frame = rig.tsb_frames[k]
        if not np.allclose(frame @ frame.T, np.eye(3), atol=1e-6):
            raise RigError(f"limits[{k}]: twist/bend axes are not orthonormal")
    if not np.all(np.isfinite(rig.offsets)) or not np.all(np.isfinite(rig.capsule_p1)):
        raise RigError("rig: non-finite geometry")


def _tsb_frame(twist, bend) -> np.ndarray:
    twist = np.asarray(twist, dtype=np.float64)
    bend = np.asarray(bend, dtype=np.float64)
    splay = np.cross(bend, twist)
    return np.stack([twist, splay, bend])


def rig_from_dict(data: dict) -> HandRig:
    try:
        joints = data["joints"]
        capsules = data["capsules"]
        basis = data["shape_basis"]
        limits = data["limits"]
        side = Side(data.get("side", "right"))
        for k, lim in enumerate(limits):
            for key in ("twist_axis", "bend_axis"):
                if abs(np.linalg.norm(lim[key]) - 1.0) > 1e-6:
                    raise RigError(f"limits[{k}]: {key} is not a unit vector")
        return HandRig(
            side=side,
            joint_names=tuple(j.get("name", f"joint{i}") for i, j in enumerate(joints)),
            parents=np.array([int(j["parent"]) for j in joints], dtype=np.int64),
            offsets=_frozen([j["offset"] for j in joints], name="joints.offset"),
            bone_dirs=_frozen([j["bone_dir"] for j in joints], name="joints.bone_dir"),
            scale_capsule=np.array([int(j.get("scale_capsule", -1)) for j in joints], dtype=np.int64),
            capsule_names=tuple(c.get("name", f"capsule{i}") for i, c in enumerate(capsules)),
            capsule_joint=np.array([int(c["joint"]) for c in capsules], dtype=np.int64),
            capsule_p0=_frozen([c["p0"] for c in capsules], name="capsules.p0"),
            capsule_p1=_frozen([c["p1"] for c in capsules], name="capsules.p1"),
            radii=_frozen([float(c["radius"]) for c in capsules], name="capsules.radius"),
            basis_names=tuple(b.get("name", f"basis{i}") for i, b in enumerate(basis)),
            length_basis=_frozen([b["length_delta"] for b in basis], name="shape_basis.length_delta"),
            radius_basis=_frozen([b["radius_delta"] for b in basis], name="shape_basis.radius_delta"),
            limit_joints=np.array([int(lim["joint"]) for lim in limits], dtype=np.int64),
            tsb_frames=_frozen([_tsb_frame(lim["twist_axis"], lim["bend_axis"]) for lim in limits]),
            limits=_frozen([[lim["twist"], lim["splay"], lim["bend"]] for lim in limits], name="limits"),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise RigError(f"rig: malformed field ({exc!r})") from exc


def rig_to_dict(rig: HandRig) -> dict:
    return {
        "format": "handshadow-rig",
        "version": 1,
        "side": rig.side.value,
        "units": {"length": "m", "angle": "rad"},
        "joints": [
            {
                "name": rig.joint_names[j],
                "parent": int(rig.parents[j]),
                "offset": rig.offsets[j].tolist(),
                "bone_dir": rig.bone_dirs[j].tolist(),
                "scale_capsule": int(rig.scale_capsule[j]),
            }
            for j in range(rig.num_joints)
        ],
        "capsules": [
            {
                "name": rig.capsule_names[i],
                "joint": int(rig.capsule_joint[i]),
                "p0": rig.capsule_p0[i].tolist(),
                "p1": rig.capsule_p1[i].tolist(),
                "radius": float(rig.radii[i]),
            }
            for i in range(rig.num_capsules)
        ],
        "shape_basis": [
            {
                "name": rig.basis_names[k],
                "length_delta": rig.length_basis[k].tolist(),
                "radius_delta": rig.radius_basis[k].tolist(),
            }
            for k in range(NUM_SHAPE)
        ],
        "limits": [
            {
                "joint": int(rig.limit_joints[k]),
                "twist_axis": rig.tsb_frames[k, 0].tolist(),
                "bend_axis": rig.tsb_frames[k, 2].tolist(),
                "twist": rig.limits[k, 0].tolist(),
                "splay": rig.limits[k, 1].tolist(),
                "bend": rig.limits[k, 2].tolist(),
            }
            for k in range(len(rig.limit_joints))
        ],
    }


def default_rig_path() -> Path:
    return Path(str(resources.files("handshadow") / "data" / "default_rig.json"))


def load_rig(path: Optional[PathLike] = None, side: Side | str | None = None) -> HandRig:
    """Load and validate a rig file; mirror it when ``side`` differs from the file's side."""
    path = default_rig_path() if path is None else Path(path)
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RigError(f"rig file {path}: {exc}") from exc
    rig = rig_from_dict(data)
    if side is not None and Side(side) != rig.side:
        rig = mirror_rig(rig)
    return rig


def save_rig(rig: HandRig, path: PathLike) -> None:
    Path(path).write_text(json.dumps(rig_to_dict(rig), indent=1) + "\n")


def mirror_rig(rig: HandRig) -> HandRig:
    # frames are axial vectors: a -> -M a
    axial = -MIRROR
    return replace(
        rig,
        side=rig.side.other,
        offsets=_frozen(rig.offsets * MIRROR),
        bone_dirs=_frozen(rig.bone_dirs * MIRROR),
        capsule_p0=_frozen(rig.capsule_p0 * MIRROR),
        capsule_p1=_frozen(rig.capsule_p1 * MIRROR),
        tsb_frames=_frozen(rig.tsb_frames * axial),
    )


def rig_pair(path: Optional[PathLike] = None) -> dict:
    """Both sides of a rig file, keyed by :class:`Side`."""
    base = load_rig(path)
    return {base.side: base, base.side.other: mirror_rig(base)}


def shape_scales(rig: HandRig, shape) -> tuple:
    shape = np.asarray(shape, dtype=np.float64)
    if shape.shape != (NUM_SHAPE,):
        raise RigError(f"shape: expected {NUM_SHAPE} coefficients")
    if np.any(np.abs(shape) > SHAPE_BOUND) or not np.all(np.isfinite(shape)):
        raise RigError(f"shape: coefficients must lie in [-{SHAPE_BOUND}, {SHAPE_BOUND}]")
    length_scale = 1.0 + shape @ rig.length_basis
    radius_scale = 1.0 + shape @ rig.radius_basis
    return length_scale, radius_scale


def apply_shape(rig: HandRig, shape) -> HandRig:
    """Scale bone lengths and radii linearly in the shape coefficients."""
    shape = np.asarray(shape, dtype=np.float64)
    if not np.any(shape):
        return rig
    length_scale, radius_scale = shape_scales(rig, shape)
    radii = rig.radii * radius_scale
    if np.any(radii <= 0):
        raise RigError(f"shape: capsule {int(np.argmax(radii <= 0))} radius becomes non-positive")
    if np.any(length_scale <= 0):
        raise RigError(f"shape: capsule {int(np.argmax(length_scale <= 0))} length becomes non-positive")
    joint_scale = np.where(rig.scale_capsule >= 0, length_scale[np.maximum(rig.scale_capsule, 0)], 1.0)
    return replace(
        rig,
        offsets=_frozen(rig.offsets * joint_scale[:, None]),
        capsule_p0=_frozen(rig.capsule_p0 * length_scale[:, None]),
        capsule_p1=_frozen(rig.capsule_p1 * length_scale[:, None]),
        radii=_frozen(radii),
    )


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------

_SMALL = 1e-2


def skew(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _rodrigues_coeffs(theta):
    small = theta < _SMALL
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    sin, cos = np.sin(t), np.cos(t)
    a = np.where(small, 1 - t2 / 6 + t2 * t2 / 120, sin / t)
    b = np.where(small, 0.5 - t2 / 24 + t2 * t2 / 720, (1 - cos) / t**2)
    c = np.where(small, -1.0 / 3 + t2 / 30 - t2 * t2 / 840, (t * cos - sin) / t**3)
    d = np.where(small, -1.0 / 12 + t2 / 180 - t2 * t2 / 6720, (t * sin - 2 * (1 - cos)) / t**4)
    return a, b, c, d


def rodrigues(rotvec) -> np.ndarray:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3)."""
    w = np.asarray(rotvec, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1)
    a, b, _, _ = _rodrigues_coeffs(theta)
    k = skew(w)
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * (k @ k)


_E = skew(np.eye(3))  # (3, 3, 3): generator matrices for each axis


def rodrigues_jacobian(rotvec) -> np.ndarray:
    """d R / d w_k for (..., 3) rotation vectors -> (..., 3, 3, 3) indexed [..., k, row, col]."""
    w = np.asarray(rotvec, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1)
    a, b, c, d = _rodrigues_coeffs(theta)
    k = skew(w)
    k2 = k @ k
    kk = k[..., None, :, :]
    ek = np.broadcast_to(_E, w.shape[:-1] + (3, 3, 3))
    out = a[..., None, None, None] * ek
    out = out + b[..., None, None, None] * (ek @ kk + kk @ ek)
    radial = c[..., None, None] * k + d[..., None, None] * k2
    out = out + radial[..., None, :, :] * w[..., :, None, None]
    return out


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PosedHand:
    """World-space capsules and joint transforms of one posed hand."""

    p0: np.ndarray  # (C, 3)
    p1: np.ndarray
    radii: np.ndarray
    joint_rotations: np.ndarray  # (16, 3, 3) world rotation of each joint
    joint_positions: np.ndarray  # (16, 3)
    pose: HandPose
    rig: HandRig  # shaped rig the pose was evaluated on
    local_rotations: np.ndarray = field(repr=False, default=None)

    @property
    def num_capsules(self) -> int:
        return len(self.radii)

    def attach(self, joint_ids, rest_points) -> np.ndarray:
        """World positions of points rigidly attached to ``joint_ids`` at rest positions ``rest_points``."""
        local = rest_points - self.rig.rest_positions[joint_ids]
        return self.joint_positions[joint_ids] + np.einsum("nij,nj->ni", self.joint_rotations[joint_ids], local)


def _fk_arrays(rig: HandRig, rotvecs: np.ndarray, translation: np.ndarray):
    local = rodrigues(rotvecs)
    n = rig.num_joints
    G = np.empty((n, 3, 3))
    T = np.empty((n, 3))
    for j in rig.order:
        p = rig.parents[j]
        if p < 0:
            G[j] = local[j]
            T[j] = rig.rest_positions[j] + translation
        else:
            G[j] = G[p] @ local[j]
            T[j] = T[p] + G[p] @ rig.offsets[j]
    return local, G, T


def _pose_rotvecs(rig: HandRig, pose: HandPose) -> np.ndarray:
    # joint ids 1..15 carry the 15 articulated rotations; the root carries the orientation
    rot = np.zeros((rig.num_joints, 3))
    root = int(rig.order[0])
    rot[root] = pose.global_orient
    others = [j for j in range(rig.num_joints) if j != root]
    rot[others] = pose.joint_rotations
    return rot


def pose_hand(shaped: HandRig, pose: HandPose) -> PosedHand:
    """Forward kinematics on an already shaped rig (shape in ``pose`` is not re-applied)."""
    local, G, T = _fk_arrays(shaped, _pose_rotvecs(shaped, pose), pose.wrist_translation)
    Gc, Tc = G[shaped.capsule_joint], T[shaped.capsule_joint]
    p0 = Tc + np.einsum("nij,nj->ni", Gc, shaped.capsule_p0)
    p1 = Tc + np.einsum("nij,nj->ni", Gc, shaped.capsule_p1)
    return PosedHand(p0, p1, shaped.radii.copy(), G, T, pose, shaped, local)


def forward_kinematics(rig: HandRig, pose: HandPose) -> PosedHand:
    if Side(pose.side) != rig.side:
        raise RigError(f"pose side {pose.side.value} does not match rig side {rig.side.value}")
    return pose_hand(apply_shape(rig, pose.shape), pose)


def fk_vjp(hand: PosedHand, joint_ids, rest_points, grad_points, grad_G=None, grad_T=None) -> np.ndarray:
    """Pull gradients on attached world points back to the 51 free pose parameters.

    ``joint_ids``/``rest_points`` describe the attached points as in
    :meth:`PosedHand.attach`; ``grad_points`` is dL/d(world point). Returns the
    gradient ordered (orient, joints, translation).
    """
    rig = hand.rig
    n = rig.num_joints
    dG = np.zeros((n, 3, 3)) if grad_G is None else np.array(grad_G, dtype=np.float64)
    dT = np.zeros((n, 3)) if grad_T is None else np.array(grad_T, dtype=np.float64)
    if len(joint_ids):
        local = rest_points - rig.rest_positions[joint_ids]
        np.add.at(dT, joint_ids, grad_points)
        np.add.at(dG, joint_ids, grad_points[:, :, None] * local[:, None, :])
    return _chain_vjp(hand, dG, dT)


def _chain_vjp(hand: PosedHand, dG: np.ndarray, dT: np.ndarray) -> np.ndarray:
    rig = hand.rig
    G = hand.joint_rotations
    local = hand.local_rotations
    rotvecs = _pose_rotvecs(rig, hand.pose)
    dlocal = np.zeros_like(dG)
    dtrans = np.zeros(3)
    for j in rig.order[::-1]:
        p = rig.parents[j]
        if p < 0:
            dlocal[j] = dG[j]
            dtrans = dT[j].copy()
        else:
            dT[p] += dT[j]
            dG[p] += np.outer(dT[j], rig.offsets[j]) + dG[j] @ local[j].T
            dlocal[j] = G[p].T @ dG[j]
    jac = rodrigues_jacobian(rotvecs)  # (16, 3, 3, 3)
    drot = np.einsum("jkab,jab->jk", jac, dlocal)
    root = int(rig.order[0])
    others = [j for j in range(rig.num_joints) if j != root]
    return np.concatenate([drot[root], drot[others].ravel(), dtrans])


# ---------------------------------------------------------------------------
# Capsule geometry
# ---------------------------------------------------------------------------


def segment_closest(points, p0, p1):
    """Closest-point parameter and point on segments; broadcasting over leading axes."""
    e = p1 - p0
    ee = np.sum(e * e, axis=-1)
    t = np.sum((points - p0) * e, axis=-1) / np.where(ee > 0, ee, 1.0)
    t = np.clip(t, 0.0, 1.0)
    return t, p0 + t[..., None] * e


def capsule_sdf(points, p0, p1, radii) -> np.ndarray:
    """Signed distance from points (N, 3) to each capsule (C) -> (N, C)."""
    points = np.asarray(points, dtype=np.float64)[:, None, :]
    _, closest = segment_closest(points, p0[None], p1[None])
    return np.linalg.norm(points - closest, axis=-1) - radii[None]


def _perpendicular_frame(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return axis, e1, np.cross(axis, e1)


_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def capsule_surface_pattern(p0, p1, radius, n: int) -> np.ndarray:
    """``n`` points on one capsule along a spherical helix.

    Axial coordinates are uniform over ``[-r, L + r]`` (uniform area on both the
    hemispherical caps and the cylinder); azimuth advances by the golden angle.
    """
    d = p1 - p0
    length = float(np.linalg.norm(d))
    axis = d if length > 0 else np.array([0.0, 1.0, 0.0])
    axis, e1, e2 = _perpendicular_frame(axis)
    k = np.arange(n)
    s = -radius + (length + 2 * radius) * (k + 0.5) / n
    phi = _GOLDEN_ANGLE * k
    below = np.minimum(s, 0.0)
    above = np.maximum(s - length, 0.0)
    ring = np.sqrt(np.maximum(radius * radius - below * below - above * above, 0.0))
    return p0 + s[:, None] * axis + ring[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)


def rest_surface_samples(rig: HandRig, samples_per_capsule: int):
    """(joint_ids, rest_points) of the fixed sampling pattern on a (shaped) rig."""
    if samples_per_capsule < 8:
        raise ValueError("samples_per_capsule must be >= 8")
    p0, p1, radii = rig.rest_capsules()
    pts = [capsule_surface_pattern(p0[i], p1[i], radii[i], samples_per_capsule) for i in range(rig.num_capsules)]
    joint_ids = np.repeat(rig.capsule_joint, samples_per_capsule)
    return joint_ids, np.concatenate(pts)


def sample_surface(hand: PosedHand, samples_per_capsule: int) -> np.ndarray:
    """Deterministic surface points of a posed hand, (C * n, 3) meters."""
    joint_ids, rest = rest_surface_samples(hand.rig, samples_per_capsule)
    return hand.attach(joint_ids, rest)


# ---------------------------------------------------------------------------
# Twist-splay-bend
# ---------------------------------------------------------------------------


def decompose_tsb(rotation, frame) -> np.ndarray:
    """Project an axis-angle rotation onto the (twist, splay, bend) axes of ``frame``.

    Each component is the rotation angle times the axis' cosine with that frame
    axis, so the squared components sum to the squared angle.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if not np.allclose(frame @ frame.T, np.eye(3), atol=1e-6):
        raise ValueError("bone frame is not orthonormal")
    rotation = np.asarray(rotation, dtype=np.float64)
    if np.linalg.norm(rotation) < 1e-12:
        return np.zeros(3)
    return frame @ rotation


def compose_tsb(components, frame) -> np.ndarray:
    """Inverse of :func:`decompose_tsb`."""
    return np.asarray(frame, dtype=np.float64).T @ np.asarray(components, dtype=np.float64)


def joint_tsb(rig: HandRig, pose: HandPose) -> np.ndarray:
    """(15, 3) twist/splay/bend of each limited joint."""
    rot = _pose_rotvecs(rig, pose)[rig.limit_joints]
    return np.einsum("kab,kb->ka", rig.tsb_frames, rot)


def rest_pose_is_penetration_free(rig: HandRig) -> bool:
    p0, p1, radii = rig.rest_capsules()
    adj = rig.capsule_adjacency()
    for i in range(rig.num_capsules):
        for k in range(i + 1, rig.num_capsules):
            if adj[i, k]:
                continue
            if segment_distance(p0[i], p1[i], p0[k], p1[k]) < radii[i] + radii[k]:
                return False
    return True


def segment_distance(a0, a1, b0, b1) -> float:
    d, *_ = segment_segment(np.asarray(a0)[None], np.asarray(a1)[None], np.asarray(b0)[None], np.asarray(b1)[None])
    return float(d[0])
