import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handshadow.objective import (
    ObjectiveWeights,
    Problem,
    anatomy_grad,
    anatomy_loss,
    distance_loss,
    inter_penetration_loss,
    objective_gradient,
    self_penetration_loss,
    sim_loss,
    total_objective,
)
from handshadow.render import SceneConfig
from handshadow.rig import HandPose, Side, forward_kinematics, mirror_rig, sample_surface

from conftest import capsule_rig, pose_pair, random_pose
from oracles import capsules_of, inter_penetration

masks = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s))


# --- similarity -------------------------------------------------------------


def test_sim_examples():
    t = np.zeros((4, 4))
    t[1, 2] = 1.0
    assert sim_loss(t, t, np.zeros((4, 4))) == 0.0
    r = t.copy()
    r[0, 0] = 1.0
    sal = np.zeros((4, 4))
    assert sim_loss(r, t, sal) == 1.0
    sal[0, 0] = 1.0
    assert sim_loss(r, t, sal) == 2.0


def test_sim_dimension_mismatch():
    with pytest.raises(ValueError):
        sim_loss(np.zeros((4, 4)), np.zeros((4, 5)))


@settings(max_examples=30, deadline=None)
@given(masks)
def test_sim_zero_saliency_is_l1(rng):
    r = rng.random((9, 7))
    t = (rng.random((9, 7)) > 0.5).astype(float)
    assert sim_loss(r, t, np.zeros_like(r)) == np.sum(np.abs(r - t))
    assert sim_loss(r, t) == np.sum(np.abs(r - t))


@settings(max_examples=30, deadline=None)
@given(masks)
def test_sim_flip_invariance(rng):
    r = rng.random((8, 8))
    t = (rng.random((8, 8)) > 0.5).astype(float)
    s = rng.random((8, 8))
    assert sim_loss(r, t, s) == pytest.approx(sim_loss(r[:, ::-1], t[:, ::-1], s[:, ::-1]), rel=1e-15)


# --- anatomy ----------------------------------------------------------------


def _mcp_slot(rig):
    return int(np.flatnonzero(rig.limit_joints == 1)[0])


def test_anatomy_zero_within_limits(rig):
    assert anatomy_loss(HandPose.zero("right"), rig) == 0.0


def test_anatomy_twist_excess(rig):
    k = _mcp_slot(rig)
    assert np.allclose(rig.limits[k, 0], [-0.1, 0.1])
    rot = np.zeros((15, 3))
    rot[0] = 0.3 * rig.tsb_frames[k][0]
    pose = HandPose("right", np.zeros(3), rot, np.zeros(10), np.zeros(3))
    assert anatomy_loss(pose, rig) == pytest.approx(0.04, abs=1e-15)


def test_anatomy_boundary_is_inclusive(rig):
    k = _mcp_slot(rig)
    rot = np.zeros((15, 3))
    rot[0] = rig.limits[k, 2, 1] * rig.tsb_frames[k][2]
    pose = HandPose("right", np.zeros(3), rot, np.zeros(10), np.zeros(3))
    assert anatomy_loss(pose, rig) < 1e-30


def test_anatomy_ignores_global_orient(rig):
    pose = HandPose("right", [3.0, 0.0, 0.0], np.zeros((15, 3)), np.zeros(10), np.zeros(3))
    assert anatomy_loss(pose, rig) == 0.0


def test_anatomy_mirror_invariance(rig):
    left_rig = mirror_rig(rig)
    rng = np.random.default_rng(0)
    for _ in range(10):
        pose = random_pose(rng, "right", scale=0.6)
        assert anatomy_loss(pose, rig) == anatomy_loss(pose.mirrored(), left_rig)


def test_anatomy_gradient(rig):
    rng = np.random.default_rng(12)
    pose = random_pose(rng, "right", scale=0.6)
    loss, grad = anatomy_grad(pose, rig)
    assert loss == anatomy_loss(pose, rig) > 0
    x = pose.joint_rotations.ravel()
    h = 1e-6
    fd = np.zeros(45)
    for i in range(45):
        e = np.zeros(45)
        e[i] = h
        up = dataclasses.replace(pose, joint_rotations=(x + e).reshape(15, 3))
        dn = dataclasses.replace(pose, joint_rotations=(x - e).reshape(15, 3))
        fd[i] = (anatomy_loss(up, rig) - anatomy_loss(dn, rig)) / (2 * h)
    assert np.allclose(grad.ravel(), fd, atol=1e-7)


# --- distance ---------------------------------------------------------------


def test_distance_piecewise():
    tau = 0.5
    assert distance_loss([0.1, 0.2, 0.3], [0.1, 0.2, 0.3], tau) == 0.0
    assert distance_loss([0.7, 0.0, 0.0], [0.0, 0.0, 0.0], tau) == 0.0  # d = 0.49
    assert distance_loss([0.5, 0.5, 0.0], [0.0, 0.0, 0.0], tau) == 0.5  # d = tau exactly
    assert distance_loss([0.8, 0.0, 0.0], [0.0, 0.0, 0.0], tau) == pytest.approx(0.64, abs=1e-15)


# --- penetration ------------------------------------------------------------


def _single(rig_specs, side="right", translation=(0.0, 0.0, 0.0)):
    r = capsule_rig(rig_specs, side)
    return forward_kinematics(r, HandPose.zero(side, translation))


def test_separated_hands_do_not_penetrate():
    a = _single([(0, (0, 0, 0), (0.05, 0, 0), 0.01)])
    b = _single([(0, (0, 0, 0), (0.05, 0, 0), 0.01)], translation=(0, 0.5, 0))
    assert inter_penetration_loss(a, b) == 0.0


@pytest.mark.parametrize("n", [16, 33])
def test_inter_penetration_matches_brute_force(n):
    a = _single([(0, (0, 0, 0), (0.05, 0, 0), 0.01)])
    b = _single([(0, (0.01, 0.014, 0.002), (0.04, 0.016, -0.003), 0.009)])
    got = inter_penetration_loss(a, b, n)
    want = inter_penetration(sample_surface(a, n), sample_surface(b, n), capsules_of(a), capsules_of(b))
    assert got > 0
    assert abs(got - want) <= 1e-9


def test_inter_penetration_is_symmetric():
    a = _single([(0, (0, 0, 0), (0.05, 0, 0), 0.01)])
    b = _single([(0, (0.02, -0.01, 0.01), (0.02, 0.03, 0.0), 0.008)])
    assert inter_penetration_loss(a, b) == pytest.approx(inter_penetration_loss(b, a), rel=1e-15)


def test_self_penetration_rest_pose(rig, left_rig):
    assert self_penetration_loss(forward_kinematics(rig, HandPose.zero("right"))) == 0.0
    assert self_penetration_loss(forward_kinematics(left_rig, HandPose.zero("left"))) == 0.0


def test_self_penetration_formula(rig):
    # wrist capsule and an index-tip capsule: no shared joint
    specs = [(0, (0.0, 0.0, 0.0), (0.05, 0.0, 0.0), 0.008),
             (3, (0.0, 0.010, 0.0), (0.05, 0.010, 0.0), 0.008)]
    hand = _single(specs)
    assert self_penetration_loss(hand) == pytest.approx((0.008 + 0.008 - 0.010) ** 2, rel=1e-12)


def test_adjacent_capsules_are_excluded():
    specs = [(0, (0.0, 0.0, 0.0), (0.05, 0.0, 0.0), 0.008),
             (0, (0.0, 0.005, 0.0), (0.05, 0.005, 0.0), 0.008)]
    assert self_penetration_loss(_single(specs)) == 0.0


# --- total objective --------------------------------------------------------


def _far_pair():
    return [HandPose.zero("left", (2.8, 0.0, 1.0)), HandPose.zero("right", (3.2, 0.0, 1.0))]


def test_all_terms_zero_gives_zero_total_and_gradient(rig, small_scene):
    target = np.zeros(small_scene.shape)
    total, terms = total_objective(small_scene, rig, _far_pair(), target)
    assert total == 0.0 and all(v == 0.0 for v in terms.values())
    assert not objective_gradient(small_scene, rig, _far_pair(), target).any()


def test_default_weights_scale_similarity(rig, small_scene):
    target = np.zeros(small_scene.shape)
    target[3, 4] = target[10, 20] = 1.0
    total, terms = total_objective(small_scene, rig, _far_pair(), target)
    assert terms["sim"] == 2.0
    assert total == 20.0


def test_weights_defaults():
    w = ObjectiveWeights()
    assert (w.w_sim, w.w_atm, w.w_pen, w.w_dist, w.tau_dist) == (10.0, 1.0, 1.0, 1.0, 0.5)


def test_weighted_sum_and_pen_switch(rig, small_scene):
    rng = np.random.default_rng(21)
    # rest-pose hands 6 cm apart: the thumbs interpenetrate
    poses = [HandPose.zero("left", (-0.03, 0.0, 0.6)), HandPose.zero("right", (0.03, 0.0, 0.6))]
    target = (rng.random(small_scene.shape) > 0.7).astype(float)
    total, terms = total_objective(small_scene, rig, poses, target)
    assert terms["inter_pen"] > 0
    assert terms["pen"] == terms["inter_pen"] + terms["self_pen"]
    expected = 10 * terms["sim"] + terms["atm"] + terms["pen"] + terms["dist"]
    assert total == pytest.approx(expected, rel=1e-15)
    no_pen, _ = total_objective(small_scene, rig, poses, target, weights=ObjectiveWeights(w_pen=0.0))
    assert no_pen == pytest.approx(10 * terms["sim"] + terms["atm"] + terms["dist"], rel=1e-15)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_terms_are_nonnegative(rig, seed):
    scene = SceneConfig(image_width=32, image_height=32)
    rng = np.random.default_rng(seed)
    poses = pose_pair(rng, scale=0.5, dx=0.05)
    target = (rng.random(scene.shape) > 0.5).astype(float)
    total, terms = total_objective(scene, rig, poses, target)
    assert total >= 0 and all(v >= 0 for v in terms.values())


def test_distance_gradient_is_two_delta(rig, small_scene):
    poses = [HandPose.zero("left", (2.0, 0.0, 1.0)), HandPose.zero("right", (3.0, 0.2, 1.3))]
    target = np.zeros(small_scene.shape)
    g = objective_gradient(small_scene, rig, poses, target)
    delta = np.array([2.0, 0.0, 1.0]) - np.array([3.0, 0.2, 1.3])
    assert np.allclose(g[48:51], 2 * delta, atol=1e-12)
    assert np.allclose(g[99:102], -2 * delta, atol=1e-12)


def test_problem_rejects_bad_inputs(rig, small_scene):
    left, right = pose_pair(np.random.default_rng(0))
    with pytest.raises(ValueError):
        Problem(small_scene, rig, [right, left], np.zeros(small_scene.shape))
    with pytest.raises(ValueError):
        Problem(small_scene, rig, [left, right], np.zeros((10, 10)))


def test_shape_is_respected_by_objective(rig, small_scene):
    rng = np.random.default_rng(5)
    left, right = pose_pair(rng)
    shaped_right = dataclasses.replace(right, shape=np.full(10, 0.5))
    target = np.zeros(small_scene.shape)
    a, _ = total_objective(small_scene, rig, [left, right], target)
    b, _ = total_objective(small_scene, rig, [left, shaped_right], target)
    assert a != b
