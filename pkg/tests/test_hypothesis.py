import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import pose_pair
from handshadow.hypothesis import (
    DEFAULT_K,
    DEFAULT_N,
    Hypothesis,
    Provenance,
    composite_score,
    score_hypothesis,
    select_top_k,
    swap,
    swap_hypothesis,
    synthesize_hypotheses,
)
from handshadow.render import binarize
from handshadow.rig import HandPose
from handshadow.synth import render_pair

seeds = st.integers(0, 2**32 - 1)


def vec(p):
    return p.to_vector()


def same_pair(a, b):
    return all(np.array_equal(vec(x), vec(y)) and x.side == y.side for x, y in zip(a, b))


def test_defaults():
    assert (DEFAULT_N, DEFAULT_K) == (20, 3)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_swap_is_an_involution(seed):
    left, right = pose_pair(np.random.default_rng(seed))
    twice = swap(*swap(left, right))
    assert same_pair(twice, (left, right))


def test_swap_exchanges_sides_and_mirrors_translation():
    left, right = pose_pair(np.random.default_rng(0))
    new_left, new_right = swap(left, right)
    assert new_left.side.value == "left" and new_right.side.value == "right"
    t = np.asarray(right.wrist_translation)
    assert np.array_equal(np.asarray(new_left.wrist_translation), [-t[0], t[1], t[2]])


def test_swapped_render_is_mirror_image(rig, small_scene):
    pair = pose_pair(np.random.default_rng(2))
    a = render_pair(small_scene, rig, pair)[0]
    b = render_pair(small_scene, rig, list(swap(*pair)))[0]
    np.testing.assert_allclose(b, a[:, ::-1], atol=1e-9)


def test_single_seed_single_hypothesis_is_unchanged():
    pair = pose_pair(np.random.default_rng(1))
    out = synthesize_hypotheses([pair], n=1)
    assert len(out) == 1
    assert same_pair(out[0].poses, pair)
    assert out[0].provenance.kind == "file"


def test_pool_layout_and_ids():
    pair = pose_pair(np.random.default_rng(1))
    out = synthesize_hypotheses([pair], n=20, rng_seed=4)
    assert len(out) == 20
    assert [h.provenance.kind for h in out[:2]] == ["file", "swapped"]
    assert all(h.provenance.kind == "perturbed" for h in out[2:])
    assert len({h.id for h in out}) == 20
    assert {h.provenance.origin for h in out[2:]} == {"seed0", "seed0~swap"}
    no_swaps = synthesize_hypotheses([pair], n=5, include_swaps=False)
    assert all(h.provenance.origin == "seed0" for h in no_swaps[1:])


def test_perturbation_keeps_shape_and_has_requested_scale():
    pair = pose_pair(np.random.default_rng(1))
    out = synthesize_hypotheses([pair], n=400, rng_seed=9, include_swaps=False)
    dj = np.array([np.asarray(h.left.joint_rotations) - np.asarray(pair[0].joint_rotations) for h in out[1:]])
    dt = np.array([np.asarray(h.left.wrist_translation) - np.asarray(pair[0].wrist_translation) for h in out[1:]])
    assert dj.std() == pytest.approx(0.1, rel=0.05)
    assert dt.std() == pytest.approx(0.05, rel=0.1)
    assert all(np.array_equal(h.left.shape, pair[0].shape) for h in out)


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_synthesis_is_deterministic(seed):
    pair = pose_pair(np.random.default_rng(seed))
    a = synthesize_hypotheses([pair], n=8, rng_seed=seed)
    b = synthesize_hypotheses([pair], n=8, rng_seed=seed)
    assert [h.id for h in a] == [h.id for h in b]
    assert all(same_pair(x.poses, y.poses) for x, y in zip(a, b))


def test_synthesis_errors():
    with pytest.raises(ValueError):
        synthesize_hypotheses([], n=3)
    with pytest.raises(ValueError):
        synthesize_hypotheses([pose_pair(np.random.default_rng(0))], n=0)


def test_hypothesis_validation():
    left, right = pose_pair(np.random.default_rng(0))
    with pytest.raises(ValueError):
        Hypothesis(right, left)
    with pytest.raises(ValueError):
        Hypothesis(left, right, score=float("nan"))
    with pytest.raises(ValueError):
        Provenance("guessed")


def test_score_examples(rig, small_scene):
    pair = pose_pair(np.random.default_rng(3))
    h = Hypothesis(*pair, id="h")
    target = binarize(render_pair(small_scene, rig, pair)[0])
    assert score_hypothesis(small_scene, rig, h, target) == 0.0
    far = Hypothesis(HandPose.zero("left", (2.8, 0.0, 1.0)), HandPose.zero("right", (3.2, 0.0, 1.0)))
    assert score_hypothesis(small_scene, rig, far, target) == 0.5 * 1.0 + 0.5 * 1.0
    assert score_hypothesis(small_scene, rig, h, target, overrides={"h": 0.25}) == 0.25


def test_closer_in_both_metrics_scores_lower():
    target = np.zeros((16, 16), np.uint8)
    target[4:10, 4:10] = 1
    near = np.zeros_like(target)
    near[4:10, 5:11] = 1
    far = np.zeros_like(target)
    far[4:10, 7:13] = 1
    assert composite_score(near, target) < composite_score(far, target)


@pytest.fixture(scope="module")
def pool(rig, small_scene):
    truth = pose_pair(np.random.default_rng(11))
    target = binarize(render_pair(small_scene, rig, truth)[0])
    hyps = synthesize_hypotheses([truth], n=12, rng_seed=3)
    return target, hyps


def test_select_top_k_is_sorted_prefix(rig, small_scene, pool):
    target, hyps = pool
    top = select_top_k(hyps, small_scene, rig, target, k=4)
    everything = select_top_k(hyps, small_scene, rig, target, k=len(hyps))
    assert [h.id for h in top] == [h.id for h in everything[:4]]
    scores = [h.score for h in everything]
    assert scores == sorted(scores)
    assert top[0].id == "seed0" and top[0].score == 0.0


def test_select_top_k_threads_match_sequential(rig, small_scene, pool):
    target, hyps = pool
    one = select_top_k(hyps, small_scene, rig, target, k=5)
    four = select_top_k(hyps, small_scene, rig, target, k=5, threads=4)
    assert [(h.id, h.score) for h in one] == [(h.id, h.score) for h in four]


def test_select_top_k_ties_keep_input_order(rig, small_scene, pool):
    target, hyps = pool
    tied = [h.__class__(h.left, h.right, h.provenance, h.id, 1.0) for h in hyps]
    assert [h.id for h in select_top_k(tied, small_scene, rig, target, k=3)] == [h.id for h in hyps[:3]]


def test_select_top_k_overrides_and_bounds(rig, small_scene, pool):
    target, hyps = pool
    top = select_top_k(hyps, small_scene, rig, target, k=1, overrides={hyps[-1].id: -1.0})
    assert top[0].id == hyps[-1].id
    with pytest.raises(ValueError):
        select_top_k(hyps, small_scene, rig, target, k=0)
    with pytest.raises(ValueError):
        select_top_k(hyps, small_scene, rig, target, k=len(hyps) + 1)


def test_unrenderable_hypotheses_are_dropped(rig, small_scene, pool):
    target, hyps = pool
    behind = Hypothesis(HandPose.zero("left", (0.0, 0.0, -1.0)), HandPose.zero("right", (0.1, 0.0, -1.0)), id="bad")
    top = select_top_k([behind, *hyps[:3]], small_scene, rig, target, k=3)
    assert "bad" not in [h.id for h in top]
    with pytest.raises(RuntimeError):
        select_top_k([behind], small_scene, rig, target, k=1)


def test_swap_hypothesis_provenance():
    h = Hypothesis(*pose_pair(np.random.default_rng(0)), id="x")
    s = swap_hypothesis(h)
    assert s.provenance.kind == "swapped" and s.provenance.origin == "x" and s.id == "x~swap"
