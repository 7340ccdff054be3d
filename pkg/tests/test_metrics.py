import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handshadow.metrics import TAU_SEMANTIC, boundary, boundary_chamfer, dino_semantic, iou, mask_metrics

rngs = st.integers(0, 2**32 - 1).map(np.random.default_rng)


def block(shape, r0, r1, c0, c1):
    m = np.zeros(shape, dtype=np.uint8)
    m[r0:r1, c0:c1] = 1
    return m


def test_iou_examples():
    a = block((8, 8), 2, 4, 2, 4)
    assert iou(a, a) == 1.0
    assert iou(a, block((8, 8), 5, 7, 5, 7)) == 0.0
    # 2x2 block shifted right by one pixel: overlap 2, union 6 (counted by hand)
    assert iou(a, block((8, 8), 2, 4, 3, 5)) == 2 / 6
    assert iou(np.zeros((8, 8)), np.zeros((8, 8))) == 1.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        iou(np.zeros((8, 8)), np.zeros((8, 9)))
    with pytest.raises(ValueError):
        boundary_chamfer(np.zeros((8, 8)), np.zeros((9, 8)))
    with pytest.raises(ValueError):
        dino_semantic(np.zeros((8, 8)), np.zeros((8, 8)), np.zeros((8, 7)))


def test_boundary_is_four_connected():
    m = block((7, 7), 1, 6, 1, 6)
    b = boundary(m)
    assert b.sum() == 16  # ring of a 5x5 block
    assert not b[3, 3]
    # pixels on the image border count as boundary
    assert boundary(np.ones((3, 3))).sum() == 8


def test_chamfer_examples():
    a = block((8, 8), 2, 4, 2, 4)
    assert boundary_chamfer(a, a) == 0.0
    one = np.zeros((8, 8))
    one[4, 1] = 1
    other = np.zeros((8, 8))
    other[4, 4] = 1
    assert boundary_chamfer(one, other) == pytest.approx(3 / np.hypot(8, 8), rel=1e-15)
    assert boundary_chamfer(np.zeros((8, 8)), np.zeros((8, 8))) == 0.0
    assert boundary_chamfer(np.zeros((8, 8)), a) == 1.0


def test_chamfer_hand_computed_asymmetric_case():
    a = np.zeros((8, 8))
    a[1, 1] = 1
    b = np.zeros((8, 8))
    b[1, 4] = b[5, 1] = 1
    # a -> b: 3; b -> a: (3 + 4) / 2; symmetric mean: (3 + 3.5) / 2
    assert boundary_chamfer(a, b) == pytest.approx(3.25 / np.hypot(8, 8), rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(rngs)
def test_metric_symmetry(rng):
    a = rng.random((12, 10)) > 0.6
    b = rng.random((12, 10)) > 0.6
    assert iou(a, b) == iou(b, a)
    assert boundary_chamfer(a, b) == boundary_chamfer(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


def test_dino_semantic_examples():
    t = block((8, 8), 2, 6, 2, 6)
    assert dino_semantic(t, t, np.ones((8, 8))) == 0.0
    sal = np.zeros((8, 8))
    sal[0, 0] = sal[0, 1] = sal[7, 7] = sal[3, 3] = 0.9
    m = t.copy()
    m[3, 3] = 0
    assert dino_semantic(m, t, sal) == 0.25
    assert dino_semantic(m, t, np.zeros((8, 8))) == 0.0  # empty indicator set


def test_dino_semantic_default_threshold():
    assert TAU_SEMANTIC == 0.1
    t = np.zeros((8, 8))
    m = np.zeros((8, 8))
    m[0, 0] = 1
    sal = np.full((8, 8), 0.1)  # not above the threshold
    sal[0, 0] = 0.11
    assert dino_semantic(m, t, sal) == 1.0


@settings(max_examples=30, deadline=None)
@given(rngs)
def test_dino_semantic_uniform_saliency_is_mean_abs(rng):
    m = (rng.random((8, 8)) > 0.5).astype(float)
    t = (rng.random((8, 8)) > 0.5).astype(float)
    assert dino_semantic(m, t, np.ones((8, 8)), 0.1) == np.mean(np.abs(m - t))


def test_mask_metrics_bundle():
    a = block((8, 8), 2, 4, 2, 4)
    out = mask_metrics(a, a)
    assert out == {"iou": 1.0, "chamfer": 0.0, "dino_semantic": 0.0}
