"""Mask similarity metrics."""
import numpy as np
from scipy import ndimage

TAU_SEMANTIC = 0.1
_CROSS = ndimage.generate_binary_structure(2, 1)


def _pair(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def iou(a, b) -> float:
    """Intersection over union; 1 when both masks are empty."""
    a, b = _pair(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def boundary(mask) -> np.ndarray:
    """Mask pixels with a 4-neighbor outside the mask (the image border counts as outside)."""
    mask = np.asarray(mask).astype(bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)


def boundary_chamfer(a, b) -> float:
    """Symmetric mean nearest-boundary-pixel distance, divided by the image diagonal.

    Both boundaries empty gives 0; exactly one empty gives 1.
    """
    a, b = _pair(a, b)
    ba, bb = boundary(a), boundary(b)
    na, nb = np.count_nonzero(ba), np.count_nonzero(bb)
    if na == 0 and nb == 0:
        return 0.0
    if na == 0 or nb == 0:
        return 1.0
    to_b = ndimage.distance_transform_edt(~bb)
    to_a = ndimage.distance_transform_edt(~ba)
    mean = 0.5 * (to_b[ba].mean() + to_a[bb].mean())
    return float(mean / np.hypot(*a.shape))


def dino_semantic(m, target, saliency, tau_semantic: float = TAU_SEMANTIC) -> float:
    """Mean absolute mask difference over pixels whose saliency exceeds ``tau_semantic``."""
    m = np.asarray(m, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    saliency = np.asarray(saliency, dtype=np.float64)
    if not (m.shape == target.shape == saliency.shape):
        raise ValueError(f"dimension mismatch: {m.shape}, {target.shape}, {saliency.shape}")
    selected = saliency > tau_semantic
    count = np.count_nonzero(selected)
    if count == 0:
        return 0.0
    return float(np.sum(np.abs(m - target)[selected]) / count)


def mask_metrics(m, target, saliency=None, tau_semantic: float = TAU_SEMANTIC) -> dict:
    sal = np.zeros(np.shape(target)) if saliency is None else saliency
    return {
        "iou": iou(m, target),
        "chamfer": boundary_chamfer(m, target),
        "dino_semantic": dino_semantic(m, target, sal, tau_semantic),
    }
