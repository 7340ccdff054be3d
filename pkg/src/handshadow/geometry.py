"""Vectorized segment-segment closest points."""
import numpy as np

_EPS = 1e-18


def segment_segment(p0, p1, q0, q1):
    """Closest points between segments ``p0p1`` and ``q0q1`` (arrays of shape (N, 3)).

    Returns ``(dist, s, t, cp, cq)`` with ``cp = p0 + s (p1 - p0)`` and
    ``cq = q0 + t (q1 - q0)``. Parallel segments resolve to ``s = 0`` (or the
    clamped projection), which still yields the exact distance.
    """
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)

    a_ok = a > _EPS
    e_ok = e > _EPS
    safe_a = np.where(a_ok, a, 1.0)
    safe_e = np.where(e_ok, e, 1.0)
    denom = a * e - b * b
    general = np.where(denom > _EPS * np.maximum(a * e, _EPS), (b * f - c * e) / np.where(denom > 0, denom, 1.0), 0.0)
    s = np.clip(general, 0.0, 1.0)
    t = (b * s + f) / safe_e
    low = t < 0.0
    high = t > 1.0
    s = np.where(low, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(high, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # degenerate segments
    s = np.where(e_ok, s, np.clip(-c / safe_a, 0.0, 1.0))
    t = np.where(e_ok, t, 0.0)
    s = np.where(a_ok, s, 0.0)
    t = np.where(a_ok, t, np.clip(f / safe_e, 0.0, 1.0))
    t = np.where(a_ok | e_ok, t, 0.0)

    cp = p0 + s[:, None] * d1
    cq = q0 + t[:, None] * d2
    dist = np.linalg.norm(cp - cq, axis=1)
    return dist, s, t, cp, cq
