"""Central projection through the light and soft silhouette rasterization.

Each capsule projects to the convex hull of its two endpoint disks (a
"stadium" with perspective-scaled radii). Pixel coverage is
``logistic(-d / s)`` of the stadium's signed distance ``d``, and coverages are
combined as ``1 - prod(1 - alpha)``. The union is accumulated in log space,
which also gives the reverse pass in closed form:
``dA/dT_i = -(1 - A) * alpha_i / s``.

The interior of each stadium is saturated below ``-gamma`` (``gamma`` a smooth
lower bound of the smaller endpoint radius): the exact signed distance has a
ridge along the medial axis, and flattening the profile there keeps the
coverage continuously differentiable. The zero level set and the exterior are
untouched.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numba
import numpy as np

from handshadow.rig import FREE_SIZE, PosedHand, fk_vjp

# coverage is evaluated within this many softness units of each stadium
CUTOFF = 40.0
# smoothing width of the min(ra, rb) bound, screen meters
GAMMA_DELTA = 1e-4
# interior profile: identity above -GAMMA_BLEND * gamma, flat below -gamma
GAMMA_BLEND = 0.5
_Z_EPS = 1e-9


class ProjectionError(ValueError):
    """A point cannot be projected (at/behind the light, or beyond the screen)."""

    def __init__(self, message: str, capsule: int | None = None):
        super().__init__(message if capsule is None else f"capsule {capsule}: {message}")
        self.capsule = capsule


@dataclass(frozen=True)
class SceneConfig:
    """Fixed light/screen geometry. Lengths in meters."""

    light_position: tuple = (0.0, 0.0, 0.0)
    screen_distance: float = 2.5
    image_width: int = 256
    image_height: int = 256
    screen_extent: float = 2.0
    softness: float = 0.01
    binarize_threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "light_position", tuple(float(v) for v in self.light_position))
        if len(self.light_position) != 3:
            raise ValueError("light_position must have 3 components")
        if not self.screen_distance > 0:
            raise ValueError("screen_distance must be > 0")
        if self.image_width < 8 or self.image_height < 8:
            raise ValueError("image dimensions must be >= 8")
        if not self.softness > 0:
            raise ValueError("softness must be > 0")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie in (0, 1)")
        if not self.screen_extent > 0:
            raise ValueError("screen_extent must be > 0")

    @property
    def shape(self) -> tuple:
        return (self.image_height, self.image_width)

    @property
    def pixel_size(self) -> float:
        return self.screen_extent / max(self.image_width, self.image_height)

    def pixel_centers(self):
        """Screen coordinates of pixel centers relative to the optical axis: (xs per column, ys per row)."""
        px = self.pixel_size
        xs = (np.arange(self.image_width) + 0.5 - self.image_width / 2) * px
        ys = (self.image_height / 2 - np.arange(self.image_height) - 0.5) * px
        return xs, ys

    def to_dict(self) -> dict:
        out = asdict(self)
        out["light_position"] = list(self.light_position)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


def project_point(scene: SceneConfig, p):
    """Project ``p`` from the light onto the screen.

    Returns ``(screen_xy, pixel_colrow)``: absolute screen coordinates in
    meters and continuous pixel coordinates (column, row) with pixel centers
    at integers.
    """
    p = np.asarray(p, dtype=np.float64)
    light = np.asarray(scene.light_position)
    depth = p[2] - light[2]
    if depth <= _Z_EPS:
        raise ProjectionError(f"point at depth {depth:.6g} m is at or behind the light")
    if depth >= scene.screen_distance:
        raise ProjectionError(f"point at depth {depth:.6g} m is beyond the screen")
    rel = (p[:2] - light[:2]) * scene.screen_distance / depth
    px = scene.pixel_size
    col = rel[0] / px + scene.image_width / 2 - 0.5
    row = scene.image_height / 2 - 0.5 - rel[1] / px
    return light[:2] + rel, np.array([col, row])


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _stadium(px, py, ax, ay, bx, by, ra, rb, g):
    """Signed distance to the hull of disks (a, ra), (b, rb); fills g with d/d(ax, ay, bx, by, ra, rb)."""
    ex = bx - ax
    ey = by - ay
    l = np.sqrt(ex * ex + ey * ey)
    for k in range(6):
        g[k] = 0.0
    if l <= abs(ra - rb) + 1e-15:
        # one disk contains the other
        if ra >= rb:
            qx = px - ax
            qy = py - ay
            n = np.sqrt(qx * qx + qy * qy)
            if n > 0:
                g[0] = -qx / n
                g[1] = -qy / n
            g[4] = -1.0
            return n - ra
        qx = px - bx
        qy = py - by
        n = np.sqrt(qx * qx + qy * qy)
        if n > 0:
            g[2] = -qx / n
            g[3] = -qy / n
        g[5] = -1.0
        return n - rb
    hx = ex / l
    hy = ey / l
    qx = px - ax
    qy = py - ay
    u = qx * hx + qy * hy
    w = -hy * qx + hx * qy
    sgn = 1.0 if w >= 0 else -1.0
    v = abs(w)
    c = (ra - rb) / l
    sn = np.sqrt(1.0 - c * c)
    k = u * sn - v * c
    if k < 0.0:
        n = np.sqrt(qx * qx + qy * qy)
        if n > 0:
            g[0] = -qx / n
            g[1] = -qy / n
        g[4] = -1.0
        return n - ra
    if k > l * sn:
        rx = px - bx
        ry = py - by
        n = np.sqrt(rx * rx + ry * ry)
        if n > 0:
            g[2] = -rx / n
            g[3] = -ry / n
        g[5] = -1.0
        return n - rb
    d = u * c + v * sn - ra
    # perpendicular unit h_perp = (-hy, hx)
    nx = c * hx - sn * sgn * hy
    ny = c * hy + sn * sgn * hx
    fe_perp = (c * w - sn * sgn * u) / l
    fe_par = (-u * c + v * c * c / sn) / l
    dex = fe_perp * (-hy) + fe_par * hx
    dey = fe_perp * hx + fe_par * hy
    g[0] = -nx - dex
    g[1] = -ny - dey
    g[2] = dex
    g[3] = dey
    dc = (u - v * c / sn) / l
    g[4] = dc - 1.0
    g[5] = -dc
    return d


@numba.njit(cache=True, nogil=True)
def _gamma(ra, rb):
    diff = ra - rb
    root = np.sqrt(diff * diff + GAMMA_DELTA * GAMMA_DELTA)
    gam = 0.5 * (ra + rb - root)
    return gam, 0.5 * (1.0 - diff / root), 0.5 * (1.0 + diff / root)


@numba.njit(cache=True, nogil=True)
def _profile(d, gam):
    """Interior-saturated distance: returns (T, dT/dd, dT/dgamma).

    Between ``-GAMMA_BLEND * gam`` and ``-gam`` the slope falls from 1 to 0
    along a smoothstep, so the profile is C2.
    """
    g0 = GAMMA_BLEND * gam
    if d >= -g0:
        return d, 1.0, 0.0
    if d <= -gam:
        lvl = 0.5 * (1.0 + GAMMA_BLEND)
        return -lvl * gam, 0.0, -lvl
    width = (1.0 - GAMMA_BLEND) * gam
    u = (-d - g0) / width
    step = u * u * (3.0 - 2.0 * u)
    integral = u * u * u * (1.0 - 0.5 * u)
    t = d + width * integral
    dtdd = 1.0 - step
    dtdg = (1.0 - GAMMA_BLEND) * integral - step * (GAMMA_BLEND + u * (1.0 - GAMMA_BLEND))
    return t, dtdd, dtdg


@numba.njit(cache=True, nogil=True)
def _log_sigmoid(z):
    if z >= 0:
        return -np.log1p(np.exp(-z))
    return z - np.log1p(np.exp(z))


@numba.njit(cache=True, nogil=True)
def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True, nogil=True)
def _bbox(cap, xs, ys, margin):
    ax, ay, bx, by, ra, rb = cap[0], cap[1], cap[2], cap[3], cap[4], cap[5]
    x0 = min(ax - ra, bx - rb) - margin
    x1 = max(ax + ra, bx + rb) + margin
    y0 = min(ay - ra, by - rb) - margin
    y1 = max(ay + ra, by + rb) + margin
    w = xs.shape[0]
    h = ys.shape[0]
    px = xs[1] - xs[0]
    j0 = max(0, int(np.ceil((x0 - xs[0]) / px)))
    j1 = min(w - 1, int(np.floor((x1 - xs[0]) / px)))
    # ys decrease with row index
    i0 = max(0, int(np.ceil((ys[0] - y1) / px)))
    i1 = min(h - 1, int(np.floor((ys[0] - y0) / px)))
    return i0, i1, j0, j1


@numba.njit(cache=True, nogil=True)
def _forward(caps, xs, ys, s):
    h = ys.shape[0]
    w = xs.shape[0]
    logsum = np.zeros((h, w))
    g = np.empty(6)
    margin = CUTOFF * s
    for c in range(caps.shape[0]):
        cap = caps[c]
        gam, _, _ = _gamma(cap[4], cap[5])
        i0, i1, j0, j1 = _bbox(cap, xs, ys, margin)
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                d = _stadium(xs[j], ys[i], cap[0], cap[1], cap[2], cap[3], cap[4], cap[5], g)
                t, _, _ = _profile(d, gam)
                logsum[i, j] += _log_sigmoid(t / s)
    return logsum


@numba.njit(cache=True, nogil=True)
def _backward(caps, xs, ys, s, uncovered, adjoint):
    """Gradient of sum(adjoint * A) with respect to each capsule's (ax, ay, bx, by, ra, rb)."""
    out = np.zeros((caps.shape[0], 6))
    g = np.empty(6)
    margin = CUTOFF * s
    for c in range(caps.shape[0]):
        cap = caps[c]
        gam, dga, dgb = _gamma(cap[4], cap[5])
        i0, i1, j0, j1 = _bbox(cap, xs, ys, margin)
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        acc3 = 0.0
        acc4 = 0.0
        acc5 = 0.0
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                a = adjoint[i, j]
                if a == 0.0:
                    continue
                d = _stadium(xs[j], ys[i], cap[0], cap[1], cap[2], cap[3], cap[4], cap[5], g)
                t, dtdd, dtdg = _profile(d, gam)
                alpha = _sigmoid(-t / s)
                coef = -a * uncovered[i, j] * alpha / s
                cd = coef * dtdd
                acc0 += cd * g[0]
                acc1 += cd * g[1]
                acc2 += cd * g[2]
                acc3 += cd * g[3]
                acc4 += cd * g[4] + coef * dtdg * dga
                acc5 += cd * g[5] + coef * dtdg * dgb
        out[c, 0] = acc0
        out[c, 1] = acc1
        out[c, 2] = acc2
        out[c, 3] = acc3
        out[c, 4] = acc4
        out[c, 5] = acc5
    return out


# ---------------------------------------------------------------------------
# Projection of posed hands
# ---------------------------------------------------------------------------


@dataclass
class Projection:
    """Projected stadiums of a list of hands, in canonical (sorted) order."""

    caps: np.ndarray  # (C, 6) ax, ay, bx, by, ra, rb in canonical order
    order: np.ndarray  # canonical position -> flat capsule index
    depth0: np.ndarray  # (C,) endpoint depths in flat order
    depth1: np.ndarray
    flat: np.ndarray  # (C, 6) flat order
    counts: list


def project_hands(scene: SceneConfig, hands: Sequence[PosedHand]) -> Projection:
    light = np.asarray(scene.light_position)
    D = scene.screen_distance
    rows, d0s, d1s, counts = [], [], [], []
    offset = 0
    for hand in hands:
        z0 = hand.p0[:, 2] - light[2]
        z1 = hand.p1[:, 2] - light[2]
        for z in (z0, z1):
            bad = np.flatnonzero((z <= _Z_EPS) | (z >= D))
            if bad.size:
                k = int(bad[0])
                where = "at or behind the light" if z[k] <= _Z_EPS else "beyond the screen"
                raise ProjectionError(f"endpoint depth {z[k]:.6g} m is {where}", capsule=offset + k)
        f0 = D / z0
        f1 = D / z1
        a = (hand.p0[:, :2] - light[:2]) * f0[:, None]
        b = (hand.p1[:, :2] - light[:2]) * f1[:, None]
        rows.append(np.column_stack([a, b, hand.radii * f0, hand.radii * f1]))
        d0s.append(z0)
        d1s.append(z1)
        counts.append(hand.num_capsules)
        offset += hand.num_capsules
    if rows:
        flat = np.vstack(rows)
        depth0, depth1 = np.concatenate(d0s), np.concatenate(d1s)
    else:
        flat = np.zeros((0, 6))
        depth0 = depth1 = np.zeros(0)
    order = np.lexsort(flat.T[::-1]) if len(flat) else np.zeros(0, dtype=np.int64)
    caps = np.ascontiguousarray(flat[order])
    return Projection(caps, order, depth0, depth1, flat, counts)


def soft_logsum(scene: SceneConfig, proj: Projection) -> np.ndarray:
    xs, ys = scene.pixel_centers()
    if len(proj.caps) == 0:
        return np.zeros(scene.shape)
    return _forward(proj.caps, xs, ys, float(scene.softness))


def render_soft(scene: SceneConfig, hands: Sequence[PosedHand]) -> np.ndarray:
    """Soft coverage image (H, W) in [0, 1]."""
    return -np.expm1(soft_logsum(scene, project_hands(scene, hands)))


def binarize(mask, threshold: float = 0.5) -> np.ndarray:
    """1 where coverage >= threshold (inclusive), else 0; dtype uint8."""
    return (np.asarray(mask) >= threshold).astype(np.uint8)


def projection_vjp(scene: SceneConfig, proj: Projection, logsum: np.ndarray, adjoint: np.ndarray):
    """Gradient of sum(adjoint * A) w.r.t. the world capsule endpoints.

    Returns (grad_p0, grad_p1) in flat capsule order, each (C, 3).
    """
    n = len(proj.flat)
    if n == 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    xs, ys = scene.pixel_centers()
    uncovered = np.exp(logsum)
    gcanon = _backward(proj.caps, xs, ys, float(scene.softness), uncovered, np.ascontiguousarray(adjoint, dtype=np.float64))
    gflat = np.empty_like(gcanon)
    gflat[proj.order] = gcanon
    f0 = scene.screen_distance / proj.depth0
    f1 = scene.screen_distance / proj.depth1
    a, b = proj.flat[:, 0:2], proj.flat[:, 2:4]
    ra, rb = proj.flat[:, 4], proj.flat[:, 5]
    ga, gb = gflat[:, 0:2], gflat[:, 2:4]
    gra, grb = gflat[:, 4], gflat[:, 5]
    gp0 = np.zeros((n, 3))
    gp1 = np.zeros((n, 3))
    gp0[:, :2] = ga * f0[:, None]
    gp1[:, :2] = gb * f1[:, None]
    gp0[:, 2] = -(np.sum(ga * a, axis=1) + gra * ra) / proj.depth0
    gp1[:, 2] = -(np.sum(gb * b, axis=1) + grb * rb) / proj.depth1
    return gp0, gp1


def hands_vjp_from_endpoints(hands: Sequence[PosedHand], gp0: np.ndarray, gp1: np.ndarray) -> np.ndarray:
    """Chain endpoint gradients through forward kinematics; (51 * len(hands),)."""
    out = []
    offset = 0
    for hand in hands:
        n = hand.num_capsules
        rig = hand.rig
        base = rig.rest_positions[rig.capsule_joint]
        joints = np.concatenate([rig.capsule_joint, rig.capsule_joint])
        rest = np.vstack([base + rig.capsule_p0, base + rig.capsule_p1])
        grads = np.vstack([gp0[offset:offset + n], gp1[offset:offset + n]])
        out.append(fk_vjp(hand, joints, rest, grads))
        offset += n
    return np.concatenate(out) if out else np.zeros(0)


def render_vjp(scene: SceneConfig, hands: Sequence[PosedHand], adjoint) -> np.ndarray:
    """d(sum_p adjoint(p) A(p)) / d(free pose parameters), 51 per hand in the given order."""
    adjoint = np.asarray(adjoint, dtype=np.float64)
    if adjoint.shape != scene.shape:
        raise ValueError(f"adjoint shape {adjoint.shape} does not match image {scene.shape}")
    if not hands:
        return np.zeros(0)
    proj = project_hands(scene, hands)
    logsum = soft_logsum(scene, proj)
    gp0, gp1 = projection_vjp(scene, proj, logsum, adjoint)
    grad = hands_vjp_from_endpoints(hands, gp0, gp1)
    assert grad.size == FREE_SIZE * len(hands)
    return grad
