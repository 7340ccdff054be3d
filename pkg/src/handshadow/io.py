"""Image and pose file formats.

Masks are 8-bit grayscale PNG or PGM (0 background, 255 shadow). Soft masks
can be dumped as 16-bit PNG. Pose files are JSON::

    {"format": "handshadow-pose", "version": 1, "scene_digest": "<sha256 or null>",
     "hands": [{"side": "left", "coefficients": [61 numbers]}, ...]}

Coefficient layout per hand: global orientation (3), 15 joint rotations
(45, joint-major), shape (10), wrist translation (3). Floats are written
with shortest round-trip repr, so load(save(x)) is bitwise exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from handshadow.rig import POSE_SIZE, HandPose, RigError, Side

POSE_FORMAT = "handshadow-pose"
POSE_VERSION = 1
IMAGE_SUFFIXES = (".png", ".pgm")


class DataError(ValueError):
    """Malformed or unreadable input file."""


def _open_gray(path) -> tuple:
    """(pixel array, full-scale value) for 8- or 16-bit grayscale input."""
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode.startswith("I"):
                return np.asarray(img, dtype=np.int64), 65535
            return np.asarray(img.convert("L")), 255
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from exc


def read_mask(path) -> np.ndarray:
    """Binary uint8 mask; a pixel is shadow when at least half the full-scale value."""
    arr, full = _open_gray(path)
    return (arr.astype(np.int64) * 2 >= full).astype(np.uint8)


def write_mask(path, mask) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2 or not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must be a 2-D array of zeros and ones")
    _save(Image.fromarray((mask * 255).astype(np.uint8), mode="L"), path)


def write_soft(path, soft) -> None:
    """16-bit grayscale PNG, coverage scaled to 0..65535."""
    soft = np.clip(np.asarray(soft, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(soft * 65535).astype(np.uint16)).save(path, format="PNG")


def _save(img, path) -> None:
    fmt = "PPM" if Path(path).suffix.lower() == ".pgm" else "PNG"
    img.save(path, format=fmt)


def gaussian_kernel(size: int = 15, sigma: float = 2.5) -> np.ndarray:
    half = size // 2
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    return k / k.sum()


def blur_saliency(saliency, size: int = 15, sigma: float = 2.5) -> np.ndarray:
    """Separable Gaussian blur with a size x size kernel, reflecting at the borders."""
    k = gaussian_kernel(size, sigma)
    out = ndimage.convolve1d(np.asarray(saliency, dtype=np.float64), k, axis=0, mode="reflect")
    return ndimage.convolve1d(out, k, axis=1, mode="reflect")


def read_saliency(path, shape=None, size: int = 15, sigma: float = 2.5) -> np.ndarray:
    """Grayscale saliency rescaled by its bit depth to [0,1], then blurred."""
    arr, full = _open_gray(path)
    sal = arr.astype(np.float64) / full
    if shape is not None and sal.shape != tuple(shape):
        raise DataError(f"{path}: saliency is {sal.shape[1]}x{sal.shape[0]}, expected {shape[1]}x{shape[0]}")
    return np.clip(blur_saliency(sal, size, sigma), 0.0, 1.0)


def poses_to_dict(poses, scene_digest: str | None = None) -> dict:
    if not 1 <= len(poses) <= 2:
        raise ValueError("a pose file holds one or two hands")
    return {
        "format": POSE_FORMAT,
        "version": POSE_VERSION,
        "scene_digest": scene_digest,
        "hands": [{"side": p.side.value, "coefficients": p.to_vector().tolist()} for p in poses],
    }


def poses_from_dict(data: dict) -> list:
    if not isinstance(data, dict) or data.get("format") != POSE_FORMAT:
        raise DataError(f"not a {POSE_FORMAT} document")
    if data.get("version") != POSE_VERSION:
        raise DataError(f"unsupported pose file version {data.get('version')!r}")
    hands = data.get("hands")
    if not isinstance(hands, list) or not 1 <= len(hands) <= 2:
        raise DataError("hands: expected one or two hand records")
    poses = []
    for i, rec in enumerate(hands):
        coeffs = rec.get("coefficients") if isinstance(rec, dict) else None
        if not isinstance(coeffs, list) or len(coeffs) != POSE_SIZE:
            raise DataError(f"hands[{i}]: expected {POSE_SIZE} coefficients")
        try:
            poses.append(HandPose.from_vector(Side(rec.get("side")), np.array(coeffs, dtype=np.float64)))
        except (RigError, ValueError, TypeError) as exc:
            raise DataError(f"hands[{i}]: {exc}") from exc
    if len({p.side for p in poses}) != len(poses):
        raise DataError("hands: duplicate side")
    return sorted(poses, key=lambda p: p.side is Side.RIGHT)


def save_poses(path, poses, scene_digest: str | None = None) -> None:
    Path(path).write_text(json.dumps(poses_to_dict(poses, scene_digest), indent=1) + "\n")


def load_poses(path) -> list:
    """Poses ordered left then right."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    return poses_from_dict(data)


def pose_file_digest(path) -> str | None:
    data = json.loads(Path(path).read_text())
    return data.get("scene_digest")
