"""Regenerate ``src/handshadow/data/default_rig.json``.

The default rig is a right hand at rest: wrist at the origin, fingers along +y,
palm facing +z (towards the screen), thumb on the -x side. Joint order follows
the MANO convention (index, middle, pinky, ring, thumb; three joints each).

Run from the repository root:

    python scripts/make_default_rig.py
"""
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "handshadow" / "data" / "default_rig.json"

# name, first-joint rest position, direction, segment lengths, radii (proximal..distal)
FINGERS = [
    ("index", (-0.025, 0.083, 0.0), (-0.04, 1.0, 0.0), (0.040, 0.024, 0.021), (0.0090, 0.0085, 0.0080)),
    ("middle", (-0.003, 0.086, 0.0), (0.0, 1.0, 0.0), (0.045, 0.028, 0.023), (0.0090, 0.0085, 0.0080)),
    ("pinky", (0.041, 0.072, 0.0), (0.08, 1.0, 0.0), (0.033, 0.019, 0.019), (0.0075, 0.0070, 0.0065)),
    ("ring", (0.019, 0.082, 0.0), (0.04, 1.0, 0.0), (0.042, 0.027, 0.022), (0.0085, 0.0080, 0.0075)),
    ("thumb", (-0.036, 0.024, 0.0), (-0.6, 0.8, 0.0), (0.042, 0.032, 0.027), (0.0110, 0.0095, 0.0085)),
]
PALM_RADIUS = {"index": 0.0110, "middle": 0.0110, "pinky": 0.0095, "ring": 0.0105, "thumb": 0.0120}
PALM_NORMAL = np.array([0.0, 0.0, 1.0])

# (twist, splay, bend) bounds in radians
FINGER_LIMITS = {
    1: {"twist": (-0.1, 0.1), "splay": (-0.35, 0.35), "bend": (0.0, 1.6)},
    2: {"twist": (-0.1, 0.1), "splay": (-0.05, 0.05), "bend": (0.0, 1.6)},
    3: {"twist": (-0.1, 0.1), "splay": (-0.05, 0.05), "bend": (0.0, 1.6)},
}
THUMB_LIMITS = {
    1: {"twist": (-0.3, 0.3), "splay": (-0.6, 0.6), "bend": (-0.3, 1.0)},
    2: {"twist": (-0.1, 0.1), "splay": (-0.2, 0.2), "bend": (0.0, 1.0)},
    3: {"twist": (-0.1, 0.1), "splay": (-0.05, 0.05), "bend": (0.0, 1.4)},
}


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _vec(v):
    return [round(float(x), 9) + 0.0 for x in v]


def build():
    joints = [{"name": "wrist", "parent": -1, "offset": [0.0, 0.0, 0.0],
               "bone_dir": [0.0, 1.0, 0.0], "scale_capsule": -1}]
    palm, segments, limits = [], [], []
    for f, (name, base, direction, lengths, radii) in enumerate(FINGERS):
        d = _unit(direction)
        base = np.asarray(base)
        first = len(joints)
        palm.append({"name": f"{name}_palm", "joint": 0, "p0": [0.0, 0.0, 0.0],
                     "p1": _vec(base), "radius": PALM_RADIUS[name]})
        positions = [base + d * sum(lengths[:k]) for k in range(4)]
        for k in range(3):
            j = first + k
            parent = 0 if k == 0 else j - 1
            parent_pos = np.zeros(3) if k == 0 else positions[k - 1]
            # capsule spanning parent -> this joint; palm capsules are indexed 0..4
            scale_capsule = f if k == 0 else 5 + (j - 2)
            joints.append({"name": f"{name}{k + 1}", "parent": parent,
                           "offset": _vec(positions[k] - parent_pos),
                           "bone_dir": _vec(d), "scale_capsule": scale_capsule})
            segments.append((j, {"name": f"{name}{k + 1}_seg", "joint": j, "p0": [0.0, 0.0, 0.0],
                                 "p1": _vec(d * lengths[k]), "radius": radii[k]}))
            bend = _unit(np.cross(d, PALM_NORMAL))
            table = THUMB_LIMITS if name == "thumb" else FINGER_LIMITS
            lim = table[k + 1]
            limits.append({"joint": j, "twist_axis": d.tolist(), "bend_axis": bend.tolist(),
                           "twist": list(lim["twist"]), "splay": list(lim["splay"]),
                           "bend": list(lim["bend"])})
    segments.sort(key=lambda item: item[0])
    capsules = palm + [c for _, c in segments]

    n = len(capsules)
    finger_ids = {name: [5 + 3 * f + k for k in range(3)] for f, (name, *_rest) in enumerate(FINGERS)}
    is_palm = np.array([1.0] * 5 + [0.0] * 15)

    def row(name, length=None, radius=None):
        return {"name": name,
                "length_delta": _vec(np.zeros(n) if length is None else length),
                "radius_delta": _vec(np.zeros(n) if radius is None else radius)}

    def only(ids, value):
        out = np.zeros(n)
        out[ids] = value
        return out

    distal = [ids[2] for ids in finger_ids.values()]
    basis = [
        row("overall_size", np.full(n, 0.05), np.full(n, 0.05)),
        row("finger_length", 0.05 * (1.0 - is_palm)),
        row("thickness", None, np.full(n, 0.05)),
        row("thumb_length", only(finger_ids["thumb"], 0.05)),
        row("index_length", only(finger_ids["index"], 0.05)),
        row("middle_length", only(finger_ids["middle"], 0.05)),
        row("ring_length", only(finger_ids["ring"], 0.05)),
        row("pinky_length", only(finger_ids["pinky"], 0.05)),
        row("palm_length", 0.05 * is_palm),
        row("fingertip_size", only(distal, 0.03), only(distal, 0.05)),
    ]
    return {
        "format": "handshadow-rig",
        "version": 1,
        "side": "right",
        "units": {"length": "m", "angle": "rad"},
        "joints": joints,
        "capsules": capsules,
        "shape_basis": basis,
        "limits": limits,
    }


if __name__ == "__main__":
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(build(), indent=1) + "\n")
    print(f"wrote {OUT}")
