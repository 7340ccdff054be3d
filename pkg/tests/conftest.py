import numpy as np
import pytest

from handshadow.render import SceneConfig
from handshadow.rig import HandPose, Side, load_rig, mirror_rig


@pytest.fixture(scope="session")
def rig():
    return load_rig()


@pytest.fixture(scope="session")
def left_rig(rig):
    return mirror_rig(rig)


@pytest.fixture(scope="session")
def small_scene():
    return SceneConfig(image_width=64, image_height=64)


def random_pose(rng, side, scale=0.3, translation=(0.0, 0.0, 0.6), trans_scale=0.03):
    return HandPose(
        side,
        rng.normal(0.0, scale, 3),
        rng.normal(0.0, scale, (15, 3)),
        np.zeros(10),
        np.asarray(translation) + rng.normal(0.0, trans_scale, 3),
    )


def pose_pair(rng, scale=0.3, z=0.6, dx=0.1):
    return [
        random_pose(rng, Side.LEFT, scale, (-dx, -0.03, z)),
        random_pose(rng, Side.RIGHT, scale, (dx, -0.03, z)),
    ]


def capsule_rig(specs, side="right"):
    """A 16-joint rig carrying only the given capsules.

    ``specs`` holds (joint, world rest p0, world rest p1, radius); joints keep
    the default skeleton. No joint offset is tied to a capsule length.
    """
    import json

    from handshadow.rig import default_rig_path, load_rig, rig_from_dict

    data = json.loads(default_rig_path().read_text())
    rest = load_rig().rest_positions
    for j in data["joints"]:
        j["scale_capsule"] = -1
    data["capsules"] = [
        {"name": f"c{i}", "joint": j, "p0": list(np.subtract(p0, rest[j])), "p1": list(np.subtract(p1, rest[j])),
         "radius": r}
        for i, (j, p0, p1, r) in enumerate(specs)
    ]
    for b in data["shape_basis"]:
        b["length_delta"] = [0.0] * len(specs)
        b["radius_delta"] = [0.0] * len(specs)
    data["side"] = side
    return rig_from_dict(data)


# One verdict line per acceptance criterion, printed after the run.
ACCEPTANCE = {}


def record_verdict(number, name, ok, detail):
    line = f"criterion {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
