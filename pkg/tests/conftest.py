import json

import numpy as np
import pytest

from tasqp.model import compile, load_model, parse_description


def chain_doc(joints, base="fixed", name="chain", masses=None, spheres=False):
    """Serial chain description.  ``joints``: list of (kind, axis, origin_xyz[, origin_rpy])."""
    n = len(joints)
    masses = masses if masses is not None else [1.0] * (n + 1)
    links = []
    for i in range(n + 1):
        ld = {"name": f"l{i}", "mass": masses[i], "com": [0.05 * i, 0.01, -0.02]}
        if spheres:
            ld["collision_spheres"] = [{"center": [0.0, 0.0, 0.0], "radius": 0.05}]
        links.append(ld)
    jd = []
    for i, spec in enumerate(joints):
        kind, axis, xyz = spec[:3]
        rpy = spec[3] if len(spec) > 3 else [0.0, 0.0, 0.0]
        jd.append({
            "name": f"j{i}", "kind": kind, "parent_link": f"l{i}", "child_link": f"l{i + 1}",
            "origin": {"xyz": list(xyz), "rpy": list(rpy)}, "axis": list(axis),
            "limits": {"pos_min": -3.0, "pos_max": 3.0, "vel_max": 2.0, "acc_max": 10.0},
        })
    b = {"kind": base, "root_link": "l0"}
    if base == "planar":
        b["limits"] = {"v_max": [0.5, 0.5, 1.0], "a_max": [0.5, 0.5, 1.0]}
    return {"name": name, "base": b, "joints": jd, "links": links, "surfaces": [], "devices": []}


def chain_model(joints, base="fixed", **kw):
    return compile(parse_description(json.dumps(chain_doc(joints, base, **kw))))


@pytest.fixture(scope="session")
def pepper():
    return load_model("pepper_lite")


@pytest.fixture(scope="session")
def human():
    return load_model("human_lite")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
