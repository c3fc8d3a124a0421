"""Random aggressive-task soak scenarios for constraint stress tests.

Every phase asks for something the constraints must refuse: joint targets at
the limits under high gains, hand targets inside the body or across it, and base goals metres
away behind high gains. Phases switch on a timer so targets jump abruptly.
"""

from __future__ import annotations

import json

import numpy as np

from .controller import parse_scenario, scenario_path
from .model import load_model


def soak_scenario(seed=0, seconds=10.0, phase_s=1.0):
    """Scenario document with ``seconds / phase_s`` random phases then ``Done``."""
    rng = np.random.default_rng(seed)
    tmpl = json.loads(scenario_path("posture_demo").read_text())
    rname = tmpl["robots"][0]["name"]
    m = load_model(tmpl["robots"][0]["description"])
    arm = [j for j in m.joint_names if not j.endswith("Gripper")]

    n_phase = max(1, int(round(seconds / phase_s)))
    tasks, states = {}, []
    for k in range(n_phase):
        lo = np.array([m.pos_min[m.joint_index[j]] for j in arm])
        hi = np.array([m.pos_max[m.joint_index[j]] for j in arm])
        # U-shaped draw: most targets sit near a limit
        post = lo + (hi - lo) * rng.beta(0.3, 0.3, len(arm))
        tasks[f"posture{k}"] = {
            "type": "posture", "robot": rname, "joints": arm,
            "target": {j: float(x) for j, x in zip(arm, post)},
            "gains": {"kp": float(rng.uniform(20, 60)), "weight": 0.1},
        }
        names = [f"posture{k}"]
        for side, frame in (("r", "r_gripper"), ("l", "l_gripper")):
            if rng.random() < 0.7:
                # box spans the torso, the head and the other arm
                xyz = rng.uniform([-0.1, -0.45, 0.3], [0.5, 0.45, 1.4])
                tasks[f"{side}hand{k}"] = {
                    "type": "end_effector", "robot": rname, "frame": frame,
                    "target": {"translation": xyz.tolist(), "rpy": rng.uniform(-np.pi, np.pi, 3).tolist()},
                    "gains": {"kp": float(rng.uniform(20, 80))},
                }
                names.append(f"{side}hand{k}")
        if rng.random() < 0.8:
            goal = rng.uniform([-3, -3, 0], [3, 3, 0])
            tasks[f"base{k}"] = {
                "type": "end_effector", "robot": rname, "frame": "base_frame",
                "target": {"translation": goal.tolist(), "rpy": [0.0, 0.0, float(rng.uniform(-np.pi, np.pi))]},
                "gains": {"kp": float(rng.uniform(5, 40))},
            }
            names.append(f"base{k}")
        nxt = f"Phase{k + 1}" if k + 1 < n_phase else "Done"
        states.append({"name": f"Phase{k}", "tasks": names,
                       "transitions": [{"trigger": {"type": "time_elapsed", "seconds": phase_s}, "next": nxt}]})
    states.append({"name": "Done", "tasks": []})

    dt = tmpl["controller"]["dt"]
    doc = {k: tmpl[k] for k in ("robots", "controller", "contacts", "collision_pairs", "grippers")}
    doc.update(
        name=f"soak_{seed}",
        tasks=tasks,
        states=states,
        initial_state="Phase0",
        terminal_states=["Done"],
        simulation=dict(tmpl["simulation"], seed=int(seed)),
        tick_budget=int(np.ceil(seconds / dt)) + n_phase + 2,
    )
    return doc


def load_soak(seed=0, seconds=10.0, phase_s=1.0):
    return parse_scenario(soak_scenario(seed, seconds, phase_s))
