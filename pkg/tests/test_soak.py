import numpy as np
import pytest

from tasqp.cli import run
from tasqp.soak import load_soak, soak_scenario


def test_soak_scenario_shape():
    doc = soak_scenario(seed=3, seconds=4.0, phase_s=1.0)
    assert [s["name"] for s in doc["states"]] == ["Phase0", "Phase1", "Phase2", "Phase3", "Done"]
    assert doc["simulation"]["seed"] == 3
    assert soak_scenario(seed=3, seconds=4.0) == doc


@pytest.mark.parametrize("seed", [1, 2])
def test_soak_holds_limits(seed):
    sc = load_soak(seed=seed, seconds=5.0)
    rep = run(sc)
    assert rep.final_state == "Done" and rep.infeasible_ticks == 0
    assert rep.violation_max <= 1e-9
    assert rep.d_min >= 0.95 * sc.damper.ds
