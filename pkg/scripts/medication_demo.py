"""Run the medication handover and show what the robot did.

Prints each FSM state entry, every device command from the simulator's
journal and the gripper commands around the scripted touch.

    python3 scripts/medication_demo.py --out out/handover
"""

import argparse
import json
from pathlib import Path

from tasqp.bridge import JointCommand
from tasqp.cli import make_sim, run
from tasqp.controller import load_scenario, read_log
from tasqp.plot import plot


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/handover")
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)

    sc = load_scenario("medication_handover")
    sim = make_sim(sc, a.seed)
    grip = []
    apply = sim.apply

    def spy(msg, tick):
        if isinstance(msg, JointCommand):
            grip.append((tick, msg.positions.get("LGripper"), msg.positions.get("RGripper")))
        return apply(msg, tick)

    sim.apply = spy
    log = out / "handover.csv"
    rep = run(sc, log=log, seed=a.seed, sim=sim)
    (out / "device_journal.txt").write_text("".join(line + "\n" for line in sim.device_journal))
    plot(log, ["task_err.pbvs.*"], out / "pbvs.svg", title="PBVS error during the handover")

    _, cols = read_log(log)
    prev = None
    for t, s in zip(cols["tick"], cols["state"]):
        if s != prev:
            print(f"tick {int(t):>5}  {t * sc.config.dt:7.3f} s  enter {s}")
            prev = s
    print("device journal:")
    for line in sim.device_journal:
        tick, device, payload = line.split(",", 2)
        print(f"  tick {tick:>5}  {device:<8} {json.loads(payload)}")
    touch = sc.simulation["touch_script"][0]["tick"]
    print(f"gripper commands around the touch at tick {touch}:")
    for t, lg, rg in grip:
        if touch - 2 <= t <= touch + 3:
            print(f"  tick {t}  LGripper {lg:.3f}  RGripper {rg:.3f}")
    print(f"final state {rep.final_state} after {rep.ticks} ticks; log in {log}")


if __name__ == "__main__":
    main()
