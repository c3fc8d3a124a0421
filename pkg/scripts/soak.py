"""Random aggressive-task soak: check limits and collision margins over many seeds.

    python3 scripts/soak.py --seeds 0 1 2 3 --seconds 10
"""

import argparse

import numpy as np

from tasqp.cli import make_sim, run
from tasqp.soak import load_soak


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--seconds", type=float, default=10.0)
    a = ap.parse_args()
    print(f"{'seed':>4} {'ticks':>6} {'violation':>10} {'plant acc excess':>17} {'d_min':>7} {'infeasible':>10}")
    for seed in a.seeds:
        sc = load_soak(seed, a.seconds)
        sim = make_sim(sc)
        m = sim.model
        worst = [0.0]
        cycle = sim.cycle

        def spy(inbox=(), cycle=cycle, worst=worst):
            out = cycle(inbox)
            worst[0] = max(worst[0], float(np.max(np.abs(sim.base_acc) - m.base_a_max)))
            return out

        sim.cycle = spy
        rep = run(sc, sim=sim)
        print(f"{seed:>4} {rep.ticks:>6} {rep.violation_max:>10.1e} {worst[0]:>17.1e} {rep.d_min:>7.4f} {rep.infeasible_ticks:>10}")
    print(f"safety distance {sc.damper.ds} m, floor {0.95 * sc.damper.ds:.4f} m")


if __name__ == "__main__":
    main()
