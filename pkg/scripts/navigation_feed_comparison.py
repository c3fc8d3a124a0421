"""Navigate to the human under a perfect and a degraded perception feed.

Writes both CSV logs and an SVG of the six PBVS error components for each,
then prints the convergence ratios and the total variation of the error norm.

    python3 scripts/navigation_feed_comparison.py --seeds 0 1 2 --out out/nav
"""

import argparse
from pathlib import Path

import numpy as np

from tasqp.cli import run
from tasqp.controller import load_scenario, read_log
from tasqp.plot import plot
from tasqp.simrobot import FeedModel


def pbvs_stats(log):
    _, c = read_log(log)
    E = np.column_stack([c[f"task_err.pbvs.{i}"] for i in range(6)])
    t = c["time_s"]
    ok = np.all(np.isfinite(E), axis=1)
    E, t = E[ok], t[ok]
    init = np.abs(E[0])
    final = np.abs(E[t >= t[-1] - 1.0]).mean(axis=0)
    live = init > 1e-9
    worst = float(np.max(final[live] / init[live]))
    tv = float(np.abs(np.diff(np.linalg.norm(E, axis=1))).sum())
    return worst, tv, float(t[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    ap.add_argument("--out", default="out/nav")
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    sc = load_scenario("navigate_to_human")

    log = out / "perfect.csv"
    run(sc, log=log, feed=FeedModel(period=8, latency=0, dropout=0.0, sigma_pos=0.0, sigma_rot=0.0))
    plot(log, ["task_err.pbvs.*"], out / "perfect.svg", title="PBVS error, perfect feed")
    worst, tv_p, t_end = pbvs_stats(log)
    print(f"perfect   worst final/initial {worst:.3f}  TV {tv_p:.3f}  end {t_end:.1f} s")

    passed = 0
    for seed in a.seeds:
        log = out / f"degraded_{seed}.csv"
        rep = run(sc, log=log, seed=seed)
        plot(log, ["task_err.pbvs.*"], out / f"degraded_{seed}.svg", title=f"PBVS error, degraded feed, seed {seed}")
        worst, tv, t_end = pbvs_stats(log)
        ok = rep.terminal and worst < 0.05 and tv_p <= 0.7 * tv and t_end <= 60.0
        passed += ok
        print(f"seed {seed:<3} worst final/initial {worst:.3f}  TV {tv:.3f}  end {t_end:.1f} s  {'ok' if ok else 'FAIL'}")
    print(f"{passed}/{len(a.seeds)} seeds converge with a rougher error norm than the perfect feed")


if __name__ == "__main__":
    main()
