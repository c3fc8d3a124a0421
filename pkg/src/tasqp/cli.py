"""Command-line entry points and the scenario runner.

    sim serve --robot pepper_lite --human human_lite --port 9559 --mode lockstep
    ctl run --scenario navigate_to_human --connect 127.0.0.1:9559 --log out.csv --seed 0
    ctl plot --log out.csv --cols 'task_err.pbvs.*' --out fig.svg

Without ``--connect``, ``ctl run`` starts the simulator in-process and talks
to it over the loopback transport (same codec, no socket).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bridge import BridgeClient, Desync, LoopbackConnection, SocketConnection, default_port
from .controller import Controller, RobotState, TickLog, WorldState, load_scenario, read_log, state_from_snapshot
from .model import configuration_from
from .plot import UnknownColumn, plot
from .simrobot import FeedModel, SimConfig, SimRobot, SimServer, SimSession

VIOLATION_TOL = 1e-8


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class RunReport:
    scenario: str
    ticks: int
    final_state: str
    final_errors: dict
    violation_max: float
    log_path: str | None
    terminal: bool = False
    infeasible_ticks: int = 0
    d_min: float | None = None
    desyncs: int = 0

    @property
    def success(self):
        return self.terminal and self.violation_max <= VIOLATION_TOL


def build_world(scenario):
    robots = []
    for spec in scenario.robots:
        model = scenario.model(spec["name"])
        robots.append(RobotState(spec["name"], model, spec.get("role", "controlled")))
    return WorldState(robots)


def make_sim(scenario, seed=None, feed=None):
    cfg = SimConfig.from_dict(scenario.simulation, seed=seed, resolve=scenario.resolve)
    if feed is not None:
        cfg.feed = feed
    return SimRobot(cfg)


def run(scenario, connect=None, log=None, seed=None, tick_budget=None, feed=None, strict=False, sim=None):
    """Run a scenario to a terminal state or the tick budget; returns a RunReport.

    ``sim``: an existing in-process SimRobot (default: built from the scenario).
    """
    sc = load_scenario(scenario) if isinstance(scenario, (str, Path)) else scenario
    if connect:
        host, _, port = connect.rpartition(":")
        conn = SocketConnection.connect(host or "127.0.0.1", int(port))
    else:
        sim = sim if sim is not None else make_sim(sc, seed, feed)
        conn = LoopbackConnection(SimSession(sim, "lockstep"))
    client = BridgeClient(conn)
    world = build_world(sc)
    ctrl = Controller(sc, world)
    rname = world.controlled[0].name
    tlog = TickLog(sc, world, sc.config.dt)
    desyncs = 0
    try:
        client.motors_on()
        rs = world.robot(rname)
        rs.set(state_from_snapshot(rs.model, client.snapshot))
        rs.snapshot = client.snapshot
        ctrl.start()
        budget = sc.tick_budget if tick_budget is None else tick_budget
        for _ in range(budget):
            events = ctrl.consume(client.drain())
            out = ctrl.tick(events)
            try:
                snap = client.exchange_tick(out)
            except Desync:
                desyncs += 1
                ctrl.force_hold = True
                snap = client.snapshot
            tlog.record(out)
            ctrl.observe({rname: snap})
            if ctrl.fsm.done:
                break
        client.motors_off()
    finally:
        client.close()
    if log is not None:
        tlog.write(log)
    report = report_from_rows(sc, world, tlog)
    report.log_path = str(log) if log is not None else None
    report.desyncs = desyncs
    if strict and not report.terminal:
        raise BudgetExceeded(f"{sc.name}: no terminal state after {report.ticks} ticks")
    return report


def _violations(model, cols, dt):
    """Largest limit violation in a log: joint range, joint and base speed, base acceleration."""
    worst = 0.0
    off = model.nq - model.njoints
    for i, j in enumerate(model.joints):
        q = cols[f"q.{model.dof_names[model.base_dof + i]}"]
        v = cols[f"v.{model.dof_names[model.base_dof + i]}"]
        worst = max(worst, float(np.max(q - model.pos_max[i], initial=0.0)), float(np.max(model.pos_min[i] - q, initial=0.0)))
        worst = max(worst, float(np.max(np.abs(v) - model.vel_max[i], initial=0.0)))
    if model.base_kind == "planar":
        for i, n in enumerate(model.dof_names[:3]):
            v = cols[f"v.{n}"]
            worst = max(worst, float(np.max(np.abs(v) - model.base_v_max[i], initial=0.0)))
            acc = np.abs(np.diff(np.concatenate([[0.0], v]))) / dt
            worst = max(worst, float(np.max(acc - model.base_a_max[i], initial=0.0)))
    return worst


def _report(sc, model, header, cols, dt):
    ticks = len(cols["tick"])
    final_state = cols["state"][-1] if ticks else sc.initial_state
    errors = {}
    for name in sc.tasks:
        idx = [h for h in header if h.startswith(f"task_err.{name}.")]
        if not idx:
            continue
        E = np.column_stack([cols[h] for h in idx])
        ok = np.nonzero(np.all(np.isfinite(E), axis=1))[0]
        if ok.size:
            errors[name] = float(np.linalg.norm(E[ok[-1]]))
    d = cols["d_min"]
    d = d[np.isfinite(d)]
    return RunReport(
        scenario=sc.name,
        ticks=ticks,
        final_state=final_state,
        final_errors=errors,
        violation_max=_violations(model, cols, dt) if ticks else 0.0,
        log_path=None,
        terminal=final_state in sc.terminal_states,
        infeasible_ticks=int(sum(s != "optimal" for s in cols["solver_status"])),
        d_min=float(d.min()) if d.size else None,
    )


def report_from_rows(sc, world, tlog):
    import io
    import csv

    rows = list(csv.reader(io.StringIO(tlog.text())))
    header, body = rows[0], rows[1:]
    cols = {}
    for i, h in enumerate(header):
        vals = [r[i] for r in body]
        cols[h] = vals if h in ("state", "solver_status") else np.array([float(x) if x != "" else np.nan for x in vals])
    return _report(sc, world.controlled[0].model, header, cols, sc.config.dt)


def report_from_log(log_path, scenario):
    """Recompute a RunReport from the CSV log (plus the scenario's model limits)."""
    sc = load_scenario(scenario) if isinstance(scenario, (str, Path)) else scenario
    header, cols = read_log(log_path)
    model = sc.model(sc.controlled_robot["name"])
    rep = _report(sc, model, header, cols, sc.config.dt)
    rep.log_path = str(log_path)
    return rep


# --------------------------------------------------------------------------
# entry points


def sim_main(argv=None):
    ap = argparse.ArgumentParser(prog="sim", description="Simulated robot server.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("serve", help="serve one bridge session at a time")
    s.add_argument("--robot", default=None, help="robot description (asset name or file)")
    s.add_argument("--human", default=None, help="human description (asset name or file)")
    s.add_argument("--scenario", default=None, help="take initial poses and scripts from a scenario")
    s.add_argument("--port", type=int, default=None, help="TCP port (default: $TASQP_PORT or 9559)")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--mode", choices=["lockstep", "realtime"], default="lockstep")
    s.add_argument("--touch-script", default=None, help="JSON list of {tick, sensor, pressed}")
    s.add_argument("--feed", default=None, help="e.g. period=8,latency=5,dropout=0.3")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--journal", default=None, help="write the device journal here on shutdown")
    a = ap.parse_args(argv)

    block = {}
    resolve = lambda x: x  # noqa: E731
    if a.scenario:
        sc = load_scenario(a.scenario)
        block = dict(sc.simulation)
        resolve = sc.resolve
    if a.robot:
        block["robot"] = a.robot
    if a.human:
        block["human"] = a.human
    cfg = SimConfig.from_dict(block, seed=a.seed, resolve=resolve)
    if a.feed:
        cfg.feed = FeedModel.parse(a.feed)
    if a.touch_script:
        cfg.touch_script = json.loads(Path(a.touch_script).read_text())
    sim = SimRobot(cfg)
    port = default_port() if a.port is None else a.port
    server = SimServer(sim, a.host, port, a.mode)
    print(f"sim: serving {sim.model.name} on {server.address[0]}:{server.address[1]} ({a.mode})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        if a.journal:
            Path(a.journal).write_text("".join(line + "\n" for line in sim.device_journal))
    return 0


def ctl_main(argv=None):
    ap = argparse.ArgumentParser(prog="ctl", description="Run scenarios and plot logs.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--scenario", required=True, help="scenario name or JSON file")
    r.add_argument("--connect", default=None, help="host:port of a running sim (default: in-process)")
    r.add_argument("--log", default=None, help="CSV log path")
    r.add_argument("--seed", type=int, default=None, help="simulator seed (in-process runs)")
    r.add_argument("--feed", default=None, help="override the perception feed, e.g. period=8,latency=0,dropout=0")
    r.add_argument("--report", default=None, help="write the run report as JSON")
    p = sub.add_parser("plot", help="plot log columns against time")
    p.add_argument("--log", required=True)
    p.add_argument("--cols", nargs="+", required=True, help="column names or glob patterns")
    p.add_argument("--out", required=True)
    a = ap.parse_args(argv)

    if a.cmd == "plot":
        cols = [c for arg in a.cols for c in arg.split(",")]
        try:
            plot(a.log, cols, a.out)
        except UnknownColumn as exc:
            print(f"ctl plot: unknown column {exc}", file=sys.stderr)
            return 2
        return 0

    feed = FeedModel.parse(a.feed) if a.feed else None
    rep = run(a.scenario, connect=a.connect, log=a.log, seed=a.seed, feed=feed)
    text = json.dumps(asdict(rep), indent=2)
    print(text)
    if a.report:
        Path(a.report).write_text(text + "\n")
    return 0 if rep.success else 1


if __name__ == "__main__":
    sys.exit(ctl_main())
