"""Command-line front end: solve, relax, accept, deploy, event, simulate,
report, serve.

Exit codes: 0 success, 1 domain error (bad scenario, protocol violation,
unknown session), 2 usage error.  All tabular output is tab-delimited on
stdout; the report subcommand additionally renders matplotlib figures to
files alongside its delimited output.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import service as sv
from .pctl import UpdateRule
from .service import DomainError, Scenario, SessionStore, bundled_scenario
from .strategy import estimate

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _store(args) -> SessionStore:
    return SessionStore(args.data_dir)


def _load_scenario(ref: str) -> Scenario:
    if Path(ref).is_file():
        return Scenario.from_file(ref)
    return bundled_scenario(ref)


def _tsv(rows) -> None:
    writer = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    for row in rows:
        writer.writerow(row)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def cmd_solve(args) -> int:
    scenario = _load_scenario(args.scenario)
    session = sv.create_session(scenario, session_id=args.session_id)
    _store(args).save(session)
    _tsv([["session", "phase", "states", "lower", "upper", "formula"],
          [session.id, session.phase, len(session.mdp),
           _fmt(session.solution.lower), _fmt(session.solution.upper),
           session.formula.text()]])
    return EXIT_OK


def cmd_relax(args) -> int:
    store = _store(args)
    session = store.load(args.session)
    cands = sv.enumerate_relaxations(session, limit=args.limit)
    store.save(session)
    rows = [["candidate", "delta", "lower", "upper", "description"]]
    for c in cands:
        rows.append([c.id, _fmt(c.delta), _fmt(c.lower), _fmt(c.upper),
                     c.description])
    _tsv(rows)
    return EXIT_OK


def cmd_accept(args) -> int:
    store = _store(args)
    session = store.load(args.session)
    cid = None if args.candidate == "keep" else args.candidate
    sv.accept(session, cid)
    store.save(session)
    _tsv([["session", "phase", "lower", "upper", "formula"],
          [session.id, session.phase, _fmt(session.solution.lower),
           _fmt(session.solution.upper), session.formula.text()]])
    return EXIT_OK


def _print_steps(reports) -> None:
    rows = [["stage", "control", "eps", "cell", "x", "y", "theta",
             "satisfied_up_to", "lower", "upper", "phase", "verdict"]]
    for rep in reports:
        rows.append([
            rep["stage"], _fmt(rep["u"]), _fmt(rep["eps"]), rep["cell"],
            _fmt(rep["pose"][0]), _fmt(rep["pose"][1]), _fmt(rep["pose"][2]),
            rep["satisfied_up_to"], _fmt(rep["lower"]), _fmt(rep["upper"]),
            rep["phase"],
            "" if "satisfied" not in rep else str(rep["satisfied"]).lower(),
        ])
    _tsv(rows)


def cmd_deploy(args) -> int:
    store = _store(args)
    session = store.load(args.session)
    sv.deploy(session, seed=args.seed)
    reports = []
    if args.auto:
        while session.phase == sv.PHASE_DEPLOYED:
            reports.append(sv.step_deployment(session))
    else:
        for _ in range(args.steps):
            if session.phase != sv.PHASE_DEPLOYED:
                break
            reports.append(sv.step_deployment(session))
    store.save(session)
    if reports:
        _print_steps(reports)
    else:
        _tsv([["session", "phase"], [session.id, session.phase]])
    return EXIT_OK


def cmd_event(args) -> int:
    store = _store(args)
    session = store.load(args.session)
    with open(args.rule) as fh:
        doc = json.load(fh)
    if "satisfied_up_to" not in doc and session.strategy is not None:
        doc["satisfied_up_to"] = session.strategy.satisfied_up_to
    rule = UpdateRule.from_dict(doc)
    sv.environment_event(session, rule)
    store.save(session)
    rows = [["session", "phase", "lower", "upper", "formula"],
            [session.id, session.phase, _fmt(session.solution.lower),
             _fmt(session.solution.upper), session.formula.text()]]
    if session.candidates:
        rows.append(["candidate", "delta", "lower", "upper", "description"])
        for c in sorted(session.candidates.values(), key=lambda c: -c.delta):
            rows.append([c.id, _fmt(c.delta), _fmt(c.lower), _fmt(c.upper),
                         c.description])
    _tsv(rows)
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = _load_scenario(args.scenario)
    formula = scenario.formula()
    mdp = scenario.build()
    from .synthesis import solve
    solution = solve(mdp, formula)
    result = estimate(scenario.env, scenario.controls, scenario.noise,
                      scenario.dt, scenario.stages, mdp, solution, formula,
                      trials=args.trials, seed=args.seed)
    _tsv([["trials", "frequency", "wilson_low", "wilson_high",
           "lower", "upper"],
          [result.trials, _fmt(result.frequency), _fmt(result.wilson_low),
           _fmt(result.wilson_high), _fmt(solution.lower),
           _fmt(solution.upper)]])
    return EXIT_OK


def _render_report(session: sv.Session, out_dir: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Circle, Polygon as MplPolygon

    written = []
    env = session.scenario.env

    fig, ax = plt.subplots(figsize=(9, 5))
    x0, y0, x1, y1 = env.bounds
    ax.set_xlim(x0, x1)
    ax.set_ylim(y0, y1)
    colors = plt.cm.tab10.colors
    for i, name in enumerate(env.propositions):
        for piece in env.regions[name]:
            ax.add_patch(MplPolygon(piece.vertices, closed=True, alpha=0.45,
                                    facecolor=colors[i % len(colors)],
                                    edgecolor="black", linewidth=0.5))
        cx, cy = env.regions[name][0].vertices.mean(axis=0)
        ax.annotate(name, (cx, cy), ha="center", va="center", fontsize=9)
    if session.deployment is not None:
        traj = sv.deployment_positions(session)
        ax.plot(traj[:, 0], traj[:, 1], color="black", linewidth=1.4)
        r = session.mdp.states[session.strategy.cursor].r
        ax.add_patch(Circle((session.deployment.pose.x,
                             session.deployment.pose.y), r,
                            fill=False, edgecolor="red", linewidth=1.2))
    qi = session.scenario.q_init
    ax.plot([qi.x], [qi.y], marker="o", color="red", markersize=4)
    ax.set_aspect("equal")
    ax.set_title(f"session {session.id} — phase {session.phase}")
    map_path = out_dir / "environment_map.png"
    fig.savefig(map_path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    written.append(map_path)

    fig, axes = plt.subplots(1, len(session.solution.blocks),
                             figsize=(4 * len(session.solution.blocks), 3),
                             squeeze=False)
    for k, bs in enumerate(session.solution.blocks):
        ax = axes[0][k]
        ax.hist(bs.vprime, bins=30, color=colors[k % len(colors)])
        ax.set_yscale("log")
        ax.set_title(f"block {bs.j} values")
    fig.tight_layout()
    hist_path = out_dir / "block_values.png"
    fig.savefig(hist_path, dpi=140)
    plt.close(fig)
    written.append(hist_path)
    return written


def cmd_report(args) -> int:
    store = _store(args)
    session = store.load(args.session)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session", "phase", "revision", "states",
                         "lower", "upper", "formula"])
        writer.writerow([session.id, session.phase, session.revision,
                         len(session.mdp), _fmt(session.solution.lower),
                         _fmt(session.solution.upper), session.formula.text()])
        writer.writerow([])
        writer.writerow(["candidate", "delta", "lower", "upper", "description"])
        for c in sorted(session.candidates.values(), key=lambda c: -c.delta):
            writer.writerow([c.id, _fmt(c.delta), _fmt(c.lower),
                             _fmt(c.upper), c.description])
    figures = _render_report(session, out_dir)
    _tsv([["file"]] + [[str(p)] for p in [csv_path, *figures]])
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn
    from .server import create_app
    uvicorn.run(create_app(args.data_dir), host=args.host, port=args.port,
                log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pctlplan",
        description="PCTL policy synthesis and negotiation for a noisy "
                    "Dubins vehicle")
    parser.add_argument("--data-dir",
                        default=os.environ.get("PCTLPLAN_DATA",
                                               "./pctlplan-data"),
                        help="session store directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="build and solve a scenario, open a session")
    p.add_argument("scenario", help="scenario JSON file or bundled name")
    p.add_argument("--session-id", default=None)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("relax", help="list guaranteed relaxation candidates")
    p.add_argument("session")
    p.add_argument("--limit", type=int, default=5)
    p.set_defaults(fn=cmd_relax)

    p = sub.add_parser("accept", help="accept a candidate (or 'keep')")
    p.add_argument("session")
    p.add_argument("candidate")
    p.set_defaults(fn=cmd_accept)

    p = sub.add_parser("deploy", help="start or resume the online phase")
    p.add_argument("session")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--auto", action="store_true",
                   help="step until the session closes")
    p.add_argument("--steps", type=int, default=0,
                   help="step this many stages (ignored with --auto)")
    p.set_defaults(fn=cmd_deploy)

    p = sub.add_parser("event", help="inject a mid-flight specification update")
    p.add_argument("session")
    p.add_argument("rule", help="update-rule JSON file")
    p.set_defaults(fn=cmd_event)

    p = sub.add_parser("simulate", help="Monte Carlo satisfaction estimate")
    p.add_argument("scenario")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("report", help="write CSV + figures for a session")
    p.add_argument("session")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("serve", help="run the HTTP/JSON service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
