"""Scripted negotiation protocol replay through the CLI.

Three supervisor sessions against the bundled scenario:

  case A — accept the initial specification and fly the mission;
  case B — browse relaxations, accept the avoid-constraint lift, fly;
  case C — fly five stages, hit a drop-off outage event, renegotiate,
           resume, and finish.

The driver captures every command's delimited stdout into one log so the
whole exchange can be frozen as a golden.  The solved case-A snapshot is
cloned to seed cases B and C (the expensive model build happens once);
every protocol operation still goes through the CLI.
"""

from __future__ import annotations

import io
import json
from contextlib import redirect_stdout
from pathlib import Path

from pctlplan.cli import main

SEED = 11
EVENT_RULE = {"kind": "remove_psi_clause", "j": 3, "index": 0}
CASE_B_PICK = "allow reaching t2 in step 3"


def _clone_session(data_dir: Path, src: str, dst: str) -> None:
    doc = json.loads((data_dir / "sessions" / f"{src}.json").read_text())
    doc["id"] = dst
    (data_dir / "sessions" / f"{dst}.json").write_text(json.dumps(doc))


def run_protocol_replay(data_dir, scratch) -> str:
    """Drive cases A, B, C; return the combined command log."""
    data_dir = Path(data_dir)
    scratch = Path(scratch)
    log: list[str] = []

    def cli(*argv, display=None) -> str:
        buf = io.StringIO()
        with redirect_stdout(buf):
            rc = main(["--data-dir", str(data_dir), *argv])
        out = buf.getvalue()
        # the log must be machine-independent, so temp paths get a stable name
        log.append(f"$ pctlplan {' '.join(display or argv)}")
        log.append(out.rstrip("\n"))
        assert rc == 0, f"command {argv} failed with rc={rc}:\n{out}"
        return out

    cli("solve", "courier", "--session-id", "caseA")
    _clone_session(data_dir, "caseA", "caseB")
    _clone_session(data_dir, "caseA", "caseC")

    # case A: accept the initial specification, deploy, run to the verdict
    cli("accept", "caseA", "keep")
    cli("deploy", "caseA", "--seed", str(SEED), "--auto")

    # case B: relax, accept the avoid-constraint lift, deploy
    relax_out = cli("relax", "caseB", "--limit", "14")
    pick = next(line.split("\t")[0]
                for line in relax_out.strip().splitlines()[1:]
                if line.split("\t")[4] == CASE_B_PICK)
    cli("accept", "caseB", pick)
    cli("deploy", "caseB", "--seed", str(SEED), "--auto")

    # case C: deploy, outage event mid-flight, renegotiate, resume
    rule_path = scratch / "outage.json"
    rule_path.write_text(json.dumps(EVENT_RULE))
    cli("accept", "caseC", "keep")
    cli("deploy", "caseC", "--seed", str(SEED), "--steps", "5")
    event_out = cli("event", "caseC", str(rule_path),
                    display=("event", "caseC", "outage.json"))
    # the outage zeroes the remaining bound; take the best recovery offer
    lines = event_out.strip().splitlines()
    recovery = lines[lines.index(next(l for l in lines
                                      if l.startswith("candidate"))) + 1]
    cli("accept", "caseC", recovery.split("\t")[0])
    cli("deploy", "caseC", "--auto")

    return "\n".join(log) + "\n"
